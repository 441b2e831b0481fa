use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use couette_core::GridSpec;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Header shared by every file a command writes.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub grid: GridSpec,
    pub config: serde_json::Value,
}

impl Meta {
    pub fn new<C: Serialize>(command: &str, config: &C, grid: GridSpec) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let canonical = serde_json::to_string(&config)?;
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(b"\n");
        h.update(canonical.as_bytes());
        Ok(Self {
            command: command.to_string(),
            version: format!("{} (cli {})", couette_core::VERSION, env!("CARGO_PKG_VERSION")),
            config_hash: hex::encode(h.finalize()),
            grid,
            config,
        })
    }

    fn csv_header(&self) -> String {
        format!(
            "# command: {}\n# version: {}\n# config_hash: {}\n# grid: n={} r_max={} scheme={}\n# config: {}\n",
            self.command,
            self.version,
            self.config_hash,
            self.grid.n,
            self.grid.r_max,
            serde_json::to_value(self.grid.scheme).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.config
        )
    }
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    meta: &'a Meta,
    result: &'a T,
}

/// Writes result files into one directory, each stamped with the same [`Meta`].
pub struct Output {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), meta, written: Vec::new() })
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(&Wrapped { meta: &self.meta, result })?;
        text.push('\n');
        self.write(name, &text)
    }

    /// `body` is the CSV table; extra `# key: value` lines go after the header.
    pub fn csv(&mut self, name: &str, notes: &[(&str, String)], body: &str) -> Result<PathBuf> {
        let mut text = self.meta.csv_header();
        for (k, v) in notes {
            text.push_str(&format!("# {k}: {v}\n"));
        }
        text.push_str(body);
        self.write(name, &text)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn report(&self) {
        for p in &self.written {
            println!("wrote {}", p.display());
        }
    }
}

/// `1e3`-style label for file names.
pub fn label(x: f64) -> String {
    format!("{x:e}")
}
