//! Run configurations. Each command reads its config from an optional JSON
//! file, then applies whatever flags were given on top.

use std::path::Path;

use anyhow::{bail, Context, Result};
use couette_core::grid::MIN_NODES;
use couette_core::{GridScheme, GridSpec, NormPair, RingInit, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

pub fn parse_scheme(s: &str) -> std::result::Result<GridScheme, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown grid scheme '{s}' (expected uniform or stretched)"))
}

fn grid_default() -> GridSpec {
    GridSpec { n: 1024, r_max: 20.0, scheme: GridScheme::Uniform }
}

fn check_grid(g: &GridSpec) -> Result<()> {
    if g.n < MIN_NODES || !(g.r_max > 0.0) {
        bail!("grid needs n >= {MIN_NODES} and r_max > 0 (got n = {}, r_max = {})", g.n, g.r_max);
    }
    Ok(())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Debug, Clone, Default)]
pub struct GridFlags {
    pub n: Option<usize>,
    pub r_max: Option<f64>,
    pub scheme: Option<GridScheme>,
}

impl GridFlags {
    fn apply(&self, g: &mut GridSpec) {
        set(&mut g.n, self.n);
        set(&mut g.r_max, self.r_max);
        set(&mut g.scheme, self.scheme);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResolventConfig {
    pub k: i32,
    pub b: Option<f64>,
    pub b_list: Option<Vec<f64>>,
    pub fit: bool,
    pub grid: GridSpec,
    pub pair: NormPair,
    pub points: usize,
    pub refine_minima: usize,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self { k: 1, b: None, b_list: None, fit: false, grid: grid_default(), pair: NormPair::L2, points: 128, refine_minima: 3 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResolventFlags {
    pub k: Option<i32>,
    pub b: Option<f64>,
    pub b_list: Option<Vec<f64>>,
    pub fit: bool,
    pub grid: GridFlags,
    pub pair: Option<NormPair>,
    pub points: Option<usize>,
}

impl ResolventConfig {
    pub fn resolve(mut self, f: ResolventFlags) -> Result<Self> {
        set(&mut self.k, f.k);
        if f.b.is_some() {
            self.b = f.b;
            self.b_list = None;
        }
        if f.b_list.is_some() {
            self.b_list = f.b_list;
            self.b = None;
        }
        self.fit |= f.fit;
        f.grid.apply(&mut self.grid);
        set(&mut self.pair, f.pair);
        set(&mut self.points, f.points);
        check_grid(&self.grid)?;
        if self.k == 0 {
            bail!("k must be nonzero");
        }
        if self.fit && self.bs().len() < 2 {
            bail!("--fit needs at least two values in the B list");
        }
        Ok(self)
    }

    pub fn bs(&self) -> Vec<f64> {
        match (&self.b_list, self.b) {
            (Some(l), _) => l.clone(),
            (None, Some(b)) => vec![b],
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemigroupConfig {
    pub k: i32,
    pub b: f64,
    pub grid: GridSpec,
    pub samples: usize,
    pub seed: u64,
    /// Defaults to `4 / psi`.
    pub tau_end: Option<f64>,
    /// Defaults to `0.005 / psi`.
    pub dt: Option<f64>,
    pub stride: usize,
    pub tol: f64,
    /// Weight constant of the space-time norms.
    pub c_prime: f64,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self { k: 1, b: 1e3, grid: grid_default(), samples: 20, seed: 1, tau_end: None, dt: None, stride: 10, tol: 0.05, c_prime: 0.1 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SemigroupFlags {
    pub k: Option<i32>,
    pub b: Option<f64>,
    pub grid: GridFlags,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub tau_end: Option<f64>,
    pub dt: Option<f64>,
    pub tol: Option<f64>,
}

impl SemigroupConfig {
    pub fn resolve(mut self, f: SemigroupFlags) -> Result<Self> {
        set(&mut self.k, f.k);
        set(&mut self.b, f.b);
        f.grid.apply(&mut self.grid);
        set(&mut self.samples, f.samples);
        set(&mut self.seed, f.seed);
        if f.tau_end.is_some() {
            self.tau_end = f.tau_end;
        }
        if f.dt.is_some() {
            self.dt = f.dt;
        }
        set(&mut self.tol, f.tol);
        check_grid(&self.grid)?;
        if self.k == 0 || self.samples == 0 || self.stride == 0 {
            bail!("k, samples and stride must be nonzero");
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimFlags {
    pub n: Option<usize>,
    pub r_max: Option<f64>,
    pub b: Option<f64>,
    pub k_max: Option<usize>,
    pub dt: Option<f64>,
    pub tau_end: Option<f64>,
    pub stride: Option<usize>,
    pub amplitude: Option<f64>,
    pub r_c: Option<f64>,
    pub harmonics: Option<Vec<i32>>,
    pub energy_c: Option<f64>,
}

impl SimFlags {
    pub fn apply(&self, c: &mut SimConfig) {
        set(&mut c.n, self.n);
        set(&mut c.r_max, self.r_max);
        set(&mut c.b, self.b);
        if let Some(km) = self.k_max {
            c.k_max = km;
            if self.harmonics.is_none() {
                c.init.harmonics.retain(|&h| h as usize <= km);
                if c.init.harmonics.is_empty() {
                    c.init.harmonics = vec![1];
                }
            }
        }
        set(&mut c.dt, self.dt);
        if self.tau_end.is_some() {
            c.tau_end = self.tau_end;
        }
        set(&mut c.stride, self.stride);
        set(&mut c.init.amplitude, self.amplitude);
        set(&mut c.init.r_c, self.r_c);
        if let Some(h) = &self.harmonics {
            c.init.harmonics = h.clone();
        }
        if self.energy_c.is_some() {
            c.energy_c = self.energy_c;
        }
    }
}

pub fn check_sim(c: &SimConfig) -> Result<()> {
    if c.n < MIN_NODES || !(c.r_max > 0.0) || !(c.dt > 0.0) || c.stride == 0 || c.k_max == 0 {
        bail!("simulation needs n >= {MIN_NODES}, r_max > 0, dt > 0, stride > 0 and k_max > 0");
    }
    if c.b.abs() < 1.0 {
        bail!("|B| must be at least 1 (got {})", c.b);
    }
    Ok(())
}

pub fn sim_grid(c: &SimConfig) -> GridSpec {
    GridSpec { n: c.n, r_max: c.r_max, scheme: GridScheme::Uniform }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub start: f64,
    pub grow: f64,
    pub cap: f64,
    pub bisections: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { start: 1.0, grow: 10.0, cap: 1e4, bisections: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub base: SimConfig,
    pub b_list: Vec<f64>,
    /// Fixed amplitude grid; when absent each `B` gets a bracketing search.
    pub amplitudes: Option<Vec<f64>>,
    pub search: SearchConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let base = SimConfig { n: 256, init: RingInit::all(1.0, 3.0, 8), ..SimConfig::default() };
        Self { base, b_list: vec![1e3, 1e4], amplitudes: None, search: SearchConfig::default() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepFlags {
    pub sim: SimFlags,
    pub b_list: Option<Vec<f64>>,
    pub amplitudes: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub grow: Option<f64>,
    pub cap: Option<f64>,
    pub bisections: Option<usize>,
}

impl SweepConfig {
    pub fn resolve(mut self, f: SweepFlags) -> Result<Self> {
        f.sim.apply(&mut self.base);
        set(&mut self.b_list, f.b_list);
        if f.amplitudes.is_some() {
            self.amplitudes = f.amplitudes;
        }
        set(&mut self.search.start, f.start);
        set(&mut self.search.grow, f.grow);
        set(&mut self.search.cap, f.cap);
        set(&mut self.search.bisections, f.bisections);
        check_sim(&self.base)?;
        if self.b_list.is_empty() {
            bail!("sweep needs a non-empty B list");
        }
        if let Some(a) = &self.amplitudes {
            if a.is_empty() || a.iter().any(|x| !(*x >= 0.0)) {
                bail!("amplitudes must be a non-empty list of non-negative numbers");
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub quick: bool,
    pub n: usize,
    pub b: f64,
    pub samples: usize,
    pub seed: u64,
}

impl VerifyConfig {
    pub fn quick() -> Self {
        Self { quick: true, n: 256, b: 1e3, samples: 10, seed: 7 }
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { quick: false, n: 1024, b: 1e3, samples: 40, seed: 7 }
    }
}
