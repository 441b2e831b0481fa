use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Result;
use couette_core::operator::{coercivity_audit, weighted_identity_residual};
use couette_core::oracle::{factorization_identities, interpolation_checks, riccati_g, riccati_g_maximal, stream_oracle_error, RiccatiOptions};
use couette_core::resolvent::pseudospectral_bound;
use couette_core::semigroup::{gearhart_pruess_check, propagate_linear};
use couette_core::stream::{elliptic_estimate_audit, AUDIT_BETAS};
use couette_core::{assemble_lk, FlowParams, GridScheme, GridSpec, RadialGrid, ScanConfig, SmoothProfile, TestFunctionSampler};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::VerifyConfig;
use crate::output::{Meta, Output};

#[derive(Debug, Clone, Serialize)]
pub struct Audit {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub data: Value,
}

fn audit(name: &'static str, f: impl FnOnce() -> couette_core::Result<(bool, String, Value)>) -> Audit {
    match f() {
        Ok((pass, detail, data)) => Audit { name, pass, detail, data },
        Err(e) => Audit { name, pass: false, detail: format!("error: {e}"), data: Value::Null },
    }
}

fn spec(n: usize) -> GridSpec {
    GridSpec { n, r_max: 20.0, scheme: GridScheme::Uniform }
}

fn coercivity(cfg: &VerifyConfig, grid: &RadialGrid, params: &FlowParams) -> couette_core::Result<(bool, String, Value)> {
    let mut ok = true;
    let mut detail = Vec::new();
    let mut data = Vec::new();
    for k in [1, 2, 3] {
        let rep = coercivity_audit(&assemble_lk(grid, k, params)?, cfg.samples, cfg.seed + k as u64)?;
        ok &= rep.accretive && rep.min_coercivity_ratio > 0.0;
        detail.push(format!("k={k} min ratio {:.3e}", rep.min_coercivity_ratio));
        data.push(rep);
    }
    Ok((ok, detail.join(", "), json!(data)))
}

fn elliptic(cfg: &VerifyConfig, grid: Arc<RadialGrid>) -> couette_core::Result<(bool, String, Value)> {
    let mut sampler = TestFunctionSampler::for_grid(&grid, cfg.seed);
    let samples: Vec<_> = (0..cfg.samples).map(|_| sampler.next_sample(&grid)).collect();
    let mut ok = true;
    let mut worst = f64::INFINITY;
    let mut data = Vec::new();
    for k in [1, 2, 4] {
        for beta in AUDIT_BETAS {
            let rep = elliptic_estimate_audit(grid.clone(), k, beta, &samples)?;
            ok &= rep.coercivity_holds(1e-6);
            worst = worst.min(rep.min_coercivity_ratio - rep.hardy_floor.max(0.0));
            data.push(rep);
        }
    }
    Ok((ok, format!("smallest margin over the Hardy floor {worst:.3e}"), json!(data)))
}

fn identities(cfg: &VerifyConfig, params: &FlowParams) -> couette_core::Result<(bool, String, Value)> {
    // the bump on [1, 2] needs a few dozen nodes before the error is in its asymptotic regime
    let p = SmoothProfile::compact_on(1.0, 2.0);
    let n = cfg.n.max(1024);
    let mut orders = Vec::new();
    for k in [1, 2] {
        let coarse = weighted_identity_residual(&assemble_lk(&spec(n).build()?, k, params)?, &p);
        let fine = weighted_identity_residual(&assemble_lk(&spec(2 * n).build()?, k, params)?, &p);
        orders.push((coarse / fine).log2());
    }
    let f = factorization_identities(&spec(cfg.n).build()?, cfg.samples.min(20), cfg.seed)?;
    let ok = orders.iter().all(|&o| o >= 1.8) && f.observed_order_k1 >= 1.8;
    let detail = format!(
        "weighted identity orders {:.3}, {:.3} (N {n} -> {}); factorization order {:.3}",
        orders[0], orders[1], 2 * n, f.observed_order_k1
    );
    Ok((ok, detail, json!({ "weighted_identity_orders": orders, "factorization": f })))
}

fn interpolation(cfg: &VerifyConfig, grid: &RadialGrid) -> couette_core::Result<(bool, String, Value)> {
    let samples = if cfg.quick { 200 } else { 1000 };
    let rep = interpolation_checks(grid, samples, cfg.seed);
    Ok((rep.a2_holds, format!("{samples} samples, max ratio {:.4}", rep.max_a2_ratio), json!(rep)))
}

fn riccati(grid: &RadialGrid) -> couette_core::Result<(bool, String, Value)> {
    let mut ok = true;
    let mut detail = Vec::new();
    let mut data = Vec::new();
    for (a, b) in [(2.0, -3.0), (2.0, -2.0)] {
        let s = riccati_g_maximal(a, b, grid, 0.1, 10.0, RiccatiOptions::default())?;
        ok &= s.residual < 1e-6;
        detail.push(format!("({a},{b}) residual {:.2e}", s.residual));
        data.push(json!({ "a": a, "b": b, "residual": s.residual, "crossing": s.crossing, "r_end": s.r_end }));
    }
    let p = riccati_g(1.0, 1.0, grid, (0.1, 10.0))?;
    let exact = p.nodes.iter().zip(p.g.values()).map(|(&r, v)| (v.re - r / p.r_start).abs() * p.r_start / r).fold(0.0, f64::max);
    ok &= p.residual < 1e-10 && exact < 1e-10;
    detail.push(format!("power law residual {:.2e}", p.residual));
    data.push(json!({ "a": 1.0, "b": 1.0, "residual": p.residual, "max_relative_error": exact }));
    Ok((ok, detail.join(", "), json!(data)))
}

fn green(grid: Arc<RadialGrid>) -> couette_core::Result<(bool, String, Value)> {
    let mut errs = Vec::new();
    for k in [1, 2, 5] {
        errs.push(stream_oracle_error(grid.clone(), k)?);
    }
    let ok = errs.iter().all(|&e| e < 1e-6);
    Ok((ok, format!("relative errors {:.2e}, {:.2e}, {:.2e}", errs[0], errs[1], errs[2]), json!({ "k": [1, 2, 5], "errors": errs })))
}

fn gearhart_pruess(cfg: &VerifyConfig, grid: &RadialGrid, params: &FlowParams) -> couette_core::Result<(bool, String, Value)> {
    let op = assemble_lk(grid, 1, params)?;
    let psi = pseudospectral_bound(&op, &ScanConfig::default())?.psi;
    let mut sampler = TestFunctionSampler::for_grid(grid, cfg.seed);
    let trajs = (0..cfg.samples.min(20))
        .map(|_| propagate_linear(&op, &sampler.next_sample(grid), 4.0 / psi, 0.005 / psi, 10))
        .collect::<couette_core::Result<Vec<_>>>()?;
    let rep = gearhart_pruess_check(grid, psi, &trajs, 0.05)?;
    Ok((rep.all_pass, format!("psi {psi:.4e}, worst ratio/bound {:.4}", rep.worst_margin), json!(rep)))
}

pub fn run_audits(cfg: &VerifyConfig) -> Result<Vec<Audit>> {
    let grid = Arc::new(spec(cfg.n).build()?);
    let params = FlowParams::from_ratio(cfg.b)?;
    Ok(vec![
        audit("coercivity", || coercivity(cfg, &grid, &params)),
        audit("elliptic", || elliptic(cfg, grid.clone())),
        audit("identities", || identities(cfg, &params)),
        audit("interpolation", || interpolation(cfg, &grid)),
        audit("riccati", || riccati(&grid)),
        audit("green-oracle", || green(grid.clone())),
        audit("gearhart-pruess", || gearhart_pruess(cfg, &grid, &params)),
    ])
}

/// Returns whether every audit passed.
pub fn verify(cfg: &VerifyConfig, out_dir: &Path) -> Result<bool> {
    let start = Instant::now();
    let mut out = Output::new(out_dir, Meta::new("verify", cfg, spec(cfg.n))?)?;
    let audits = run_audits(cfg)?;
    let mut csv = String::from("audit,pass,detail\n");
    for a in &audits {
        println!("{} {}: {}", if a.pass { "PASS" } else { "FAIL" }, a.name, a.detail);
        csv.push_str(&format!("{},{},\"{}\"\n", a.name, a.pass, a.detail.replace('"', "'")));
    }
    let all = audits.iter().all(|a| a.pass);
    out.csv("verify.csv", &[], &csv)?;
    out.json("verify.json", &json!({ "all_pass": all, "audits": audits }))?;
    out.report();
    println!("{} audits, {} failed, {:.1}s", audits.len(), audits.iter().filter(|a| !a.pass).count(), start.elapsed().as_secs_f64());
    Ok(all)
}
