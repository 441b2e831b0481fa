use std::path::Path;

use anyhow::{Context, Result};
use couette_core::fit::{fit_power_law, LineFit};
use couette_core::nonlinear::{
    classify, locate_threshold, threshold_slope, threshold_sweep, translate_physical, PhysicalReport, SweepTable, ThresholdBracket,
    ThresholdSearch,
};
use couette_core::resolvent::{pseudospectral_bound, FLAG_UNRESOLVED};
use couette_core::semigroup::{gearhart_pruess_check, operator_norm_decay, propagate_linear, spacetime_norms, DecayFit, GearhartPruessReport, NormCurve, SpacetimeReport};
use couette_core::{assemble_lk, simulate, EnergyReport, FlowParams, ModeState, ScanConfig, ScanResult, SimConfig, TestFunctionSampler, Verdict};
use serde::Serialize;

use crate::config::{sim_grid, ResolventConfig, SemigroupConfig, SweepConfig};
use crate::output::{label, Meta, Output};

fn params(b: f64) -> Result<FlowParams> {
    FlowParams::from_ratio(b).with_context(|| format!("flow parameters for B = {b}"))
}

#[derive(Serialize)]
struct ScalingFit {
    k: i32,
    b: Vec<f64>,
    psi: Vec<f64>,
    fit: LineFit,
}

pub fn resolvent(cfg: &ResolventConfig, out_dir: &Path) -> Result<()> {
    let grid = cfg.grid.build().context("building grid")?;
    let mut out = Output::new(out_dir, Meta::new("resolvent", cfg, cfg.grid)?)?;
    let scan = ScanConfig { points: cfg.points, refine_minima: cfg.refine_minima, ..ScanConfig::with_pair(cfg.pair) };
    let mut results: Vec<ScanResult> = Vec::new();
    for b in cfg.bs() {
        let op = assemble_lk(&grid, cfg.k, &params(b)?)?;
        let res = pseudospectral_bound(&op, &scan).with_context(|| format!("scan at k = {}, B = {b}", cfg.k))?;
        println!("k={} B={} psi={:.6e} at s={:.6e}", cfg.k, label(b), res.psi, res.psi_shift);
        if res.is_flagged(FLAG_UNRESOLVED) {
            eprintln!("warning: k={} B={}: minimum not resolved by the scan (flagged in output)", cfg.k, label(b));
        }
        let stem = format!("resolvent-k{}-B{}", cfg.k, label(b));
        out.json(&format!("{stem}.json"), &res)?;
        out.csv(&format!("{stem}.csv"), &[("psi", format!("{:.17e}", res.psi)), ("flags", res.flags.join(" "))], &res.to_csv())?;
        results.push(res);
    }
    if cfg.fit {
        let b: Vec<f64> = results.iter().map(|r| r.b).collect();
        let psi: Vec<f64> = results.iter().map(|r| r.psi).collect();
        let fit = fit_power_law(&b, &psi)?;
        println!("slope of log psi against log B: {:.4}", fit.slope);
        out.json(&format!("resolvent-fit-k{}.json", cfg.k), &ScalingFit { k: cfg.k, b, psi, fit })?;
    }
    out.report();
    Ok(())
}

#[derive(Serialize)]
struct SemigroupReport {
    psi: f64,
    tau_end: f64,
    dt: f64,
    gearhart_pruess: GearhartPruessReport,
    norm_curve: NormCurve,
    decay_fit: DecayFit,
    /// Fitted rate over `|k B|^{1/3}`.
    scaled_rate: f64,
    spacetime: SpacetimeReport,
}

pub fn semigroup(cfg: &SemigroupConfig, out_dir: &Path) -> Result<()> {
    let grid = cfg.grid.build().context("building grid")?;
    let mut out = Output::new(out_dir, Meta::new("semigroup", cfg, cfg.grid)?)?;
    let op = assemble_lk(&grid, cfg.k, &params(cfg.b)?)?;
    let psi = pseudospectral_bound(&op, &ScanConfig::default())?.psi;
    let tau_end = cfg.tau_end.unwrap_or(4.0 / psi);
    let dt = cfg.dt.unwrap_or(0.005 / psi);
    let mut sampler = TestFunctionSampler::for_grid(&grid, cfg.seed);
    let trajs = (0..cfg.samples)
        .map(|_| propagate_linear(&op, &sampler.next_sample(&grid), tau_end, dt, cfg.stride))
        .collect::<couette_core::Result<Vec<_>>>()?;
    let gp = gearhart_pruess_check(&grid, psi, &trajs, cfg.tol)?;
    let (curve, fit) = operator_norm_decay(&op, psi, cfg.seed)?;
    let spacetime = spacetime_norms(&trajs[0], &grid, cfg.c_prime, Some(fit.rate))?;
    println!(
        "k={} B={} psi={:.6e} decay rate={:.6e} bound {} (worst ratio/bound {:.4})",
        cfg.k,
        label(cfg.b),
        psi,
        fit.rate,
        if gp.all_pass { "holds" } else { "VIOLATED" },
        gp.worst_margin
    );
    let stem = format!("semigroup-k{}-B{}", cfg.k, label(cfg.b));
    let mut gp_csv = String::from("tau,max_ratio,bound,pass\n");
    for p in &gp.points {
        gp_csv.push_str(&format!("{:.17e},{:.17e},{:.17e},{}\n", p.tau, p.max_ratio, p.bound, p.pass));
    }
    let mut curve_csv = String::from("tau,operator_norm\n");
    for (t, v) in curve.times.iter().zip(&curve.norms) {
        curve_csv.push_str(&format!("{t:.17e},{v:.17e}\n"));
    }
    out.csv(&format!("{stem}-bound.csv"), &[("psi", format!("{psi:.17e}"))], &gp_csv)?;
    out.csv(&format!("{stem}-norm.csv"), &[("decay_rate", format!("{:.17e}", fit.rate))], &curve_csv)?;
    let scaled_rate = fit.rate / (cfg.k as f64 * cfg.b).abs().cbrt();
    let report = SemigroupReport { psi, tau_end, dt, gearhart_pruess: gp, norm_curve: curve, decay_fit: fit, scaled_rate, spacetime };
    out.json(&format!("{stem}.json"), &report)?;
    out.report();
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    tau_end: f64,
    linear_rate: Option<f64>,
    outcome: couette_core::nonlinear::Outcome,
    verdict: Verdict,
    steps: usize,
    dt_final: f64,
    max_cfl: f64,
    max_nonlinear_residue: f64,
    max_raw_reality_defect: f64,
    max_reality_defect: f64,
    worst_decay_ratio: f64,
    initial_norms: Vec<f64>,
    final_norms: Vec<f64>,
    energy: EnergyReport,
    physical: PhysicalReport,
}

pub fn simulate_cmd(cfg: &SimConfig, out_dir: &Path) -> Result<()> {
    let spec = sim_grid(cfg);
    let mut out = Output::new(out_dir, Meta::new("simulate", cfg, spec)?)?;
    let run = simulate(cfg).context("running simulation")?;
    let grid = spec.build()?;
    let last = ModeState::from_modes(run.final_state().to_vec(), params(cfg.b)?)?;
    let physical = translate_physical(&grid, &last, 64)?;
    let verdict = classify(&run);
    println!(
        "B={} amplitude={} tau_end={:.4} steps={} verdict={:?} energy total={:.6e}",
        label(cfg.b),
        cfg.init.amplitude,
        run.tau_end,
        run.steps,
        verdict,
        run.energy.total
    );
    out.csv("simulate-norms.csv", &[("tau_end", format!("{:.17e}", run.tau_end))], &run.trajectory.to_csv(&grid))?;
    let summary = SimulationSummary {
        tau_end: run.tau_end,
        linear_rate: run.linear_rate,
        outcome: run.outcome.clone(),
        verdict,
        steps: run.steps,
        dt_final: run.dt_final,
        max_cfl: run.max_cfl,
        max_nonlinear_residue: run.max_nonlinear_residue,
        max_raw_reality_defect: run.max_raw_reality_defect,
        max_reality_defect: run.max_reality_defect,
        worst_decay_ratio: run.worst_decay_ratio(),
        initial_norms: run.initial_norms.clone(),
        final_norms: run.final_norms.clone(),
        energy: run.energy,
        physical,
    };
    out.json("simulate.json", &summary)?;
    out.report();
    Ok(())
}

#[derive(Serialize)]
struct SweepReport {
    table: SweepTable,
    searches: Vec<ThresholdSearch>,
}

pub fn sweep(cfg: &SweepConfig, out_dir: &Path) -> Result<()> {
    let spec = sim_grid(&cfg.base);
    let mut out = Output::new(out_dir, Meta::new("sweep", cfg, spec)?)?;
    let mut searches = Vec::new();
    let table = match &cfg.amplitudes {
        Some(amps) => threshold_sweep(&cfg.base, &cfg.b_list, amps)?,
        None => {
            let s = &cfg.search;
            for &b in &cfg.b_list {
                let found = locate_threshold(&cfg.base.with_b(b), s.start, s.grow, s.cap, s.bisections)
                    .with_context(|| format!("threshold search at B = {b}"))?;
                println!("B={} decaying up to {:.4e}, failing at {:?}", label(b), found.decaying, found.failing);
                searches.push(found);
            }
            let thresholds: Vec<ThresholdBracket> = searches.iter().map(|s| s.bracket()).collect();
            let slope = threshold_slope(&thresholds);
            let rows = searches.iter().flat_map(|s| s.rows.clone()).collect();
            SweepTable { rows, thresholds, slope }
        }
    };
    let slope = table.slope.map(|s| format!("{s:.6}")).unwrap_or_else(|| "none".into());
    println!("threshold slope against B: {slope}");
    let mut thr = String::from("b,threshold,decaying,failing\n");
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6e}")).unwrap_or_default();
    for t in &table.thresholds {
        thr.push_str(&format!("{:.6e},{},{},{}\n", t.b, fmt(t.estimate()), fmt(t.decaying), fmt(t.failing)));
        if t.failing.is_none() {
            eprintln!("warning: B={}: no tried amplitude failed, threshold only bounded below", label(t.b));
        }
    }
    out.csv("sweep-thresholds.csv", &[("slope", slope)], &thr)?;
    out.csv("sweep-runs.csv", &[], &table.to_csv())?;
    out.json("sweep.json", &SweepReport { table, searches })?;
    out.report();
    Ok(())
}
