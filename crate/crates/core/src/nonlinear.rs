//! Mode-coupled nonlinear evolution
//!
//! `w_k' + L_k w_k + f1_k - d/dr f2_k = 0`, `|k| <= K`, with
//!
//! `f1_k = sum_l w_l (i k phi_breve_m' / r + i m (1/4 - 1/(2 r^2)) phi_breve_m)`,
//! `f2_k = sum_l i m w_l phi_breve_m / r`, `m = k - l`,
//!
//! stepped with second-order backward differentiation on the linear part and
//! linear extrapolation of the interaction terms.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{BandMatrix, C64};
use crate::error::{check_len, Error, Result};
use crate::fit::fit_power_law;
use crate::grid::{f_weight, GridFunction, GridSpec, RadialGrid};
use crate::operator::{assemble_lk, assemble_lk_shared, assemble_zero_mode, BandedComplexOperator, FlowParams};
use crate::semigroup::{fit_decay, Bdf2, DecayFit};
use crate::stream::{StreamPair, StreamSolver};

const I: C64 = C64::new(0.0, 1.0);

/// Fourier modes `w_k`, `-K <= k <= K`, stored in order of increasing `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub k_max: usize,
    pub tau: f64,
    pub params: FlowParams,
    modes: Vec<GridFunction>,
}

impl ModeState {
    pub fn zeros(n: usize, k_max: usize, params: FlowParams) -> Self {
        Self { k_max, tau: 0.0, params, modes: vec![GridFunction::zeros(n); 2 * k_max + 1] }
    }

    pub fn from_modes(modes: Vec<GridFunction>, params: FlowParams) -> Result<Self> {
        if modes.len().is_multiple_of(2) {
            return Err(Error::Config(format!("expected an odd number of modes, got {}", modes.len())));
        }
        let n = modes[0].len();
        for m in &modes {
            check_len(n, m.len())?;
        }
        Ok(Self { k_max: modes.len() / 2, tau: 0.0, params, modes })
    }

    pub fn ks(&self) -> impl Iterator<Item = i32> {
        let k = self.k_max as i32;
        -k..=k
    }

    fn index(&self, k: i32) -> Option<usize> {
        let i = k + self.k_max as i32;
        (i >= 0 && (i as usize) < self.modes.len()).then_some(i as usize)
    }

    pub fn mode(&self, k: i32) -> Option<&GridFunction> {
        self.index(k).map(|i| &self.modes[i])
    }

    pub fn set_mode(&mut self, k: i32, w: GridFunction) -> Result<()> {
        let i = self.index(k).ok_or_else(|| Error::Config(format!("mode {k} outside truncation {}", self.k_max)))?;
        check_len(self.modes[i].len(), w.len())?;
        self.modes[i] = w;
        Ok(())
    }

    pub fn modes(&self) -> &[GridFunction] {
        &self.modes
    }

    pub fn grid_len(&self) -> usize {
        self.modes[0].len()
    }

    /// `max_k max_r |w_{-k} - conj(w_k)|`.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..=self.k_max as i32 {
            let a = &self.modes[self.index(k).unwrap()];
            let b = &self.modes[self.index(-k).unwrap()];
            for (x, y) in a.values().iter().zip(b.values()) {
                worst = worst.max((y - x.conj()).norm());
            }
        }
        worst
    }

    /// Replaces `w_k` by `(w_k + conj w_{-k}) / 2` for `k >= 0` and mirrors.
    pub fn symmetrize(&mut self) {
        for k in 0..=self.k_max as i32 {
            let (ip, im) = (self.index(k).unwrap(), self.index(-k).unwrap());
            let avg: Vec<C64> = self.modes[ip]
                .values()
                .iter()
                .zip(self.modes[im].values())
                .map(|(a, b)| 0.5 * (a + b.conj()))
                .collect();
            self.modes[im] = GridFunction::new(avg.iter().map(|v| v.conj()).collect());
            self.modes[ip] = GridFunction::new(avg);
        }
    }

    /// `L^2` norm of every mode, in order of increasing `k`.
    pub fn mode_norms(&self, grid: &RadialGrid) -> Vec<f64> {
        self.modes.iter().map(|m| grid.weighted_l2(m.values(), |_| 1.0)).collect()
    }

    pub fn total_norm(&self, grid: &RadialGrid) -> f64 {
        self.mode_norms(grid).iter().map(|n| n * n).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().all(|m| m.is_finite())
    }
}

/// Gaussian ring `r^{|k|} e^{-(r - r_c)^2}` normalized to unit `L^2` norm.
pub fn ring_profile(grid: &RadialGrid, k: i32, r_c: f64) -> GridFunction {
    let p = k.unsigned_abs() as i32;
    let w = grid.sample_real(|r| r.powi(p) * (-(r - r_c) * (r - r_c)).exp());
    let n = grid.weighted_l2(w.values(), |_| 1.0);
    w.scaled(C64::new(1.0 / n, 0.0))
}

/// Ring data with the same amplitude on each listed positive harmonic and its mirror.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingInit {
    pub amplitude: f64,
    pub r_c: f64,
    pub harmonics: Vec<i32>,
}

impl Default for RingInit {
    fn default() -> Self {
        Self::all(1.0, 3.0, 8)
    }
}

impl RingInit {
    pub fn single(amplitude: f64, r_c: f64) -> Self {
        Self { amplitude, r_c, harmonics: vec![1] }
    }

    pub fn all(amplitude: f64, r_c: f64, k_max: usize) -> Self {
        Self { amplitude, r_c, harmonics: (1..=k_max as i32).collect() }
    }

    pub fn build(&self, grid: &RadialGrid, k_max: usize, params: FlowParams) -> Result<ModeState> {
        let mut s = ModeState::zeros(grid.len(), k_max, params);
        for &k in &self.harmonics {
            if k <= 0 || k as usize > k_max {
                return Err(Error::Config(format!("ring harmonic {k} must lie in 1..={k_max}")));
            }
            let w = ring_profile(grid, k, self.r_c).scaled(C64::new(self.amplitude, 0.0));
            s.set_mode(-k, w.conj())?;
            s.set_mode(k, w)?;
        }
        Ok(s)
    }
}

/// Nonlinear terms `(f1_k, f2_k)` from the stream pairs of every mode.
pub fn assemble_f1_f2(
    grid: &RadialGrid,
    state: &ModeState,
    pairs: &[StreamPair],
    k: i32,
) -> Result<(GridFunction, GridFunction)> {
    let table = StreamTable::new(grid, state.k_max, pairs)?;
    table.terms(state, k)
}

/// Per-mode coefficient arrays of the interaction terms.
struct StreamTable {
    k_max: i32,
    /// `phi_breve_m' / r`.
    a: Vec<Vec<C64>>,
    /// `i m (1/4 - 1/(2 r^2)) phi_breve_m`.
    b: Vec<Vec<C64>>,
    /// `i m phi_breve_m / r`.
    c: Vec<Vec<C64>>,
}

impl StreamTable {
    fn new(grid: &RadialGrid, k_max: usize, pairs: &[StreamPair]) -> Result<Self> {
        let km = k_max as i32;
        let mut a = Vec::with_capacity(2 * k_max + 1);
        let mut b = Vec::with_capacity(2 * k_max + 1);
        let mut c = Vec::with_capacity(2 * k_max + 1);
        for m in -km..=km {
            let p = pairs.iter().find(|p| p.k == m).ok_or(Error::MissingStream(m))?;
            check_len(grid.len(), p.phi_breve.len())?;
            check_len(grid.len(), p.dphi_breve.len())?;
            let mf = m as f64;
            let mut am = Vec::with_capacity(grid.len());
            let mut bm = Vec::with_capacity(grid.len());
            let mut cm = Vec::with_capacity(grid.len());
            for (i, &r) in grid.nodes().iter().enumerate() {
                let phi = p.phi_breve.values()[i];
                am.push(p.dphi_breve.values()[i] / r);
                bm.push(I * mf * (0.25 - 0.5 / (r * r)) * phi);
                cm.push(I * mf * phi / r);
            }
            a.push(am);
            b.push(bm);
            c.push(cm);
        }
        Ok(Self { k_max: km, a, b, c })
    }

    fn terms(&self, state: &ModeState, k: i32) -> Result<(GridFunction, GridFunction)> {
        if k.abs() > self.k_max {
            return Err(Error::Config(format!("mode {k} outside truncation {}", self.k_max)));
        }
        let n = state.grid_len();
        let mut f1 = vec![C64::new(0.0, 0.0); n];
        let mut f2 = vec![C64::new(0.0, 0.0); n];
        let ik = I * k as f64;
        for l in -self.k_max..=self.k_max {
            let m = k - l;
            if m.abs() > self.k_max {
                continue;
            }
            let w = state.mode(l).unwrap();
            if w.is_zero() {
                continue;
            }
            let j = (m + self.k_max) as usize;
            let (a, b, c) = (&self.a[j], &self.b[j], &self.c[j]);
            for (i, &wl) in w.values().iter().enumerate() {
                f1[i] += wl * (ik * a[i] + b[i]);
                f2[i] += wl * c[i];
            }
        }
        Ok((GridFunction::new(f1), GridFunction::new(f2)))
    }

    /// Rate bound for the explicit part, `K sum_m |phi_m'/r| + sum_m |m| |phi_m| (|1/4 - 1/(2r^2)| + 1/(r h))`.
    fn explicit_frequency(&self, grid: &RadialGrid) -> f64 {
        let h = grid.max_spacing();
        let kf = self.k_max as f64;
        let mut worst: f64 = 0.0;
        for i in 0..grid.len() {
            let mut s = 0.0;
            for j in 0..self.a.len() {
                s += kf * self.a[j][i].norm() + self.b[j][i].norm() + self.c[j][i].norm() / h;
            }
            worst = worst.max(s);
        }
        worst
    }
}

/// Operators, stream solvers and derivative matrix shared by all steps of a run.
#[derive(Debug, Clone)]
pub struct ModeSystem {
    grid: Arc<RadialGrid>,
    params: FlowParams,
    k_max: usize,
    ops: Vec<BandedComplexOperator>,
    streams: Vec<StreamSolver>,
    d1: BandMatrix,
}

impl ModeSystem {
    pub fn new(grid: Arc<RadialGrid>, params: FlowParams, k_max: usize) -> Result<Self> {
        let km = k_max as i32;
        let mut ops = Vec::with_capacity(2 * k_max + 1);
        let mut streams = Vec::with_capacity(2 * k_max + 1);
        for k in -km..=km {
            ops.push(if k == 0 {
                assemble_zero_mode(grid.clone())
            } else {
                assemble_lk_shared(grid.clone(), k, &params)?
            });
            streams.push(StreamSolver::new(grid.clone(), k)?);
        }
        let d1 = grid.first_derivative();
        Ok(Self { grid, params, k_max, ops, streams, d1 })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn params(&self) -> FlowParams {
        self.params
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn operator(&self, k: i32) -> &BandedComplexOperator {
        &self.ops[(k + self.k_max as i32) as usize]
    }

    fn check_state(&self, state: &ModeState) -> Result<()> {
        if state.k_max != self.k_max {
            return Err(Error::Config(format!("state truncation {} differs from system {}", state.k_max, self.k_max)));
        }
        check_len(self.grid.len(), state.grid_len())
    }

    pub fn stream_pairs(&self, state: &ModeState) -> Result<Vec<StreamPair>> {
        self.check_state(state)?;
        self.streams
            .par_iter()
            .zip(state.modes().par_iter())
            .map(|(s, w)| if w.is_zero() { Ok(StreamPair::zero(s.k(), w.len())) } else { s.solve(w) })
            .collect()
    }

    /// `-(f1_k - D f2_k)` for every mode, plus the explicit frequency bound.
    fn forcing_with(&self, state: &ModeState, pairs: &[StreamPair]) -> Result<(Vec<Vec<C64>>, f64)> {
        let table = StreamTable::new(&self.grid, self.k_max, pairs)?;
        let forcing = state
            .ks()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&k| {
                let (f1, f2) = table.terms(state, k)?;
                let df2 = self.d1.apply(f2.values());
                Ok(f1.values().iter().zip(&df2).map(|(a, b)| b - a).collect())
            })
            .collect::<Result<Vec<Vec<C64>>>>()?;
        Ok((forcing, table.explicit_frequency(&self.grid)))
    }

    pub fn forcing(&self, state: &ModeState) -> Result<Vec<Vec<C64>>> {
        let pairs = self.stream_pairs(state)?;
        Ok(self.forcing_with(state, &pairs)?.0)
    }

    /// `sum_k <f1_k - D f2_k, w_k>` computed directly and with `D` moved onto `w_k`.
    pub fn interaction_pairing(&self, state: &ModeState) -> Result<(C64, C64)> {
        let pairs = self.stream_pairs(state)?;
        let table = StreamTable::new(&self.grid, self.k_max, &pairs)?;
        let mut direct = C64::new(0.0, 0.0);
        let mut by_parts = C64::new(0.0, 0.0);
        for k in state.ks() {
            let (f1, f2) = table.terms(state, k)?;
            let w = state.mode(k).unwrap().values();
            let df2 = self.d1.apply(f2.values());
            let dw = self.d1.apply(w);
            let p1 = self.grid.inner(f1.values(), w);
            direct += p1 - self.grid.inner(&df2, w);
            by_parts += p1 + self.grid.inner(f2.values(), &dw);
        }
        Ok((direct, by_parts))
    }
}

/// Diagnostics from one accepted step.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepInfo {
    /// `dt` times the explicit frequency bound.
    pub cfl: f64,
    /// Largest `L^2` norm of the interaction forcing over modes.
    pub nonlinear_residue: f64,
    /// Reality defect before symmetrization, relative to the largest nodal value.
    pub raw_reality_defect: f64,
    /// Reality defect after symmetrization.
    pub reality_defect: f64,
}

/// IMEX stepper: BDF2 for `L_k`, `2 N_n - N_{n-1}` for the interaction terms
/// (backward and forward Euler on the first step and after every change of `dt`).
#[derive(Debug, Clone)]
pub struct NonlinearStepper {
    system: ModeSystem,
    dt: f64,
    bdf: Vec<Bdf2>,
    history: Option<(Vec<GridFunction>, Vec<Vec<C64>>)>,
}

impl NonlinearStepper {
    pub fn new(system: ModeSystem, dt: f64) -> Result<Self> {
        let bdf = Self::factor(&system, dt)?;
        Ok(Self { system, dt, bdf, history: None })
    }

    fn factor(system: &ModeSystem, dt: f64) -> Result<Vec<Bdf2>> {
        system.ops.par_iter().map(|op| Bdf2::new(op, dt)).collect()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn system(&self) -> &ModeSystem {
        &self.system
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if dt != self.dt {
            self.bdf = Self::factor(&self.system, dt)?;
            self.dt = dt;
            self.history = None;
        }
        Ok(())
    }

    pub fn step(&mut self, state: &mut ModeState) -> Result<StepInfo> {
        self.step_checked(state, f64::INFINITY).map(|s| s.expect("no CFL limit"))
    }

    /// Returns `None` without touching `state` when `cfl > cfl_limit`.
    pub fn step_checked(&mut self, state: &mut ModeState, cfl_limit: f64) -> Result<Option<StepInfo>> {
        let pairs = self.system.stream_pairs(state)?;
        let (forcing, freq) = self.system.forcing_with(state, &pairs)?;
        let cfl = self.dt * freq;
        if cfl > cfl_limit {
            return Ok(None);
        }
        let grid = &self.system.grid;
        let residue = forcing.iter().map(|g| grid.weighted_l2(g, |_| 1.0)).fold(0.0, f64::max);
        let explicit: Vec<Vec<C64>> = match &self.history {
            Some((_, prev)) => forcing
                .iter()
                .zip(prev)
                .map(|(g, p)| g.iter().zip(p).map(|(a, b)| 2.0 * a - b).collect())
                .collect(),
            None => forcing.clone(),
        };
        let before = state.modes().to_vec();
        let next: Vec<GridFunction> = (0..self.bdf.len())
            .into_par_iter()
            .map(|j| {
                let mut v = before[j].values().to_vec();
                let prev = self.history.as_ref().map(|(s, _)| s[j].values());
                self.bdf[j].step_forced(&mut v, prev, &explicit[j]);
                GridFunction::new(v)
            })
            .collect();
        let mut candidate = ModeState { k_max: state.k_max, tau: state.tau + self.dt, params: state.params, modes: next };
        if !candidate.is_finite() {
            return Err(Error::NonFinite(format!("nonlinear state at tau = {}", candidate.tau)));
        }
        let scale = candidate.modes.iter().map(|m| m.max_abs()).fold(0.0, f64::max);
        let raw = candidate.reality_defect();
        candidate.symmetrize();
        self.history = Some((before, forcing));
        let info = StepInfo {
            cfl,
            nonlinear_residue: residue,
            raw_reality_defect: if scale > 0.0 { raw / scale } else { 0.0 },
            reality_defect: candidate.reality_defect(),
        };
        *state = candidate;
        Ok(Some(info))
    }
}

/// Run configuration. `tau_end = None` means `20 / rate` with `rate` the
/// fitted linear decay rate of the `k = 1` ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub r_max: f64,
    pub b: f64,
    pub k_max: usize,
    pub dt: f64,
    pub tau_end: Option<f64>,
    pub stride: usize,
    pub init: RingInit,
    /// Largest accepted `dt` times the explicit frequency bound; `dt` is halved above it.
    pub cfl_limit: f64,
    /// Energy weight constant; `None` uses half the linear rate over `|B|^{1/3}`.
    pub energy_c: Option<f64>,
    /// Horizon in units of `1 / rate` when `tau_end` is `None`.
    pub horizon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 512,
            r_max: 20.0,
            b: 1e3,
            k_max: 8,
            dt: 2e-3,
            tau_end: None,
            stride: 10,
            init: RingInit::default(),
            cfl_limit: 0.5,
            energy_c: None,
            horizon: 20.0,
        }
    }
}

impl SimConfig {
    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::uniform(self.n, self.r_max)
    }

    pub fn params(&self) -> Result<FlowParams> {
        FlowParams::from_ratio(self.b)
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        let mut c = self.clone();
        c.init.amplitude = amplitude;
        c
    }

    pub fn with_b(&self, b: f64) -> Self {
        Self { b, ..self.clone() }
    }
}

/// Linear decay of the unit `k = 1` ring under [`Bdf2`], fitted once the norm
/// has dropped below `1e-2` of its initial value.
pub fn linear_ring_rate(grid: &RadialGrid, params: &FlowParams, r_c: f64, dt: f64) -> Result<DecayFit> {
    let op = assemble_lk(grid, 1, params)?;
    let bdf = Bdf2::new(&op, dt)?;
    let mut w = ring_profile(grid, 1, r_c).into_values();
    let mut prev: Option<Vec<C64>> = None;
    let mut times = vec![0.0];
    let mut norms = vec![1.0];
    let mut start = None;
    let mut n = 0usize;
    loop {
        let before = w.clone();
        bdf.step(&mut w, prev.as_deref());
        prev = Some(before);
        n += 1;
        let t = n as f64 * dt;
        let v = grid.weighted_l2(&w, |_| 1.0);
        times.push(t);
        norms.push(v);
        if start.is_none() && v < 1e-2 {
            start = Some(t);
        }
        if v < 1e-8 || t > 60.0 {
            break;
        }
    }
    let lo = start.ok_or_else(|| Error::Config("linear ring did not decay by tau = 60".into()))?;
    fit_decay(&times, &norms, (lo, *times.last().unwrap()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    /// Total norm exceeded ten times its initial value.
    Growth { tau: f64 },
    NonFinite { tau: f64 },
}

/// Stored snapshots of every mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeTrajectory {
    pub k_max: usize,
    pub b: f64,
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub states: Vec<Vec<GridFunction>>,
}

impl ModeTrajectory {
    /// `L^2` norm of mode `k` at every stored time.
    pub fn mode_norms(&self, grid: &RadialGrid, k: i32) -> Vec<f64> {
        let j = (k + self.k_max as i32) as usize;
        self.states.iter().map(|s| grid.weighted_l2(s[j].values(), |_| 1.0)).collect()
    }

    pub fn mode_series(&self, k: i32) -> Vec<&GridFunction> {
        let j = (k + self.k_max as i32) as usize;
        self.states.iter().map(|s| &s[j]).collect()
    }

    /// `tau` followed by the `L^2` norm of each mode `k = 0..=K`.
    pub fn to_csv(&self, grid: &RadialGrid) -> String {
        let km = self.k_max as i32;
        let cols: Vec<Vec<f64>> = (0..=km).map(|k| self.mode_norms(grid, k)).collect();
        let mut out = String::from("tau");
        for k in 0..=km {
            out.push_str(&format!(",w{k}"));
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.10e}"));
            for c in &cols {
                out.push_str(&format!(",{:.17e}", c[i]));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeEnergy {
    pub k: i32,
    /// `|e w|_{LinfL2}`, `|kB|^{1/6} |e w|_{L2L2}`, `|kB|^{1/6} |e w/r|_{LinfL2}`,
    /// `|kB|^{1/6} |k| |e w/r^2|_{L2L2}`, `|kB|^{1/6} |k|^{1/2} |e w/r^{3/2}|_{L2Linf}`,
    /// `|kB|^{1/3} |e w/r|_{L2L2}` with `e = e^{c |kB|^{1/3} tau}`.
    pub components: [f64; 6],
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroEnergy {
    /// `|B|^{1/6}` times `|w/r|_{LinfL2}`, `|w/r^{3/2}|_{L2Linf}`, `|w/r^2|_{L2L2}`, `|w|_{L2L2}`.
    pub components: [f64; 4],
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeFit {
    pub k: i32,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub c: f64,
    pub modes: Vec<ModeEnergy>,
    pub zero: ZeroEnergy,
    /// Sum of all mode totals and the zero-mode total.
    pub total: f64,
    pub fits: Vec<ModeFit>,
}

impl EnergyReport {
    pub fn all_positive(&self) -> bool {
        self.modes.iter().all(|m| m.components.iter().all(|&c| c > 0.0))
            && self.zero.components.iter().all(|&c| c > 0.0)
    }
}

/// Pointwise-in-time pieces: `|w|`, `|w/r|`, `|w/r^2|`, `max |w/r^{3/2}|`.
fn slices(grid: &RadialGrid, w: &GridFunction) -> [f64; 4] {
    let v = w.values();
    let sup = v.iter().zip(grid.nodes()).map(|(x, &r)| x.norm() / r.powf(1.5)).fold(0.0, f64::max);
    [
        grid.weighted_l2(v, |_| 1.0),
        grid.weighted_l2(v, |r| 1.0 / (r * r)),
        grid.weighted_l2(v, |r| 1.0 / r.powi(4)),
        sup,
    ]
}

fn time_l2(times: &[f64], vals: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 1..times.len() {
        s += 0.5 * (times[i] - times[i - 1]) * (vals[i] * vals[i] + vals[i - 1] * vals[i - 1]);
    }
    s.sqrt()
}

/// Energies of a stored trajectory: trapezoidal rule in `tau`, maximum over
/// stored times for the `L^infty` pieces, nodal maximum in `r`.
pub fn energy_ek(traj: &ModeTrajectory, grid: &RadialGrid, c: f64) -> Result<EnergyReport> {
    check_len(grid.len(), traj.grid.n)?;
    let km = traj.k_max as i32;
    let times = &traj.times;
    let b = traj.b.abs();
    let modes: Vec<ModeEnergy> = (-km..=km)
        .filter(|&k| k != 0)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&k| {
            let kb = (k as f64).abs() * b;
            let ka = (k as f64).abs();
            let per: Vec<[f64; 4]> = traj
                .mode_series(k)
                .iter()
                .zip(times)
                .map(|(w, &t)| {
                    let e = (c * kb.cbrt() * t).exp();
                    slices(grid, w).map(|x| e * x)
                })
                .collect();
            let col = |j: usize| per.iter().map(|p| p[j]).collect::<Vec<_>>();
            let linf = |j: usize| per.iter().map(|p| p[j]).fold(0.0, f64::max);
            let s6 = kb.powf(1.0 / 6.0);
            let components = [
                linf(0),
                s6 * time_l2(times, &col(0)),
                s6 * linf(1),
                s6 * ka * time_l2(times, &col(2)),
                s6 * ka.sqrt() * time_l2(times, &col(3)),
                kb.cbrt() * time_l2(times, &col(1)),
            ];
            ModeEnergy { k, components, total: components.iter().sum() }
        })
        .collect();
    let per0: Vec<[f64; 4]> = traj.mode_series(0).iter().map(|w| slices(grid, w)).collect();
    let col0 = |j: usize| per0.iter().map(|p| p[j]).collect::<Vec<_>>();
    let s6 = b.powf(1.0 / 6.0);
    let zc = [
        s6 * per0.iter().map(|p| p[1]).fold(0.0, f64::max),
        s6 * time_l2(times, &col0(3)),
        s6 * time_l2(times, &col0(2)),
        s6 * time_l2(times, &col0(0)),
    ];
    let zero = ZeroEnergy { components: zc, total: zc.iter().sum() };
    let tau_end = *times.last().unwrap_or(&0.0);
    let fits = (-km..=km)
        .map(|k| {
            let norms = traj.mode_norms(grid, k);
            let rate = if norms.iter().all(|&n| n > 0.0) && times.len() > 2 {
                fit_decay(times, &norms, (0.5 * tau_end, tau_end)).ok().map(|f| f.rate)
            } else {
                None
            };
            ModeFit { k, rate }
        })
        .collect();
    let total = modes.iter().map(|m| m.total).sum::<f64>() + zero.total;
    Ok(EnergyReport { c, modes, zero, total, fits })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRun {
    pub config: SimConfig,
    pub tau_end: f64,
    /// Linear `k = 1` ring rate, when it was needed for `tau_end` or `c`.
    pub linear_rate: Option<f64>,
    pub outcome: Outcome,
    pub trajectory: ModeTrajectory,
    pub energy: EnergyReport,
    pub initial_norms: Vec<f64>,
    pub final_norms: Vec<f64>,
    pub steps: usize,
    pub dt_final: f64,
    pub max_cfl: f64,
    pub max_nonlinear_residue: f64,
    pub max_raw_reality_defect: f64,
    pub max_reality_defect: f64,
}

impl SimulationRun {
    pub fn final_state(&self) -> &[GridFunction] {
        self.trajectory.states.last().expect("trajectory holds the initial state")
    }

    /// Largest `final / initial` norm ratio over nonzero modes that started nonzero.
    pub fn worst_decay_ratio(&self) -> f64 {
        let km = self.config.k_max;
        self.initial_norms
            .iter()
            .zip(&self.final_norms)
            .enumerate()
            .filter(|(j, (a, _))| *j != km && **a > 0.0)
            .map(|(_, (a, b))| b / a)
            .fold(0.0, f64::max)
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimulationRun> {
    let grid = Arc::new(cfg.grid()?);
    let params = cfg.params()?;
    let state = cfg.init.build(&grid, cfg.k_max, params)?;
    simulate_from(cfg, grid, state)
}

/// Runs from an explicit initial state; `cfg.init` is ignored.
pub fn simulate_from(cfg: &SimConfig, grid: Arc<RadialGrid>, mut state: ModeState) -> Result<SimulationRun> {
    if !(cfg.dt > 0.0) || cfg.stride == 0 {
        return Err(Error::Config("dt and stride must be positive".into()));
    }
    let params = cfg.params()?;
    let need_rate = cfg.tau_end.is_none() || cfg.energy_c.is_none();
    let linear_rate = if need_rate {
        Some(linear_ring_rate(&grid, &params, cfg.init.r_c, cfg.dt)?.rate)
    } else {
        None
    };
    let tau_end = cfg.tau_end.unwrap_or_else(|| cfg.horizon / linear_rate.unwrap());
    let c = cfg.energy_c.unwrap_or_else(|| 0.5 * linear_rate.unwrap() / params.b.abs().cbrt());
    let system = ModeSystem::new(grid.clone(), params, cfg.k_max)?;
    let mut stepper = NonlinearStepper::new(system, cfg.dt)?;
    let initial_norms = state.mode_norms(&grid);
    let n0 = state.total_norm(&grid);
    let mut times = vec![0.0];
    let mut states = vec![state.modes().to_vec()];
    let mut outcome = Outcome::Completed;
    let (mut max_cfl, mut max_res, mut max_raw, mut max_real) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut steps = 0usize;
    let tol = 1e-9 * tau_end.max(1.0);
    while state.tau < tau_end - tol {
        let remaining = tau_end - state.tau;
        if stepper.dt() > remaining + tol {
            stepper.set_dt(remaining)?;
        }
        let info = match stepper.step_checked(&mut state, cfg.cfl_limit) {
            Ok(Some(info)) => info,
            Ok(None) => {
                let dt = 0.5 * stepper.dt();
                if dt < 1e-9 {
                    return Err(Error::Config("CFL restriction drove dt below 1e-9".into()));
                }
                stepper.set_dt(dt)?;
                continue;
            }
            Err(Error::NonFinite(_)) => {
                outcome = Outcome::NonFinite { tau: state.tau };
                break;
            }
            Err(e) => return Err(e),
        };
        steps += 1;
        max_cfl = max_cfl.max(info.cfl);
        max_res = max_res.max(info.nonlinear_residue);
        max_raw = max_raw.max(info.raw_reality_defect);
        max_real = max_real.max(info.reality_defect);
        let done = state.tau >= tau_end - tol;
        let grew = n0 > 0.0 && state.total_norm(&grid) > 10.0 * n0;
        if steps.is_multiple_of(cfg.stride) || done || grew {
            times.push(state.tau);
            states.push(state.modes().to_vec());
        }
        if grew {
            outcome = Outcome::Growth { tau: state.tau };
            break;
        }
    }
    let trajectory = ModeTrajectory { k_max: cfg.k_max, b: params.b, grid: grid.spec(), times, states };
    let energy = energy_ek(&trajectory, &grid, c)?;
    let final_norms = trajectory.states.last().unwrap().iter().map(|m| grid.weighted_l2(m.values(), |_| 1.0)).collect();
    Ok(SimulationRun {
        config: cfg.clone(),
        tau_end,
        linear_rate,
        outcome,
        trajectory,
        energy,
        initial_norms,
        final_norms,
        steps,
        dt_final: stepper.dt(),
        max_cfl,
        max_nonlinear_residue: max_res,
        max_raw_reality_defect: max_raw,
        max_reality_defect: max_real,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Every nonzero mode ended below `1e-3` of its initial norm.
    Decaying,
    /// Total norm grew tenfold or became non-finite.
    Growing,
    Inconclusive,
}

pub const DECAY_FACTOR: f64 = 1e-3;

pub fn classify(run: &SimulationRun) -> Verdict {
    match run.outcome {
        Outcome::Growth { .. } | Outcome::NonFinite { .. } => Verdict::Growing,
        Outcome::Completed if run.worst_decay_ratio() < DECAY_FACTOR => Verdict::Decaying,
        Outcome::Completed => Verdict::Inconclusive,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: f64,
    pub amplitude: f64,
    pub verdict: Verdict,
    pub tau_end: f64,
    pub worst_decay_ratio: f64,
    pub k1_rate: Option<f64>,
}

/// Amplitude bracket at one `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBracket {
    pub b: f64,
    /// Largest amplitude below which every tried amplitude decayed.
    pub decaying: Option<f64>,
    /// First amplitude above that which did not decay.
    pub failing: Option<f64>,
}

impl ThresholdBracket {
    /// Geometric midpoint, only when both ends are known.
    pub fn estimate(&self) -> Option<f64> {
        Some((self.decaying? * self.failing?).sqrt())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub thresholds: Vec<ThresholdBracket>,
    /// Log-log slope of the bracket midpoints against `B`, when at least two are bracketed.
    pub slope: Option<f64>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("b,amplitude,verdict,tau_end,worst_decay_ratio,k1_rate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6e},{:.6e},{:?},{:.6e},{:.6e},{}\n",
                r.b,
                r.amplitude,
                r.verdict,
                r.tau_end,
                r.worst_decay_ratio,
                r.k1_rate.map(|x| format!("{x:.6e}")).unwrap_or_default()
            ));
        }
        out
    }
}

fn row(cfg: &SimConfig) -> Result<SweepRow> {
    let run = simulate(cfg)?;
    let k1 = run.energy.fits.iter().find(|f| f.k == 1).and_then(|f| f.rate);
    Ok(SweepRow {
        b: cfg.b,
        amplitude: cfg.init.amplitude,
        verdict: classify(&run),
        tau_end: run.tau_end,
        worst_decay_ratio: run.worst_decay_ratio(),
        k1_rate: k1,
    })
}

pub fn threshold_slope(thresholds: &[ThresholdBracket]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = thresholds.iter().filter_map(|t| t.estimate().map(|a| (t.b, a))).unzip();
    if xs.len() < 2 {
        return None;
    }
    fit_power_law(&xs, &ys).ok().map(|f| f.slope)
}

/// Runs every `(B, amplitude)` pair (amplitudes sorted ascending).
pub fn threshold_sweep(base: &SimConfig, bs: &[f64], amplitudes: &[f64]) -> Result<SweepTable> {
    let mut amps = amplitudes.to_vec();
    amps.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut thresholds = Vec::new();
    for &b in bs {
        let cfgs: Vec<SimConfig> = amps.iter().map(|&a| base.with_b(b).with_amplitude(a)).collect();
        let part = cfgs.iter().map(row).collect::<Result<Vec<_>>>()?;
        let mut t = ThresholdBracket { b, decaying: None, failing: None };
        for r in &part {
            if r.verdict != Verdict::Decaying {
                t.failing = Some(r.amplitude);
                break;
            }
            t.decaying = Some(r.amplitude);
        }
        thresholds.push(t);
        rows.extend(part);
    }
    let slope = threshold_slope(&thresholds);
    Ok(SweepTable { rows, thresholds, slope })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub b: f64,
    /// Largest amplitude observed to decay.
    pub decaying: f64,
    /// Smallest amplitude observed not to decay, if any up to the cap.
    pub failing: Option<f64>,
    pub rows: Vec<SweepRow>,
}

impl ThresholdSearch {
    /// Geometric midpoint of the bracket, or the cap when nothing failed.
    pub fn estimate(&self) -> f64 {
        match self.failing {
            Some(f) => (self.decaying * f).sqrt(),
            None => self.decaying,
        }
    }

    pub fn bracket(&self) -> ThresholdBracket {
        ThresholdBracket { b: self.b, decaying: Some(self.decaying), failing: self.failing }
    }
}

/// Brackets the threshold by factor-of-`grow` steps upward from `start`, up to
/// `cap`, then bisects geometrically `bisections` times.
pub fn locate_threshold(base: &SimConfig, start: f64, grow: f64, cap: f64, bisections: usize) -> Result<ThresholdSearch> {
    if !(start > 0.0 && grow > 1.0 && cap >= start) {
        return Err(Error::Config("threshold search needs 0 < start <= cap and grow > 1".into()));
    }
    let mut rows = Vec::new();
    let first = row(&base.with_amplitude(start))?;
    let ok = first.verdict == Verdict::Decaying;
    rows.push(first);
    if !ok {
        return Err(Error::Config(format!("starting amplitude {start} does not decay")));
    }
    let mut lo = start;
    let mut hi = None;
    while hi.is_none() && lo < cap {
        let a = (lo * grow).min(cap);
        let r = row(&base.with_amplitude(a))?;
        let decayed = r.verdict == Verdict::Decaying;
        rows.push(r);
        if decayed {
            lo = a;
        } else {
            hi = Some(a);
        }
    }
    if let Some(mut h) = hi {
        for _ in 0..bisections {
            let a = (lo * h).sqrt();
            let r = row(&base.with_amplitude(a))?;
            let decayed = r.verdict == Verdict::Decaying;
            rows.push(r);
            if decayed {
                lo = a;
            } else {
                h = a;
            }
        }
        hi = Some(h);
    }
    Ok(ThresholdSearch { b: base.b, decaying: lo, failing: hi, rows })
}

/// `|kB|^{1/3} <= |lB|^{1/3} + |(k - l)B|^{1/3}` for every pair in the truncation.
pub fn interaction_inequality_holds(b: f64, k_max: usize) -> bool {
    let km = k_max as i32;
    let cb = |k: i32| ((k as f64) * b).abs().cbrt();
    (-km..=km).all(|k| (-km..=km).all(|l| cb(k) <= cb(l) + cb(k - l)))
}

/// `int_0^infty sqrt(r) e^{-r^2/8} w dr`, proportional to the circulation of the zero mode.
pub fn zero_mode_mass(grid: &RadialGrid, w: &GridFunction) -> C64 {
    w.values()
        .iter()
        .zip(grid.nodes().iter().zip(grid.weights()))
        .map(|(v, (&r, &h))| v * (h * r * f_weight(r)))
        .sum()
}

/// Removes the multiple of the kernel profile `sqrt(r) e^{-r^2/8}` that carries circulation.
pub fn remove_zero_mode_mass(grid: &RadialGrid, w: &GridFunction) -> GridFunction {
    let kernel = grid.sample_real(|r| r * f_weight(r));
    let kk = grid.inner(kernel.values(), kernel.values()).re;
    let m = zero_mode_mass(grid, w);
    GridFunction::new(w.values().iter().zip(kernel.values()).map(|(v, q)| v - q * (m / kk)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassivityReport {
    pub mass: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub monotone: bool,
    pub rate: f64,
}

/// Linear zero-mode flow from `w0`: `L^2` norms and fitted decay rate.
pub fn zero_mode_passivity(grid: Arc<RadialGrid>, w0: &GridFunction, tau_end: f64, dt: f64) -> Result<PassivityReport> {
    let op = assemble_zero_mode(grid.clone());
    let bdf = Bdf2::new(&op, dt)?;
    let mut w = w0.values().to_vec();
    let mut prev: Option<Vec<C64>> = None;
    let steps = (tau_end / dt).round() as usize;
    let mut times = vec![0.0];
    let mut norms = vec![grid.weighted_l2(&w, |_| 1.0)];
    for n in 1..=steps {
        let before = w.clone();
        bdf.step(&mut w, prev.as_deref());
        prev = Some(before);
        times.push(n as f64 * dt);
        norms.push(grid.weighted_l2(&w, |_| 1.0));
    }
    let monotone = norms.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12));
    let rate = fit_decay(&times, &norms, (0.5 * tau_end, tau_end))?.rate;
    Ok(PassivityReport { mass: zero_mode_mass(&grid, w0).norm(), times, norms, monotone, rate })
}

/// `int_0^infty r^3 e^{-r^2/4} dr`.
pub const ZERO_MODE_WEIGHT_INTEGRAL: f64 = 8.0;
/// `int_0^infty r e^{-r^2/4} dr`.
pub const MODE_WEIGHT_INTEGRAL: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicalMode {
    pub k: i32,
    /// `|omega_k|_M` by quadrature of `r e^{r^2/4} |f w_k|^2`.
    pub m_direct: f64,
    /// `|w_k|_{L^2}`.
    pub l2: f64,
    /// `|omega_k / r|_M` by quadrature.
    pub m_over_r_direct: f64,
    /// `|w_k|_X`.
    pub x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicalReport {
    pub nu: f64,
    pub modes: Vec<PhysicalMode>,
    /// Largest relative gap between the direct and cancelled forms.
    pub max_cancellation_error: f64,
    /// `|B|^{1/6} |omega_0/r|_M + sum_{k != 0} (|omega_k|_M + |k|^{1/6} |B|^{1/6} |omega_k/r|_M)`.
    pub energy: f64,
    /// `2 pi nu (sqrt(8) |w_0|_X + sqrt(2) sum_{k != 0} |w_k|_{L^2})`.
    pub l1_bound: f64,
    /// `nu int int r |sum_k omega_k e^{i k theta}| dtheta dr`.
    pub l1_direct: f64,
}

/// Physical-variable norms of the perturbation carried by `state`.
pub fn translate_physical(grid: &RadialGrid, state: &ModeState, theta_points: usize) -> Result<PhysicalReport> {
    check_len(grid.len(), state.grid_len())?;
    let nu = state.params.nu;
    let b6 = state.params.b.abs().powf(1.0 / 6.0);
    let mut modes = Vec::new();
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| if b > 0.0 { (a - b).abs() / b } else { a.abs() };
    for k in state.ks() {
        let w = state.mode(k).unwrap().values();
        let omega: Vec<C64> = w.iter().zip(grid.nodes()).map(|(v, &r)| v * f_weight(r)).collect();
        let m_direct = grid.weighted_l2(&omega, |r| r * (0.25 * r * r).exp());
        let m_over_r_direct = grid.weighted_l2(&omega, |r| (0.25 * r * r).exp() / r);
        let l2 = grid.weighted_l2(w, |_| 1.0);
        let x = grid.weighted_l2(w, |r| 1.0 / (r * r));
        worst = worst.max(rel(m_direct, l2)).max(rel(m_over_r_direct, x));
        modes.push(PhysicalMode { k, m_direct, l2, m_over_r_direct, x });
    }
    let mut energy = 0.0;
    let mut bound = 0.0;
    for m in &modes {
        if m.k == 0 {
            energy += b6 * m.m_over_r_direct;
            bound += ZERO_MODE_WEIGHT_INTEGRAL.sqrt() * m.x;
        } else {
            energy += m.m_direct + (m.k.abs() as f64).powf(1.0 / 6.0) * b6 * m.m_over_r_direct;
            bound += MODE_WEIGHT_INTEGRAL.sqrt() * m.l2;
        }
    }
    let l1_bound = 2.0 * std::f64::consts::PI * nu * bound;
    let nt = theta_points.max(1);
    let dtheta = 2.0 * std::f64::consts::PI / nt as f64;
    let pieces: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let r = grid.nodes()[i];
            let fw = f_weight(r);
            let mut s = 0.0;
            for j in 0..nt {
                let th = j as f64 * dtheta;
                let v: C64 = state.ks().map(|k| state.mode(k).unwrap().values()[i] * C64::from_polar(1.0, k as f64 * th)).sum();
                s += (v * fw).norm();
            }
            grid.weights()[i] * r * s * dtheta
        })
        .collect();
    let l1_direct = nu * pieces.iter().sum::<f64>();
    Ok(PhysicalReport { nu, modes, max_cancellation_error: worst, energy, l1_bound, l1_direct })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::uniform(n, 20.0).unwrap())
    }

    fn two_mode(g: &RadialGrid, amp: f64, k_max: usize) -> ModeState {
        RingInit::single(amp, 3.0).build(g, k_max, FlowParams::reference(1e3)).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = grid(128);
        let sys = ModeSystem::new(g.clone(), FlowParams::reference(1e3), 2).unwrap();
        let mut st = NonlinearStepper::new(sys, 0.01).unwrap();
        let mut s = ModeState::zeros(128, 2, FlowParams::reference(1e3));
        for _ in 0..5 {
            st.step(&mut s).unwrap();
        }
        assert!(s.modes().iter().all(|m| m.is_zero()));
    }

    #[test]
    fn single_harmonic_forcing_support() {
        let g = grid(256);
        let s = two_mode(&g, 1.0, 3);
        let sys = ModeSystem::new(g.clone(), s.params, 3).unwrap();
        let pairs = sys.stream_pairs(&s).unwrap();
        for k in [-1, 1, 3, -3] {
            let (f1, f2) = assemble_f1_f2(&g, &s, &pairs, k).unwrap();
            assert!(f1.is_zero() && f2.is_zero(), "k={k}");
        }
        for k in [2, -2] {
            let (f1, _) = assemble_f1_f2(&g, &s, &pairs, k).unwrap();
            assert!(f1.max_abs() > 0.0, "k={k}");
        }
        // an untwisted real profile gives no zero-mode flux
        let (f1, f2) = assemble_f1_f2(&g, &s, &pairs, 0).unwrap();
        assert!(f1.max_abs() < 1e-14 && f2.max_abs() < 1e-14);
    }

    fn twisted(g: &RadialGrid, k_max: usize) -> ModeState {
        let mut s = two_mode(g, 1.0, k_max);
        let w = GridFunction::new(
            s.mode(1).unwrap().values().iter().zip(g.nodes()).map(|(v, &r)| v * C64::from_polar(1.0, 2.0 * r)).collect(),
        );
        s.set_mode(-1, w.conj()).unwrap();
        s.set_mode(1, w).unwrap();
        s
    }

    #[test]
    fn zero_mode_source_matches_hand_sum() {
        let g = grid(256);
        let s = twisted(&g, 2);
        let sys = ModeSystem::new(g.clone(), s.params, 2).unwrap();
        let pairs = sys.stream_pairs(&s).unwrap();
        let (f1, f2) = assemble_f1_f2(&g, &s, &pairs, 0).unwrap();
        let p = |m: i32| pairs.iter().find(|p| p.k == m).unwrap();
        for (i, &r) in g.nodes().iter().enumerate() {
            let mut a = C64::new(0.0, 0.0);
            let mut b = C64::new(0.0, 0.0);
            for l in [-1, 1] {
                let m = -l;
                let w = s.mode(l).unwrap().values()[i];
                let phi = p(m).phi_breve.values()[i];
                a += I * m as f64 * (0.25 - 0.5 / (r * r)) * w * phi;
                b += I * m as f64 * w * phi / r;
            }
            assert!((f1.values()[i] - a).norm() <= 1e-14 * (1.0 + a.norm()));
            assert!((f2.values()[i] - b).norm() <= 1e-14 * (1.0 + b.norm()));
        }
        assert!(f1.max_abs() > 1e-6);
        // real data gives a real zero-mode source
        assert!(f1.values().iter().all(|v| v.im.abs() < 1e-14 * (1.0 + v.re.abs())));
    }

    #[test]
    fn missing_stream_is_an_error() {
        let g = grid(64);
        let s = two_mode(&g, 1.0, 2);
        let sys = ModeSystem::new(g.clone(), s.params, 2).unwrap();
        let mut pairs = sys.stream_pairs(&s).unwrap();
        pairs.retain(|p| p.k != -2);
        assert!(matches!(assemble_f1_f2(&g, &s, &pairs, 1), Err(Error::MissingStream(-2))));
    }

    #[test]
    fn by_parts_pairing_agrees() {
        let g = grid(256);
        let s = RingInit::all(0.5, 3.0, 3).build(&g, 3, FlowParams::reference(1e3)).unwrap();
        let sys = ModeSystem::new(g.clone(), s.params, 3).unwrap();
        let (a, b) = sys.interaction_pairing(&s).unwrap();
        assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300), "{a} vs {b}");
    }

    #[test]
    fn symmetrize_restores_reality() {
        let g = grid(64);
        let mut s = two_mode(&g, 1.0, 2);
        s.set_mode(2, g.sample(|r| C64::new(r.sin(), r.cos()) * (-r).exp())).unwrap();
        assert!(s.reality_defect() > 1e-3);
        s.symmetrize();
        assert_eq!(s.reality_defect(), 0.0);
    }

    #[test]
    fn interaction_inequality() {
        for b in [1.0, 1e3, -1e5] {
            assert!(interaction_inequality_holds(b, 8));
        }
    }

    #[test]
    fn tiny_data_follows_the_linear_flow() {
        let g = grid(256);
        let amp = 1e-8;
        let s0 = two_mode(&g, amp, 2);
        let sys = ModeSystem::new(g.clone(), s0.params, 2).unwrap();
        let op = sys.operator(1).clone();
        let mut st = NonlinearStepper::new(sys, 0.01).unwrap();
        let mut s = s0.clone();
        let lin = crate::semigroup::propagate_bdf2(&op, s0.mode(1).unwrap(), 0.5, 0.01, 50).unwrap();
        let lin = lin.last().values().to_vec();
        let mut residue: f64 = 0.0;
        for _ in 0..50 {
            residue = residue.max(st.step(&mut s).unwrap().nonlinear_residue);
        }
        assert!(residue < 1e-14);
        let d: Vec<C64> = s.mode(1).unwrap().values().iter().zip(&lin).map(|(a, b)| a - b).collect();
        assert!(g.weighted_l2(&d, |_| 1.0) / g.weighted_l2(&lin, |_| 1.0) < 1e-10);
    }

    #[test]
    fn energy_of_zero_trajectory_vanishes() {
        let cfg = SimConfig {
            n: 64,
            k_max: 2,
            dt: 0.01,
            tau_end: Some(0.1),
            stride: 2,
            init: RingInit { amplitude: 0.0, r_c: 3.0, harmonics: vec![1, 2] },
            energy_c: Some(0.1),
            ..SimConfig::default()
        };
        let run = simulate(&cfg).unwrap();
        assert_eq!(run.energy.total, 0.0);
        assert_eq!(classify(&run), Verdict::Decaying);
    }

    #[test]
    fn energy_ordering_for_concentrated_data() {
        // near the origin |w/r| dominates |w|, so the |kB|^{1/3} piece wins
        let g = RadialGrid::uniform(256, 20.0).unwrap();
        let w = g.sample_real(|r| r.powi(2) * (-(r - 0.3) * (r - 0.3) / 0.01).exp());
        let traj = ModeTrajectory {
            k_max: 1,
            b: 1e3,
            grid: g.spec(),
            times: vec![0.0, 1.0],
            states: vec![vec![w.conj(), GridFunction::zeros(256), w.clone()]; 2],
        };
        let e = energy_ek(&traj, &g, 0.0).unwrap();
        let m = e.modes.iter().find(|m| m.k == 1).unwrap();
        assert!(m.components[5] > m.components[1]);
    }

    #[test]
    fn physical_weights_cancel() {
        let g = grid(512);
        let s = RingInit::all(0.3, 3.0, 3).build(&g, 3, FlowParams::reference(1e3)).unwrap();
        let rep = translate_physical(&g, &s, 64).unwrap();
        assert!(rep.max_cancellation_error < 1e-12);
        assert!(rep.l1_direct <= rep.l1_bound);
        let zero = translate_physical(&g, &ModeState::zeros(512, 2, FlowParams::reference(1e3)), 16).unwrap();
        assert_eq!(zero.l1_bound, 0.0);
        assert_eq!(zero.energy, 0.0);
    }

    #[test]
    fn zero_mode_kernel_is_the_oseen_profile() {
        let g = grid(512);
        let op = assemble_zero_mode(g.clone());
        let q = g.sample_real(|r| r * f_weight(r));
        let lq = op.apply(q.values());
        let rel = g.weighted_l2(&lq, |_| 1.0) / g.weighted_l2(q.values(), |_| 1.0);
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn zero_mass_zero_mode_decays() {
        let g = grid(256);
        let w = remove_zero_mode_mass(&g, &g.sample_real(|r| r.sqrt() * (-(r - 2.0) * (r - 2.0)).exp()));
        assert!(zero_mode_mass(&g, &w).norm() < 1e-12);
        let rep = zero_mode_passivity(g, &w, 4.0, 0.01).unwrap();
        assert!(rep.monotone);
        assert!(rep.rate > 0.4, "rate {}", rep.rate);
    }
}
