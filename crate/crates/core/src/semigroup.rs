//! Time integration of `w_t + L_k w = 0` and the decay diagnostics built on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix, C64};
use crate::error::{check_len, Error, Result};
use crate::fit::fit_line;
use crate::grid::{GridFunction, GridSpec, NormKind, RadialGrid};
use crate::operator::BandedComplexOperator;

/// Crank-Nicolson stepper `(I + dt/2 L) w_{n+1} = (I - dt/2 L) w_n` with the
/// left factor computed once.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    dt: f64,
    lu: BandLu,
    explicit: BandMatrix,
}

impl CrankNicolson {
    pub fn new(op: &BandedComplexOperator, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let lu = op.identity_plus(0.5 * dt).factor()?;
        let explicit = op.identity_plus(-0.5 * dt);
        Ok(Self { dt, lu, explicit })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, w: &mut Vec<C64>) {
        let mut rhs = self.explicit.apply(w);
        self.lu.solve_in_place(&mut rhs);
        *w = rhs;
    }

    /// One step with an extra explicit forcing `g`: the right-hand side gains `dt g`.
    pub fn step_forced(&self, w: &mut Vec<C64>, g: &[C64]) {
        let mut rhs = self.explicit.apply(w);
        for (r, f) in rhs.iter_mut().zip(g) {
            *r += f * self.dt;
        }
        self.lu.solve_in_place(&mut rhs);
        *w = rhs;
    }
}

/// Second-order backward differentiation,
/// `(3 w_{n+1} - 4 w_n + w_{n-1}) / (2 dt) + L w_{n+1} = g`, started with one
/// backward Euler step. Unlike Crank-Nicolson it damps unresolved modes.
#[derive(Debug, Clone)]
pub struct Bdf2 {
    dt: f64,
    lu: BandLu,
    start: BandLu,
}

impl Bdf2 {
    pub fn new(op: &BandedComplexOperator, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let lu = op.identity_plus(2.0 * dt / 3.0).factor()?;
        let start = op.identity_plus(dt).factor()?;
        Ok(Self { dt, lu, start })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `w` in place; `prev` is the state one step earlier, `None` on the first step.
    pub fn step_forced(&self, w: &mut [C64], prev: Option<&[C64]>, g: &[C64]) {
        match prev {
            Some(p) => {
                let a = 2.0 * self.dt / 3.0;
                for ((x, q), f) in w.iter_mut().zip(p).zip(g) {
                    *x = (4.0 * *x - q) / 3.0 + f * a;
                }
                self.lu.solve_in_place(w);
            }
            None => {
                for (x, f) in w.iter_mut().zip(g) {
                    *x += f * self.dt;
                }
                self.start.solve_in_place(w);
            }
        }
    }

    pub fn step(&self, w: &mut [C64], prev: Option<&[C64]>) {
        let zero = vec![C64::new(0.0, 0.0); w.len()];
        self.step_forced(w, prev, &zero);
    }
}

/// Like [`propagate_linear`] with the [`Bdf2`] scheme; only the growth audits are filled.
pub fn propagate_bdf2(
    op: &BandedComplexOperator,
    w0: &GridFunction,
    tau_end: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory> {
    check_len(op.dim(), w0.len())?;
    let stepper = Bdf2::new(op, dt)?;
    let grid = op.grid();
    let steps = (tau_end / dt).round() as usize;
    let stride = stride.max(1);
    let mut w = w0.values().to_vec();
    let mut prev: Option<Vec<C64>> = None;
    let mut times = vec![0.0];
    let mut states = vec![w0.clone()];
    let mut audit = StepAudit::default();
    let mut l2 = grid.weighted_l2(&w, |_| 1.0);
    let mut x = grid.weighted_l2(&w, |r| 1.0 / (r * r));
    for n in 1..=steps {
        let before = w.clone();
        stepper.step(&mut w, prev.as_deref());
        prev = Some(before);
        let l2_new = grid.weighted_l2(&w, |_| 1.0);
        let x_new = grid.weighted_l2(&w, |r| 1.0 / (r * r));
        if l2 > 0.0 {
            audit.max_l2_growth = audit.max_l2_growth.max((l2_new - l2) / l2);
            audit.max_x_growth = audit.max_x_growth.max((x_new - x) / x);
        }
        l2 = l2_new;
        x = x_new;
        if n % stride == 0 || n == steps {
            times.push(n as f64 * dt);
            states.push(GridFunction::new(w.clone()));
        }
    }
    Ok(Trajectory { k: op.k(), beta: op.beta(), dt, stride, grid: grid.spec(), times, states, audit })
}

/// Per-step audits collected while integrating.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepAudit {
    /// `max (|w_{n+1}| - |w_n|) / |w_n|` in L^2.
    pub max_l2_growth: f64,
    /// Same in the X norm.
    pub max_x_growth: f64,
    /// `max | |w_{n+1}|^2 - |w_n|^2 + 2 dt Re<L m, m> | / |w_n|^2` with `m`
    /// the midpoint state.
    pub max_energy_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub k: i32,
    pub beta: f64,
    pub dt: f64,
    pub stride: usize,
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    pub audit: StepAudit,
}

impl Trajectory {
    pub fn norms(&self, grid: &RadialGrid, kind: NormKind) -> Result<Vec<f64>> {
        self.states.iter().map(|s| grid.norm(s, kind)).collect()
    }

    pub fn initial(&self) -> &GridFunction {
        &self.states[0]
    }

    pub fn last(&self) -> &GridFunction {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// `tau` followed by one column per norm kind.
    pub fn to_csv(&self, grid: &RadialGrid, kinds: &[NormKind]) -> Result<String> {
        let cols: Vec<Vec<f64>> = kinds.iter().map(|&k| self.norms(grid, k)).collect::<Result<_>>()?;
        let mut out = String::from("tau");
        for k in kinds {
            out.push_str(&format!(",{}", norm_label(*k)));
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.10e}"));
            for c in &cols {
                out.push_str(&format!(",{:.17e}", c[i]));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn norm_label(kind: NormKind) -> &'static str {
    match kind {
        NormKind::L2 => "l2",
        NormKind::X => "x",
        NormKind::H1 => "h1",
        NormKind::Hm1 => "hm1",
        NormKind::M => "m",
    }
}

/// Integrates `w_t + L w = 0` on `[0, tau_end]`, storing every `stride`-th state
/// and the final one.
pub fn propagate_linear(
    op: &BandedComplexOperator,
    w0: &GridFunction,
    tau_end: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory> {
    let stepper = CrankNicolson::new(op, dt)?;
    propagate_with(op, &stepper, w0, tau_end, stride)
}

pub fn propagate_with(
    op: &BandedComplexOperator,
    stepper: &CrankNicolson,
    w0: &GridFunction,
    tau_end: f64,
    stride: usize,
) -> Result<Trajectory> {
    check_len(op.dim(), w0.len())?;
    if !w0.is_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    if !(tau_end >= 0.0) {
        return Err(Error::Config(format!("final time must be nonnegative, got {tau_end}")));
    }
    let grid = op.grid();
    let dt = stepper.dt();
    let steps = (tau_end / dt).round() as usize;
    let stride = stride.max(1);
    let mut w = w0.values().to_vec();
    let mut times = vec![0.0];
    let mut states = vec![w0.clone()];
    let mut audit = StepAudit::default();
    let mut l2 = grid.weighted_l2(&w, |_| 1.0);
    let mut x = grid.weighted_l2(&w, |r| 1.0 / (r * r));
    for n in 1..=steps {
        let prev = w.clone();
        stepper.step(&mut w);
        let l2_new = grid.weighted_l2(&w, |_| 1.0);
        let x_new = grid.weighted_l2(&w, |r| 1.0 / (r * r));
        if l2 > 0.0 {
            audit.max_l2_growth = audit.max_l2_growth.max((l2_new - l2) / l2);
            audit.max_x_growth = audit.max_x_growth.max((x_new - x) / x);
            let mid: Vec<C64> = prev.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
            let form = op.form(&mid).re;
            let res = (l2_new * l2_new - l2 * l2 + 2.0 * dt * form).abs() / (l2 * l2);
            audit.max_energy_residual = audit.max_energy_residual.max(res);
        }
        l2 = l2_new;
        x = x_new;
        if n % stride == 0 || n == steps {
            times.push(n as f64 * dt);
            states.push(GridFunction::new(w.clone()));
        }
    }
    Ok(Trajectory {
        k: op.k(),
        beta: op.beta(),
        dt,
        stride,
        grid: grid.spec(),
        times,
        states,
        audit,
    })
}

/// Exponential fit `|w(tau)| ~ C e^{-rate tau}` on a time window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub rate: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    pub residual: f64,
}

pub fn fit_decay(times: &[f64], norms: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let (ts, ls): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(norms)
        .filter(|(t, n)| **t >= window.0 && **t <= window.1 && **n > 0.0 && n.is_finite())
        .map(|(t, n)| (*t, n.ln()))
        .unzip();
    let line = fit_line(&ts, &ls)?;
    Ok(DecayFit {
        times: times.to_vec(),
        norms: norms.to_vec(),
        rate: -line.slope,
        prefactor: line.intercept.exp(),
        window,
        residual: line.rms_residual,
    })
}

/// Decay fit of the L^2 norm of a trajectory over `[lo, end]`.
pub fn fit_trajectory(traj: &Trajectory, grid: &RadialGrid, lo: f64) -> Result<DecayFit> {
    let norms = traj.norms(grid, NormKind::L2)?;
    let end = *traj.times.last().unwrap_or(&0.0);
    fit_decay(&traj.times, &norms, (lo, end))
}

/// `|e^{-tau L}|` in the grid norm at the requested times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormCurve {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub iterations: Vec<usize>,
    pub dt: f64,
}

/// Operator norm of the backward-Euler propagator `(I + dt L)^{-n}` by power
/// iteration on `P^* P`. In the grid inner product the adjoint of `L` is its
/// entrywise conjugate, so `P^*` is the same recursion with `conj(L)`.
/// Backward Euler is used here rather than Crank-Nicolson because the latter
/// leaves stiff modes with amplification close to one, which would pin the
/// discrete operator norm near 1.
pub fn operator_norm_curve(
    op: &BandedComplexOperator,
    times: &[f64],
    dt: f64,
    max_iter: usize,
    seed: u64,
) -> Result<NormCurve> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let grid = op.grid();
    let m = op.identity_plus(dt);
    let fwd = m.factor()?;
    let adj = m.conj().factor()?;
    let mut v = crate::testfn::TestFunctionSampler::for_grid(grid, seed).next_sample(grid).into_values();
    let mut norms = Vec::with_capacity(times.len());
    let mut iterations = Vec::with_capacity(times.len());
    for &tau in times {
        let steps = (tau / dt).round() as usize;
        let mut est = 0.0;
        let mut used = 0;
        for it in 0..max_iter.max(1) {
            used = it + 1;
            let nv = grid.weighted_l2(&v, |_| 1.0);
            if nv == 0.0 || !nv.is_finite() {
                return Err(Error::NonFinite("power iteration".into()));
            }
            v.iter_mut().for_each(|x| *x /= nv);
            for _ in 0..steps {
                fwd.solve_in_place(&mut v);
            }
            let new = grid.weighted_l2(&v, |_| 1.0);
            for _ in 0..steps {
                adj.solve_in_place(&mut v);
            }
            let done = (new - est).abs() <= 1e-8 * new;
            est = new;
            if done {
                break;
            }
        }
        norms.push(est);
        iterations.push(used);
    }
    Ok(NormCurve { times: times.to_vec(), norms, iterations, dt })
}

/// Decay rate of `|e^{-tau L}|` fitted on `[1/psi, 5/psi]`, sampled every
/// `1/(2 psi)` with `dt = 0.01/psi`. Every length is measured in units of
/// `1/psi`, so the first-order bias of the stepper is the same for all `B`.
pub fn operator_norm_decay(op: &BandedComplexOperator, psi: f64, seed: u64) -> Result<(NormCurve, DecayFit)> {
    if !(psi > 0.0 && psi.is_finite()) {
        return Err(Error::Config(format!("psi must be positive, got {psi}")));
    }
    let times: Vec<f64> = (1..=10).map(|j| 0.5 * j as f64 / psi).collect();
    let curve = operator_norm_curve(op, &times, 0.01 / psi, 60, seed)?;
    let fit = fit_decay(&curve.times, &curve.norms, (1.0 / psi - 1e-12, 5.0 / psi + 1e-12))?;
    Ok((curve, fit))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GearhartPruessPoint {
    pub tau: f64,
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GearhartPruessReport {
    pub k: i32,
    pub beta: f64,
    pub psi: f64,
    pub tol: f64,
    pub samples: usize,
    pub points: Vec<GearhartPruessPoint>,
    pub all_pass: bool,
    /// Worst `max_ratio / bound` over the sampled times.
    pub worst_margin: f64,
    /// Rate fitted to the sample-maximum envelope on `[1/psi, tau_max]`.
    pub late_rate: f64,
    pub note: String,
}

/// Checks `|w(tau)| / |w0| <= e^{-tau psi + pi/2} (1 + tol)` for every
/// stored time of every trajectory.
pub fn gearhart_pruess_check(
    grid: &RadialGrid,
    psi: f64,
    trajectories: &[Trajectory],
    tol: f64,
) -> Result<GearhartPruessReport> {
    let first = trajectories.first().ok_or_else(|| Error::Config("no trajectories".into()))?;
    let times = &first.times;
    if trajectories.iter().any(|t| t.times.len() != times.len()) {
        return Err(Error::Config("trajectories must share their sample times".into()));
    }
    let ratios: Vec<Vec<f64>> = trajectories
        .par_iter()
        .map(|t| {
            let n = t.norms(grid, NormKind::L2)?;
            let n0 = n[0];
            Ok(n.iter().map(|v| if n0 > 0.0 { v / n0 } else { 0.0 }).collect())
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(times.len());
    let mut worst: f64 = 0.0;
    for (i, &tau) in times.iter().enumerate() {
        let max_ratio = ratios.iter().map(|r| r[i]).fold(0.0, f64::max);
        let bound = (-tau * psi + std::f64::consts::FRAC_PI_2).exp();
        let pass = max_ratio <= bound * (1.0 + tol);
        worst = worst.max(max_ratio / bound);
        points.push(GearhartPruessPoint { tau, max_ratio, bound, pass });
    }
    let envelope: Vec<f64> = points.iter().map(|p| p.max_ratio).collect();
    let end = *times.last().unwrap_or(&0.0);
    let late_rate = fit_decay(times, &envelope, (1.0 / psi, end)).map(|f| f.rate).unwrap_or(f64::NAN);
    Ok(GearhartPruessReport {
        k: first.k,
        beta: first.beta,
        psi,
        tol,
        samples: trajectories.len(),
        all_pass: points.iter().all(|p| p.pass),
        points,
        worst_margin: worst,
        late_rate,
        note: "operator norm estimated from below by the maximum over sampled initial states".into(),
    })
}

/// Space-time norms of `e^{c |k B|^{1/3} tau} w` on a stored trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpacetimeReport {
    pub k: i32,
    pub beta: f64,
    pub c_prime: f64,
    pub initial_norm: f64,
    pub linf_l2: f64,
    pub l2_l2: f64,
    pub l2_x: f64,
    pub l2_gradient: f64,
    /// `|| e (|k|/r + r) w ||_{L^2 L^2}`.
    pub l2_weighted: f64,
    /// `(linf_l2^2 + |kB|^{1/3} l2_l2^2 + l2_gradient^2 + l2_weighted^2) / |w0|^2`.
    pub combined_ratio: f64,
    /// `|kB|^{1/3} l2_l2^2 / |w0|^2`.
    pub scaled_l2_ratio: f64,
    pub flags: Vec<String>,
}

pub const FLAG_DIVERGENT: &str = "divergent-weight";

/// Trapezoidal accumulation in `tau`; `fitted_rate` (if known) guards
/// against weights that grow faster than the solution decays.
pub fn spacetime_norms(
    traj: &Trajectory,
    grid: &RadialGrid,
    c_prime: f64,
    fitted_rate: Option<f64>,
) -> Result<SpacetimeReport> {
    let k = traj.k;
    let kb = traj.beta.abs().cbrt();
    let ka = (k as f64).abs();
    let d1 = grid.first_derivative();
    let mut flags = Vec::new();
    if let Some(rate) = fitted_rate {
        if c_prime * kb >= rate {
            flags.push(FLAG_DIVERGENT.to_string());
        }
    }
    let per_time: Vec<(f64, f64, f64, f64, f64)> = traj
        .times
        .par_iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            let e = (c_prime * kb * t).exp();
            let v = s.values();
            let l2 = grid.weighted_l2(v, |_| 1.0);
            let x = grid.weighted_l2(v, |r| 1.0 / (r * r));
            let grad = grid.weighted_l2(&d1.apply(v), |_| 1.0);
            let wt = grid.weighted_l2(v, |r| (ka / r + r).powi(2));
            (t, e * l2, e * x, e * grad, e * wt)
        })
        .collect();
    let mut linf: f64 = 0.0;
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for (i, p) in per_time.iter().enumerate() {
        linf = linf.max(p.1);
        if i > 0 {
            let q = &per_time[i - 1];
            let h = 0.5 * (p.0 - q.0);
            a += h * (p.1 * p.1 + q.1 * q.1);
            b += h * (p.2 * p.2 + q.2 * q.2);
            c += h * (p.3 * p.3 + q.3 * q.3);
            d += h * (p.4 * p.4 + q.4 * q.4);
        }
    }
    let w0 = grid.weighted_l2(traj.initial().values(), |_| 1.0);
    let (l2_l2, l2_x, l2_gradient, l2_weighted) = (a.sqrt(), b.sqrt(), c.sqrt(), d.sqrt());
    let denom = if w0 > 0.0 { w0 * w0 } else { f64::NAN };
    let combined = linf * linf + kb * l2_l2 * l2_l2 + l2_gradient * l2_gradient + l2_weighted * l2_weighted;
    Ok(SpacetimeReport {
        k,
        beta: traj.beta,
        c_prime,
        initial_norm: w0,
        linf_l2: linf,
        l2_l2,
        l2_x,
        l2_gradient,
        l2_weighted,
        combined_ratio: if w0 > 0.0 { combined / denom } else { 0.0 },
        scaled_l2_ratio: if w0 > 0.0 { kb * l2_l2 * l2_l2 / denom } else { 0.0 },
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{assemble_lk, FlowParams};
    use crate::testfn::TestFunctionSampler;

    fn setup(n: usize, k: i32, b: f64) -> (RadialGrid, BandedComplexOperator) {
        let g = RadialGrid::uniform(n, 20.0).unwrap();
        let op = assemble_lk(&g, k, &FlowParams::reference(b)).unwrap();
        (g, op)
    }

    #[test]
    fn zero_state_stays_zero() {
        let (g, op) = setup(128, 1, 100.0);
        let t = propagate_linear(&op, &GridFunction::zeros(g.len()), 1.0, 0.01, 10).unwrap();
        assert!(t.states.iter().all(|s| s.is_zero()));
        let st = spacetime_norms(&t, &g, 0.1, None).unwrap();
        assert_eq!(st.linf_l2, 0.0);
        assert_eq!(st.l2_weighted, 0.0);
    }

    #[test]
    fn symmetric_case_decays_at_least_at_one_half() {
        let (g, op) = setup(256, 1, 0.0);
        let w0 = TestFunctionSampler::for_grid(&g, 4).next_sample(&g);
        let t = propagate_linear(&op, &w0, 4.0, 0.01, 20).unwrap();
        let n = t.norms(&g, NormKind::L2).unwrap();
        for (tau, v) in t.times.iter().zip(&n) {
            assert!(*v <= (-0.5 * tau).exp() * n[0] * (1.0 + 1e-9), "tau={tau}");
        }
    }

    #[test]
    fn norm_is_monotone_and_energy_identity_holds() {
        let (g, op) = setup(256, 2, 1e3);
        let w0 = TestFunctionSampler::for_grid(&g, 8).next_sample(&g);
        let t = propagate_linear(&op, &w0, 0.5, 1e-3, 50).unwrap();
        assert!(t.audit.max_l2_growth <= 1e-10, "{:?}", t.audit);
        assert!(t.audit.max_energy_residual <= 1e-10, "{:?}", t.audit);
    }

    #[test]
    fn crank_nicolson_is_second_order() {
        let (g, op) = setup(256, 1, 100.0);
        let w0 = TestFunctionSampler::for_grid(&g, 2).next_sample(&g);
        let end = |dt: f64| propagate_linear(&op, &w0, 0.4, dt, 1000000).unwrap().last().clone();
        let (a, b, c) = (end(0.02), end(0.01), end(0.005));
        let diff = |x: &GridFunction, y: &GridFunction| {
            let d: Vec<C64> = x.values().iter().zip(y.values()).map(|(p, q)| p - q).collect();
            g.weighted_l2(&d, |_| 1.0)
        };
        let order = (diff(&a, &b) / diff(&b, &c)).log2();
        assert!(order > 1.9 && order < 2.1, "{order}");
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let norms: Vec<f64> = times.iter().map(|t| 3.0 * (-2.5 * t).exp()).collect();
        let f = fit_decay(&times, &norms, (1.0, 5.0)).unwrap();
        assert!((f.rate - 2.5).abs() < 1e-12 && (f.prefactor - 3.0).abs() < 1e-10);
    }

    #[test]
    fn gearhart_pruess_is_trivial_at_time_zero() {
        let (g, op) = setup(128, 1, 100.0);
        let w0 = TestFunctionSampler::for_grid(&g, 1).next_sample(&g);
        let t = propagate_linear(&op, &w0, 0.0, 0.01, 1).unwrap();
        let r = gearhart_pruess_check(&g, 3.0, &[t], 0.0).unwrap();
        assert!(r.points[0].pass && r.points[0].bound > 4.8);
    }

    #[test]
    fn divergent_weight_is_flagged() {
        let (g, op) = setup(128, 1, 100.0);
        let w0 = TestFunctionSampler::for_grid(&g, 1).next_sample(&g);
        let t = propagate_linear(&op, &w0, 0.2, 0.01, 1).unwrap();
        let r = spacetime_norms(&t, &g, 10.0, Some(1.0)).unwrap();
        assert!(r.flags.iter().any(|f| f == FLAG_DIVERGENT));
    }

    #[test]
    fn operator_norm_of_symmetric_case_is_spectral() {
        // B = 0: |e^{-tau L}| = e^{-tau lambda_min} up to the stepper bias
        let (g, op) = setup(256, 1, 0.0);
        let curve = operator_norm_curve(&op, &[1.0, 2.0], 1e-3, 200, 1).unwrap();
        let rate = (curve.norms[0] / curve.norms[1]).ln();
        let lam = crate::resolvent::resolvent_norm_at(&op, 0.0, crate::resolvent::NormPair::L2).unwrap().sigma;
        assert!((rate - lam).abs() < 5e-3 * lam, "{rate} vs {lam}");
        assert!(curve.norms[0] < 1.0);
        let _ = g;
    }

    #[test]
    fn rejects_bad_step() {
        let (_, op) = setup(64, 1, 1.0);
        assert!(CrankNicolson::new(&op, 0.0).is_err());
    }
}
