//! Brute-force and closed-form checks that share no discretization with the
//! operator, resolvent and stream code: integrals use composite
//! Gauss-Legendre on closed-form integrands and derivatives come from the
//! profiles' exact formulas or from nested compact differences.

use serde::{Deserialize, Serialize};

use crate::banded::C64;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, RadialGrid};
use crate::stream::solve_stream;
use crate::testfn::{SmoothProfile, TestFunctionSampler};
use std::sync::Arc;

// 8-point Gauss-Legendre on [-1, 1]
const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Quadrature points and weights of composite Gauss-Legendre on `[a, b]`.
pub fn gauss_points(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * 8);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL_X.iter().zip(&GL_W) {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

// ---------------------------------------------------------------- Green

/// Decaying solution of `phi'' - (k^2 - 1/4) phi / r^2 = g` at each of
/// `points` (ascending), from
/// `phi(r) = -(1/2|k|) int r_<^{1/2+|k|} r_>^{1/2-|k|} g(s) ds` on `[0, r_end]`.
/// Each gap between consecutive points gets `panels` Gauss-Legendre panels.
pub fn green_phi(k: i32, g: impl Fn(f64) -> f64, points: &[f64], r_end: f64, panels: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::ZeroMode);
    }
    if points.windows(2).any(|p| p[1] <= p[0]) || points.first().is_some_and(|&r| r <= 0.0) {
        return Err(Error::Config("Green oracle points must be positive and ascending".into()));
    }
    let m = k.unsigned_abs() as f64;
    let mut edges = vec![0.0];
    edges.extend_from_slice(points);
    edges.push(r_end.max(*points.last().unwrap_or(&0.0)));
    let seg = |a: f64, b: f64, e: f64| -> f64 {
        gauss_points(a, b, panels.max(1)).into_iter().map(|(s, w)| w * s.powf(e) * g(s)).sum()
    };
    let n = points.len();
    let mut inner = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc += seg(edges[i], edges[i + 1], 0.5 + m);
        inner[i] = acc;
    }
    let mut outer = vec![0.0; n];
    acc = 0.0;
    for i in (0..n).rev() {
        acc += seg(edges[i + 1], edges[i + 2], 0.5 - m);
        outer[i] = acc;
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &r)| -(r.powf(0.5 - m) * inner[i] + r.powf(0.5 + m) * outer[i]) / (2.0 * m))
        .collect())
}

/// Relative `L^2` distance between the banded stream solve and [`green_phi`]
/// for the source `g(s) = s^{1/2+|k|} (1 + s^2) e^{-s^2/3}`.
pub fn stream_oracle_error(grid: Arc<RadialGrid>, k: i32) -> Result<f64> {
    let m = k.unsigned_abs() as f64;
    let g = move |s: f64| s.powf(0.5 + m) * (1.0 + s * s) * (-s * s / 3.0).exp();
    let w = grid.sample_real(|r| (0.125 * r * r).exp() * g(r));
    let pair = solve_stream(&w, k, grid.clone())?;
    let exact = green_phi(k, g, grid.nodes(), grid.r_max(), 2)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((p, e), &h) in pair.phi.values().iter().zip(&exact).zip(grid.weights()) {
        num += h * (p - e).norm_sqr();
        den += h * e * e;
    }
    Ok((num / den).sqrt())
}

// ---------------------------------------------------------------- Riccati

/// Real solution of `g''/g + (A/r) g'/g = B/r^2` on a positive interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub a_coeff: f64,
    pub b_coeff: f64,
    /// `A^2/4 - A/2 + B`, the constant of the reduced equation for `K`.
    pub c_coeff: f64,
    pub r_start: f64,
    pub r_end: f64,
    /// Where `K` reached zero (`g` vanished), if it did before `r_end`.
    pub crossing: Option<f64>,
    pub nodes: Vec<f64>,
    /// Normalized so that `g(r_start) = 1`.
    pub g: GridFunction,
    pub residual: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiOptions {
    /// Target for `|g''/g + (A/r) g'/g - B/r^2|`; the step controller keeps
    /// the defect of the interpolant below it.
    pub residual_tol: f64,
    pub max_step: f64,
    /// Fixed step in `log r`, bypassing the controller.
    pub fixed_step: Option<f64>,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self { residual_tol: 1e-8, max_step: 0.02, fixed_step: None }
    }
}

/// Step record: `t = ln r`, `P = 1/K` and its first two `t`-derivatives.
#[derive(Debug, Clone, Copy)]
struct Knot {
    t: f64,
    p: f64,
    dp: f64,
    ddp: f64,
}

struct Riccati {
    a: f64,
    c: f64,
}

impl Riccati {
    // with t = ln r and P = 1/K the reduced equation K' = (-C K^2 - K + 1)/r
    // becomes autonomous: dP/dt = -P^2 + P + C
    fn f(&self, p: f64) -> f64 {
        -p * p + p + self.c
    }

    fn knot(&self, t: f64, p: f64) -> Knot {
        let dp = self.f(p);
        Knot { t, p, dp, ddp: (1.0 - 2.0 * p) * dp }
    }

    fn rk4(&self, p: f64, h: f64) -> f64 {
        let k1 = self.f(p);
        let k2 = self.f(p + 0.5 * h * k1);
        let k3 = self.f(p + 0.5 * h * k2);
        let k4 = self.f(p + h * k3);
        p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    /// `|g''/g + (A/r) g'/g - B/r^2|` of the interpolated solution at `t`.
    fn residual(&self, k0: &Knot, k1: &Knot, t: f64) -> f64 {
        let (p, dp) = hermite5(k0, k1, t);
        (dp - self.f(p)).abs() * (-2.0 * t).exp()
    }

    /// Remaining `t` before `P` reaches `-inf`, from the closed-form
    /// integral of `dP / (P^2 - P - C)` (valid for `P` below both roots).
    fn time_to_pole(&self, p: f64) -> f64 {
        let m2 = -self.c - 0.25;
        if m2 > 0.0 {
            let m = m2.sqrt();
            (((p - 0.5) / m).atan() + std::f64::consts::FRAC_PI_2) / m
        } else {
            let s = (-m2).sqrt();
            // roots 1/2 +- s; partial fractions
            ((p - 0.5 - s) / (p - 0.5 + s)).ln() / (2.0 * s)
        }
    }

    /// `int (P - A/2) dt` over one step, exact for the quintic interpolant.
    fn log_increment(&self, k0: &Knot, k1: &Knot) -> f64 {
        let h = k1.t - k0.t;
        0.5 * h * (k0.p + k1.p) + h * h / 10.0 * (k0.dp - k1.dp) + h * h * h / 120.0 * (k0.ddp + k1.ddp)
            - 0.5 * self.a * h
    }
}

/// Quintic Hermite value and `t`-derivative between two knots.
fn hermite5(k0: &Knot, k1: &Knot, t: f64) -> (f64, f64) {
    let h = k1.t - k0.t;
    let s = (t - k0.t) / h;
    let (s2, s3, s4, s5) = (s * s, s * s * s, s.powi(4), s.powi(5));
    let b = [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5),
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        0.5 * (s3 - 2.0 * s4 + s5),
    ];
    let db = [
        -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
        1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
        0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4),
        30.0 * s2 - 60.0 * s3 + 30.0 * s4,
        -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
        0.5 * (3.0 * s2 - 8.0 * s3 + 5.0 * s4),
    ];
    let c = [k0.p, h * k0.dp, h * h * k0.ddp, k1.p, h * k1.dp, h * h * k1.ddp];
    let v = c.iter().zip(&b).map(|(x, y)| x * y).sum();
    let d = c.iter().zip(&db).map(|(x, y)| x * y).sum::<f64>() / h;
    (v, d)
}

/// Integration stops once `|K| < 1/CROSSING_P`; the remaining distance to
/// the zero of `g` is then closed-form.
const CROSSING_P: f64 = 10.0;

/// Integrates from `r_start` towards `r_end`, stopping early if `g` vanishes.
/// `K(r_start)` is the stable equilibrium of the reduced flow when one
/// exists (then `g` is the power law `r^{1/K - A/2}`), otherwise `K = 1`.
pub fn riccati_g_maximal(
    a: f64,
    b: f64,
    grid: &RadialGrid,
    r_start: f64,
    r_end: f64,
    opts: RiccatiOptions,
) -> Result<RiccatiSolution> {
    if !(r_start > 0.0 && r_end > r_start) {
        return Err(Error::Config(format!("bad Riccati interval [{r_start}, {r_end}]")));
    }
    let c = 0.25 * a * a - 0.5 * a + b;
    let ode = Riccati { a, c };
    let disc = 1.0 + 4.0 * c;
    let p0 = if disc >= 0.0 { 0.5 * (1.0 + disc.sqrt()) } else { 1.0 };
    let (t0, t1) = (r_start.ln(), r_end.ln());
    let mut knots = vec![ode.knot(t0, p0)];
    let mut crossing = None;
    let mut h = opts.fixed_step.unwrap_or(1e-3).min(opts.max_step);
    while knots.last().unwrap().t < t1 {
        let k0 = *knots.last().unwrap();
        let step = h.min(t1 - k0.t);
        let k1 = ode.knot(k0.t + step, ode.rk4(k0.p, step));
        if !k1.p.is_finite() || k1.p < -1e3 * CROSSING_P {
            if opts.fixed_step.is_none() && step > 1e-9 {
                h = 0.5 * step;
                continue;
            }
            crossing = Some((k0.t + ode.time_to_pole(k0.p)).exp());
            break;
        }
        if opts.fixed_step.is_none() {
            let worst = [0.25, 0.5, 0.75]
                .iter()
                .map(|s| ode.residual(&k0, &k1, k0.t + s * step))
                .fold(0.0, f64::max);
            let target = opts.residual_tol * 0.5;
            if worst > target && step > 1e-6 {
                h = 0.5 * step;
                continue;
            }
            if worst < target / 32.0 {
                h = (1.5 * step).min(opts.max_step);
            }
        }
        knots.push(k1);
        if k1.p < -CROSSING_P {
            crossing = Some((k1.t + ode.time_to_pole(k1.p)).exp());
            break;
        }
    }
    let last_t = knots.last().unwrap().t;
    let mut logs = vec![0.0; knots.len()];
    for i in 1..knots.len() {
        logs[i] = logs[i - 1] + ode.log_increment(&knots[i - 1], &knots[i]);
    }
    let mut nodes = Vec::new();
    let mut g = Vec::new();
    let mut residual: f64 = 0.0;
    let mut seg = 0;
    for &r in grid.nodes() {
        let t = r.ln();
        if t < t0 || t > last_t {
            continue;
        }
        while seg + 1 < knots.len() - 1 && knots[seg + 1].t < t {
            seg += 1;
        }
        if knots.len() < 2 {
            break;
        }
        let (k0, k1) = (&knots[seg], &knots[seg + 1]);
        // log g at t: integrate the interpolant from the knot with Simpson,
        // whose error sits far below the interpolant's own
        let (p_a, _) = hermite5(k0, k1, k0.t);
        let (p_m, _) = hermite5(k0, k1, 0.5 * (k0.t + t));
        let (p_b, _) = hermite5(k0, k1, t);
        let dt = t - k0.t;
        let lg = logs[seg] + dt / 6.0 * (p_a + 4.0 * p_m + p_b) - 0.5 * a * dt;
        nodes.push(r);
        g.push(C64::new(lg.exp(), 0.0));
        residual = residual.max(ode.residual(k0, k1, t));
    }
    for w in knots.windows(2) {
        residual = residual.max(ode.residual(&w[0], &w[1], 0.5 * (w[0].t + w[1].t)));
    }
    Ok(RiccatiSolution {
        a_coeff: a,
        b_coeff: b,
        c_coeff: c,
        r_start,
        r_end: last_t.exp(),
        crossing,
        nodes,
        g: GridFunction::new(g),
        residual,
        steps: knots.len() - 1,
    })
}

/// Like [`riccati_g_maximal`] but fails if `g` vanishes inside the range.
pub fn riccati_g(a: f64, b: f64, grid: &RadialGrid, range: (f64, f64)) -> Result<RiccatiSolution> {
    let sol = riccati_g_maximal(a, b, grid, range.0, range.1, RiccatiOptions::default())?;
    if let Some(location) = sol.crossing {
        return Err(Error::RiccatiCrossing { location });
    }
    Ok(sol)
}

// ------------------------------------------------------- interpolation

/// Value and first derivative of a test function.
pub type Profile<'a> = &'a (dyn Fn(f64) -> (C64, C64) + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSample {
    /// `|w|_inf^2`.
    pub sup_sq: f64,
    /// `|w|_2 |w'|_2`.
    pub product: f64,
    /// `|w|_inf^2 / (2 |w| |w'|)`; the inequality says this is at most 1.
    pub a2_ratio: f64,
    /// Empirical constants of the weighted bound for `alpha = 1, 3/2, 2`.
    pub a3_constants: [f64; 3],
}

pub const A3_ALPHAS: [f64; 3] = [1.0, 1.5, 2.0];

/// Evaluates both interpolation inequalities for one function on `[0, r_max]`.
/// The weighted bound is skipped (constants set to 0) when `w` does not
/// vanish to round-off near the origin.
pub fn interpolation_sample(w: Profile<'_>, r_max: f64, panels: usize) -> InterpolationSample {
    let pts = gauss_points(0.0, r_max, panels);
    let peak = pts.iter().map(|&(r, _)| w(r).0.norm_sqr()).fold(0.0, f64::max);
    // below this the function is treated as identically zero, which removes
    // round-off-size Gaussian tails near the origin from the weighted norms
    let floor = 1e-32 * peak;
    let mut l2 = 0.0;
    let mut d2 = 0.0;
    let mut wl = [0.0; 3];
    let mut dl = [0.0; 3];
    let mut best = (0.0, 0.0);
    let mut origin_ok = true;
    for &(r, q) in &pts {
        let (v, d) = w(r);
        let (a, b) = (v.norm_sqr(), d.norm_sqr());
        l2 += q * a;
        d2 += q * b;
        if a > best.1 {
            best = (r, a);
        }
        if a > floor {
            for (j, &al) in A3_ALPHAS.iter().enumerate() {
                wl[j] += q * a * r.powf(-2.0 * al - 1.0);
                dl[j] += q * b * r.powf(-2.0 * al + 1.0);
            }
            if r < 1e-2 {
                origin_ok = false;
            }
        }
    }
    let dx = r_max / panels as f64;
    let bracket = |c: f64| ((c - dx).max(0.0), (c + dx).min(r_max));
    let (lo, hi) = bracket(best.0);
    let sup_sq = golden_max(|r| w(r).0.norm_sqr(), lo, hi).max(best.1);
    let product = (l2 * d2).sqrt();
    let a2_ratio = if product > 0.0 { sup_sq / (2.0 * product) } else { 0.0 };
    let mut a3 = [0.0; 3];
    if origin_ok && product > 0.0 {
        for (j, &al) in A3_ALPHAS.iter().enumerate() {
            let weighted = |r: f64| {
                let a = w(r).0.norm_sqr();
                if a > floor {
                    a * r.powf(-2.0 * al)
                } else {
                    0.0
                }
            };
            let (r0, _) = pts
                .iter()
                .map(|&(r, _)| (r, weighted(r)))
                .fold((0.0, 0.0), |m, x| if x.1 > m.1 { x } else { m });
            let (lo, hi) = bracket(r0);
            let lhs = golden_max(weighted, lo.max(1e-12), hi);
            let rhs = (dl[j] * wl[j]).sqrt() + wl[j];
            a3[j] = if rhs > 0.0 { lhs / rhs } else { 0.0 };
        }
    }
    InterpolationSample { sup_sq, product, a2_ratio, a3_constants: a3 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub samples: usize,
    pub max_a2_ratio: f64,
    pub a2_holds: bool,
    pub slack: f64,
    pub alphas: [f64; 3],
    pub max_a3_constants: [f64; 3],
}

/// Random smooth Dirichlet samples drawn on `grid`'s domain.
pub fn interpolation_checks(grid: &RadialGrid, samples: usize, seed: u64) -> InterpolationReport {
    use rayon::prelude::*;
    let mut sampler = TestFunctionSampler::for_grid(grid, seed);
    let profiles: Vec<SmoothProfile> = (0..samples).map(|_| sampler.next_profile()).collect();
    let r_max = grid.r_max();
    let panels = (4.0 * r_max / grid.max_spacing()).ceil() as usize;
    let results: Vec<InterpolationSample> = profiles
        .par_iter()
        .map(|p| {
            let f = |r: f64| {
                let (v, d, _) = p.eval(r);
                (v, d)
            };
            interpolation_sample(&f, r_max, panels)
        })
        .collect();
    let slack = 1e-10;
    let max_a2_ratio = results.iter().map(|s| s.a2_ratio).fold(0.0, f64::max);
    let mut max_a3 = [0.0f64; 3];
    for s in &results {
        for j in 0..3 {
            max_a3[j] = max_a3[j].max(s.a3_constants[j]);
        }
    }
    InterpolationReport {
        samples,
        max_a2_ratio,
        a2_holds: max_a2_ratio <= 1.0 + slack,
        slack,
        alphas: A3_ALPHAS,
        max_a3_constants: max_a3,
    }
}

// ------------------------------------------------------- factorizations

/// `h = r^{3/2} e^{-r^2/8}`.
pub fn similarity_weight(r: f64) -> f64 {
    r.powf(1.5) * (-0.125 * r * r).exp()
}

/// `-(w'' - V_k w)` with `V_k = (k^2 - 1/4)/r^2 + r^2/16 - 1/2`, from exact
/// derivatives.
fn exact_lhs(profile: &SmoothProfile, k: i32, r: f64) -> C64 {
    let (v, _, d2) = profile.eval(r);
    let k2 = (k as f64).powi(2);
    -d2 + v * ((k2 - 0.25) / (r * r) + r * r / 16.0 - 0.5)
}

/// Max pointwise residual, relative to `max |lhs|`, of
/// `-(w'' - V_1 w) = -h^{-1} (h^2 (h^{-1} w)')' + w/2` with the right side
/// evaluated by nested centred differences of spacing `delta` at `points`.
pub fn factorization_residual_k1(profile: &SmoothProfile, points: &[f64], delta: f64) -> f64 {
    let u = |x: f64| profile.value(x) / similarity_weight(x);
    let flux = |x: f64| {
        let hx = similarity_weight(x);
        (u(x + 0.5 * delta) - u(x - 0.5 * delta)) * (hx * hx / delta)
    };
    relative_max(points, |r| {
        let rhs = -(flux(r + 0.5 * delta) - flux(r - 0.5 * delta)) / (delta * similarity_weight(r)) + profile.value(r) * 0.5;
        (exact_lhs(profile, 1, r), rhs)
    })
}

/// Same for the identity valid for every `k`:
/// `-(w'' - V_k w) = -r^2 h^{-1} (r^{-2} h^2 (h^{-1} w)')' - (2/r) w' + (k^2 + 2) w / r^2`.
pub fn factorization_residual_general(profile: &SmoothProfile, k: i32, points: &[f64], delta: f64) -> f64 {
    let u = |x: f64| profile.value(x) / similarity_weight(x);
    let flux = |x: f64| {
        let hx = similarity_weight(x);
        (u(x + 0.5 * delta) - u(x - 0.5 * delta)) * (hx * hx / (x * x * delta))
    };
    let k2 = (k as f64).powi(2);
    relative_max(points, |r| {
        let (v, d1, _) = profile.eval(r);
        let rhs = -(flux(r + 0.5 * delta) - flux(r - 0.5 * delta)) * (r * r / (delta * similarity_weight(r)))
            - d1 * (2.0 / r)
            + v * ((k2 + 2.0) / (r * r));
        (exact_lhs(profile, k, r), rhs)
    })
}

fn relative_max(points: &[f64], pair: impl Fn(f64) -> (C64, C64)) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &r in points {
        let (l, rr) = pair(r);
        worst = worst.max((l - rr).norm());
        scale = scale.max(l.norm());
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// `-(h'' - V_1 h) - h/2`, relative to `max |h|`, from closed-form
/// derivatives of `h`; zero up to round-off.
pub fn weight_annihilation_residual(points: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &r in points {
        let e = (-0.125 * r * r).exp();
        let h = r.powf(1.5) * e;
        // h = r^{3/2} e^{-r^2/8}
        let d2 = (0.75 * r.powf(-0.5) - 1.0 * r.powf(1.5) + r.powf(3.5) / 16.0) * e;
        let lhs = -d2 + h * (0.75 / (r * r) + r * r / 16.0 - 0.5);
        worst = worst.max((lhs - 0.5 * h).abs());
        scale = scale.max(h.abs());
    }
    worst / scale
}

/// Quadratic identities by Gauss-Legendre quadrature with exact derivatives:
/// `Re<F, w> = |h (h^{-1} w)'|^2 + |w|^2 / 2` for `|k| = 1` and
/// `Re<F, w/r^2> = |r^{-1} h (h^{-1} w)'|^2 + (k^2 - 1) |w/r^2|^2`,
/// where `F = -(w'' - V_k w)`. Returns the two residuals relative to the
/// larger side.
pub fn quadratic_identity_residuals(profile: &SmoothProfile, k: i32, panels: usize) -> (f64, f64) {
    let (a, b) = profile.bumps.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), bump| {
        let (s, e) = bump.support();
        (lo.min(s), hi.max(e))
    });
    let a = a.max(1e-9);
    let k2 = (k as f64).powi(2);
    let mut plain = [0.0; 3];
    let mut weighted = [0.0; 3];
    for (r, q) in gauss_points(a, b, panels) {
        let (v, d1, _) = profile.eval(r);
        let f = exact_lhs(profile, k, r);
        // h (h^{-1} w)' = w' - (3/(2r) - r/4) w
        let grad = d1 - v * (1.5 / r - 0.25 * r);
        plain[0] += q * (f * v.conj()).re;
        plain[1] += q * grad.norm_sqr();
        plain[2] += q * v.norm_sqr();
        weighted[0] += q * (f * v.conj()).re / (r * r);
        weighted[1] += q * grad.norm_sqr() / (r * r);
        weighted[2] += q * v.norm_sqr() / r.powi(4);
    }
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-300);
    let first = if k.abs() == 1 { rel(plain[0], plain[1] + 0.5 * plain[2]) } else { 0.0 };
    let second = rel(weighted[0], weighted[1] + (k2 - 1.0) * weighted[2]);
    (first, second)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub samples: usize,
    pub pointwise_k1: Vec<f64>,
    pub pointwise_general: Vec<f64>,
    pub spacings: Vec<f64>,
    pub observed_order_k1: f64,
    pub observed_order_general: f64,
    pub weight_annihilation: f64,
    pub quadratic_k1: f64,
    pub quadratic_weighted: f64,
}

/// Pointwise identities at spacings `h, h/2, h/4` (worst sample each) plus
/// the quadratic identities, on compact bumps inside `(0.5, r_max/2)`.
pub fn factorization_identities(grid: &RadialGrid, samples: usize, seed: u64) -> Result<FactorizationReport> {
    let mut sampler = TestFunctionSampler::new(seed, 1.0, 0.4 * grid.r_max(), 0.2);
    let h = grid.max_spacing();
    let spacings = vec![h, 0.5 * h, 0.25 * h];
    let mut pk1 = vec![0.0f64; 3];
    let mut pgen = vec![0.0f64; 3];
    let mut quad_k1: f64 = 0.0;
    let mut quad_w: f64 = 0.0;
    let points: Vec<f64> = grid.nodes().iter().cloned().filter(|&r| r > 0.5 && r < 0.5 * grid.r_max()).collect();
    if points.is_empty() {
        return Err(Error::InsufficientResolution("no nodes inside (0.5, r_max/2)".into()));
    }
    for s in 0..samples {
        let p = sampler.next_profile();
        let k = 1 + (s % 4) as i32;
        for (j, &d) in spacings.iter().enumerate() {
            pk1[j] = pk1[j].max(factorization_residual_k1(&p, &points, d));
            pgen[j] = pgen[j].max(factorization_residual_general(&p, k, &points, d));
        }
        let (a, b) = quadratic_identity_residuals(&p, 1, 2000);
        let (_, c) = quadratic_identity_residuals(&p, k, 2000);
        quad_k1 = quad_k1.max(a).max(b);
        quad_w = quad_w.max(c);
    }
    let order = |e: &[f64]| (e[1] / e[2]).log2();
    Ok(FactorizationReport {
        samples,
        observed_order_k1: order(&pk1),
        observed_order_general: order(&pgen),
        pointwise_k1: pk1,
        pointwise_general: pgen,
        spacings,
        weight_annihilation: weight_annihilation_residual(&points),
        quadratic_k1: quad_k1,
        quadratic_weighted: quad_w,
    })
}
