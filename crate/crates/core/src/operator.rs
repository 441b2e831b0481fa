//! The mode-wise linearized operator
//!
//! `L_k w = -w'' + ((k^2 - 1/4)/r^2 + r^2/16 - 1/2) w + i (k B / r^2) w`
//!
//! on the cell-centred grid, and the quadratic-form audits of its real part.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{BandMatrix, C64};
use crate::error::{check_len, Error, Result};
use crate::grid::{GridFunction, NormKind, RadialGrid};
use crate::testfn::{SmoothProfile, TestFunctionSampler};

/// Physical parameters of the base flow `v = A1 r + A2 / r` and viscosity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub a1: f64,
    pub a2: f64,
    pub nu: f64,
    /// `A2 / nu`.
    pub b: f64,
}

impl FlowParams {
    /// Validated constructor for the regime `nu > 0`, `|A2| >= nu`.
    pub fn new(a1: f64, a2: f64, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Config(format!("viscosity must be positive, got {nu}")));
        }
        if !(a1.is_finite() && a2.is_finite()) {
            return Err(Error::Config("flow coefficients must be finite".into()));
        }
        let b = a2 / nu;
        if b.abs() < 1.0 {
            return Err(Error::Config(format!("|A2/nu| must be at least 1, got {b}")));
        }
        Ok(Self { a1, a2, nu, b })
    }

    /// `A1 = 0`, `nu = 1`, `A2 = B`.
    pub fn from_ratio(b: f64) -> Result<Self> {
        Self::new(0.0, b, 1.0)
    }

    /// Skips the `|B| >= 1` check. Only for reference computations such as the
    /// self-adjoint `B = 0` case.
    pub fn reference(b: f64) -> Self {
        Self { a1: 0.0, a2: b, nu: 1.0, b }
    }

    /// `beta_k = k B`.
    pub fn beta(&self, k: i32) -> f64 {
        k as f64 * self.b
    }
}

/// `(k^2 - 1/4)/r^2 + r^2/16 - 1/2`.
pub fn potential(k: i32, r: f64) -> f64 {
    let k2 = (k as f64) * (k as f64);
    (k2 - 0.25) / (r * r) + r * r / 16.0 - 0.5
}

/// Band-matrix realization of `L_k - shift_real - i shift_imag`.
///
/// The matrix acts on nodal values; `W L` is complex symmetric with real part
/// `K + W V`, so the `i k B / r^2` term never contributes to `Re <L w, w>`.
#[derive(Debug, Clone)]
pub struct BandedComplexOperator {
    grid: Arc<RadialGrid>,
    k: i32,
    beta: f64,
    shift_real: f64,
    shift_imag: f64,
    matrix: BandMatrix,
}

impl BandedComplexOperator {
    fn build(grid: Arc<RadialGrid>, k: i32, beta: f64) -> Self {
        let mut matrix = grid.neg_laplacian();
        let diag: Vec<C64> =
            grid.nodes().iter().map(|&r| C64::new(potential(k, r), beta / (r * r))).collect();
        matrix.add_diagonal(&diag);
        Self { grid, k, beta, shift_real: 0.0, shift_imag: 0.0, matrix }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<RadialGrid> {
        Arc::clone(&self.grid)
    }

    pub fn k(&self) -> i32 {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn shift_real(&self) -> f64 {
        self.shift_real
    }

    pub fn shift_imag(&self) -> f64 {
        self.shift_imag
    }

    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `self - i s`.
    pub fn resolvent_matrix(&self, s: f64) -> BandedComplexOperator {
        let mut out = self.clone();
        if s != 0.0 {
            out.matrix.add_identity(C64::new(0.0, -s));
            out.shift_imag += s;
        }
        out
    }

    /// `self - c`.
    pub fn with_real_shift(&self, c: f64) -> BandedComplexOperator {
        let mut out = self.clone();
        if c != 0.0 {
            out.matrix.add_identity(C64::new(-c, 0.0));
            out.shift_real += c;
        }
        out
    }

    pub fn apply(&self, w: &[C64]) -> Vec<C64> {
        self.matrix.apply(w)
    }

    pub fn apply_fn(&self, w: &GridFunction) -> Result<GridFunction> {
        check_len(self.dim(), w.len())?;
        Ok(GridFunction::new(self.apply(w.values())))
    }

    /// `<L w, w>` in the grid inner product.
    pub fn form(&self, w: &[C64]) -> C64 {
        self.grid.inner(&self.apply(w), w)
    }

    /// `I + a L` as a band matrix (used by the time steppers).
    pub fn identity_plus(&self, a: f64) -> BandMatrix {
        let mut m = self.matrix.clone();
        m.scale(C64::new(a, 0.0));
        m.add_identity(C64::new(1.0, 0.0));
        m
    }
}

/// Assembles `L_k` for `|k| >= 1`.
pub fn assemble_lk(grid: &RadialGrid, k: i32, params: &FlowParams) -> Result<BandedComplexOperator> {
    assemble_lk_shared(Arc::new(grid.clone()), k, params)
}

pub fn assemble_lk_shared(
    grid: Arc<RadialGrid>,
    k: i32,
    params: &FlowParams,
) -> Result<BandedComplexOperator> {
    if k == 0 {
        return Err(Error::ZeroMode);
    }
    if !params.b.is_finite() {
        return Err(Error::Config("B must be finite".into()));
    }
    Ok(BandedComplexOperator::build(grid, k, params.beta(k)))
}

/// The `k = 0` operator `-w'' - (1/(4 r^2) - r^2/16 + 1/2) w`; no rotation term.
/// The singular part is discretized in divergence form around `r^{1/2}`, which
/// keeps the discrete kernel close to `r^{1/2} e^{-r^2/8}`.
pub fn assemble_zero_mode(grid: Arc<RadialGrid>) -> BandedComplexOperator {
    let mut matrix = grid.radial_stiffness();
    let inv: Vec<f64> = grid.weights().iter().map(|w| 1.0 / w).collect();
    matrix.scale_rows(&inv);
    let diag: Vec<C64> = grid.nodes().iter().map(|&r| C64::new(r * r / 16.0 - 0.5, 0.0)).collect();
    matrix.add_diagonal(&diag);
    BandedComplexOperator { grid, k: 0, beta: 0.0, shift_real: 0.0, shift_imag: 0.0, matrix }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub k: i32,
    pub beta: f64,
    pub samples: usize,
    pub skipped: usize,
    /// `min Re<L w, w> / (|w'|^2 + <(k^2/r^2 + r^2) w, w>)` over samples.
    pub min_coercivity_ratio: f64,
    /// `min Re<L w, w> / |w|^2`.
    pub min_real_part_ratio: f64,
    pub accretive: bool,
    /// Largest relative residual of the `Re<L w, w/r^2>` identity using the
    /// assembled matrix.
    pub max_identity_residual: f64,
    /// Same identity with closed-form derivatives under the quadrature.
    pub max_identity_residual_exact: f64,
    /// `max |k| |w| / |F|`.
    pub max_l2_ratio: f64,
    /// `max |k|^{1/2} |w|_{H^1} / |F|`.
    pub max_h1_ratio: f64,
    /// `max |w|_{H^1} / |F|_{H^{-1}}`.
    pub max_h1_hm1_ratio: f64,
    /// `max |k|^{1/2} |w| / |F|_{H^{-1}}`.
    pub max_l2_hm1_ratio: f64,
}

struct SampleAudit {
    coercivity: f64,
    real_ratio: f64,
    identity: f64,
    identity_exact: f64,
    l2: f64,
    h1: f64,
    h1_hm1: f64,
    l2_hm1: f64,
}

/// `|k|^2 - 1` coefficient and the `h = r^{3/2} e^{-r^2/8}` gradient term of
/// `Re <L_k w, w/r^2> = |r^{-1} h (h^{-1} w)'|^2 + (k^2 - 1) |w/r^2|^2`,
/// evaluated from nodal values and a derivative.
fn weighted_identity_rhs(grid: &RadialGrid, k: i32, w: &[C64], dw: &[C64]) -> (f64, f64) {
    let k2 = (k as f64) * (k as f64);
    let mut grad = 0.0;
    let mut pot = 0.0;
    for (((&r, &q), v), d) in grid.nodes().iter().zip(grid.weights()).zip(w).zip(dw) {
        // h (h^{-1} w)' = w' - (3/(2r) - r/4) w
        let g = (d - v * (1.5 / r - 0.25 * r)) / r;
        grad += q * g.norm_sqr();
        pot += q * v.norm_sqr() / r.powi(4);
    }
    (grad + (k2 - 1.0) * pot, grad + (k2 + 1.0) * pot)
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
];

/// Relative residual of the weighted identity with closed-form derivatives
/// of `profile`, integrated by 4-point Gauss-Legendre on every grid cell.
pub fn exact_identity_residual(grid: &RadialGrid, k: i32, profile: &SmoothProfile) -> f64 {
    let k2 = (k as f64) * (k as f64);
    let (mut diff, mut scale) = (0.0, 0.0);
    for cell in grid.faces().windows(2) {
        let (a, b) = (cell[0], cell[1]);
        let half = 0.5 * (b - a);
        for &(x, q) in &GAUSS4 {
            let r = a + half * (x + 1.0);
            let (v, d1, d2) = profile.eval(r);
            let lhs = ((-d2 + v * potential(k, r)) * v.conj()).re / (r * r);
            let g = (d1 - v * (1.5 / r - 0.25 * r)) / r;
            let p = v.norm_sqr() / r.powi(4);
            diff += q * half * (lhs - g.norm_sqr() - (k2 - 1.0) * p);
            scale += q * half * (g.norm_sqr() + (k2 + 1.0) * p);
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        diff.abs() / scale
    }
}

fn audit_one(
    op: &BandedComplexOperator,
    profile: &SmoothProfile,
    lambda: f64,
) -> Option<SampleAudit> {
    let grid = op.grid();
    let w = profile.sample(grid);
    let norm = grid.norm(&w, NormKind::L2).ok()?;
    if norm == 0.0 {
        return None;
    }
    let k = op.k();
    let k2 = (k as f64) * (k as f64);
    let lw = op.apply(w.values());
    let re_form = grid.inner(&lw, w.values()).re;
    let dw = grid.first_derivative().apply(w.values());
    let grad2 = grid.weighted_l2(&dw, |_| 1.0).powi(2);
    let weight = grid.inner_weighted(w.values(), w.values(), |r| k2 / (r * r) + r * r).re;

    // identity with the assembled operator
    let lhs = grid.inner_weighted(&lw, w.values(), |r| 1.0 / (r * r)).re;
    let (rhs, scale) = weighted_identity_rhs(grid, k, w.values(), &dw);
    let identity = (lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE);

    let identity_exact = exact_identity_residual(grid, k, profile);

    let shifted = op.resolvent_matrix(op.beta() * lambda);
    let f = GridFunction::new(shifted.apply(w.values()));
    let f_l2 = grid.norm(&f, NormKind::L2).ok()?;
    let f_hm1 = grid.norm(&f, NormKind::Hm1).ok()?;
    let w_h1 = grid.norm(&w, NormKind::H1).ok()?;
    let ka = (k as f64).abs();
    Some(SampleAudit {
        coercivity: re_form / (grad2 + weight),
        real_ratio: re_form / (norm * norm),
        identity,
        identity_exact,
        l2: ka * norm / f_l2,
        h1: ka.sqrt() * w_h1 / f_l2,
        h1_hm1: w_h1 / f_hm1,
        l2_hm1: ka.sqrt() * norm / f_hm1,
    })
}

/// Samples random smooth Dirichlet test functions and records the
/// coercivity constants of `L_k`, the weighted identity residuals and the
/// resolvent-type ratios `|k| |w| / |F|` etc. for `F = (L_k - i beta lambda) w`
/// with `lambda` drawn from `[-1, 1]`.
pub fn coercivity_audit(op: &BandedComplexOperator, samples: usize, seed: u64) -> Result<CoercivityReport> {
    if op.k() == 0 {
        return Err(Error::ZeroMode);
    }
    let mut sampler = TestFunctionSampler::for_grid(op.grid(), seed);
    let tasks: Vec<(SmoothProfile, f64)> =
        (0..samples).map(|_| (sampler.next_profile(), sampler.uniform(-1.0, 1.0))).collect();
    audit_profiles(op, &tasks)
}

/// Same audit on caller-supplied profiles.
pub fn coercivity_audit_profiles(
    op: &BandedComplexOperator,
    profiles: &[SmoothProfile],
) -> Result<CoercivityReport> {
    if op.k() == 0 {
        return Err(Error::ZeroMode);
    }
    let tasks: Vec<(SmoothProfile, f64)> = profiles.iter().map(|p| (p.clone(), 0.0)).collect();
    audit_profiles(op, &tasks)
}

fn audit_profiles(op: &BandedComplexOperator, tasks: &[(SmoothProfile, f64)]) -> Result<CoercivityReport> {
    let results: Vec<Option<SampleAudit>> = tasks.par_iter().map(|(p, l)| audit_one(op, p, *l)).collect();
    let mut report = CoercivityReport {
        k: op.k(),
        beta: op.beta(),
        samples: tasks.len(),
        skipped: 0,
        min_coercivity_ratio: f64::INFINITY,
        min_real_part_ratio: f64::INFINITY,
        accretive: true,
        max_identity_residual: 0.0,
        max_identity_residual_exact: 0.0,
        max_l2_ratio: 0.0,
        max_h1_ratio: 0.0,
        max_h1_hm1_ratio: 0.0,
        max_l2_hm1_ratio: 0.0,
    };
    for r in results {
        let Some(a) = r else {
            report.skipped += 1;
            continue;
        };
        report.min_coercivity_ratio = report.min_coercivity_ratio.min(a.coercivity);
        report.min_real_part_ratio = report.min_real_part_ratio.min(a.real_ratio);
        report.accretive &= a.real_ratio > 0.0;
        report.max_identity_residual = report.max_identity_residual.max(a.identity);
        report.max_identity_residual_exact = report.max_identity_residual_exact.max(a.identity_exact);
        report.max_l2_ratio = report.max_l2_ratio.max(a.l2);
        report.max_h1_ratio = report.max_h1_ratio.max(a.h1);
        report.max_h1_hm1_ratio = report.max_h1_hm1_ratio.max(a.h1_hm1);
        report.max_l2_hm1_ratio = report.max_l2_hm1_ratio.max(a.l2_hm1);
    }
    if report.skipped == report.samples {
        report.min_coercivity_ratio = f64::NAN;
        report.min_real_part_ratio = f64::NAN;
    }
    Ok(report)
}

/// Relative residual of the weighted identity for a single profile, using
/// the assembled matrix. Exposed for refinement studies.
pub fn weighted_identity_residual(op: &BandedComplexOperator, profile: &SmoothProfile) -> f64 {
    let grid = op.grid();
    let w = profile.sample(grid);
    let lw = op.apply(w.values());
    let lhs = grid.inner_weighted(&lw, w.values(), |r| 1.0 / (r * r)).re;
    let dw = grid.first_derivative().apply(w.values());
    let (rhs, scale) = weighted_identity_rhs(grid, op.k(), w.values(), &dw);
    if scale == 0.0 {
        return 0.0;
    }
    (lhs - rhs).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> RadialGrid {
        RadialGrid::uniform(n, 20.0).unwrap()
    }

    #[test]
    fn flow_params_enforce_regime() {
        assert!(FlowParams::new(1.0, 0.5, 1.0).is_err());
        assert!(FlowParams::new(1.0, 5.0, 0.0).is_err());
        let p = FlowParams::new(0.3, 50.0, 0.5).unwrap();
        assert_eq!(p.b, 100.0);
        assert_eq!(p.beta(-3), -300.0);
    }

    #[test]
    fn zero_mode_is_rejected() {
        let g = grid(64);
        assert!(matches!(assemble_lk(&g, 0, &FlowParams::reference(10.0)), Err(Error::ZeroMode)));
    }

    #[test]
    fn imaginary_diagonal_is_rotation_term() {
        let g = grid(128);
        let op = assemble_lk(&g, 3, &FlowParams::reference(250.0)).unwrap();
        for (i, &r) in g.nodes().iter().enumerate() {
            let d = op.matrix().get(i, i);
            assert_relative_eq!(d.im, 750.0 / (r * r), max_relative = 1e-14);
        }
    }

    #[test]
    fn symmetric_when_b_vanishes() {
        let g = grid(64);
        let op = assemble_lk(&g, 2, &FlowParams::reference(0.0)).unwrap();
        let m = op.matrix();
        for i in 0..63 {
            assert_eq!(m.get(i, i + 1), m.get(i + 1, i));
            assert_eq!(m.get(i, i).im, 0.0);
        }
    }

    #[test]
    fn zero_shift_is_identity_and_conjugate_symmetry() {
        let g = grid(64);
        let op = assemble_lk(&g, 1, &FlowParams::reference(40.0)).unwrap();
        assert_eq!(op.resolvent_matrix(0.0).matrix(), op.matrix());
        let flipped = assemble_lk(&g, 1, &FlowParams::reference(-40.0)).unwrap();
        let a = op.resolvent_matrix(3.5);
        let b = flipped.resolvent_matrix(-3.5);
        for i in 0..64usize {
            for j in i.saturating_sub(1)..(i + 2).min(64) {
                assert_eq!(a.matrix().get(i, j), b.matrix().get(i, j).conj());
            }
        }
    }

    #[test]
    fn k1_rayleigh_quotient_at_least_one_half() {
        let g = grid(512);
        let op = assemble_lk(&g, 1, &FlowParams::reference(0.0)).unwrap();
        let report = coercivity_audit(&op, 60, 5).unwrap();
        assert!(report.min_real_part_ratio >= 0.5 - 1e-3, "{report:?}");
    }

    #[test]
    fn k2_coercive_against_weighted_form() {
        let g = grid(512);
        let op = assemble_lk(&g, 2, &FlowParams::reference(0.0)).unwrap();
        let report = coercivity_audit(&op, 60, 9).unwrap();
        assert!(report.min_coercivity_ratio > 0.0, "{report:?}");
    }

    #[test]
    fn real_part_independent_of_b() {
        let g = grid(256);
        let mut sampler = TestFunctionSampler::for_grid(&g, 3);
        let w = sampler.next_sample(&g);
        let forms: Vec<f64> = [0.0, 10.0, 1e3, -1e5]
            .iter()
            .map(|&b| assemble_lk(&g, 2, &FlowParams::reference(b)).unwrap().form(w.values()).re)
            .collect();
        for f in &forms[1..] {
            assert_relative_eq!(*f, forms[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_test_function_is_skipped() {
        let g = grid(128);
        let op = assemble_lk(&g, 1, &FlowParams::reference(0.0)).unwrap();
        let r = coercivity_audit_profiles(&op, &[SmoothProfile::zero()]).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.max_identity_residual, 0.0);
    }

    #[test]
    fn weighted_identity_on_compact_bump() {
        let g = grid(1024);
        let op = assemble_lk(&g, 1, &FlowParams::reference(0.0)).unwrap();
        let r = coercivity_audit_profiles(&op, &[SmoothProfile::compact_on(1.0, 2.0)]).unwrap();
        assert!(r.max_identity_residual_exact < 1e-6, "{r:?}");
    }

    #[test]
    fn weighted_identity_residual_is_second_order() {
        let p = SmoothProfile::compact_on(1.0, 2.0);
        let res: Vec<f64> = [1024, 2048, 4096]
            .iter()
            .map(|&n| {
                let op = assemble_lk(&grid(n), 2, &FlowParams::reference(0.0)).unwrap();
                weighted_identity_residual(&op, &p)
            })
            .collect();
        for pair in res.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            assert!(order > 1.8, "{res:?}");
        }
    }

    #[test]
    fn accretive_for_k3_large_b() {
        let g = grid(512);
        let op = assemble_lk(&g, 3, &FlowParams::reference(1e3)).unwrap();
        let r = coercivity_audit(&op, 100, 21).unwrap();
        assert!(r.accretive);
        assert!(r.min_coercivity_ratio > 0.0);
        assert!(r.max_l2_ratio.is_finite() && r.max_h1_hm1_ratio.is_finite());
    }
}
