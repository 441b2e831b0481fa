//! Smallest singular values of `L_k - i s` along the imaginary axis, the
//! pseudospectral bound, the explicit quasimode witness and the audit of the
//! shifted `H^1 -> H^{-1}` estimates.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix, C64};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec, NormKind, RadialGrid};
use crate::operator::{potential, BandedComplexOperator};
use crate::testfn::TestFunctionSampler;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Norms measuring `w` (domain) and `(L - i s) w` (range).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormPair {
    #[serde(rename = "L2->L2")]
    L2,
    #[serde(rename = "X->X")]
    X,
    /// `H^1 -> H^{-1}`.
    #[serde(rename = "Hm1-shifted")]
    Hm1Shifted,
    /// `w/r` in `H^1`, `F/r` in `H^{-1}`.
    #[serde(rename = "X-Hm1-shifted")]
    XHm1Shifted,
}

impl fmt::Display for NormPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NormPair::L2 => "L2->L2",
            NormPair::X => "X->X",
            NormPair::Hm1Shifted => "Hm1-shifted",
            NormPair::XHm1Shifted => "X-Hm1-shifted",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for NormPair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "l2->l2" => Ok(NormPair::L2),
            "x" | "x->x" => Ok(NormPair::X),
            "hm1" | "hm1-shifted" => Ok(NormPair::Hm1Shifted),
            "x-hm1" | "x-hm1-shifted" => Ok(NormPair::XHm1Shifted),
            other => Err(Error::Config(format!("unknown norm pair '{other}'"))),
        }
    }
}

/// The two Gram matrices of a norm pair: `|y|_P^2 = y^H P y` on the range and
/// `|w|_D^2 = w^H D w` on the domain.
struct Metric {
    pair: NormPair,
    w: Vec<f64>,
    r: Vec<f64>,
    s: Option<BandMatrix>,
    s_lu: Option<BandLu>,
}

impl Metric {
    fn new(grid: &RadialGrid, pair: NormPair) -> Result<Self> {
        let (s, s_lu) = match pair {
            NormPair::Hm1Shifted | NormPair::XHm1Shifted => {
                let s = grid.h1_gram();
                let lu = s.factor()?;
                (Some(s), Some(lu))
            }
            _ => (None, None),
        };
        Ok(Self { pair, w: grid.weights().to_vec(), r: grid.nodes().to_vec(), s, s_lu })
    }

    fn diag(&self) -> impl Iterator<Item = f64> + '_ {
        let x = matches!(self.pair, NormPair::X);
        self.w.iter().zip(&self.r).map(move |(w, r)| if x { w / (r * r) } else { *w })
    }

    /// `P y`.
    fn apply_p(&self, y: &[C64]) -> Vec<C64> {
        match self.pair {
            NormPair::L2 | NormPair::X => y.iter().zip(self.diag()).map(|(v, d)| v * d).collect(),
            NormPair::Hm1Shifted | NormPair::XHm1Shifted => {
                let xw = matches!(self.pair, NormPair::XHm1Shifted);
                let scale: Vec<f64> =
                    self.w.iter().zip(&self.r).map(|(w, r)| if xw { w / r } else { *w }).collect();
                let mut t: Vec<C64> = y.iter().zip(&scale).map(|(v, s)| v * s).collect();
                self.s_lu.as_ref().unwrap().solve_in_place(&mut t);
                t.iter().zip(&scale).map(|(v, s)| v * s).collect()
            }
        }
    }

    /// `P^{-1} y`.
    fn solve_p(&self, y: &[C64]) -> Vec<C64> {
        match self.pair {
            NormPair::L2 | NormPair::X => y.iter().zip(self.diag()).map(|(v, d)| v / d).collect(),
            NormPair::Hm1Shifted | NormPair::XHm1Shifted => {
                let xw = matches!(self.pair, NormPair::XHm1Shifted);
                let scale: Vec<f64> =
                    self.w.iter().zip(&self.r).map(|(w, r)| if xw { r / w } else { 1.0 / w }).collect();
                let t: Vec<C64> = y.iter().zip(&scale).map(|(v, s)| v * s).collect();
                let t = self.s.as_ref().unwrap().apply(&t);
                t.iter().zip(&scale).map(|(v, s)| v * s).collect()
            }
        }
    }

    /// `D^{-1} v`.
    fn solve_d(&self, v: &[C64]) -> Vec<C64> {
        match self.pair {
            NormPair::L2 | NormPair::X => v.iter().zip(self.diag()).map(|(a, d)| a / d).collect(),
            NormPair::Hm1Shifted => self.s_lu.as_ref().unwrap().solve(v),
            NormPair::XHm1Shifted => {
                let mut t: Vec<C64> = v.iter().zip(&self.r).map(|(a, r)| a * r).collect();
                self.s_lu.as_ref().unwrap().solve_in_place(&mut t);
                t.iter().zip(&self.r).map(|(a, r)| a * r).collect()
            }
        }
    }

    /// `D v`.
    fn apply_d(&self, v: &[C64]) -> Vec<C64> {
        match self.pair {
            NormPair::L2 | NormPair::X => v.iter().zip(self.diag()).map(|(a, d)| a * d).collect(),
            NormPair::Hm1Shifted => self.s.as_ref().unwrap().apply(v),
            NormPair::XHm1Shifted => {
                let t: Vec<C64> = v.iter().zip(&self.r).map(|(a, r)| a / r).collect();
                let t = self.s.as_ref().unwrap().apply(&t);
                t.iter().zip(&self.r).map(|(a, r)| a / r).collect()
            }
        }
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Result of one smallest-singular-value computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma: f64,
    /// `|G v - mu D v|_{D^{-1}} / mu` for the normal equations `G = A^H P A`.
    pub residual: f64,
    pub converged: bool,
    /// Lower bound on `sigma`. Certified by the numerical range when
    /// `certified` is set, otherwise the residual interval `sigma^2 - |r|`.
    pub lower_bound: f64,
    pub certified: bool,
    pub iterations: usize,
    pub dense: bool,
    #[serde(skip)]
    pub vector: Option<Vec<C64>>,
}

/// Controls for the inverse subspace iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SigmaOptions {
    pub block: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Allow the dense SVD when the iteration stalls and `N` is below this.
    pub dense_below: usize,
    /// Stop early once the Ritz value is within this relative distance of
    /// the certified lower bound.
    pub bracket_tol: f64,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        Self { block: 4, max_iter: 150, tol: 1e-10, dense_below: 512, bracket_tol: 1e-3 }
    }
}

/// `inf |(L - i s) w|_range / |w|_domain` for the operator as assembled
/// (including any real shift it already carries).
pub fn resolvent_norm_at(op: &BandedComplexOperator, s: f64, pair: NormPair) -> Result<SigmaEstimate> {
    sigma_min_with(op, s, pair, &SigmaOptions::default())
}

pub fn sigma_min_with(
    op: &BandedComplexOperator,
    s: f64,
    pair: NormPair,
    opts: &SigmaOptions,
) -> Result<SigmaEstimate> {
    if !s.is_finite() {
        return Err(Error::NonFinite("spectral shift".into()));
    }
    let a = op.resolvent_matrix(s);
    let metric = Metric::new(op.grid(), pair)?;
    let lower = numerical_range_bound(&a, pair);
    let est = inverse_subspace(a.matrix(), &metric, opts, lower)?;
    let bracketed = est.certified && est.sigma <= lower * (1.0 + opts.bracket_tol);
    if !est.converged && !bracketed && op.dim() < opts.dense_below {
        let mut d = sigma_min_dense(op, s, pair)?;
        d.iterations = est.iterations;
        return Ok(d);
    }
    Ok(est)
}

/// In the grid inner product the Laplacian part of `W L` is real symmetric, so
/// `Im <A w, w> / |w|^2` lies in the range of the imaginary diagonal and
/// `sigma_min >= dist(0, that range)`. Only available for the plain `L^2` pair.
fn numerical_range_bound(a: &BandedComplexOperator, pair: NormPair) -> f64 {
    if pair != NormPair::L2 {
        return 0.0;
    }
    let (lo, hi) = a
        .matrix()
        .diagonal()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d.im), hi.max(d.im)));
    if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        -hi
    } else {
        0.0
    }
}

fn d_orthonormalize(cols: &mut Vec<Vec<C64>>, metric: &Metric) {
    let mut out: Vec<Vec<C64>> = Vec::with_capacity(cols.len());
    let mut dout: Vec<Vec<C64>> = Vec::with_capacity(cols.len());
    for mut v in cols.drain(..) {
        for _ in 0..2 {
            for (q, dq) in out.iter().zip(&dout) {
                let c = dot(dq, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let dv = metric.apply_d(&v);
        let nrm = dot(&v, &dv).re.max(0.0).sqrt();
        if nrm > 0.0 && nrm.is_finite() {
            let inv = 1.0 / nrm;
            v.iter_mut().for_each(|x| *x *= inv);
            out.push(v);
            dout.push(dv.into_iter().map(|x| x * inv).collect());
        }
    }
    *cols = out;
}

fn inverse_subspace(a: &BandMatrix, metric: &Metric, opts: &SigmaOptions, lower: f64) -> Result<SigmaEstimate> {
    let n = a.dim();
    let ah = a.adjoint();
    let a_lu = a.factor()?;
    let ah_lu = ah.factor()?;
    let b = opts.block.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5167_a11e);
    let mut basis: Vec<Vec<C64>> = (0..b)
        .map(|_| (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
        .collect();
    d_orthonormalize(&mut basis, metric);

    let mut sigma_prev = f64::INFINITY;
    let mut stable = 0;
    let mut last = (f64::NAN, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let mut z: Vec<Vec<C64>> = basis
            .par_iter()
            .map(|v| {
                let mut t = metric.apply_d(v);
                ah_lu.solve_in_place(&mut t);
                let mut t = metric.solve_p(&t);
                a_lu.solve_in_place(&mut t);
                t
            })
            .collect();
        d_orthonormalize(&mut z, metric);
        if z.is_empty() {
            return Err(Error::NonFinite("inverse iteration collapsed".into()));
        }
        let az: Vec<Vec<C64>> = z.iter().map(|v| a.apply(v)).collect();
        let paz: Vec<Vec<C64>> = az.iter().map(|v| metric.apply_p(v)).collect();
        let m = z.len();
        let gm = DMatrix::<C64>::from_fn(m, m, |i, j| {
            let v = dot(&az[i], &paz[j]);
            let u = dot(&az[j], &paz[i]).conj();
            0.5 * (v + u)
        });
        let eig = gm.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        basis = order
            .iter()
            .map(|&c| {
                let mut v = vec![ZERO; n];
                for (i, zi) in z.iter().enumerate() {
                    let coef = eig.eigenvectors[(i, c)];
                    for (vk, zk) in v.iter_mut().zip(zi) {
                        *vk += coef * zk;
                    }
                }
                v
            })
            .collect();
        let mu = eig.eigenvalues[order[0]].max(0.0);
        let sigma = mu.sqrt();
        if (sigma - sigma_prev).abs() <= opts.tol * sigma.max(f64::MIN_POSITIVE) {
            stable += 1;
        } else {
            stable = 0;
        }
        sigma_prev = sigma;
        if lower > 0.0 && sigma <= lower * (1.0 + opts.bracket_tol) {
            break;
        }
        // the Ritz value may also be accepted through the residual bound
        // |mu - mu_true| <= |r|^2_{D^{-1}} / gap, checked every few sweeps
        let check = stable >= 2 || (m > 1 && it % 4 == 3);
        if check {
            let (res2, _) = ritz_residual(a, &ah, metric, &basis[0], mu);
            let gap = if m > 1 { eig.eigenvalues[order[1]] - mu } else { 0.0 };
            let bound = if gap > 0.0 { res2 / gap } else { f64::INFINITY };
            last = (res2.sqrt() / mu.max(f64::MIN_POSITIVE), bound / mu.max(f64::MIN_POSITIVE));
            if stable >= 2 || last.1 <= opts.tol {
                converged = true;
                break;
            }
        }
    }
    let v = &basis[0];
    let mu = sigma_prev * sigma_prev;
    if !converged || last.0.is_nan() {
        let (res2, _) = ritz_residual(a, &ah, metric, v, mu);
        last.0 = res2.sqrt() / mu.max(f64::MIN_POSITIVE);
    }
    Ok(SigmaEstimate {
        sigma: sigma_prev,
        residual: last.0,
        converged,
        lower_bound: if lower > 0.0 { lower } else { sigma_prev * (1.0 - last.0).max(0.0).sqrt() },
        certified: lower > 0.0,
        iterations,
        dense: false,
        vector: Some(v.clone()),
    })
}

/// `|A^H P A v - mu D v|^2` in the `D^{-1}` norm.
fn ritz_residual(a: &BandMatrix, ah: &BandMatrix, metric: &Metric, v: &[C64], mu: f64) -> (f64, Vec<C64>) {
    let gv = ah.apply(&metric.apply_p(&a.apply(v)));
    let dv = metric.apply_d(v);
    let res: Vec<C64> = gv.iter().zip(&dv).map(|(g, d)| g - d * mu).collect();
    let dres = metric.solve_d(&res);
    (dot(&res, &dres).re.max(0.0), res)
}

/// Dense SVD of `P^{1/2} (L - i s) D^{-1/2}` with Cholesky factors of the
/// Gram matrices. `O(N^3)`; meant for `N` up to a few hundred.
pub fn sigma_min_dense(op: &BandedComplexOperator, s: f64, pair: NormPair) -> Result<SigmaEstimate> {
    let grid = op.grid();
    let n = grid.len();
    let a = op.resolvent_matrix(s);
    let dense = DMatrix::<C64>::from_fn(n, n, |i, j| a.matrix().get(i, j));
    let w = grid.weights();
    let r = grid.nodes();
    let m = match pair {
        NormPair::L2 | NormPair::X => {
            let x = matches!(pair, NormPair::X);
            let d: Vec<f64> = w.iter().zip(r).map(|(w, r)| if x { (w / (r * r)).sqrt() } else { w.sqrt() }).collect();
            DMatrix::from_fn(n, n, |i, j| dense[(i, j)] * d[i] / d[j])
        }
        NormPair::Hm1Shifted | NormPair::XHm1Shifted => {
            let xw = matches!(pair, NormPair::XHm1Shifted);
            let s_dense = DMatrix::<C64>::from_fn(n, n, |i, j| grid.h1_gram().get(i, j));
            let chol = s_dense.cholesky().ok_or(Error::SingularMatrix { row: 0 })?;
            let l = chol.l();
            // range: L^{-1} W R^{-1}; domain inverse: R L^{-H}
            let left: Vec<f64> = w.iter().zip(r).map(|(w, r)| if xw { w / r } else { *w }).collect();
            let right: Vec<f64> = r.iter().map(|r| if xw { *r } else { 1.0 }).collect();
            let wa = DMatrix::from_fn(n, n, |i, j| dense[(i, j)] * left[i] * right[j]);
            let lhs = l.solve_lower_triangular(&wa).ok_or(Error::SingularMatrix { row: 0 })?;
            // (lhs) L^{-H} = (L^{-1} lhs^H)^H
            let t = l.solve_lower_triangular(&lhs.adjoint()).ok_or(Error::SingularMatrix { row: 0 })?;
            t.adjoint()
        }
    };
    let sv = m.singular_values();
    let sigma = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SigmaEstimate { sigma, residual: 0.0, converged: true, lower_bound: sigma, certified: true, iterations: 0, dense: true, vector: None })
}

/// Parameters of an imaginary-axis scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanConfig {
    pub pair: NormPair,
    /// Coarse points per sign.
    pub points: usize,
    /// Half-width of the scan; defaults to `max(4 |beta|, min_extent)`.
    pub s_max: Option<f64>,
    pub min_extent: f64,
    /// Smallest positive shift as a fraction of `s_max`.
    pub log_floor: f64,
    pub include_negative: bool,
    pub rel_tol: f64,
    /// Number of local minima refined by golden section.
    pub refine_minima: usize,
    pub sigma: SigmaOptions,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            pair: NormPair::L2,
            points: 128,
            s_max: None,
            min_extent: 16.0,
            log_floor: 1e-5,
            include_negative: true,
            rel_tol: 1e-3,
            refine_minima: 3,
            sigma: SigmaOptions::default(),
        }
    }
}

impl ScanConfig {
    pub fn with_pair(pair: NormPair) -> Self {
        Self { pair, ..Self::default() }
    }

    pub fn extent(&self, beta: f64) -> f64 {
        self.s_max.unwrap_or_else(|| (4.0 * beta.abs()).max(self.min_extent))
    }

    /// The coarse shifts, sorted.
    pub fn shifts(&self, beta: f64) -> Vec<f64> {
        let s_max = self.extent(beta);
        let m = self.points.max(2);
        let lo = self.log_floor.clamp(1e-12, 1.0).ln();
        let pos: Vec<f64> = (0..m).map(|j| s_max * (lo * (1.0 - j as f64 / (m - 1) as f64)).exp()).collect();
        let mut all = vec![0.0];
        all.extend(&pos);
        if self.include_negative {
            all.extend(pos.iter().map(|s| -s));
        }
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

pub const FLAG_UNRESOLVED: &str = "unresolved-minimum";
pub const FLAG_NONCONVERGED: &str = "nonconverged-sigma";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub k: i32,
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    pub norm_pair: NormPair,
    pub shift_real: f64,
    pub grid: GridSpec,
    pub shifts: Vec<f64>,
    pub sigma_min: Vec<f64>,
    pub psi: f64,
    pub psi_shift: f64,
    pub refinement_depth: usize,
    /// Largest residual among converged points.
    pub max_residual: f64,
    /// Shifts where only the certified bracket was reached.
    pub unconverged_shifts: Vec<f64>,
    pub flags: Vec<String>,
}

impl ScanResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scan result serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,sigma_min\n");
        for (s, v) in self.shifts.iter().zip(&self.sigma_min) {
            out.push_str(&format!("{s:.17e},{v:.17e}\n"));
        }
        out
    }

    pub fn is_flagged(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

fn golden_section(
    f: &(dyn Fn(f64) -> Result<SigmaEstimate> + Sync),
    mut a: f64,
    mut b: f64,
    tol: f64,
    evals: &mut Vec<(f64, SigmaEstimate)>,
) -> Result<usize> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut depth = 0;
    while (b - a).abs() > tol && depth < 200 {
        depth += 1;
        if fc.sigma <= fd.sigma {
            b = d;
            evals.push((d, fd));
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            evals.push((c, fc));
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    evals.push((c, fc));
    evals.push((d, fd));
    Ok(depth)
}

/// Coarse scan followed by golden-section refinement around the best local
/// minima.
pub fn pseudospectral_bound(op: &BandedComplexOperator, config: &ScanConfig) -> Result<ScanResult> {
    let metric_check = Metric::new(op.grid(), config.pair)?;
    drop(metric_check);
    let coarse = config.shifts(op.beta());
    let eval = |s: f64| sigma_min_with(op, s, config.pair, &config.sigma);
    let values: Vec<SigmaEstimate> = coarse.par_iter().map(|&s| eval(s)).collect::<Result<_>>()?;
    let sig: Vec<f64> = values.iter().map(|v| v.sigma).collect();

    let mut flags = Vec::new();
    let n = sig.len();
    let global = (0..n).min_by(|&i, &j| sig[i].total_cmp(&sig[j])).unwrap_or(0);
    if global == 0 || global + 1 == n {
        flags.push(FLAG_UNRESOLVED.to_string());
    }
    let mut minima: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| sig[i] <= sig[i - 1] && sig[i] <= sig[i + 1])
        .collect();
    minima.sort_by(|&i, &j| sig[i].total_cmp(&sig[j]));
    minima.truncate(config.refine_minima);

    let refined: Vec<(usize, Vec<(f64, SigmaEstimate)>)> = minima
        .par_iter()
        .map(|&i| {
            let (a, b) = (coarse[i - 1], coarse[i + 1]);
            let scale = coarse[i].abs().max(1.0);
            let mut evals = Vec::new();
            let depth = golden_section(&eval, a, b, config.rel_tol * scale, &mut evals)?;
            Ok((depth, evals))
        })
        .collect::<Result<_>>()?;

    let mut pts: Vec<(f64, SigmaEstimate)> = coarse.into_iter().zip(values).collect();
    let mut depth = 0;
    for (d, e) in refined {
        depth = depth.max(d);
        pts.extend(e);
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);

    let (psi_shift, psi) = pts
        .iter()
        .map(|(s, e)| (*s, e.sigma))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0.0, f64::NAN));
    // an unconverged point only matters if it could undercut psi
    let unconverged: Vec<f64> = pts.iter().filter(|(_, e)| !e.converged).map(|p| p.0).collect();
    if pts.iter().any(|(_, e)| !e.converged && e.lower_bound <= psi) {
        flags.push(FLAG_NONCONVERGED.to_string());
    }
    let max_residual = pts.iter().filter(|(_, e)| e.converged).map(|(_, e)| e.residual).fold(0.0, f64::max);
    let params_b = if op.k() != 0 { op.beta() / op.k() as f64 } else { 0.0 };
    Ok(ScanResult {
        k: op.k(),
        b: params_b,
        beta: op.beta(),
        norm_pair: config.pair,
        shift_real: op.shift_real(),
        grid: op.grid().spec(),
        shifts: pts.iter().map(|p| p.0).collect(),
        sigma_min: pts.iter().map(|p| p.1.sigma).collect(),
        psi,
        psi_shift,
        refinement_depth: depth,
        max_residual,
        unconverged_shifts: unconverged,
        flags,
    })
}

/// The quasimode `(r - r0)(r0 + 1/r0 - r)` on `[r0, r0 + 1/r0]` and its
/// resolvent quotient at `beta = r0^6`, `lambda = r0^{-2}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharpnessWitness {
    pub r0: f64,
    pub beta: f64,
    pub lambda: f64,
    pub nodes_in_support: usize,
    pub w_norm: f64,
    pub ratio: f64,
    /// `ratio / beta^{1/3}`.
    pub scaled_ratio: f64,
    #[serde(skip)]
    pub w: GridFunction,
}

pub const WITNESS_MIN_NODES: usize = 32;

/// `(w, w'')` of the witness; `w'' = -2` on the open support.
pub fn witness_profile(r0: f64, r: f64) -> (f64, f64) {
    let b = r0 + 1.0 / r0;
    if r > r0 && r < b {
        ((r - r0) * (b - r), -2.0)
    } else {
        (0.0, 0.0)
    }
}

pub fn sharpness_witness(r0: f64, grid: &RadialGrid) -> Result<SharpnessWitness> {
    if !(r0 >= 1.0) {
        return Err(Error::Config(format!("witness needs r0 >= 1, got {r0}")));
    }
    let end = r0 + 1.0 / r0;
    if end >= grid.r_max() {
        return Err(Error::Config(format!("witness support [{r0}, {end}] exceeds r_max = {}", grid.r_max())));
    }
    let inside = grid.nodes_in(r0, end);
    if inside < WITNESS_MIN_NODES {
        return Err(Error::InsufficientResolution(format!(
            "{inside} nodes across the witness support, need {WITNESS_MIN_NODES}"
        )));
    }
    let beta = r0.powi(6);
    let lambda = 1.0 / (r0 * r0);
    let mut w = Vec::with_capacity(grid.len());
    let (mut wn, mut fnorm) = (0.0, 0.0);
    for (&r, &q) in grid.nodes().iter().zip(grid.weights()) {
        let (v, d2) = witness_profile(r0, r);
        let f = C64::new(-d2 + potential(1, r) * v, beta * (1.0 / (r * r) - lambda) * v);
        let f = if v == 0.0 { ZERO } else { f };
        wn += q * v * v;
        fnorm += q * f.norm_sqr();
        w.push(C64::new(v, 0.0));
    }
    let ratio = (fnorm / wn).sqrt();
    Ok(SharpnessWitness {
        r0,
        beta,
        lambda,
        nodes_in_support: inside,
        w_norm: wn.sqrt(),
        ratio,
        scaled_ratio: ratio / beta.cbrt(),
        w: GridFunction::new(w),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftedAuditReport {
    pub k: i32,
    pub beta: f64,
    pub c2: f64,
    pub samples: usize,
    pub skipped: usize,
    /// `max (|w|_{H^1} + |beta|^{1/6} |w|) / |F - c2 |beta|^{1/3} w|_{H^{-1}}`.
    pub max_constant: f64,
    /// Same with `w/r` and `F/r`.
    pub max_constant_weighted: f64,
    /// Contribution of the random samples alone.
    pub max_constant_random: f64,
    pub extremal_lambdas: Vec<f64>,
}

fn shifted_ratio(grid: &RadialGrid, w: &[C64], g: &[C64], beta: f64, weighted: bool) -> Option<f64> {
    let scale = |v: &[C64]| -> GridFunction {
        if weighted {
            GridFunction::new(v.iter().zip(grid.nodes()).map(|(a, r)| a / r).collect())
        } else {
            GridFunction::new(v.to_vec())
        }
    };
    let wf = scale(w);
    let gf = scale(g);
    let lhs = grid.norm(&wf, NormKind::H1).ok()? + beta.abs().powf(1.0 / 6.0) * grid.norm(&wf, NormKind::L2).ok()?;
    let rhs = grid.norm(&gf, NormKind::Hm1).ok()?;
    if lhs == 0.0 {
        None
    } else {
        Some(lhs / rhs)
    }
}

/// Extremal `lambda` values probed with singular vectors of the shifted pair.
pub fn default_extremal_lambdas() -> Vec<f64> {
    let mut out: Vec<f64> = (0..16).map(|j| 10f64.powf(-4.0 + 4.0 * j as f64 / 15.0)).collect();
    out.push(0.0);
    out
}

/// Audits `|w|_{H^1} + |beta|^{1/6}|w| <= C |F - c2 |beta|^{1/3} w|_{H^{-1}}` and
/// its `1/r`-weighted analogue on `samples` random pairs `(w, lambda)` plus the
/// near-extremal singular vectors at each of `extremal` lambdas.
pub fn shifted_resolvent_audit(
    op: &BandedComplexOperator,
    c2: f64,
    samples: usize,
    seed: u64,
    extremal: &[f64],
) -> Result<ShiftedAuditReport> {
    if !(c2 > 0.0) {
        return Err(Error::Config(format!("c2 must be positive, got {c2}")));
    }
    let beta = op.beta();
    let shifted = op.with_real_shift(c2 * beta.abs().cbrt());
    let grid = op.grid();
    let mut sampler = TestFunctionSampler::for_grid(grid, seed);
    let tasks: Vec<(GridFunction, f64)> = (0..samples)
        .map(|_| {
            let w = sampler.next_sample(grid);
            let l = sampler.uniform(-1.0, 1.0);
            (w, l)
        })
        .collect();
    let random: Vec<Option<(f64, f64)>> = tasks
        .par_iter()
        .map(|(w, l)| {
            if w.is_zero() {
                return None;
            }
            let g = shifted.resolvent_matrix(beta * l).apply(w.values());
            Some((
                shifted_ratio(grid, w.values(), &g, beta, false)?,
                shifted_ratio(grid, w.values(), &g, beta, true)?,
            ))
        })
        .collect();
    let extremal_vals: Vec<(f64, f64)> = extremal
        .par_iter()
        .map(|&l| {
            let a = shifted.resolvent_matrix(beta * l);
            let mut out = (0.0, 0.0);
            for (pair, slot) in [(NormPair::Hm1Shifted, 0), (NormPair::XHm1Shifted, 1)] {
                let est = sigma_min_with(&shifted, beta * l, pair, &SigmaOptions::default())?;
                if let Some(v) = est.vector {
                    let g = a.apply(&v);
                    let c = shifted_ratio(grid, &v, &g, beta, slot == 1).unwrap_or(0.0);
                    if slot == 0 {
                        out.0 = c;
                    } else {
                        out.1 = c;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut report = ShiftedAuditReport {
        k: op.k(),
        beta,
        c2,
        samples,
        skipped: 0,
        max_constant: 0.0,
        max_constant_weighted: 0.0,
        max_constant_random: 0.0,
        extremal_lambdas: extremal.to_vec(),
    };
    for r in random {
        match r {
            Some((c, cw)) => {
                report.max_constant_random = report.max_constant_random.max(c);
                report.max_constant = report.max_constant.max(c);
                report.max_constant_weighted = report.max_constant_weighted.max(cw);
            }
            None => report.skipped += 1,
        }
    }
    for (c, cw) in extremal_vals {
        report.max_constant = report.max_constant.max(c);
        report.max_constant_weighted = report.max_constant_weighted.max(cw);
    }
    Ok(report)
}

/// Largest `c2` in `(0, c_hi]`, up to bisection resolution, for which the
/// audited constant stays below `growth` times its value at `c2 = c_floor`.
pub fn calibrate_c2(
    op: &BandedComplexOperator,
    samples: usize,
    seed: u64,
    growth: f64,
    c_hi: f64,
    steps: usize,
) -> Result<(f64, ShiftedAuditReport)> {
    let lambdas = default_extremal_lambdas();
    let floor = 1e-6 * c_hi;
    let base = shifted_resolvent_audit(op, floor, samples, seed, &lambdas)?;
    let cap = growth * base.max_constant.max(base.max_constant_weighted);
    let ok = |r: &ShiftedAuditReport| {
        let m = r.max_constant.max(r.max_constant_weighted);
        m.is_finite() && m <= cap
    };
    let top = shifted_resolvent_audit(op, c_hi, samples, seed, &lambdas)?;
    if ok(&top) {
        return Ok((c_hi, top));
    }
    let (mut lo, mut hi) = (floor, c_hi);
    let mut best = base;
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let r = shifted_resolvent_audit(op, mid, samples, seed, &lambdas)?;
        if ok(&r) {
            lo = mid;
            best = r;
        } else {
            hi = mid;
        }
    }
    Ok((lo, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{assemble_lk, FlowParams};

    fn op(n: usize, k: i32, b: f64) -> BandedComplexOperator {
        let g = RadialGrid::uniform(n, 20.0).unwrap();
        assemble_lk(&g, k, &FlowParams::reference(b)).unwrap()
    }

    #[test]
    fn symmetric_case_matches_lowest_eigenvalue() {
        let o = op(256, 1, 0.0);
        let est = resolvent_norm_at(&o, 0.0, NormPair::L2).unwrap();
        assert!(est.converged);
        assert!(est.sigma >= 0.5 - 1e-2, "{}", est.sigma);
        let dense = sigma_min_dense(&o, 0.0, NormPair::L2).unwrap();
        assert!((est.sigma - dense.sigma).abs() < 1e-8 * dense.sigma);
    }

    #[test]
    fn iterative_agrees_with_dense_for_every_pair() {
        let o = op(160, 2, 300.0);
        for pair in [NormPair::L2, NormPair::X, NormPair::Hm1Shifted, NormPair::XHm1Shifted] {
            for s in [0.0, 40.0, -25.0] {
                let it = resolvent_norm_at(&o, s, pair).unwrap();
                let de = sigma_min_dense(&o, s, pair).unwrap();
                assert!((it.sigma - de.sigma).abs() < 1e-6 * de.sigma, "{pair} s={s}: {} vs {}", it.sigma, de.sigma);
            }
        }
    }

    #[test]
    fn large_shift_dominates() {
        let o = op(128, 1, 10.0);
        let row_sum = (0..128usize)
            .map(|i| (i.saturating_sub(1)..(i + 2).min(128)).map(|j| o.matrix().get(i, j).norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let s = 20.0 * row_sum;
        let est = resolvent_norm_at(&o, s, NormPair::L2).unwrap();
        assert!(est.sigma >= s - row_sum);
    }

    #[test]
    fn conjugate_symmetry_of_the_scan() {
        let cfg = ScanConfig { points: 24, ..ScanConfig::default() };
        let a = pseudospectral_bound(&op(192, 1, 500.0), &cfg).unwrap();
        let b = pseudospectral_bound(&op(192, -1, 500.0), &cfg).unwrap();
        let c = pseudospectral_bound(&op(192, 1, -500.0), &cfg).unwrap();
        assert!((a.psi - b.psi).abs() < 1e-8 * a.psi);
        assert!((a.psi - c.psi).abs() < 1e-8 * a.psi);
    }

    #[test]
    fn boundary_minimum_is_flagged() {
        let cfg = ScanConfig { points: 16, s_max: Some(5.0), include_negative: false, ..ScanConfig::default() };
        let r = pseudospectral_bound(&op(192, 1, 1e4), &cfg).unwrap();
        assert!(r.is_flagged(FLAG_UNRESOLVED), "{:?}", r.flags);
    }

    #[test]
    fn witness_rejects_bad_inputs() {
        let g = RadialGrid::uniform(256, 20.0).unwrap();
        assert!(matches!(sharpness_witness(0.5, &g), Err(Error::Config(_))));
        assert!(matches!(sharpness_witness(8.0, &g), Err(Error::InsufficientResolution(_))));
        let small = RadialGrid::uniform(4096, 4.0).unwrap();
        assert!(matches!(sharpness_witness(4.0, &small), Err(Error::Config(_))));
    }

    #[test]
    fn json_has_documented_keys() {
        let cfg = ScanConfig { points: 8, ..ScanConfig::default() };
        let r = pseudospectral_bound(&op(64, 1, 10.0), &cfg).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["k", "B", "norm_pair", "shifts", "sigma_min", "psi", "flags"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["norm_pair"], "L2->L2");
        assert_eq!(r.to_csv().lines().count(), r.shifts.len() + 1);
    }

    #[test]
    fn norm_pair_parsing() {
        assert_eq!("x".parse::<NormPair>().unwrap(), NormPair::X);
        assert_eq!("Hm1-shifted".parse::<NormPair>().unwrap(), NormPair::Hm1Shifted);
        assert!("h2".parse::<NormPair>().is_err());
    }
}
