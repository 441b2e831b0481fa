//! Mode-wise stream function.
//!
//! For `k != 0` the equation `(d^2/dr^2 - (k^2 - 1/4)/r^2) phi = e^{-r^2/8} w`
//! is solved for the smooth variable `phi_breve = phi / r^{1/2}`, which obeys
//! `phi_breve'' + phi_breve'/r - k^2 phi_breve / r^2 = f w` with
//! `f = e^{-r^2/8} / r^{1/2}`. Fourth-order central stencils are closed with
//! parity ghosts at the origin (`phi_breve(-r) = (-1)^k phi_breve(r)`) and
//! with the decaying homogeneous branch `r^{-|k|}` past the outer node.
//! The zero mode only enters through `d phi_breve / dr`, which is a
//! cumulative integral of the source.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix, C64};
use crate::error::{check_len, Error, Result};
use crate::grid::{f_weight, GridFunction, GridScheme, RadialGrid};

const D2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const D1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StreamPair {
    pub k: i32,
    pub phi: GridFunction,
    pub phi_breve: GridFunction,
    /// `d phi_breve / dr`.
    pub dphi_breve: GridFunction,
}

impl StreamPair {
    pub fn zero(k: i32, n: usize) -> Self {
        Self {
            k,
            phi: GridFunction::zeros(n),
            phi_breve: GridFunction::zeros(n),
            dphi_breve: GridFunction::zeros(n),
        }
    }

    /// `phi'` recovered from `phi_breve`.
    pub fn dphi(&self, grid: &RadialGrid) -> GridFunction {
        GridFunction::new(
            grid.nodes()
                .iter()
                .zip(self.phi_breve.values().iter().zip(self.dphi_breve.values()))
                .map(|(&r, (&p, &dp))| r.sqrt() * (dp + p / (2.0 * r)))
                .collect(),
        )
    }
}

/// Factorized stream operator for one mode on one grid.
#[derive(Debug, Clone)]
pub struct StreamSolver {
    grid: Arc<RadialGrid>,
    k: i32,
    lu: Option<BandLu>,
}

fn require_uniform(grid: &RadialGrid) -> Result<f64> {
    if grid.scheme() != GridScheme::Uniform {
        return Err(Error::Config("the stream solver needs a uniform grid".into()));
    }
    Ok(grid.r_max() / grid.len() as f64)
}

/// Ghost values outside the grid as multiples of interior values:
/// index `-1 -> s u_0`, `-2 -> s u_1`, `n -> rho_1 u_{n-1}`, `n+1 -> rho_2 u_{n-1}`.
struct Ghosts {
    parity: f64,
    rho: [f64; 2],
}

impl Ghosts {
    fn new(grid: &RadialGrid, k: i32, h: f64) -> Self {
        let m = k.unsigned_abs() as i32;
        let last = *grid.nodes().last().unwrap();
        let parity = if m % 2 == 0 { 1.0 } else { -1.0 };
        let rho = [(last / (last + h)).powi(m), (last / (last + 2.0 * h)).powi(m)];
        Self { parity, rho }
    }

    /// Column and factor that stand in for column `j`.
    fn resolve(&self, j: isize, n: usize) -> (usize, f64) {
        let n = n as isize;
        match j {
            -1 => (0, self.parity),
            -2 => (1, self.parity),
            j if j >= n => ((n - 1) as usize, self.rho[(j - n) as usize]),
            j => (j as usize, 1.0),
        }
    }
}

fn apply_stencil(grid: &RadialGrid, ghosts: &Ghosts, coef: &[f64; 5], scale: f64, u: &[C64]) -> Vec<C64> {
    let n = grid.len();
    (0..n)
        .map(|i| {
            let mut acc = C64::new(0.0, 0.0);
            for (o, &c) in coef.iter().enumerate() {
                let (j, f) = ghosts.resolve(i as isize + o as isize - 2, n);
                acc += u[j] * (c * f);
            }
            acc * scale
        })
        .collect()
}

impl StreamSolver {
    pub fn new(grid: Arc<RadialGrid>, k: i32) -> Result<Self> {
        let h = require_uniform(&grid)?;
        if k == 0 {
            return Ok(Self { grid, k, lu: None });
        }
        let n = grid.len();
        let ghosts = Ghosts::new(&grid, k, h);
        let k2 = (k as f64) * (k as f64);
        let mut a = BandMatrix::zeros(n, 2, 2);
        for (i, &r) in grid.nodes().iter().enumerate() {
            for o in 0..5 {
                let c = D2[o] / (12.0 * h * h) + D1[o] / (12.0 * h * r);
                let (j, f) = ghosts.resolve(i as isize + o as isize - 2, n);
                a.add(i, j, C64::new(c * f, 0.0));
            }
            a.add(i, i, C64::new(-k2 / (r * r), 0.0));
        }
        let lu = a.factor()?;
        Ok(Self { grid, k, lu: Some(lu) })
    }

    pub fn k(&self) -> i32 {
        self.k
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn solve(&self, w: &GridFunction) -> Result<StreamPair> {
        let grid = &*self.grid;
        check_len(grid.len(), w.len())?;
        if !w.is_finite() {
            return Err(Error::NonFinite("stream source".into()));
        }
        let h = require_uniform(grid)?;
        let q: Vec<C64> = w.values().iter().zip(grid.nodes()).map(|(v, &r)| v * f_weight(r)).collect();
        let (phi_breve, dphi_breve) = match &self.lu {
            Some(lu) => {
                let u = lu.solve(&q);
                let ghosts = Ghosts::new(grid, self.k, h);
                let du = apply_stencil(grid, &ghosts, &D1, 1.0 / (12.0 * h), &u);
                (u, du)
            }
            None => zero_mode(grid, h, &q),
        };
        let phi = phi_breve.iter().zip(grid.nodes()).map(|(p, &r)| p * r.sqrt()).collect();
        Ok(StreamPair {
            k: self.k,
            phi: GridFunction::new(phi),
            phi_breve: GridFunction::new(phi_breve),
            dphi_breve: GridFunction::new(dphi_breve),
        })
    }

    /// Residual of the discrete equations, `max |A phi_breve - f w|`, relative
    /// to `max |f w|`.
    pub fn residual(&self, pair: &StreamPair, w: &GridFunction) -> Result<f64> {
        let grid = &*self.grid;
        check_len(grid.len(), w.len())?;
        if self.k == 0 {
            return Ok(0.0);
        }
        let h = require_uniform(grid)?;
        let ghosts = Ghosts::new(grid, self.k, h);
        let u = pair.phi_breve.values();
        let d2 = apply_stencil(grid, &ghosts, &D2, 1.0 / (12.0 * h * h), u);
        let d1 = apply_stencil(grid, &ghosts, &D1, 1.0 / (12.0 * h), u);
        let k2 = (self.k as f64).powi(2);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (i, &r) in grid.nodes().iter().enumerate() {
            let q = w.values()[i] * f_weight(r);
            let lhs = d2[i] + d1[i] / r - u[i] * (k2 / (r * r));
            worst = worst.max((lhs - q).norm());
            scale = scale.max(q.norm());
        }
        Ok(if scale > 0.0 { worst / scale } else { worst })
    }
}

/// `d phi_breve_0/dr = (1/r) int_0^r s q(s) ds` by piecewise-cubic cumulative
/// quadrature; `phi_breve_0` is then normalized to vanish at the last node.
fn zero_mode(grid: &RadialGrid, h: f64, q: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let n = grid.len();
    let r = grid.nodes();
    let f: Vec<C64> = q.iter().zip(r).map(|(v, &s)| v * s).collect();
    // the integrand is odd in r
    let at = |j: isize| -> C64 {
        if j < 0 {
            -f[(-j - 1) as usize]
        } else if j as usize >= n {
            C64::new(0.0, 0.0)
        } else {
            f[j as usize]
        }
    };
    let mut cum = vec![C64::new(0.0, 0.0); n];
    cum[0] = (f[0] * 102.0 - f[1] * 2.0) * (h / 384.0);
    for i in 1..n {
        let j = i as isize - 1;
        cum[i] = cum[i - 1] + (-at(j - 1) + at(j) * 13.0 + at(j + 1) * 13.0 - at(j + 2)) * (h / 24.0);
    }
    let d: Vec<C64> = cum.iter().zip(r).map(|(c, &s)| c / s).collect();
    let mut p = vec![C64::new(0.0, 0.0); n];
    for i in (0..n - 1).rev() {
        let j = i as isize;
        let get = |m: isize| if m as usize >= n { d[n - 1] } else { d[m as usize] };
        let lo = if i == 0 { d[0] * -1.0 } else { d[i - 1] };
        let cell = (-lo + d[i] * 13.0 + d[i + 1] * 13.0 - get(j + 2)) * (h / 24.0);
        p[i] = p[i + 1] - cell;
    }
    (p, d)
}

pub fn solve_stream(w: &GridFunction, k: i32, grid: Arc<RadialGrid>) -> Result<StreamPair> {
    StreamSolver::new(grid, k)?.solve(w)
}

/// Empirical constants in the five weighted elliptic bounds, each divided by
/// `|r^{b/2+1} e^{-r^2/8} w|`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EllipticBounds {
    pub second_l2: f64,
    pub first_sup: f64,
    pub first_l2: f64,
    pub value_sup: f64,
    pub value_l2: f64,
}

impl EllipticBounds {
    fn max(self, o: Self) -> Self {
        Self {
            second_l2: self.second_l2.max(o.second_l2),
            first_sup: self.first_sup.max(o.first_sup),
            first_l2: self.first_l2.max(o.first_l2),
            value_sup: self.value_sup.max(o.value_sup),
            value_l2: self.value_l2.max(o.value_l2),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.second_l2, self.first_sup, self.first_l2, self.value_sup, self.value_l2]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticAuditReport {
    pub k: i32,
    pub beta: f64,
    pub samples: usize,
    pub max_ratios: EllipticBounds,
    /// `min Re<-w~, r^b phi> / (k^2 |r^{b/2-1} phi|^2)` over the samples.
    pub min_coercivity_ratio: f64,
    /// `1 - b^2 / (4 k^2)`, the floor implied by the weighted Hardy inequality.
    pub hardy_floor: f64,
}

impl EllipticAuditReport {
    pub fn coercivity_holds(&self, slack: f64) -> bool {
        self.samples == 0 || self.min_coercivity_ratio >= self.hardy_floor.max(0.0) - slack
    }
}

pub const AUDIT_BETAS: [f64; 6] = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0];

/// Bound ratios and the coercivity ratio for one solved pair.
pub fn elliptic_ratios(grid: &RadialGrid, pair: &StreamPair, w: &GridFunction, beta: f64) -> Result<(EllipticBounds, f64)> {
    check_len(grid.len(), w.len())?;
    check_len(grid.len(), pair.phi.len())?;
    let k = pair.k.unsigned_abs() as f64;
    let nodes = grid.nodes();
    let phi = pair.phi.values();
    let wt: Vec<C64> = w.values().iter().zip(nodes).map(|(v, &r)| v * (-0.125 * r * r).exp()).collect();
    let d1 = pair.dphi(grid);
    let d2: Vec<C64> = wt
        .iter()
        .zip(phi)
        .zip(nodes)
        .map(|((&g, &p), &r)| g + p * ((k * k - 0.25) / (r * r)))
        .collect();
    let rhs = grid.weighted_l2(&wt, |r| r.powf(beta + 2.0));
    let sup = |v: &[C64], e: f64| v.iter().zip(nodes).map(|(x, &r)| x.norm() * r.powf(e)).fold(0.0, f64::max);
    let lo = grid.weighted_l2(phi, |r| r.powf(beta - 2.0));
    let raw = EllipticBounds {
        second_l2: grid.weighted_l2(&d2, |r| r.powf(beta + 2.0)),
        first_sup: k.sqrt() * sup(d1.values(), 0.5 * (beta + 1.0)),
        first_l2: k * grid.weighted_l2(d1.values(), |r| r.powf(beta)),
        value_sup: k.powf(1.5) * sup(phi, 0.5 * (beta - 1.0)),
        value_l2: k * k * lo,
    };
    let form = -grid.inner_weighted(&wt, phi, |r| r.powf(beta)).re;
    if rhs == 0.0 {
        return Ok((EllipticBounds::default(), 0.0));
    }
    let ratios = EllipticBounds {
        second_l2: raw.second_l2 / rhs,
        first_sup: raw.first_sup / rhs,
        first_l2: raw.first_l2 / rhs,
        value_sup: raw.value_sup / rhs,
        value_l2: raw.value_l2 / rhs,
    };
    let coercive = if lo > 0.0 { form / (k * k * lo * lo) } else { 0.0 };
    Ok((ratios, coercive))
}

pub fn elliptic_estimate_audit(
    grid: Arc<RadialGrid>,
    k: i32,
    beta: f64,
    samples: &[GridFunction],
) -> Result<EllipticAuditReport> {
    if k == 0 {
        return Err(Error::ZeroMode);
    }
    let solver = StreamSolver::new(grid.clone(), k)?;
    let mut max_ratios = EllipticBounds::default();
    let mut min_coercivity_ratio = f64::INFINITY;
    let mut counted = 0;
    for w in samples {
        let pair = solver.solve(w)?;
        let (b, c) = elliptic_ratios(&grid, &pair, w, beta)?;
        if w.is_zero() {
            continue;
        }
        counted += 1;
        max_ratios = max_ratios.max(b);
        min_coercivity_ratio = min_coercivity_ratio.min(c);
    }
    if counted == 0 {
        min_coercivity_ratio = 0.0;
    }
    let k2 = (k as f64).powi(2);
    Ok(EllipticAuditReport {
        k,
        beta,
        samples: counted,
        max_ratios,
        min_coercivity_ratio,
        hardy_floor: 1.0 - beta * beta / (4.0 * k2),
    })
}
