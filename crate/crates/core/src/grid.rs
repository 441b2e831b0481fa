//! Cell-centred radial grid on `(0, r_max)`, quadrature, derivative stencils
//! and the norms used throughout the crate.
//!
//! Nodes sit at cell centres, so `r = 0` and `r = r_max` are cell faces where
//! homogeneous Dirichlet values are imposed. The second-derivative stencil is
//! the finite-volume form `W^{-1} K` with `W` the cell widths and `K` the
//! Dirichlet stiffness matrix, which keeps `W L` symmetric for every operator
//! assembled from it.

use serde::{Deserialize, Serialize};

use crate::banded::{BandMatrix, C64};
use crate::error::{check_len, Error, Result};

pub const MIN_NODES: usize = 16;

/// Default truncation radius: the `r^2/16` confinement makes tails beyond 20
/// negligible at double precision.
pub const DEFAULT_R_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScheme {
    Uniform,
    /// `sinh` stretching that clusters nodes near the origin.
    Stretched,
}

/// Serializable description of a grid, embedded in every output file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub r_max: f64,
    pub scheme: GridScheme,
}

impl GridSpec {
    pub fn build(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.n, self.r_max, self.scheme)
    }
}

const STRETCH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    faces: Vec<f64>,
    r_max: f64,
    scheme: GridScheme,
}

impl RadialGrid {
    pub fn new(n: usize, r_max: f64, scheme: GridScheme) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::Config(format!("grid needs at least {MIN_NODES} nodes, got {n}")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::Config(format!("r_max must be positive and finite, got {r_max}")));
        }
        let nodes: Vec<f64> = match scheme {
            GridScheme::Uniform => {
                let h = r_max / n as f64;
                (0..n).map(|i| (i as f64 + 0.5) * h).collect()
            }
            GridScheme::Stretched => (0..n)
                .map(|i| {
                    let xi = (i as f64 + 0.5) / n as f64;
                    r_max * (STRETCH * xi).sinh() / STRETCH.sinh()
                })
                .collect(),
        };
        let mut faces = Vec::with_capacity(n + 1);
        faces.push(0.0);
        match scheme {
            GridScheme::Uniform => {
                let h = r_max / n as f64;
                faces.extend((1..n).map(|i| i as f64 * h));
            }
            GridScheme::Stretched => faces.extend(nodes.windows(2).map(|p| 0.5 * (p[0] + p[1]))),
        }
        faces.push(r_max);
        let weights = faces.windows(2).map(|f| f[1] - f[0]).collect();
        Ok(Self { nodes, weights, faces, r_max, scheme })
    }

    pub fn uniform(n: usize, r_max: f64) -> Result<Self> {
        Self::new(n, r_max, GridScheme::Uniform)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { n: self.len(), r_max: self.r_max, scheme: self.scheme }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn scheme(&self) -> GridScheme {
        self.scheme
    }

    /// Largest cell width.
    pub fn max_spacing(&self) -> f64 {
        self.weights.iter().cloned().fold(0.0, f64::max)
    }

    /// Number of nodes strictly inside `(a, b)`.
    pub fn nodes_in(&self, a: f64, b: f64) -> usize {
        self.nodes.iter().filter(|&&r| r > a && r < b).count()
    }

    pub fn sample<F: Fn(f64) -> C64>(&self, f: F) -> GridFunction {
        GridFunction::new(self.nodes.iter().map(|&r| f(r)).collect())
    }

    pub fn sample_real<F: Fn(f64) -> f64>(&self, f: F) -> GridFunction {
        GridFunction::new(self.nodes.iter().map(|&r| C64::new(f(r), 0.0)).collect())
    }

    /// `sum_i w_i f(r_i)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&r, &w)| w * f(r)).sum()
    }

    /// Weighted inner product `<f, g> = sum_i w_i f_i conj(g_i)`.
    pub fn inner(&self, f: &[C64], g: &[C64]) -> C64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        self.weights.iter().zip(f.iter().zip(g)).map(|(w, (a, b))| a * b.conj() * *w).sum()
    }

    /// `<f, m g>` for a real pointwise multiplier `m`.
    pub fn inner_weighted(&self, f: &[C64], g: &[C64], m: impl Fn(f64) -> f64) -> C64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(f.iter().zip(g))
            .map(|((&r, &w), (a, b))| a * b.conj() * (w * m(r)))
            .sum()
    }

    /// `(sum_i w_i m(r_i) |f_i|^2)^{1/2}`.
    pub fn weighted_l2(&self, f: &[C64], m: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(f)
            .map(|((&r, &w), v)| w * m(r) * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Face conductances `1 / (r_{i+1} - r_i)` including the two boundary
    /// faces, where the neighbour value is the Dirichlet zero on the face.
    pub(crate) fn conductances(&self) -> Vec<f64> {
        let n = self.len();
        let mut c = Vec::with_capacity(n + 1);
        c.push(1.0 / self.nodes[0]);
        c.extend(self.nodes.windows(2).map(|p| 1.0 / (p[1] - p[0])));
        c.push(1.0 / (self.r_max - self.nodes[n - 1]));
        c
    }

    /// Dirichlet stiffness matrix `K`: `v^H K v` approximates `int |v'|^2`.
    pub fn stiffness(&self) -> BandMatrix {
        let n = self.len();
        let c = self.conductances();
        let diag: Vec<C64> = (0..n).map(|i| C64::new(c[i] + c[i + 1], 0.0)).collect();
        let off: Vec<C64> = (1..n).map(|i| C64::new(-c[i], 0.0)).collect();
        BandMatrix::tridiagonal(&off, &diag, &off)
    }

    /// Stiffness of `-d^2/dr^2 - 1/(4 r^2)` written as `-r^{1/2} (1/r) (r (r^{-1/2} v)')'`:
    /// `v^H K v` approximates `int r |(r^{-1/2} v)'|^2`. The face at the origin carries
    /// no flux, the outer face is Dirichlet.
    pub fn radial_stiffness(&self) -> BandMatrix {
        let n = self.len();
        let c = self.conductances();
        let r = &self.nodes;
        let f = &self.faces;
        let diag: Vec<C64> = (0..n)
            .map(|i| {
                let inner = if i == 0 { 0.0 } else { c[i] * f[i] };
                C64::new((inner + c[i + 1] * f[i + 1]) / r[i], 0.0)
            })
            .collect();
        let off: Vec<C64> = (1..n).map(|i| C64::new(-c[i] * f[i] / (r[i - 1] * r[i]).sqrt(), 0.0)).collect();
        BandMatrix::tridiagonal(&off, &diag, &off)
    }

    /// Discrete `-d^2/dr^2` with homogeneous Dirichlet faces, `W^{-1} K`.
    pub fn neg_laplacian(&self) -> BandMatrix {
        let mut k = self.stiffness();
        let inv: Vec<f64> = self.weights.iter().map(|w| 1.0 / w).collect();
        k.scale_rows(&inv);
        k
    }

    /// `S = W + K`, the discrete H^1 Gram matrix.
    pub fn h1_gram(&self) -> BandMatrix {
        let mut s = self.stiffness();
        let w: Vec<C64> = self.weights.iter().map(|&w| C64::new(w, 0.0)).collect();
        s.add_diagonal(&w);
        s
    }

    /// Skew-adjoint central first derivative with zero extension, so that
    /// `<D f, g> = -<f, D g>` holds exactly on the grid.
    pub fn first_derivative(&self) -> BandMatrix {
        let n = self.len();
        let diag = vec![C64::new(0.0, 0.0); n];
        let upper: Vec<C64> = (0..n - 1).map(|i| C64::new(0.5 / self.weights[i], 0.0)).collect();
        let lower: Vec<C64> = (1..n).map(|i| C64::new(-0.5 / self.weights[i], 0.0)).collect();
        BandMatrix::tridiagonal(&lower, &diag, &upper)
    }

    pub fn differentiate(&self, f: &GridFunction, order: DerivativeOrder) -> Result<GridFunction> {
        check_len(self.len(), f.len())?;
        let values = match order {
            DerivativeOrder::First => self.first_derivative().apply(f.values()),
            DerivativeOrder::Second => {
                let mut v = self.neg_laplacian().apply(f.values());
                v.iter_mut().for_each(|x| *x = -*x);
                v
            }
        };
        Ok(GridFunction::new(values))
    }

    pub fn norm(&self, f: &GridFunction, which: NormKind) -> Result<f64> {
        check_len(self.len(), f.len())?;
        let v = f.values();
        Ok(match which {
            NormKind::L2 => self.weighted_l2(v, |_| 1.0),
            NormKind::X => self.weighted_l2(v, |r| 1.0 / (r * r)),
            NormKind::M => self.weighted_l2(v, |r| r * (0.25 * r * r).exp()),
            NormKind::H1 => {
                let s = self.h1_gram();
                quadratic_form(&s, v).sqrt()
            }
            NormKind::Hm1 => {
                let wf: Vec<C64> = v.iter().zip(&self.weights).map(|(x, w)| x * *w).collect();
                let y = self.h1_gram().factor()?.solve(&wf);
                wf.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum::<f64>().max(0.0).sqrt()
            }
        })
    }
}

/// `Re(v^H A v)` for a band matrix.
pub(crate) fn quadratic_form(a: &BandMatrix, v: &[C64]) -> f64 {
    let av = a.apply(v);
    v.iter().zip(&av).map(|(x, y)| (x.conj() * y).re).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeOrder {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    /// `L^2` with weight `1/r^2`.
    X,
    H1,
    /// Dual of the Dirichlet `H^1` form.
    Hm1,
    /// `L^2` with weight `r e^{r^2/4}`.
    M,
}

/// Complex samples aligned with the nodes of a [`RadialGrid`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: Vec<C64>,
}

impl GridFunction {
    pub fn new(values: Vec<C64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self { values: values.iter().map(|&v| C64::new(v, 0.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == C64::new(0.0, 0.0))
    }

    pub fn conj(&self) -> GridFunction {
        GridFunction::new(self.values.iter().map(|v| v.conj()).collect())
    }

    pub fn scaled(&self, s: C64) -> GridFunction {
        GridFunction::new(self.values.iter().map(|v| v * s).collect())
    }

    /// Pointwise multiplication by `m(r_i)`.
    pub fn mul_by(&self, grid: &RadialGrid, m: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::new(self.values.iter().zip(grid.nodes()).map(|(v, &r)| v * m(r)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `e^{-r^2/8} / r^{1/2}`, the weight relating the working variable to the
/// rescaled vorticity.
pub fn f_weight(r: f64) -> f64 {
    (-0.125 * r * r).exp() / r.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_nodes_are_cell_centres() {
        let g = RadialGrid::uniform(16, 8.0).unwrap();
        let expected: Vec<f64> = (0..16).map(|i| 0.25 + 0.5 * i as f64).collect();
        assert_eq!(g.nodes(), expected.as_slice());
        assert_eq!(g.nodes()[0], 0.25);
        assert_eq!(*g.nodes().last().unwrap(), 7.75);
    }

    #[test]
    fn too_few_nodes_is_a_config_error() {
        assert!(matches!(RadialGrid::uniform(4, 1.0), Err(Error::Config(_))));
        assert!(matches!(RadialGrid::uniform(32, -1.0), Err(Error::Config(_))));
        assert!(matches!(RadialGrid::uniform(32, f64::NAN), Err(Error::Config(_))));
    }

    #[test]
    fn weights_sum_to_domain_length() {
        let g = RadialGrid::uniform(1024, 20.0).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 20.0).abs() < 1e-10);
        let s = RadialGrid::new(1024, 20.0, GridScheme::Stretched).unwrap();
        assert!((s.weights().iter().sum::<f64>() - 20.0).abs() < 1e-10);
        assert!(s.weights().iter().all(|&w| w > 0.0));
        assert!(s.nodes().windows(2).all(|p| p[1] > p[0]));
        assert!(s.nodes()[0] < g.nodes()[0]);
    }

    #[test]
    fn zero_function_has_zero_norms() {
        let g = RadialGrid::uniform(64, 10.0).unwrap();
        let z = GridFunction::zeros(64);
        for kind in [NormKind::L2, NormKind::X, NormKind::H1, NormKind::Hm1, NormKind::M] {
            assert_eq!(g.norm(&z, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn x_norm_of_identity_on_unit_interval() {
        // X-norm of f(r) = r on (0, 1] is (int_0^1 1 dr)^{1/2} = 1
        let g = RadialGrid::uniform(256, 1.0).unwrap();
        let f = g.sample_real(|r| r);
        assert_relative_eq!(g.norm(&f, NormKind::X).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn m_norm_cancels_the_f_weight() {
        let g = RadialGrid::uniform(512, 20.0).unwrap();
        let base = g.sample(|r| C64::new((-(r - 3.0) * (r - 3.0)).exp(), (r * 0.3).sin() * (-r).exp()));
        let weighted = base.mul_by(&g, f_weight);
        let m = g.norm(&weighted, NormKind::M).unwrap();
        let l2 = g.norm(&base, NormKind::L2).unwrap();
        assert_relative_eq!(m, l2, max_relative = 1e-13);
        let over_r = weighted.mul_by(&g, |r| 1.0 / r);
        let x = g.norm(&base, NormKind::X).unwrap();
        assert_relative_eq!(g.norm(&over_r, NormKind::M).unwrap(), x, max_relative = 1e-13);
    }

    #[test]
    fn second_derivative_of_quadratic_is_two_in_interior() {
        let g = RadialGrid::uniform(64, 4.0).unwrap();
        let f = g.sample_real(|r| r * r);
        let d2 = g.differentiate(&f, DerivativeOrder::Second).unwrap();
        for v in &d2.values()[1..63] {
            assert!((v.re - 2.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn first_derivative_of_sine_is_second_order() {
        let mut errs = Vec::new();
        for n in [128usize, 256, 512] {
            let g = RadialGrid::uniform(n, 6.0).unwrap();
            let f = g.sample_real(f64::sin);
            let d = g.differentiate(&f, DerivativeOrder::First).unwrap();
            let err = d.values()[1..n - 1]
                .iter()
                .zip(&g.nodes()[1..n - 1])
                .map(|(v, &r)| (v.re - r.cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        let order = (errs[1] / errs[2]).log2();
        assert!(order > 1.9, "observed order {order}, errs {errs:?}");
        assert!(errs[2] < 1e-4);
    }

    #[test]
    fn derivatives_of_zero_vanish() {
        let g = RadialGrid::uniform(32, 3.0).unwrap();
        let z = GridFunction::zeros(32);
        assert!(g.differentiate(&z, DerivativeOrder::First).unwrap().is_zero());
        assert!(g.differentiate(&z, DerivativeOrder::Second).unwrap().is_zero());
    }

    #[test]
    fn mismatched_length_is_rejected() {
        let g = RadialGrid::uniform(32, 3.0).unwrap();
        let f = GridFunction::zeros(31);
        assert!(matches!(g.norm(&f, NormKind::L2), Err(Error::ShapeMismatch { .. })));
        assert!(g.differentiate(&f, DerivativeOrder::First).is_err());
    }

    #[test]
    fn quadrature_converges_at_second_order() {
        // endpoint values do not vanish, so the midpoint rule is exactly O(h^2)
        let f = |r: f64| (0.7 * r).cos() + r;
        let mut vals = Vec::new();
        for n in [64usize, 128, 256, 512] {
            let g = RadialGrid::uniform(n, 3.0).unwrap();
            let v = g.sample_real(f);
            vals.push(g.norm(&v, NormKind::L2).unwrap());
        }
        let d1 = (vals[1] - vals[2]).abs();
        let d2 = (vals[2] - vals[3]).abs();
        assert!((d1 / d2).log2() >= 1.9, "{vals:?}");
    }
}
