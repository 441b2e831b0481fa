//! Smooth, seeded test functions with closed-form derivatives.
//!
//! Audits sample the quadratic forms of the operators on these; oracles use
//! the exact derivatives so that they never share a discretization with the
//! code they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banded::C64;
use crate::grid::{GridFunction, RadialGrid};

/// One smooth profile together with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bump {
    /// `a exp(-(r - c)^2 / (2 s^2))`.
    Gaussian { amplitude: C64, center: f64, width: f64 },
    /// `a exp(1 - 1/(1 - x^2))` for `x = (r - c)/h` in `(-1, 1)`, zero outside.
    Compact { amplitude: C64, center: f64, half_width: f64 },
}

impl Bump {
    /// `(value, first derivative, second derivative)` at `r`.
    pub fn eval(&self, r: f64) -> (C64, C64, C64) {
        match *self {
            Bump::Gaussian { amplitude, center, width } => {
                let x = (r - center) / width;
                let g = (-0.5 * x * x).exp();
                let d1 = -x / width * g;
                let d2 = (x * x - 1.0) / (width * width) * g;
                (amplitude * g, amplitude * d1, amplitude * d2)
            }
            Bump::Compact { amplitude, center, half_width } => {
                let x = (r - center) / half_width;
                if x.abs() >= 1.0 {
                    let z = C64::new(0.0, 0.0);
                    return (z, z, z);
                }
                let q = 1.0 - x * x;
                let b = (1.0 - 1.0 / q).exp();
                // d/dx of -1/q is -2x/q^2
                let p = -2.0 * x / (q * q);
                let dp = -2.0 / (q * q) - 8.0 * x * x / (q * q * q);
                let d1 = p * b / half_width;
                let d2 = (dp + p * p) * b / (half_width * half_width);
                (amplitude * b, amplitude * d1, amplitude * d2)
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            Bump::Gaussian { center, width, .. } => (center - 9.0 * width, center + 9.0 * width),
            Bump::Compact { center, half_width, .. } => (center - half_width, center + half_width),
        }
    }
}

/// Sum of bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothProfile {
    pub bumps: Vec<Bump>,
}

impl SmoothProfile {
    pub fn new(bumps: Vec<Bump>) -> Self {
        Self { bumps }
    }

    pub fn zero() -> Self {
        Self { bumps: Vec::new() }
    }

    /// Compact bump of unit amplitude supported on `[a, b]`.
    pub fn compact_on(a: f64, b: f64) -> Self {
        Self::new(vec![Bump::Compact {
            amplitude: C64::new(1.0, 0.0),
            center: 0.5 * (a + b),
            half_width: 0.5 * (b - a),
        }])
    }

    pub fn eval(&self, r: f64) -> (C64, C64, C64) {
        let z = C64::new(0.0, 0.0);
        self.bumps.iter().fold((z, z, z), |acc, b| {
            let (v, d1, d2) = b.eval(r);
            (acc.0 + v, acc.1 + d1, acc.2 + d2)
        })
    }

    pub fn value(&self, r: f64) -> C64 {
        self.eval(r).0
    }

    pub fn sample(&self, grid: &RadialGrid) -> GridFunction {
        grid.sample(|r| self.value(r))
    }

    pub fn sample_derivatives(&self, grid: &RadialGrid) -> (GridFunction, GridFunction, GridFunction) {
        let mut v = Vec::with_capacity(grid.len());
        let mut d1 = Vec::with_capacity(grid.len());
        let mut d2 = Vec::with_capacity(grid.len());
        for &r in grid.nodes() {
            let (a, b, c) = self.eval(r);
            v.push(a);
            d1.push(b);
            d2.push(c);
        }
        (GridFunction::new(v), GridFunction::new(d1), GridFunction::new(d2))
    }
}

/// Generator for random Dirichlet test functions: 3 to 8 Gaussian bumps with
/// complex amplitudes, centred in `[r_lo, r_hi]` and narrow enough that they
/// vanish to round-off at both ends of the domain.
#[derive(Debug, Clone)]
pub struct TestFunctionSampler {
    rng: ChaCha8Rng,
    r_lo: f64,
    r_hi: f64,
    min_width: f64,
}

impl TestFunctionSampler {
    pub fn new(seed: u64, r_lo: f64, r_hi: f64, min_width: f64) -> Self {
        assert!(r_lo > 0.0 && r_hi > r_lo && min_width > 0.0);
        let r_lo = r_lo.max(9.0 * min_width).min(r_hi);
        Self { rng: ChaCha8Rng::seed_from_u64(seed), r_lo, r_hi, min_width }
    }

    /// Sampler matched to a grid: centres in `[max(2h, 0.5), r_max/2]` (pushed
    /// out further when the minimum width demands it), widths resolved by at
    /// least six cells.
    pub fn for_grid(grid: &RadialGrid, seed: u64) -> Self {
        let h = grid.max_spacing();
        let lo = (2.0 * h).max(0.5);
        Self::new(seed, lo, 0.5 * grid.r_max(), 6.0 * h)
    }

    pub fn next_profile(&mut self) -> SmoothProfile {
        let count = self.rng.gen_range(3..=8);
        let bumps = (0..count)
            .map(|_| {
                let center = self.rng.gen_range(self.r_lo..=self.r_hi);
                // keep exp(-c^2 / 2 s^2) below 1e-17 at the origin
                let max_width = (center / 9.0).max(self.min_width);
                let width = self.rng.gen_range(self.min_width..=max_width.max(self.min_width * 1.0001));
                let phase = self.rng.gen_range(0.0..std::f64::consts::TAU);
                let mag = self.rng.gen_range(0.2..1.0);
                Bump::Gaussian { amplitude: C64::from_polar(mag, phase), center, width }
            })
            .collect();
        SmoothProfile::new(bumps)
    }

    pub fn next_sample(&mut self, grid: &RadialGrid) -> GridFunction {
        self.next_profile().sample(grid)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }
}
