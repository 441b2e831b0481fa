//! Complex band matrices with an LU factorization using partial pivoting.
//!
//! Storage is row-major: row `i` keeps columns `i - kl ..= i + ku`. The LU
//! factor keeps `kl` extra super-diagonals for the fill created by row swaps,
//! the same layout LAPACK's `gbtrf` uses.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![ZERO; n * (kl + ku + 1)] }
    }

    /// Tridiagonal matrix from its three diagonals. `lower[i]` sits at
    /// `(i + 1, i)` and `upper[i]` at `(i, i + 1)`.
    pub fn tridiagonal(lower: &[C64], diag: &[C64], upper: &[C64]) -> Self {
        let n = diag.len();
        assert_eq!(lower.len() + 1, n.max(1));
        assert_eq!(upper.len() + 1, n.max(1));
        let mut m = Self::zeros(n, 1, 1);
        for i in 0..n {
            m.set(i, i, diag[i]);
            if i + 1 < n {
                m.set(i, i + 1, upper[i]);
                m.set(i + 1, i, lower[i]);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            ZERO
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Adds `values[i]` to the diagonal entry of row `i`.
    pub fn add_diagonal(&mut self, values: &[C64]) {
        for (i, v) in values.iter().enumerate() {
            self.add(i, i, *v);
        }
    }

    pub fn add_identity(&mut self, shift: C64) {
        for i in 0..self.n {
            self.add(i, i, shift);
        }
    }

    pub fn scale(&mut self, factor: C64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Scales row `i` by `factors[i]`, i.e. left multiplication by a diagonal.
    pub fn scale_rows(&mut self, factors: &[f64]) {
        let w = self.kl + self.ku + 1;
        for (i, f) in factors.iter().enumerate() {
            for v in &mut self.data[i * w..(i + 1) * w] {
                *v *= *f;
            }
        }
    }

    /// Scales column `j` by `factors[j]`, i.e. right multiplication by a diagonal.
    pub fn scale_cols(&mut self, factors: &[f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                let k = self.idx(i, j);
                self.data[k] *= factors[j];
            }
        }
    }

    /// `alpha * self + beta * other` for matrices with identical band shape.
    pub fn linear_combination(&self, alpha: C64, other: &BandMatrix, beta: C64) -> BandMatrix {
        assert_eq!((self.n, self.kl, self.ku), (other.n, other.kl, other.ku));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect();
        BandMatrix { n: self.n, kl: self.kl, ku: self.ku, data }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut acc = ZERO;
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                acc += self.data[self.idx(i, j)] * xj;
            }
            *yi = acc;
        }
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> BandMatrix {
        BandMatrix { n: self.n, kl: self.kl, ku: self.ku, data: self.data.iter().map(|v| v.conj()).collect() }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> BandMatrix {
        let mut out = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n.saturating_sub(1));
            for j in lo..=hi {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn factor(&self) -> Result<BandLu> {
        BandLu::new(self)
    }
}

/// LU factors of a band matrix with row pivoting.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    // U has kl + ku super-diagonals after pivoting.
    ku_fill: usize,
    u: Vec<C64>,
    // multipliers[j * kl + (i - j - 1)] for rows below pivot j
    multipliers: Vec<C64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn new(a: &BandMatrix) -> Result<Self> {
        let n = a.n;
        let kl = a.kl;
        let ku_fill = a.ku + a.kl;
        let width = kl + ku_fill + 1;
        // working row i covers columns i - kl ..= i + ku_fill
        let mut w = vec![ZERO; n * width];
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + a.ku).min(n.saturating_sub(1));
            for j in lo..=hi {
                w[at(i, j)] = a.get(i, j);
            }
        }
        let mut multipliers = vec![ZERO; n * kl.max(1)];
        let mut pivots = vec![0usize; n];

        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = w[at(j, j)].norm();
            for i in j + 1..=last {
                let v = w[at(i, j)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularMatrix { row: j });
            }
            pivots[j] = p;
            let cmax = (j + ku_fill).min(n - 1);
            if p != j {
                for c in j..=cmax {
                    w.swap(at(j, c), at(p, c));
                }
            }
            let pivot = w[at(j, j)];
            for i in j + 1..=last {
                let f = w[at(i, j)] / pivot;
                multipliers[j * kl + (i - j - 1)] = f;
                w[at(i, j)] = ZERO;
                if f != ZERO {
                    for c in j + 1..=cmax {
                        let u = w[at(j, c)];
                        w[at(i, c)] -= f * u;
                    }
                }
            }
        }

        // keep only the upper part: row i, columns i ..= i + ku_fill
        let uw = ku_fill + 1;
        let mut u = vec![ZERO; n * uw];
        for i in 0..n {
            let hi = (i + ku_fill).min(n - 1);
            for c in i..=hi {
                u[i * uw + (c - i)] = w[at(i, c)];
            }
        }
        Ok(Self { n, kl, ku_fill, u, multipliers, pivots })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                x.swap(j, p);
            }
            let xj = x[j];
            let last = (j + kl).min(n - 1);
            for i in j + 1..=last {
                x[i] -= self.multipliers[j * kl + (i - j - 1)] * xj;
            }
        }
        let uw = self.ku_fill + 1;
        for i in (0..n).rev() {
            let hi = (i + self.ku_fill).min(n - 1);
            let row = &self.u[i * uw..(i + 1) * uw];
            let mut acc = x[i];
            for c in i + 1..=hi {
                acc -= row[c - i] * x[c];
            }
            x[i] = acc / row[0];
        }
    }
}
