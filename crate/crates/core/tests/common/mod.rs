//! Oracles shared by the integration tests. Nothing here touches the grid
//! stencils of the library: integrals are done with composite Gauss-Legendre
//! on closed-form integrands.

#![allow(dead_code)]

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut q0, mut q1) = (1.0, z);
                for j in 2..=n {
                    let q2 = ((2 * j - 1) as f64 * z * q1 - (j - 1) as f64 * q0) / j as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let d = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * d * d);
                break;
            }
        }
    }
    (x, w)
}

/// Composite 16-point Gauss-Legendre on `[a, b]` with panels of width at most `panel`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panel: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (x, w) = gauss_legendre(16);
    let m = ((b - a) / panel).ceil().max(1.0) as usize;
    let h = (b - a) / m as f64;
    let mut s = 0.0;
    for p in 0..m {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(lo + 0.5 * h * (xi + 1.0));
        }
    }
    0.5 * h * s
}

/// Green's-function solution of `phi'' - (k^2 - 1/4) phi / r^2 = g` decaying
/// at both ends: `phi(r) = -(1/2|k|) int r_<^{1/2+|k|} r_>^{1/2-|k|} g(s) ds`.
pub fn green_phi(k: i32, g: impl Fn(f64) -> f64, r: f64, r_end: f64) -> f64 {
    let m = k.unsigned_abs() as f64;
    let inner = integrate(|s| s.powf(0.5 + m) * g(s), 0.0, r, 0.05);
    let outer = integrate(|s| s.powf(0.5 - m) * g(s), r, r_end, 0.05);
    -(r.powf(0.5 - m) * inner + r.powf(0.5 + m) * outer) / (2.0 * m)
}
