//! Deep-cut ellipsoid method on `{x : (x - c)^T P^{-1} (x - c) <= 1}`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    center: Vec<f64>,
    /// Row-major `n x n` shape matrix.
    shape: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutOutcome {
    Updated,
    /// The cut removes the whole ellipsoid.
    Empty,
    /// `g^T P g` is not positive; the ellipsoid has collapsed numerically.
    Degenerate,
}

impl Ellipsoid {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        let n = center.len();
        let mut shape = vec![0.0; n * n];
        for i in 0..n {
            shape[i * n + i] = radius * radius;
        }
        Self { center, shape }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn shape(&self) -> &[f64] {
        &self.shape
    }

    pub fn trace(&self) -> f64 {
        let n = self.dim();
        (0..n).map(|i| self.shape[i * n + i]).sum()
    }

    /// Half-width of the ellipsoid along coordinate `i`.
    pub fn half_width(&self, i: usize) -> f64 {
        self.shape[i * self.dim() + i].max(0.0).sqrt()
    }

    /// Whether `x` lies inside (with a small relative slack).
    pub fn contains(&self, x: &[f64]) -> bool {
        let n = self.dim();
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        match solve_spd(&self.shape, n, &d) {
            Some(y) => d.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() <= 1.0 + 1e-9,
            None => false,
        }
    }

    /// Keeps `{x in E : g^T (x - c) + depth <= 0}`; `depth >= 0` is a deep cut.
    pub fn cut(&mut self, g: &[f64], depth: f64) -> CutOutcome {
        let n = self.dim();
        debug_assert_eq!(g.len(), n);
        let pg: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| self.shape[i * n + j] * g[j]).sum())
            .collect();
        let gpg: f64 = g.iter().zip(&pg).map(|(a, b)| a * b).sum();
        if !(gpg > 0.0) || !gpg.is_finite() {
            return CutOutcome::Degenerate;
        }
        let root = gpg.sqrt();
        let alpha = depth / root;
        if alpha >= 1.0 {
            return CutOutcome::Empty;
        }
        let alpha = alpha.max(-1.0 / n as f64);
        if n == 1 {
            // Interval [c - r, c + r] intersected with the half-line.
            let r = self.shape[0].sqrt();
            let (lo, hi) = (self.center[0] - r, self.center[0] + r);
            let bound = self.center[0] - depth / g[0];
            let (lo, hi) = if g[0] > 0.0 { (lo, hi.min(bound)) } else { (lo.max(bound), hi) };
            self.center[0] = 0.5 * (lo + hi);
            self.shape[0] = (0.5 * (hi - lo)).powi(2);
            return CutOutcome::Updated;
        }
        let nf = n as f64;
        let step = (1.0 + nf * alpha) / (nf + 1.0) / root;
        for (c, p) in self.center.iter_mut().zip(&pg) {
            *c -= step * p;
        }
        let scale = nf * nf * (1.0 - alpha * alpha) / (nf * nf - 1.0);
        let rank1 = 2.0 * (1.0 + nf * alpha) / ((nf + 1.0) * (1.0 + alpha)) / gpg;
        for i in 0..n {
            for j in i..n {
                let v = scale * (self.shape[i * n + j] - rank1 * pg[i] * pg[j]);
                self.shape[i * n + j] = v;
                self.shape[j * n + i] = v;
            }
        }
        CutOutcome::Updated
    }

    /// Whether the shape matrix still admits a Cholesky factorization.
    pub fn is_positive_definite(&self) -> bool {
        cholesky(&self.shape, self.dim()).is_some()
    }
}

/// Lower-triangular Cholesky factor, row-major.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn solve_spd(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let l = cholesky(a, n)?;
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}
