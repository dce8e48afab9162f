//! Square banded matrices and their LU factorisation with partial pivoting.
//!
//! Rows are stored densely from column i − kl to i + ku + kl; the extra kl
//! columns hold the fill that row interchanges push into U.

use crate::error::{Result, WaveError};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry (i, j). Panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n && j < self.n && self.in_band(i, j), "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * self.width..];
            *yi = (lo..=hi).map(|j| row[j + self.kl - i] * x[j]).sum();
        }
        y
    }

    /// |A| x, entrywise absolute values.
    pub fn matvec_abs(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * self.width..];
            *yi = (lo..=hi).map(|j| row[j + self.kl - i].abs() * x[j]).sum();
        }
        y
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                y[j] += self.data[self.slot(i, j)] * x[i];
            }
        }
        y
    }

    /// A − σ·diag(m).
    pub fn shifted(&self, sigma: f64, m: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, mi) in m.iter().enumerate() {
            let s = out.slot(i, i);
            out.data[s] -= sigma * mi;
        }
        out
    }

    pub fn factor(&self) -> Result<BandLu> {
        let mut a = self.clone();
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let mut piv = vec![0usize; n];
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a.data[a.slot(k, k)].abs();
            for r in k + 1..=last {
                let v = a.data[a.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= f64::EPSILON * 1e-3 * scale || best == 0.0 {
                return Err(WaveError::Singular(k));
            }
            piv[k] = p;
            let cmax = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    let (s1, s2) = (a.slot(k, c), a.slot(p, c));
                    a.data.swap(s1, s2);
                }
            }
            let d = a.data[a.slot(k, k)];
            for r in k + 1..=last {
                let sr = a.slot(r, k);
                let l = a.data[sr] / d;
                a.data[sr] = l;
                if l != 0.0 {
                    for c in k + 1..=cmax {
                        let u = a.data[a.slot(k, c)];
                        let s = a.slot(r, c);
                        a.data[s] -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { a, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.a.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.a;
        let (n, kl) = (a.n, a.kl);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                x[r] -= a.data[a.slot(r, k)] * xk;
            }
        }
        let uw = a.kl + a.ku;
        for k in (0..n).rev() {
            let mut s = x[k];
            for c in k + 1..=(k + uw).min(n - 1) {
                s -= a.data[a.slot(k, c)] * x[c];
            }
            x[k] = s / a.data[a.slot(k, k)];
        }
        x
    }

    /// Solves Aᵀx = b.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.a;
        let (n, kl) = (a.n, a.kl);
        let uw = a.kl + a.ku;
        let mut x = b.to_vec();
        for k in 0..n {
            let mut s = x[k];
            for r in k.saturating_sub(uw)..k {
                s -= a.data[a.slot(r, k)] * x[r];
            }
            x[k] = s / a.data[a.slot(k, k)];
        }
        for k in (0..n).rev() {
            let mut s = 0.0;
            for r in k + 1..=(k + kl).min(n - 1) {
                s += a.data[a.slot(r, k)] * x[r];
            }
            x[k] -= s;
            x.swap(k, self.piv[k]);
        }
        x
    }
}
