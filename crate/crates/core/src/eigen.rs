//! Eigenvalues of the pencil J w = μ M w nearest a shift σ, for banded J and
//! diagonal M ≥ 0 (M may vanish on constraint rows).
//!
//! Subspace iteration on T = (J − σM)⁻¹M with Rayleigh–Ritz on the small
//! projected matrix. T has eigenvalues 1/(μ − σ), so the modes closest to σ
//! converge first.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::{BandLu, BandMatrix};
use crate::error::{Result, WaveError};

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    /// Backward error ‖(J − μM)w‖∞ / (‖J‖∞ ‖w‖∞).
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub shift: f64,
    pub block: usize,
    pub max_iter: usize,
    /// Relative change of the wanted Ritz values between sweeps.
    pub tol: f64,
    /// Bound on the backward error of the wanted pairs.
    pub vector_tol: f64,
    /// Only Ritz values below this are required to converge.
    pub wanted_below: f64,
    /// The lowest this many Ritz pairs must converge as well.
    pub min_wanted: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { shift: 0.0, block: 8, max_iter: 400, tol: 1e-10, vector_tol: 1e-11, wanted_below: f64::INFINITY, min_wanted: 0, seed: 0x5eed }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram–Schmidt, applied twice; drops vectors that collapse.
fn orthonormalize(vs: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for mut v in vs.drain(..) {
        let n0 = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for u in &out {
                let c = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 * n0 && n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    *vs = out;
}

fn apply_t(lu: &BandLu, m: &[f64], x: &[f64]) -> Vec<f64> {
    let mx: Vec<f64> = x.iter().zip(m).map(|(a, b)| a * b).collect();
    lu.solve(&mx)
}

/// Ritz pairs (τ, coefficient vector) of the small matrix with real τ.
fn real_ritz(h: &DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let k = h.nrows();
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for z in h.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-8 * scale {
            continue;
        }
        let shifted = h - DMatrix::identity(k, k) * z.re;
        let svd = shifted.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        out.push((z.re, vt.row(imin).iter().copied().collect()));
    }
    out
}

fn ritz_pair(j: &BandMatrix, m: &[f64], x: &[Vec<f64>], mu: f64, c: &[f64]) -> EigenPair {
    let mut v = vec![0.0; j.dim()];
    for (cb, xb) in c.iter().zip(x) {
        v.iter_mut().zip(xb).for_each(|(a, b)| *a += cb * b);
    }
    let jv = j.matvec(&v);
    let ones = vec![1.0; v.len()];
    let jnorm = j.matvec_abs(&ones).into_iter().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let vmax = v.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let res = jv.iter().zip(&v).zip(m).map(|((a, b), mm)| (a - mu * mm * b).abs()).fold(0.0, f64::max);
    EigenPair { value: mu, vector: v, residual: res / (jnorm * vmax) }
}

/// Eigenpairs of J w = μ M w nearest `opts.shift`, sorted by μ.
pub fn nearest_eigenpairs(j: &BandMatrix, m: &[f64], opts: EigenOptions) -> Result<Vec<EigenPair>> {
    let n = j.dim();
    let k = opts.block.min(n).max(1);
    let lu = j.shifted(opts.shift, m).factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..opts.max_iter {
        orthonormalize(&mut x);
        if x.is_empty() {
            return Err(WaveError::Numerical("eigen subspace collapsed".into()));
        }
        let w: Vec<Vec<f64>> = x.iter().map(|v| apply_t(&lu, m, v)).collect();
        let kk = x.len();
        let h = DMatrix::from_fn(kk, kk, |a, b| dot(&x[a], &w[b]));
        let mut ritz: Vec<(f64, Vec<f64>)> = real_ritz(&h)
            .into_iter()
            .filter(|(tau, _)| tau.abs() > 0.0)
            .map(|(tau, c)| (opts.shift + 1.0 / tau, c))
            .collect();
        ritz.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n_wanted = ritz.iter().filter(|r| r.0 < opts.wanted_below).count().max(opts.min_wanted).min(ritz.len());
        let wanted: Vec<f64> = ritz.iter().take(n_wanted).map(|r| r.0).collect();
        let settled = prev.as_ref().is_some_and(|prev| {
            wanted.len() == prev.len() && wanted.iter().zip(prev).all(|(a, b)| (a - b).abs() <= opts.tol * a.abs().max(1.0))
        });
        prev = Some(wanted);
        if settled {
            let pairs: Vec<EigenPair> = ritz.into_iter().map(|(mu, c)| ritz_pair(j, m, &x, mu, &c)).collect();
            if pairs.iter().take(n_wanted).all(|p| p.residual <= opts.vector_tol) {
                return Ok(pairs);
            }
        }
        x = w;
    }
    Err(WaveError::NonConvergence { iterations: opts.max_iter, residual: f64::NAN })
}

/// Left eigenvector of the pencil at (approximately) `shift`: zᵀ(J − shift·M)
/// ≈ 0, by inverse iteration with the transposed factorisation.
pub fn left_null_vector(j: &BandMatrix, m: &[f64], shift: f64, seed: u64) -> Result<Vec<f64>> {
    let n = j.dim();
    let lu = j.shifted(shift, m).factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..50 {
        let y = lu.solve_transpose(&z);
        let nrm = dot(&y, &y).sqrt();
        let y: Vec<f64> = y.into_iter().map(|v| v / nrm).collect();
        let c = dot(&y, &z) / dot(&z, &z).sqrt();
        z = y;
        if 1.0 - c.abs() < 1e-13 {
            break;
        }
    }
    Ok(z)
}
