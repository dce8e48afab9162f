//! Lowest eigenvalue ν₀ of the depth-wise Robin problem
//!
//! ```text
//!   −v″ − ω′(U(Y)) v = ν v   on (0, d),   v(0) = 0,   v′(d) = ρ₀ v(d),
//! ```
//!
//! whose value marks the bottom of the continuous spectrum of the linearised
//! solitary-wave operator. The Robin row is closed with a ghost node, which
//! keeps second-order accuracy; halving that row makes the pencil symmetric
//! and a diagonal similarity turns it into a symmetric tridiagonal matrix.

use crate::error::{Result, WaveError};
use crate::quadrature::{integrate, REL_TOL};
use crate::stream::{height_slope, StreamSolution};
use crate::vorticity::VorticitySpec;

/// ρ₀ = (1 + U_Y U_YY)/U_Y² at Y = d, with U_Y(d) = √(θ² − 2Ω(1)) and
/// U_YY(d) = −ω(1) taken from U″ + ω(U) = 0.
pub fn rho0_of_stream(s: &StreamSolution, spec: &VorticitySpec) -> Result<f64> {
    let rad = s.theta * s.theta - 2.0 * spec.big_omega_unchecked(1.0);
    if !(rad > 0.0) {
        return Err(WaveError::SurfaceStagnation(rad));
    }
    Ok((1.0 - rad.sqrt() * spec.omega_unchecked(1.0)) / rad)
}

#[derive(Debug, Clone)]
pub struct RobinEigenProblem {
    pub depth: f64,
    pub rho0: f64,
    pub grid_n: usize,
    /// ω′(U(Y_i)) at Y_i = i d/N, i = 0..=N.
    pub potential: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RobinMode {
    pub nu: f64,
    /// Eigenfunction at Y_0..Y_N (v_0 = 0), unit max-norm, positive at Y = d.
    pub vector: Vec<f64>,
}

impl RobinEigenProblem {
    pub fn new(spec: &VorticitySpec, s: &StreamSolution, grid_n: usize) -> Result<Self> {
        if grid_n < 64 {
            return Err(WaveError::Domain(format!("grid_n = {grid_n} < 64")));
        }
        let rho0 = rho0_of_stream(s, spec)?;
        let potential = if spec.is_irrotational() {
            vec![0.0; grid_n + 1]
        } else {
            streamline_values(spec, s.theta, s.depth, grid_n)?
                .into_iter()
                .map(|u| spec.omega_prime_unchecked(u))
                .collect()
        };
        Ok(Self { depth: s.depth, rho0, grid_n, potential })
    }

    /// Same operator with an explicit potential, depth and Robin coefficient.
    pub fn with_potential(depth: f64, rho0: f64, potential: Vec<f64>) -> Result<Self> {
        let grid_n = potential.len().saturating_sub(1);
        if grid_n < 64 || !(depth > 0.0) {
            return Err(WaveError::Domain("need depth > 0 and at least 65 nodes".into()));
        }
        Ok(Self { depth, rho0, grid_n, potential })
    }

    /// Symmetric tridiagonal (diag, off) for unknowns v_1..v_N after scaling
    /// the last unknown by √2.
    fn tridiagonal(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid_n;
        let h = self.depth / n as f64;
        let ih2 = 1.0 / (h * h);
        let mut diag = Vec::with_capacity(n);
        let mut off = Vec::with_capacity(n - 1);
        for i in 1..=n {
            if i < n {
                diag.push(2.0 * ih2 - self.potential[i]);
            } else {
                diag.push((2.0 - 2.0 * h * self.rho0) * ih2 - self.potential[n]);
            }
        }
        for i in 1..n {
            let scale = if i == n - 1 { 2f64.sqrt() } else { 1.0 };
            off.push(-ih2 * scale);
        }
        (diag, off)
    }

    pub fn lowest(&self) -> Result<RobinMode> {
        let (diag, off) = self.tridiagonal();
        let nu = smallest_eigenvalue(&diag, &off);
        let y = inverse_iteration(&diag, &off, nu)?;
        let n = self.grid_n;
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        v.extend_from_slice(&y[..n - 1]);
        v.push(y[n - 1] / 2f64.sqrt());
        let scale = v[n];
        let inf = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let sign = if scale < 0.0 { -1.0 } else { 1.0 };
        for x in &mut v {
            *x *= sign / inf;
        }
        Ok(RobinMode { nu, vector: v })
    }
}

/// U(Y_i) on Y_i = i d/N, by inverting H(p) = Y with Newton steps that
/// integrate H_p from the previous node.
fn streamline_values(spec: &VorticitySpec, theta: f64, depth: f64, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let (mut p_prev, mut h_prev) = (0.0, 0.0);
    for i in 1..=n {
        if i == n {
            out.push(1.0);
            break;
        }
        let y = depth * i as f64 / n as f64;
        let mut p = (p_prev + (y - h_prev) / height_slope(spec, theta, p_prev)).clamp(p_prev, 1.0);
        let mut hp = h_prev;
        for _ in 0..50 {
            hp = h_prev + integrate(|t| height_slope(spec, theta, t), p_prev, p, REL_TOL)?;
            let step = (y - hp) / height_slope(spec, theta, p);
            p = (p + step).clamp(p_prev, 1.0);
            if step.abs() < 1e-15 {
                break;
            }
        }
        hp = h_prev + integrate(|t| height_slope(spec, theta, t), p_prev, p, REL_TOL).unwrap_or(hp);
        out.push(p);
        p_prev = p;
        h_prev = hp;
    }
    Ok(out)
}

/// Sturm count: number of eigenvalues below x.
fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON * off[i - 1].abs().max(1.0) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn smallest_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if count_below(diag, off, m) >= 1 {
            hi = m;
        } else {
            lo = m;
        }
    }
    0.5 * (lo + hi)
}

/// Thomas solve of (T − σ) x = b for symmetric tridiagonal T.
fn shifted_solve(diag: &[f64], off: &[f64], sigma: f64, b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0] - sigma;
    if beta == 0.0 {
        beta = 1e-300;
    }
    d[0] = b[0] / beta;
    for i in 1..n {
        c[i - 1] = off[i - 1] / beta;
        beta = diag[i] - sigma - off[i - 1] * c[i - 1];
        if beta == 0.0 {
            beta = 1e-300;
        }
        d[i] = (b[i] - off[i - 1] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

fn inverse_iteration(diag: &[f64], off: &[f64], nu: f64) -> Result<Vec<f64>> {
    let n = diag.len();
    let scale = diag.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let sigma = nu - 1e-10 * scale;
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..100 {
        let y = shifted_solve(diag, off, sigma, &x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y: Vec<f64> = y.into_iter().map(|v| v / norm).collect();
        let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        x = y;
        if (1.0 - dot.abs()) < 1e-14 {
            return Ok(x);
        }
    }
    Err(WaveError::Numerical("Robin inverse iteration did not converge".into()))
}

/// ν₀ for the stream `s`: the `grid_n` and `2 grid_n` discrete values
/// combined by one Richardson step, which removes the O(ΔY²) term.
pub fn nu0(spec: &VorticitySpec, s: &StreamSolution, grid_n: usize) -> Result<f64> {
    let coarse = RobinEigenProblem::new(spec, s, grid_n)?.lowest()?.nu;
    let fine = RobinEigenProblem::new(spec, s, 2 * grid_n)?.lowest()?.nu;
    Ok((4.0 * fine - coarse) / 3.0)
}
