//! Uniform streams (laminar flows) and their dispersion quantities.
//!
//! A uniform stream with U′(0) = θ > θ₀ has the height-over-streamline
//! profile H(p) = ∫₀^p dτ/√(θ² − 2Ω(τ)), depth d(θ) = H(1), Bernoulli constant
//! 𝓡(θ) = θ²/2 + d(θ) − Ω(1), Froude number F with 1/F² = ∫₀¹ H_p³ dp, and
//! flow force 𝒮(θ) = ∫₀^d (U′²/2 − Ω(U) + Ω(1) − Y + 𝓡) dY. In the p variable
//! the flow force collapses to ∫₀¹ (θ²/2 − 2Ω + Ω(1) + 𝓡) H_p dp − d²/2.

use serde::Serialize;

use crate::error::{Result, WaveError};
use crate::quadrature::{integrate, REL_TOL};
use crate::vorticity::VorticitySpec;

/// Which of the two laminar flows sharing a Bernoulli constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// θ > θ_c, depth d₋(R), F > 1. The far field of every solitary wave.
    Supercritical,
    /// θ₀ < θ < θ_c, depth d₊(R), F < 1.
    Subcritical,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamSolution {
    pub theta: f64,
    pub depth: f64,
    pub r: f64,
    pub froude: f64,
    pub flow_force: f64,
    /// H(p_j) on the uniform grid p_j = j/(n−1).
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DispersionSummary {
    pub theta0: f64,
    pub theta_c: f64,
    pub r_c: f64,
    /// 𝓡(θ₀) when the depth integral converges at θ₀, `None` when R₀ = +∞.
    pub r0: Option<f64>,
}

pub const PROFILE_NODES: usize = 65;

fn check_theta(spec: &VorticitySpec, theta: f64) -> Result<()> {
    let theta0 = spec.theta0();
    if !(theta > theta0) || !theta.is_finite() {
        return Err(WaveError::Singularity { theta, theta0 });
    }
    Ok(())
}

/// H_p(p) = 1/√(θ² − 2Ω(p)).
pub fn height_slope(spec: &VorticitySpec, theta: f64, p: f64) -> f64 {
    1.0 / (theta * theta - 2.0 * spec.big_omega_unchecked(p)).sqrt()
}

pub fn depth(spec: &VorticitySpec, theta: f64) -> Result<f64> {
    check_theta(spec, theta)?;
    integrate(|p| height_slope(spec, theta, p), 0.0, 1.0, REL_TOL)
}

/// 𝓡(θ) = θ²/2 + d(θ) − Ω(1).
pub fn bernoulli(spec: &VorticitySpec, theta: f64) -> Result<f64> {
    Ok(0.5 * theta * theta + depth(spec, theta)? - spec.big_omega_unchecked(1.0))
}

/// d′(θ) = −θ ∫₀¹ (θ² − 2Ω)^{-3/2} dp.
pub fn depth_prime(spec: &VorticitySpec, theta: f64) -> Result<f64> {
    check_theta(spec, theta)?;
    let i = integrate(|p| height_slope(spec, theta, p).powi(3), 0.0, 1.0, REL_TOL)?;
    Ok(-theta * i)
}

/// 𝓡′(θ) = θ + d′(θ).
pub fn bernoulli_prime(spec: &VorticitySpec, theta: f64) -> Result<f64> {
    Ok(theta + depth_prime(spec, theta)?)
}

pub fn froude(spec: &VorticitySpec, theta: f64) -> Result<f64> {
    check_theta(spec, theta)?;
    let i = integrate(|p| height_slope(spec, theta, p).powi(3), 0.0, 1.0, REL_TOL)?;
    Ok(1.0 / i.sqrt())
}

pub fn flow_force(spec: &VorticitySpec, theta: f64) -> Result<f64> {
    let d = depth(spec, theta)?;
    let om1 = spec.big_omega_unchecked(1.0);
    let r = 0.5 * theta * theta + d - om1;
    let i = integrate(
        |p| (0.5 * theta * theta - 2.0 * spec.big_omega_unchecked(p) + om1 + r) * height_slope(spec, theta, p),
        0.0,
        1.0,
        REL_TOL,
    )?;
    Ok(i - 0.5 * d * d)
}

/// H(p_j) for p_j = j/(n−1), j = 0..n, by panel-wise quadrature.
pub fn profile(spec: &VorticitySpec, theta: f64, n: usize) -> Result<Vec<f64>> {
    check_theta(spec, theta)?;
    cumulative(n, |a, b| integrate(|p| height_slope(spec, theta, p), a, b, REL_TOL))
}

/// ∂H/∂θ (p_j) = −θ ∫₀^{p_j} (θ² − 2Ω)^{-3/2} dp.
pub fn profile_theta_derivative(spec: &VorticitySpec, theta: f64, n: usize) -> Result<Vec<f64>> {
    check_theta(spec, theta)?;
    cumulative(n, |a, b| {
        integrate(|p| -theta * height_slope(spec, theta, p).powi(3), a, b, REL_TOL)
    })
}

fn cumulative<F: Fn(f64, f64) -> Result<f64>>(n: usize, panel: F) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(WaveError::Domain("profile needs at least two nodes".into()));
    }
    let dp = 1.0 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    let mut acc = 0.0;
    for j in 1..n {
        let a = (j - 1) as f64 * dp;
        let b = if j == n - 1 { 1.0 } else { j as f64 * dp };
        acc += panel(a, b)?;
        out.push(acc);
    }
    Ok(out)
}

pub fn stream_at(spec: &VorticitySpec, theta: f64) -> Result<StreamSolution> {
    stream_at_with_nodes(spec, theta, PROFILE_NODES)
}

pub fn stream_at_with_nodes(spec: &VorticitySpec, theta: f64, n: usize) -> Result<StreamSolution> {
    let depth = depth(spec, theta)?;
    let r = 0.5 * theta * theta + depth - spec.big_omega_unchecked(1.0);
    let profile = profile(spec, theta, n)?;
    Ok(StreamSolution {
        theta,
        depth,
        r,
        froude: froude(spec, theta)?,
        flow_force: flow_force(spec, theta)?,
        profile,
    })
}

/// Depth at θ = θ₀ itself, written with the non-negative radicand
/// 2(max Ω − Ω(τ)). Only meaningful when that integral converges.
fn depth_at_theta0(spec: &VorticitySpec) -> Result<f64> {
    let (_, om_max) = spec.omega_max();
    integrate(
        |p| {
            let rad = 2.0 * (om_max - spec.big_omega_unchecked(p));
            if rad <= 0.0 {
                0.0
            } else {
                1.0 / rad.sqrt()
            }
        },
        0.0,
        1.0,
        REL_TOL,
    )
}

/// Minimiser of 𝓡 over (θ₀, Θ_max] and the finiteness of R₀ = 𝓡(θ₀).
pub fn dispersion_summary(spec: &VorticitySpec) -> Result<DispersionSummary> {
    let theta0 = spec.theta0();
    let theta_max = (3.0 * theta0 + 10.0).max(10.0);

    // 𝓡′ < 0 just above θ₀ and 𝓡′ → +∞; scan with nodes clustered at θ₀.
    const N: usize = 400;
    let node = |k: usize| theta0 + (theta_max - theta0) * (k as f64 / N as f64).powi(2);
    let mut lo = None;
    let mut prev = (node(1), bernoulli_prime(spec, node(1))?);
    for k in 2..=N {
        let th = node(k);
        let v = bernoulli_prime(spec, th)?;
        if prev.1 < 0.0 && v >= 0.0 {
            lo = Some((prev.0, th));
            break;
        }
        prev = (th, v);
    }
    let (mut a, mut b) = lo.ok_or(WaveError::UnboundedSearch(theta_max))?;
    while b - a > 4.0 * f64::EPSILON * b {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if bernoulli_prime(spec, m)? < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let theta_c = 0.5 * (a + b);
    let r_c = bernoulli(spec, theta_c)?;

    // R₀ is finite iff d(θ₀ + ε) saturates as ε → 0: a square-root endpoint
    // singularity gives increment ratios near 10^{-1/2}, a divergent integral
    // gives ratios ≥ 1.
    let step = theta0.max(1.0);
    let d1 = depth(spec, theta0 + 1e-2 * step)?;
    let d2 = depth(spec, theta0 + 1e-3 * step)?;
    let d3 = depth(spec, theta0 + 1e-4 * step)?;
    let ratio = (d3 - d2) / (d2 - d1);
    let r0 = if ratio.is_finite() && ratio < 0.6 {
        Some(0.5 * theta0 * theta0 + depth_at_theta0(spec)? - spec.big_omega_unchecked(1.0))
    } else {
        None
    };
    Ok(DispersionSummary { theta0, theta_c, r_c, r0 })
}

/// A vorticity together with its dispersion summary, so repeated root solves
/// for θ(R) do not redo the minimisation.
#[derive(Debug, Clone)]
pub struct StreamFamily {
    pub spec: VorticitySpec,
    pub summary: DispersionSummary,
}

impl StreamFamily {
    pub fn new(spec: VorticitySpec) -> Result<Self> {
        let summary = dispersion_summary(&spec)?;
        Ok(Self { spec, summary })
    }

    /// The root of 𝓡(θ) = R on the requested side of θ_c.
    pub fn solve_theta(&self, r: f64, regime: Regime) -> Result<f64> {
        let s = &self.summary;
        let tol = 1e-14 * (1.0 + s.r_c.abs());
        if !(r >= s.r_c - tol) || !r.is_finite() {
            return Err(WaveError::BelowCritical { r, r_c: s.r_c });
        }
        if (r - s.r_c).abs() <= tol {
            return Ok(s.theta_c);
        }
        let f = |th: f64| -> Result<f64> { Ok(bernoulli(&self.spec, th)? - r) };
        let (lo, hi) = match regime {
            Regime::Supercritical => {
                let mut step = s.theta_c.max(1.0);
                let mut hi = s.theta_c + step;
                let mut guard = 0;
                while f(hi)? < 0.0 {
                    step *= 2.0;
                    hi = s.theta_c + step;
                    guard += 1;
                    if guard > 200 {
                        return Err(WaveError::Numerical("no supercritical bracket".into()));
                    }
                }
                (s.theta_c, hi)
            }
            Regime::Subcritical => {
                if let Some(r0) = s.r0 {
                    if r >= r0 {
                        return Err(WaveError::NoRoot { r, r0 });
                    }
                }
                let mut frac = 0.5;
                let mut lo = s.theta0 + (s.theta_c - s.theta0) * frac;
                while f(lo)? <= 0.0 {
                    frac *= 0.5;
                    if frac < 1e-16 {
                        return Err(WaveError::NoRoot { r, r0: s.r0.unwrap_or(f64::INFINITY) });
                    }
                    lo = s.theta0 + (s.theta_c - s.theta0) * frac;
                }
                (lo, s.theta_c)
            }
        };
        // f(lo) and f(hi) have opposite signs; orientation depends on regime.
        let (mut a, mut b) = (lo, hi);
        let fa_neg = f(a)? < 0.0;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = f(m)?;
            if fm == 0.0 {
                return Ok(m);
            }
            if (fm < 0.0) == fa_neg {
                a = m;
            } else {
                b = m;
            }
        }
        let th = 0.5 * (a + b);
        if f(th)?.abs() > 1e-12 * (1.0 + r.abs()) {
            return Err(WaveError::Numerical(format!("theta(R) bisection stalled at R = {r}")));
        }
        Ok(th)
    }

    pub fn flow_force_of_r(&self, r: f64, regime: Regime) -> Result<f64> {
        flow_force(&self.spec, self.solve_theta(r, regime)?)
    }

    /// dθ/dR along the supercritical family, 1/𝓡′(θ).
    pub fn theta_r_derivative(&self, theta: f64) -> Result<f64> {
        let rp = bernoulli_prime(&self.spec, theta)?;
        if rp == 0.0 {
            return Err(WaveError::Numerical("R'(theta) vanishes".into()));
        }
        Ok(1.0 / rp)
    }
}

pub fn solve_theta_for_r(spec: &VorticitySpec, r: f64, regime: Regime) -> Result<f64> {
    StreamFamily::new(spec.clone())?.solve_theta(r, regime)
}

pub fn flow_force_of_r(spec: &VorticitySpec, r: f64, regime: Regime) -> Result<f64> {
    StreamFamily::new(spec.clone())?.flow_force_of_r(r, regime)
}

/// |∂_θ𝒮 − 𝓡′(θ) d(θ)| with both derivatives central-differenced.
pub fn check_flow_force_identity(spec: &VorticitySpec, theta: f64, h: f64) -> Result<f64> {
    check_theta(spec, theta - h)?;
    let ds = (flow_force(spec, theta + h)? - flow_force(spec, theta - h)?) / (2.0 * h);
    let dr = (bernoulli(spec, theta + h)? - bernoulli(spec, theta - h)?) / (2.0 * h);
    Ok((ds - dr * depth(spec, theta)?).abs())
}
