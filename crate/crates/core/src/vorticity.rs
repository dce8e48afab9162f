//! Polynomial vorticity functions ω(p) on the stream-function interval [0, 1].
//!
//! With the normalisation Q = 1 (mass flux) the stream function takes values
//! in [0, 1], so ω only ever needs to be evaluated there. Restricting to
//! polynomials gives exact primitives Ω and derivatives ω′.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};

/// Vorticity ω(p) = Σ c_k p^k together with its primitive Ω(p) = ∫₀^p ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VorticitySpec {
    coeffs: Vec<f64>,
}

impl VorticitySpec {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(WaveError::Domain("vorticity coefficients must be finite".into()));
        }
        Ok(Self { coeffs })
    }

    /// ω ≡ 0.
    pub fn irrotational() -> Self {
        Self { coeffs: Vec::new() }
    }

    /// ω ≡ c.
    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_irrotational(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    fn check(p: f64) -> Result<()> {
        if (0.0..=1.0).contains(&p) {
            Ok(())
        } else {
            Err(WaveError::Domain(format!("p = {p} outside [0, 1]")))
        }
    }

    pub fn omega(&self, p: f64) -> Result<f64> {
        Self::check(p)?;
        Ok(self.omega_unchecked(p))
    }

    pub fn omega_prime(&self, p: f64) -> Result<f64> {
        Self::check(p)?;
        Ok(self.omega_prime_unchecked(p))
    }

    #[allow(non_snake_case)]
    pub fn Omega(&self, p: f64) -> Result<f64> {
        Self::check(p)?;
        Ok(self.big_omega_unchecked(p))
    }

    /// Horner evaluation of ω without the domain check; used in inner loops
    /// where p comes from a grid on [0, 1].
    pub(crate) fn omega_unchecked(&self, p: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * p + c)
    }

    pub(crate) fn omega_prime_unchecked(&self, p: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * p + k as f64 * c)
    }

    pub(crate) fn big_omega_unchecked(&self, p: f64) -> f64 {
        // Ω(p) = Σ c_k p^{k+1}/(k+1); Horner in p then one extra factor p.
        p * self
            .coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * p + c / (k as f64 + 1.0))
    }

    /// Max of Ω over [0, 1] and its location. Candidates are the endpoints and
    /// the sign changes of ω (Ω′ = ω) found on a fine sampling grid, each
    /// refined by bisection.
    pub fn omega_max(&self) -> (f64, f64) {
        let mut best = (0.0, 0.0); // Ω(0) = 0
        let mut consider = |p: f64| {
            let v = self.big_omega_unchecked(p);
            if v > best.1 {
                best = (p, v);
            }
        };
        consider(1.0);
        const N: usize = 2048;
        let mut p_prev = 0.0;
        let mut w_prev = self.omega_unchecked(0.0);
        for k in 1..=N {
            let p = k as f64 / N as f64;
            let w = self.omega_unchecked(p);
            if w_prev > 0.0 && w <= 0.0 {
                // ω changes sign + → −: a local maximum of Ω.
                let (mut a, mut b) = (p_prev, p);
                for _ in 0..80 {
                    let m = 0.5 * (a + b);
                    if self.omega_unchecked(m) > 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                consider(0.5 * (a + b));
            }
            p_prev = p;
            w_prev = w;
        }
        best
    }

    /// θ₀ = √(2 max_{[0,1]} Ω): uniform streams exist for θ > θ₀.
    pub fn theta0(&self) -> f64 {
        (2.0 * self.omega_max().1).sqrt()
    }

    /// ω₁ = max|ω| + max|ω′| over [0, 1], sampled.
    pub fn omega_bound(&self) -> f64 {
        let n = 1000;
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for k in 0..=n {
            let p = k as f64 / n as f64;
            a = a.max(self.omega_unchecked(p).abs());
            b = b.max(self.omega_prime_unchecked(p).abs());
        }
        a + b
    }
}
