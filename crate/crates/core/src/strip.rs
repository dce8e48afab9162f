//! The hodograph problem on the half-strip 0 ≤ q ≤ L, 0 ≤ p ≤ 1:
//!
//! ```text
//!   ((1 + h_q²)/(2h_p²) + Ω(p))_p − (h_q/h_p)_q = 0,
//!   (1 + h_q²)/(2h_p²) + h = R   at p = 1,      h = 0   at p = 0,
//! ```
//!
//! with even symmetry at q = 0 (ghost column h(−Δq, p) = h(Δq, p)) and the
//! column q = L pinned to the supercritical stream H(p; θ₋(R)).
//!
//! Fluxes live on half-nodes. The p-flux at (i, j ± ½) uses the one-sided
//! h_p and a four-point average of h_q; the q-flux at (i ± ½, j) the other way
//! round. Unknowns are h(i, j) for i < nq − 1, j ≥ 1, ordered q-major so the
//! Jacobian is banded with both bandwidths np.

use std::fmt::Write as _;
use std::path::Path;

use crate::band::BandMatrix;
use crate::error::{Result, WaveError};
use crate::stream::{bernoulli, profile, profile_theta_derivative, Regime, StreamFamily};
use crate::vorticity::VorticitySpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripGrid {
    pub l: f64,
    pub nq: usize,
    pub np: usize,
}

impl StripGrid {
    pub fn new(l: f64, nq: usize, np: usize) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() || nq < 9 || np < 9 {
            return Err(WaveError::Domain(format!("bad strip grid L = {l}, nq = {nq}, np = {np}")));
        }
        Ok(Self { l, nq, np })
    }

    /// L = 30 d, nq = 301, np = 41.
    pub fn default_for_depth(d: f64) -> Self {
        Self { l: 30.0 * d, nq: 301, np: 41 }
    }

    /// Same L, both spacings halved.
    pub fn refined(&self) -> Self {
        Self { l: self.l, nq: 2 * self.nq - 1, np: 2 * self.np - 1 }
    }

    pub fn dq(&self) -> f64 {
        self.l / (self.nq - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        1.0 / (self.np - 1) as f64
    }

    pub fn q(&self, i: usize) -> f64 {
        i as f64 * self.dq()
    }

    pub fn p(&self, j: usize) -> f64 {
        if j + 1 == self.np {
            1.0
        } else {
            j as f64 * self.dp()
        }
    }

    /// Number of unknowns (nq − 1)(np − 1).
    pub fn unknowns(&self) -> usize {
        (self.nq - 1) * (self.np - 1)
    }

    /// Position of h(i, j) in the unknown vector.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * (self.np - 1) + (j - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripField {
    pub grid: StripGrid,
    /// h(q_i, p_j) at `i * np + j`, including the bottom row and far column.
    pub h: Vec<f64>,
    pub r: f64,
    pub theta: f64,
}

impl StripField {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.grid.np + j]
    }

    /// The uniform stream with parameter θ, R = 𝓡(θ).
    pub fn uniform(spec: &VorticitySpec, grid: StripGrid, theta: f64) -> Result<Self> {
        let col = profile(spec, theta, grid.np)?;
        let mut h = Vec::with_capacity(grid.nq * grid.np);
        for _ in 0..grid.nq {
            h.extend_from_slice(&col);
        }
        Ok(Self { grid, h, r: bernoulli(spec, theta)?, theta })
    }

    /// Free surface ξ(q_i) = h(q_i, 1).
    pub fn surface(&self) -> Vec<f64> {
        (0..self.grid.nq).map(|i| self.at(i, self.grid.np - 1)).collect()
    }

    pub fn crest(&self) -> f64 {
        self.at(0, self.grid.np - 1)
    }

    pub fn far_depth(&self) -> f64 {
        self.at(self.grid.nq - 1, self.grid.np - 1)
    }

    pub fn unknowns(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut u = Vec::with_capacity(g.unknowns());
        for i in 0..g.nq - 1 {
            u.extend_from_slice(&self.h[i * g.np + 1..(i + 1) * g.np]);
        }
        u
    }

    pub fn set_unknowns(&mut self, u: &[f64]) {
        let g = self.grid;
        for i in 0..g.nq - 1 {
            self.h[i * g.np + 1..(i + 1) * g.np].copy_from_slice(&u[i * (g.np - 1)..(i + 1) * (g.np - 1)]);
        }
    }

    /// Moves R to `r` and re-pins the far column to H(p; θ₋(r)).
    pub fn set_r(&mut self, family: &StreamFamily, r: f64) -> Result<()> {
        let theta = family.solve_theta(r, Regime::Supercritical)?;
        let col = profile(&family.spec, theta, self.grid.np)?;
        let g = self.grid;
        self.h[(g.nq - 1) * g.np..].copy_from_slice(&col);
        self.r = r;
        self.theta = theta;
        Ok(())
    }

    /// Smallest one-sided h_p over the grid; an error if it is not positive.
    pub fn check_positive(&self) -> Result<f64> {
        let g = &self.grid;
        let mut worst = (f64::INFINITY, 0, 0);
        for i in 0..g.nq {
            for j in 0..g.np - 1 {
                let hp = (self.at(i, j + 1) - self.at(i, j)) / g.dp();
                if !(hp > worst.0) {
                    worst = (hp, i, j);
                }
            }
        }
        if !(worst.0 > 0.0) {
            return Err(WaveError::StagnationBreach { i: worst.1, j: worst.2, min_hp: worst.0 });
        }
        Ok(worst.0)
    }

    /// Central h_p at every unknown node (one-sided at p = 1).
    pub fn hp_at_unknowns(&self) -> Vec<f64> {
        let g = &self.grid;
        let dp = g.dp();
        let n = g.np - 1;
        let mut out = Vec::with_capacity(g.unknowns());
        for i in 0..g.nq - 1 {
            for j in 1..g.np {
                out.push(if j < n {
                    (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * dp)
                } else {
                    (3.0 * self.at(i, n) - 4.0 * self.at(i, n - 1) + self.at(i, n - 2)) / (2.0 * dp)
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StripResidual {
    /// Rows in unknown order: PDE rows for j < np − 1, Bernoulli rows at j = np − 1.
    pub values: Vec<f64>,
    pub sup: f64,
    pub l2: f64,
    np: usize,
}

impl StripResidual {
    fn from_values(values: Vec<f64>, grid: &StripGrid) -> Self {
        let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let l2 = (values.iter().map(|v| v * v).sum::<f64>() * grid.dq() * grid.dp()).sqrt();
        Self { values, sup, l2, np: grid.np }
    }

    pub fn interior(&self) -> Vec<f64> {
        let m = self.np - 1;
        self.values.iter().enumerate().filter(|(k, _)| k % m != m - 1).map(|(_, v)| *v).collect()
    }

    pub fn surface(&self) -> Vec<f64> {
        let m = self.np - 1;
        self.values.iter().skip(m - 1).step_by(m).copied().collect()
    }
}

/// Node offsets with coefficients: a linear difference functional.
type Stencil = [(isize, isize, f64)];

struct Stencils<'a> {
    f: &'a StripField,
    spec: &'a VorticitySpec,
}

impl Stencils<'_> {
    #[inline]
    fn h(&self, i: isize, j: isize) -> f64 {
        self.f.at(i.unsigned_abs(), j as usize)
    }

    /// Every stencil is a difference (coefficients sum to zero), so values
    /// are taken relative to h(i, j); this keeps c·h products from rounding
    /// away the small differences they are meant to resolve.
    fn lin(&self, i: usize, j: usize, s: &Stencil) -> f64 {
        let h0 = self.f.at(i, j);
        s.iter().map(|&(di, dj, c)| c * (self.h(i as isize + di, j as isize + dj) - h0)).sum()
    }

    /// Value of row (i, j) and, if `terms` is given, its partial derivatives
    /// with respect to the nodes it touches (ghost nodes not yet folded).
    fn row(&self, i: usize, j: usize, mut terms: Option<&mut Vec<(isize, isize, f64)>>) -> f64 {
        let g = &self.f.grid;
        let (dq, dp) = (g.dq(), g.dp());
        let n = g.np - 1;
        let mut push = |s: &Stencil, w: f64| {
            if let Some(t) = terms.as_deref_mut() {
                for &(di, dj, c) in s {
                    t.push((i as isize + di, j as isize + dj, w * c));
                }
            }
        };
        if j == n {
            let hp_s = [(0, 0, 1.5 / dp), (0, -1, -2.0 / dp), (0, -2, 0.5 / dp)];
            let hq_s = [(1, 0, 0.5 / dq), (-1, 0, -0.5 / dq)];
            let hp = self.lin(i, j, &hp_s);
            let hq = self.lin(i, j, &hq_s);
            let val = (1.0 + hq * hq) / (2.0 * hp * hp) + self.h(i as isize, j as isize) - self.f.r;
            push(&hp_s, -(1.0 + hq * hq) / (hp * hp * hp));
            push(&hq_s, hq / (hp * hp));
            push(&[(0, 0, 1.0)], 1.0);
            return val;
        }
        let (cq, cp) = (0.25 / dq, 0.25 / dp);
        let mut val = 0.0;
        // p-fluxes A = (1 + h_q²)/(2h_p²) + Ω at (i, j ± ½).
        for (up, sign) in [(1isize, 1.0 / dp), (0, -1.0 / dp)] {
            let hp_s = [(0, up, 1.0 / dp), (0, up - 1, -1.0 / dp)];
            let hq_s = [(1, up, cq), (-1, up, -cq), (1, up - 1, cq), (-1, up - 1, -cq)];
            let hp = self.lin(i, j, &hp_s);
            let hq = self.lin(i, j, &hq_s);
            let pm = g.p(j) + (up as f64 - 0.5) * dp;
            val += sign * ((1.0 + hq * hq) / (2.0 * hp * hp) + self.spec.big_omega_unchecked(pm));
            push(&hp_s, -sign * (1.0 + hq * hq) / (hp * hp * hp));
            push(&hq_s, sign * hq / (hp * hp));
        }
        // q-fluxes B = h_q/h_p at (i ± ½, j), entering with a minus sign.
        for (right, sign) in [(1isize, -1.0 / dq), (0, 1.0 / dq)] {
            let hq_s = [(right, 0, 1.0 / dq), (right - 1, 0, -1.0 / dq)];
            let hp_s = [(right, 1, cp), (right, -1, -cp), (right - 1, 1, cp), (right - 1, -1, -cp)];
            let hq = self.lin(i, j, &hq_s);
            let hp = self.lin(i, j, &hp_s);
            val += sign * hq / hp;
            push(&hq_s, sign / hp);
            push(&hp_s, -sign * hq / (hp * hp));
        }
        val
    }
}

pub fn residual(f: &StripField, spec: &VorticitySpec) -> Result<StripResidual> {
    f.check_positive()?;
    Ok(residual_unchecked(f, spec))
}

fn residual_unchecked(f: &StripField, spec: &VorticitySpec) -> StripResidual {
    let g = f.grid;
    let st = Stencils { f, spec };
    let mut values = Vec::with_capacity(g.unknowns());
    for i in 0..g.nq - 1 {
        for j in 1..g.np {
            values.push(st.row(i, j, None));
        }
    }
    StripResidual::from_values(values, &g)
}

/// Exact derivative of the discrete residual with respect to the unknowns.
pub fn assemble_jacobian(f: &StripField, spec: &VorticitySpec) -> Result<BandMatrix> {
    f.check_positive()?;
    Ok(jacobian_parts(f, spec, None))
}

/// Jacobian together with ∂(residual)/∂R, which collects −1 from every
/// Bernoulli row and the dependence of the pinned column on θ₋(R).
pub fn jacobian_with_r(f: &StripField, family: &StreamFamily) -> Result<(BandMatrix, Vec<f64>)> {
    f.check_positive()?;
    let g = f.grid;
    let dtheta = family.theta_r_derivative(f.theta)?;
    let dh: Vec<f64> = profile_theta_derivative(&family.spec, f.theta, g.np)?.into_iter().map(|v| v * dtheta).collect();
    let mut dr = vec![0.0; g.unknowns()];
    let j = jacobian_parts(f, &family.spec, Some((&dh, &mut dr)));
    Ok((j, dr))
}

fn jacobian_parts(f: &StripField, spec: &VorticitySpec, mut pinned: Option<(&[f64], &mut Vec<f64>)>) -> BandMatrix {
    let g = f.grid;
    let m = g.np - 1;
    let mut jac = BandMatrix::zeros(g.unknowns(), m + 1, m + 1);
    let st = Stencils { f, spec };
    let mut terms = Vec::with_capacity(40);
    for i in 0..g.nq - 1 {
        for j in 1..g.np {
            terms.clear();
            st.row(i, j, Some(&mut terms));
            let row = g.index(i, j);
            for &(ti, tj, d) in &terms {
                let (ti, tj) = (ti.unsigned_abs(), tj as usize);
                if tj == 0 {
                    continue;
                }
                if ti == g.nq - 1 {
                    if let Some((dh, dr)) = pinned.as_mut() {
                        dr[row] += d * dh[tj];
                    }
                    continue;
                }
                jac.add(row, g.index(ti, tj), d);
            }
            if j == m {
                if let Some((_, dr)) = pinned.as_mut() {
                    dr[row] -= 1.0;
                }
            }
        }
    }
    jac
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

/// One full, undamped Newton step.
pub fn newton_step(f: &StripField, spec: &VorticitySpec) -> Result<StripField> {
    let res = residual(f, spec)?;
    let delta = assemble_jacobian(f, spec)?.factor()?.solve(&res.values);
    let u: Vec<f64> = f.unknowns().iter().zip(&delta).map(|(a, d)| a - d).collect();
    let mut g = f.clone();
    g.set_unknowns(&u);
    Ok(g)
}

pub fn newton_solve(f0: &StripField, spec: &VorticitySpec, tol: f64, max_iter: usize) -> Result<StripField> {
    Ok(newton_solve_report(f0, spec, tol, max_iter)?.0)
}

/// Damped Newton at fixed R and far column. A step is halved until the
/// trial keeps h_p > 0 and lowers the sup-norm residual. Once the residual
/// is below `tol` one undamped polishing step follows.
pub fn newton_solve_report(
    f0: &StripField,
    spec: &VorticitySpec,
    tol: f64,
    max_iter: usize,
) -> Result<(StripField, NewtonReport)> {
    if !(tol > 0.0) {
        return Err(WaveError::Domain("tolerance must be positive".into()));
    }
    let mut f = f0.clone();
    let mut res = residual(&f, spec)?;
    let mut it = 0;
    loop {
        if res.sup <= tol {
            // One more full step is cheap and leaves the iterate where a
            // further step moves it only at round-off level.
            if let Ok(polished) = newton_step(&f, spec) {
                if polished.check_positive().is_ok() {
                    let r = residual_unchecked(&polished, spec);
                    if r.sup <= tol {
                        return Ok((polished, NewtonReport { iterations: it, residual: r.sup }));
                    }
                }
            }
            return Ok((f, NewtonReport { iterations: it, residual: res.sup }));
        }
        if it >= max_iter {
            return Err(WaveError::NonConvergence { iterations: it, residual: res.sup });
        }
        let lu = assemble_jacobian(&f, spec)?.factor()?;
        let delta = lu.solve(&res.values);
        let u = f.unknowns();
        let mut lambda = 1.0;
        loop {
            let mut trial = f.clone();
            let un: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a - lambda * d).collect();
            trial.set_unknowns(&un);
            if trial.check_positive().is_ok() {
                let r = residual_unchecked(&trial, spec);
                if r.sup < res.sup {
                    f = trial;
                    res = r;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 2f64.powi(-20) {
                return Err(WaveError::Stalled { residual: res.sup });
            }
        }
        it += 1;
    }
}

/// Coefficients of the sech² start h = H + a sech²(kq) H/d with
/// a = c₁ d (F² − 1), k = c₂ √(F² − 1)/d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuessShape {
    pub c1: f64,
    pub c2: f64,
}

impl Default for GuessShape {
    fn default() -> Self {
        Self { c1: 1.0, c2: 0.75f64.sqrt() }
    }
}

pub fn guess_with_shape(family: &StreamFamily, r: f64, grid: StripGrid, shape: GuessShape) -> Result<StripField> {
    let spec = &family.spec;
    let theta = family.solve_theta(r, Regime::Supercritical)?;
    let mut f = StripField::uniform(spec, grid, theta)?;
    f.r = r;
    let col = profile(spec, theta, grid.np)?;
    let d = col[grid.np - 1];
    let excess = (crate::stream::froude(spec, theta)?.powi(2) - 1.0).max(0.0);
    let a = shape.c1 * d * excess;
    let k = shape.c2 * excess.sqrt() / d;
    for i in 0..grid.nq - 1 {
        let s = 1.0 / (k * grid.q(i)).cosh();
        for j in 0..grid.np {
            f.h[i * grid.np + j] = col[j] * (1.0 + a * s * s / d);
        }
    }
    Ok(f)
}

/// Sech² start whose constants minimise the discrete L2 residual over a
/// coarse (c₁, c₂) lattice.
pub fn initial_guess(spec: &VorticitySpec, r: f64, grid: StripGrid) -> Result<StripField> {
    let family = StreamFamily::new(spec.clone())?;
    initial_guess_in(&family, r, grid)
}

pub fn initial_guess_in(family: &StreamFamily, r: f64, grid: StripGrid) -> Result<StripField> {
    let r_c = family.summary.r_c;
    if !(r >= r_c) {
        return Err(WaveError::BelowCritical { r, r_c });
    }
    let shape = calibrate_shape(family, r, grid)?;
    guess_with_shape(family, r, grid, shape)
}

pub fn calibrate_shape(family: &StreamFamily, r: f64, grid: StripGrid) -> Result<GuessShape> {
    let base = GuessShape::default();
    let mut best = (f64::INFINITY, base);
    for c1 in [0.5, 0.75, 1.0, 1.25, 1.5] {
        for s2 in [0.7, 0.85, 1.0, 1.15, 1.3] {
            let shape = GuessShape { c1, c2: s2 * base.c2 };
            let f = guess_with_shape(family, r, grid, shape)?;
            if f.check_positive().is_err() {
                continue;
            }
            let l2 = residual_unchecked(&f, &family.spec).l2;
            if l2 < best.0 {
                best = (l2, shape);
            }
        }
    }
    Ok(best.1)
}

const CHECKPOINT_MAGIC: &str = "wavebranch-strip 1";

pub fn checkpoint_string(f: &StripField, spec: &VorticitySpec) -> String {
    let g = &f.grid;
    let mut s = String::new();
    let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
    let coeffs: Vec<String> = spec.coeffs().iter().map(|c| format!("{c:.16e}")).collect();
    let _ = writeln!(s, "omega {}", coeffs.join(" "));
    let _ = writeln!(s, "L {:.16e}", g.l);
    let _ = writeln!(s, "nq {}", g.nq);
    let _ = writeln!(s, "np {}", g.np);
    let _ = writeln!(s, "R {:.16e}", f.r);
    let _ = writeln!(s, "theta {:.16e}", f.theta);
    for i in 0..g.nq {
        let row: Vec<String> = (0..g.np).map(|j| format!("{:.16e}", f.at(i, j))).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn parse_checkpoint(text: &str) -> Result<(StripField, VorticitySpec)> {
    let bad = |m: &str| WaveError::Format(m.to_string());
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing header line"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        let rest = line.strip_prefix(key).ok_or_else(|| bad(&format!("expected `{key}`")))?;
        Ok(rest.trim().to_string())
    };
    let num = |s: String| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
    let omega = field("omega")?;
    let coeffs = omega
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad("bad omega coefficient")))
        .collect::<Result<Vec<_>>>()?;
    let l = num(field("L")?)?;
    let nq = field("nq")?.parse::<usize>().map_err(|_| bad("bad nq"))?;
    let np = field("np")?.parse::<usize>().map_err(|_| bad("bad np"))?;
    let r = num(field("R")?)?;
    let theta = num(field("theta")?)?;
    let grid = StripGrid::new(l, nq, np)?;
    let mut h = Vec::with_capacity(nq * np);
    for line in lines {
        for t in line.split_whitespace() {
            h.push(t.parse::<f64>().map_err(|_| bad("bad field value"))?);
        }
    }
    if h.len() != nq * np {
        return Err(bad(&format!("expected {} values, found {}", nq * np, h.len())));
    }
    Ok((StripField { grid, h, r, theta }, VorticitySpec::new(coeffs)?))
}

pub fn write_checkpoint(path: &Path, f: &StripField, spec: &VorticitySpec) -> Result<()> {
    std::fs::write(path, checkpoint_string(f, spec))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(StripField, VorticitySpec)> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}
