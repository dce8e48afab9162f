//! Pseudo-arclength continuation of the solitary branch, spectral monitoring
//! and event detection.
//!
//! The driver is generic over [`BranchSystem`], so the same predictor and
//! bordered corrector run on the strip problem and on small closed-form
//! systems used to test it.

use std::cell::RefCell;
use std::path::Path;

use serde::Serialize;

use crate::band::{BandLu, BandMatrix};
use crate::eigen::{nearest_eigenpairs, EigenOptions};
use crate::error::{Result, WaveError};
use crate::spectrum1d::nu0;
use crate::stream::{profile, stream_at, Regime, StreamFamily};
use crate::strip::{jacobian_with_r, residual, write_checkpoint, StripField, StripGrid};

/// A one-parameter family F(u, R) = 0 with a banded Jacobian.
pub trait BranchSystem {
    fn dim(&self) -> usize;
    fn residual(&self, u: &[f64], r: f64) -> Result<Vec<f64>>;
    /// ∂F/∂u and ∂F/∂R.
    fn jacobian(&self, u: &[f64], r: f64) -> Result<(BandMatrix, Vec<f64>)>;
    /// Weights of the u-part of the arclength inner product.
    fn weights(&self) -> &[f64];
    /// Diagonal of M in the eigenproblem J w = μ M w at (u, R).
    fn mass(&self, u: &[f64], r: f64) -> Result<Vec<f64>> {
        let _ = (u, r);
        Ok(vec![1.0; self.dim()])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub ds: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub grow: f64,
    /// Newton iterations at or below which the step grows.
    pub fast_iters: usize,
    pub max_newton: usize,
    pub tol: f64,
}

impl StepControl {
    /// Defaults around a nominal step: clamp to [ds/64, 8 ds], grow ×1.3.
    pub fn new(ds: f64) -> Self {
        Self { ds, ds_min: ds / 64.0, ds_max: 8.0 * ds, grow: 1.3, fast_iters: 3, max_newton: 10, tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct RawPoint {
    pub u: Vec<f64>,
    pub r: f64,
    /// Accumulated arclength.
    pub t: f64,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Budget,
    Requested(String),
    /// Corrector kept failing at the minimal step.
    Stall { t: f64 },
}

#[derive(Debug, Clone)]
pub struct BranchRun<P> {
    pub points: Vec<P>,
    pub stop: StopReason,
}

impl<P> BranchRun<P> {
    pub fn into_result(self) -> Result<Vec<P>> {
        match self.stop {
            StopReason::Stall { t } => Err(WaveError::BranchStall { t }),
            _ => Ok(self.points),
        }
    }
}

fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Unit secant from `prev` to `curr` in the norm √(Σ w δu² + δR²).
pub fn secant_tangent(w: &[f64], prev: (&[f64], f64), curr: (&[f64], f64)) -> Result<(Vec<f64>, f64)> {
    let du: Vec<f64> = curr.0.iter().zip(prev.0).map(|(a, b)| a - b).collect();
    let dr = curr.1 - prev.1;
    let norm = (wdot(w, &du, &du) + dr * dr).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(WaveError::DegenerateTangent);
    }
    Ok((du.into_iter().map(|x| x / norm).collect(), dr / norm))
}

/// Solves [[J, f_r], [cᵀ, d]] (x, y) = (b, g) by block elimination with one
/// step of iterative refinement on the full bordered system; the refinement
/// repairs most of what block elimination loses near folds, where J alone is
/// nearly singular.
pub(crate) fn solve_bordered(j: &BandMatrix, lu: &BandLu, fr: &[f64], c: &[f64], d: f64, b: &[f64], g: f64) -> Result<(Vec<f64>, f64)> {
    let z = lu.solve(fr);
    let schur = d - c.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
    if schur == 0.0 || !schur.is_finite() {
        return Err(WaveError::Numerical("singular bordered system".into()));
    }
    let once = |b: &[f64], g: f64| {
        let a = lu.solve(b);
        let y = (g - c.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>()) / schur;
        let x: Vec<f64> = a.iter().zip(&z).map(|(a, z)| a - y * z).collect();
        (x, y)
    };
    let (mut x, mut y) = once(b, g);
    let jx = j.matvec(&x);
    let rb: Vec<f64> = b.iter().zip(&jx).zip(fr).map(|((b, jx), f)| b - jx - f * y).collect();
    let rg = g - c.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() - d * y;
    let (dx, dy) = once(&rb, rg);
    x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
    y += dy;
    Ok((x, y))
}

/// Tangent of the solution curve at a solved point with positive R-component:
/// solve J b = ∂F/∂R and normalise (−b, 1).
pub fn initial_tangent<S: BranchSystem + ?Sized>(sys: &S, u: &[f64], r: f64) -> Result<(Vec<f64>, f64)> {
    let (j, fr) = sys.jacobian(u, r)?;
    let b = j.factor()?.solve(&fr);
    let w = sys.weights();
    let norm = (wdot(w, &b, &b) + 1.0).sqrt();
    Ok((b.iter().map(|x| -x / norm).collect(), 1.0 / norm))
}

/// Newton at fixed R, step halved until the sup-norm residual drops.
pub fn newton_fixed_r<S: BranchSystem + ?Sized>(sys: &S, u0: &[f64], r: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut u = u0.to_vec();
    let mut res = sup(&sys.residual(&u, r)?);
    for _ in 0..max_iter {
        if res <= tol {
            return Ok(u);
        }
        let f = sys.residual(&u, r)?;
        let delta = sys.jacobian(&u, r)?.0.factor()?.solve(&f);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a - lambda * d).collect();
            if let Ok(rt) = sys.residual(&trial, r) {
                let rs = sup(&rt);
                if rs < res {
                    u = trial;
                    res = rs;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 2f64.powi(-20) {
                return Err(WaveError::Stalled { residual: res });
            }
        }
    }
    if res <= tol {
        Ok(u)
    } else {
        Err(WaveError::NonConvergence { iterations: max_iter, residual: res })
    }
}

/// One pseudo-arclength corrector from the predictor (anchor + ds·τ).
fn correct<S: BranchSystem + ?Sized>(
    sys: &S,
    anchor: (&[f64], f64),
    tangent: (&[f64], f64),
    ds: f64,
    ctrl: &StepControl,
) -> Result<(Vec<f64>, f64, usize)> {
    let w = sys.weights();
    let c: Vec<f64> = w.iter().zip(tangent.0).map(|(a, b)| a * b).collect();
    let mut u: Vec<f64> = anchor.0.iter().zip(tangent.0).map(|(a, t)| a + ds * t).collect();
    let mut r = anchor.1 + ds * tangent.1;
    // The first converged iterate gets one polishing step; the iteration
    // count reported for step control is the one at convergence.
    let mut converged: Option<(usize, Vec<f64>, f64)> = None;
    for it in 0..=ctrl.max_newton + 1 {
        let f = sys.residual(&u, r)?;
        let du: Vec<f64> = u.iter().zip(anchor.0).map(|(a, b)| a - b).collect();
        let g = c.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>() + tangent.1 * (r - anchor.1) - ds;
        let sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sup <= ctrl.tol && g.abs() <= ctrl.tol {
            match converged {
                Some((k, _, _)) => return Ok((u, r, k)),
                None => converged = Some((it, u.clone(), r)),
            }
        }
        if (converged.is_none() && it == ctrl.max_newton) || it > ctrl.max_newton || !sup.is_finite() {
            break;
        }
        let step = sys.jacobian(&u, r).and_then(|(j, fr)| {
            let lu = j.factor()?;
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            solve_bordered(&j, &lu, &fr, &c, tangent.1, &rhs, -g)
        });
        let (dx, dy) = match (step, &converged) {
            (Ok(d), _) => d,
            // An exactly singular J at a converged point (a crossing hit
            // dead on) only skips the polish.
            (Err(_), Some(_)) => break,
            (Err(e), None) => return Err(e),
        };
        u.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        r += dy;
    }
    if let Some((k, u, r)) = converged {
        return Ok((u, r, k));
    }
    Err(WaveError::NonConvergence { iterations: ctrl.max_newton, residual: f64::NAN })
}

/// Runs `steps` accepted continuation steps from a solved point. The first
/// predictor uses the exact tangent, later ones the secant through the last
/// two accepted points. `on_accept` sees every accepted point (the start
/// included, as index 0) and may stop the run by returning a reason.
pub fn continue_generic<S, F>(
    sys: &S,
    u0: Vec<f64>,
    r0: f64,
    steps: usize,
    ctrl: &StepControl,
    mut on_accept: F,
) -> Result<BranchRun<RawPoint>>
where
    S: BranchSystem + ?Sized,
    F: FnMut(&RawPoint, usize) -> Result<Option<String>>,
{
    let start = RawPoint { u: u0, r: r0, t: 0.0, newton_iters: 0 };
    let mut points = vec![start];
    if let Some(why) = on_accept(&points[0], 0)? {
        return Ok(BranchRun { points, stop: StopReason::Requested(why) });
    }
    let mut tangent = initial_tangent(sys, &points[0].u, points[0].r)?;
    let mut ds = ctrl.ds;
    while points.len() <= steps {
        let last = points.last().expect("non-empty");
        match correct(sys, (&last.u, last.r), (&tangent.0, tangent.1), ds, ctrl) {
            Ok((u, r, iters)) => {
                let p = RawPoint { u, r, t: last.t + ds, newton_iters: iters };
                let next_tangent = secant_tangent(sys.weights(), (&last.u, last.r), (&p.u, p.r))?;
                points.push(p);
                let k = points.len() - 1;
                if let Some(why) = on_accept(&points[k], k)? {
                    return Ok(BranchRun { points, stop: StopReason::Requested(why) });
                }
                tangent = next_tangent;
                if iters <= ctrl.fast_iters {
                    ds = (ds * ctrl.grow).min(ctrl.ds_max);
                }
            }
            Err(_) => {
                if ds <= ctrl.ds_min {
                    let t = points.last().expect("non-empty").t;
                    return Ok(BranchRun { points, stop: StopReason::Stall { t } });
                }
                ds = (ds * 0.5).max(ctrl.ds_min);
            }
        }
    }
    Ok(BranchRun { points, stop: StopReason::Budget })
}

/// The strip problem as a branch system: unknowns are the free nodes, R moves
/// the far column along the supercritical family.
pub struct StripSystem {
    pub family: StreamFamily,
    pub grid: StripGrid,
    weights: Vec<f64>,
    column: RefCell<Option<(f64, f64, Vec<f64>)>>,
}

impl StripSystem {
    pub fn new(family: StreamFamily, grid: StripGrid) -> Self {
        let weights = vec![grid.dq() * grid.dp(); grid.unknowns()];
        Self { family, grid, weights, column: RefCell::new(None) }
    }

    fn far_column(&self, r: f64) -> Result<(f64, Vec<f64>)> {
        if let Some((rc, th, col)) = self.column.borrow().as_ref() {
            if *rc == r {
                return Ok((*th, col.clone()));
            }
        }
        let th = self.family.solve_theta(r, Regime::Supercritical)?;
        let col = profile(&self.family.spec, th, self.grid.np)?;
        *self.column.borrow_mut() = Some((r, th, col.clone()));
        Ok((th, col))
    }

    pub fn field(&self, u: &[f64], r: f64) -> Result<StripField> {
        let g = self.grid;
        let (theta, col) = self.far_column(r)?;
        let mut f = StripField { grid: g, h: vec![0.0; g.nq * g.np], r, theta };
        f.h[(g.nq - 1) * g.np..].copy_from_slice(&col);
        f.set_unknowns(u);
        Ok(f)
    }
}

impl BranchSystem for StripSystem {
    fn dim(&self) -> usize {
        self.grid.unknowns()
    }

    fn residual(&self, u: &[f64], r: f64) -> Result<Vec<f64>> {
        Ok(residual(&self.field(u, r)?, &self.family.spec)?.values)
    }

    fn jacobian(&self, u: &[f64], r: f64) -> Result<(BandMatrix, Vec<f64>)> {
        jacobian_with_r(&self.field(u, r)?, &self.family)
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn mass(&self, u: &[f64], r: f64) -> Result<Vec<f64>> {
        Ok(mass_diagonal(&self.field(u, r)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    /// max |ξ′(q)|; blows up for an overhanging profile.
    pub max_surface_slope: f64,
    /// min over q of R − ξ(q) = |∇Ψ|²/2 on the surface.
    pub surface_margin: f64,
    /// min over q of Ψ_Y(q, 0) = 1/h_p(q, 0).
    pub bottom_margin: f64,
    pub min_hp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MarginKind {
    Overhanging,
    SurfaceStagnation,
    BottomStagnation,
    InteriorStagnation,
}

impl Diagnostics {
    pub fn of(f: &StripField) -> Result<Self> {
        let g = &f.grid;
        let min_hp = f.check_positive()?;
        let xi = f.surface();
        let mut slope = 0.0f64;
        for i in 1..g.nq - 1 {
            slope = slope.max(((xi[i + 1] - xi[i - 1]) / (2.0 * g.dq())).abs());
        }
        let surface_margin = xi.iter().fold(f64::INFINITY, |m, x| m.min(f.r - x));
        let mut bottom = f64::INFINITY;
        for i in 0..g.nq {
            let hp0 = (-3.0 * f.at(i, 0) + 4.0 * f.at(i, 1) - f.at(i, 2)) / (2.0 * g.dp());
            bottom = bottom.min(1.0 / hp0);
        }
        Ok(Self { max_surface_slope: slope, surface_margin, bottom_margin: bottom, min_hp })
    }

    /// Positive quantities that shrink towards the alternatives a solitary
    /// branch can end in.
    pub fn margins(&self) -> [(MarginKind, f64); 4] {
        [
            (MarginKind::Overhanging, 1.0 / self.max_surface_slope.max(f64::MIN_POSITIVE)),
            (MarginKind::SurfaceStagnation, self.surface_margin),
            (MarginKind::BottomStagnation, self.bottom_margin),
            (MarginKind::InteriorStagnation, self.min_hp),
        ]
    }

    /// First margin below `fraction` of its value in `initial`.
    pub fn breach(&self, initial: &Diagnostics, fraction: f64) -> Option<MarginKind> {
        self.margins()
            .iter()
            .zip(initial.margins().iter())
            .find(|((_, now), (_, first))| !(*now > fraction * first))
            .map(|((k, _), _)| *k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    pub value: f64,
    pub localized: bool,
    /// Share of ‖w‖² in q < L/2.
    pub inner_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    pub modes: Vec<Mode>,
    pub mu0: f64,
    /// Second localized eigenvalue below ν₀, or ν₀ itself if there is none.
    pub mu1: f64,
    pub nu0: f64,
}

impl Spectrum {
    pub fn localized_below_edge(&self) -> Vec<f64> {
        self.modes.iter().filter(|m| m.localized && m.value < self.nu0).map(|m| m.value).collect()
    }
}

pub const LOCALIZED_MASS: f64 = 0.99;

/// Share of Σ w² carried by nodes with q < L/2.
pub fn inner_mass(grid: &StripGrid, w: &[f64]) -> f64 {
    let m = grid.np - 1;
    let (mut inner, mut total) = (0.0, 0.0);
    for (k, v) in w.iter().enumerate() {
        let e = v * v;
        total += e;
        if grid.q(k / m) < 0.5 * grid.l {
            inner += e;
        }
    }
    if total > 0.0 {
        inner / total
    } else {
        0.0
    }
}

/// Generalised weight of the linearised problem: 1/h_p on PDE rows, zero on
/// the Bernoulli rows, which act as boundary constraints.
pub fn mass_diagonal(f: &StripField) -> Vec<f64> {
    let m = f.grid.np - 1;
    f.hp_at_unknowns().iter().enumerate().map(|(k, hp)| if k % m == m - 1 { 0.0 } else { 1.0 / hp }).collect()
}

/// Discrete eigenvalues near and below ν₀ of the linearisation at `f`, at
/// least `k` of them, each flagged localized or extended.
pub fn spectrum_at(f: &StripField, family: &StreamFamily, k: usize) -> Result<Spectrum> {
    if k < 2 {
        return Err(WaveError::Domain("spectrum needs k ≥ 2".into()));
    }
    let spec = &family.spec;
    let nu = nu0(spec, &stream_at(spec, f.theta)?, 512)?;
    let j = crate::strip::assemble_jacobian(f, spec)?;
    let m = mass_diagonal(f);
    let opts = EigenOptions {
        shift: -2.0 * nu.abs().max(1e-3),
        block: (k + 6).max(10),
        wanted_below: nu,
        min_wanted: k,
        max_iter: 2000,
        ..Default::default()
    };
    let pairs = nearest_eigenpairs(&j, &m, opts)?;
    let modes: Vec<Mode> = pairs
        .iter()
        .map(|p| {
            let im = inner_mass(&f.grid, &p.vector);
            Mode { value: p.value, localized: im > LOCALIZED_MASS, inner_mass: im }
        })
        .collect();
    let loc: Vec<f64> = modes.iter().filter(|m| m.localized && m.value < nu).map(|m| m.value).collect();
    let mu0 = loc.first().copied().unwrap_or(nu);
    let mu1 = loc.get(1).copied().unwrap_or(nu);
    Ok(Spectrum { modes, mu0, mu1, nu0: nu })
}

#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub field: StripField,
    pub t: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub nu0: f64,
    pub diag: Diagnostics,
    pub newton_iters: usize,
}

impl BranchPoint {
    pub fn new(field: StripField, t: f64, family: &StreamFamily, newton_iters: usize) -> Result<Self> {
        let s = spectrum_at(&field, family, 4)?;
        let diag = Diagnostics::of(&field)?;
        Ok(Self { field, t, mu0: s.mu0, mu1: s.mu1, nu0: s.nu0, diag, newton_iters })
    }

    pub fn sample(&self) -> Sample {
        Sample { t: self.t, r: self.field.r, mu1: self.mu1, nu0: self.nu0, diag: Some(self.diag) }
    }
}

/// Options of [`continue_branch`] beyond step control.
#[derive(Debug, Clone, Copy)]
pub struct BranchOptions {
    /// Margin breach when a margin falls below this fraction of its start value.
    pub breach_fraction: f64,
    /// Skip eigenvalue computations (diagnostics only).
    pub spectra: bool,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self { breach_fraction: 1e-2, spectra: true }
    }
}

/// Continues the strip branch from a solved `start`. `sink` receives each
/// accepted point as soon as it is available (checkpoint writing).
pub fn continue_branch<F>(
    start: &StripField,
    family: &StreamFamily,
    steps: usize,
    ctrl: &StepControl,
    opts: BranchOptions,
    mut sink: F,
) -> Result<BranchRun<BranchPoint>>
where
    F: FnMut(&BranchPoint, usize) -> Result<()>,
{
    let sys = StripSystem::new(family.clone(), start.grid);
    let initial = Diagnostics::of(start)?;
    let mut out: Vec<BranchPoint> = Vec::new();
    let run = continue_generic(&sys, start.unknowns(), start.r, steps, ctrl, |p, k| {
        let field = sys.field(&p.u, p.r)?;
        let point = if opts.spectra {
            BranchPoint::new(field, p.t, family, p.newton_iters)?
        } else {
            let diag = Diagnostics::of(&field)?;
            BranchPoint { field, t: p.t, mu0: f64::NAN, mu1: f64::NAN, nu0: f64::NAN, diag, newton_iters: p.newton_iters }
        };
        sink(&point, k)?;
        let breach = point.diag.breach(&initial, opts.breach_fraction);
        out.push(point);
        Ok(breach.map(|kind| format!("margin breach: {kind:?}")))
    })?;
    Ok(BranchRun { points: out, stop: run.stop })
}

/// A scalar trace of the branch, enough for event detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub r: f64,
    pub mu1: f64,
    pub nu0: f64,
    pub diag: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BranchEvent {
    /// Local extremum of R(t); `bracket` indexes the samples around it.
    Turning { t: f64, r: f64, bracket: (usize, usize) },
    /// μ₁ changes sign below ν₀; `m` is the log–log slope estimate of its
    /// order of vanishing.
    EigenCrossing { t: f64, m: f64, bracket: (usize, usize) },
    MarginBreach { kind: MarginKind, t: f64, index: usize },
}

/// Vertex of the parabola through three samples.
fn parabola_vertex(t: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (t[1] - t[0]);
    let d2 = (y[2] - y[1]) / (t[2] - t[1]);
    let a = (d2 - d1) / (t[2] - t[0]);
    if a == 0.0 {
        return (t[1], y[1]);
    }
    let b = d1 - a * (t[0] + t[1]);
    let tv = (-b / (2.0 * a)).clamp(t[0], t[2]);
    let yv = y[0] + d1 * (tv - t[0]) + a * (tv - t[0]) * (tv - t[1]);
    (tv, yv)
}

/// Lagrange interpolant through the given nodes.
fn lagrange(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..ts.len() {
        let mut l = 1.0;
        for j in 0..ts.len() {
            if i != j {
                l *= (t - ts[j]) / (ts[i] - ts[j]);
            }
        }
        s += ys[i] * l;
    }
    s
}

/// Root of `f` in [a, b] (sign change assumed) by the Illinois variant of
/// regula falsi.
pub fn secant_root<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> Result<f64> {
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(WaveError::Domain("no sign change in bracket".into()));
    }
    let mut side = 0i32;
    for _ in 0..max_iter {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c)?;
        if fc == 0.0 || (b - a).abs() < tol {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < tol {
            return Ok(0.5 * (a + b));
        }
    }
    Ok((a * fb - b * fa) / (fb - fa))
}

/// Maximiser (or minimiser) of `f` on [a, b] by golden-section search.
pub fn golden_extremum<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64, maximize: bool, tol: f64) -> Result<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let s = if maximize { 1.0 } else { -1.0 };
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (s * f(c)?, s * f(d)?);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = s * f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = s * f(d)?;
        }
    }
    let t = 0.5 * (a + b);
    Ok((t, f(t)?))
}

/// Slope of log|μ| against log|t − t*| over the `n` samples nearest t*.
pub fn crossing_order(samples: &[Sample], t_star: f64, n: usize) -> f64 {
    let mut near: Vec<&Sample> = samples.iter().filter(|s| s.t != t_star && s.mu1 != 0.0).collect();
    near.sort_by(|a, b| (a.t - t_star).abs().total_cmp(&(b.t - t_star).abs()));
    near.truncate(n);
    let xs: Vec<f64> = near.iter().map(|s| (s.t - t_star).abs().ln()).collect();
    let ys: Vec<f64> = near.iter().map(|s| s.mu1.abs().ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Turning points, eigenvalue crossings and margin breaches along a trace.
pub fn detect_events(samples: &[Sample]) -> Vec<BranchEvent> {
    let mut events = Vec::new();
    let n = samples.len();
    if n < 3 {
        return events;
    }
    for k in 1..n - 1 {
        let d0 = samples[k].r - samples[k - 1].r;
        let d1 = samples[k + 1].r - samples[k].r;
        if d0 != 0.0 && d1 != 0.0 && d0.signum() != d1.signum() {
            let (t, r) = parabola_vertex(
                [samples[k - 1].t, samples[k].t, samples[k + 1].t],
                [samples[k - 1].r, samples[k].r, samples[k + 1].r],
            );
            events.push(BranchEvent::Turning { t, r, bracket: (k - 1, k + 1) });
        }
    }
    for k in 0..n - 1 {
        let (a, b) = (&samples[k], &samples[k + 1]);
        let below = a.mu1 < a.nu0 && b.mu1 < b.nu0;
        if below && a.mu1 != 0.0 && a.mu1.signum() != b.mu1.signum() {
            // Cubic through the four samples around the bracket, then secant.
            let lo = k.saturating_sub(1).min(n.saturating_sub(4));
            let idx: Vec<usize> = (lo..(lo + 4).min(n)).collect();
            let ts: Vec<f64> = idx.iter().map(|&i| samples[i].t).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| samples[i].mu1).collect();
            let t = secant_root(|t| Ok(lagrange(&ts, &ys, t)), a.t, b.t, 1e-14, 200).unwrap_or(0.5 * (a.t + b.t));
            let m = crossing_order(samples, t, 6);
            events.push(BranchEvent::EigenCrossing { t, m, bracket: (k, k + 1) });
        }
    }
    if let Some(first) = samples.iter().find_map(|s| s.diag) {
        for (k, s) in samples.iter().enumerate() {
            if let Some(kind) = s.diag.and_then(|d| d.breach(&first, 1e-2)) {
                events.push(BranchEvent::MarginBreach { kind, t: s.t, index: k });
                break;
            }
        }
    }
    events
}

/// Writes `point` as `dir/point_NNNN.txt` via a temporary file and rename.
pub fn write_point_checkpoint(dir: &Path, index: usize, point: &BranchPoint, family: &StreamFamily) -> Result<()> {
    let name = format!("point_{index:04}.txt");
    let tmp = dir.join(format!(".{name}.tmp"));
    write_checkpoint(&tmp, &point.field, &family.spec)?;
    std::fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

pub const CSV_HEADER: &str = "step,t,R,xi0,mu0,mu1,nu0,max_surface_slope,surface_margin,bottom_margin,min_hp";

pub fn csv_row(index: usize, p: &BranchPoint) -> String {
    let d = &p.diag;
    format!(
        "{index},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        p.t,
        p.field.r,
        p.field.crest(),
        p.mu0,
        p.mu1,
        p.nu0,
        d.max_surface_slope,
        d.surface_margin,
        d.bottom_margin,
        d.min_hp
    )
}

/// Solves the branch at pseudo-arclength `s` from `left` along the chord to
/// `right`; used to re-solve the PDE inside an event bracket.
pub fn solve_on_chord<S: BranchSystem + ?Sized>(
    sys: &S,
    left: (&[f64], f64),
    right: (&[f64], f64),
    s: f64,
    ctrl: &StepControl,
) -> Result<(Vec<f64>, f64)> {
    if s == 0.0 {
        return Ok((left.0.to_vec(), left.1));
    }
    let (tu, tr) = secant_tangent(sys.weights(), left, right)?;
    let (u, r, _) = correct(sys, left, (&tu, tr), s, ctrl)?;
    Ok((u, r))
}

fn chord_length(w: &[f64], a: (&[f64], f64), b: (&[f64], f64)) -> f64 {
    let du: Vec<f64> = a.0.iter().zip(b.0).map(|(x, y)| x - y).collect();
    (wdot(w, &du, &du) + (a.1 - b.1).powi(2)).sqrt()
}

/// Refined fold inside the bracket `(i, k)` of `points`: golden-section
/// search for the extremum of R over re-solved points on the chord.
pub fn refine_turning(
    sys: &StripSystem,
    points: &[BranchPoint],
    bracket: (usize, usize),
    ctrl: &StepControl,
) -> Result<(f64, f64)> {
    let (a, b) = (&points[bracket.0], &points[bracket.1]);
    let mid = &points[(bracket.0 + bracket.1) / 2];
    let (ua, ub) = (a.field.unknowns(), b.field.unknowns());
    let len = chord_length(sys.weights(), (&ua, a.field.r), (&ub, b.field.r));
    let maximize = mid.field.r >= a.field.r;
    let (s, r) = golden_extremum(
        |s| Ok(solve_on_chord(sys, (&ua, a.field.r), (&ub, b.field.r), s, ctrl)?.1),
        0.0,
        len,
        maximize,
        1e-6 * len.max(1e-12),
    )?;
    Ok((a.t + s, r))
}

/// Refined zero of μ₁ inside the bracket `(i, i + 1)`, by secant iteration on
/// μ₁ of re-solved points.
pub fn refine_crossing(
    sys: &StripSystem,
    points: &[BranchPoint],
    bracket: (usize, usize),
    ctrl: &StepControl,
) -> Result<f64> {
    let (a, b) = (&points[bracket.0], &points[bracket.1]);
    let (ua, ub) = (a.field.unknowns(), b.field.unknowns());
    let len = chord_length(sys.weights(), (&ua, a.field.r), (&ub, b.field.r));
    let s = secant_root(
        |s| {
            let (u, r) = solve_on_chord(sys, (&ua, a.field.r), (&ub, b.field.r), s, ctrl)?;
            Ok(spectrum_at(&sys.field(&u, r)?, &sys.family, 4)?.mu1)
        },
        0.0,
        len,
        1e-8 * len.max(1e-12),
        40,
    )?;
    Ok(a.t + s)
}
