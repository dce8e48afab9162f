//! Lyapunov–Schmidt reduction at a simple eigenvalue and branch switching.
//!
//! A family 𝓕(x, λ) with 𝓕(0, λ) = 0 is split along the critical eigenvector:
//! x = s v̂ + w with ⟨w, ẑ⟩_M = 0, the complement equation is solved for w by
//! Newton, and the scalar map B(s, λ) = ⟨𝓕(s v̂ + w, λ), ẑ⟩ carries all local
//! solutions. Zero curves of B/s are traced on a lattice.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::band::BandMatrix;
use crate::branch::{newton_fixed_r, BranchPoint, StripSystem, secant_root, solve_bordered, solve_on_chord, BranchSystem, RawPoint, StepControl};
use crate::eigen::{left_null_vector, nearest_eigenpairs, EigenOptions};
use crate::error::{Result, WaveError};
use crate::stream::StreamFamily;
use crate::strip::{newton_solve, StripField};

/// Critical eigen-data of A(λ) = D_x𝓕(0, λ): A v = μ M v, zᵀA = μ zᵀM,
/// ‖v‖₂ = 1 and zᵀ M v = 1.
#[derive(Debug, Clone)]
pub struct EigenData {
    pub mu: f64,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub mass: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl EigenData {
    /// Normalises raw vectors; fails when v and z are nearly M-orthogonal.
    pub fn new(mu: f64, mut v: Vec<f64>, mut z: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        let nv = dot(&v, &v).sqrt();
        let nz = dot(&z, &z).sqrt();
        if !(nv > 0.0 && nz > 0.0) {
            return Err(WaveError::IllPosedProjector(0.0));
        }
        v.iter_mut().for_each(|x| *x /= nv);
        z.iter_mut().for_each(|x| *x /= nz);
        let mv: Vec<f64> = v.iter().zip(&mass).map(|(a, m)| a * m).collect();
        let c = dot(&z, &mv);
        if !(c.abs() >= 1e-8) {
            return Err(WaveError::IllPosedProjector(c));
        }
        z.iter_mut().for_each(|x| *x /= c);
        Ok(Self { mu, v, z, mass })
    }

    pub fn mv(&self) -> Vec<f64> {
        self.v.iter().zip(&self.mass).map(|(a, m)| a * m).collect()
    }

    pub fn mz(&self) -> Vec<f64> {
        self.z.iter().zip(&self.mass).map(|(a, m)| a * m).collect()
    }

    /// s = ⟨x, ẑ⟩_M and x − s v̂.
    pub fn project(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let s = dot(&self.mz(), x);
        (s, x.iter().zip(&self.v).map(|(a, b)| a - s * b).collect())
    }
}

fn to_dense(j: &BandMatrix) -> DMatrix<f64> {
    let n = j.dim();
    DMatrix::from_fn(n, n, |a, b| j.get(a, b))
}

fn null_vector(a: &DMatrix<f64>) -> Vec<f64> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (imin, _) = svd.singular_values.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).expect("non-empty");
    vt.row(imin).iter().copied().collect()
}

/// Real eigenvalue of a small dense matrix nearest zero, with right and left
/// eigenvectors. The sign of v is fixed by its largest component.
pub fn dense_critical_eigen(j: &BandMatrix) -> Result<EigenData> {
    let a = to_dense(j);
    let n = a.nrows();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mu = a
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-10 * scale)
        .map(|z| z.re)
        .min_by(|x, y| x.abs().total_cmp(&y.abs()))
        .ok_or_else(|| WaveError::Numerical("no real eigenvalue".into()))?;
    let shifted = &a - DMatrix::identity(n, n) * mu;
    let mut v = null_vector(&shifted);
    let z = null_vector(&shifted.transpose());
    let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    EigenData::new(mu, v, z, vec![1.0; n])
}

/// 𝓕(x, λ) with 𝓕(0, λ) = 0 and a simple critical eigenvalue at λ = 0.
pub trait AnalyticFamily {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], lambda: f64) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64], lambda: f64) -> Result<BandMatrix>;

    fn eigen(&self, lambda: f64) -> Result<EigenData> {
        dense_critical_eigen(&self.jacobian(&vec![0.0; self.dim()], lambda)?)
    }

    /// Eigenvalue of D_x𝓕(x, λ) nearest zero.
    fn critical_eigenvalue(&self, x: &[f64], lambda: f64) -> Result<f64> {
        Ok(dense_critical_eigen(&self.jacobian(x, lambda)?)?.mu)
    }
}

/// Solves [[J, b], [cᵀ, 0]] (x, y) = (r, g).
fn bordered(j: &BandMatrix, b: &[f64], c: &[f64], r: &[f64], g: f64) -> Result<(Vec<f64>, f64)> {
    let n = j.dim();
    if n <= 256 {
        // J is exactly singular at the crossing of a closed-form family, so
        // eliminate on the full bordered matrix instead of on J.
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for k in 0..n {
                a[(i, k)] = j.get(i, k);
            }
            a[(i, n)] = b[i];
            a[(n, i)] = c[i];
        }
        let rhs = DVector::from_iterator(n + 1, r.iter().copied().chain([g]));
        let x = a.lu().solve(&rhs).ok_or_else(|| WaveError::Numerical("singular bordered system".into()))?;
        return Ok((x.rows(0, n).iter().copied().collect(), x[n]));
    }
    let lu = j.factor()?;
    solve_bordered(j, &lu, b, c, 0.0, r, g)
}

#[derive(Debug, Clone)]
pub struct Complement {
    pub w: Vec<f64>,
    /// ⟨𝓕(s v̂ + w, λ), ẑ⟩ at the solution, i.e. B(s, λ).
    pub b: f64,
    pub iterations: usize,
}

/// Newton on (I − P̂)𝓕(s v̂ + w, λ) = 0 with ⟨w, ẑ⟩_M = 0, from w = 0.
pub fn solve_complement_with<F: AnalyticFamily + ?Sized>(fam: &F, e: &EigenData, s: f64, lambda: f64, tol: f64) -> Result<Complement> {
    let n = fam.dim();
    let (mv, mz) = (e.mv(), e.mz());
    let neg_mv: Vec<f64> = mv.iter().map(|x| -x).collect();
    let mut w = vec![0.0; n];
    let mut c = 0.0;
    for it in 0..=40 {
        let x: Vec<f64> = e.v.iter().zip(&w).map(|(v, w)| s * v + w).collect();
        let f = fam.eval(&x, lambda)?;
        let g1: Vec<f64> = f.iter().zip(&mv).map(|(f, m)| f - c * m).collect();
        let g2 = dot(&mz, &w);
        let (r1, r2) = (sup(&g1), g2.abs());
        if !r1.is_finite() {
            break;
        }
        if r1 <= tol && r2 <= tol {
            return Ok(Complement { w, b: dot(&e.z, &f), iterations: it });
        }
        let j = fam.jacobian(&x, lambda)?;
        let rhs: Vec<f64> = g1.iter().map(|v| -v).collect();
        let (dw, dc) = bordered(&j, &neg_mv, &mz, &rhs, -g2)?;
        w.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        c += dc;
    }
    Err(WaveError::OutsideChart { s, lambda })
}

pub fn solve_complement<F: AnalyticFamily + ?Sized>(fam: &F, s: f64, lambda: f64, tol: f64) -> Result<Vec<f64>> {
    Ok(solve_complement_with(fam, &fam.eigen(lambda)?, s, lambda, tol)?.w)
}

/// s = ⟨x, ẑ(λ)⟩_M and the complement x − s v̂(λ).
pub fn project<F: AnalyticFamily + ?Sized>(fam: &F, lambda: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    Ok(fam.eigen(lambda)?.project(x))
}

/// B(s, λ) = s μ(λ) + ⟨𝓕̂(s v̂ + w, λ), ẑ⟩. Since zᵀA = μ zᵀM and ⟨w, ẑ⟩_M = 0
/// this is ⟨𝓕(s v̂ + w, λ), ẑ⟩, which is what gets evaluated.
pub fn reduced_map<F: AnalyticFamily + ?Sized>(fam: &F, s: f64, lambda: f64, tol: f64) -> Result<f64> {
    Ok(solve_complement_with(fam, &fam.eigen(lambda)?, s, lambda, tol)?.b)
}

/// Fitted exponent p in ‖w(s, λ)‖ ~ sᵖ over the given s values.
pub fn complement_exponent<F: AnalyticFamily + ?Sized>(fam: &F, lambda: f64, ss: &[f64], tol: f64) -> Result<f64> {
    let e = fam.eigen(lambda)?;
    let mut pts = Vec::new();
    for &s in ss {
        let w = solve_complement_with(fam, &e, s, lambda, tol)?.w;
        pts.push((s.abs().ln(), dot(&w, &w).sqrt().ln()));
    }
    Ok(loglog_slope(&pts))
}

fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingOrder {
    pub m: u32,
    /// μ(λ) ≈ μ_m λᵐ.
    pub mu_m: f64,
    /// μ changes sign through λ = 0.
    pub odd: bool,
}

/// Order of vanishing of μ(λ) at 0 from samples λ ∈ ±[10⁻³, 10⁻¹·⁵];
/// `None` when μ vanishes identically at sample resolution.
pub fn crossing_order<F: AnalyticFamily + ?Sized>(fam: &F) -> Result<Option<CrossingOrder>> {
    let ls: Vec<f64> = (0..7).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect();
    let mut pos = Vec::new();
    for &l in &ls {
        pos.push(fam.eigen(l)?.mu);
    }
    if pos.iter().all(|m| m.abs() <= 1e-13) {
        return Ok(None);
    }
    let pts: Vec<(f64, f64)> = ls.iter().zip(&pos).map(|(l, m)| (l.ln(), m.abs().ln())).collect();
    let m = loglog_slope(&pts).round().max(1.0) as u32;
    let mu_m = pos[0] / ls[0].powi(m as i32);
    let neg = fam.eigen(-ls[0])?.mu;
    Ok(Some(CrossingOrder { m, mu_m, odd: neg.signum() != pos[0].signum() }))
}

/// Samples of B on the rectangle |s| ≤ s_max, |λ| ≤ λ_max.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedProblem {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    /// b[i][j] = B(s_i, λ_j); NaN where the complement failed.
    pub b: Vec<Vec<f64>>,
    /// ‖w(s_i, λ_j)‖₂.
    pub w_norm: Vec<Vec<f64>>,
    pub order: Option<CrossingOrder>,
}

pub fn sample_reduced<F: AnalyticFamily + ?Sized>(fam: &F, s_max: f64, lambda_max: f64, ns: usize, nl: usize, tol: f64) -> Result<ReducedProblem> {
    let s: Vec<f64> = (0..=2 * ns).map(|i| s_max * (i as f64 - ns as f64) / ns as f64).collect();
    let lambda: Vec<f64> = (0..nl).map(|j| lambda_max * (2.0 * j as f64 / (nl - 1) as f64 - 1.0)).collect();
    let mut b = vec![vec![f64::NAN; nl]; s.len()];
    let mut w_norm = vec![vec![f64::NAN; nl]; s.len()];
    for (j, &l) in lambda.iter().enumerate() {
        let e = fam.eigen(l)?;
        for (i, &si) in s.iter().enumerate() {
            if let Ok(c) = solve_complement_with(fam, &e, si, l, tol) {
                b[i][j] = c.b;
                w_norm[i][j] = dot(&c.w, &c.w).sqrt();
            }
        }
    }
    Ok(ReducedProblem { s, lambda, b, w_norm, order: crossing_order(fam)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurveKind {
    /// λ ≡ const along the curve.
    Vertical,
    /// Critical eigenvalue stays zero along the curve.
    DegenerateEigenvalue,
    /// λ varies along the curve.
    Regular,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub s: f64,
    pub lambda: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    /// +1 for s > 0, −1 for s < 0.
    pub side: i8,
    pub points: Vec<CurvePoint>,
    pub kind: CurveKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalBranches {
    pub order: Option<CrossingOrder>,
    pub curves: Vec<Curve>,
    /// Indices into `curves`: (s > 0 member, s < 0 member).
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct LatticeOptions {
    /// Columns per side.
    pub ns: usize,
    /// λ samples per column.
    pub nl: usize,
    pub tol: f64,
    /// A column with sup |B/s| below this is identically zero.
    pub zero_tol: f64,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        Self { ns: 12, nl: 401, tol: 1e-13, zero_tol: 1e-9 }
    }
}

enum Column {
    Roots(Vec<f64>),
    Zero,
}

/// Zeros in λ of B(s, ·)/s on [−λ_max, λ_max]: sign scan, then secant.
fn column_roots<F: AnalyticFamily + ?Sized>(fam: &F, s: f64, lambda_max: f64, opts: &LatticeOptions) -> Result<Column> {
    let ls: Vec<f64> = (0..opts.nl).map(|j| lambda_max * (2.0 * j as f64 / (opts.nl - 1) as f64 - 1.0)).collect();
    let bt = |l: f64| -> Result<f64> { Ok(reduced_map(fam, s, l, opts.tol)? / s) };
    let vals: Vec<f64> = ls.iter().map(|&l| bt(l).unwrap_or(f64::NAN)).collect();
    let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
    if !finite.is_empty() && finite.len() == vals.len() && sup(&finite) <= opts.zero_tol {
        return Ok(Column::Zero);
    }
    let mut roots = Vec::new();
    for j in 0..ls.len() {
        if vals[j] == 0.0 {
            roots.push(ls[j]);
        } else if j + 1 < ls.len() && vals[j].is_finite() && vals[j + 1].is_finite() && vals[j + 1] != 0.0 && vals[j].signum() != vals[j + 1].signum() {
            roots.push(secant_root(bt, ls[j], ls[j + 1], 1e-15, 200)?);
        }
    }
    Ok(Column::Roots(roots))
}

/// Traces the non-trivial zero curves of B near (0, 0), classifies them and
/// pairs the s > 0 and s < 0 halves.
pub fn local_branches<F: AnalyticFamily + ?Sized>(fam: &F, s_max: f64, lambda_max: f64, opts: &LatticeOptions) -> Result<LocalBranches> {
    let order = crossing_order(fam)?;
    if let Some(o) = order {
        if !o.odd {
            return Err(WaveError::Precondition(format!("crossing order {} is even; branch counts are not certified", o.m)));
        }
    }
    let mut curves: Vec<Curve> = Vec::new();
    let mut per_side: Vec<Vec<usize>> = Vec::new();
    for side in [1i8, -1] {
        let mut cols: Vec<(f64, Column)> = Vec::new();
        for k in 1..=opts.ns {
            let s = side as f64 * s_max * k as f64 / opts.ns as f64;
            cols.push((s, column_roots(fam, s, lambda_max, opts)?));
        }
        let mut ids = Vec::new();
        if cols.iter().all(|(_, c)| matches!(c, Column::Zero)) {
            // Every λ is a zero: report the curve through the crossing, λ ≡ 0.
            let points = cols.iter().map(|(s, _)| curve_point(fam, *s, 0.0, opts.tol)).collect::<Result<Vec<_>>>()?;
            ids.push(curves.len());
            curves.push(Curve { side, points, kind: CurveKind::Vertical });
        } else {
            let counts: Vec<usize> = cols.iter().filter_map(|(_, c)| if let Column::Roots(r) = c { Some(r.len()) } else { None }).collect();
            let n = (1..=counts.iter().copied().max().unwrap_or(0))
                .max_by_key(|n| (counts.iter().filter(|c| *c == n).count(), *n))
                .unwrap_or(0);
            for k in 0..n {
                let mut points = Vec::new();
                for (s, c) in &cols {
                    if let Column::Roots(r) = c {
                        if r.len() == n {
                            points.push(curve_point(fam, *s, r[k], opts.tol)?);
                        }
                    }
                }
                let kind = classify(fam, &points)?;
                ids.push(curves.len());
                curves.push(Curve { side, points, kind });
            }
        }
        per_side.push(ids);
    }
    if curves.is_empty() && order.is_some_and(|o| o.odd) {
        return Err(WaveError::Resolution("no zero curve of the reduced map found on the lattice".into()));
    }
    let pairs = per_side[0].iter().zip(&per_side[1]).map(|(a, b)| (*a, *b)).collect();
    Ok(LocalBranches { order, curves, pairs })
}

fn curve_point<F: AnalyticFamily + ?Sized>(fam: &F, s: f64, lambda: f64, tol: f64) -> Result<CurvePoint> {
    let e = fam.eigen(lambda)?;
    let w = solve_complement_with(fam, &e, s, lambda, tol)?.w;
    let x = e.v.iter().zip(&w).map(|(v, w)| s * v + w).collect();
    Ok(CurvePoint { s, lambda, x })
}

fn classify<F: AnalyticFamily + ?Sized>(fam: &F, points: &[CurvePoint]) -> Result<CurveKind> {
    let spread = points.iter().map(|p| p.lambda).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.lambda).fold(f64::INFINITY, f64::min);
    if points.len() > 1 && spread <= 1e-10 {
        return Ok(CurveKind::Vertical);
    }
    let mut degenerate = !points.is_empty();
    for p in points {
        if fam.critical_eigenvalue(&p.x, p.lambda)?.abs() > 1e-8 {
            degenerate = false;
            break;
        }
    }
    Ok(if degenerate { CurveKind::DegenerateEigenvalue } else { CurveKind::Regular })
}

/// Residual of 𝓕 after one Newton polish at fixed λ (skipped when the
/// Jacobian is singular there).
pub fn polished_residual<F: AnalyticFamily + ?Sized>(fam: &F, x: &[f64], lambda: f64) -> Result<f64> {
    let f = fam.eval(x, lambda)?;
    let y = match fam.jacobian(x, lambda)?.factor() {
        Ok(lu) => {
            let d = lu.solve(&f);
            x.iter().zip(&d).map(|(a, b)| a - b).collect()
        }
        Err(_) => x.to_vec(),
    };
    Ok(sup(&fam.eval(&y, lambda)?).min(sup(&f)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelCase {
    /// F₁ = λx₁ − x₁³ + x₁x₂², F₂ = −x₂ + x₁²: zero set λ = s² − s⁴.
    Pitchfork,
    /// F₁ = x₁(λ − x₁²)(λ − 2x₁²)(λ − 3x₁²): m = 3, three pairs.
    Triple,
    /// F₁ = λ³x₁ − x₁³: m = 3, one pair λ = s^{2/3}.
    Cubic,
    /// F₁ = −x₁³ + x₁x₂: λ-independent, every (s, λ) solves.
    Vertical,
}

impl ModelCase {
    pub const ALL: [ModelCase; 4] = [ModelCase::Pitchfork, ModelCase::Triple, ModelCase::Cubic, ModelCase::Vertical];

    pub fn name(self) -> &'static str {
        match self {
            ModelCase::Pitchfork => "pitchfork",
            ModelCase::Triple => "triple",
            ModelCase::Cubic => "cubic",
            ModelCase::Vertical => "vertical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Two-unknown model families; every one has F₂ = −x₂ + x₁².
#[derive(Debug, Clone, Copy)]
pub struct ModelFamily(pub ModelCase);

impl ModelFamily {
    fn f1(&self, a: f64, b: f64, l: f64) -> (f64, f64, f64) {
        // value, ∂/∂x₁, ∂/∂x₂
        match self.0 {
            ModelCase::Pitchfork => (l * a - a.powi(3) + a * b * b, l - 3.0 * a * a + b * b, 2.0 * a * b),
            ModelCase::Triple => {
                let (p, q, r) = (l - a * a, l - 2.0 * a * a, l - 3.0 * a * a);
                let d = p * q * r + a * (-2.0 * a * q * r - 4.0 * a * p * r - 6.0 * a * p * q);
                (a * p * q * r, d, 0.0)
            }
            ModelCase::Cubic => (l.powi(3) * a - a.powi(3), l.powi(3) - 3.0 * a * a, 0.0),
            ModelCase::Vertical => (-a.powi(3) + a * b, -3.0 * a * a + b, a),
        }
    }
}

impl AnalyticFamily for ModelFamily {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], lambda: f64) -> Result<Vec<f64>> {
        Ok(vec![self.f1(x[0], x[1], lambda).0, -x[1] + x[0] * x[0]])
    }

    fn jacobian(&self, x: &[f64], lambda: f64) -> Result<BandMatrix> {
        let (_, d1, d2) = self.f1(x[0], x[1], lambda);
        let mut j = BandMatrix::zeros(2, 1, 1);
        j.add(0, 0, d1);
        j.add(0, 1, d2);
        j.add(1, 0, 2.0 * x[0]);
        j.add(1, 1, -1.0);
        Ok(j)
    }
}

/// Critical (nearest-zero) eigenpair of J w = μ M w at a point of a branch
/// system, with its left eigenvector.
pub fn system_critical_eigen<S: BranchSystem + ?Sized>(sys: &S, u: &[f64], r: f64, shift: f64) -> Result<EigenData> {
    let (j, _) = sys.jacobian(u, r)?;
    let m = sys.mass(u, r)?;
    let n = j.dim();
    if n <= 256 && m.iter().all(|&x| x == 1.0) {
        return dense_critical_eigen(&j);
    }
    let block = 8.min(n);
    let opts = EigenOptions { shift, block, min_wanted: block.min(4), wanted_below: f64::NEG_INFINITY, max_iter: 3000, ..Default::default() };
    let pairs = nearest_eigenpairs(&j, &m, opts)?;
    let p = pairs.into_iter().min_by(|a, b| a.value.abs().total_cmp(&b.value.abs())).ok_or_else(|| WaveError::Numerical("no eigenpair".into()))?;
    let z = left_null_vector(&j, &m, p.value, 0x1ef7)?;
    EigenData::new(p.value, p.vector, z, m)
}

/// A branch system seen from a crossing: λ is arclength past t_* along the
/// chord between two bracketing points, and x is the deviation from the
/// primary point at that λ.
pub struct EmbeddedFamily<'a, S: BranchSystem + ?Sized> {
    pub sys: &'a S,
    left: (Vec<f64>, f64),
    right: (Vec<f64>, f64),
    /// Chord arclength of t_* from the left point.
    pub sigma_star: f64,
    pub t_star: f64,
    ctrl: StepControl,
    shift: f64,
    primary: RefCell<HashMap<u64, (Vec<f64>, f64)>>,
    eigen: RefCell<HashMap<u64, EigenData>>,
    reference: RefCell<Option<Vec<f64>>>,
}

impl<'a, S: BranchSystem + ?Sized> EmbeddedFamily<'a, S> {
    /// Locates t_* inside the bracket by secant iteration on the critical
    /// eigenvalue of re-solved points.
    pub fn at_crossing(sys: &'a S, a: &RawPoint, b: &RawPoint, ctrl: StepControl, shift: f64) -> Result<Self> {
        let left = (a.u.clone(), a.r);
        let right = (b.u.clone(), b.r);
        let du: Vec<f64> = b.u.iter().zip(&a.u).map(|(x, y)| x - y).collect();
        let len = (sys.weights().iter().zip(&du).map(|(w, d)| w * d * d).sum::<f64>() + (b.r - a.r).powi(2)).sqrt();
        let mu = |s: f64| -> Result<f64> {
            let (u, r) = solve_on_chord(sys, (&left.0, left.1), (&right.0, right.1), s, &ctrl)?;
            Ok(system_critical_eigen(sys, &u, r, shift)?.mu)
        };
        let (ma, mb) = (mu(0.0)?, mu(len)?);
        if ma.signum() == mb.signum() {
            return Err(WaveError::Precondition(format!("critical eigenvalue has no sign change in the bracket ({ma:.3e}, {mb:.3e})")));
        }
        let sigma_star = secant_root(mu, 0.0, len, 1e-10 * len.max(1e-12), 60)?;
        Ok(Self {
            sys,
            left,
            right,
            sigma_star,
            t_star: a.t + sigma_star,
            ctrl,
            shift,
            primary: RefCell::new(HashMap::new()),
            eigen: RefCell::new(HashMap::new()),
            reference: RefCell::new(None),
        })
    }

    /// Primary branch point (u, R) at λ.
    pub fn primary(&self, lambda: f64) -> Result<(Vec<f64>, f64)> {
        if let Some(p) = self.primary.borrow().get(&lambda.to_bits()) {
            return Ok(p.clone());
        }
        let p = solve_on_chord(self.sys, (&self.left.0, self.left.1), (&self.right.0, self.right.1), self.sigma_star + lambda, &self.ctrl)?;
        self.primary.borrow_mut().insert(lambda.to_bits(), p.clone());
        Ok(p)
    }
}

impl<S: BranchSystem + ?Sized> AnalyticFamily for EmbeddedFamily<'_, S> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn eval(&self, x: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let (u, r) = self.primary(lambda)?;
        let y: Vec<f64> = u.iter().zip(x).map(|(a, b)| a + b).collect();
        self.sys.residual(&y, r)
    }

    fn jacobian(&self, x: &[f64], lambda: f64) -> Result<BandMatrix> {
        let (u, r) = self.primary(lambda)?;
        let y: Vec<f64> = u.iter().zip(x).map(|(a, b)| a + b).collect();
        Ok(self.sys.jacobian(&y, r)?.0)
    }

    fn eigen(&self, lambda: f64) -> Result<EigenData> {
        if let Some(e) = self.eigen.borrow().get(&lambda.to_bits()) {
            return Ok(e.clone());
        }
        let (u, r) = self.primary(lambda)?;
        let mut e = system_critical_eigen(self.sys, &u, r, self.shift)?;
        // Keep v̂(λ) on one side so that s has a consistent sign across λ.
        let mut reference = self.reference.borrow_mut();
        match reference.as_ref() {
            Some(v0) if dot(v0, &e.v) < 0.0 => {
                e.v.iter_mut().for_each(|x| *x = -*x);
                e.z.iter_mut().for_each(|x| *x = -*x);
            }
            Some(_) => {}
            None => *reference = Some(e.v.clone()),
        }
        self.eigen.borrow_mut().insert(lambda.to_bits(), e.clone());
        Ok(e)
    }

    fn critical_eigenvalue(&self, x: &[f64], lambda: f64) -> Result<f64> {
        let (u, r) = self.primary(lambda)?;
        let y: Vec<f64> = u.iter().zip(x).map(|(a, b)| a + b).collect();
        Ok(system_critical_eigen(self.sys, &y, r, self.shift)?.mu)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SwitchOptions {
    pub s_max: f64,
    pub lambda_max: f64,
    pub lattice: LatticeOptions,
    /// Shift for the critical eigenvalue search (must not be an eigenvalue).
    pub shift: f64,
    /// Newton tolerance for the re-converged seed.
    pub tol: f64,
    pub ctrl: StepControl,
}

impl Default for SwitchOptions {
    fn default() -> Self {
        Self {
            s_max: 0.2,
            lambda_max: 0.05,
            lattice: LatticeOptions { ns: 3, nl: 21, ..Default::default() },
            shift: -0.05,
            tol: 1e-10,
            ctrl: StepControl::new(0.01),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SwitchSeed {
    #[serde(skip)]
    pub u: Vec<f64>,
    pub r: f64,
    pub s0: f64,
    pub lambda0: f64,
    pub t_star: f64,
    /// Sup-distance from the primary point at the same λ and from both
    /// bracket points.
    pub distance: f64,
}

/// Seed on a secondary branch near the crossing bracketed by `a`, `b`:
/// primary(λ₀) + s₀ v̂ + w(s₀, λ₀) at a lattice zero of B/s, re-converged by
/// Newton at fixed R.
pub fn switch_branch_generic<S: BranchSystem + ?Sized>(sys: &S, a: &RawPoint, b: &RawPoint, opts: &SwitchOptions) -> Result<SwitchSeed> {
    let fam = EmbeddedFamily::at_crossing(sys, a, b, opts.ctrl, opts.shift)?;
    let lat = &opts.lattice;
    let mut best: Option<(f64, f64)> = None;
    'outer: for k in (1..=lat.ns).rev() {
        for side in [1.0, -1.0] {
            let s = side * opts.s_max * k as f64 / lat.ns as f64;
            if let Ok(Column::Roots(r)) = column_roots(&fam, s, opts.lambda_max, lat) {
                if let Some(l) = r.into_iter().min_by(|x, y| x.abs().total_cmp(&y.abs())) {
                    best = Some((s, l));
                    break 'outer;
                }
            }
        }
    }
    let (s0, lambda0) = best.ok_or(WaveError::NoSecondaryBranch)?;
    let p = curve_point(&fam, s0, lambda0, lat.tol)?;
    let (up, r) = fam.primary(lambda0)?;
    let seed: Vec<f64> = up.iter().zip(&p.x).map(|(a, b)| a + b).collect();
    let u = newton_fixed_r(sys, &seed, r, opts.tol, 30)?;
    let dist = |v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let distance = dist(&up).min(dist(&a.u)).min(dist(&b.u));
    if !(distance > 10.0 * opts.tol) {
        return Err(WaveError::NoSecondaryBranch);
    }
    Ok(SwitchSeed { u, r, s0, lambda0, t_star: fam.t_star, distance })
}

/// [`switch_branch_generic`] on the strip: returns the seed as a field that
/// has re-converged under [`newton_solve`] at its own R.
pub fn switch_branch(a: &BranchPoint, b: &BranchPoint, family: &StreamFamily, opts: &SwitchOptions) -> Result<(StripField, SwitchSeed)> {
    let sys = StripSystem::new(family.clone(), a.field.grid);
    let raw = |p: &BranchPoint| RawPoint { u: p.field.unknowns(), r: p.field.r, t: p.t, newton_iters: 0 };
    let seed = switch_branch_generic(&sys, &raw(a), &raw(b), opts)?;
    let field = newton_solve(&sys.field(&seed.u, seed.r)?, &family.spec, opts.tol, 20)?;
    Ok((field, seed))
}
