//! Back to physical variables: surface, velocities and the flow force of a
//! strip solution, plus the search for distinct waves sharing one R.
//!
//! The hodograph map is X = q, Y = h(q, p), so Ψ_X = −h_q/h_p and
//! Ψ_Y = 1/h_p. All integrals over depth are taken in p with dY = h_p dp,
//! which avoids interpolating onto an (X, Y) grid.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};
use crate::stream::{Regime, StreamFamily};
use crate::strip::{newton_solve, StripField};
use crate::vorticity::VorticitySpec;

/// Relative-R tolerance for two members of a pair; also the Newton tolerance
/// used when re-solving members.
pub const PAIR_R_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveProfile {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub psi_y_surface: Vec<f64>,
    pub psi_y_bottom: Vec<f64>,
    pub depth_far: f64,
    pub r: f64,
    /// Flow force per q column.
    pub flow_force_columns: Vec<f64>,
    pub flow_force: f64,
    pub flow_force_variation: f64,
    /// max over columns of |∫₀^ξ Ψ_Y dY − 1|.
    pub mass_flux_defect: f64,
    /// max over columns of |Ψ_Y²(1 + ξ′²) − 2(R − ξ)| on the surface.
    pub surface_identity_defect: f64,
}

/// Difference quotients in q at every node of row `j`: central inside,
/// zero at the symmetry line, second-order backward at the far column.
fn hq_along_row(f: &StripField, j: usize) -> Vec<f64> {
    let g = &f.grid;
    let dq = g.dq();
    let last = g.nq - 1;
    (0..g.nq)
        .map(|i| match i {
            0 => 0.0,
            i if i == last => (3.0 * f.at(i, j) - 4.0 * f.at(i - 1, j) + f.at(i - 2, j)) / (2.0 * dq),
            i => (f.at(i + 1, j) - f.at(i - 1, j)) / (2.0 * dq),
        })
        .collect()
}

fn column_flow_force(f: &StripField, spec: &VorticitySpec, i: usize) -> f64 {
    // Midpoint rule on the half cells (i, j + ½), with the same h_p and
    // averaged h_q the residual uses there. The −h h_p term telescopes to
    // −ξ²/2 exactly.
    let g = &f.grid;
    let dp = g.dp();
    let om1 = spec.big_omega_unchecked(1.0);
    let hq_lo = hq_down_column(f, i);
    let mut s = 0.0;
    for j in 0..g.np - 1 {
        let dh = f.at(i, j + 1) - f.at(i, j);
        let hp = dh / dp;
        let hq = 0.5 * (hq_lo[j] + hq_lo[j + 1]);
        let pm = g.p(j) + 0.5 * dp;
        s += (1.0 - hq * hq) / (2.0 * hp) * dp + (om1 - spec.big_omega_unchecked(pm) + f.r) * dh;
    }
    let xi = f.at(i, g.np - 1);
    s - 0.5 * (xi * xi - f.at(i, 0) * f.at(i, 0))
}

/// h_q down column `i`, same one-sided rules as [`hq_along_row`].
fn hq_down_column(f: &StripField, i: usize) -> Vec<f64> {
    let g = &f.grid;
    let dq = g.dq();
    let last = g.nq - 1;
    (0..g.np)
        .map(|j| match i {
            0 => 0.0,
            i if i == last => (3.0 * f.at(i, j) - 4.0 * f.at(i - 1, j) + f.at(i - 2, j)) / (2.0 * dq),
            i => (f.at(i + 1, j) - f.at(i - 1, j)) / (2.0 * dq),
        })
        .collect()
}

pub fn reconstruct(f: &StripField, spec: &VorticitySpec) -> Result<WaveProfile> {
    f.check_positive()?;
    let g = &f.grid;
    let dp = g.dp();
    let n = g.np - 1;
    let x: Vec<f64> = (0..g.nq).map(|i| g.q(i)).collect();
    let xi = f.surface();
    let psi_y_surface: Vec<f64> = (0..g.nq)
        .map(|i| 2.0 * dp / (3.0 * f.at(i, n) - 4.0 * f.at(i, n - 1) + f.at(i, n - 2)))
        .collect();
    let psi_y_bottom: Vec<f64> =
        (0..g.nq).map(|i| 2.0 * dp / (-3.0 * f.at(i, 0) + 4.0 * f.at(i, 1) - f.at(i, 2))).collect();

    let slope = hq_along_row(f, n);
    let surface_identity_defect = (0..g.nq)
        .map(|i| (psi_y_surface[i].powi(2) * (1.0 + slope[i].powi(2)) - 2.0 * (f.r - xi[i])).abs())
        .fold(0.0, f64::max);

    // Ψ_Y from central differences at interior nodes, trapezoid rule in Y.
    let mut mass_flux_defect: f64 = 0.0;
    for i in 0..g.nq {
        let psi_y = |j: usize| -> f64 {
            if j == 0 {
                psi_y_bottom[i]
            } else if j == n {
                psi_y_surface[i]
            } else {
                2.0 * dp / (f.at(i, j + 1) - f.at(i, j - 1))
            }
        };
        let flux: f64 = (0..n).map(|j| 0.5 * (psi_y(j) + psi_y(j + 1)) * (f.at(i, j + 1) - f.at(i, j))).sum();
        mass_flux_defect = mass_flux_defect.max((flux - 1.0).abs());
    }

    let flow_force_columns: Vec<f64> = (0..g.nq).map(|i| column_flow_force(f, spec, i)).collect();
    let flow_force = flow_force_columns.iter().sum::<f64>() / g.nq as f64;
    let flow_force_variation = flow_force_columns.iter().map(|s| (s - flow_force).abs()).fold(0.0, f64::max);

    Ok(WaveProfile {
        x,
        xi,
        psi_y_surface,
        psi_y_bottom,
        depth_far: f.far_depth(),
        r: f.r,
        flow_force_columns,
        flow_force,
        flow_force_variation,
        mass_flux_defect,
        surface_identity_defect,
    })
}

/// |S − S₋(R)|: how well the computed wave selects the flow force of its
/// own supercritical far field.
pub fn verify_flow_force_selection(profile: &WaveProfile, spec: &VorticitySpec) -> Result<f64> {
    let s_minus = StreamFamily::new(spec.clone())?.flow_force_of_r(profile.r, Regime::Supercritical)?;
    Ok((profile.flow_force - s_minus).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeCheck {
    /// ξ > d on every column short of the far end.
    pub elevated: bool,
    /// ξ strictly decreasing in q.
    pub decreasing: bool,
}

impl WaveProfile {
    pub fn shape(&self) -> ShapeCheck {
        let n = self.xi.len();
        ShapeCheck {
            elevated: self.xi[..n - 1].iter().all(|&v| v > self.depth_far),
            decreasing: self.xi.windows(2).all(|w| w[1] < w[0]),
        }
    }

    /// Even extension to X ∈ [−L, L]: (X, ξ, Ψ_Y on the surface).
    pub fn even_extension(&self) -> Vec<(f64, f64, f64)> {
        let n = self.x.len();
        let left = (1..n).rev().map(|i| (-self.x[i], self.xi[i], self.psi_y_surface[i]));
        let right = (0..n).map(|i| (self.x[i], self.xi[i], self.psi_y_surface[i]));
        left.chain(right).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "X,xi,psi_y_surface")?;
        for (x, xi, u) in self.even_extension() {
            writeln!(out, "{x:.16e},{xi:.16e},{u:.16e}")?;
        }
        out.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pairs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    TurningPoint,
    SecondaryBranch,
}

/// One member of a pair: a branch label (0 primary, 1 secondary) and the
/// parameter along that branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMember {
    pub branch: u8,
    pub t: f64,
    pub checkpoint: Option<String>,
}

impl PairMember {
    pub fn primary(t: f64) -> Self {
        Self { branch: 0, t, checkpoint: None }
    }

    pub fn secondary(t: f64) -> Self {
        Self { branch: 1, t, checkpoint: None }
    }

    fn key(&self) -> (u8, f64) {
        (self.branch, self.t)
    }
}

/// Members are stored in (branch, t) order, so a pair built either way
/// round compares equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavePair {
    pub r: f64,
    pub first: PairMember,
    pub second: PairMember,
    /// sup |h₁ − h₂| once both members are re-solved.
    pub distance: Option<f64>,
    pub provenance: Provenance,
}

impl WavePair {
    pub fn new(r: f64, a: PairMember, b: PairMember, provenance: Provenance) -> Self {
        let (first, second) = if a.key().partial_cmp(&b.key()) == Some(std::cmp::Ordering::Greater) {
            (b, a)
        } else {
            (a, b)
        };
        Self { r, first, second, distance: None, provenance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub t: f64,
    pub r: f64,
    /// Curvature a in R ≈ R_* ∓ a (t − t_*)².
    pub curvature: f64,
    pub is_max: bool,
    /// One-sided R interval on which both segments have a root.
    pub interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSearch {
    pub pairs: Vec<WavePair>,
    pub folds: Vec<Fold>,
    /// Set when a fold was seen but no R value fits at this resolution.
    pub note: Option<String>,
}

/// Fritsch–Carlson slopes: the cubic Hermite interpolant is monotone on
/// every cell, so an R level has at most one root per cell.
fn pchip_slopes(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = del[0];
        d[1] = del[0];
        return d;
    }
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > 0.0 {
            let (w1, w2) = (2.0 * h[k] + h[k - 1], h[k] + 2.0 * h[k - 1]);
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

fn hermite(t: &[f64], y: &[f64], d: &[f64], k: usize, x: f64) -> f64 {
    let h = t[k + 1] - t[k];
    let s = (x - t[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    (2.0 * s3 - 3.0 * s2 + 1.0) * y[k]
        + (s3 - 2.0 * s2 + s) * h * d[k]
        + (-2.0 * s3 + 3.0 * s2) * y[k + 1]
        + (s3 - s2) * h * d[k + 1]
}

/// Monotone interpolant of sampled (t, R) data.
pub struct MonotoneCurve {
    t: Vec<f64>,
    r: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCurve {
    pub fn new(rows: &[(f64, f64)]) -> Result<Self> {
        if rows.len() < 3 {
            return Err(WaveError::Precondition("need at least 3 branch samples".into()));
        }
        if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(WaveError::Precondition("branch parameter must increase strictly".into()));
        }
        let t: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let r: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let d = pchip_slopes(&t, &r);
        Ok(Self { t, r, d })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.t.partition_point(|&v| v <= x).clamp(1, self.t.len() - 1) - 1;
        hermite(&self.t, &self.r, &self.d, k, x)
    }

    /// Root of R(t) = level in cell k (R monotone there), to machine
    /// precision by bisection.
    fn cell_root(&self, k: usize, level: f64) -> Option<f64> {
        let g = |x: f64| hermite(&self.t, &self.r, &self.d, k, x) - level;
        let (mut a, mut b) = (self.t[k], self.t[k + 1]);
        let (ga, gb) = (g(a), g(b));
        if ga == 0.0 {
            return Some(a);
        }
        if ga * gb > 0.0 {
            return None;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if g(m) * ga > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    }

    /// Roots of R(t) = level over cells `lo..hi`.
    pub fn roots_in(&self, level: f64, lo: usize, hi: usize) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for k in lo..hi.min(self.t.len() - 1) {
            if let Some(x) = self.cell_root(k, level) {
                // A level that hits a sample shows up in both adjacent cells.
                let tie = 1e-9 * (self.t[k + 1] - self.t[k]);
                if out.last().is_none_or(|&p| x - p > tie) {
                    out.push(x);
                }
            }
        }
        out
    }

    pub fn roots(&self, level: f64) -> Vec<f64> {
        self.roots_in(level, 0, self.t.len() - 1)
    }
}

/// Turning-point pairs on a sampled branch.
///
/// Each interior extremum of the sampled R splits the data into a pre-fold
/// and a post-fold monotone run. The fold value and its curvature come from
/// the parabola through the extremal sample and its neighbours. Levels are
/// placed on the one-sided interval R_* ∓ [δ, ε] where ε is the depth both
/// runs reach and δ = a Δt² keeps the two roots at least one sample spacing
/// apart. Without `levels`, `n_levels` evenly spaced values are used.
pub fn turning_pairs(rows: &[(f64, f64)], levels: Option<&[f64]>, n_levels: usize) -> Result<PairSearch> {
    let curve = MonotoneCurve::new(rows)?;
    let r = &curve.r;
    let t = &curve.t;
    let n = r.len();
    let mut pairs = Vec::new();
    let mut folds = Vec::new();
    let mut note = None;
    for k in 1..n - 1 {
        let (a, b) = (r[k] - r[k - 1], r[k + 1] - r[k]);
        let is_max = a > 0.0 && b <= 0.0;
        let is_min = a < 0.0 && b >= 0.0;
        if !(is_max || is_min) {
            continue;
        }
        let sign = if is_max { 1.0 } else { -1.0 };
        // Monotone runs either side of k.
        let mut lo = k;
        while lo > 0 && sign * (r[lo] - r[lo - 1]) > 0.0 {
            lo -= 1;
        }
        let mut hi = k;
        while hi + 1 < n && sign * (r[hi + 1] - r[hi]) <= 0.0 {
            hi += 1;
        }
        let (t_star, r_star, curvature) = parabola_vertex(&t[k - 1..=k + 1], &r[k - 1..=k + 1]);
        let r_star = if sign * (r_star - r[k]) >= 0.0 { r_star } else { r[k] };
        let depth = (sign * (r_star - r[lo])).min(sign * (r_star - r[hi]));
        let spacing = (t[k + 1] - t[k - 1]) / 2.0;
        let delta = curvature * spacing * spacing;
        let interval = (depth > delta).then(|| {
            let (near, far) = (r_star - sign * delta, r_star - sign * depth);
            (near.min(far), near.max(far))
        });
        folds.push(Fold { t: t_star, r: r_star, curvature, is_max, interval });
        let targets: Vec<f64> = match (levels, interval) {
            (Some(ls), _) => ls.to_vec(),
            (None, Some((x0, x1))) => {
                let m = n_levels.max(1);
                (0..m).map(|q| x0 + (x1 - x0) * (q as f64 + 0.5) / m as f64).collect()
            }
            (None, None) => {
                note = Some(format!("fold near t = {t_star:.6}: no pair interval at this sampling"));
                continue;
            }
        };
        for level in targets {
            let pre = curve.roots_in(level, lo, k);
            let post = curve.roots_in(level, k, hi);
            if let (Some(&t1), Some(&t2)) = (pre.last(), post.first()) {
                if t2 > t1 {
                    pairs.push(WavePair::new(
                        level,
                        PairMember::primary(t1),
                        PairMember::primary(t2),
                        Provenance::TurningPoint,
                    ));
                }
            }
        }
    }
    if folds.is_empty() {
        note = None;
    }
    Ok(PairSearch { pairs, folds, note })
}

/// Vertex (t, R) and curvature |R''|/2 of the parabola through 3 points.
fn parabola_vertex(t: &[f64], r: &[f64]) -> (f64, f64, f64) {
    let d1 = (r[1] - r[0]) / (t[1] - t[0]);
    let d2 = (r[2] - r[1]) / (t[2] - t[1]);
    let c = (d2 - d1) / (t[2] - t[0]);
    if c == 0.0 {
        return (t[1], r[1], 0.0);
    }
    // R = r0 + d1 (x − t0) + c (x − t0)(x − t1)
    let b = d1 - c * (t[0] + t[1]);
    let tv = (-b / (2.0 * c)).clamp(t[0], t[2]);
    let rv = r[0] + d1 * (tv - t[0]) + c * (tv - t[0]) * (tv - t[1]);
    (tv, rv, c.abs())
}

/// Pairs between a primary branch and a secondary branch through the same
/// crossing: for each level, the primary root nearest `t_star` is matched
/// with every root on the secondary branch.
pub fn secondary_pairs(
    primary: &[(f64, f64)],
    secondary: &[(f64, f64)],
    t_star: f64,
    levels: &[f64],
) -> Result<PairSearch> {
    let p = MonotoneCurve::new(primary)?;
    let s = MonotoneCurve::new(secondary)?;
    let mut pairs = Vec::new();
    for &level in levels {
        let tp = p.roots(level).into_iter().min_by(|a, b| (a - t_star).abs().total_cmp(&(b - t_star).abs()));
        let Some(tp) = tp else { continue };
        for ts in s.roots(level) {
            pairs.push(WavePair::new(
                level,
                PairMember::primary(tp),
                PairMember::secondary(ts),
                Provenance::SecondaryBranch,
            ));
        }
    }
    let note = pairs.is_empty().then(|| "no common R level at this resolution".to_string());
    Ok(PairSearch { pairs, folds: Vec::new(), note })
}

/// Field at parameter `t` by linear interpolation between the bracketing
/// stored points, moved to Bernoulli constant `r` and re-solved.
pub fn resolve_member(points: &[(f64, StripField)], t: f64, r: f64, family: &StreamFamily) -> Result<StripField> {
    let k = points.partition_point(|p| p.0 <= t).clamp(1, points.len() - 1) - 1;
    let ((ta, fa), (tb, fb)) = (&points[k], &points[k + 1]);
    let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
    let mut f = fa.clone();
    for (h, hb) in f.h.iter_mut().zip(&fb.h) {
        *h += w * (hb - *h);
    }
    f.set_r(family, r)?;
    newton_solve(&f, &family.spec, PAIR_R_TOL, 30)
}

/// Re-solves both members of each pair from stored branch points (t order)
/// and keeps the pairs whose members have equal R and differ by more than
/// 10 × tolerance in sup norm.
pub fn verify_pairs(
    candidates: Vec<WavePair>,
    points: &[(f64, StripField)],
    family: &StreamFamily,
) -> Result<Vec<(WavePair, StripField, StripField)>> {
    if points.len() < 2 {
        return Err(WaveError::Precondition("need at least 2 stored branch points".into()));
    }
    let mut out = Vec::new();
    for mut pair in candidates {
        let a = resolve_member(points, pair.first.t, pair.r, family)?;
        let b = resolve_member(points, pair.second.t, pair.r, family)?;
        if (a.r - b.r).abs() > PAIR_R_TOL * pair.r.abs().max(1.0) {
            continue;
        }
        let dist = a.h.iter().zip(&b.h).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if dist > 10.0 * PAIR_R_TOL {
            pair.distance = Some(dist);
            out.push((pair, a, b));
        }
    }
    Ok(out)
}
