use proptest::prelude::*;
use wavebranch_core::band::BandMatrix;
use wavebranch_core::branch::{continue_generic, BranchSystem, RawPoint, StepControl};
use wavebranch_core::error::{Result, WaveError};
use wavebranch_core::lyapunov::*;

const TOL: f64 = 1e-13;

/// 𝓕(x, λ) = T D(λ) T⁻¹ x + (x₀³, 0, 0, 0) with D = diag(λ, −1, −2, 3):
/// non-normal, so left and right eigenvectors differ.
struct Linear {
    t: [[f64; 4]; 4],
    ti: [[f64; 4]; 4],
}

impl Linear {
    fn new() -> Self {
        let t = [[1.0, 0.3, 0.0, 0.2], [0.5, 1.0, 0.1, 0.0], [0.0, 0.4, 1.0, 0.3], [0.2, 0.0, 0.6, 1.0]];
        let m = nalgebra::Matrix4::from_fn(|i, j| t[i][j]).try_inverse().unwrap();
        let ti = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        Self { t, ti }
    }
    fn a(&self, l: f64) -> [[f64; 4]; 4] {
        let d = [l, -1.0, -2.0, 3.0];
        std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| self.t[i][k] * d[k] * self.ti[k][j]).sum()))
    }
}

impl AnalyticFamily for Linear {
    fn dim(&self) -> usize {
        4
    }
    fn eval(&self, x: &[f64], l: f64) -> Result<Vec<f64>> {
        let a = self.a(l);
        Ok((0..4).map(|i| (0..4).map(|j| a[i][j] * x[j]).sum::<f64>() + if i == 0 { x[0].powi(3) } else { 0.0 }).collect())
    }
    fn jacobian(&self, x: &[f64], l: f64) -> Result<BandMatrix> {
        let a = self.a(l);
        let mut j = BandMatrix::zeros(4, 3, 3);
        for r in 0..4 {
            for c in 0..4 {
                j.add(r, c, a[r][c]);
            }
        }
        j.add(0, 0, 3.0 * x[0] * x[0]);
        Ok(j)
    }
}

#[test]
fn projector_examples() {
    let fam = Linear::new();
    let e = fam.eigen(0.01).unwrap();
    assert!((e.mu - 0.01).abs() < 1e-12);
    let (s, w) = e.project(&e.v);
    assert!((s - 1.0).abs() < 1e-12 && w.iter().all(|x| x.abs() < 1e-12));
    // Orthogonal to ẑ: a vector killed by zᵀ.
    let mut x = vec![e.z[1], -e.z[0], 0.0, 0.0];
    if x.iter().all(|v| *v == 0.0) {
        x = vec![0.0, 0.0, e.z[3], -e.z[2]];
    }
    let (s, w) = project(&fam, 0.01, &x).unwrap();
    assert!(s.abs() < 1e-12);
    assert!(w.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    let bad = EigenData::new(0.0, vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]);
    assert!(matches!(bad, Err(WaveError::IllPosedProjector(_))));
}

proptest! {
    #[test]
    fn projector_is_idempotent(x in prop::collection::vec(-1.0f64..1.0, 4), l in -0.2f64..0.2) {
        let fam = Linear::new();
        let e = fam.eigen(l).unwrap();
        let (s, w) = e.project(&x);
        let px: Vec<f64> = e.v.iter().map(|v| s * v).collect();
        let (s2, w2) = e.project(&px);
        prop_assert!((s2 - s).abs() < 1e-12);
        prop_assert!(w2.iter().all(|v| v.abs() < 1e-12));
        // The complement part has no component along v̂.
        prop_assert!(e.project(&w).0.abs() < 1e-12);
    }

    #[test]
    fn reduced_map_vanishes_on_trivial_line(l in -0.3f64..0.3) {
        prop_assert_eq!(reduced_map(&ModelFamily(ModelCase::Pitchfork), 0.0, l, TOL).unwrap(), 0.0);
        prop_assert_eq!(reduced_map(&Linear::new(), 0.0, l, TOL).unwrap(), 0.0);
    }
}

#[test]
fn model_complement_is_s_squared() {
    let fam = ModelFamily(ModelCase::Pitchfork);
    assert_eq!(solve_complement(&fam, 0.0, 0.1, TOL).unwrap(), vec![0.0, 0.0]);
    for s in [-0.3, -0.05, 0.01, 0.2] {
        for l in [-0.1, 0.0, 0.07] {
            let w = solve_complement(&fam, s, l, TOL).unwrap();
            assert!(w[0].abs() < 1e-15 && (w[1] - s * s).abs() < 1e-14, "{w:?}");
        }
    }
    let ss: Vec<f64> = (0..9).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect();
    let p = complement_exponent(&fam, 0.0, &ss, TOL).unwrap();
    assert!((1.9..=2.1).contains(&p), "{p}");
    // The non-normal family has a purely cubic nonlinearity, so w ~ s³.
    let p = complement_exponent(&Linear::new(), 0.0, &ss, 1e-15).unwrap();
    assert!((2.9..=3.1).contains(&p), "{p}");
}

#[test]
fn model_reduced_map_closed_form() {
    let fam = ModelFamily(ModelCase::Pitchfork);
    for s in [-0.3, -0.1, 0.02, 0.25] {
        for l in [-0.2, 0.0, 0.05, 0.2] {
            let b = reduced_map(&fam, s, l, TOL).unwrap();
            let exact = s * (l - s * s + s.powi(4));
            assert!((b - exact).abs() < 1e-12, "{s} {l}: {b} vs {exact}");
        }
    }
}

#[test]
fn pitchfork_has_three_roots_for_positive_lambda() {
    let fam = ModelFamily(ModelCase::Pitchfork);
    let l = 0.1;
    let ss: Vec<f64> = (0..=1000).map(|k| -0.5 + k as f64 * 1e-3 + 1e-7).collect();
    let b: Vec<f64> = ss.iter().map(|&s| reduced_map(&fam, s, l, TOL).unwrap()).collect();
    let roots = b.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
    assert_eq!(roots, 3);
}

#[test]
fn pitchfork_zero_set() {
    let fam = ModelFamily(ModelCase::Pitchfork);
    let br = local_branches(&fam, 0.3, 0.2, &LatticeOptions::default()).unwrap();
    assert_eq!(br.order.unwrap().m, 1);
    assert!(br.order.unwrap().odd);
    assert_eq!(br.curves.len(), 2);
    assert_eq!(br.pairs.len(), 1);
    let mut worst = 0.0f64;
    for c in &br.curves {
        assert_eq!(c.kind, CurveKind::Regular);
        assert_eq!(c.points.len(), 12);
        for p in &c.points {
            assert_eq!(p.s.signum() as i8, c.side);
            worst = worst.max((p.lambda - (p.s * p.s - p.s.powi(4))).abs());
            assert!(polished_residual(&fam, &p.x, p.lambda).unwrap() <= 10.0 * TOL);
        }
    }
    assert!(worst < 1e-8, "{worst}");
}

/// Distinct λ-roots of F₁(x₁, x₁², λ)/x₁ for fixed x₁, by a fine direct scan of
/// the full system.
fn brute_force_count(case: ModelCase, x1: f64, lmax: f64) -> usize {
    let fam = ModelFamily(case);
    let n = 20000;
    let vals: Vec<f64> = (0..=n)
        .map(|k| {
            let l = -lmax + 2.0 * lmax * (k as f64 + 0.37) / n as f64;
            fam.eval(&[x1, x1 * x1], l).unwrap()[0] / x1
        })
        .collect();
    vals.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
}

#[test]
fn gallery_counts_match_brute_force() {
    for (case, m, pairs) in [(ModelCase::Pitchfork, 1, 1), (ModelCase::Triple, 3, 3), (ModelCase::Cubic, 3, 1)] {
        let fam = ModelFamily(case);
        let br = local_branches(&fam, 0.3, 0.5, &LatticeOptions::default()).unwrap();
        let order = br.order.unwrap();
        assert_eq!(order.m, m, "{case:?}");
        assert!(order.odd);
        assert_eq!(br.pairs.len(), pairs, "{case:?}");
        assert!(!br.pairs.is_empty() && br.pairs.len() <= m as usize);
        for side in [1.0, -1.0] {
            assert_eq!(brute_force_count(case, side * 0.2, 0.5), pairs, "{case:?}");
        }
        // Every curve point is a zero of the full system.
        for c in &br.curves {
            for p in &c.points {
                assert!(polished_residual(&fam, &p.x, p.lambda).unwrap() <= 1e-11, "{case:?}");
            }
        }
        // Pair members share their limit at s = 0.
        for &(a, b) in &br.pairs {
            let (pa, pb) = (&br.curves[a].points[0], &br.curves[b].points[0]);
            assert!((pa.lambda - pb.lambda).abs() < 1e-8);
        }
    }
}

#[test]
fn brute_force_zeros_are_reduced_zeros() {
    // Converse direction: zeros of the full pitchfork system found by direct
    // scan give B = 0 at their projection.
    let fam = ModelFamily(ModelCase::Pitchfork);
    for x1 in [-0.25f64, -0.1, 0.05, 0.2] {
        let l = x1 * x1 - x1.powi(4);
        let f = fam.eval(&[x1, x1 * x1], l).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));
        let (s, _) = project(&fam, l, &[x1, x1 * x1]).unwrap();
        assert!(reduced_map(&fam, s, l, TOL).unwrap().abs() < 1e-14);
    }
}

#[test]
fn vertical_family_is_classified_vertical() {
    let br = local_branches(&ModelFamily(ModelCase::Vertical), 0.3, 0.2, &LatticeOptions::default()).unwrap();
    assert!(br.order.is_none());
    assert_eq!(br.curves.len(), 2);
    assert!(br.curves.iter().all(|c| c.kind == CurveKind::Vertical));
}

#[test]
fn even_order_is_refused() {
    struct Even;
    impl AnalyticFamily for Even {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], l: f64) -> Result<Vec<f64>> {
            Ok(vec![l * l * x[0] - x[0].powi(3)])
        }
        fn jacobian(&self, x: &[f64], l: f64) -> Result<BandMatrix> {
            let mut j = BandMatrix::zeros(1, 0, 0);
            j.add(0, 0, l * l - 3.0 * x[0] * x[0]);
            Ok(j)
        }
    }
    assert_eq!(crossing_order(&Even).unwrap().unwrap().m, 2);
    assert!(matches!(local_branches(&Even, 0.3, 0.3, &LatticeOptions::default()), Err(WaveError::Precondition(_))));
}

/// The pitchfork model as a branch system in (x, R) with R = λ.
struct ModelSystem;

impl BranchSystem for ModelSystem {
    fn dim(&self) -> usize {
        2
    }
    fn residual(&self, u: &[f64], r: f64) -> Result<Vec<f64>> {
        ModelFamily(ModelCase::Pitchfork).eval(u, r)
    }
    fn jacobian(&self, u: &[f64], r: f64) -> Result<(BandMatrix, Vec<f64>)> {
        Ok((ModelFamily(ModelCase::Pitchfork).jacobian(u, r)?, vec![u[0], 0.0]))
    }
    fn weights(&self) -> &[f64] {
        &[1.0, 1.0]
    }
}

#[test]
fn switching_on_embedded_model_matches_reduction() {
    let run = continue_generic(&ModelSystem, vec![0.0, 0.0], -0.05, 4, &StepControl::new(0.03), |_, _| Ok(None)).unwrap();
    let pts = &run.points;
    let k = pts.windows(2).position(|w| w[0].r < 0.0 && w[1].r > 0.0).unwrap();
    let opts = SwitchOptions { s_max: 0.3, lambda_max: 0.2, lattice: LatticeOptions { ns: 4, nl: 41, ..Default::default() }, ..Default::default() };
    let seed = switch_branch_generic(&ModelSystem, &pts[k], &pts[k + 1], &opts).unwrap();
    assert!((seed.t_star - 0.05).abs() < 1e-9, "{}", seed.t_star);
    // λ₀ lies on the reduced zero curve λ = s² − s⁴ at s₀.
    assert!((seed.lambda0 - (seed.s0 * seed.s0 - seed.s0.powi(4))).abs() < 1e-10);
    let f = ModelSystem.residual(&seed.u, seed.r).unwrap();
    assert!(f.iter().all(|v| v.abs() <= 1e-10));
    assert!((seed.u[0] - seed.s0).abs() < 1e-8 && seed.distance > 1e-9);
    // Bracket on one side of the crossing.
    assert!(matches!(
        switch_branch_generic(&ModelSystem, &pts[0], &pts[k], &opts),
        Err(WaveError::Precondition(_))
    ));
}

/// −u″ − R u + u³ + β u² = 0 on (0, π), u = 0 at both ends: the trivial branch
/// loses stability at the lowest discrete Dirichlet eigenvalue.
struct Bvp {
    n: usize,
    beta: f64,
    w: Vec<f64>,
}

impl Bvp {
    fn new(n: usize, beta: f64) -> Self {
        Self { n, beta, w: vec![1.0 / n as f64; n] }
    }
    fn h(&self) -> f64 {
        std::f64::consts::PI / (self.n + 1) as f64
    }
    fn crossing(&self) -> f64 {
        (4.0 / self.h().powi(2)) * (self.h() / 2.0).sin().powi(2)
    }
}

impl BranchSystem for Bvp {
    fn dim(&self) -> usize {
        self.n
    }
    fn residual(&self, u: &[f64], r: f64) -> Result<Vec<f64>> {
        let h2 = self.h().powi(2);
        Ok((0..self.n)
            .map(|i| {
                let l = if i > 0 { u[i - 1] } else { 0.0 };
                let rr = if i + 1 < self.n { u[i + 1] } else { 0.0 };
                -(l - 2.0 * u[i] + rr) / h2 - r * u[i] + u[i].powi(3) + self.beta * u[i] * u[i]
            })
            .collect())
    }
    fn jacobian(&self, u: &[f64], r: f64) -> Result<(BandMatrix, Vec<f64>)> {
        let h2 = self.h().powi(2);
        let mut j = BandMatrix::zeros(self.n, 1, 1);
        for i in 0..self.n {
            j.add(i, i, 2.0 / h2 - r + 3.0 * u[i] * u[i] + 2.0 * self.beta * u[i]);
            if i > 0 {
                j.add(i, i - 1, -1.0 / h2);
            }
            if i + 1 < self.n {
                j.add(i, i + 1, -1.0 / h2);
            }
        }
        Ok((j, u.iter().map(|x| -x).collect()))
    }
    fn weights(&self) -> &[f64] {
        &self.w
    }
}

#[test]
fn manufactured_bvp_switches_off_branch() {
    // n > 256 exercises the banded eigen and bordered paths.
    let bvp = Bvp::new(300, 0.5);
    let rstar = bvp.crossing();
    let a = RawPoint { u: vec![0.0; bvp.n], r: rstar - 0.07, t: 0.0, newton_iters: 0 };
    let b = RawPoint { u: vec![0.0; bvp.n], r: rstar + 0.05, t: 0.12, newton_iters: 0 };
    let opts = SwitchOptions { s_max: 0.2, lambda_max: 0.1, lattice: LatticeOptions { ns: 2, nl: 21, ..Default::default() }, ..Default::default() };
    let seed = switch_branch_generic(&bvp, &a, &b, &opts).unwrap();
    assert!((seed.t_star - 0.07).abs() < 1e-8, "{}", seed.t_star);
    let f = bvp.residual(&seed.u, seed.r).unwrap();
    assert!(f.iter().all(|v| v.abs() <= 1e-10));
    assert!(seed.distance > 10.0 * opts.tol);
    // The seed has the shape of the lowest mode: one sign, interior maximum.
    let sign = seed.u[bvp.n / 2].signum();
    assert!(seed.u.iter().all(|v| v * sign > 0.0));
}
