use std::sync::Arc;

use proptest::prelude::*;

use nsdde::linalg::{dist, norm, norm_sq};
use nsdde::model::{make_example, sample_initial_grid, Coefficients, ExampleModel, InitialSegment, ModelId};
use nsdde::paths::{coarsen, generate, pairwise_sum};
use nsdde::rational::Rational;
use nsdde::scheme::{integrate, Integrator, SchemeConfig, SchemeVariant};
use nsdde::taming::{cutoff, CutoffConfig, TamedCoefficients, TamingConfig, TamingMode, SMOOTHSTEP_LIPSCHITZ};
use nsdde::verify::{check_assumption, AssumptionId, VerifyConfig};

const STEPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

fn models() -> [ExampleModel; 2] {
    [ExampleModel::cubic_global(0.25).unwrap(), ExampleModel::cosine_local().unwrap()]
}

fn eval(c: &Arc<dyn Coefficients>, x: f64, y: f64) -> (f64, f64) {
    let (mut b, mut s) = ([0.0], [0.0]);
    c.drift(&[x], &[y], &mut b);
    c.diffusion(&[x], &[y], &mut s);
    (b[0], s[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn tamed_coefficients_obey_min_bounds(x in -10.0..=10.0f64, y in -10.0..=10.0f64) {
        for model in models() {
            let c = model.spec.coefficients;
            let (b, s) = eval(&c, x, y);
            for mode in [TamingMode::Sigmoidal, TamingMode::Balanced] {
                let cfg = TamingConfig::new(mode, 0.5).unwrap();
                for delta in STEPS {
                    let t = TamedCoefficients::new(c.clone(), delta, cfg, None).unwrap();
                    let (mut bt, mut st) = ([0.0], [0.0]);
                    t.drift_and_diffusion(&[x], &[y], &mut bt, &mut st).unwrap();
                    let scale = cfg.k5 * delta.powf(-cfg.alpha);
                    prop_assert!(norm(&bt) <= (scale * (1.0 + x.abs() + y.abs())).min(b.abs()));
                    prop_assert!(norm_sq(&st) <= (scale * (1.0 + x * x + y * y)).min(s * s));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4096))]

    /// `|b - b_h| / (h^a (1 + |x|^6 + |y|^6))` under a step-free envelope.
    #[test]
    fn sigmoidal_taming_error_is_uniformly_rate_bounded(x in -3.0..=3.0f64, y in -3.0..=3.0f64) {
        let c = ExampleModel::cubic_global(0.25).unwrap().spec.coefficients;
        let (b, s) = eval(&c, x, y);
        let l = 2.0;
        let w = 1.0 + x.abs().powf(2.0 * (l + 1.0)) + y.abs().powf(2.0 * (l + 1.0));
        let envelope = (b * b).max(s.abs().powi(3)) / w;
        for delta in STEPS {
            let t = TamedCoefficients::new(c.clone(), delta, TamingConfig::default(), None).unwrap();
            let (mut bt, mut st) = ([0.0], [0.0]);
            t.drift_and_diffusion(&[x], &[y], &mut bt, &mut st).unwrap();
            let q = (b - bt[0]).abs().max((s - st[0]).abs()) / (delta.sqrt() * w);
            prop_assert!(q <= envelope * (1.0 + 1e-12), "q = {q}, envelope = {envelope}");
        }
    }

    #[test]
    fn cutoff_shape_and_lipschitz(
        x in -6.0..=6.0f64, y in -6.0..=6.0f64, dx in -0.5..=0.5f64, dy in -0.5..=0.5f64, r in 0.5..=4.0f64,
    ) {
        let cfg = CutoffConfig::new(r).unwrap();
        let z = cutoff(&[x], &[y], &cfg);
        prop_assert!((0.0..=1.0).contains(&z));
        if x.abs() <= r && y.abs() <= r {
            prop_assert_eq!(z, 1.0);
        }
        if x.abs() >= r + 1.0 || y.abs() >= r + 1.0 {
            prop_assert_eq!(z, 0.0);
        }
        let z2 = cutoff(&[x + dx], &[y + dy], &cfg);
        prop_assert!((z - z2).abs() <= SMOOTHSTEP_LIPSCHITZ * (dx.abs() + dy.abs()) + 1e-12);
    }

    #[test]
    fn neutral_maps_contract_by_kappa(x in -10.0..=10.0f64, xb in -10.0..=10.0f64) {
        for model in models() {
            let c = &model.spec.coefficients;
            let (mut d, mut db) = ([0.0], [0.0]);
            c.neutral(&[x], &mut d);
            c.neutral(&[xb], &mut db);
            prop_assert!(dist(&d, &db) <= model.constants.kappa * (x - xb).abs() + 1e-15);
        }
    }

    #[test]
    fn initial_grid_ends_at_present_value(m in 1usize..200, c in -5.0..=5.0f64, cosine in any::<bool>()) {
        let xi = if cosine { InitialSegment::cosine(c) } else { InitialSegment::constant(c) };
        let model = make_example(ModelId::CosineLocal, 0.0, xi, Rational::integer(1), Rational::integer(2)).unwrap();
        let grid = sample_initial_grid(&model.spec, m).unwrap();
        prop_assert_eq!(grid.len(), m + 1);
        prop_assert_eq!(grid[m], c);
    }

    #[test]
    fn coarsening_preserves_total_displacement(seed in any::<u64>(), log_n in 1u32..10, log_f in 1u32..4) {
        let n = 1usize << (log_n + log_f);
        let fine = generate(seed, 0, 1, Rational::new(1, n as i64).unwrap(), n).unwrap();
        let coarse = coarsen(&fine, 1 << log_f).unwrap();
        prop_assert_eq!(pairwise_sum(&fine.increments), pairwise_sum(&coarse.increments));
    }
}

#[test]
fn balanced_taming_gap_is_finite_on_each_ball() {
    let c = ExampleModel::cosine_local().unwrap().spec.coefficients;
    for delta in STEPS {
        let t = TamedCoefficients::new(c.clone(), delta, TamingConfig::new(TamingMode::Balanced, 0.5).unwrap(), None).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=60 {
            for j in 0..=60 {
                let (x, y) = (-3.0 + 0.1 * i as f64, -3.0 + 0.1 * j as f64);
                let (b, s) = eval(&c, x, y);
                let (mut bt, mut st) = ([0.0], [0.0]);
                t.drift_and_diffusion(&[x], &[y], &mut bt, &mut st).unwrap();
                worst = worst.max((b - bt[0]).abs().max((s - st[0]).abs()) / delta.sqrt());
            }
        }
        assert!(worst.is_finite() && worst > 0.0);
    }
}

#[test]
fn one_sided_constant_is_stable_under_sample_doubling() {
    let m = ExampleModel::cubic_global(0.25).unwrap();
    let k = |n| {
        check_assumption(AssumptionId::A4, &m.spec.coefficients, &m.constants, &VerifyConfig::new(5.0, n, 11))
            .unwrap()
            .estimated_constant
    };
    let (small, big) = (k(8192), k(16384));
    assert!(small.is_finite());
    assert!(big >= small && big <= 1.01 * small, "{small} -> {big}");
    let a3 = check_assumption(AssumptionId::A3, &m.spec.coefficients, &m.constants, &VerifyConfig::new(5.0, 8192, 11)).unwrap();
    assert!(a3.estimated_constant.is_finite());
}

#[test]
fn tamed_paths_do_not_blow_up() {
    let model = make_example(ModelId::CubicGlobal, 0.25, InitialSegment::constant(2.0), Rational::integer(1), Rational::integer(2)).unwrap();
    for theta in [0.0, 1.0] {
        let cfg = SchemeConfig::new(&model.spec, SchemeVariant::TamedTheta, theta, Rational::dyadic(6), Some(TamingConfig::default()), None).unwrap();
        let it = Integrator::new(&model.spec, cfg).unwrap();
        for path in 0..1000 {
            let noise = generate(2024, path, 1, Rational::dyadic(6), 128).unwrap();
            let r = it.run(&noise).unwrap();
            assert!(!r.blew_up && r.len() == 129, "theta {theta}, path {path}");
        }
    }
}

#[test]
fn theta_variants_approach_each_other() {
    let model = ExampleModel::cubic_global(0.25).unwrap();
    let fine_step = Rational::dyadic(8);
    for path in 0..4 {
        let fine = generate(5, path, 1, fine_step, 512).unwrap();
        let mut gaps = Vec::new();
        for j in 4..=8u32 {
            let delta = Rational::dyadic(j);
            let noise = coarsen_or_same(&fine, 1 << (8 - j));
            let run = |theta| {
                let cfg = SchemeConfig::new(&model.spec, SchemeVariant::TamedTheta, theta, delta, Some(TamingConfig::default()), None).unwrap();
                integrate(&model.spec, cfg, &noise).unwrap()
            };
            let (a, b) = (run(0.0), run(1.0));
            gaps.push((0..a.len()).map(|k| dist(a.state(k), b.state(k))).fold(0.0, f64::max));
        }
        for w in gaps.windows(2) {
            assert!(w[1] <= 1.2 * w[0], "path {path}: {gaps:?}");
        }
    }
}

fn coarsen_or_same(fine: &nsdde::paths::BrownianGrid, factor: usize) -> nsdde::paths::BrownianGrid {
    if factor == 1 {
        fine.clone()
    } else {
        coarsen(fine, factor).unwrap()
    }
}
