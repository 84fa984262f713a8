use diffusion_forge::catalogue::{brownian_skew, example2_skew, svc_subspace};
use diffusion_forge::skew::{check_subspace_criterion, classify_skew, energy_tensor};
use diffusion_forge::{AngularTest, RadialTest, SkewProductSpec, TensorTestFunction};
use proptest::prelude::*;

fn pairs() -> Vec<(SkewProductSpec, SkewProductSpec)> {
    let mut v = Vec::new();
    for d in 2..=4 {
        v.push(svc_subspace(d, 0.5, 1.0, 2.0).unwrap());
        v.push(svc_subspace(d, 0.3, 0.5, 4.0).unwrap());
        let base = brownian_skew(d).unwrap();
        v.push((base.clone(), base));
    }
    let e2 = example2_skew(1.0).unwrap();
    v.push((e2.clone(), e2));
    v
}

fn angular() -> impl Strategy<Value = AngularTest> {
    prop_oneof![
        Just(AngularTest::Constant),
        Just(AngularTest::Coordinate { i: 0 }),
        Just(AngularTest::Coordinate { i: 1 }),
        Just(AngularTest::Product { i: 0, j: 1 }),
        Just(AngularTest::DiffSquares { i: 0, j: 1 }),
    ]
}

#[test]
fn remark_four_holds_on_catalogue() {
    for (candidate, base) in pairs() {
        let c = classify_skew(&candidate).unwrap();
        let b = classify_skew(&base).unwrap();
        if b.transient {
            assert!(c.transient, "{candidate:?}");
        }
        if c.recurrent {
            assert!(b.recurrent, "{base:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energy_is_quadratic(alpha in -4.0f64..4.0, a in 0.3f64..2.0, w in 0.2f64..3.0, ang in angular(), d in 2usize..5) {
        let skew = brownian_skew(d).unwrap();
        let mut u = TensorTestFunction::new(RadialTest::Bump { a, b: a + w }, ang);
        let e1 = energy_tensor(&skew, &u).unwrap();
        u.amplitude = alpha;
        let e2 = energy_tensor(&skew, &u).unwrap();
        prop_assert!((e2 - alpha * alpha * e1).abs() <= 1e-9 * e1.abs().max(1e-300) * (1.0 + alpha * alpha));
    }

    #[test]
    fn rescaled_clock_is_detected(k in 0.01f64..100.0, d in 2usize..5) {
        let base = brownian_skew(d).unwrap();
        let mut candidate = base.clone();
        candidate.revuz_density = base.revuz_density.scaled(k);
        candidate.sphere_time_scale = 1.0 / k;
        let r = check_subspace_criterion(&candidate, &base).unwrap();
        prop_assert!(r.is_subspace);
        let c = r.c.unwrap();
        prop_assert!((c - k).abs() <= 1e-9 * k, "{c} vs {k}");
    }

    #[test]
    fn energies_agree_where_the_scales_coincide(a in 2.1f64..3.0, w in 0.2f64..2.0, ang in angular(), d in 2usize..5) {
        let (candidate, base) = svc_subspace(d, 0.5, 1.0, 2.0).unwrap();
        prop_assert!(check_subspace_criterion(&candidate, &base).unwrap().is_subspace);
        let u = TensorTestFunction::new(RadialTest::PolyBump { a, b: a + w }, ang);
        let ec = energy_tensor(&candidate, &u).unwrap();
        let eb = energy_tensor(&base, &u).unwrap();
        prop_assert!((ec - eb).abs() <= 1e-8 * eb.abs(), "{ec} vs {eb}");
    }
}
