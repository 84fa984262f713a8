use diffusion_forge::selector::dyadic_selector;
use diffusion_forge::{eval_scale, full_selector, svc_selector, thin_scale, Interval, ScaleFunction};
use proptest::prelude::*;

const EPS: f64 = 1e-10;

fn bases() -> Vec<ScaleFunction> {
    vec![ScaleFunction::Log, ScaleFunction::NegPower { alpha: 1.0 }, ScaleFunction::Exp { gamma: 1.0 }]
}

fn thinned() -> Vec<(ScaleFunction, ScaleFunction)> {
    let mut v = Vec::new();
    for base in bases() {
        for f in [svc_selector(1.0, 2.0, 0.5).unwrap(), svc_selector(0.25, 3.0, 0.3).unwrap(), dyadic_selector(1.0, 0.5, 0.5).unwrap()] {
            v.push((thin_scale(&base, &f).unwrap(), base.clone()));
        }
    }
    v
}

fn point() -> impl Strategy<Value = f64> {
    (-3.0f64..2.5).prop_map(|e| 2f64.powf(e))
}

#[test]
fn full_selector_is_identity() {
    for base in bases() {
        let p = thin_scale(&base, &full_selector(Interval::positive_half_line())).unwrap();
        for k in -20..=20 {
            let x = 2f64.powf(k as f64 / 4.0);
            let (a, b) = (eval_scale(&p, x).unwrap(), eval_scale(&base, x).unwrap());
            assert!((a - b).abs() <= EPS * (1.0 + b.abs()), "{base:?} at {x}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thinned_scales_increase_and_are_dominated(x in point(), y in point()) {
        prop_assume!(x < y);
        for (pt, base) in thinned() {
            let d = eval_scale(&pt, y).unwrap() - eval_scale(&pt, x).unwrap();
            let db = eval_scale(&base, y).unwrap() - eval_scale(&base, x).unwrap();
            prop_assert!(d > 0.0, "{x} {y}");
            prop_assert!(d <= db * (1.0 + 1e-9) + 2.0 * EPS, "{d} > {db}");
        }
    }

    #[test]
    fn increments_add_up(x in point(), y in point(), z in point()) {
        let mut v = [x, y, z];
        v.sort_by(f64::total_cmp);
        for (pt, _) in thinned() {
            let p: Vec<f64> = v.iter().map(|&t| eval_scale(&pt, t).unwrap()).collect();
            let whole = p[2] - p[0];
            let parts = (p[2] - p[1]) + (p[1] - p[0]);
            prop_assert!((whole - parts).abs() <= 2.0 * EPS * (1.0 + whole.abs()));
        }
    }

    #[test]
    fn thinning_twice_is_thinning_by_intersection(x in point(), y in point()) {
        prop_assume!(x < y);
        let f1 = svc_selector(1.0, 2.0, 0.5).unwrap();
        let f2 = svc_selector(3.0, 5.0, 0.25).unwrap();
        for base in bases() {
            let twice = thin_scale(&thin_scale(&base, &f1).unwrap(), &f2).unwrap();
            let once = thin_scale(&base, &f1.intersect(&f2).unwrap()).unwrap();
            let a = eval_scale(&twice, y).unwrap() - eval_scale(&twice, x).unwrap();
            let b = eval_scale(&once, y).unwrap() - eval_scale(&once, x).unwrap();
            prop_assert!((a - b).abs() <= 2.0 * EPS * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
