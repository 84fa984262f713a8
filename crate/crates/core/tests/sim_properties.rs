use diffusion_forge::catalogue::{bessel, svc_subspace};
use diffusion_forge::montecarlo::McConfig;
use diffusion_forge::{
    estimate_hitting, hitting_probability, simulate_path, simulate_pcaf, simulate_sphere, Density, DiffusionSpec,
    ExitFlag, PathSample, ScaleFunction, SpeedMeasure, SphereConfig, TimeHorizon, WalkConfig,
};
use proptest::prelude::*;

fn bm() -> DiffusionSpec {
    DiffusionSpec::on_domain(ScaleFunction::Affine { a: 1.0, b: 0.0 }, SpeedMeasure::new(Density::constant(1.0))).unwrap()
}

fn walk(h: f64, seed: u64, horizon: TimeHorizon) -> WalkConfig {
    WalkConfig {
        step_h: h,
        max_steps: 10_000_000,
        seed,
        time_horizon: horizon,
    }
}

#[test]
fn mean_exit_time_of_brownian_motion() {
    let (x, delta) = (5.0, 0.5);
    let cfg = |seed| walk(delta / 16.0, seed, TimeHorizon::UntilExit { until_exit: [x - delta, x + delta] });
    let n = 10_000;
    let mean = (0..n)
        .map(|s| *simulate_path(&bm(), x, &cfg(s)).unwrap().times.last().unwrap())
        .sum::<f64>()
        / n as f64;
    assert!((mean / (delta * delta) - 1.0).abs() < 0.05, "mean exit time {mean}");
}

#[test]
fn thinned_walk_hits_with_scale_ratio() {
    let (candidate, _) = svc_subspace(2, 0.5, 1.0, 2.0).unwrap();
    let spec = &candidate.radial;
    let (a, x, b) = (0.5, 1.5, 3.0);
    let mc = McConfig {
        n: 20_000,
        seed: 9,
        chunks: 16,
    };
    let est = estimate_hitting(spec, x, a, b, 0.02, &mc).unwrap();
    let exact = hitting_probability(spec, x, a, b).unwrap();
    assert!(est.within(exact, 3.0), "{est:?} vs {exact}");
}

fn split_at(p: &PathSample, k: usize) -> (PathSample, PathSample) {
    let head = PathSample {
        times: p.times[..=k].to_vec(),
        states: p.states[..=k].to_vec(),
        pcaf: None,
        exit_flag: ExitFlag::Horizon,
    };
    let t0 = p.times[k];
    let tail = PathSample {
        times: p.times[k..].iter().map(|t| t - t0).collect(),
        states: p.states[k..].to_vec(),
        pcaf: None,
        exit_flag: p.exit_flag,
    };
    (head, tail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn walks_are_deterministic(seed in any::<u64>(), d in 2usize..5) {
        let spec = bessel(d).unwrap();
        let cfg = walk(0.05, seed, TimeHorizon::Time(0.1));
        let a = simulate_path(&spec, 1.0, &cfg).unwrap();
        let b = simulate_path(&spec, 1.0, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        prop_assert!(a.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn pcaf_is_additive_over_segments(seed in any::<u64>(), frac in 0.0f64..1.0) {
        let spec = bessel(2).unwrap();
        let f = Density::power(1.0, -2.0);
        let path = simulate_path(&spec, 1.0, &walk(0.05, seed, TimeHorizon::Time(0.1))).unwrap();
        let whole = simulate_pcaf(&path, &f).unwrap().pcaf.unwrap();
        prop_assert!(whole[0] == 0.0 && whole.windows(2).all(|w| w[1] >= w[0]));
        let k = ((path.times.len() - 1) as f64 * frac) as usize;
        let (head, tail) = split_at(&path, k);
        let a1 = *simulate_pcaf(&head, &f).unwrap().pcaf.unwrap().last().unwrap();
        let a2 = *simulate_pcaf(&tail, &f).unwrap().pcaf.unwrap().last().unwrap();
        let total = *whole.last().unwrap();
        prop_assert!((a1 + a2 - total).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn sphere_paths_stay_on_the_sphere(seed in any::<u64>(), d in 2usize..6, v in prop::collection::vec(-1.0f64..1.0, 6)) {
        let n = v[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(n > 1e-3);
        let theta0: Vec<f64> = v[..d].iter().map(|x| x / n).collect();
        let cfg = SphereConfig { dim_ambient: d, dt: 0.01, seed };
        let p = simulate_sphere(&cfg, &theta0, 0.5).unwrap();
        for s in &p.states {
            let r = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
    }
}
