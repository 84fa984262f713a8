use std::sync::OnceLock;

use diffusion_forge::catalogue::{brownian_skew, example2_skew, svc_subspace};
use diffusion_forge::{build_extension, Extension, ExtensionCase, ExtensionInput};
use proptest::prelude::*;

fn inputs() -> Vec<(&'static str, ExtensionInput)> {
    let from = |s| ExtensionInput::from_skew(&s).unwrap();
    vec![
        ("brownian-skew(2)", from(brownian_skew(2).unwrap())),
        ("brownian-skew(3)", from(brownian_skew(3).unwrap())),
        ("example2-skew(1)", from(example2_skew(1.0).unwrap())),
        ("svc-subspace(2)", from(svc_subspace(2, 0.5, 1.0, 2.0).unwrap().0)),
        ("svc-subspace(3)", from(svc_subspace(3, 0.5, 1.0, 2.0).unwrap().0)),
    ]
}

fn extensions() -> &'static [(&'static str, Extension)] {
    static EXT: OnceLock<Vec<(&'static str, Extension)>> = OnceLock::new();
    EXT.get_or_init(|| inputs().into_iter().map(|(n, i)| (n, build_extension(&i).unwrap())).collect())
}

#[test]
fn every_input_extends_uniquely() {
    for (name, ext) in extensions() {
        assert!(ext.unique(), "{name}");
        match ext.case() {
            ExtensionCase::PolarOrigin => {
                assert_eq!(ext.q_hat(f64::NEG_INFINITY).unwrap(), 0.0, "{name}");
                let deep = ext.q_hat(-745.0).unwrap();
                assert!((0.0..=(-745f64).exp()).contains(&deep), "{name}: {deep}");
            }
            ExtensionCase::RegularOrigin => assert_eq!(ext.q_hat(0.0).unwrap(), 0.0, "{name}"),
        }
        assert_eq!(ext.h(0.0).unwrap(), 0.0, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn construction_identities(e in -6.0f64..4.0, f in 0.0f64..1.0) {
        let x = 2f64.powf(e);
        let y = x * (1.0 + f);
        for (name, ext) in extensions() {
            let d = ext.qhat().decomposition();
            let (r, ry) = (d.p_tilde(x).unwrap(), d.p_tilde(y).unwrap());
            let (hx, hy) = (ext.h(x).unwrap(), ext.h(y).unwrap());
            prop_assert!(hx > 0.0 && hx <= x * (1.0 + 1e-9), "{name}: h({x}) = {hx}");
            prop_assert!(f == 0.0 || hy > hx, "{name}: h not increasing at {x}");
            if let Some(l) = ext.length().finite() {
                prop_assert!(hx < l);
            }
            let back = ext.p_hat(hx).unwrap();
            prop_assert!((back - r).abs() <= 1e-9 * r.abs().max(1.0), "{name}: {back} vs {r}");
            prop_assert!(ry >= r);
            // compared through p~: q~ is ill-conditioned where p~ is nearly flat
            let inv = d.p_tilde(ext.h_inv(hx).unwrap()).unwrap();
            prop_assert!((inv - r).abs() <= 1e-9 * r.abs().max(1.0), "{name}: h_inv {inv} vs {r}");
        }
    }
}
