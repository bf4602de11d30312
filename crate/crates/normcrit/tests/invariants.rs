use std::sync::Arc;

use approx::assert_relative_eq;
use normcrit::fiber::Fiber;
use normcrit::functionals::{energy, pohozaev, Pair, Params};
use normcrit::profiles::SOBOLEV_SQ;
use normcrit::solvers::profile_constants;
use normcrit::{GridSpec, RadialField, RadialGrid};
use proptest::prelude::*;

fn grid() -> Arc<RadialGrid> {
    GridSpec::geometric(1024, 40.0, 4e-5).build().unwrap()
}

/// Sum of Gaussians `c exp(-(r/w)^2)`.
fn field(grid: &Arc<RadialGrid>, terms: &[(f64, f64)]) -> RadialField {
    RadialField::from_fn(grid.clone(), |r| terms.iter().map(|(c, w)| c * (-(r / w).powi(2)).exp()).sum())
}

fn terms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.1f64..2.0, 0.4f64..3.0), 1..4)
}

fn params() -> impl Strategy<Value = Params> {
    (2.05f64..3.95, 0.5f64..2.0, 0.5f64..2.0, 0.1f64..2.0, 0.1f64..2.0, 2.5f64..6.0).prop_map(
        |(p, mu1, mu2, alpha1, alpha2, beta)| Params { mu1, mu2, alpha1, alpha2, beta, p },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_dilation_preserves_mass(t in terms(), s in -1.5f64..1.5) {
        let g = grid();
        let u = field(&g, &t);
        let d = u.dilate_exact(s).unwrap();
        assert_relative_eq!(d.mass(), u.mass(), max_relative = 1e-12);
        assert_relative_eq!(d.grad_sq(), (2.0 * s).exp() * u.grad_sq(), max_relative = 1e-12);
    }

    #[test]
    fn rescaling_scales_norms(t in terms(), c in 0.1f64..5.0, k in 0.2f64..5.0) {
        let u = field(&grid(), &t);
        let w = u.rescale_exact(c, k).unwrap();
        assert_relative_eq!(w.mass(), c * c * k.powi(4) * u.mass(), max_relative = 1e-12);
        assert_relative_eq!(w.grad_sq(), c * c * k * k * u.grad_sq(), max_relative = 1e-12);
    }

    #[test]
    fn fiber_map_is_energy_along_dilations(prm in params(), tu in terms(), tv in terms(), s in -1.0f64..1.0) {
        let g = grid();
        let pair = Pair::new(field(&g, &tu), field(&g, &tv)).unwrap();
        let f = Fiber::of(&prm, &pair);
        let moved = pair.dilate_exact(s).unwrap();
        let e = energy(&prm, &moved);
        assert_relative_eq!(f.psi(s), e, max_relative = 1e-10, epsilon = 1e-10);
        assert_relative_eq!(f.psi(0.0), energy(&prm, &pair), max_relative = 1e-12, epsilon = 1e-12);
        let h = 1e-5;
        let fd = (f.psi(h) - f.psi(-h)) / (2.0 * h);
        assert_relative_eq!(f.dpsi(0.0), pohozaev(&prm, &pair), max_relative = 1e-9, epsilon = 1e-9);
        assert_relative_eq!(fd, f.dpsi(0.0), max_relative = 1e-5, epsilon = 1e-6);
    }

    #[test]
    fn fiber_has_one_maximum_above_cubic_rate(prm in params(), tu in terms(), tv in terms()) {
        prop_assume!(prm.p > 3.0);
        let g = grid();
        let pair = Pair::new(field(&g, &tu), field(&g, &tv)).unwrap();
        let f = Fiber::of(&prm, &pair);
        prop_assert_eq!(f.critical_points().unwrap().count(), 1);
        prop_assert_eq!(f.scan_sign_changes(4000).unwrap(), 1);
    }

    #[test]
    fn sobolev_inequality_holds(t in terms()) {
        let u = field(&GridSpec::geometric(4096, 80.0, 1e-5).build().unwrap(), &t);
        let l4 = u.lq(4.0);
        prop_assert!(SOBOLEV_SQ.sqrt() * l4.sqrt() <= u.grad_sq() * (1.0 + 1e-6));
    }

    #[test]
    fn gagliardo_nirenberg_inequality_holds(t in terms(), p in prop::sample::select(vec![2.3, 2.5, 3.0, 3.5])) {
        let (_, cp_pow) = profile_constants(p).unwrap();
        let u = field(&GridSpec::geometric(4096, 80.0, 1e-5).build().unwrap(), &t);
        let bound = cp_pow * u.grad_sq().powf(p - 2.0) * u.mass().powf((4.0 - p) / 2.0);
        prop_assert!(u.lq(p) <= bound * (1.0 + 1e-6));
    }

    #[test]
    fn params_round_trip_through_json(prm in params()) {
        let back: Params = serde_json::from_str(&serde_json::to_string(&prm).unwrap()).unwrap();
        prop_assert_eq!(back, prm);
    }
}
