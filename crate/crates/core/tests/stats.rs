use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::{beta, gamma};

use mlsd::stance::stats::{ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_cdf};

proptest! {
    #[test]
    fn ln_gamma_agrees_with_statrs(x in 0.05f64..200.0) {
        let want = gamma::ln_gamma(x);
        prop_assert!((ln_gamma(x) - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn incomplete_beta_agrees_with_statrs(a in 0.1f64..60.0, b in 0.1f64..60.0, x in 0.0f64..=1.0) {
        let want = beta::beta_reg(a, b, x);
        prop_assert!((regularized_incomplete_beta(a, b, x) - want).abs() < 1e-9, "a={a} b={b} x={x}");
    }

    #[test]
    fn t_cdf_agrees_with_statrs(t in -40.0f64..40.0, df in 1usize..200) {
        let dist = StudentsT::new(0.0, 1.0, df as f64).unwrap();
        prop_assert!((student_t_cdf(t, df as f64) - dist.cdf(t)).abs() < 1e-9);
    }

    #[test]
    fn p_value_is_symmetric_and_bounded(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.p));
        prop_assert_eq!(ab.p, ba.p);
        prop_assert_eq!(ab.t, -ba.t);
    }
}
