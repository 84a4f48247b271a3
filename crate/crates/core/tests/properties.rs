use linked_gp::design::maximin_lhd;
use linked_gp::emulator::{TrainedEmulator, TrendBasis};
use linked_gp::linked::{linked_predict, ColumnInput};
use linked_gp::moments::{psi, xi, zeta};
use linked_gp::{KernelForm, KernelKind, KernelSpec, NormalScalar};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = KernelKind> {
    prop::sample::select(KernelKind::ALL.to_vec())
}

fn near(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zeta_obeys_cauchy_schwarz(
        k in kind(),
        gamma in 0.1f64..3.0,
        mu in -2f64..2.0,
        sd in 0.01f64..2.0,
        wi in -3f64..3.0,
        wj in -3f64..3.0,
    ) {
        let d = NormalScalar::new(mu, sd * sd).unwrap();
        let cross = zeta(k, gamma, d, wi, wj);
        let bound = (zeta(k, gamma, d, wi, wi) * zeta(k, gamma, d, wj, wj)).sqrt();
        prop_assert!(cross >= -1e-15);
        prop_assert!(cross <= bound * (1.0 + 1e-9) + 1e-15, "{cross} > {bound}");
        // Jensen: ξ² ≤ ζ(w, w).
        let x = xi(k, gamma, d, wi);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
        prop_assert!(x * x <= zeta(k, gamma, d, wi, wi) * (1.0 + 1e-9) + 1e-15);
    }

    #[test]
    fn moments_follow_a_common_shift(
        k in kind(),
        gamma in 0.1f64..3.0,
        mu in -2f64..2.0,
        sd in 0.01f64..2.0,
        wi in -3f64..3.0,
        wj in -3f64..3.0,
        c in -5f64..5.0,
    ) {
        let d = NormalScalar::new(mu, sd * sd).unwrap();
        let s = NormalScalar::new(mu + c, sd * sd).unwrap();
        prop_assert!(near(zeta(k, gamma, s, wi + c, wj + c), zeta(k, gamma, d, wi, wj), 1e-9, 1e-12));
        let x = xi(k, gamma, d, wi);
        prop_assert!(near(xi(k, gamma, s, wi + c), x, 1e-9, 1e-12));
        // E[(W + c) k] = E[W k] + c ξ.
        prop_assert!(near(psi(k, gamma, s, wi + c), psi(k, gamma, d, wi) + c * x, 1e-9, 1e-10));
    }

    #[test]
    fn vanishing_variance_recovers_point_values(
        k in kind(),
        gamma in 0.1f64..3.0,
        mu in -2f64..2.0,
        wi in -3f64..3.0,
        wj in -3f64..3.0,
        log_ratio in -24f64..-14.0,
    ) {
        let d = NormalScalar::new(mu, 10f64.powf(log_ratio) * gamma * gamma).unwrap();
        let (ci, cj) = (k.eval(gamma, mu - wi), k.eval(gamma, mu - wj));
        prop_assert!(near(xi(k, gamma, d, wi), ci, 1e-6, 1e-12));
        prop_assert!(near(zeta(k, gamma, d, wi, wj), ci * cj, 1e-6, 1e-12));
        prop_assert!(near(psi(k, gamma, d, wi), mu * ci, 1e-6, 1e-12));
    }
}

fn toy(x: &[f64]) -> f64 {
    (2.0 * x[0]).sin() + 0.5 * x[1] * x[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shifting_responses_shifts_only_the_mean(
        k in kind(),
        c in -50f64..50.0,
        mu in -1f64..2.0,
        var in 0.0f64..0.5,
        z in 0f64..3.0,
        linked_trend in any::<bool>(),
    ) {
        let d = maximin_lhd(10, &[(-1.0, 2.0), (0.0, 3.0)], 1, 200).unwrap();
        let x = d.to_matrix();
        let y: Vec<f64> = d.points().iter().map(|p| toy(p)).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let trend = if linked_trend {
            TrendBasis::LinkedTrend { w_columns: vec![0] }
        } else {
            TrendBasis::Constant
        };
        let spec = KernelSpec::new(k, vec![0.4, 0.6], KernelForm::Product).unwrap();
        let a = TrainedEmulator::with_hyperparameters(&x, &y, trend.clone(), spec.clone(), 1e-6, None).unwrap();
        let b = TrainedEmulator::with_hyperparameters(&x, &shifted, trend, spec, 1e-6, None).unwrap();
        let inputs = [ColumnInput::Random(NormalScalar::new(mu, var).unwrap()), ColumnInput::Fixed(z)];
        let la = linked_predict(&a, &inputs).unwrap();
        let lb = linked_predict(&b, &inputs).unwrap();
        prop_assert!(near(lb.mu, la.mu + c, 1e-9, 1e-9), "{} vs {}", lb.mu, la.mu + c);
        prop_assert!(near(lb.var, la.var, 1e-7, 1e-12), "{} vs {}", lb.var, la.var);
    }
}
