use mrisde::grid::{dft_centered, gaussian_noise, gaussian_noise_complex, ComplexImage, Direction, Rng, C64};
use mrisde::measurement::{
    adjoint, data_consistency, forward, make_mask, simulate_sensitivities, MaskKind, MultiCoilKspace,
};
use mrisde::metrics::{psnr, ssim_symmetric};
use mrisde::score::{GaussianScore, StepSizeRule};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = MaskKind> {
    prop_oneof![
        Just(MaskKind::Uniform1d),
        Just(MaskKind::Gaussian1d),
        Just(MaskKind::Gaussian2d),
        Just(MaskKind::PoissonVd),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn centered_dft_is_unitary(h in 1usize..24, w in 1usize..24, seed in any::<u64>()) {
        let x = gaussian_noise_complex(&mut Rng::new(seed, 0), h, w);
        let k = dft_centered(&x, Direction::Forward);
        prop_assert!((k.norm() - x.norm()).abs() <= 1e-10 * x.norm().max(1.0));
        let back = dft_centered(&k, Direction::Inverse);
        prop_assert!(back.sub(&x).norm() <= 1e-10 * x.norm().max(1.0));
    }

    #[test]
    fn data_consistency_is_nonexpansive(
        kind in kind(),
        coils in 1usize..4,
        accel in 1.5f64..6.0,
        lambda in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let (h, w) = (16, 20);
        let mut rng = Rng::new(seed, 0);
        let mask = make_mask(kind, h, w, accel, 0.1, &mut rng).unwrap();
        let maps = simulate_sensitivities(coils, h, w, None, &mut rng).unwrap();
        let truth = gaussian_noise_complex(&mut rng, h, w);
        let y = forward(&truth, &mask, Some(&maps)).unwrap();
        let a = gaussian_noise_complex(&mut rng, h, w);
        let b = gaussian_noise_complex(&mut rng, h, w);
        let da = data_consistency(&a, &y, Some(&maps), lambda).unwrap();
        let db = data_consistency(&b, &y, Some(&maps), lambda).unwrap();
        prop_assert!(da.sub(&db).norm() <= a.sub(&b).norm() * (1.0 + 1e-9));
    }

    #[test]
    fn adjoint_matches_forward(kind in kind(), coils in 1usize..5, seed in any::<u64>()) {
        let (h, w) = (12, 16);
        let mut rng = Rng::new(seed, 0);
        let mask = make_mask(kind, h, w, 3.0, 0.1, &mut rng).unwrap();
        let maps = simulate_sensitivities(coils, h, w, None, &mut rng).unwrap();
        let x = gaussian_noise_complex(&mut rng, h, w);
        let data: Vec<ComplexImage> = (0..coils)
            .map(|_| mask.apply(&gaussian_noise_complex(&mut rng, h, w)))
            .collect();
        let y = MultiCoilKspace::new(data, mask.clone()).unwrap();
        let ax = forward(&x, &mask, Some(&maps)).unwrap();
        let lhs: C64 = ax.data().iter().zip(y.data()).map(|(a, b)| b.dot(a)).sum();
        let rhs = adjoint(&y, Some(&maps)).unwrap().dot(&x);
        prop_assert!((lhs - rhs).norm() <= 1e-9 * x.norm() * y.norm());
    }

    #[test]
    fn random_masks_hit_their_budget(kind in kind(), accel in 1.5f64..8.0, seed in any::<u64>()) {
        let (h, w) = (32, 32);
        let mask = make_mask(kind, h, w, accel, 0.05, &mut Rng::new(seed, 0)).unwrap();
        let target = if kind.is_1d() {
            h * (w as f64 / accel).round() as usize
        } else {
            (h as f64 * w as f64 / accel).round() as usize
        };
        prop_assert_eq!(mask.kept_count(), target);
        prop_assert!(mask.acs_region().iter().all(|&i| mask.keep()[i]));
    }

    #[test]
    fn step_sizes_are_nonnegative(z in 0.0f64..1e3, s in 0.0f64..1e3, r in 0.0f64..1.0) {
        for rule in [StepSizeRule::Ratio, StepSizeRule::SquaredRatio] {
            let eps = rule.step_size(z, s, r);
            prop_assert!(eps >= 0.0 && eps.is_finite());
        }
    }

    #[test]
    fn gaussian_score_points_to_the_mean(mean in -2.0f64..2.0, var in 0.01f64..4.0, sigma in 0.01f64..10.0, seed in any::<u64>()) {
        let g = GaussianScore::isotropic(4, 4, mean, var).unwrap();
        let x = gaussian_noise(&mut Rng::new(seed, 0), 4, 4);
        let s = g.score(&x, sigma).unwrap();
        for (xi, si) in x.data().iter().zip(s.data()) {
            prop_assert!((mean - xi) * si >= 0.0);
        }
    }

    #[test]
    fn image_metrics_are_bounded(seed in any::<u64>(), scale in 0.0f64..1.0) {
        let mut rng = Rng::new(seed, 0);
        let a = gaussian_noise(&mut rng, 16, 16).map(f64::abs);
        let mut b = gaussian_noise(&mut rng, 16, 16);
        b.scale(scale);
        b.axpy(1.0, &a);
        let s = ssim_symmetric(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - ssim_symmetric(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(psnr(&a, &a).unwrap() >= psnr(&a, &b).unwrap());
    }
}
