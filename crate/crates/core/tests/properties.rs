use proptest::prelude::*;
use vaesr_core::degradation::{add_gaussian_noise, degrade, DegradationSpec};
use vaesr_core::imaging::{bicubic_resize, bicubic_taps, load_image, quantize, rgb_to_luma, save_image, Image};
use vaesr_core::losses::{kl_divergence, LossBreakdown, LossWeights};
use vaesr_core::metrics::{psnr, ssim, Channel};
use vaesr_core::models::LatentDistribution;

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, h * w * 3).prop_map(move |d| Image::new(h, w, d).unwrap())
}

fn sized_image(max: usize) -> impl Strategy<Value = Image> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| image(h, w))
}

proptest! {
    #[test]
    fn bicubic_weights_sum_to_one(len in 1usize..60, scale in 0.1f64..5.0, antialias: bool) {
        prop_assume!((len as f64 * scale).round() >= 1.0);
        let taps = bicubic_taps(len, scale, antialias).unwrap();
        for row in &taps.taps {
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|(j, _)| *j < len));
        }
    }

    #[test]
    fn bicubic_preserves_constants(h in 2usize..30, w in 2usize..30, level in 0.0f64..1.0, scale in 0.2f64..4.0, antialias: bool) {
        prop_assume!((h as f64 * scale).round() >= 1.0 && (w as f64 * scale).round() >= 1.0);
        let out = bicubic_resize(&Image::filled(h, w, [level; 3]), scale, antialias).unwrap();
        prop_assert!(out.data().iter().all(|v| (v - level).abs() < 1e-9));
    }

    #[test]
    fn luma_is_monotone_in_each_channel(img in image(3, 3), c in 0usize..3, bump in 0.0f64..0.5) {
        let base = rgb_to_luma(&img);
        let mut brighter = img.clone();
        for y in 0..3 {
            for x in 0..3 {
                brighter.set(y, x, c, img.get(y, x, c) + bump);
            }
        }
        let up = rgb_to_luma(&brighter);
        prop_assert!(base.data.iter().zip(&up.data).all(|(a, b)| b >= a));
    }

    #[test]
    fn kl_is_non_negative(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..32)) {
        let dist = LatentDistribution {
            mean: pairs.iter().map(|p| p.0).collect(),
            log_variance: pairs.iter().map(|p| p.1).collect(),
        };
        prop_assert!(kl_divergence(&dist).unwrap() >= 0.0);
    }

    #[test]
    fn psnr_is_symmetric_and_follows_the_scaling_law(a in image(8, 8), b in image(8, 8), k in 1.5f64..4.0) {
        let ab = psnr(&a, &b, Channel::Rgb).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, Channel::Rgb).unwrap());
        // Shrink the error towards `a` so neither image is clamped.
        let close = |s: f64| Image::new(8, 8, a.data().iter().zip(b.data()).map(|(x, y)| x + s * (y - x)).collect()).unwrap();
        let small = close(0.1 / k);
        let big = close(0.1);
        prop_assume!(small != a);
        let drop = psnr(&small, &a, Channel::Rgb).unwrap() - psnr(&big, &a, Channel::Rgb).unwrap();
        prop_assert!((drop - 20.0 * k.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(a in image(12, 12), b in image(12, 12)) {
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degrade_output_dims(img in sized_image(24), scale in 1usize..5, seed: u64) {
        prop_assume!(img.height() >= scale && img.width() >= scale);
        let spec = DegradationSpec { blur_sigma: 0.8, scale, noise_sigma: 0.05, seed };
        let out = degrade(&img, &spec).unwrap();
        prop_assert_eq!(out.dims(), (img.height() / scale, img.width() / scale));
    }

    #[test]
    fn noise_is_seeded_and_independent(img in image(6, 6), seed: u64) {
        let a = add_gaussian_noise(&img, 0.1, seed).unwrap();
        prop_assert_eq!(&a, &add_gaussian_noise(&img, 0.1, seed).unwrap());
        prop_assert_ne!(&a, &add_gaussian_noise(&img, 0.1, seed.wrapping_add(1)).unwrap());
    }

    #[test]
    fn clean_degradation_is_identity(img in sized_image(10), seed: u64) {
        let spec = DegradationSpec { blur_sigma: 0.0, scale: 1, noise_sigma: 0.0, seed };
        prop_assert_eq!(degrade(&img, &spec).unwrap(), img);
    }

    #[test]
    fn weighted_total_matches_parts(v in prop::array::uniform6(0.0f64..10.0), lf in 0.0f64..5.0, ea in 0.0f64..5.0, kw in 0.0f64..5.0) {
        let w = LossWeights { lambda_feat: lf, eta_adv: ea, kl_weight: kw };
        let b = LossBreakdown {
            kl: v[0], reconstruction: v[1], cycle_lowfreq: v[2], cycle_backproj: v[3], feature: v[4], adversarial: v[5], total: 0.0,
        }.with_total(&w);
        let want = v[1] + kw * v[0] + v[2] + v[3] + lf * v[4] + ea * v[5];
        prop_assert!((b.total - want).abs() <= 1e-9 * want.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn quantized_images_round_trip_through_png(img in sized_image(12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let q = img.map(|v| quantize(v) as f64 / 255.0);
        save_image(&q, &path).unwrap();
        prop_assert_eq!(load_image(&path).unwrap(), q);
    }
}
