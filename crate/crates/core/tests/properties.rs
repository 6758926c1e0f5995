use lexivis_core::laws::spearman;
use lexivis_core::lexicon::TableMeta;
use lexivis_core::{
    benford_analysis, dilate, erode, gaussian_blur, heaps_analysis, maxpool2, ols_fit,
    quantile_nearest_rank, relu, salt_pepper, word_count, zipf_analysis, ImageBuffer, Tensor,
    ThresholdMode, ThresholdSpec, WordCountTable,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn tensor(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    vec(-100.0f32..100.0, c * h * w).prop_map(move |d| Tensor::new(c, h, w, d).unwrap())
}

fn image() -> impl Strategy<Value = ImageBuffer> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        vec(any::<u8>(), w * h * 3).prop_map(move |px| ImageBuffer::new(w, h, px).unwrap())
    })
}

fn table(layers: usize) -> impl Strategy<Value = WordCountTable> {
    vec(vec(0u64..5000, 1..12), layers)
        .prop_map(|l| WordCountTable::from_layers(l, TableMeta::default()))
}

fn quantile(level: f64) -> ThresholdSpec {
    ThresholdSpec::new(ThresholdMode::Quantile, level).unwrap()
}

fn sse(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    points
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).powi(2))
        .sum()
}

proptest! {
    #[test]
    fn relu_is_idempotent_and_nonnegative(t in tensor(2, 5, 5)) {
        let once = relu(&t);
        let twice = relu(&once);
        prop_assert_eq!(twice.data(), once.data());
        prop_assert!(once.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn maxpool_picks_window_maxima(t in tensor(3, 6, 8)) {
        let p = maxpool2(&t).unwrap();
        prop_assert_eq!(p.shape(), (3, 3, 4));
        for c in 0..3 {
            for y in 0..3 {
                for x in 0..4 {
                    let window = [
                        t.get(c, 2 * y, 2 * x),
                        t.get(c, 2 * y, 2 * x + 1),
                        t.get(c, 2 * y + 1, 2 * x),
                        t.get(c, 2 * y + 1, 2 * x + 1),
                    ];
                    let v = p.get(c, y, x);
                    prop_assert!(window.iter().all(|&w| w <= v));
                    prop_assert!(window.contains(&v));
                }
            }
        }
    }

    #[test]
    fn quantile_is_a_member_and_order_free(
        mut values in vec(-1e3f32..1e3, 1..300),
        q in 0.01f64..0.99,
    ) {
        let a = quantile_nearest_rank(&values, q).unwrap();
        prop_assert!(values.contains(&a));
        let below = values.iter().filter(|&&v| v <= a).count();
        prop_assert!(below as f64 >= q * values.len() as f64 - 1e-9);
        values.reverse();
        let third = values.len() / 3;
        values.rotate_left(third);
        prop_assert_eq!(quantile_nearest_rank(&values, q).unwrap(), a);
    }

    #[test]
    fn word_count_ignores_power_of_two_scaling(
        map in vec(-1e3f32..1e3, 1..400),
        exp in -8i32..8,
        relative in any::<bool>(),
    ) {
        let t = if relative {
            ThresholdSpec::new(ThresholdMode::RelativeMax, 0.9).unwrap()
        } else {
            quantile(0.9)
        };
        let scaled: Vec<f32> = map.iter().map(|v| v * 2f32.powi(exp)).collect();
        prop_assert_eq!(word_count(&map, &t), word_count(&scaled, &t));
    }

    #[test]
    fn quantile_word_count_ignores_integer_shift(
        map in vec(-500i32..500, 1..400),
        shift in -1000i32..1000,
    ) {
        let a: Vec<f32> = map.iter().map(|&v| v as f32).collect();
        let b: Vec<f32> = map.iter().map(|&v| (v + shift) as f32).collect();
        let t = quantile(0.9);
        prop_assert_eq!(word_count(&a, &t), word_count(&b, &t));
        let count = word_count(&a, &t);
        prop_assert!(count as f64 <= 0.1 * a.len() as f64 + 1e-9);
    }

    #[test]
    fn inclusive_never_counts_fewer(map in vec(-10i32..10, 1..200), level in 0.05f64..0.95) {
        let map: Vec<f32> = map.iter().map(|&v| v as f32).collect();
        let strict = quantile(level);
        prop_assert!(word_count(&map, &strict.inclusive(true)) >= word_count(&map, &strict));
    }

    #[test]
    fn erosion_and_dilation_bracket_the_image(img in image(), s in 0usize..4) {
        let s = 2 * s + 1;
        let lo = erode(&img, s).unwrap();
        let hi = dilate(&img, s).unwrap();
        let lo2 = erode(&img, s + 2).unwrap();
        let hi2 = dilate(&img, s + 2).unwrap();
        for i in 0..img.pixels().len() {
            prop_assert!(lo.pixels()[i] <= img.pixels()[i]);
            prop_assert!(img.pixels()[i] <= hi.pixels()[i]);
            prop_assert!(lo2.pixels()[i] <= lo.pixels()[i]);
            prop_assert!(hi.pixels()[i] <= hi2.pixels()[i]);
        }
    }

    #[test]
    fn gaussian_stays_within_input_range(img in image(), k in 0usize..5) {
        let out = gaussian_blur(&img, 2 * k + 1).unwrap();
        let lo = *img.pixels().iter().min().unwrap();
        let hi = *img.pixels().iter().max().unwrap();
        prop_assert!(out.pixels().iter().all(|&v| lo <= v && v <= hi));
    }

    #[test]
    fn salt_pepper_is_reproducible(img in image(), p in 0.0f64..1.0, seed in any::<u64>()) {
        let a = salt_pepper(&img, p, seed).unwrap();
        prop_assert_eq!(&a, &salt_pepper(&img, p, seed).unwrap());
        for (new, old) in a.pixels().chunks(3).zip(img.pixels().chunks(3)) {
            prop_assert!(new == old || new == [0, 0, 0] || new == [255, 255, 255]);
        }
    }

    #[test]
    fn zipf_ignores_count_scaling(t in table(4), factor in 2u64..50) {
        let scaled = WordCountTable::from_layers(
            t.layers().iter().map(|l| l.iter().map(|c| c * factor).collect()).collect(),
            TableMeta::default(),
        );
        match (zipf_analysis(&t), zipf_analysis(&scaled)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.alpha - b.alpha).abs() < 1e-9);
                prop_assert!((a.fit.r_square - b.fit.r_square).abs() < 1e-9);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "degeneracy changed under scaling"),
        }
    }

    #[test]
    fn heaps_best_fit_never_worsens_with_more_iterations(
        t in table(3),
        seed in any::<u64>(),
        k in 1usize..8,
    ) {
        if let (Ok(few), Ok(more)) = (heaps_analysis(&t, k, seed), heaps_analysis(&t, k + 5, seed)) {
            prop_assert!(more.fit.r_square >= few.fit.r_square);
            prop_assert!(few.beta.is_finite());
        }
    }

    #[test]
    fn benford_observed_is_a_sorted_distribution(t in table(16)) {
        if let Ok(b) = benford_analysis(&t) {
            prop_assert_eq!(b.observed.len(), 9);
            prop_assert!((b.observed.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(b.observed.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(b.r_square <= 1.0);
        }
    }

    #[test]
    fn ols_is_a_least_squares_minimum(
        ys in vec(-50.0f64..50.0, 3..40),
    ) {
        let points: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64 * 0.5, y)).collect();
        if let Ok(fit) = ols_fit(&points) {
            let best = sse(&points, fit.slope, fit.intercept);
            // coarse-to-fine grid over (slope, intercept)
            let (mut s0, mut b0, mut span) = (0.0f64, 0.0f64, 200.0f64);
            for _ in 0..40 {
                let mut cand = (f64::INFINITY, s0, b0);
                for i in -10..=10 {
                    for j in -10..=10 {
                        let s = s0 + span * i as f64 / 10.0;
                        let b = b0 + span * j as f64 / 10.0;
                        let e = sse(&points, s, b);
                        if e < cand.0 {
                            cand = (e, s, b);
                        }
                    }
                }
                (s0, b0) = (cand.1, cand.2);
                span *= 0.5;
            }
            prop_assert!(best <= sse(&points, s0, b0) + 1e-9 * (1.0 + best));
            prop_assert!((fit.slope - s0).abs() <= 1e-4, "slope {} vs grid {}", fit.slope, s0);
            prop_assert!((fit.intercept - b0).abs() <= 1e-4);
            prop_assert!(fit.r_square <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn table_csv_round_trips(t in table(5)) {
        let back = WordCountTable::read_csv(t.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back.layers(), t.layers());
    }

    #[test]
    fn spearman_is_one_on_monotone_maps(xs in vec(-1e3f64..1e3, 2..50)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 7.0).collect();
        if let Some(r) = spearman(&xs, &ys) {
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
    }
}
