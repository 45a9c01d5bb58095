use posdyn_core::metrics::{histogram, ks_distance, summarize};
use posdyn_core::rng::substream;
use proptest::prelude::*;
use rand_distr::{Distribution, Exp1};

fn exp_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, 0);
    (0..n).map(|_| Exp1.sample(&mut rng)).collect()
}

#[test]
fn exponential_tail_and_histogram() {
    let xs = exp_samples(100_000, 1);
    let s = summarize(&xs, &[2.0]).unwrap();
    assert!((s.tail(2.0).unwrap() - 0.135).abs() < 0.005);
    let h = histogram(&xs, 50, 0.0, 5.0).unwrap();
    let first = h.counts[0] as f64 / xs.len() as f64;
    assert!((first - (1.0 - (-0.1f64).exp())).abs() < 0.005, "{first}");
    assert_eq!(h.in_range() + h.underflow + h.overflow, xs.len() as u64);
}

#[test]
fn exponential_ks_is_small() {
    let mut passed = 0;
    for seed in 0..20 {
        let xs = exp_samples(10_000, 100 + seed);
        if ks_distance(&xs, |x| 1.0 - (-x).exp()).unwrap() <= 0.02 {
            passed += 1;
        }
    }
    assert!(passed >= 19, "{passed}");
}

#[test]
fn ks_shrinks_with_count() {
    let cdf = |x: f64| 1.0 - (-x).exp();
    let small = ks_distance(&exp_samples(100, 5), cdf).unwrap();
    let large = ks_distance(&exp_samples(100_000, 5), cdf).unwrap();
    assert!(large < small);
    assert!(large < 0.01);
}

proptest! {
    #[test]
    fn summary_ignores_order(mut xs in prop::collection::vec(-1e3f64..1e3, 1..200), seed in any::<u64>()) {
        let a = summarize(&xs, &[0.0, 10.0]).unwrap();
        // deterministic shuffle
        let mut state = seed | 1;
        for i in (1..xs.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            xs.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let b = summarize(&xs, &[0.0, 10.0]).unwrap();
        prop_assert_eq!(a.count, b.count);
        prop_assert!((a.mean - b.mean).abs() <= 1e-9 * (1.0 + a.mean.abs()));
        prop_assert!((a.variance - b.variance).abs() <= 1e-9 * (1.0 + a.variance));
        prop_assert_eq!(a.tail_probs, b.tail_probs);
    }

    #[test]
    fn histogram_conserves_count(xs in prop::collection::vec(-5.0f64..5.0, 0..300), bins in 1usize..40) {
        let h = histogram(&xs, bins, -2.0, 3.0).unwrap();
        let inside = xs.iter().filter(|&&x| (-2.0..=3.0).contains(&x)).count() as u64;
        prop_assert_eq!(h.in_range(), inside);
        prop_assert_eq!(h.in_range() + h.underflow + h.overflow, xs.len() as u64);
        prop_assert_eq!(h.edges.len(), bins + 1);
    }

    #[test]
    fn ks_unchanged_by_replication(xs in prop::collection::vec(0.0f64..1.0, 1..100), copies in 2usize..5) {
        let once = ks_distance(&xs, |x| x).unwrap();
        let many: Vec<f64> = xs.iter().flat_map(|&x| std::iter::repeat_n(x, copies)).collect();
        let again = ks_distance(&many, |x| x).unwrap();
        prop_assert!((once - again).abs() < 1e-12);
    }
}
