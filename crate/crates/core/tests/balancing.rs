use num_rational::Ratio;
use occspot_core::balance::{class_stats, frame_weights, resample_frames, sampling_weights, ClassStats, FrameSummary};
use proptest::prelude::*;

/// Exact m/n_i as a rational, then a single square root at the end.
fn weights_oracle(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let m = Ratio::new(1u128, counts.len() as u128);
    let shares: Vec<Ratio<u128>> = counts.iter().map(|&n| Ratio::new(n as u128, total as u128)).collect();
    assert_eq!(shares.iter().copied().sum::<Ratio<u128>>(), Ratio::from_integer(1));
    shares
        .iter()
        .map(|n| {
            let q = m / n;
            (*q.numer() as f64 / *q.denom() as f64).sqrt()
        })
        .collect()
}

fn stats(counts: &[u64]) -> ClassStats {
    ClassStats {
        classes: (1..=counts.len() as u8).collect(),
        counts: counts.to_vec(),
        excluded: vec![],
    }
}

#[test]
fn four_class_example_matches_rational_oracle() {
    let s = sampling_weights(&stats(&[10, 10, 10, 70])).unwrap();
    let oracle = weights_oracle(&[10, 10, 10, 70]);
    for (a, b) in s.s.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in s.s.iter().zip([1.58114, 1.58114, 1.58114, 0.59761]) {
        assert!((a - b).abs() <= 5e-6);
    }
}

proptest! {
    #[test]
    fn weights_match_oracle(counts in prop::collection::vec(1u64..100_000, 1..12), scale in 1u64..50) {
        let s = sampling_weights(&stats(&counts)).unwrap();
        let oracle = weights_oracle(&counts);
        let total: u64 = counts.iter().sum();
        let m = 1.0 / counts.len() as f64;
        for ((a, b), &n) in s.s.iter().zip(&oracle).zip(&counts) {
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            let share = n as f64 / total as f64;
            prop_assert!((a * share.sqrt() - m.sqrt()).abs() <= 1e-12);
        }
        let scaled: Vec<u64> = counts.iter().map(|c| c * scale).collect();
        let s2 = sampling_weights(&stats(&scaled)).unwrap();
        for (a, b) in s.s.iter().zip(&s2.s) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let rarest = counts.iter().enumerate().min_by_key(|&(_, c)| c).unwrap().0;
        prop_assert!(s.s[rarest] >= s.max() - 1e-15);
    }
}

fn frequencies(draws: &[usize], n: usize) -> Vec<f64> {
    let mut f = vec![0.0; n];
    for &d in draws {
        f[d] += 1.0;
    }
    f.iter().map(|x| x / draws.len() as f64).collect()
}

#[test]
fn uniform_weights_draw_uniformly() {
    let draws = resample_frames(&[1.0; 10], 1_000_000, 3).unwrap();
    for f in frequencies(&draws, 10) {
        assert!((f - 0.1).abs() <= 0.02);
    }
}

#[test]
fn one_to_three_weights() {
    let draws = resample_frames(&[1.0, 3.0], 1_000_000, 4).unwrap();
    let f = frequencies(&draws, 2);
    assert!((f[0] - 0.25).abs() <= 0.01);
    assert!((f[1] - 0.75).abs() <= 0.01);
}

#[test]
fn empirical_cdf_close_to_weights() {
    let weights: Vec<f64> = (1..=20).map(|i| (i as f64).sqrt()).collect();
    let total: f64 = weights.iter().sum();
    let draws = resample_frames(&weights, 1_000_000, 9).unwrap();
    let f = frequencies(&draws, weights.len());
    let (mut a, mut b, mut ks) = (0.0, 0.0, 0.0f64);
    for (fi, wi) in f.iter().zip(&weights) {
        a += fi;
        b += wi / total;
        ks = ks.max((a - b).abs());
    }
    assert!(ks < 0.005, "Kolmogorov distance {ks}");
}

#[test]
fn end_to_end_from_frame_summaries() {
    let frames: Vec<FrameSummary> = vec![
        [(1, 3), (4, 1)].into_iter().collect(),
        [(1, 1)].into_iter().collect(),
        FrameSummary::new(),
    ];
    let st = class_stats(&frames, &[1, 4, 5]).unwrap();
    assert_eq!(st.classes, vec![1, 4]);
    assert_eq!(st.counts, vec![4, 1]);
    assert_eq!(st.excluded, vec![5]);
    let s = sampling_weights(&st).unwrap();
    let presence: Vec<Vec<u8>> = frames.iter().map(|f| f.keys().copied().collect()).collect();
    let w = frame_weights(&presence, &s);
    assert_eq!(w, vec![s.max(), s.get(1).unwrap(), s.min()]);
}
