mod support;

use etnet::losses::{
    lovasz_grad, lovasz_softmax, lovasz_softmax_loss, softmax, softmax_backward, ClassAveraging, GroundTruth,
    ProbMap,
};
use proptest::prelude::*;
use support::{lovasz_softmax_oracle, relative_error, softmax_rows};

/// Probabilities on a 0.05 grid: each row is a random composition of 20 steps.
fn grid_instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<usize>)> {
    (2usize..=3, 1usize..=8).prop_flat_map(|(classes, n)| {
        let rows = prop::collection::vec(prop::collection::vec(0u32..=20, classes - 1), n);
        let labels = prop::collection::vec(0..classes, n);
        (Just(classes), rows, labels).prop_map(|(classes, rows, labels)| {
            let mut probs = Vec::new();
            for mut cuts in rows {
                cuts.sort_unstable();
                let mut prev = 0;
                for &c in cuts.iter().chain(std::iter::once(&20)) {
                    probs.push((c - prev) as f64 / 20.0);
                    prev = c;
                }
            }
            (classes, probs, labels)
        })
    })
}

proptest! {
    #[test]
    fn matches_level_set_oracle((classes, probs, labels) in grid_instance()) {
        let p = ProbMap::new(classes, probs.clone()).unwrap();
        let g = GroundTruth::new(labels.clone(), classes).unwrap();
        for (averaging, present_only) in [(ClassAveraging::AllClasses, false), (ClassAveraging::PresentOnly, true)] {
            let loss = lovasz_softmax(&p, &g, averaging).unwrap().loss;
            let oracle = lovasz_softmax_oracle(&probs, &labels, classes, present_only);
            prop_assert!((loss - oracle).abs() < 1e-6, "loss {} oracle {}", loss, oracle);
        }
    }

    #[test]
    fn loss_range_and_zero_iff_perfect((classes, probs, labels) in grid_instance()) {
        let p = ProbMap::new(classes, probs.clone()).unwrap();
        let g = GroundTruth::new(labels.clone(), classes).unwrap();
        let loss = lovasz_softmax_loss(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&loss));
        let perfect = labels.iter().enumerate().all(|(i, &l)| probs[i * classes + l] == 1.0);
        prop_assert_eq!(loss == 0.0, perfect);
    }

    #[test]
    fn permutation_equivariant((classes, probs, labels) in grid_instance(), seed in any::<u64>()) {
        let n = labels.len();
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates driven by a tiny LCG so the permutation is a pure function of `seed`.
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p2: Vec<f64> = perm.iter().flat_map(|&i| probs[i * classes..(i + 1) * classes].to_vec()).collect();
        let l2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = lovasz_softmax_loss(&ProbMap::new(classes, probs).unwrap(), &GroundTruth::new(labels, classes).unwrap()).unwrap();
        let b = lovasz_softmax_loss(&ProbMap::new(classes, p2).unwrap(), &GroundTruth::new(l2, classes).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lovasz_grad_is_nonnegative_and_sums_to_final_jaccard(gt in prop::collection::vec(any::<bool>(), 1..40)) {
        let g = lovasz_grad(&gt);
        prop_assert!(g.iter().all(|&v| v >= 0.0));
        let p = gt.iter().filter(|&&b| b).count() as f64;
        let n = gt.len() as f64;
        // J_N = 1 − (P − P) / (P + (N − P)) = 1 whenever the class is present.
        let final_j = if p == 0.0 { 0.0 } else { 1.0 - 0.0 / n };
        prop_assert!((g.iter().sum::<f64>() - final_j).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(logits in prop::collection::vec(-50.0f64..50.0, 3..30)) {
        let classes = 3;
        let logits = &logits[..logits.len() / classes * classes];
        let p = softmax(logits, classes).unwrap();
        let direct = softmax_rows(logits, classes);
        for (row, (z, d)) in p.values().chunks(classes).zip(logits.chunks(classes).zip(direct.chunks(classes))) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            prop_assert_eq!(argmax(row), argmax(z));
            for (a, b) in row.iter().zip(d) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

fn loss_of_logits(logits: &[f64], labels: &GroundTruth, classes: usize) -> f64 {
    lovasz_softmax_loss(&softmax(logits, classes).unwrap(), labels).unwrap()
}

/// Smallest gap between distinct per-class errors, used to stay away from sorting ties.
fn min_error_gap(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let mut gap = f64::INFINITY;
    for c in 0..classes {
        let mut m: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let p = probs[i * classes + c];
                if l == c {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        m.sort_by(f64::total_cmp);
        for w in m.windows(2) {
            gap = gap.min(w[1] - w[0]);
        }
    }
    gap
}

#[test]
fn logit_gradient_matches_central_differences() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 40 {
        let classes = rng.random_range(2..=3);
        let n = rng.random_range(1..=16);
        let logits: Vec<f64> = (0..n * classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let probs = softmax(&logits, classes).unwrap();
        if min_error_gap(probs.values(), &labels, classes) < 1e-3 {
            continue;
        }
        let gt = GroundTruth::new(labels, classes).unwrap();
        let out = lovasz_softmax(&probs, &gt, ClassAveraging::AllClasses).unwrap();
        let analytic = softmax_backward(&probs, &out.dprobs);
        let h = 1e-4;
        for j in 0..logits.len() {
            let mut up = logits.clone();
            up[j] += h;
            let mut down = logits.clone();
            down[j] -= h;
            let numeric = (loss_of_logits(&up, &gt, classes) - loss_of_logits(&down, &gt, classes)) / (2.0 * h);
            assert!(
                relative_error(analytic[j], numeric) < 1e-3,
                "logit {j}: analytic {} numeric {numeric}",
                analytic[j]
            );
        }
        checked += 1;
    }
}
