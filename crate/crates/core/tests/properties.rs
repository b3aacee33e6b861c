use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;

use ordmeta::dataset::{self, kfold_split_ids};
use ordmeta::features;
use ordmeta::learners::{fit_classifier, BinaryClassifier, Hyper, Input, LabeledData, TrainConfig};
use ordmeta::metamodel::{threshold_labels, ThresholdSet};
use ordmeta::stats::{anova_sums, paired_ttest, pearson, t_cdf};
use ordmeta::Matrix;

const D: usize = 4;

/// One trained classifier per vector family plus an LSTM on 3×2 sequences.
fn bank() -> &'static [BinaryClassifier] {
    static BANK: OnceLock<Vec<BinaryClassifier>> = OnceLock::new();
    BANK.get_or_init(|| {
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| (0..D).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect())
            .collect();
        let y: Vec<f64> = xs.iter().map(|x| f64::from(x[0] > 0.0)).collect();
        let seqs: Vec<Matrix> = xs
            .iter()
            .map(|x| Matrix::from_vec(2, 2, x.clone()).unwrap())
            .collect();
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let hypers = [
            Hyper::Lr { l2: 0.01 },
            Hyper::Svm {
                c: 1.0,
                scale: 1.0,
                epsilon: 0.1,
            },
            Hyper::Rf {
                trees: 10,
                max_depth: Some(4),
                min_leaf: 1,
                bootstrap: true,
            },
            Hyper::Mlp {
                hidden1: 8,
                hidden2: 4,
                shrink_small_inputs: false,
            },
            Hyper::Lstm { hidden: 3 },
        ];
        let mut out: Vec<BinaryClassifier> = hypers
            .iter()
            .map(|h| {
                let inputs = if matches!(h, Hyper::Lstm { .. }) {
                    seqs.iter().map(Input::Sequence).collect()
                } else {
                    xs.iter().map(|x| Input::Vector(x)).collect()
                };
                let data = LabeledData {
                    inputs,
                    targets: y.clone(),
                };
                fit_classifier(h, &cfg, &data, None, 3).unwrap()
            })
            .collect();
        out.push(BinaryClassifier::constant(0.4));
        out
    })
}

fn threshold_set() -> impl Strategy<Value = ThresholdSet> {
    prop::collection::btree_set(0u8..8, 1..8).prop_flat_map(|ints| {
        let n = ints.len();
        (Just(ints), prop::collection::vec(0.05f64..0.95, n)).prop_map(|(ints, fracs)| {
            let v: Vec<f64> = ints.iter().zip(fracs).map(|(i, f)| f64::from(*i) + f).collect();
            ThresholdSet::new(v).unwrap()
        })
    })
}

fn paired(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn classifier_scores_are_probabilities(
        x in prop::collection::vec(-1e3f64..1e3, D),
        member in 0usize..6,
    ) {
        let clf = &bank()[member];
        let s = match clf.view() {
            Some(ordmeta::learners::View::Sequence) => {
                let m = Matrix::from_vec(2, 2, x).unwrap();
                clf.predict_score(Input::Sequence(&m)).unwrap()
            }
            _ => clf.predict_score(Input::Vector(&x)).unwrap(),
        };
        prop_assert!((0.0..=1.0).contains(&s), "score {s}");
    }
}

proptest! {
    #[test]
    fn pearson_affine_invariance(
        (x, y) in paired(3..40),
        a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in -100.0f64..100.0,
    ) {
        let Ok(r) = pearson(&x, &y) else { return Ok(()); };
        prop_assert!((-1.0..=1.0).contains(&r));
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r2 = pearson(&ax, &y).unwrap();
        prop_assert!((r2 - a.signum() * r).abs() < 1e-9, "{r} vs {r2}");
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((pearson(&x, &neg).unwrap() + r).abs() < 1e-12);
        prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn threshold_bits_are_monotone(t in threshold_set(), score in 0u8..=8) {
        let bits = threshold_labels(f64::from(score), &t);
        prop_assert_eq!(bits.len(), t.len());
        prop_assert!(bits.windows(2).all(|w| w[0] >= w[1]));
        let ones = bits.iter().filter(|b| **b == 1.0).count();
        prop_assert_eq!(ones, t.values().iter().filter(|v| f64::from(score) > **v).count());
        // a higher score never clears fewer thresholds
        if score < 8 {
            let up = threshold_labels(f64::from(score + 1), &t);
            prop_assert!(up.iter().zip(&bits).all(|(u, b)| u >= b));
        }
    }

    #[test]
    fn t_cdf_symmetry(x in -50.0f64..50.0, df in 1.0f64..200.0) {
        let lo = t_cdf(-x, df).unwrap();
        let hi = t_cdf(x, df).unwrap();
        prop_assert!((lo + hi - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&hi));
    }

    #[test]
    fn paired_ttest_antisymmetry((a, b) in paired(2..20)) {
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        prop_assert_eq!(ab.df, a.len() - 1);
        prop_assert_eq!(ab.degenerate, ba.degenerate);
        if !ab.degenerate {
            prop_assert!((ab.t + ba.t).abs() <= 1e-12 * ab.t.abs().max(1.0));
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
        }
    }

    #[test]
    fn anova_sums_partition_total(
        data in (2usize..6, 2usize..4, 2usize..4).prop_flat_map(|(s, a, b)| {
            prop::collection::vec(prop::collection::vec(prop::collection::vec(-5.0f64..5.0, b), a), s)
        })
    ) {
        let ss = anova_sums(&data).unwrap();
        prop_assert!((ss.component_sum() - ss.total).abs() <= 1e-9 * ss.total.max(1.0));
        for v in [ss.subjects, ss.method, ss.algorithm, ss.interaction, ss.method_x_subject, ss.algorithm_x_subject, ss.residual] {
            prop_assert!(v >= -1e-12);
        }
    }

    #[test]
    fn window_count_matches_windows(t in 1usize..120, len in 1usize..40, stride in 1usize..15) {
        let m = Matrix::from_fn(t, 2, |r, c| (r * 2 + c) as f64);
        match dataset::window(&m, len, stride) {
            Ok(w) => {
                prop_assert_eq!(w.len(), (t - len) / stride + 1);
                prop_assert_eq!(dataset::window_count(t, len, stride).unwrap(), w.len());
                for (i, win) in w.iter().enumerate() {
                    prop_assert_eq!(win.row(0), m.row(i * stride));
                }
            }
            Err(_) => prop_assert!(len > t),
        }
    }

    #[test]
    fn upper_triangle_length(rois in 2usize..30) {
        let m = Matrix::from_fn(rois, rois, |r, c| (r * rois + c) as f64);
        let v = features::upper_triangle(&m).unwrap();
        prop_assert_eq!(v.len(), rois * (rois - 1) / 2);
        prop_assert_eq!(features::connectivity_len(rois), v.len());
        prop_assert_eq!(v[0], 1.0);
    }

    #[test]
    fn kfold_tests_partition_subjects(n in 6usize..60, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
        let Ok(splits) = kfold_split_ids(&ids, k, 0.1, seed) else { return Ok(()); };
        prop_assert_eq!(splits.len(), k);
        let mut seen = BTreeSet::new();
        for s in &splits {
            for id in &s.test {
                prop_assert!(seen.insert(id.clone()), "{id} in two test sets");
            }
            let all: BTreeSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            prop_assert_eq!(all.len(), n, "fold sets overlap or drop subjects");
        }
        prop_assert_eq!(seen.len(), n);
    }
}
