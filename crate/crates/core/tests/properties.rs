use lecodu::basemodel::{normalize_ai_prediction, NormalizationMode};
use lecodu::collab::{assemble_input, expected_cost, mode_costs, shuffle_annotations, CollaborationMode};
use lecodu::consensus::{crowdlab_consensus, AnnotatorQuality};
use lecodu::numerics::{argmax, softmax, Rng};
use proptest::prelude::*;

fn probability_vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let total: f64 = v.iter().sum();
        v.into_iter().map(|x| x / total).collect()
    })
}

proptest! {
    #[test]
    fn softmax_lands_on_the_simplex(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12),
        temperature in 0.05f64..10.0,
    ) {
        let p = softmax(&logits, temperature).unwrap();
        prop_assert_eq!(p.len(), logits.len());
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shuffle_keeps_the_multiset(labels in prop::collection::vec(0usize..5, 0..20), seed in any::<u64>()) {
        let mut shuffled = shuffle_annotations(&labels, &mut Rng::seeded(seed));
        let mut sorted = labels.clone();
        shuffled.sort_unstable();
        sorted.sort_unstable();
        prop_assert_eq!(shuffled, sorted);
    }

    #[test]
    fn expected_cost_is_bounded_and_linear(
        (m, p, q) in (1usize..8).prop_flat_map(|m| (Just(m), probability_vector(2 * m + 1), probability_vector(2 * m + 1))),
        a in 0.0f64..1.0,
    ) {
        let ep = expected_cost(&p).unwrap();
        let eq = expected_cost(&q).unwrap();
        prop_assert!((0.0..=m as f64 + 1e-12).contains(&ep));
        let mix: Vec<f64> = p.iter().zip(&q).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        prop_assert!((expected_cost(&mix).unwrap() - (a * ep + (1.0 - a) * eq)).abs() < 1e-12);
        let direct: f64 = p.iter().zip(mode_costs(m)).map(|(x, c)| x * c).sum();
        prop_assert!((ep - direct).abs() < 1e-12);
    }

    #[test]
    fn assembly_fills_exactly_the_selected_blocks(
        (m, index, ai, labels) in (1usize..6).prop_flat_map(|m| (
            Just(m),
            0..2 * m + 1,
            probability_vector(3),
            prop::collection::vec(0usize..3, m),
        )),
    ) {
        let k = 3;
        let mode = CollaborationMode::from_index(index, m).unwrap();
        let x = assemble_input(mode, &ai, &labels, m).unwrap();
        prop_assert_eq!(x.len(), (m + 1) * k);
        if mode.uses_ai() {
            prop_assert_eq!(&x[..k], &ai[..]);
        } else {
            prop_assert!(x[..k].iter().all(|v| *v == 0.0));
        }
        for slot in 0..m {
            let block = &x[(slot + 1) * k..(slot + 2) * k];
            if slot < mode.users() {
                for (c, v) in block.iter().enumerate() {
                    prop_assert_eq!(*v, if c == labels[slot] { 1.0 } else { 0.0 });
                }
            } else {
                prop_assert!(block.iter().all(|v| *v == 0.0));
            }
        }
        prop_assert_eq!(mode.cost(), mode.users());
        prop_assert_eq!(CollaborationMode::from_index(mode.index(m), m).unwrap(), mode);
    }

    #[test]
    fn test_normalization_keeps_the_argmax(p in probability_vector(5), temperature in 0.1f64..2.0) {
        let mut sorted = p.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        let q = normalize_ai_prediction(&p, temperature, NormalizationMode::Test, &mut Rng::seeded(0)).unwrap();
        prop_assert_eq!(argmax(&q), argmax(&p));
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn consensus_ignores_annotator_order_under_equal_weights(
        labels in prop::collection::vec(0usize..3, 1..6),
        p in probability_vector(3),
        weight in 0.1f64..1.0,
        classifier_weight in 0.1f64..1.0,
        seed in any::<u64>(),
    ) {
        let quality = AnnotatorQuality {
            annotator_weights: vec![weight; labels.len()],
            classifier_weight,
        };
        let permuted = shuffle_annotations(&labels, &mut Rng::seeded(seed));
        let a = crowdlab_consensus(0, &labels, &p, &quality).unwrap();
        let b = crowdlab_consensus(0, &permuted, &p, &quality).unwrap();
        prop_assert_eq!(a.consensus_label, b.consensus_label);
        prop_assert!((a.alpha - b.alpha).abs() < 1e-12);
    }
}
