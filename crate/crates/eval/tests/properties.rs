use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use procalc_eval::dataset::{split, split_sizes};
use procalc_eval::metrics::*;

const TOOLS: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];

fn selection() -> impl Strategy<Value = RankedSelection> {
    (
        Just(TOOLS.to_vec()).prop_shuffle(),
        0usize..=8,
        proptest::sample::subsequence(TOOLS.to_vec(), 1..=8),
        proptest::collection::vec(0u32..5, 8),
    )
        .prop_map(|(order, n, gt, grades)| {
            let selected: Vec<String> = order[..n].iter().map(|s| s.to_string()).collect();
            let ground_truth: BTreeSet<String> = gt.iter().map(|s| s.to_string()).collect();
            let graded: BTreeMap<String, u32> = TOOLS
                .iter()
                .zip(grades)
                .filter(|(t, _)| ground_truth.contains(**t) || selected.iter().any(|s| s == *t))
                .map(|(t, g)| (t.to_string(), g))
                .collect();
            RankedSelection { query_id: "q".into(), selected, ground_truth, grades: Some(graded) }
        })
}

fn words() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just("the"), Just("tank"), Just("flow"), Just("is"), Just("2"), Just("m3"), Just(".")], 0..12)
        .prop_map(|w| w.join(" "))
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn retrieval_metrics_in_range(s in selection(), k in 1usize..10) {
        s.validate().unwrap();
        prop_assert!(in_unit(query_recall(&s, k).unwrap()));
        prop_assert!(in_unit(query_comp(&s, k).unwrap()));
        prop_assert!(in_unit(query_ndcg(&s, k, NdcgMode::Binary).unwrap()));
        prop_assert!(in_unit(query_ndcg(&s, k, NdcgMode::Graded).unwrap()));
    }

    #[test]
    fn recall_monotone_in_k(s in selection(), k in 1usize..9) {
        prop_assert!(query_recall(&s, k).unwrap() <= query_recall(&s, k + 1).unwrap());
        prop_assert!(query_comp(&s, k).unwrap() <= query_comp(&s, k + 1).unwrap());
    }

    #[test]
    fn comp_implies_full_recall(s in selection(), k in 1usize..10) {
        if query_comp(&s, k).unwrap() == 1.0 {
            prop_assert_eq!(query_recall(&s, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn ideal_order_has_ndcg_one(s in selection(), k in 1usize..10) {
        // rank every graded tool by grade, best first
        let grades = s.grades.clone().unwrap();
        let mut ideal: Vec<(String, u32)> = grades.into_iter().collect();
        ideal.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let any_positive = ideal.iter().any(|(_, g)| *g > 0);
        let s2 = RankedSelection { selected: ideal.into_iter().map(|(t, _)| t).collect(), ..s };
        let v = query_ndcg(&s2, k, NdcgMode::Graded).unwrap();
        if any_positive {
            prop_assert!((v - 1.0).abs() < 1e-12, "{}", v);
        } else {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn means_in_range(ss in proptest::collection::vec(selection(), 1..6), k in 1usize..10) {
        prop_assert!(in_unit(recall_at_k(&ss, k).unwrap()));
        prop_assert!(in_unit(ndcg_at_k(&ss, k, NdcgMode::Binary).unwrap()));
        prop_assert!(in_unit(comp_at_k(&ss, k).unwrap()));
    }

    #[test]
    fn text_metrics_in_range(c in words(), r in words(), n in 1usize..5, beta in 0.1f64..4.0) {
        prop_assume!(!r.trim().is_empty());
        let pair = TextPair::new(&c, &r);
        let rouge_cfg = RougeConfig { beta };
        prop_assert!(in_unit(bleu(&pair, &BleuConfig::uniform(n)).unwrap()));
        prop_assert!(in_unit(rouge_l(&pair, &rouge_cfg).unwrap()));
        prop_assert!(in_unit(exact_match(&[pair]).unwrap()));
    }

    #[test]
    fn identical_texts_score_one(t in words(), n in 1usize..5, beta in 0.1f64..4.0) {
        prop_assume!(!t.trim().is_empty());
        let pair = TextPair::new(&t, &t);
        let rouge_cfg = RougeConfig { beta };
        prop_assert_eq!(bleu(&pair, &BleuConfig::uniform(n)).unwrap(), 1.0);
        prop_assert_eq!(rouge_l(&pair, &rouge_cfg).unwrap(), 1.0);
        prop_assert_eq!(exact_match(&[pair]).unwrap(), 1.0);
    }

    #[test]
    fn rouge_symmetric_at_equal_length_beta_one(c in words(), r in words()) {
        prop_assume!(!r.trim().is_empty());
        let pair = TextPair::new(&c, &r);
        let s = rouge_l_detail(&pair, &RougeConfig::default()).unwrap();
        let swapped = rouge_l_detail(&TextPair::new(&r, &c), &RougeConfig::default());
        let (lc, lr) = (procalc_core::text::metric_tokens(&c).len(), procalc_core::text::metric_tokens(&r).len());
        if lc == lr && s.f > 0.0 {
            prop_assert!((s.precision - s.recall).abs() < 1e-12);
            prop_assert!((swapped.unwrap().f - s.f).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_ratios_in_range(js in proptest::collection::vec((0u32..6, 0u32..6, 0u32..6, 0u32..6, 0u32..6), 1..8)) {
        let judgments: Vec<CallJudgment> = js
            .into_iter()
            .enumerate()
            .map(|(i, (req, a, b, enc, h))| CallJudgment {
                query_id: i.to_string(),
                params_required: req,
                params_consistent: a.min(req),
                params_correct: b.min(req),
                errors_encountered: enc,
                errors_handled: h.min(enc),
            })
            .collect();
        for r in [consistency(&judgments), param_correctness(&judgments), error_handling(&judgments)] {
            match r {
                Ok(p) => {
                    prop_assert!(in_unit(p.value));
                    prop_assert_eq!(p.counted + p.excluded, judgments.len());
                }
                Err(e) => prop_assert_eq!(e, MetricError::NoDenominator),
            }
        }
    }

    #[test]
    fn split_partitions(n in 1usize..300, seed in any::<u64>()) {
        let s = split(n, seed);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (tr, va, te) = split_sizes(n);
        prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (tr, va, te));
        let nf = n as f64;
        prop_assert!((tr as f64 - 0.70 * nf).abs() <= 1.0);
        prop_assert!((va as f64 - 0.15 * nf).abs() <= 1.0);
        prop_assert!((te as f64 - 0.15 * nf).abs() <= 1.0);
        prop_assert_eq!(split(n, seed), s);
    }
}
