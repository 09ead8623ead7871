//! Invariants of the estimators, acquisition and ranking code.

use proptest::prelude::*;

use todlab::active::{init_pool, select_top_b};
use todlab::estimation::{tod, OutputSpace};
use todlab::model::{softmax, MlpSpec, ParamVector};
use todlab::selection::{rank_models, topk_hit, Candidate, SelectionMethod};

fn small_spec() -> MlpSpec {
    MlpSpec::new(vec![2, 5, 3]).unwrap()
}

fn params_from(spec: &MlpSpec, seed: u64) -> ParamVector {
    spec.init_params(seed)
}

/// Reference top-b: stable sort by descending score, ties by candidate id.
fn top_b_oracle(scores: &[f64], candidates: &[usize], b: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(candidates.iter().copied()).collect();
    pairs.sort_by(|a, c| c.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&c.1)));
    let mut out: Vec<usize> = pairs[..b].iter().map(|p| p.1).collect();
    out.sort_unstable();
    out
}

fn candidates(spec: &MlpSpec, seeds: &[(u64, u64)]) -> Vec<Candidate> {
    seeds
        .iter()
        .enumerate()
        .map(|(id, &(a, b))| Candidate {
            id,
            params: params_from(spec, a),
            baseline: params_from(spec, b),
            final_train_loss: id as f64,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ignores_constant_shifts(logits in prop::collection::vec(-20.0f64..20.0, 1..8), c in -100.0f64..100.0) {
        let a = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tod_is_a_pseudometric(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000,
                             x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
        let spec = small_spec();
        let (a, b, c) = (params_from(&spec, s1), params_from(&spec, s2), params_from(&spec, s3));
        let x = [x0, x1];
        for space in [OutputSpace::Probs, OutputSpace::Logits] {
            let ab = tod(&spec, &a, &b, &x, space).unwrap();
            let ba = tod(&spec, &b, &a, &x, space).unwrap();
            let ac = tod(&spec, &a, &c, &x, space).unwrap();
            let cb = tod(&spec, &c, &b, &x, space).unwrap();
            prop_assert_eq!(tod(&spec, &a, &a, &x, space).unwrap(), 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }

    #[test]
    fn top_b_matches_sort_oracle(scores in prop::collection::vec(0u8..6, 1..40), b_frac in 0.0f64..=1.0) {
        // small integer scores force many ties
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let candidates: Vec<usize> = (0..scores.len()).map(|i| 3 * i + 1).rev().collect();
        let b = (b_frac * scores.len() as f64).floor() as usize;
        prop_assert_eq!(select_top_b(&scores, &candidates, b).unwrap(), top_b_oracle(&scores, &candidates, b));
    }

    #[test]
    fn top_b_is_scale_invariant(scores in prop::collection::vec(0.0f64..10.0, 1..30), k in -8i32..8, b in 0usize..30) {
        let b = b.min(scores.len());
        let candidates: Vec<usize> = (0..scores.len()).collect();
        let scaled: Vec<f64> = scores.iter().map(|s| s * 2f64.powi(k)).collect();
        prop_assert_eq!(
            select_top_b(&scores, &candidates, b).unwrap(),
            select_top_b(&scaled, &candidates, b).unwrap()
        );
    }

    #[test]
    fn ranking_ignores_candidate_order(seeds in prop::collection::vec((0u64..500, 0u64..500), 2..6)) {
        let spec = small_spec();
        let cands = candidates(&spec, &seeds);
        let mut reversed = cands.clone();
        reversed.reverse();
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3 - 1.0, 0.5 - i as f64 * 0.2]).collect();
        let xs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        for m in SelectionMethod::ALL {
            let a = rank_models(m, &spec, &cands, &xs, OutputSpace::Probs).unwrap();
            let b = rank_models(m, &spec, &reversed, &xs, OutputSpace::Probs).unwrap();
            prop_assert_eq!(a.order, b.order);
        }
    }

    #[test]
    fn topk_hits_are_monotone_in_k(seeds in prop::collection::vec((0u64..500, 0u64..500), 2..7), best in 0usize..7) {
        let spec = small_spec();
        let cands = candidates(&spec, &seeds);
        let best = best % cands.len();
        let xs = [[0.2, -0.4], [1.0, 1.0], [-1.5, 0.3]];
        let xs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let r = rank_models(SelectionMethod::Tod, &spec, &cands, &xs, OutputSpace::Probs).unwrap();
        let hits: Vec<bool> = (1..=cands.len()).map(|k| topk_hit(&r, best, k).unwrap()).collect();
        prop_assert!(hits.windows(2).all(|w| !w[0] || w[1]));
        prop_assert!(hits[cands.len() - 1]);
    }

    #[test]
    fn converged_candidate_ranks_first_under_tod(seeds in prop::collection::vec((0u64..500, 500u64..1000), 2..6)) {
        // a candidate whose baseline equals its final weights has zero TOD and
        // is never ranked behind one that still moves
        let spec = small_spec();
        let mut cands = candidates(&spec, &seeds);
        let last = cands.len() - 1;
        cands[last].baseline = cands[last].params.clone();
        let xs = [[0.2, -0.4], [1.0, 1.0]];
        let xs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let r = rank_models(SelectionMethod::Tod, &spec, &cands, &xs, OutputSpace::Probs).unwrap();
        prop_assert_eq!(r.order[0], last);
    }

    #[test]
    fn annotation_conserves_the_pool(n in 20usize..200, start in 0.05f64..0.5, seed in 0u64..1000, take in 0usize..20) {
        let mut pool = init_pool(n, start, seed).unwrap();
        let unl = pool.unlabeled().to_vec();
        let take = take.min(unl.len());
        pool.annotate(&unl[..take]).unwrap();
        let mut all: Vec<usize> = pool.labeled().iter().chain(pool.unlabeled()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(pool.unlabeled().len(), unl.len() - take);
        // annotating an already labeled index is rejected
        if let Some(&i) = pool.labeled().first() {
            prop_assert!(pool.annotate(&[i]).is_err());
        }
    }
}
