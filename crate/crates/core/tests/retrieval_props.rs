use std::collections::BTreeSet;

use fairfunctor::metrics::cre;
use fairfunctor::retrieval::{
    fairness_rerank, fuse, retrieve, DocumentRecord, Index, RetrievalConfig, ScoredDocument,
};
use fairfunctor::Result;
use proptest::prelude::*;

fn corpus() -> impl Strategy<Value = Vec<DocumentRecord>> {
    prop::collection::vec(
        (prop::collection::vec(-1.0f64..1.0, 3), any::<bool>()),
        1..10,
    )
    .prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, (embedding, counter_stereotype))| DocumentRecord {
                id: format!("doc{i:02}"),
                text: vec![],
                embedding,
                attribute_tags: BTreeSet::new(),
                counter_stereotype,
            })
            .collect()
    })
}

fn embed(c: &str) -> Result<Vec<f64>> {
    Ok(match c {
        "a" => vec![1.0, 0.0, 0.0],
        "b" => vec![0.0, 1.0, 0.0],
        _ => vec![0.0, 0.0, 1.0],
    })
}

proptest! {
    #[test]
    fn retrieval_is_sorted_and_deterministic(docs in corpus(), q in prop::collection::vec(-1.0f64..1.0, 3), k in 1usize..12) {
        let index = Index::new(docs).unwrap();
        let cfg = RetrievalConfig { k, ..Default::default() };
        let a = retrieve(&index, &q, &cfg).unwrap().hits;
        let b = retrieve(&index, &q, &cfg).unwrap().hits;
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), k.min(index.len()));
        for w in a.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
    }

    #[test]
    fn rerank_with_zero_boost_is_identity(docs in corpus(), q in prop::collection::vec(-1.0f64..1.0, 3)) {
        let index = Index::new(docs).unwrap();
        let cfg = RetrievalConfig { k: 20, beta: 0.0, ..Default::default() };
        let hits = retrieve(&index, &q, &cfg).unwrap().hits;
        prop_assert_eq!(fairness_rerank(hits.clone(), &cfg), hits);
    }

    #[test]
    fn audit_reconstructs_scores(docs in corpus(), q in prop::collection::vec(-1.0f64..1.0, 3), beta in 0.0f64..3.0) {
        let index = Index::new(docs).unwrap();
        let cfg = RetrievalConfig { k: 20, beta, ..Default::default() };
        let hits = fairness_rerank(retrieve(&index, &q, &cfg).unwrap().hits, &cfg);
        for d in &hits {
            prop_assert_eq!(d.score, d.base + d.boost);
            prop_assert_eq!(d.boost, if d.counter_stereotype { beta } else { 0.0 });
        }
    }

    #[test]
    fn fused_is_exact_mixture(
        docs in corpus(),
        p in prop::collection::vec(0.01f64..1.0, 3),
        alpha in 0.0f64..=1.0,
    ) {
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let hits: Vec<ScoredDocument> = docs
            .iter()
            .map(|d| ScoredDocument {
                id: d.id.clone(),
                embedding: d.embedding.clone(),
                counter_stereotype: d.counter_stereotype,
                base: 0.0,
                boost: 0.0,
                score: 0.0,
            })
            .collect();
        let cands = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let cfg = RetrievalConfig { alpha, ..Default::default() };
        let f = fuse(&p, &hits, &cands, embed, &cfg).unwrap();
        for ((fused, pi), ri) in f.fused.iter().zip(&p).zip(&f.retrieved) {
            let expect = (1.0 - alpha) * pi + alpha * ri;
            prop_assert!((fused - expect).abs() <= 1e-12);
        }
        prop_assert!((f.fused.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!((f.retrieved.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cre_grows_with_alpha(docs in corpus(), p in prop::collection::vec(0.01f64..1.0, 3)) {
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let hits: Vec<ScoredDocument> = docs
            .iter()
            .map(|d| ScoredDocument {
                id: d.id.clone(),
                embedding: d.embedding.clone(),
                counter_stereotype: false,
                base: 0.0,
                boost: 0.0,
                score: 0.0,
            })
            .collect();
        let cands = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mut last = -1.0;
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let cfg = RetrievalConfig { alpha, ..Default::default() };
            let f = fuse(&p, &hits, &cands, embed, &cfg).unwrap();
            let v = cre(&p, &f.fused).unwrap();
            if alpha == 0.0 {
                prop_assert!(v.abs() <= 1e-12);
            }
            prop_assert!(v >= last - 1e-15);
            last = v;
        }
    }
}
