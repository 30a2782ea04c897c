mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reldep::checkpoint::Checkpoint;
use reldep::eval::{compute_metrics, filtered_rank};
use reldep::kg::Triple;
use reldep::objective::{loss, loss_with_grad};
use reldep::params::{Activation, Dims, ModelParams};
use reldep::preprocess::{prune_partition, retained_quota, PrunePartitionConfig};
use reldep::rdg::build_rdg;
use reldep::relation_encoder::RelationForward;

use common::oracle::brute_rank;
use common::random_instance;

fn small_dims(heads: usize, layers: usize, act: Activation) -> Dims {
    Dims {
        dim: 3,
        heads,
        relation_layers: layers,
        entity_layers: layers,
        relation_act: act,
        entity_act: act,
    }
}

fn act_strategy() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Identity),
        Just(Activation::Relu),
        Just(Activation::Tanh)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), heads in 1usize..4, layers in 1usize..4, act in act_strategy()) {
        let params = ModelParams::<f32>::init(small_dims(heads, layers, act), &mut ChaCha8Rng::seed_from_u64(seed));
        let ckpt = Checkpoint { epoch: seed % 100, best_val_mrr: 0.25, ..Checkpoint::new(params) };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ckpt);
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        let cut = (seed as usize) % bytes.len();
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }

    #[test]
    fn filtered_rank_matches_counting(
        scores in prop::collection::btree_map(0usize..30, -3i32..3, 0..30),
        filter in prop::collection::btree_set(0usize..30, 0..10),
        answer in 0usize..30,
    ) {
        let scores: BTreeMap<usize, f64> = scores.into_iter().map(|(e, s)| (e, s as f64)).collect();
        let reached: Vec<(usize, f64)> = scores.iter().map(|(&e, &s)| (e, s)).collect();
        let f: Vec<usize> = filter.iter().copied().collect();
        let rank = filtered_rank(answer, &reached, &f, 30).unwrap();
        let kept = (0..30).filter(|e| *e == answer || !filter.contains(e)).count() as f64;
        prop_assert!(rank >= 1.0 && rank <= kept);
        prop_assert_eq!(rank, brute_rank(answer, &scores, &filter, 30));
    }

    #[test]
    fn metrics_are_monotone(ranks in prop::collection::vec(1u32..50, 1..20), i in any::<prop::sample::Index>()) {
        let ranks: Vec<f64> = ranks.into_iter().map(f64::from).collect();
        let m = compute_metrics(&ranks);
        prop_assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        let mut worse = ranks.clone();
        worse[i.index(ranks.len())] += 1.0;
        let w = compute_metrics(&worse);
        prop_assert!(w.mrr < m.mrr);
        prop_assert!(w.hits10 <= m.hits10);
    }

    #[test]
    fn loss_derivative_signs(pos in -20.0f64..20.0, negs in prop::collection::vec(-20.0f64..20.0, 1..6)) {
        let (l, dp, dn) = loss_with_grad(pos, &negs);
        prop_assert!((l - loss(pos, &negs)).abs() < 1e-12);
        prop_assert!(dp < 0.0);
        prop_assert!(dn.iter().all(|g| *g > 0.0));
        prop_assert!(loss(pos + 0.5, &negs) < l);
        let mut up = negs.clone();
        up[0] += 0.5;
        prop_assert!(loss(pos, &up) > l);
    }

    #[test]
    fn attention_is_normalized(seed in 0u64..500, heads in 1usize..4, layers in 1usize..4, act in act_strategy()) {
        let kg = random_instance(seed, 8, 4, 18);
        let rdg = build_rdg(&kg);
        let params = ModelParams::<f64>::init(small_dims(heads, layers, act), &mut ChaCha8Rng::seed_from_u64(seed));
        let r_q = (seed as usize) % kg.relation_count();
        let fwd = RelationForward::run(&rdg, r_q, &params).unwrap();
        for l in 0..layers {
            for h in 0..heads {
                for v in 0..rdg.relation_count() {
                    let a = fwd.attention(l, h).of(&rdg, v);
                    prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    prop_assert!(a.iter().all(|x| *x >= 0.0));
                }
            }
        }
    }

    #[test]
    fn prune_partition_invariants(seed in any::<u64>(), n in 20usize..150, rho_pct in 20u32..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triples = reldep::synthetic::random_facts(25, 5, n, &mut rng);
        let cfg = PrunePartitionConfig { rho: rho_pct as f64 / 100.0, seed, ..PrunePartitionConfig::default() };
        let out = prune_partition(&triples, &cfg).unwrap();
        let again = prune_partition(&triples, &cfg).unwrap();
        prop_assert_eq!(&out.train, &again.train);
        prop_assert_eq!(&out.valid, &again.valid);
        prop_assert_eq!(&out.test, &again.test);

        let mut per_rel: BTreeMap<usize, BTreeSet<Triple>> = BTreeMap::new();
        for t in &triples {
            per_rel.entry(t.relation).or_default().insert(*t);
        }
        let kept: usize = per_rel.values().map(|s| retained_quota(cfg.rho, s.len())).sum();
        prop_assert_eq!(out.train.len() + out.valid.len() + out.test.len(), kept);
        for r in &out.metadata.retention {
            prop_assert_eq!(r.kept, retained_quota(cfg.rho, r.total));
        }
        let a: BTreeSet<Triple> = out.train.iter().copied().collect();
        let b: BTreeSet<Triple> = out.valid.iter().copied().collect();
        let c: BTreeSet<Triple> = out.test.iter().copied().collect();
        prop_assert_eq!(a.len() + b.len() + c.len(), kept);
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }
}
