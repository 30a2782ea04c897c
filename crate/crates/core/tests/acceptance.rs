//! Acceptance suite. Prints one line per criterion and exits non-zero when a
//! criterion whose inputs are available fails.
//!
//! Criteria 7 and 8 read the WN18RR inductive splits from
//! `$RELDEP_DATA_DIR/WN18RR_v{1..4}{,_ind}/{train,valid,test}.txt`
//! (default `<workspace>/data`).

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reldep::checkpoint::Checkpoint;
use reldep::entity_encoder::propagate;
use reldep::eval::{edge_importance, evaluate, perturbed_evaluate, Directions, EvalReport, PerturbMode};
use reldep::kg::{load_split_files, DatasetSplits, Split, Triple};
use reldep::objective::{derived_rng, loss, stream};
use reldep::params::{tensor_specs, Activation, Dims, ModelParams};
use reldep::preprocess::{prune_partition, retained_quota, PrunePartitionConfig};
use reldep::rdg::{build_rdg, build_ultra_metagraph, relation_adjacency};
use reldep::relation_encoder::RelationForward;
use reldep::synthetic::{composition_splits, CompositionConfig};
use reldep::trainer::{finetune, train, TrainConfig};

use common::oracle::{bfs_within, brute_adjacency, check_order, entity_ball};
use common::{all_fact_queries, finite_difference_check, random_instance};

enum Status {
    Pass,
    Fail,
    /// Required inputs are absent; reported as a failure without gating.
    Unavailable,
    Info,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn random_kg(rng: &mut ChaCha8Rng, seed: u64, max_e: usize, max_r: usize, max_t: usize) -> reldep::kg::KnowledgeGraph {
    let n_e = rng.gen_range(2..=max_e);
    let n_r = rng.gen_range(1..=max_r);
    let cap = (n_e * (n_e - 1) * n_r).min(max_t);
    random_instance(seed, n_e, n_r, rng.gen_range(1..=cap))
}

fn rdg_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = Vec::new();
    for seed in 0..200u64 {
        // 3 base relations double to 6 with inverses
        let kg = random_kg(&mut rng, seed, 15, 3, 20);
        let brute = brute_adjacency(&kg);
        let ours: std::collections::BTreeMap<_, _> = relation_adjacency(&kg)
            .iter()
            .map(|p| ((p.from, p.to), p.support))
            .collect();
        let rdg = build_rdg(&kg);
        let pairs: BTreeSet<(usize, usize)> = brute.keys().copied().collect();
        let expect: BTreeSet<(usize, usize)> = pairs
            .iter()
            .copied()
            .filter(|&(u, v)| u != v && rdg.tau().rank(u) < rdg.tau().rank(v))
            .collect();
        let retained: BTreeSet<(usize, usize)> = rdg.retained_edges().collect();
        let order = check_order(kg.relation_count(), &pairs, kg.relation_freq(), rdg.tau().order());
        if ours != brute || retained != expect || order.is_err() {
            bad.push(seed);
        }
    }
    let t = start.elapsed();
    verdict(
        bad.is_empty() && t < Duration::from_secs(5),
        format!(
            "200 graphs, {} mismatches, {:.2}s (limit 5s)",
            bad.len(),
            t.as_secs_f64()
        ),
    )
}

fn random_dims(rng: &mut ChaCha8Rng, act: Activation) -> Dims {
    Dims {
        dim: rng.gen_range(2..6),
        heads: rng.gen_range(1..5),
        relation_layers: rng.gen_range(1..4),
        entity_layers: rng.gen_range(1..4),
        relation_act: act,
        entity_act: act,
    }
}

const ACTS: [Activation; 3] = [Activation::Identity, Activation::Relu, Activation::Tanh];

fn attention_normalization() -> Outcome {
    let mut worst = 0.0f64;
    let mut distributions = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let kg = random_kg(&mut rng, seed, 12, 4, 30);
        let rdg = build_rdg(&kg);
        let dims = random_dims(&mut rng, ACTS[seed as usize % 3]);
        let params = ModelParams::<f64>::init(dims, &mut rng);
        let r_q = rng.gen_range(0..kg.relation_count());
        let fwd = RelationForward::run(&rdg, r_q, &params).unwrap();
        for l in 0..dims.relation_layers {
            for h in 0..dims.heads {
                for v in 0..rdg.relation_count() {
                    let s: f64 = fwd.attention(l, h).of(&rdg, v).iter().sum();
                    worst = worst.max((s - 1.0).abs());
                    distributions += 1;
                }
            }
        }
    }
    verdict(
        worst <= 1e-6,
        format!("{distributions} distributions, max |sum - 1| = {worst:.2e}"),
    )
}

fn locality() -> Outcome {
    let mut bad = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let kg = random_kg(&mut rng, seed, 12, 4, 25);
        let rdg = build_rdg(&kg);
        // identity and tanh have no dead zone, so reachable rows are nonzero
        let dims = random_dims(&mut rng, ACTS[(seed as usize % 2) * 2]);
        let params = ModelParams::<f64>::init(dims, &mut rng);
        let r_q = rng.gen_range(0..kg.relation_count());
        let edges: Vec<(usize, usize)> = rdg.retained_edges().collect();
        let reach = bfs_within(kg.relation_count(), &edges, r_q, dims.relation_layers);
        let fwd = RelationForward::run(&rdg, r_q, &params).unwrap();
        for (v, &r) in reach.iter().enumerate() {
            let nonzero = fwd.embeddings().row(v).iter().any(|x| *x != 0.0);
            if nonzero != r {
                bad += 1;
            }
        }
        let e_q = rng.gen_range(0..kg.entity_count());
        let prop = propagate(&kg, &rdg, &params, e_q, r_q).unwrap();
        for (l, visited) in prop.visited.iter().enumerate() {
            let set: BTreeSet<usize> = visited.iter().copied().collect();
            if set != entity_ball(&kg, e_q, l, &[]) {
                bad += 1;
            }
        }
        let ball = entity_ball(&kg, e_q, dims.entity_layers, &[]);
        for (e, state) in &prop.states {
            if !ball.contains(e) && state.iter().any(|x| *x != 0.0) {
                bad += 1;
            }
        }
    }
    verdict(
        bad == 0,
        format!("100 instances, {bad} disagreements with breadth-first search"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut kinked = 0;
    let mut coords = 0;
    for seed in 0..20u64 {
        let kg = random_instance(seed, 5, 3, 9);
        let dims = Dims {
            dim: 3,
            heads: 2,
            relation_layers: 2,
            entity_layers: 2,
            relation_act: Activation::Relu,
            entity_act: Activation::Relu,
        };
        let params = ModelParams::<f64>::init(dims, &mut ChaCha8Rng::seed_from_u64(seed + 1000));
        let cfg = reldep::objective::ObjectiveConfig {
            negatives: 3,
            seed,
            ..Default::default()
        };
        let report = finite_difference_check(&kg, &params, &all_fact_queries(&kg), &cfg, 1e-4);
        assert_eq!(report.worst.len(), tensor_specs(&dims).len());
        for (_, e) in &report.worst {
            worst = worst.max(*e);
        }
        kinked += report.kinked;
        coords += report.coordinates;
    }
    let t = start.elapsed();
    verdict(
        worst < 1e-4 && t < Duration::from_secs(30),
        format!(
            "20 seeds, max relative error {worst:.2e}, {kinked}/{coords} coordinates at a kink, {:.1}s (limit 30s)",
            t.as_secs_f64()
        ),
    )
}

fn loss_values() -> Outcome {
    let l = loss(0.0f64, &[0.0, 0.0]);
    let closed = (l - 3.0 * std::f64::consts::LN_2).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut sign_errors = 0;
    for _ in 0..1000 {
        let pos: f64 = rng.gen_range(-10.0..10.0);
        let negs: Vec<f64> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let dpos = (loss(pos + h, &negs) - loss(pos - h, &negs)) / (2.0 * h);
        if dpos >= 0.0 {
            sign_errors += 1;
        }
        for i in 0..negs.len() {
            let (mut up, mut down) = (negs.clone(), negs.clone());
            up[i] += h;
            down[i] -= h;
            if (loss(pos, &up) - loss(pos, &down)) / (2.0 * h) <= 0.0 {
                sign_errors += 1;
            }
        }
    }
    verdict(
        closed <= 1e-9 && sign_errors == 0,
        format!("|L(0;0,0) - 3 ln 2| = {closed:.1e}, {sign_errors} sign violations in 1000 draws"),
    )
}

fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dims: Dims {
            dim: 32,
            heads: 8,
            relation_layers: 2,
            entity_layers: 3,
            relation_act: Activation::Relu,
            entity_act: Activation::Relu,
        },
        learning_rate: 0.005,
        negatives: 32,
        batch_size: 32,
        max_epochs: 200,
        patience: 10,
        seed,
        ..TrainConfig::default()
    }
}

fn synthetic(seed: u64, prefix: &str) -> DatasetSplits {
    composition_splits(&CompositionConfig {
        entities: 50,
        seed,
        prefix: prefix.into(),
        ..CompositionConfig::default()
    })
}

fn test_report<T: reldep::tensor::Real>(params: &ModelParams<T>, data: &DatasetSplits) -> EvalReport {
    evaluate(
        params,
        &data.train,
        data.queries(Split::Test),
        &data.known_true,
        Directions::Both,
    )
    .unwrap()
}

fn compositional_learning() -> Outcome {
    let start = Instant::now();
    let data = synthetic(0, "");
    let out = train(&data, &synthetic_config(0)).unwrap();
    let mrr = test_report(&out.best.params, &data).overall.mrr;
    let t = start.elapsed();
    verdict(
        mrr >= 0.9 && out.log.len() <= 200 && t < Duration::from_secs(120),
        format!(
            "test MRR {mrr:.3} (need 0.9), {} epochs, best epoch {}, {:.1}s (limit 120s)",
            out.log.len(),
            out.best.epoch,
            t.as_secs_f64()
        ),
    )
}

fn data_dir() -> PathBuf {
    std::env::var_os("RELDEP_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn load_dir(dir: &Path) -> Option<DatasetSplits> {
    let train = dir.join("train.txt");
    if !train.exists() {
        return None;
    }
    let opt = |n: &str| Some(dir.join(n)).filter(|p| p.exists());
    load_split_files(&train, opt("valid.txt").as_deref(), opt("test.txt").as_deref(), true).ok()
}

fn unavailable(what: &str) -> Outcome {
    Outcome {
        status: Status::Unavailable,
        detail: format!("data unavailable: {what} not found under {}", data_dir().display()),
    }
}

fn wn_v1_reproduction() -> Outcome {
    let root = data_dir();
    let (Some(train_data), Some(ind)) = (load_dir(&root.join("WN18RR_v1")), load_dir(&root.join("WN18RR_v1_ind")))
    else {
        return unavailable("WN18RR_v1 and WN18RR_v1_ind");
    };
    let start = Instant::now();
    let cfg = reldep::config::RunConfig::parse(&reldep::config::preset_text("wn_v1").unwrap()).unwrap();
    let out = train(&train_data, &cfg.train).unwrap();
    let mrr = test_report(&out.best.params, &ind).overall.mrr;
    let t = start.elapsed();
    verdict(
        mrr >= 0.65 && t <= Duration::from_secs(3600),
        format!("test MRR {mrr:.3} (need 0.65), {:.0}s (limit 3600s)", t.as_secs_f64()),
    )
}

fn edge_counts() -> Outcome {
    let root = data_dir();
    let mut rows = Vec::new();
    let mut ordered = true;
    for v in 1..=4 {
        let name = format!("WN18RR_v{v}");
        let Some(data) = load_dir(&root.join(&name)) else {
            return unavailable(&name);
        };
        let rdg = build_rdg(&data.train).retained_count();
        let ultra = build_ultra_metagraph(&data.train).0.edges;
        ordered &= rdg < ultra;
        rows.push(format!("v{v} rdg {rdg} ultra {ultra}"));
    }
    verdict(
        ordered,
        format!(
            "{} (inverse relations included; rdg counts directed order-respecting edges, ultra typed directed pairs)",
            rows.join(", ")
        ),
    )
}

fn perturbation_ordering() -> Outcome {
    let (mut top, mut random, mut bottom) = (0.0, 0.0, 0.0);
    let seeds = 10u64;
    for seed in 0..seeds {
        let data = synthetic(seed, "");
        let cfg = TrainConfig {
            max_epochs: 30,
            ..synthetic_config(seed)
        };
        let params = train(&data, &cfg).unwrap().best.params;
        let queries = data.queries(Split::Test);
        let base = test_report(&params, &data).overall.mrr;
        let mut rng = derived_rng(seed, stream::PERTURB, 0, 0);
        let table = edge_importance(&params, &data.train, queries, 64, &mut rng).unwrap();
        let mut drop = |mode| {
            let (r, _) = perturbed_evaluate(
                &params,
                &data.train,
                queries,
                &data.known_true,
                &table,
                mode,
                5,
                &mut rng,
            )
            .unwrap();
            base - r.overall.mrr
        };
        top += drop(PerturbMode::Top);
        random += drop(PerturbMode::Random);
        bottom += drop(PerturbMode::Bottom);
    }
    let n = seeds as f64;
    let (top, random, bottom) = (top / n, random / n, bottom / n);
    verdict(
        top >= random && random >= bottom,
        format!("mean MRR drop over {seeds} seeds: top-5 {top:.3}, random-5 {random:.3}, bottom-5 {bottom:.3}"),
    )
}

fn finetune_transfer() -> Outcome {
    let source = synthetic(100, "src_");
    let target = synthetic(101, "tgt_");
    let budget = TrainConfig {
        max_epochs: 20,
        patience: 20,
        ..synthetic_config(7)
    };
    let trained = train(
        &source,
        &TrainConfig {
            max_epochs: 40,
            ..budget.clone()
        },
    )
    .unwrap()
    .best;
    let pre = Checkpoint::from_bytes(&trained.to_bytes()).unwrap();
    let tuned = finetune(&pre, &target, &budget, &mut |_| {}).unwrap().best;
    let specs = tensor_specs(&pre.dims());
    let identical = specs
        .iter()
        .zip(pre.params.tensors().iter().zip(tuned.params.tensors()))
        .filter(|(s, _)| !s.final_layer)
        .all(|(_, (a, b))| a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits())));
    let scratch = train(&target, &budget).unwrap().best;
    let ft = test_report(&tuned.params, &target).overall.mrr;
    let sc = test_report(&scratch.params, &target).overall.mrr;
    verdict(
        identical && ft >= sc,
        format!("frozen tensors identical: {identical}; 20-epoch test MRR finetune {ft:.3} vs scratch {sc:.3}"),
    )
}

fn preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let triples: Vec<Triple> = reldep::synthetic::random_facts(60, 6, 200, &mut rng);
    let cfg = PrunePartitionConfig {
        rho: 0.5,
        seed: 11,
        ..PrunePartitionConfig::default()
    };
    let a = prune_partition(&triples, &cfg).unwrap();
    let b = prune_partition(&triples, &cfg).unwrap();
    let quotas = a
        .metadata
        .retention
        .iter()
        .all(|r| r.kept == retained_quota(cfg.rho, r.total));
    let kept = a.train.len() + a.valid.len() + a.test.len();
    let within = |n: usize, frac: f64| (n as f64 - frac * kept as f64).abs() <= 1.0;
    let sizes =
        within(a.train.len(), cfg.alpha.0) && within(a.valid.len(), cfg.alpha.1) && within(a.test.len(), cfg.alpha.2);
    let sets: Vec<BTreeSet<Triple>> = [&a.train, &a.valid, &a.test]
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    let disjoint = sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]);
    let rerun = a.train == b.train
        && a.valid == b.valid
        && a.test == b.test
        && serde_json::to_string(&a.metadata).unwrap() == serde_json::to_string(&b.metadata).unwrap();
    verdict(
        quotas && sizes && disjoint && rerun,
        format!(
            "kept {kept} of {}, split {}/{}/{}, quotas {quotas}, sizes {sizes}, disjoint {disjoint}, identical rerun {rerun}",
            triples.len(),
            a.train.len(),
            a.valid.len(),
            a.test.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("rdg oracle equivalence", rdg_oracle),
        ("attention normalization", attention_normalization),
        ("locality invariants", locality),
        ("gradient correctness", gradients),
        ("loss values", loss_values),
        ("synthetic compositional learning", compositional_learning),
        ("WN-V1 desk-scale reproduction", wn_v1_reproduction),
        ("edge-count ordering", edge_counts),
        ("perturbation ordering", perturbation_ordering),
        ("fine-tune freeze soundness", finetune_transfer),
        ("preprocessing determinism", preprocessing),
        ("large-scale results", || Outcome {
            status: Status::Info,
            detail: "not reproducible at desk scale; transfer rests on criteria 6, 9 and 10".into(),
        }),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let o = run();
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Unavailable => "FAIL",
            Status::Info => "INFO",
        };
        println!("criterion {:>2} {tag} {name}: {}", i + 1, o.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
