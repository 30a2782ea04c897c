use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reldep::checkpoint::{write_atomic, Checkpoint};
use reldep::config::{preset_text, RunConfig, ENV_PRESET_DIR};
use reldep::eval::{
    edge_importance, evaluate, perturb_csv_row, perturbed_evaluate, predict, predictions_tsv, Directions, PerturbMode,
    PERTURB_HEADER,
};
use reldep::kg::{load_split_files, parse_triples, write_triples, DatasetSplits, VocabMap, VocabMode};
use reldep::objective::{derived_rng, stream};
use reldep::preprocess::{canonicalize, prune_partition, validate_inductive_split, NamedTriple, PrunePartitionConfig};
use reldep::rdg::{build_ingram_graph, build_rdg, build_ultra_metagraph, rdg_stats, MetaMethod, STATS_HEADER};
use reldep::trainer::{finetune, log_csv, pretrain_sequence, train_from, EpochLog, FreezePolicy};
use reldep::{DataError, Error};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (checkpoint format GORC1 v1, ",
    env!("CARGO_PKG_NAME"),
    ")"
);

#[derive(Parser, Debug)]
#[command(name = "reldep", version = VERSION, about = "Relation-dependency graph link prediction")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the relation dependency graph and dump its edges and order.
    BuildRdg {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_inverses: bool,
    },
    /// Edge counts of the dependency graph and of co-occurrence baselines.
    Stats {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "rdg,ingram,ultra")]
        methods: String,
        /// Dataset label in the CSV; defaults to the parent directory name.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        no_inverses: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model from scratch
    Train(TrainArgs),
    /// Train on several graphs in turn, carrying parameters forward.
    Pretrain {
        /// One config file per stage, with a `[data]` section.
        #[arg(long = "stage", required = true)]
        stages: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training a checkpoint with only the final layer unfrozen.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: TrainArgs,
    },
    /// Filtered ranking metrics of a checkpoint on a graph
    Eval(EvalArgs),
    /// Evaluation with high-, low- or random-importance dependency edges removed.
    Perturb {
        #[command(flatten)]
        data: GraphArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "top,random,bottom")]
        modes: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Query relations sampled for the importance table.
        #[arg(long, default_value_t = 64)]
        sample: usize,
        #[arg(long)]
        importance_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-k tail candidates for `head<TAB>relation` queries.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long)]
        no_inverses: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset construction: canonicalize, prune and partition, validate splits
    #[command(subcommand)]
    Preprocess(Preprocess),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name, looked up in the preset directory.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Inference graph; defaults to `train.txt` next to the test file.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    no_inverses: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: GraphArgs,
    #[arg(long, default_value = "both")]
    directions: String,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "table")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Preprocess {
    /// Merge interaction logs into the knowledge graph and number entities.
    Canonicalize {
        #[arg(long)]
        relations: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relation-balanced pruning and inductive train/valid/test split.
    PrunePartition {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.075)]
        rho: f64,
        #[arg(long, default_value_t = 0.7)]
        theta: f64,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        alpha: String,
        #[arg(long, default_value_t = 1.0)]
        weight: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report vocabulary overlap and the inductive class of a split.
    Validate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::Numeric(_) => Failure::Numeric(e.to_string()),
            Error::Data(_) | Error::Checkpoint(_) => Failure::Data(e.to_string()),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<reldep::CheckpointError> for Failure {
    fn from(e: reldep::CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::BuildRdg {
            train,
            out,
            no_inverses,
        } => {
            eprintln!(
                "# build-rdg train={} out={} inverses={}",
                train.display(),
                out.display(),
                !no_inverses
            );
            let splits = load_split_files(&train, None, None, !no_inverses)?;
            let rdg = build_rdg(&splits.train);
            fs::create_dir_all(&out)?;
            let mut edges = Vec::new();
            rdg.write_edges(&mut edges, Some(&splits.vocab))?;
            write_atomic(&out.join("rdg_edges.tsv"), &edges)?;
            let mut tau = Vec::new();
            rdg.write_tau(&mut tau, Some(&splits.vocab))?;
            write_atomic(&out.join("rdg_tau.tsv"), &tau)?;
            eprintln!(
                "{} relations, {} retained edges",
                rdg.relation_count(),
                rdg.retained_count()
            );
            Ok(())
        }
        Command::Stats {
            train,
            methods,
            dataset,
            no_inverses,
            out,
        } => {
            let methods = parse_list(&methods, MetaMethod::parse, "method")?;
            let dataset = dataset.unwrap_or_else(|| dataset_label(&train));
            eprintln!(
                "# stats train={} dataset={dataset} methods={} inverses={}",
                train.display(),
                methods.iter().map(|m| m.tag()).collect::<Vec<_>>().join(","),
                !no_inverses
            );
            let splits = load_split_files(&train, None, None, !no_inverses)?;
            let mut csv = format!("{STATS_HEADER}\n");
            for m in methods {
                let stats = match m {
                    MetaMethod::Rdg => rdg_stats(&build_rdg(&splits.train)),
                    MetaMethod::Ingram => build_ingram_graph(&splits.train).0,
                    MetaMethod::Ultra => build_ultra_metagraph(&splits.train).0,
                };
                csv.push_str(&stats.csv_row(&dataset));
                csv.push('\n');
            }
            emit(out.as_deref(), &csv)
        }
        Command::Train(args) => {
            let cfg = resolve_run(&args, None)?;
            let splits = load_run_data(&cfg)?;
            let out = train_from(&splits, &cfg.train, None, &mut progress)?;
            finish_training(&args, &cfg, &splits, &out.best, &out.log)
        }
        Command::Finetune { checkpoint, run } => {
            let cfg = resolve_run(&run, Some(FreezePolicy::FinalLayer))?;
            let splits = load_run_data(&cfg)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let out = finetune(&ckpt, &splits, &cfg.train, &mut progress)?;
            finish_training(&run, &cfg, &splits, &out.best, &out.log)
        }
        Command::Pretrain { stages, seed, out } => {
            let mut loaded = Vec::new();
            for (k, path) in stages.iter().enumerate() {
                let mut cfg = RunConfig::load(path)?;
                if let Some(s) = seed {
                    cfg.train.seed = s;
                }
                eprintln!("# stage {k}: {}\n{}", path.display(), cfg.render());
                loaded.push((load_run_data(&cfg)?, cfg.train));
            }
            let stages: Vec<(&DatasetSplits, _)> = loaded.iter().map(|(s, c)| (s, c.clone())).collect();
            let mut log = String::from("stage,epoch,train_loss,val_mrr,val_h1,val_h10,lr,skipped_queries\n");
            let (best, _) = pretrain_sequence(&stages, &mut |k, e| {
                progress(e);
                log.push_str(&format!("{k},{}\n", e.csv_row()));
            })?;
            fs::create_dir_all(&out)?;
            best.save(&out.join("model.gorc"))?;
            write_atomic(&out.join("pretrain_log.csv"), log.as_bytes())?;
            Ok(())
        }
        Command::Eval(args) => {
            let directions = Directions::parse(&args.directions)
                .ok_or_else(|| Failure::Usage(format!("unknown directions `{}`", args.directions)))?;
            let (ckpt, splits) = load_eval(&args.checkpoint, &args.data)?;
            eprintln!(
                "# eval checkpoint={} dims={} split={} directions={}",
                args.checkpoint.display(),
                ckpt.dims(),
                args.split,
                args.directions
            );
            let queries = match args.split.as_str() {
                "test" => &splits.test,
                "valid" => &splits.valid,
                s => return Err(Failure::Usage(format!("unknown split `{s}`"))),
            };
            let report = evaluate(&ckpt.params, &splits.train, queries, &splits.known_true, directions)?;
            let text = match args.format.as_str() {
                "table" => report.to_table(),
                "csv" => report.to_csv(),
                "json" => serde_json::to_string(&report).expect("report serializes") + "\n",
                f => return Err(Failure::Usage(format!("unknown format `{f}`"))),
            };
            emit(args.out.as_deref(), &text)
        }
        Command::Perturb {
            data,
            checkpoint,
            modes,
            k,
            seeds,
            sample,
            importance_out,
            out,
        } => {
            let modes = parse_list(&modes, PerturbMode::parse, "mode")?;
            let seeds: Vec<u64> = parse_list(&seeds, |s| s.parse().ok(), "seed")?;
            let (ckpt, splits) = load_eval(&checkpoint, &data)?;
            eprintln!(
                "# perturb checkpoint={} k={k} sample={sample} seeds={seeds:?}",
                checkpoint.display()
            );
            let mut csv = format!("{PERTURB_HEADER}\n");
            for &seed in &seeds {
                let mut rng = derived_rng(seed, stream::PERTURB, 0, 0);
                let table = edge_importance(&ckpt.params, &splits.train, &splits.test, sample, &mut rng)?;
                if let Some(p) = &importance_out {
                    write_atomic(p, table.to_csv(Some(&splits.vocab)).as_bytes())?;
                }
                for &mode in &modes {
                    let mut rng = derived_rng(seed, stream::PERTURB, 1, mode as u64);
                    let (report, _) = perturbed_evaluate(
                        &ckpt.params,
                        &splits.train,
                        &splits.test,
                        &splits.known_true,
                        &table,
                        mode,
                        k,
                        &mut rng,
                    )?;
                    csv.push_str(&perturb_csv_row(mode, k, seed, &report));
                    csv.push('\n');
                }
            }
            emit(out.as_deref(), &csv)
        }
        Command::Predict {
            checkpoint,
            train,
            queries,
            top_k,
            no_inverses,
            out,
        } => {
            eprintln!(
                "# predict checkpoint={} train={} queries={} top_k={top_k}",
                checkpoint.display(),
                train.display(),
                queries.display()
            );
            let ckpt = Checkpoint::load(&checkpoint)?;
            let splits = load_split_files(&train, None, None, !no_inverses)?;
            let posed = read_queries(&queries, &splits.vocab)?;
            let preds = predict(&ckpt.params, &splits.train, &posed, top_k)?;
            emit(out.as_deref(), &predictions_tsv(&preds, Some(&splits.vocab)))
        }
        Command::Preprocess(p) => run_preprocess(p),
    }
}

fn progress(e: &EpochLog) {
    eprintln!("{}", e.csv_row());
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Option<T>, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|x| f(x.trim()).ok_or_else(|| Failure::Usage(format!("unknown {what} `{x}`"))))
        .collect()
}

fn dataset_label(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn preset_dir() -> PathBuf {
    std::env::var_os(ENV_PRESET_DIR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("presets"))
}

/// Preset, then config file, then `--set`, then dedicated flags.
fn resolve_run(args: &TrainArgs, freeze: Option<FreezePolicy>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(name) = &args.preset {
        let file = preset_dir().join(format!("{name}.cfg"));
        let text = match fs::read_to_string(&file) {
            Ok(t) => t,
            Err(_) => preset_text(name).ok_or_else(|| Failure::Usage(format!("unknown preset `{name}`")))?,
        };
        cfg.merge(&text)?;
    }
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        cfg.merge(&text)?;
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("override `{o}` is not `section.key=value`")))?;
        cfg.set(k.trim(), v.trim()).map_err(Failure::Usage)?;
    }
    let t = &mut cfg.train;
    if let Some(s) = args.seed {
        t.seed = s;
    }
    if let Some(e) = args.epochs {
        t.max_epochs = e;
    }
    if let Some(lr) = args.lr {
        t.learning_rate = lr;
    }
    for (slot, flag) in [
        (&mut cfg.data.train, &args.train),
        (&mut cfg.data.valid, &args.valid),
        (&mut cfg.data.test, &args.test),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(f) = freeze {
        cfg.train.freeze = f;
    }
    cfg.train.validate()?;
    eprint!("# effective config\n{}", cfg.render());
    Ok(cfg)
}

fn load_run_data(cfg: &RunConfig) -> Result<DatasetSplits, Failure> {
    let train = cfg
        .data
        .train
        .as_deref()
        .ok_or_else(|| Failure::Usage("no training file given (--train or [data] train)".into()))?;
    Ok(load_split_files(
        train,
        cfg.data.valid.as_deref(),
        cfg.data.test.as_deref(),
        !cfg.data.no_inverses,
    )?)
}

fn finish_training(
    args: &TrainArgs,
    cfg: &RunConfig,
    splits: &DatasetSplits,
    best: &Checkpoint,
    log: &[EpochLog],
) -> Outcome {
    fs::create_dir_all(&args.out)?;
    best.save(&args.out.join("model.gorc"))?;
    write_atomic(&args.out.join("train_log.csv"), log_csv(log).as_bytes())?;
    write_atomic(&args.out.join("effective.cfg"), cfg.render().as_bytes())?;
    if !splits.test.is_empty() {
        let report = evaluate(
            &best.params,
            &splits.train,
            &splits.test,
            &splits.known_true,
            Directions::Both,
        )?;
        write_atomic(&args.out.join("test_report.csv"), report.to_csv().as_bytes())?;
        eprint!("{}", report.to_table());
    }
    Ok(())
}

fn load_eval(checkpoint: &Path, data: &GraphArgs) -> Result<(Checkpoint, DatasetSplits), Failure> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let train = match &data.train {
        Some(t) => t.clone(),
        None => {
            let sibling = data.test.with_file_name("train.txt");
            if !sibling.exists() {
                return Err(Failure::Data(format!(
                    "no inference graph: pass --train or place train.txt next to {}",
                    data.test.display()
                )));
            }
            sibling
        }
    };
    let splits = load_split_files(&train, data.valid.as_deref(), Some(&data.test), !data.no_inverses)?;
    Ok((ckpt, splits))
}

fn read_queries(path: &Path, vocab: &VocabMap) -> Result<Vec<(usize, usize)>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(Failure::Data(format!(
                "{}: line {}: expected head<TAB>relation",
                path.display(),
                i + 1
            )));
        }
        let unknown = |kind: &str, name: &str| Failure::Data(format!("line {}: unknown {kind} `{name}`", i + 1));
        let h = vocab
            .entities
            .get(fields[0])
            .ok_or_else(|| unknown("entity", fields[0]))?;
        let r = vocab
            .resolve_relation(fields[1])
            .ok_or_else(|| unknown("relation", fields[1]))?;
        out.push((h, r));
    }
    Ok(out)
}

fn read_named(path: &Path) -> Result<Vec<NamedTriple>, Failure> {
    let mut vocab = VocabMap::new();
    let file = fs::File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let triples = parse_triples(BufReader::new(file), &mut vocab, VocabMode::Extend)?;
    Ok(triples
        .iter()
        .map(|t| {
            (
                vocab.entity_label(t.head).to_string(),
                vocab.relations.name(t.relation).unwrap_or("?").to_string(),
                vocab.entity_label(t.tail).to_string(),
            )
        })
        .collect())
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

fn run_preprocess(p: Preprocess) -> Outcome {
    match p {
        Preprocess::Canonicalize {
            relations,
            train,
            kg,
            test,
            out,
        } => {
            eprintln!(
                "# canonicalize relations={} train={} kg={} test={} out={}",
                relations.display(),
                train.display(),
                kg.display(),
                test.display(),
                out.display()
            );
            let mut rels = Vec::new();
            for (i, line) in read_lines(&relations)?.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = line
                    .split_once(['\t', ' '])
                    .and_then(|(n, id)| id.trim().parse::<usize>().ok().map(|id| (n.to_string(), id)));
                rels.push(parsed.ok_or_else(|| {
                    Failure::Data(format!("{}: line {}: expected name<TAB>id", relations.display(), i + 1))
                })?);
            }
            let result = canonicalize(&rels, &read_lines(&train)?, &read_named(&kg)?, &read_lines(&test)?)?;
            fs::create_dir_all(&out)?;
            let name_of: std::collections::HashMap<usize, &str> =
                result.relations.iter().map(|(n, id)| (*id, n.as_str())).collect();
            let mut kg_tsv = String::new();
            for (h, r, t) in &result.triples {
                kg_tsv.push_str(&format!("{h}\t{}\t{t}\n", name_of[r]));
            }
            let rel_tsv: String = result.relations.iter().map(|(n, id)| format!("{n}\t{id}\n")).collect();
            let ent_tsv: String = result.entity_map.iter().map(|(n, id)| format!("{n}\t{id}\n")).collect();
            let meta = serde_json::json!({
                "interaction_relation": result.interaction_id,
                "relations": result.relations.len(),
                "entities": result.entity_map.len(),
                "triples": result.triples.len(),
                "skipped_lines": result.skipped_lines,
            });
            write_atomic(&out.join("kg.tsv"), kg_tsv.as_bytes())?;
            write_atomic(&out.join("relations.tsv"), rel_tsv.as_bytes())?;
            write_atomic(&out.join("entities.tsv"), ent_tsv.as_bytes())?;
            write_atomic(&out.join("metadata.jsonl"), format!("{meta}\n").as_bytes())?;
            Ok(())
        }
        Preprocess::PrunePartition {
            input,
            rho,
            theta,
            alpha,
            weight,
            seed,
            out,
        } => {
            let a: Vec<f64> = parse_list(&alpha, |s| s.parse().ok(), "ratio")?;
            let [a1, a2, a3] = a[..] else {
                return Err(Failure::Usage(format!("--alpha needs three ratios, got `{alpha}`")));
            };
            let cfg = PrunePartitionConfig {
                rho,
                theta,
                alpha: (a1, a2, a3),
                weight,
                seed,
            };
            eprintln!(
                "# prune-partition input={} out={} {cfg:?}",
                input.display(),
                out.display()
            );
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let mut vocab = VocabMap::new();
            let file = fs::File::open(&input).map_err(|e| Failure::Data(format!("{}: {e}", input.display())))?;
            let triples = parse_triples(BufReader::new(file), &mut vocab, VocabMode::Extend)?;
            let result = prune_partition(&triples, &cfg)?;
            fs::create_dir_all(&out)?;
            for (name, split) in [
                ("train.txt", &result.train),
                ("valid.txt", &result.valid),
                ("test.txt", &result.test),
            ] {
                let mut buf = Vec::new();
                write_triples(&mut buf, split, &vocab)?;
                write_atomic(&out.join(name), &buf)?;
            }
            let ents: String = result
                .entity_map
                .iter()
                .map(|(old, new)| format!("{}\t{new}\n", vocab.entity_label(*old)))
                .collect();
            let rels: String = result
                .relation_map
                .iter()
                .map(|(old, new)| format!("{}\t{new}\n", vocab.relations.name(*old).unwrap_or("?")))
                .collect();
            write_atomic(&out.join("entities.tsv"), ents.as_bytes())?;
            write_atomic(&out.join("relations.tsv"), rels.as_bytes())?;
            let meta = serde_json::to_string(&result.metadata).expect("metadata serializes");
            write_atomic(&out.join("metadata.jsonl"), format!("{meta}\n").as_bytes())?;
            eprintln!(
                "train {} / valid {} / test {}, {} violations",
                result.train.len(),
                result.valid.len(),
                result.test.len(),
                result.metadata.violations
            );
            Ok(())
        }
        Preprocess::Validate { train, valid, test } => {
            eprintln!(
                "# validate train={} valid={} test={}",
                train.display(),
                valid.display(),
                test.display()
            );
            let report = validate_inductive_split(&read_named(&train)?, &read_named(&valid)?, &read_named(&test)?);
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(())
        }
    }
}
