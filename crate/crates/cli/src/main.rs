//! Command line front end: build the interaction graphs, train a model,
//! score a held-out log, or query one prediction.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dgekt_core::checkpoint::{load_checkpoint, save_checkpoint, save_graphs};
use dgekt_core::config::TrainConfig;
use dgekt_core::data::{
    build_vocabulary, make_sequences, parse_log, split_students, InteractionRecord, LogFormat,
};
use dgekt_core::graph::{summarize, GraphSet};
use dgekt_core::train::{evaluate_auc, prediction_pairs, score_dataset, train, EvalReport};

#[derive(Parser)]
#[command(name = "dgekt", version, about = "Dual graph knowledge tracing engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build both interaction graphs from a log and save them with a summary
    BuildGraphs {
        /// Interaction log (student_id,exercise_id,concept_ids,correct,order)
        #[arg(long)]
        data: PathBuf,
        /// Directory for graphs.bin and graphs-summary.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.ckpt, report.json, and summary.txt
    Train(Box<TrainArgs>),
    /// Score a log with a trained checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Interaction log to score, same columns as training data
        #[arg(long)]
        data: PathBuf,
        /// Also write the full JSON report to this file
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Probability of answering one exercise correctly after a history
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One student's interaction history, same columns as training data
        #[arg(long)]
        history: PathBuf,
        /// Exercise id to query
        #[arg(long)]
        exercise: String,
    },
}

/// Defaults, overridden by --config JSON, overridden by the flags below.
#[derive(Args)]
struct TrainArgs {
    /// Interaction log (student_id,exercise_id,concept_ids,correct,order)
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// JSON file mirroring the training configuration field for field
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling, and the student split
    #[arg(long)]
    seed: u64,
    /// DGEKT, CAG, TG, RmCAHG, RmDTG, or RmOKD
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    graph_layers: Option<usize>,
    #[arg(long)]
    gru_hidden: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac_of_train: Option<f64>,
    #[arg(long)]
    separate_embedding_tables: Option<bool>,
    #[arg(long)]
    share_gru: Option<bool>,
    #[arg(long)]
    stop_teacher_gradient: Option<bool>,
    #[arg(long)]
    distill_last_step_only: Option<bool>,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::BuildGraphs { data, out } => build_graphs(&data, &out),
        Command::Train(args) => run_train(&args),
        Command::Eval { checkpoint, data, report } => eval(&checkpoint, &data, report.as_deref()),
        Command::Predict { checkpoint, history, exercise } => {
            predict(&checkpoint, &history, &exercise)
        }
    }
}

fn load_records(path: &Path) -> anyhow::Result<Vec<InteractionRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let parsed = parse_log(std::io::BufReader::new(file), LogFormat::Csv)
        .with_context(|| format!("parsing {}", path.display()))?;
    if parsed.dropped_no_concepts > 0 {
        eprintln!("note: dropped {} rows without concept tags", parsed.dropped_no_concepts);
    }
    if parsed.records.is_empty() {
        bail!("{} contains no usable records", path.display());
    }
    Ok(parsed.records)
}

fn resolve_config(args: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut config: TrainConfig = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    config.seed = args.seed;
    if let Some(v) = &args.variant {
        config.variant = v.parse()?;
    }
    macro_rules! override_field {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field {
                config.$field = v;
            })*
        };
    }
    override_field!(
        embedding_dim,
        graph_layers,
        gru_hidden,
        gamma,
        lambda,
        batch_size,
        learning_rate,
        max_epochs,
        early_stop_patience,
        max_seq_len,
        train_frac,
        val_frac_of_train,
        separate_embedding_tables,
        share_gru,
        stop_teacher_gradient,
        distill_last_step_only
    );
    config.validate()?;
    Ok(config)
}

fn table(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn build_graphs(data: &Path, out: &Path) -> anyhow::Result<()> {
    let records = load_records(data)?;
    let vocab = build_vocabulary(&records)?;
    let seqs = make_sequences(&records, &vocab, TrainConfig::default().max_seq_len)?;
    let graphs = GraphSet::full(&vocab, &seqs);
    let summary = summarize(&graphs);

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_graphs(&out.join("graphs.bin"), &vocab, &graphs)?;
    fs::write(out.join("graphs-summary.json"), serde_json::to_string_pretty(&summary)?)?;

    let mut rows = vec![
        ("exercises", vocab.num_exercises().to_string()),
        ("concepts", vocab.num_concepts().to_string()),
        ("interaction nodes", vocab.num_nodes().to_string()),
    ];
    if let Some(h) = &summary.hypergraph {
        rows.push(("hyperedges", h.num_hyperedges.to_string()));
        rows.push(("incidence entries", h.incidence_entries.to_string()));
    }
    if let Some(t) = &summary.transitions {
        rows.push(("distinct transitions", t.distinct_transitions.to_string()));
        rows.push(("transition volume", t.total_transitions.to_string()));
    }
    print!("{}", table(&rows));
    println!("wrote {} and graphs-summary.json", out.join("graphs.bin").display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> anyhow::Result<()> {
    let config = resolve_config(args)?;
    let records = load_records(&args.data)?;
    let vocab = build_vocabulary(&records)?;
    let seqs = make_sequences(&records, &vocab, config.max_seq_len)?;
    let split = split_students(&seqs, config.train_frac, config.val_frac_of_train, config.seed)?;
    let graphs = GraphSet::for_wiring(&config.variant.wiring(), &vocab, &split.train);

    println!(
        "{} on {} exercises / {} concepts; sequences: {} train, {} validation, {} test",
        config.variant,
        vocab.num_exercises(),
        vocab.num_concepts(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );

    let (outcome, report) =
        train::<f32>(&split, &graphs, vocab.num_exercises(), &config, |stats| {
            match stats.val_auc {
                Some(auc) => println!(
                    "epoch {:>4}  loss {:.4}  val auc {:.4}",
                    stats.epoch, stats.train_loss, auc
                ),
                None => println!("epoch {:>4}  loss {:.4}", stats.epoch, stats.train_loss),
            }
            true
        })?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let checkpoint = args.out.join("checkpoint.ckpt");
    save_checkpoint(
        &checkpoint,
        &outcome.model,
        &outcome.adam,
        &vocab,
        &graphs,
        outcome.best_epoch,
        &outcome.rng,
    )?;

    let json = serde_json::json!({
        "config": config,
        "dataset": {
            "exercises": vocab.num_exercises(),
            "concepts": vocab.num_concepts(),
            "train_sequences": split.train.len(),
            "validation_sequences": split.validation.len(),
            "test_sequences": split.test.len(),
        },
        "best_epoch": outcome.best_epoch,
        "best_val_auc": outcome.best_val_auc,
        "test": report,
    });
    fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&json)?)?;

    let summary = table(&[
        ("variant", config.variant.to_string()),
        ("exercises", vocab.num_exercises().to_string()),
        ("concepts", vocab.num_concepts().to_string()),
        (
            "sequences",
            format!(
                "{} train / {} validation / {} test",
                split.train.len(),
                split.validation.len(),
                split.test.len()
            ),
        ),
        ("epochs run", report.epochs.len().to_string()),
        ("best epoch", outcome.best_epoch.to_string()),
        (
            "best val auc",
            outcome.best_val_auc.map_or("-".to_string(), |a| format!("{a:.4}")),
        ),
        ("test auc", format!("{:.4}", report.auc)),
        (
            "test predictions",
            format!("{} ({} correct / {} incorrect)",
                report.positives + report.negatives, report.positives, report.negatives),
        ),
        ("checkpoint", checkpoint.display().to_string()),
    ]);
    fs::write(args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, report_path: Option<&Path>) -> anyhow::Result<()> {
    let loaded = load_checkpoint::<f32>(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let config = loaded.model.config.clone();
    let records = load_records(data)?;
    let seqs = make_sequences(&records, &loaded.vocabulary, config.max_seq_len)?;
    let predictions = score_dataset(&loaded.model, &seqs)?;
    let pairs = prediction_pairs(&predictions);
    let auc = evaluate_auc(&pairs)?;
    let positives = pairs.iter().filter(|&&(_, r)| r).count();
    let report = EvalReport {
        auc,
        positives,
        negatives: pairs.len() - positives,
        epochs: Vec::new(),
        predictions,
    };
    if let Some(path) = report_path {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    print!(
        "{}",
        table(&[
            ("variant", config.variant.to_string()),
            ("sequences", seqs.len().to_string()),
            (
                "predictions",
                format!(
                    "{} ({} correct / {} incorrect)",
                    report.positives + report.negatives,
                    report.positives,
                    report.negatives
                ),
            ),
            ("test auc", format!("{auc:.4}")),
        ])
    );
    Ok(())
}

fn predict(checkpoint: &Path, history: &Path, exercise: &str) -> anyhow::Result<()> {
    let loaded = load_checkpoint::<f32>(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let file = fs::File::open(history).with_context(|| format!("opening {}", history.display()))?;
    let parsed = parse_log(std::io::BufReader::new(file), LogFormat::Csv)
        .with_context(|| format!("parsing {}", history.display()))?;
    if parsed.dropped_no_concepts > 0 {
        bail!(
            "{} history rows have no concept tags; every step of the history must be kept",
            parsed.dropped_no_concepts
        );
    }
    let students: BTreeSet<&str> = parsed.records.iter().map(|r| r.student_id.as_str()).collect();
    if students.len() != 1 {
        bail!("history must describe exactly one student, found {}", students.len());
    }
    let mut rows = parsed.records;
    rows.sort_by_key(|r| r.order);
    let steps: Vec<(usize, bool)> = rows
        .iter()
        .map(|r| {
            loaded
                .vocabulary
                .exercise_index(&r.exercise_id)
                .map(|e| (e, r.correct))
                .ok_or_else(|| {
                    anyhow::anyhow!(
                        "exercise {:?} is not in the checkpoint vocabulary",
                        r.exercise_id
                    )
                })
        })
        .collect::<anyhow::Result<_>>()?;
    let target = loaded.vocabulary.exercise_index(exercise).ok_or_else(|| {
        anyhow::anyhow!("exercise {exercise:?} is not in the checkpoint vocabulary")
    })?;
    let tables = loaded.model.encode_tables()?;
    let probability = loaded.model.predict_next(&tables, &steps, target)?;
    println!("{probability:.6}");
    Ok(())
}
