//! Command-line pipeline: synthetic data generation, training, descriptor
//! encoding, and evaluation reports.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O failure, 4 malformed data or
//! violated contract.

use aircode::error::Error;
use aircode::eval;
use aircode::io::{
    read_checkpoint, read_descriptor_store, read_keypoints, write_checkpoint,
    write_descriptor_store, write_keypoints, RunConfig,
};
use aircode::matcher::{DescriptorDatabase, DescriptorRecord};
use aircode::model::{encode_objects, HeadKind, ModelParams, ObjectInstance};
use aircode::seed;
use aircode::synth::gen_sequence;
use aircode::train::{train_with_batches, PairSampler, TraceRow};
use clap::{Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const SALT_SEQUENCE: u64 = 0x6764;
const SALT_BENCH: u64 = 0x6268;

#[derive(Parser)]
#[command(
    name = "aircode",
    version,
    about = "Sparse graph object descriptors: generate data, train, encode, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic key-point sequences into a JSON-lines file.
    GenData {
        /// Run configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output key-point file.
        #[arg(long)]
        out: PathBuf,
        /// Number of independent sequences; 0 writes a header-only file.
        #[arg(long, default_value_t = 1)]
        sequences: usize,
        /// Override frames per sequence.
        #[arg(long)]
        frames: Option<usize>,
        /// Override objects per sequence.
        #[arg(long)]
        objects: Option<usize>,
    },
    /// Train a model on labeled pairs sampled from a key-point file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training data (key-point file).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        ckpt_out: PathBuf,
        /// Per-step loss trace CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Override training steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the checkpoint every N steps (0 = only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Replace the dual-branch sparsity layer with one affine layer.
        #[arg(long)]
        ablate_sparsity: bool,
        /// Drop the sparse and dense loss terms.
        #[arg(long)]
        ablate_losses: bool,
    },
    /// Encode every object of a key-point file into a descriptor store.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write evaluation reports (CSV plus JSON summary) into a directory.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model checkpoint (match, sparsity, usage, bench modes).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Key-point file (match, sparsity, usage modes).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Database descriptor store (reloc mode).
        #[arg(long)]
        db: Option<PathBuf>,
        /// Query descriptor store, one query per frame id (reloc mode).
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-stage encoder timings (shorthand for eval --mode bench).
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Match,
    Reloc,
    Sparsity,
    Usage,
    Bench,
}

enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Io { .. } => 3,
                _ => 4,
            };
            std::process::exit(code);
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    let config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData {
            config,
            out,
            sequences,
            frames,
            objects,
        } => gen_data(&load_config(&config)?, &out, sequences, frames, objects),
        Command::Train {
            config,
            data,
            ckpt_out,
            trace_out,
            steps,
            seed,
            checkpoint_every,
            ablate_sparsity,
            ablate_losses,
        } => {
            let mut config = load_config(&config)?;
            if let Some(s) = steps {
                config.train.steps = s;
            }
            if let Some(s) = seed {
                config.train.seed = s;
            }
            if ablate_sparsity {
                config.train.head = HeadKind::Dense;
            }
            if ablate_losses {
                config.train.disable_sparse_dense_losses = true;
            }
            train(&config, &data, &ckpt_out, trace_out.as_deref(), checkpoint_every)
        }
        Command::Encode { ckpt, data, out } => encode(&ckpt, &data, &out),
        Command::Eval {
            mode,
            config,
            ckpt,
            data,
            db,
            queries,
            out_dir,
        } => {
            let config = load_config(&config)?;
            match mode {
                EvalMode::Match => {
                    let (ckpt, data) = need_ckpt_data(&ckpt, &data, "match")?;
                    eval_match(&config, ckpt, data, &out_dir)
                }
                EvalMode::Reloc => {
                    let db = db.as_deref().ok_or_else(|| usage("reloc mode needs --db"))?;
                    let queries = queries
                        .as_deref()
                        .ok_or_else(|| usage("reloc mode needs --queries"))?;
                    eval_reloc(&config, db, queries, &out_dir)
                }
                EvalMode::Sparsity => {
                    let (ckpt, data) = need_ckpt_data(&ckpt, &data, "sparsity")?;
                    eval_sparsity(ckpt, data, &out_dir)
                }
                EvalMode::Usage => {
                    let (ckpt, data) = need_ckpt_data(&ckpt, &data, "usage")?;
                    eval_usage(&config, ckpt, data, &out_dir)
                }
                EvalMode::Bench => {
                    let ckpt = ckpt
                        .as_deref()
                        .ok_or_else(|| usage("bench mode needs --ckpt"))?;
                    eval_bench(&config, ckpt, &out_dir.join("bench.csv"))
                }
            }
        }
        Command::Bench { config, ckpt, out } => eval_bench(&load_config(&config)?, &ckpt, &out),
    }
}

fn need_ckpt_data<'a>(
    ckpt: &'a Option<PathBuf>,
    data: &'a Option<PathBuf>,
    mode: &str,
) -> Result<(&'a Path, &'a Path), CliError> {
    match (ckpt, data) {
        (Some(c), Some(d)) => Ok((c, d)),
        _ => Err(usage(format!("{mode} mode needs --ckpt and --data"))),
    }
}

fn gen_data(
    config: &RunConfig,
    out: &Path,
    sequences: usize,
    frames: Option<usize>,
    objects: Option<usize>,
) -> Result<(), CliError> {
    let mut seq_cfg = config.sequence;
    if let Some(f) = frames {
        seq_cfg.frames = f;
    }
    if let Some(o) = objects {
        seq_cfg.objects = o;
    }
    let mut all: Vec<ObjectInstance> = Vec::new();
    if sequences > 0 && seq_cfg.frames > 0 && seq_cfg.objects > 0 {
        seq_cfg.validate()?;
        for s in 0..sequences {
            let seq_seed = seed::derive2(config.root_seed(), SALT_SEQUENCE, s as u64);
            let frames = gen_sequence(&config.synth, &seq_cfg, seq_seed)?;
            let offset = (s * seq_cfg.frames) as i64;
            for frame in frames {
                for obj in frame {
                    let f = obj.frame_id();
                    all.push(obj.with_frame_id(f + offset));
                }
            }
        }
    }
    write_keypoints(out, config.synth.descriptor_width, &all)?;
    println!("wrote {} objects to {}", all.len(), out.display());
    Ok(())
}

fn train(
    config: &RunConfig,
    data: &Path,
    ckpt_out: &Path,
    trace_out: Option<&Path>,
    checkpoint_every: usize,
) -> Result<(), CliError> {
    let file = read_keypoints(data)?;
    if file.n_p != config.dims.n_p {
        return Err(Error::contract(format!(
            "data file width {} does not match configured n_p {}",
            file.n_p, config.dims.n_p
        ))
        .into());
    }
    let sampler = PairSampler::new(
        &file.objects,
        config.train.positive_pairs,
        config.train.negative_pairs(),
        config.root_seed(),
    )?;
    let outcome = train_with_batches(
        &config.train,
        &config.dims,
        |step| sampler.batch(step),
        |step, params, _| {
            if checkpoint_every > 0 && (step + 1) % checkpoint_every == 0 {
                write_checkpoint(ckpt_out, params)?;
            }
            Ok(())
        },
    )?;
    write_checkpoint(ckpt_out, &outcome.params)?;
    if let Some(path) = trace_out {
        write_text(path, &trace_csv(&outcome.trace))?;
    }
    let last = outcome.trace.last();
    println!(
        "trained {} steps, final loss {}, checkpoint {}",
        outcome.trace.len(),
        last.map(|r| r.total.to_string()).unwrap_or_else(|| "-".into()),
        ckpt_out.display()
    );
    Ok(())
}

fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,positive,negative,sparse,dense,total\n");
    for row in trace {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.step, row.positive, row.negative, row.sparse, row.dense, row.total
        )
        .expect("string write");
    }
    out
}

fn records_for(
    params: &ModelParams,
    objects: &[ObjectInstance],
) -> Result<Vec<DescriptorRecord>, Error> {
    if objects.is_empty() {
        return Ok(Vec::new());
    }
    let descriptors = encode_objects(params, objects)?;
    Ok(objects
        .iter()
        .zip(descriptors)
        .map(|(obj, descriptor)| DescriptorRecord {
            object_id: obj.object_id().to_string(),
            frame_id: obj.frame_id(),
            descriptor,
        })
        .collect())
}

fn encode(ckpt: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let params = read_checkpoint(ckpt)?;
    let file = read_keypoints(data)?;
    if file.n_p != params.dims().n_p {
        return Err(Error::contract(format!(
            "data file width {} does not match checkpoint n_p {}",
            file.n_p,
            params.dims().n_p
        ))
        .into());
    }
    let records = records_for(&params, &file.objects)?;
    write_descriptor_store(out, params.dims().n_o, &records)?;
    println!("encoded {} objects into {}", records.len(), out.display());
    Ok(())
}

/// Groups observations into frames ordered by frame id (order within a frame
/// follows the file).
fn group_frames(objects: &[ObjectInstance]) -> Vec<Vec<ObjectInstance>> {
    let mut by_frame: BTreeMap<i64, Vec<ObjectInstance>> = BTreeMap::new();
    for obj in objects {
        by_frame.entry(obj.frame_id()).or_default().push(obj.clone());
    }
    by_frame.into_values().collect()
}

fn eval_match(
    config: &RunConfig,
    ckpt: &Path,
    data: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let params = read_checkpoint(ckpt)?;
    let file = read_keypoints(data)?;
    let frames = group_frames(&file.objects);
    let mut summary_csv = String::from(
        "gap,threshold,pairs_evaluated,precision,recall,f1,degenerate,au_prc\n",
    );
    let mut summaries = Vec::new();
    for &gap in &config.eval.gaps {
        let report = eval::frame_gap_eval(&params, &frames, gap, config.eval.sim_threshold)?;
        writeln!(
            summary_csv,
            "{},{},{},{},{},{},{},{}",
            report.gap,
            report.threshold,
            report.pairs_evaluated,
            report.prf.precision,
            report.prf.recall,
            report.prf.f1,
            report.prf.degenerate,
            report.curve.area
        )
        .expect("string write");
        let mut curve_csv = String::from("threshold,precision,recall\n");
        for p in &report.curve.points {
            writeln!(curve_csv, "{},{},{}", p.threshold, p.precision, p.recall)
                .expect("string write");
        }
        write_text(&out_dir.join(format!("prc_gap{gap}.csv")), &curve_csv)?;
        summaries.push(serde_json::json!({
            "gap": report.gap,
            "threshold": report.threshold,
            "pairs_evaluated": report.pairs_evaluated,
            "precision": report.prf.precision,
            "recall": report.prf.recall,
            "f1": report.prf.f1,
            "degenerate": report.prf.degenerate,
            "au_prc": report.curve.area,
        }));
    }
    write_text(&out_dir.join("match_summary.csv"), &summary_csv)?;
    write_json(&out_dir.join("match_summary.json"), &serde_json::json!({ "gaps": summaries }))?;
    println!("match reports in {}", out_dir.display());
    Ok(())
}

fn load_database(path: &Path) -> Result<DescriptorDatabase, Error> {
    let mut db = DescriptorDatabase::new();
    for record in read_descriptor_store(path)? {
        db.insert(record)?;
    }
    Ok(db)
}

fn eval_reloc(
    config: &RunConfig,
    db_path: &Path,
    queries_path: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let db = load_database(db_path)?;
    let mut queries: BTreeMap<i64, Vec<DescriptorRecord>> = BTreeMap::new();
    for record in read_descriptor_store(queries_path)? {
        queries.entry(record.frame_id).or_default().push(record);
    }
    let queries: Vec<(Vec<DescriptorRecord>, i64)> =
        queries.into_iter().map(|(frame, records)| (records, frame)).collect();
    let n_values: Vec<usize> = (1..=config.eval.recall_top_n).collect();
    let points = eval::recall_at_n(&queries, &db, config.eval.sim_threshold, &n_values)?;
    let mut csv = String::from("n,recall\n");
    for p in &points {
        writeln!(csv, "{},{}", p.n, p.recall).expect("string write");
    }
    write_text(&out_dir.join("reloc_recall.csv"), &csv)?;
    write_json(
        &out_dir.join("reloc_summary.json"),
        &serde_json::json!({
            "queries": queries.len(),
            "db_frames": db.frame_ids().count(),
            "threshold": config.eval.sim_threshold,
            "recall": points,
        }),
    )?;
    println!("relocalization reports in {}", out_dir.display());
    Ok(())
}

fn eval_sparsity(ckpt: &Path, data: &Path, out_dir: &Path) -> Result<(), CliError> {
    let params = read_checkpoint(ckpt)?;
    let file = read_keypoints(data)?;
    let report = eval::sparsity_stats(&params, &file.objects)?;
    let mut csv = String::from("bin_start,bin_end,keypoints,objects\n");
    let bins = report.keypoint_hist.len();
    for i in 0..bins {
        let lo = i * report.bin_width;
        let hi = if i + 1 == bins {
            report.n_o
        } else {
            (i + 1) * report.bin_width - 1
        };
        writeln!(
            csv,
            "{},{},{},{}",
            lo, hi, report.keypoint_hist[i], report.object_hist[i]
        )
        .expect("string write");
    }
    write_text(&out_dir.join("sparsity_histogram.csv"), &csv)?;
    write_json(
        &out_dir.join("sparsity_summary.json"),
        &serde_json::json!({
            "n_o": report.n_o,
            "keypoints": report.per_keypoint.len(),
            "objects": report.per_object.len(),
            "mean_keypoint_nonzeros": report.mean_keypoint_nonzeros(),
            "mean_object_nonzeros": report.mean_object_nonzeros(),
        }),
    )?;
    println!("sparsity reports in {}", out_dir.display());
    Ok(())
}

fn eval_usage(
    config: &RunConfig,
    ckpt: &Path,
    data: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let params = read_checkpoint(ckpt)?;
    let file = read_keypoints(data)?;
    let mut csv = String::from("objects,usage_rate\n");
    let mut rows = Vec::new();
    for &n in &config.eval.usage_counts {
        if n > file.objects.len() {
            return Err(Error::contract(format!(
                "usage over {n} objects requested, file has only {}",
                file.objects.len()
            ))
            .into());
        }
        let rate = eval::usage_rate(&params, &file.objects[..n])?;
        writeln!(csv, "{n},{rate}").expect("string write");
        rows.push(serde_json::json!({ "objects": n, "usage_rate": rate }));
    }
    write_text(&out_dir.join("usage.csv"), &csv)?;
    write_json(&out_dir.join("usage_summary.json"), &serde_json::json!({ "rows": rows }))?;
    println!("usage reports in {}", out_dir.display());
    Ok(())
}

fn eval_bench(config: &RunConfig, ckpt: &Path, out: &Path) -> Result<(), CliError> {
    let params = read_checkpoint(ckpt)?;
    let rows = eval::runtime_bench(
        &params,
        &config.eval.bench_sizes,
        config.eval.bench_repeats,
        seed::derive(config.root_seed(), SALT_BENCH),
    )?;
    let mut csv = String::from("keypoints,node_ms,graph_ms,head_ms,total_ms\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.keypoints, r.node_ms, r.graph_ms, r.head_ms, r.total_ms
        )
        .expect("string write");
    }
    write_text(out, &csv)?;
    println!("bench table in {}", out.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_text(path, &text)
}
