mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use framescale::bench::{
    extend_item, load_feature_sidecar, make_needle_dataset, read_bench, write_bench, BenchSample, OriginalItem,
    SubsetTag,
};
use framescale::encoder::ClipEncoderParams;
use framescale::eval::{self, mean_scores, rouge_scores, QaModel, RougeScore, Strategy};
use framescale::experiment::training_examples;
use framescale::lm::{train, ToyLmParams};
use framescale::pipeline::assign_positions;
use framescale::schedule::{interleave_factor, interleaved_clip_count, num_clips, sampled_frame_count};
use framescale::{io, Error, Execution, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "framescale", version, about = "Long-video frame scheduling, toy model training and evaluation")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show the frame schedule for a video length.
    Plan {
        /// Video length in seconds.
        duration_s: f64,
    },
    /// Build a benchmark: synthetic needle videos, or real videos padded with a distractor.
    BuildBench {
        #[arg(long)]
        out: PathBuf,
        /// Target length of every video, seconds.
        #[arg(long)]
        length: f64,
        /// Number of needle samples (ignored with --originals).
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// JSON lines of annotated videos to extend instead of generating needles.
        #[arg(long)]
        originals: Option<PathBuf>,
        /// Sidecar of the distractor video; defaults to the synthetic pool.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Train the toy model on one or more benchmark manifests.
    Train {
        #[arg(long = "bench", required = true)]
        benches: Vec<PathBuf>,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Multiple-choice accuracy of a trained model.
    EvalQa {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        /// ife, truncated, baseline or clips:N.
        #[arg(long, default_value = "ife", value_parser = parse_strategy)]
        strategy: Strategy,
        /// Output prefix; writes PREFIX.json, PREFIX.csv and PREFIX.records.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// ROUGE scores of candidate captions against references.
    EvalCaption {
        /// JSON lines with `candidate` and `reference` (and optional `id`).
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy as a function of the number of uniformly spread clips.
    SweepClips {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,10")]
        clips: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy with and without interleaving, one manifest per video length.
    SweepIfe {
        #[arg(long = "bench", required = true)]
        benches: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Interleaving factor per manifest; derived from the lengths when omitted.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    match s {
        "ife" => Ok(Strategy::FseIfe),
        "truncated" => Ok(Strategy::FseTruncated),
        "baseline" => Ok(Strategy::Baseline),
        _ => s
            .strip_prefix("clips:")
            .and_then(|n| n.parse().ok())
            .map(Strategy::Clips)
            .ok_or_else(|| format!("unknown strategy {s:?}; expected ife, truncated, baseline or clips:N")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Shape(_) | Error::Capacity { .. } | Error::Vocab { .. } => 2,
        Error::Data(_) | Error::Io { .. } | Error::Json(_) => 3,
        Error::Divergence { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.sequential {
        cfg.execution = Execution::Sequential;
    }
    if let Command::Train { steps, lr, batch_size, .. } = &cli.command {
        cfg.train.steps = steps.unwrap_or(cfg.train.steps);
        cfg.train.learning_rate = lr.unwrap_or(cfg.train.learning_rate);
        cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
    }
    cfg.train.execution = cfg.execution;
    cfg.validate()?;

    let summary = match &cli.command {
        Command::Plan { duration_s } => plan(&cfg, *duration_s)?,
        Command::BuildBench { out, length, count, originals, pool } => {
            build_bench(&cfg, out, *length, *count, originals.as_deref(), pool.as_deref())?
        }
        Command::Train { benches, out, .. } => train_cmd(&mut cfg, benches, out)?,
        Command::EvalQa { model, bench, strategy, out } => eval_qa(&cfg, model, bench, *strategy, out)?,
        Command::EvalCaption { pairs, out } => eval_caption(&cfg, pairs, out)?,
        Command::SweepClips { model, bench, clips, out } => sweep_clips(&cfg, model, bench, clips, out)?,
        Command::SweepIfe { benches, model, gammas, out } => sweep_ife(&cfg, benches, model, gammas.as_deref(), out)?,
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else if let Value::Object(m) = &summary {
        for (k, v) in m {
            match v {
                Value::String(s) => println!("{k:<18} {s}"),
                other => println!("{k:<18} {other}"),
            }
        }
    }
    Ok(())
}

fn plan(cfg: &RunConfig, duration_s: f64) -> Result<Value> {
    let enc = &cfg.encoding;
    let gamma = interleave_factor(duration_s, enc)?;
    let clips = interleaved_clip_count(duration_s, enc)?;
    let embeddings = clips * enc.tokens_per_clip;
    let max_position = assign_positions(embeddings, gamma, 0)?.last().copied().unwrap_or(0);
    Ok(json!({
        "duration_s": duration_s,
        "raw_clips": num_clips(duration_s, enc.frames_per_clip)?,
        "gamma": gamma,
        "sampled_frames": sampled_frame_count(duration_s, enc)?,
        "clips": clips,
        "clips_per_group": clips / gamma,
        "embeddings": embeddings,
        "max_position": max_position,
    }))
}

fn with_config(cfg: &RunConfig, mut v: Value) -> Result<Value> {
    if let Value::Object(m) = &mut v {
        m.insert("config".into(), serde_json::to_value(cfg)?);
    }
    Ok(v)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    io::write_text(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// One line of an `--originals` file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OriginalLine {
    /// Feature sidecar, relative to the originals file.
    features: PathBuf,
    question: String,
    options: Vec<String>,
    answer_index: usize,
    subset_tag: SubsetTag,
}

fn read_originals(path: &Path) -> Result<Vec<OriginalItem>> {
    let base = path.parent().unwrap_or(Path::new("."));
    io::read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let o: OriginalLine = serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
            Ok(OriginalItem {
                stream: load_feature_sidecar(&base.join(&o.features))?,
                question: o.question,
                options: o.options,
                answer_index: o.answer_index,
                subset_tag: o.subset_tag,
            })
        })
        .collect()
}

fn build_bench(
    cfg: &RunConfig,
    out: &Path,
    length: f64,
    count: usize,
    originals: Option<&Path>,
    pool: Option<&Path>,
) -> Result<Value> {
    let seed = cfg.require_seed()?;
    let samples: Vec<BenchSample> = match originals {
        None => make_needle_dataset(count, length, &cfg.needle, seed, cfg.execution)?,
        Some(path) => {
            let pool = match pool {
                Some(p) => load_feature_sidecar(p)?,
                None => cfg.needle.pool()?,
            };
            read_originals(path)?
                .iter()
                .map(|item| extend_item(item, &pool, length))
                .collect::<Result<_>>()?
        }
    };
    let manifest = write_bench(out, &samples)?;
    write_json(
        &out.join("config.json"),
        &with_config(cfg, json!({ "length_s": length, "count": samples.len(), "originals": originals }))?,
    )?;
    let digest = io::sha256_hex(&std::fs::read(&manifest).map_err(|e| Error::Io { path: manifest.clone(), source: e })?);
    Ok(json!({
        "manifest": manifest.display().to_string(),
        "samples": samples.len(),
        "manifest_sha256": digest,
    }))
}

fn load_benches(paths: &[PathBuf]) -> Result<Vec<BenchSample>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_bench(p)?);
    }
    Ok(out)
}

const ENCODER_FILE: &str = "encoder.bin";
const CHECKPOINT_FILE: &str = "lm.ckpt";
const CONFIG_FILE: &str = "config.json";

fn train_cmd(cfg: &mut RunConfig, benches: &[PathBuf], out: &Path) -> Result<Value> {
    let seed = cfg.require_seed()?;
    cfg.train.seed = framescale::rng::derive_seed(seed, "train", 0);
    let samples = load_benches(benches)?;
    let frame_dim = samples.first().ok_or_else(|| Error::Data("benchmark has no samples".into()))?.stream.frame_dim();
    let encoder = ClipEncoderParams::for_config(
        &cfg.encoding,
        cfg.encoder,
        frame_dim,
        framescale::rng::derive_seed(seed, "encoder", 0),
    )?;
    let lm = ToyLmParams::init(cfg.lm, framescale::rng::derive_seed(seed, "lm", 0))?;
    let mut model = QaModel { encoding: cfg.encoding, encoder, lm };
    let examples = training_examples(&model, &samples, cfg.execution)?;
    let report = train(&examples, &cfg.train, &mut model.lm)?;

    let cfg_json = serde_json::to_value(&*cfg)?;
    model.encoder.save(&out.join(ENCODER_FILE))?;
    model.lm.save_checkpoint(&out.join(CHECKPOINT_FILE), seed, cfg.train.steps, cfg_json.clone())?;
    io::write_text(&out.join("loss.csv"), &report.to_csv())?;
    write_json(&out.join(CONFIG_FILE), &cfg_json)?;
    Ok(json!({
        "model": out.display().to_string(),
        "examples": examples.len(),
        "steps": cfg.train.steps,
        "final_loss": report.losses.last().map(|l| l.1),
    }))
}

/// Loads a model directory written by `train`. Its own config fixes the geometry.
fn load_model(dir: &Path) -> Result<(QaModel, RunConfig)> {
    let trained = RunConfig::load(Some(&dir.join(CONFIG_FILE)))?;
    let encoder = ClipEncoderParams::load(&dir.join(ENCODER_FILE))?;
    let (lm, _) = ToyLmParams::load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    Ok((QaModel { encoding: trained.encoding, encoder, lm }, trained))
}

fn eval_qa(cfg: &RunConfig, model_dir: &Path, bench: &Path, strategy: Strategy, out: &Path) -> Result<Value> {
    let (model, trained) = load_model(model_dir)?;
    let samples = read_bench(bench)?;
    let report = eval::evaluate(&model, &samples, strategy, cfg.execution)?;
    let doc = json!({
        "strategy": strategy,
        "model": model_dir,
        "bench": bench,
        "model_config": trained,
        "report": report,
    });
    write_json(&with_ext(out, ".json"), &with_config(cfg, doc)?)?;
    io::write_text(&with_ext(out, ".csv"), &report.to_csv())?;
    io::write_text(&with_ext(out, ".records.csv"), &report.records_csv())?;
    let subsets: serde_json::Map<String, Value> =
        report.subsets.iter().map(|(k, v)| (k.as_str().to_string(), json!(v.accuracy))).collect();
    Ok(json!({ "average": report.average, "chance": report.chance, "subsets": subsets, "samples": report.records.len() }))
}

#[derive(Deserialize)]
struct CaptionPair {
    #[serde(default)]
    id: Option<String>,
    candidate: String,
    reference: String,
}

#[derive(Serialize)]
struct CaptionScore {
    id: String,
    #[serde(flatten)]
    score: RougeScore,
}

fn eval_caption(cfg: &RunConfig, pairs: &Path, out: &Path) -> Result<Value> {
    let scores: Vec<CaptionScore> = io::read_text(pairs)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let p: CaptionPair = serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{} line {}: {e}", pairs.display(), i + 1)))?;
            Ok(CaptionScore {
                id: p.id.unwrap_or_else(|| (i + 1).to_string()),
                score: rouge_scores(&p.candidate, &p.reference),
            })
        })
        .collect::<Result<_>>()?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no caption pairs", pairs.display())));
    }
    let mean = mean_scores(&scores.iter().map(|s| s.score).collect::<Vec<_>>());
    write_json(&with_ext(out, ".json"), &with_config(cfg, json!({ "pairs": pairs, "mean": mean, "scores": scores }))?)?;
    let mut csv = String::from("id,rouge1,rouge2,rougeL,rougeLsum\n");
    for s in scores.iter().map(|s| (s.id.as_str(), &s.score)).chain([("mean", &mean)]) {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            s.0, s.1.rouge1.f1, s.1.rouge2.f1, s.1.rouge_l.f1, s.1.rouge_lsum.f1
        ));
    }
    io::write_text(&with_ext(out, ".csv"), &csv)?;
    Ok(json!({
        "pairs": scores.len(),
        "rouge1": mean.rouge1.f1,
        "rouge2": mean.rouge2.f1,
        "rougeL": mean.rouge_l.f1,
        "rougeLsum": mean.rouge_lsum.f1,
    }))
}

fn sweep_clips(cfg: &RunConfig, model_dir: &Path, bench: &Path, clips: &[usize], out: &Path) -> Result<Value> {
    let (model, trained) = load_model(model_dir)?;
    let samples = read_bench(bench)?;
    let sweep = eval::sweep_clips(&model, &samples, clips, cfg.execution)?;
    for p in &sweep.points {
        if let Some(why) = &p.skipped {
            eprintln!("warning: skipped {} clips: {why}", p.clips);
        }
    }
    let doc = json!({ "model": model_dir, "bench": bench, "model_config": trained, "sweep": sweep });
    write_json(&with_ext(out, ".json"), &with_config(cfg, doc)?)?;
    io::write_text(&with_ext(out, ".csv"), &sweep.to_csv())?;
    let curve: serde_json::Map<String, Value> =
        sweep.points.iter().map(|p| (p.clips.to_string(), json!(p.accuracy))).collect();
    Ok(Value::Object(curve))
}

fn sweep_ife(
    cfg: &RunConfig,
    benches: &[PathBuf],
    model_dir: &Path,
    gammas: Option<&[usize]>,
    out: &Path,
) -> Result<Value> {
    let (model, trained) = load_model(model_dir)?;
    let sets = benches.iter().map(|b| read_bench(b)).collect::<Result<Vec<_>>>()?;
    let gammas = match gammas {
        Some(g) => g.to_vec(),
        None => sets
            .iter()
            .map(|s| {
                let len = s.first().ok_or_else(|| Error::Data("empty benchmark".into()))?.stream.meta.duration_s;
                interleave_factor(len, &model.encoding)
            })
            .collect::<Result<_>>()?,
    };
    let sweep = eval::sweep_lengths_ife(&model, &sets, &gammas, cfg.execution)?;
    let doc = json!({ "model": model_dir, "benches": benches, "model_config": trained, "sweep": sweep });
    write_json(&with_ext(out, ".json"), &with_config(cfg, doc)?)?;
    io::write_text(&with_ext(out, ".csv"), &sweep.to_csv())?;
    let rows: Vec<Value> = sweep
        .points
        .iter()
        .map(|p| json!({ "length_s": p.length_s, "gamma": p.gamma, "ife": p.ife, "truncated": p.truncated, "baseline": p.baseline }))
        .collect();
    Ok(json!({ "points": rows }))
}
