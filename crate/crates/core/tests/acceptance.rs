//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use framescale::bench::{extend_stream, NeedleSpec};
use framescale::encoder::{encode_clip, ClipEncoderParams, EncoderVariant};
use framescale::eval::{rouge_scores, sweep_clips, sweep_lengths_ife, Prf, CHANCE_PERCENT};
use framescale::experiment::{self, ExperimentConfig};
use framescale::lm::{loss, loss_and_grads, Example, LmConfig, ToyLmParams};
use framescale::pipeline::{assign_positions, encode_frames, extract_group, fse_concat, ife_interleave, EmbeddingSeq};
use framescale::schedule::{interleave_factor, make_schedule, EncodingConfig, VideoMeta};
use framescale::video::{Frame, FrameStream, LABEL_ORIGINAL};
use framescale::{rng, Execution};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.2} s of {limit_s} s"))
}

fn schedule_conformance() -> Outcome {
    let t = Instant::now();
    let cfg = EncodingConfig::default();
    let got: Vec<(f64, usize)> = [26.0, 100.0, 300.0, 600.0]
        .iter()
        .map(|&d| (d, interleave_factor(d, &cfg).unwrap()))
        .collect();
    let ok = got == [(26.0, 1), (100.0, 1), (300.0, 2), (600.0, 4)];
    let (fast, time) = within(t.elapsed(), 1.0);
    check(ok && fast, format!("gamma {got:?}; {time}"))
}

fn position_bound() -> Outcome {
    let t = Instant::now();
    let cfg = EncodingConfig::default();
    let limit = cfg.max_clips * cfg.tokens_per_clip - 1;
    let mut worst_pos = 0;
    let mut worst_clips = 0;
    let mut violations = Vec::new();
    for secs in 1..=3600u32 {
        let meta = VideoMeta::new(format!("t{secs}"), secs as f64, 1.0).unwrap();
        let plan = make_schedule(&meta, &cfg).unwrap();
        let rows = plan.clip_count * cfg.tokens_per_clip;
        let max_pos = *assign_positions(rows, plan.gamma, 0).unwrap().last().unwrap();
        worst_pos = worst_pos.max(max_pos);
        worst_clips = worst_clips.max(plan.clips_per_group());
        if max_pos > limit || plan.clips_per_group() > cfg.max_clips {
            violations.push(secs);
        }
    }
    let (fast, time) = within(t.elapsed(), 5.0);
    check(
        violations.is_empty() && fast,
        format!("max position {worst_pos} (limit {limit}), max clips per group {worst_clips}; violations {violations:?}; {time}"),
    )
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn single_group_recovery() -> Outcome {
    let t = Instant::now();
    let mut r = rng::stream(3, "acceptance-roundtrip", 0);
    let mut failures = 0;
    for _ in 0..1000 {
        let gamma = r.random_range(1..=6usize);
        let rows = r.random_range(1..=12usize);
        let dim = r.random_range(1..=5usize);
        let groups: Vec<EmbeddingSeq> = (0..gamma)
            .map(|_| {
                let v: Vec<f32> = (0..rows * dim).map(|_| f32::from_bits(r.random::<u32>() & 0x7f7f_ffff)).collect();
                EmbeddingSeq::sequential(v, dim).unwrap()
            })
            .collect();
        let merged = ife_interleave(&groups).unwrap();
        for (g, orig) in groups.iter().enumerate() {
            let back = extract_group(&merged, g).unwrap();
            if bits(&back.rows) != bits(&orig.rows) || back.positions != orig.positions {
                failures += 1;
            }
        }
    }

    // gamma = 1 must be plain concatenation of independently encoded clips
    let cfg = EncodingConfig { frames_per_clip: 4, tokens_per_clip: 6, max_clips: 10, embed_dim: 8 };
    let mut fse_equal = true;
    for variant in [EncoderVariant::Mock, EncoderVariant::Learned] {
        let params = ClipEncoderParams::for_config(&cfg, variant, 5, 11).unwrap();
        let meta = VideoMeta::new("v", 20.0, 1.0).unwrap();
        let frames = (0..20)
            .map(|i| Frame::new((0..5).map(|j| ((i * 7 + j) as f32).sin()).collect(), LABEL_ORIGINAL))
            .collect();
        let stream = FrameStream::new(meta, frames).unwrap();
        let idx: Vec<usize> = (0..20).collect();
        let ours = encode_frames(&stream, &idx, 1, &params, &cfg, Execution::Parallel).unwrap();
        let clips: Vec<Vec<f32>> = stream.frames.chunks(4).map(|c| encode_clip(c, &params).unwrap()).collect();
        let plain = fse_concat(&clips, cfg.embed_dim).unwrap();
        fse_equal &= bits(&ours.rows) == bits(&plain.rows) && ours.positions == plain.positions;
    }
    let (fast, time) = within(t.elapsed(), 10.0);
    check(
        failures == 0 && fse_equal && fast,
        format!("{failures} failed round trips of 1000; gamma=1 equals concatenation: {fse_equal}; {time}"),
    )
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let config = LmConfig { vocab: 20, d_model: 8, heads: 2, layers: 2, mlp_hidden: 16, max_positions: 16 };
    let mut params = ToyLmParams::init(config, 5).unwrap();
    // move layer norms and biases off their trivial initial values
    let mut r = rng::stream(5, "acceptance-perturb", 0);
    params.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x += r.random_range(-0.2..0.2)));
    let mut prefix_rows = |n: usize| (0..n * 8).map(|_| r.random_range(-1.0f32..1.0)).collect::<Vec<f32>>();
    let batch = vec![
        Example {
            prefix: EmbeddingSeq::new(prefix_rows(4), 8, vec![0, 0, 1, 1], 2).unwrap(),
            tokens: vec![1, 4, 13, 7, 10],
            targets: vec![(3, 10), (4, 2)],
        },
        Example {
            prefix: EmbeddingSeq::sequential(prefix_rows(3), 8).unwrap(),
            tokens: vec![1, 5, 17, 7],
            targets: vec![(1, 18), (3, 11)],
        },
    ];
    let n_params = params.num_params();
    let (_, grads) = loss_and_grads(&batch, &params, Execution::Sequential).unwrap();
    let analytic = grads.tensors();
    let names = params.layout();
    let h = 1e-3;
    let mut worst = (0.0f64, String::new());
    for (ti, (name, _)) in names.iter().enumerate() {
        let len = analytic[ti].len();
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = params.tensors()[ti][k];
            params.tensors_mut()[ti][k] = orig + h;
            let up = loss(&batch, &params).unwrap();
            params.tensors_mut()[ti][k] = orig - h;
            let down = loss(&batch, &params).unwrap();
            params.tensors_mut()[ti][k] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic[ti].iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale = analytic[ti]
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        if rel >= worst.0 {
            worst = (rel, name.clone());
        }
    }
    let (fast, time) = within(t.elapsed(), 60.0);
    check(
        worst.0 < 1e-3 && n_params < 10_000 && fast,
        format!("{n_params} params; max relative error {:.2e} ({}); {time}", worst.0, worst.1),
    )
}

fn bench_structure() -> Outcome {
    let t = Instant::now();
    let spec = NeedleSpec { frame_dim: 6, ..NeedleSpec::default() };
    let pool = spec.pool().unwrap();
    let meta = VideoMeta::new("clip_0001.mp4", 26.0, 3.0).unwrap();
    let frames = (0..meta.total_frames)
        .map(|i| Frame::new((0..6).map(|j| (i * 6 + j) as f32).collect(), LABEL_ORIGINAL))
        .collect();
    let original = FrameStream::new(meta, frames).unwrap();
    let a = extend_stream(&original, &pool, 100.0).unwrap();
    let b = extend_stream(&original, &pool, 100.0).unwrap();
    let same = a.stream.digest() == b.stream.digest();
    let duration = a.stream.meta.duration_s == 100.0 && a.stream.len() == 300;
    let stripped: Vec<Frame> = a.stream.frames.iter().filter(|f| !f.is_distractor()).cloned().collect();
    let recovered = stripped == original.frames;
    let (fast, time) = within(t.elapsed(), 5.0);
    check(
        same && duration && recovered && fast,
        format!(
            "digests equal {same}; 100 s / 300 frames {duration}; original recovered {recovered}; t0={} t1={}; {time}",
            a.distractor_start_s, a.insert_s
        ),
    )
}

fn rouge_oracle() -> Outcome {
    let t = Instant::now();
    let q = |n: f64, d: f64| n / d;
    let prf = |p: f64, r: f64| Prf { precision: p, recall: r, f1: if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 } };
    // (candidate, reference, rouge1, rouge2, rougeL, rougeLsum), derived by hand
    let cases = [
        ("the cat", "the cat sat", prf(1.0, q(2., 3.)), prf(1.0, 0.5), prf(1.0, q(2., 3.)), prf(1.0, q(2., 3.))),
        (
            "the cat sat on the mat",
            "the cat is on the mat",
            prf(q(5., 6.), q(5., 6.)),
            prf(0.6, 0.6),
            prf(q(5., 6.), q(5., 6.)),
            prf(q(5., 6.), q(5., 6.)),
        ),
        (
            "the cat sat. a dog ran.",
            "the dog ran. the cat sat quietly.",
            prf(q(5., 6.), q(5., 7.)),
            prf(0.6, 0.5),
            prf(0.5, q(3., 7.)),
            prf(q(5., 6.), q(5., 7.)),
        ),
        ("the the the the", "the cat", prf(0.25, 0.5), prf(0.0, 0.0), prf(0.25, 0.5), prf(0.25, 0.5)),
        ("b a", "a b", prf(1.0, 1.0), prf(0.0, 0.0), prf(0.5, 0.5), prf(0.5, 0.5)),
        ("Hello, World!", "hello world", prf(1.0, 1.0), prf(1.0, 1.0), prf(1.0, 1.0), prf(1.0, 1.0)),
    ];
    let close = |a: Prf, b: Prf| {
        (a.precision - b.precision).abs() < 1e-9 && (a.recall - b.recall).abs() < 1e-9 && (a.f1 - b.f1).abs() < 1e-9
    };
    let mut bad = Vec::new();
    for (c, r, r1, r2, rl, rlsum) in cases {
        let s = rouge_scores(c, r);
        if !(close(s.rouge1, r1) && close(s.rouge2, r2) && close(s.rouge_l, rl) && close(s.rouge_lsum, rlsum)) {
            bad.push(format!("{c:?}/{r:?}"));
        }
    }
    let point_eight = (rouge_scores("the cat", "the cat sat").rouge1.f1 - 0.8).abs() < 1e-9;
    let id = rouge_scores("a man rides a horse.", "a man rides a horse.");
    let identical = [id.rouge1, id.rouge2, id.rouge_l, id.rouge_lsum].iter().all(|p| p.f1 == 1.0);
    let dj = rouge_scores("red fox", "blue whale");
    let disjoint = [dj.rouge1, dj.rouge2, dj.rouge_l, dj.rouge_lsum].iter().all(|p| p.f1 == 0.0);
    let (fast, time) = within(t.elapsed(), 1.0);
    check(
        bad.is_empty() && point_eight && identical && disjoint && fast,
        format!("{} fixtures, mismatches {bad:?}; identical 1.0 {identical}; disjoint 0.0 {disjoint}; {time}", cases.len()),
    )
}

/// Trains once and runs both sweeps; criteria 7 and 8 read from this.
struct Experiment {
    ife: framescale::eval::IfeSweep,
    ife_time: Duration,
    clips: framescale::eval::ClipSweep,
    clip_time: Duration,
    in_budget: f64,
}

fn run_experiment(cfg: &ExperimentConfig) -> Experiment {
    let t = Instant::now();
    let pool = cfg.needle.pool().unwrap();
    let mut model = cfg.init_model().unwrap();
    experiment::train_model(cfg, &mut model, &pool).unwrap();
    let in_budget_set = framescale::bench::make_needle_dataset_with_pool(
        cfg.eval_samples,
        cfg.budget_s(),
        &cfg.needle,
        rng::derive_seed(cfg.seed, "in-budget-set", 0),
        &pool,
        cfg.execution,
    )
    .unwrap();
    let in_budget =
        framescale::eval::evaluate(&model, &in_budget_set, framescale::eval::Strategy::FseIfe, cfg.execution)
            .unwrap()
            .average;
    let sets = experiment::eval_sets(cfg, &pool).unwrap();
    let gammas: Vec<usize> = cfg.eval_lengths.iter().map(|&l| interleave_factor(l, &cfg.encoding).unwrap()).collect();
    let ife = sweep_lengths_ife(&model, &sets, &gammas, cfg.execution).unwrap();
    let ife_time = t.elapsed();

    let t = Instant::now();
    let sweep_set = framescale::bench::make_needle_dataset_with_pool(
        cfg.eval_samples,
        cfg.sweep_length,
        &cfg.needle,
        rng::derive_seed(cfg.seed, "sweep-set", 0),
        &pool,
        cfg.execution,
    )
    .unwrap();
    let clips = sweep_clips(&model, &sweep_set, &cfg.sweep_clips, cfg.execution).unwrap();
    Experiment { ife, ife_time, clips, clip_time: t.elapsed(), in_budget }
}

fn ife_experiment(e: &Experiment, cfg: &ExperimentConfig) -> Outcome {
    let mut ok = true;
    let mut parts = vec![format!("in-budget {:.1}", e.in_budget)];
    for p in &e.ife.points {
        let a = p.ife >= p.truncated;
        let b = p.ife >= p.baseline && p.truncated >= p.baseline;
        let c = p.truncated_outside.is_some_and(|x| (x - CHANCE_PERCENT).abs() <= 10.0);
        ok &= a && b && c;
        parts.push(format!(
            "{} s (gamma {}): ife {:.1} truncated {:.1} baseline {:.1} truncated-outside {:?} over {} [a {a} b {b} c {c}]",
            p.length_s, p.gamma, p.ife, p.truncated, p.baseline, p.truncated_outside, p.outside_count
        ));
    }
    let covered = e.ife.points.len() == cfg.eval_lengths.len();
    let (fast, time) = within(e.ife_time, 15.0 * 60.0);
    parts.push(time);
    check(ok && covered && fast, parts.join("; "))
}

fn clip_sweep(e: &Experiment, cfg: &ExperimentConfig) -> Outcome {
    let hi = e.clips.at(cfg.encoding.max_clips);
    let lo = e.clips.at(1);
    let gain = match (hi, lo) {
        (Some(h), Some(l)) => h - l,
        _ => f64::NEG_INFINITY,
    };
    let curve: Vec<String> = e
        .clips
        .points
        .iter()
        .map(|p| format!("{}:{}", p.clips, p.accuracy.map(|a| format!("{a:.1}")).unwrap_or("-".into())))
        .collect();
    let (fast, time) = within(e.clip_time, 5.0 * 60.0);
    check(gain >= 10.0 && fast, format!("curve [{}]; gain {gain:.1} points; {time}", curve.join(" ")))
}

fn main() {
    let cfg = ExperimentConfig::default();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "schedule conformance", schedule_conformance()),
        (2, "position bound", position_bound()),
        (3, "single-group recovery", single_group_recovery()),
        (4, "gradient correctness", gradient_correctness()),
        (5, "bench determinism and structure", bench_structure()),
        (6, "rouge oracle", rouge_oracle()),
    ];
    for (n, name, o) in &results {
        println!("criterion {n} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let e = run_experiment(&cfg);
    for (n, name, o) in [
        (7, "interleaved encoding beyond the training length", ife_experiment(&e, &cfg)),
        (8, "clip-count sweep", clip_sweep(&e, &cfg)),
    ] {
        println!("criterion {n} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
