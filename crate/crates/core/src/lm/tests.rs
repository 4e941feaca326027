use super::*;
use crate::error::Error;
use crate::par::Execution;
use crate::pipeline::EmbeddingSeq;
use crate::rng;
use rand::Rng;

fn tiny_config() -> LmConfig {
    LmConfig {
        vocab: 7,
        d_model: 8,
        heads: 2,
        layers: 2,
        mlp_hidden: 12,
        max_positions: 16,
    }
}

fn random_prefix(rows: usize, dim: usize, gamma: usize, seed: u64) -> EmbeddingSeq {
    let mut r = rng::stream(seed, "prefix", 0);
    let data = (0..rows * dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let positions = crate::pipeline::assign_positions(rows, gamma, 0).unwrap();
    EmbeddingSeq::new(data, dim, positions, gamma).unwrap()
}

fn tiny_batch(cfg: &LmConfig) -> Vec<Example> {
    vec![
        Example {
            prefix: random_prefix(4, cfg.d_model, 2, 1),
            tokens: vec![1, 3, 5],
            targets: vec![(1, 4), (2, 2)],
        },
        Example {
            prefix: random_prefix(3, cfg.d_model, 1, 2),
            tokens: vec![6, 0],
            targets: vec![(1, 1)],
        },
    ]
}

/// Perturbs every parameter so gains and biases are not at their symmetric init.
fn jittered(cfg: LmConfig, seed: u64) -> ToyLmParams {
    let mut p = ToyLmParams::init(cfg, seed).unwrap();
    let mut r = rng::stream(seed, "jitter", 0);
    p.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x += r.random_range(-0.2..0.2)));
    p
}

#[test]
fn logits_shape_for_single_token() {
    let cfg = tiny_config();
    let p = ToyLmParams::init(cfg, 0).unwrap();
    let logits = forward(&EmbeddingSeq::empty(cfg.d_model), &[3], &p).unwrap();
    assert_eq!((logits.rows, logits.vocab), (1, cfg.vocab));
    assert!(logits.data.iter().all(|v| v.is_finite()));
}

#[test]
fn hand_computed_single_head_forward() {
    let cfg = LmConfig {
        vocab: 2,
        d_model: 2,
        heads: 1,
        layers: 1,
        mlp_hidden: 1,
        max_positions: 2,
    };
    let mut p = ToyLmParams::init(cfg, 0).unwrap();
    p.token_embedding = vec![1.0, 0.0, 0.0, 1.0];
    p.position_embedding = vec![0.0; 4];
    let eye = vec![1.0, 0.0, 0.0, 1.0];
    let l = &mut p.layers[0];
    l.ln1_gain = vec![1.0; 2];
    l.ln1_bias = vec![0.0; 2];
    l.w_query = eye.clone();
    l.w_key = eye.clone();
    l.w_value = eye.clone();
    l.w_attn_out = eye.clone();
    l.b_attn_out = vec![0.0; 2];
    l.ln2_gain = vec![1.0; 2];
    l.ln2_bias = vec![0.0; 2];
    l.w_fc = vec![0.0; 2];
    l.b_fc = vec![0.0];
    l.w_proj = vec![0.0; 2];
    l.b_proj = vec![0.0; 2];
    p.lnf_gain = vec![1.0; 2];
    p.lnf_bias = vec![0.0; 2];
    p.w_out = eye;
    p.b_out = vec![0.0; 2];

    let eps = ops::LN_EPS;
    // LN of [1, 0] is [s, -s].
    let s = 0.5 / (0.25 + eps).sqrt();
    let score = 2.0 * s * s / 2f64.sqrt();
    let (p0, p1) = {
        let a = (-score).exp();
        let b = score.exp();
        (a / (a + b), b / (a + b))
    };
    let ln2 = |a: f64, b: f64| {
        let delta = (a - b) / 2.0;
        let z = delta / (delta * delta + eps).sqrt();
        [z, -z]
    };
    let row0 = ln2(1.0 + s, -s);
    let row1 = ln2(s * (p0 - p1), 1.0 - s * (p0 - p1));

    let logits = forward(&EmbeddingSeq::empty(2), &[0, 1], &p).unwrap();
    for (got, want) in logits.data.iter().zip(row0.iter().chain(row1.iter())) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn shared_position_rows_get_identical_vectors_and_symmetric_scores() {
    let cfg = tiny_config();
    let p = jittered(cfg, 3);
    let row: Vec<f32> = (0..cfg.d_model).map(|i| i as f32 * 0.1 - 0.3).collect();
    let prefix = EmbeddingSeq::new([row.clone(), row].concat(), cfg.d_model, vec![0, 0], 2).unwrap();
    let trace = forward_trace(&p, &prefix, &[]).unwrap();
    assert_eq!(trace.positions(), &[0, 0]);
    for layer in 0..cfg.layers {
        for head in 0..cfg.heads {
            let a = trace.attention(layer, head);
            // Row 1 sees two identical keys: equal weights.
            assert!((a[2] - a[3]).abs() < 1e-15);
            assert!((a[2] - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn swapping_identical_rows_at_one_position_is_invisible() {
    let cfg = tiny_config();
    let p = jittered(cfg, 4);
    let base = random_prefix(4, cfg.d_model, 2, 9);
    let mut dup = base.clone();
    let d = cfg.d_model;
    let first: Vec<f32> = dup.rows[..d].to_vec();
    dup.rows[d..2 * d].copy_from_slice(&first);
    let mut swapped = dup.clone();
    let (a, b) = swapped.rows.split_at_mut(d);
    a.swap_with_slice(&mut b[..d]);
    let x = forward(&dup, &[2, 3], &p).unwrap();
    let y = forward(&swapped, &[2, 3], &p).unwrap();
    assert_eq!(x, y);
}

#[test]
fn causal_masking() {
    let cfg = tiny_config();
    let p = jittered(cfg, 5);
    let prefix = random_prefix(2, cfg.d_model, 1, 3);
    let a = forward(&prefix, &[1, 2, 3, 4], &p).unwrap();
    let b = forward(&prefix, &[1, 2, 6, 0], &p).unwrap();
    for r in 0..4 {
        assert_eq!(a.row(r), b.row(r));
    }
    assert_ne!(a.row(4), b.row(4));
}

#[test]
fn attention_rows_sum_to_one() {
    let cfg = tiny_config();
    let p = jittered(cfg, 6);
    let prefix = random_prefix(6, cfg.d_model, 3, 4);
    let trace = forward_trace(&p, &prefix, &[1, 2]).unwrap();
    let t = trace.len();
    for layer in 0..cfg.layers {
        for head in 0..cfg.heads {
            let a = trace.attention(layer, head);
            for i in 0..t {
                let s: f64 = a[i * t..(i + 1) * t].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert!(a[i * t + i + 1..(i + 1) * t].iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn errors() {
    let cfg = tiny_config();
    let p = ToyLmParams::init(cfg, 0).unwrap();
    let long = random_prefix(16, cfg.d_model, 1, 0);
    assert!(matches!(forward(&long, &[1], &p), Err(Error::Capacity { position: 16, capacity: 16 })));
    assert!(matches!(
        forward(&EmbeddingSeq::empty(cfg.d_model), &[7], &p),
        Err(Error::Vocab { id: 7, vocab: 7 })
    ));
    assert!(loss_and_grads(&[], &p, Execution::Sequential).is_err());
    let wrong_dim = random_prefix(2, 3, 1, 0);
    assert!(matches!(forward(&wrong_dim, &[1], &p), Err(Error::Shape(_))));
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let cfg = tiny_config();
    let mut p = jittered(cfg, 7);
    p.w_out.iter_mut().for_each(|x| *x = 0.0);
    p.b_out.iter_mut().for_each(|x| *x = 0.0);
    let (l, _) = loss_and_grads(&tiny_batch(&cfg), &p, Execution::Sequential).unwrap();
    assert!((l - (cfg.vocab as f64).ln()).abs() < 1e-12);
}

#[test]
fn masked_targets_give_zero_gradients() {
    let cfg = tiny_config();
    let p = jittered(cfg, 8);
    let mut batch = tiny_batch(&cfg);
    batch.iter_mut().for_each(|e| e.targets.clear());
    let (l, g) = loss_and_grads(&batch, &p, Execution::Parallel).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
}

/// Central finite differences over every scalar parameter.
fn finite_difference(batch: &[Example], params: &ToyLmParams, h: f64) -> ToyLmParams {
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        for i in 0..params.tensors()[ti].len() {
            let orig = params.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + h;
            let up = loss(batch, &probe).unwrap();
            probe.tensors_mut()[ti][i] = orig - h;
            let down = loss(batch, &probe).unwrap();
            probe.tensors_mut()[ti][i] = orig;
            grads.tensors_mut()[ti][i] = (up - down) / (2.0 * h);
        }
    }
    grads
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = tiny_config();
    let p = jittered(cfg, 9);
    assert!(p.num_params() < 10_000);
    let batch = tiny_batch(&cfg);
    let (_, analytic) = loss_and_grads(&batch, &p, Execution::Sequential).unwrap();
    let numeric = finite_difference(&batch, &p, 1e-3);
    for ((name, _), (a, n)) in p.layout().iter().zip(analytic.tensors().iter().zip(numeric.tensors())) {
        let diff: f64 = a.iter().zip(n.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = if na.max(nn) == 0.0 { 0.0 } else { diff / na.max(nn) };
        assert!(rel < 1e-3, "{name}: relative error {rel}");
    }
}

#[test]
fn parallel_and_sequential_gradients_are_identical() {
    let cfg = tiny_config();
    let p = jittered(cfg, 10);
    let batch = tiny_batch(&cfg);
    let a = loss_and_grads(&batch, &p, Execution::Sequential).unwrap();
    let b = loss_and_grads(&batch, &p, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

fn toy_task(cfg: &LmConfig) -> Vec<Example> {
    // Copy the first text token after a marker.
    (0..24)
        .map(|i| {
            let tok = 3 + (i % 4) as u32;
            Example {
                prefix: random_prefix(2, cfg.d_model, 1, i as u64),
                tokens: vec![1, tok, 2],
                targets: vec![(2, tok)],
            }
        })
        .collect()
}

#[test]
fn zero_steps_leave_params_unchanged() {
    let cfg = tiny_config();
    let p0 = ToyLmParams::init(cfg, 1).unwrap();
    let mut p = p0.clone();
    let tc = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let report = train(&toy_task(&cfg), &tc, &mut p).unwrap();
    assert!(report.losses.is_empty());
    assert_eq!(p, p0);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let cfg = tiny_config();
    let tc = TrainConfig {
        steps: 60,
        batch_size: 8,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let data = toy_task(&cfg);
    let mut a = ToyLmParams::init(cfg, 2).unwrap();
    let mut b = a.clone();
    let ra = train(&data, &tc, &mut a).unwrap();
    let rb = train(&data, &TrainConfig { execution: Execution::Sequential, ..tc }, &mut b).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    let first = ra.losses[0].1;
    let last = ra.losses.last().unwrap().1;
    assert!(last < first * 0.5, "loss {first} -> {last}");
    assert!(ra.to_csv().starts_with("step,loss\n0,"));
}

#[test]
fn divergence_is_reported_with_step() {
    let cfg = tiny_config();
    let mut p = ToyLmParams::init(cfg, 2).unwrap();
    p.w_out[0] = f64::NAN;
    let tc = TrainConfig {
        steps: 3,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&toy_task(&cfg), &tc, &mut p), Err(Error::Divergence { step: 0, .. })));
}

#[test]
fn greedy_generation() {
    let cfg = tiny_config();
    let mut p = jittered(cfg, 11);
    let prefix = random_prefix(2, cfg.d_model, 1, 5);
    assert!(generate(&prefix, &[1], &p, 0, 2).unwrap().is_empty());
    p.w_out.iter_mut().for_each(|x| *x = 0.0);
    p.b_out = vec![0.0; cfg.vocab];
    p.b_out[3] = 10.0;
    assert_eq!(generate(&prefix, &[1], &p, 4, 2).unwrap(), vec![3, 3, 3, 3]);
    p.b_out[2] = 20.0;
    assert!(generate(&prefix, &[1], &p, 4, 2).unwrap().is_empty());
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let cfg = tiny_config();
    let p = ToyLmParams::init(cfg, 4).unwrap();
    p.save_checkpoint(&path, 4, 0, serde_json::json!({"note": "x"})).unwrap();
    let (q, header) = ToyLmParams::load_checkpoint(&path).unwrap();
    assert_eq!(q, p);
    assert_eq!((header.seed, header.step, header.dims), (4, 0, cfg));
    assert_eq!(header.config["note"], "x");
}
