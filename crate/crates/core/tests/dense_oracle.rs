//! The KV-cached, gate-aware decoder against a from-scratch full-sequence
//! forward pass. The oracle uses the same summation order, so dense and
//! all-slow runs must agree bit for bit, not merely to a tolerance.

use gsi_core::model::{
    calibrate, forward, init_random, CalibrationOptions, GsiRuntime, ModelConfig, ModelWeights, Positional,
};
use gsi_core::{DenseMatrix, ExecutionMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(positional: Positional) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_layers: 3,
        n_heads: 4,
        d_ff: 64,
        vocab: 50,
        max_seq: 48,
        positional,
    }
}

fn tokens(n: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn mv(m: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| {
            let mut s = 0.0;
            for j in 0..m.cols() {
                s += m[(i, j)] * x[j];
            }
            s
        })
        .collect()
}

fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    (0..x.len()).map(|i| (x[i] - mean) * inv * g[i] + b[i]).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn oracle(w: &ModelWeights, toks: &[u32]) -> Vec<Vec<f64>> {
    let cfg = w.config;
    let (d, nh) = (cfg.d_model, cfg.n_heads);
    let hd = d / nh;
    let mut h: Vec<Vec<f64>> = toks
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            let mut e = w.token_embedding.row(t as usize).to_vec();
            if let Some(pe) = &w.position_embedding {
                for i in 0..d {
                    e[i] += pe[(p, i)];
                }
            }
            e
        })
        .collect();
    for lw in &w.layers {
        let qkv: Vec<Vec<f64>> = h
            .iter()
            .map(|x| mv(&lw.qkv, &ln(x, &lw.ln1_gain, &lw.ln1_bias)))
            .collect();
        for t in 0..h.len() {
            let mut att = vec![0.0; d];
            for head in 0..nh {
                let off = head * hd;
                let scores: Vec<f64> = (0..=t)
                    .map(|j| {
                        let mut s = 0.0;
                        for i in 0..hd {
                            s += qkv[t][off + i] * qkv[j][d + off + i];
                        }
                        s * (1.0 / (hd as f64).sqrt())
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let mut z = 0.0;
                for v in &e {
                    z += v;
                }
                for j in 0..=t {
                    for i in 0..hd {
                        att[off + i] += (e[j] / z) * qkv[j][2 * d + off + i];
                    }
                }
            }
            let o = mv(&lw.out_proj, &att);
            for i in 0..d {
                h[t][i] += o[i];
            }
            let up = mv(&lw.mlp_up, &ln(&h[t], &lw.ln2_gain, &lw.ln2_bias));
            let act: Vec<f64> = up.into_iter().map(gelu).collect();
            let down = mv(&lw.mlp_down, &act);
            for i in 0..d {
                h[t][i] += down[i];
            }
        }
    }
    h.iter()
        .map(|x| mv(&w.lm_head, &ln(x, &w.final_gain, &w.final_bias)))
        .collect()
}

fn assert_bitwise(logits: &DenseMatrix, expected: &[Vec<f64>]) {
    assert_eq!(logits.rows(), expected.len());
    for (t, row) in expected.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(logits[(t, j)].to_bits(), v.to_bits(), "position {t}, logit {j}");
        }
    }
}

#[test]
fn baseline_matches_oracle_bitwise() {
    for positional in [Positional::Learned, Positional::None] {
        let w = init_random(&config(positional), 11).unwrap();
        let toks = tokens(40, 50, 3);
        let mut rt = GsiRuntime::baseline(3);
        assert_bitwise(&forward(&w, &mut rt, &toks).unwrap(), &oracle(&w, &toks));
    }
}

#[test]
fn all_slow_gated_run_matches_oracle_bitwise() {
    let w = init_random(&config(Positional::Learned), 12).unwrap();
    let cal = tokens(40, 50, 4);
    let mut c = calibrate(&w, &cal, &CalibrationOptions::new(8)).unwrap();
    c.runtime.set_mode(ExecutionMode::gated(f64::MIN_POSITIVE).unwrap());
    let toks = tokens(30, 50, 5);
    let logits = forward(&w, &mut c.runtime, &toks).unwrap();
    assert_bitwise(&logits, &oracle(&w, &toks));
    assert_eq!(c.runtime.total_stats().fast, 0);
    assert_eq!(c.runtime.image_reads(), 0);
}

#[test]
fn baseline_mode_with_bases_never_reads_images() {
    let w = init_random(&config(Positional::Learned), 13).unwrap();
    let mut c = calibrate(&w, &tokens(40, 50, 6), &CalibrationOptions::new(8)).unwrap();
    let toks = tokens(20, 50, 7);
    let logits = forward(&w, &mut c.runtime, &toks).unwrap();
    assert_bitwise(&logits, &oracle(&w, &toks));
    assert_eq!(c.runtime.image_reads(), 0);
    let s = c.runtime.total_stats();
    assert_eq!(s.total, 20 * 3 * 4);
    assert_eq!(s.gate_reads, 0);
}

#[test]
fn complete_basis_fast_path_is_numerically_exact() {
    let w = init_random(&config(Positional::Learned), 14).unwrap();
    let mut c = calibrate(&w, &tokens(40, 50, 8), &CalibrationOptions::new(32)).unwrap();
    c.runtime.set_mode(ExecutionMode::gated(0.1).unwrap());
    let toks = tokens(30, 50, 9);
    let logits = forward(&w, &mut c.runtime, &toks).unwrap();
    let expected = oracle(&w, &toks);
    let mut worst: f64 = 0.0;
    for (t, row) in expected.iter().enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e = row
            .iter()
            .enumerate()
            .map(|(j, v)| (logits[(t, j)] - v).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(e / n);
    }
    assert!(worst < 1e-10, "relative error {worst:e}");
    assert!(c.runtime.total_stats().fast > 0);
}
