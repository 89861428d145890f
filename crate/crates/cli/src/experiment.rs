//! Weights and token streams for an experiment.

use gsi_core::corpus::{flatten, parse_corpus};
use gsi_core::model::{init_planted, init_random, load_weights, sample_sequence, ModelWeights};

use crate::config::{ExperimentConfig, ModelSource, Workspace};
use crate::error::{CliError, Result};

/// Seed offsets so the weight, calibration and evaluation streams never share
/// a generator state.
const CALIBRATION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const EVAL_STREAM: u64 = 0xbf58_476d_1ce4_e5b9;

#[derive(Clone, Debug)]
pub struct Setup {
    pub weights: ModelWeights,
    pub calibration: Vec<u32>,
    pub eval: Vec<u32>,
    pub prompt: Vec<u32>,
    pub generate: usize,
}

pub fn load_model(ws: &Workspace, cfg: &ExperimentConfig) -> Result<ModelWeights> {
    let arch = cfg.model.architecture()?;
    let weights = match (cfg.model.source, arch) {
        (ModelSource::Random, Some(a)) => init_random(&a, cfg.seed)?,
        (ModelSource::Planted, Some(a)) => init_planted(&a, cfg.model.planted_rank.unwrap_or_default(), cfg.seed)?,
        (_, _) => {
            let path = ws.resolve(cfg.model.path.as_deref().expect("validated"));
            load_weights(&path)?
        }
    };
    Ok(weights)
}

pub fn prepare(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Setup> {
    let weights = load_model(ws, cfg)?;
    let d = &cfg.data;
    let mc = weights.config;
    if d.eval_tokens > mc.max_seq {
        return Err(CliError::Config(format!(
            "data.eval_tokens {} exceeds the model context {}",
            d.eval_tokens, mc.max_seq
        )));
    }
    if d.prompt_tokens + d.generate_tokens > mc.max_seq {
        return Err(CliError::Config(format!(
            "prompt_tokens + generate_tokens = {} exceeds the model context {}",
            d.prompt_tokens + d.generate_tokens,
            mc.max_seq
        )));
    }
    let (calibration, eval) = match &d.corpus {
        Some(rel) => {
            let path = ws.resolve(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let tokens = flatten(&parse_corpus(&text)?);
            let need = d.calibration_tokens + d.eval_tokens;
            if tokens.len() < need {
                return Err(CliError::Config(format!(
                    "{} holds {} tokens; calibration + evaluation need {need}",
                    path.display(),
                    tokens.len()
                )));
            }
            if let Some((i, t)) = tokens[..need]
                .iter()
                .enumerate()
                .find(|(_, t)| **t as usize >= mc.vocab)
            {
                return Err(CliError::Config(format!(
                    "{}: token {t} at offset {i} is outside the model vocabulary of {}",
                    path.display(),
                    mc.vocab
                )));
            }
            (
                tokens[..d.calibration_tokens].to_vec(),
                tokens[d.calibration_tokens..need].to_vec(),
            )
        }
        None => {
            let calibration = sample_windows(
                &weights,
                d.calibration_tokens,
                d.temperature,
                cfg.seed ^ CALIBRATION_STREAM,
            )?;
            let eval = sample_windows(&weights, d.eval_tokens, d.temperature, cfg.seed ^ EVAL_STREAM)?;
            (calibration, eval)
        }
    };
    let prompt = eval[..d.prompt_tokens].to_vec();
    Ok(Setup {
        weights,
        calibration,
        eval,
        prompt,
        generate: d.generate_tokens,
    })
}

/// Model-sampled text in independent context windows, each opened by a
/// seeded start token.
fn sample_windows(weights: &ModelWeights, n: usize, temperature: f64, seed: u64) -> Result<Vec<u32>> {
    let max = weights.config.max_seq;
    let vocab = weights.config.vocab as u64;
    let mut out = Vec::with_capacity(n);
    let mut window = 0u64;
    while out.len() < n {
        let len = (n - out.len()).min(max);
        let s = seed.wrapping_add(window);
        let start = (s.wrapping_mul(0x2545_f491_4f6c_dd1d) >> 33) % vocab;
        out.extend(sample_sequence(weights, &[start as u32], len - 1, temperature, s)?);
        window += 1;
    }
    Ok(out)
}
