//! Analytical speedup, effective-parameter and roofline arithmetic.
//!
//! Everything here is closed-form. Read volumes are in weight elements;
//! [`HardwareProfile::element_bytes`] turns them into bytes for a deployment
//! (BF16 by default) independently of the 64-bit simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight-read speedup of one layer: `1 / (f·k/d + (1 − f))`.
pub fn layer_speedup(fast_fraction: f64, d: usize, k: usize) -> Result<f64> {
    check_fraction(fast_fraction)?;
    if k == 0 || k > d {
        return Err(Error::RankOutOfRange {
            k,
            max: d,
            context: "speedup rank vs. input width",
        });
    }
    Ok(1.0 / (fast_fraction * k as f64 / d as f64 + (1.0 - fast_fraction)))
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidParameter(format!(
            "fast-path fraction {f} outside [0, 1]"
        )));
    }
    Ok(())
}

/// One layer's contribution to the model-wide speedup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVolume {
    pub fast_fraction: f64,
    /// Elements read by the dense path per token.
    pub full_reads: f64,
    /// Elements read by the fast path per token.
    pub fast_reads: f64,
}

impl LayerVolume {
    pub fn accelerated_reads(&self) -> f64 {
        self.fast_fraction * self.fast_reads + (1.0 - self.fast_fraction) * self.full_reads
    }
}

/// Total dense reads over total accelerated reads; the same as the
/// volume-weighted harmonic mean of per-layer speedups.
pub fn model_speedup(layers: &[LayerVolume]) -> Result<f64> {
    if layers.is_empty() {
        return Err(Error::Empty("model speedup needs at least one layer"));
    }
    let mut full = 0.0;
    let mut accel = 0.0;
    for l in layers {
        check_fraction(l.fast_fraction)?;
        if !(l.full_reads > 0.0) || l.fast_reads < 0.0 {
            return Err(Error::InvalidParameter("layer read volumes must be positive".into()));
        }
        full += l.full_reads;
        accel += l.accelerated_reads();
    }
    Ok(full / accel)
}

/// A gated `d_out × d_in` map with its basis rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatedMapShape {
    pub name: String,
    pub d_out: usize,
    pub d_in: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShapes {
    pub d_model: usize,
    pub vocab: usize,
    /// Gated maps of each layer.
    pub layers: Vec<Vec<GatedMapShape>>,
}

impl ModelShapes {
    /// Every layer carries the same maps.
    pub fn uniform(d_model: usize, vocab: usize, n_layers: usize, maps: Vec<GatedMapShape>) -> Self {
        Self {
            d_model,
            vocab,
            layers: vec![maps; n_layers],
        }
    }

    /// GPT-J 6B: 28 layers, d = 4096, d_ff = 16384, fused QKV, vocabulary 50400.
    /// The down projection's rank scales with its input width.
    pub fn gptj_6b(k: usize) -> Self {
        let (d, d_ff) = (4096, 16384);
        Self::uniform(
            d,
            50_400,
            28,
            vec![
                GatedMapShape {
                    name: "qkv".into(),
                    d_out: 3 * d,
                    d_in: d,
                    rank: k,
                },
                GatedMapShape {
                    name: "out".into(),
                    d_out: d,
                    d_in: d,
                    rank: k,
                },
                GatedMapShape {
                    name: "up".into(),
                    d_out: d_ff,
                    d_in: d,
                    rank: k,
                },
                GatedMapShape {
                    name: "down".into(),
                    d_out: d,
                    d_in: d_ff,
                    rank: k * d_ff / d,
                },
            ],
        )
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameters in the gated maps.
    pub fn gated_params(&self) -> u64 {
        self.layers.iter().flatten().map(|m| (m.d_out * m.d_in) as u64).sum()
    }

    /// Per-layer read volumes for [`model_speedup`].
    pub fn layer_volumes(&self, fast_fractions: &[f64]) -> Result<Vec<LayerVolume>> {
        self.check_layers(fast_fractions.len())?;
        Ok(self
            .layers
            .iter()
            .zip(fast_fractions)
            .map(|(maps, &f)| LayerVolume {
                fast_fraction: f,
                full_reads: maps.iter().map(|m| (m.d_out * m.d_in) as f64).sum(),
                fast_reads: maps.iter().map(|m| (m.d_out * m.rank) as f64).sum(),
            })
            .collect())
    }

    fn check_layers(&self, n: usize) -> Result<()> {
        if n != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "per-layer fast fractions vs. layer count",
                expected: self.layers.len(),
                actual: n,
            });
        }
        Ok(())
    }
}

/// `Σ_maps d_out·[f·k + (1 − f)·d_in]`: parameters touched per token.
pub fn effective_params(shapes: &ModelShapes, fast_fractions: &[f64]) -> Result<f64> {
    shapes.check_layers(fast_fractions.len())?;
    let mut total = 0.0;
    for (maps, &f) in shapes.layers.iter().zip(fast_fractions) {
        check_fraction(f)?;
        for m in maps {
            total += m.d_out as f64 * (f * m.rank as f64 + (1.0 - f) * m.d_in as f64);
        }
    }
    Ok(total)
}

/// Effective parameters from a nominal parameter count, assuming every
/// gated map has input width `d`: `total · (f·k/d + 1 − f)`.
pub fn effective_params_nominal(total_params: f64, fast_fraction: f64, d: usize, k: usize) -> Result<f64> {
    Ok(total_params / layer_speedup(fast_fraction, d, k)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// bytes / second
    pub bandwidth: f64,
    /// FLOPs / second
    pub compute: f64,
    pub element_bytes: u32,
}

impl HardwareProfile {
    /// AMD MI300X: 5.3 TB/s HBM3, 383 TFLOPS BF16.
    pub fn mi300x() -> Self {
        Self {
            bandwidth: 5.3e12,
            compute: 383e12,
            element_bytes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.compute > 0.0 && self.element_bytes > 0) {
            return Err(Error::InvalidParameter(
                "hardware bandwidth, compute and element size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Arithmetic intensity at which the two ceilings meet.
    pub fn crossover_intensity(&self) -> f64 {
        self.compute / self.bandwidth
    }
}

impl Default for HardwareProfile {
    fn default() -> Self {
        Self::mi300x()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    BandwidthBound,
    ComputeBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub seconds: f64,
    pub regime: Regime,
    /// FLOPs per byte; infinite when nothing is read.
    pub intensity: f64,
}

/// `max(bytes / bandwidth, flops / compute)`.
pub fn roofline_time(bytes: f64, flops: f64, hw: &HardwareProfile) -> Result<RooflinePoint> {
    hw.validate()?;
    if !(bytes >= 0.0 && flops >= 0.0) {
        return Err(Error::InvalidParameter("bytes and FLOPs must be non-negative".into()));
    }
    let memory = bytes / hw.bandwidth;
    let compute = flops / hw.compute;
    let regime = if bytes > 0.0 && memory >= compute {
        Regime::BandwidthBound
    } else {
        Regime::ComputeBound
    };
    let intensity = if bytes > 0.0 { flops / bytes } else { f64::INFINITY };
    Ok(RooflinePoint {
        seconds: memory.max(compute),
        regime,
        intensity,
    })
}

/// Baseline seconds per forward-pass component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentTimes {
    pub weight_reads: f64,
    pub attention: f64,
    pub vocab_head: f64,
    pub norms: f64,
}

impl ComponentTimes {
    /// The published GPT-J 6B batch-1 MI300X component costs at T = 512.
    pub fn gptj_table() -> Self {
        Self {
            weight_reads: 1.02e-3,
            attention: 0.15e-3,
            vocab_head: 0.08e-3,
            norms: 0.05e-3,
        }
    }

    /// Roofline estimates from shapes: one token at context `context`, KV
    /// cache reads for attention, and the layer-norm/residual traffic.
    pub fn from_shapes(shapes: &ModelShapes, hw: &HardwareProfile, context: usize) -> Result<Self> {
        let eb = hw.element_bytes as f64;
        let weights = shapes.gated_params() as f64;
        let weight_reads = roofline_time(weights * eb, 2.0 * weights, hw)?.seconds;
        let (l, d, t) = (shapes.n_layers() as f64, shapes.d_model as f64, context as f64);
        let kv = 2.0 * l * t * d;
        let attention = roofline_time(kv * eb, 2.0 * kv, hw)?.seconds;
        let head = (shapes.vocab * shapes.d_model) as f64;
        let vocab_head = roofline_time(head * eb, 2.0 * head, hw)?.seconds;
        // two norms (read + write) and two residual adds (two reads + write) per layer, plus the final norm
        let norm_elems = (l * (2.0 * 2.0 + 2.0 * 3.0) + 2.0) * d;
        let norms = roofline_time(norm_elems * eb, 8.0 * norm_elems, hw)?.seconds;
        Ok(Self {
            weight_reads,
            attention,
            vocab_head,
            norms,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub name: String,
    pub baseline: f64,
    pub accelerated: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub components: Vec<ComponentCost>,
    pub total_baseline: f64,
    pub total_accelerated: f64,
    pub total_speedup: f64,
}

/// Scales weight reads by `weight_speedup` and attention by the supplied
/// `attention_speedup`; the vocabulary head and norms stay as they are.
pub fn end_to_end_estimate(
    baseline: &ComponentTimes,
    weight_speedup: f64,
    attention_speedup: f64,
) -> Result<CostBreakdown> {
    if !(attention_speedup >= 1.0) || !(weight_speedup >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "speedup factors must be >= 1 (weights {weight_speedup}, attention {attention_speedup})"
        )));
    }
    let parts = [
        ("weight_reads", baseline.weight_reads, weight_speedup),
        ("attention", baseline.attention, attention_speedup),
        ("vocab_head", baseline.vocab_head, 1.0),
        ("norms_residuals", baseline.norms, 1.0),
    ];
    let components: Vec<ComponentCost> = parts
        .iter()
        .map(|&(name, base, s)| ComponentCost {
            name: name.to_owned(),
            baseline: base,
            accelerated: base / s,
            speedup: s,
        })
        .collect();
    let total_baseline: f64 = components.iter().map(|c| c.baseline).sum();
    let total_accelerated: f64 = components.iter().map(|c| c.accelerated).sum();
    Ok(CostBreakdown {
        components,
        total_baseline,
        total_accelerated,
        total_speedup: total_baseline / total_accelerated,
    })
}

/// Full estimate from shapes and measured per-layer fast fractions.
pub fn estimate_from_stats(
    shapes: &ModelShapes,
    fast_fractions: &[f64],
    hw: &HardwareProfile,
    context: usize,
    attention_speedup: f64,
) -> Result<CostBreakdown> {
    let weight_speedup = model_speedup(&shapes.layer_volumes(fast_fractions)?)?;
    end_to_end_estimate(
        &ComponentTimes::from_shapes(shapes, hw, context)?,
        weight_speedup,
        attention_speedup,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_speedup_limits() {
        assert_eq!(layer_speedup(1.0, 4096, 256).unwrap(), 16.0);
        assert_eq!(layer_speedup(0.0, 4096, 256).unwrap(), 1.0);
        assert_eq!(layer_speedup(0.37, 64, 64).unwrap(), 1.0);
        assert!(layer_speedup(1.1, 8, 2).is_err());
        assert!(layer_speedup(0.5, 8, 9).is_err());
        assert!(layer_speedup(0.5, 8, 0).is_err());
    }

    #[test]
    fn layer_speedup_published_operating_points() {
        let gptj = layer_speedup(0.998, 4096, 256).unwrap();
        assert!((gptj - 15.53).abs() < 0.005, "{gptj}");
        let opt = layer_speedup(0.965, 4096, 256).unwrap();
        assert!((opt - 10.49).abs() < 0.005, "{opt}");
        assert_eq!(layer_speedup(1.0, 768, 256).unwrap(), 3.0);
    }

    #[test]
    fn model_speedup_cases() {
        let v = |f| LayerVolume {
            fast_fraction: f,
            full_reads: 16.0,
            fast_reads: 1.0,
        };
        assert_eq!(
            model_speedup(&[v(0.7), v(0.7)]).unwrap(),
            layer_speedup(0.7, 16, 1).unwrap()
        );
        // direct byte totals: (16 + 16) / (1 + 16)
        let mixed = model_speedup(&[v(1.0), v(0.0)]).unwrap();
        assert!((mixed - 32.0 / 17.0).abs() < 1e-15);
        assert!((mixed - 1.882).abs() < 5e-4);
        assert_eq!(model_speedup(&[v(0.0), v(0.0), v(0.0)]).unwrap(), 1.0);
        assert!(model_speedup(&[]).is_err());
    }

    #[test]
    fn effective_params_identities() {
        let shapes = ModelShapes::gptj_6b(256);
        let n = shapes.n_layers();
        let dense = effective_params(&shapes, &vec![0.0; n]).unwrap();
        assert_eq!(dense, shapes.gated_params() as f64);
        let all_fast = effective_params(&shapes, &vec![1.0; n]).unwrap();
        assert_eq!(all_fast * 16.0, dense);
        assert!(effective_params(&shapes, &[0.5]).is_err());
    }

    #[test]
    fn effective_params_nominal_gptj() {
        let p = effective_params_nominal(6e9, 0.998, 4096, 256).unwrap();
        // 6e9 · (0.998/16 + 0.002) = 6e9 · 0.064375
        assert!((p - 386.25e6).abs() < 1.0);
    }

    #[test]
    fn roofline_cases() {
        let hw = HardwareProfile::mi300x();
        assert!((hw.crossover_intensity() - 72.26).abs() < 0.01);
        let gemv = roofline_time(2.0 * 4096.0 * 4096.0, 2.0 * 4096.0 * 4096.0, &hw).unwrap();
        assert_eq!(gemv.regime, Regime::BandwidthBound);
        assert_eq!(gemv.intensity, 1.0);
        let no_bytes = roofline_time(0.0, 1e9, &hw).unwrap();
        assert_eq!(no_bytes.regime, Regime::ComputeBound);
        let sweep = roofline_time(5.4e9, 0.0, &hw).unwrap();
        assert!((sweep.seconds - 1.0189e-3).abs() < 1e-7);
        assert!(roofline_time(-1.0, 0.0, &hw).is_err());
    }

    #[test]
    fn end_to_end_published_table() {
        let s = layer_speedup(0.998, 4096, 256).unwrap();
        let b = end_to_end_estimate(&ComponentTimes::gptj_table(), s, 6.2).unwrap();
        assert!((b.total_baseline - 1.30e-3).abs() < 1e-12);
        assert!((b.total_accelerated - 0.22e-3).abs() < 0.005e-3);
        assert!((b.total_speedup - 5.9).abs() < 0.05, "{}", b.total_speedup);
        assert!((b.components[0].accelerated - 0.07e-3).abs() < 0.005e-3);

        let none = end_to_end_estimate(&ComponentTimes::gptj_table(), 1.0, 1.0).unwrap();
        assert_eq!(none.total_speedup, 1.0);
        assert!(end_to_end_estimate(&ComponentTimes::gptj_table(), 2.0, 0.5).is_err());
    }

    #[test]
    fn estimate_from_stats_without_acceleration_is_unity() {
        let shapes = ModelShapes::gptj_6b(256);
        let b = estimate_from_stats(&shapes, &vec![0.0; 28], &HardwareProfile::mi300x(), 512, 1.0).unwrap();
        assert!((b.total_speedup - 1.0).abs() < 1e-12);
    }
}
