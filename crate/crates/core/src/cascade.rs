//! Depth-wise basis inheritance and time-wise streaming updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::subspace::{principal_angle_cosines, BasisOrigin, SubspaceBasis};
use crate::svd::thin_svd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCoherence {
    /// Lower layer of the pair `(layer, layer + 1)`.
    pub layer: usize,
    pub mean_cosine: f64,
    pub min_cosine: f64,
    pub k: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoherenceProfile {
    pub pairs: Vec<PairCoherence>,
}

/// Principal-angle cosines between the leading `k` columns of each pair of
/// consecutive bases.
pub fn coherence_profile(bases: &[SubspaceBasis], k: usize) -> Result<CoherenceProfile> {
    if bases.len() < 2 {
        return Err(Error::Empty("coherence needs at least two layers"));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("coherence rank must be at least 1".into()));
    }
    if let Some(short) = bases.iter().find(|b| b.rank() < k) {
        return Err(Error::RankOutOfRange {
            k,
            max: short.rank(),
            context: "coherence rank vs. basis rank",
        });
    }
    let truncated: Vec<SubspaceBasis> = bases.iter().map(|b| b.truncated(k)).collect::<Result<_>>()?;
    let pairs = truncated
        .windows(2)
        .enumerate()
        .map(|(layer, w)| {
            let cos = principal_angle_cosines(&w[0], &w[1])?;
            let mean = cos.iter().sum::<f64>() / cos.len() as f64;
            let min = cos.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(PairCoherence {
                layer,
                mean_cosine: mean,
                min_cosine: min,
                k,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CoherenceProfile { pairs })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerOrigin {
    FullSvd,
    Inherited,
}

/// Which activation stream a basis describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Width-`d` inputs: the attention and MLP layer-norm outputs (and the
    /// attention output feeding the output projection).
    Model,
    /// Width-`d_ff` MLP hidden activations feeding the down projection.
    Hidden,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub layer: usize,
    pub stream: Stream,
    pub origin: LayerOrigin,
    pub acceptances: usize,
    /// Rank after DGKS growth, before truncation back to the working rank.
    pub grown_rank: usize,
    pub final_rank: usize,
    /// Growth stopped at `k_max` with rows still outside the threshold.
    pub exhausted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub entries: Vec<TraceEntry>,
}

impl CascadeTrace {
    pub fn total_acceptances(&self) -> usize {
        self.entries.iter().map(|e| e.acceptances).sum()
    }

    pub fn acceptances_beyond_first_layer(&self) -> usize {
        self.entries.iter().filter(|e| e.layer > 0).map(|e| e.acceptances).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InheritOutcome {
    pub acceptances: usize,
    pub exhausted: bool,
}

/// Starts from `prev` and streams every row of `rows` through a DGKS insert,
/// growing at most to `k_max` columns.
pub fn inherit_and_correct(
    prev: &SubspaceBasis,
    rows: &DenseMatrix,
    eta: f64,
    k_max: usize,
) -> Result<(SubspaceBasis, InheritOutcome)> {
    if rows.cols() != prev.dim() {
        return Err(Error::DimensionMismatch {
            context: "activation row width vs. inherited basis dimension",
            expected: prev.dim(),
            actual: rows.cols(),
        });
    }
    let mut basis = prev.clone();
    basis.set_origin(BasisOrigin::Inherited);
    let (acceptances, exhausted) = absorb_rows(&mut basis, (0..rows.rows()).map(|i| rows.row(i)), eta, k_max)?;
    Ok((basis, InheritOutcome { acceptances, exhausted }))
}

fn absorb_rows<'a>(
    basis: &mut SubspaceBasis,
    rows: impl Iterator<Item = &'a [f64]>,
    eta: f64,
    k_max: usize,
) -> Result<(usize, bool)> {
    let mut accepted = 0;
    let mut exhausted = false;
    for row in rows {
        if basis.rank() >= k_max {
            if basis.residual_ratio(row)? > eta {
                exhausted = true;
            }
            continue;
        }
        if basis.insert_dgks(row, eta)? {
            accepted += 1;
        }
    }
    Ok((accepted, exhausted))
}

/// DGKS construction from an empty basis: the count an independent,
/// per-layer streaming build would pay.
pub fn independent_acceptances(rows: &DenseMatrix, eta: f64, k_max: usize) -> Result<usize> {
    let mut basis = SubspaceBasis::empty(rows.cols());
    Ok(absorb_rows(&mut basis, (0..rows.rows()).map(|i| rows.row(i)), eta, k_max)?.0)
}

/// Best rank-`k` basis for `rows` inside `span(basis)`: the leading right
/// singular vectors of `rows·V`, mapped back through `V`.
pub fn rayleigh_ritz(basis: &SubspaceBasis, rows: &DenseMatrix, k: usize) -> Result<SubspaceBasis> {
    if k == 0 || k > basis.rank() {
        return Err(Error::RankOutOfRange {
            k,
            max: basis.rank(),
            context: "Rayleigh-Ritz rank vs. search-space rank",
        });
    }
    let v = basis.matrix();
    let reduced = rows.matmul(&v)?;
    let inner = thin_svd(&reduced)?;
    // The reduced problem may be wide (fewer rows than search directions); pad
    // the inner right vectors from the identity if so.
    let q = if inner.v.cols() >= k {
        inner.v.leading_columns(k)
    } else {
        return Err(Error::RankOutOfRange {
            k,
            max: inner.v.cols(),
            context: "Rayleigh-Ritz rank vs. number of activation rows",
        });
    };
    let rotated = v.matmul(&q)?;
    let mut out = SubspaceBasis::from_matrix(&rotated, BasisOrigin::Inherited)?;
    out.set_origin(basis.origin());
    Ok(out)
}

/// Per-token outcome of a streaming update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceTimeline {
    pub accepted: Vec<bool>,
}

impl AcceptanceTimeline {
    pub fn count(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.accepted
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Streams `tokens` through DGKS inserts, calling `on_accept` with the grown
/// basis after every accepted insert so dependent images can be rebuilt.
pub fn stream_track<'a, I, F>(
    basis: &SubspaceBasis,
    tokens: I,
    eta: f64,
    k_max: usize,
    mut on_accept: F,
) -> Result<(SubspaceBasis, AcceptanceTimeline)>
where
    I: IntoIterator<Item = &'a [f64]>,
    F: FnMut(&SubspaceBasis) -> Result<()>,
{
    let mut current = basis.clone();
    let mut timeline = AcceptanceTimeline::default();
    for x in tokens {
        let accepted = current.rank() < k_max && current.insert_dgks(x, eta)?;
        if accepted {
            on_accept(&current)?;
        }
        timeline.accepted.push(accepted);
    }
    Ok((current, timeline))
}
