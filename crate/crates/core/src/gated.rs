//! The per-map gated kernel.
//!
//! For an activation `x` and a basis `V` the product `Wx` splits exactly
//! into `M·g + W·r` with `M = W·V` cached, `g = Vᵀx` and `r = x − V·g`.
//! When the residual ratio `‖r‖/‖x‖` is below the gate threshold the
//! `W·r` term is skipped and only the `d_out × k` image is read.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, DenseMatrix};
use crate::subspace::SubspaceBasis;

/// `M = W·V` bound to the basis it was built from.
#[derive(Debug)]
pub struct CachedImage {
    matrix: DenseMatrix,
    weight_id: String,
    basis_fingerprint: String,
    reads: AtomicU64,
}

impl Clone for CachedImage {
    fn clone(&self) -> Self {
        Self {
            matrix: self.matrix.clone(),
            weight_id: self.weight_id.clone(),
            basis_fingerprint: self.basis_fingerprint.clone(),
            reads: AtomicU64::new(self.reads()),
        }
    }
}

impl CachedImage {
    /// Rebinds a stored image to its fingerprint, e.g. after loading from disk.
    pub fn from_parts(matrix: DenseMatrix, weight_id: impl Into<String>, basis_fingerprint: impl Into<String>) -> Self {
        Self {
            matrix,
            weight_id: weight_id.into(),
            basis_fingerprint: basis_fingerprint.into(),
            reads: AtomicU64::new(0),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn weight_id(&self) -> &str {
        &self.weight_id
    }

    pub fn basis_fingerprint(&self) -> &str {
        &self.basis_fingerprint
    }

    /// Number of fast-path evaluations that read this image.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        (0..self.matrix.rows()).map(|i| dot(self.matrix.row(i), g)).collect()
    }
}

pub fn cache_image(weight_id: impl Into<String>, w: &DenseMatrix, basis: &SubspaceBasis) -> Result<CachedImage> {
    if w.cols() != basis.dim() {
        return Err(Error::DimensionMismatch {
            context: "weight input width vs. basis dimension",
            expected: basis.dim(),
            actual: w.cols(),
        });
    }
    let cols = basis.columns();
    let m = DenseMatrix::from_fn(w.rows(), basis.rank(), |i, j| dot(w.row(i), &cols[j]));
    Ok(CachedImage::from_parts(m, weight_id, basis.fingerprint()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExecutionMode {
    /// `y = Wx` for every token.
    Baseline,
    /// Gate on `ρ < epsilon`.
    Gated { epsilon: f64 },
    /// `y = M·g` for every token, residual discarded.
    StaticProjection,
}

impl ExecutionMode {
    pub fn gated(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gate threshold must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(Self::Gated { epsilon })
    }

    pub fn threshold(&self) -> Option<f64> {
        match self {
            Self::Gated { epsilon } => Some(*epsilon),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Gated { .. } => "gated",
            Self::StaticProjection => "static",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GatePath {
    Fast,
    Slow,
    /// Fast path imposed by static projection.
    ForcedFast,
    /// Slow path imposed by baseline execution.
    ForcedSlow,
}

impl GatePath {
    pub fn is_fast(self) -> bool {
        matches!(self, Self::Fast | Self::ForcedFast)
    }
}

/// Outcome of one token through one linear map. Read counts are in weight
/// elements; the gate's own `V` read is kept apart in `gate_reads`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub rho: f64,
    pub threshold: Option<f64>,
    pub path: GatePath,
    /// `k·d_out`: what the fast path reads.
    pub reads_fast: u64,
    /// `d·d_out`: what the dense product reads.
    pub reads_full: u64,
    /// What this dispatch actually read.
    pub reads_actual: u64,
    /// `d·k` basis read for the projection; zero in baseline mode.
    pub gate_reads: u64,
}

/// Output of one gated map plus the quantities the error analysis needs.
#[derive(Clone, Debug)]
pub struct GatedOutput {
    pub y: Vec<f64>,
    pub record: GateRecord,
}

/// One token through one map under `mode`.
pub fn gated_forward(
    x: &[f64],
    w: &DenseMatrix,
    image: &CachedImage,
    basis: &SubspaceBasis,
    mode: ExecutionMode,
) -> Result<GatedOutput> {
    if x.len() != w.cols() {
        return Err(Error::DimensionMismatch {
            context: "activation length vs. weight input width",
            expected: w.cols(),
            actual: x.len(),
        });
    }
    if basis.dim() != w.cols() {
        return Err(Error::DimensionMismatch {
            context: "basis dimension vs. weight input width",
            expected: w.cols(),
            actual: basis.dim(),
        });
    }
    if image.basis_fingerprint != basis.fingerprint() {
        return Err(Error::StaleImage {
            weight_id: image.weight_id.clone(),
            cached: image.basis_fingerprint.clone(),
            current: basis.fingerprint().to_owned(),
        });
    }
    if image.matrix.shape() != (w.rows(), basis.rank()) {
        return Err(Error::DimensionMismatch {
            context: "cached image rows vs. weight output height",
            expected: w.rows(),
            actual: image.matrix.rows(),
        });
    }

    let (d, d_out, k) = (w.cols() as u64, w.rows() as u64, basis.rank() as u64);
    let projection = basis.project(x)?;
    let rho = projection.rho;
    let mut record = GateRecord {
        rho,
        threshold: mode.threshold(),
        path: GatePath::ForcedSlow,
        reads_fast: k * d_out,
        reads_full: d * d_out,
        reads_actual: d * d_out,
        gate_reads: d * k,
    };
    let y = match mode {
        ExecutionMode::Baseline => {
            record.gate_reads = 0;
            w.matvec(x)?
        }
        ExecutionMode::Gated { epsilon } if rho < epsilon => {
            record.path = GatePath::Fast;
            record.reads_actual = k * d_out;
            image.apply(&projection.coefficients)
        }
        ExecutionMode::Gated { .. } => {
            record.path = GatePath::Slow;
            w.matvec(x)?
        }
        ExecutionMode::StaticProjection => {
            record.path = GatePath::ForcedFast;
            record.reads_actual = k * d_out;
            image.apply(&projection.coefficients)
        }
    };
    Ok(GatedOutput { y, record })
}

/// `‖W‖₂` by power iteration on `WᵀW`, stopping once the Rayleigh quotient
/// changes by less than `tol` relative. Capped at 10 000 iterations.
pub fn spectral_norm(w: &DenseMatrix, tol: f64) -> f64 {
    const MAX_ITERS: usize = 10_000;
    if w.data().iter().all(|v| *v == 0.0) || w.cols() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut v: Vec<f64> = (0..w.cols()).map(|_| rng.sample(StandardNormal)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);

    let mut lambda = 0.0_f64;
    for _ in 0..MAX_ITERS {
        let wv = w.matvec(&v).expect("conformant");
        let mut z = w.matvec_t(&wv).expect("conformant");
        let next = dot(&v, &z);
        let zn = norm(&z);
        if zn == 0.0 {
            // start landed in the null space; re-seed
            v = (0..w.cols()).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            continue;
        }
        z.iter_mut().for_each(|x| *x /= zn);
        v = z;
        let converged = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Aggregate of gate records for one layer or map. Merging is associative
/// and commutative.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub total: u64,
    pub fast: u64,
    pub slow: u64,
    pub forced_fast: u64,
    pub forced_slow: u64,
    pub rho_sum: f64,
    pub rho_max: f64,
    pub reads_full: u64,
    pub reads_fast: u64,
    pub reads_actual: u64,
    pub gate_reads: u64,
}

impl LayerStats {
    pub fn push(&mut self, r: &GateRecord) {
        self.total += 1;
        match r.path {
            GatePath::Fast => self.fast += 1,
            GatePath::Slow => self.slow += 1,
            GatePath::ForcedFast => self.forced_fast += 1,
            GatePath::ForcedSlow => self.forced_slow += 1,
        }
        self.rho_sum += r.rho;
        self.rho_max = self.rho_max.max(r.rho);
        self.reads_full += r.reads_full;
        self.reads_fast += r.reads_fast;
        self.reads_actual += r.reads_actual;
        self.gate_reads += r.gate_reads;
    }

    pub fn merge(&mut self, other: &LayerStats) {
        self.total += other.total;
        self.fast += other.fast;
        self.slow += other.slow;
        self.forced_fast += other.forced_fast;
        self.forced_slow += other.forced_slow;
        self.rho_sum += other.rho_sum;
        self.rho_max = self.rho_max.max(other.rho_max);
        self.reads_full += other.reads_full;
        self.reads_fast += other.reads_fast;
        self.reads_actual += other.reads_actual;
        self.gate_reads += other.gate_reads;
    }

    /// `(#Fast + #ForcedFast) / total`.
    pub fn fast_fraction(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (self.fast + self.forced_fast) as f64 / self.total as f64
    }

    pub fn mean_rho(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.rho_sum / self.total as f64
    }

    /// Weight-read speedup: dense reads over actual reads.
    pub fn read_speedup(&self) -> f64 {
        if self.reads_actual == 0 {
            return 1.0;
        }
        self.reads_full as f64 / self.reads_actual as f64
    }
}

pub fn fold_gate_stats<'a>(records: impl IntoIterator<Item = &'a GateRecord>) -> Result<LayerStats> {
    let mut stats = LayerStats::default();
    for r in records {
        stats.push(r);
    }
    if stats.total == 0 {
        return Err(Error::Empty("no gate records to fold"));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_orthonormal, sub};
    use crate::subspace::BasisOrigin;
    use crate::svd::thin_svd;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn canonical_basis(d: usize, k: usize) -> SubspaceBasis {
        let cols = (0..k)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
        SubspaceBasis::from_columns(d, cols, BasisOrigin::Calibrated).unwrap()
    }

    #[test]
    fn image_of_identity_and_canonical_prefix() {
        let w = DenseMatrix::identity(4);
        let img = cache_image("w", &w, &canonical_basis(4, 4)).unwrap();
        assert_eq!(img.matrix(), &DenseMatrix::identity(4));

        let mut r = rng(1);
        let w = DenseMatrix::random_normal(5, 6, 1.0, &mut r);
        let img = cache_image("w", &w, &canonical_basis(6, 3)).unwrap();
        assert_eq!(img.matrix(), &w.leading_columns(3));
        assert!(cache_image("w", &w, &canonical_basis(5, 2)).is_err());
    }

    #[test]
    fn image_two_sided_product_oracle() {
        let mut r = rng(2);
        let w = DenseMatrix::random_normal(6, 4, 1.0, &mut r);
        let v = random_orthonormal(4, 2, &mut r);
        let basis = SubspaceBasis::from_matrix(&v, BasisOrigin::Calibrated).unwrap();
        let img = cache_image("w", &w, &basis).unwrap();
        let projector = v.matmul(&v.transpose()).unwrap();
        for _ in 0..100 {
            let x = gaussian(&mut r, 4);
            let lhs = img.matrix().matvec(&v.matvec_t(&x).unwrap()).unwrap();
            let rhs = w.matvec(&projector.matvec(&x).unwrap()).unwrap();
            let err = norm(&sub(&lhs, &rhs));
            assert!(err <= 1e-10 * norm(&rhs).max(1e-300));
        }
    }

    #[test]
    fn complete_basis_takes_fast_path_exactly() {
        let mut r = rng(3);
        let w = DenseMatrix::random_normal(3, 5, 1.0, &mut r);
        let v = random_orthonormal(5, 5, &mut r);
        let basis = SubspaceBasis::from_matrix(&v, BasisOrigin::Calibrated).unwrap();
        let img = cache_image("w", &w, &basis).unwrap();
        let x = gaussian(&mut r, 5);
        let out = gated_forward(&x, &w, &img, &basis, ExecutionMode::gated(0.1).unwrap()).unwrap();
        assert!(out.record.rho < 1e-14);
        assert_eq!(out.record.path, GatePath::Fast);
        let wx = w.matvec(&x).unwrap();
        assert!(norm(&sub(&out.y, &wx)) <= 1e-9 * norm(&wx));
    }

    #[test]
    fn orthogonal_input_takes_slow_path_bit_exact() {
        let mut r = rng(4);
        let w = DenseMatrix::random_normal(3, 4, 1.0, &mut r);
        let basis = canonical_basis(4, 2);
        let img = cache_image("w", &w, &basis).unwrap();
        let x = [0.0, 0.0, 1.5, -2.0];
        let gated = gated_forward(&x, &w, &img, &basis, ExecutionMode::gated(0.5).unwrap()).unwrap();
        let base = gated_forward(&x, &w, &img, &basis, ExecutionMode::Baseline).unwrap();
        assert_eq!(gated.record.rho, 1.0);
        assert_eq!(gated.record.path, GatePath::Slow);
        assert_eq!(base.record.path, GatePath::ForcedSlow);
        assert_eq!(gated.y, base.y);
        assert_eq!(img.reads(), 0);
    }

    #[test]
    fn fast_path_error_within_norm_bound() {
        let mut r = rng(5);
        let w = DenseMatrix::random_normal(3, 4, 1.0, &mut r);
        let v = random_orthonormal(4, 2, &mut r);
        let basis = SubspaceBasis::from_matrix(&v, BasisOrigin::Calibrated).unwrap();
        let img = cache_image("w", &w, &basis).unwrap();
        let w_norm = thin_svd(&w).unwrap().s.largest();
        // x mostly in span so the gate opens at eps = 0.5
        let x: Vec<f64> = {
            let inside = basis.expand(&[1.3, -0.4]);
            let noise = gaussian(&mut r, 4);
            inside.iter().zip(&noise).map(|(a, b)| a + 0.05 * b).collect()
        };
        let out = gated_forward(&x, &w, &img, &basis, ExecutionMode::gated(0.5).unwrap()).unwrap();
        assert_eq!(out.record.path, GatePath::Fast);
        let projected = v.matmul(&v.transpose()).unwrap().matvec(&x).unwrap();
        let oracle = w.matvec(&projected).unwrap();
        assert!(norm(&sub(&out.y, &oracle)) <= 1e-12 * norm(&oracle));
        let wx = w.matvec(&x).unwrap();
        assert!(norm(&sub(&out.y, &wx)) <= w_norm * out.record.rho * norm(&x) * (1.0 + 1e-9));
    }

    #[test]
    fn static_projection_always_fast_and_counts_reads() {
        let w = DenseMatrix::identity(4);
        let basis = canonical_basis(4, 1);
        let img = cache_image("w", &w, &basis).unwrap();
        let out = gated_forward(&[0.0, 1.0, 0.0, 0.0], &w, &img, &basis, ExecutionMode::StaticProjection).unwrap();
        assert_eq!(out.record.path, GatePath::ForcedFast);
        assert_eq!(out.y, vec![0.0; 4]);
        assert_eq!(out.record.reads_actual, 4);
        assert_eq!(out.record.reads_full, 16);
        assert_eq!(out.record.gate_reads, 4);
        assert_eq!(img.reads(), 1);
    }

    #[test]
    fn stale_image_is_rejected() {
        let w = DenseMatrix::identity(3);
        let mut basis = canonical_basis(3, 1);
        let img = cache_image("layer0.qkv", &w, &basis).unwrap();
        basis.insert_dgks(&[0.0, 1.0, 0.0], 0.5).unwrap();
        let err = gated_forward(&[1.0, 0.0, 0.0], &w, &img, &basis, ExecutionMode::Baseline).unwrap_err();
        assert!(matches!(err, Error::StaleImage { ref weight_id, .. } if weight_id == "layer0.qkv"));
    }

    #[test]
    fn gated_mode_rejects_bad_epsilon() {
        assert!(ExecutionMode::gated(0.0).is_err());
        assert!(ExecutionMode::gated(1.0).is_err());
        assert!(ExecutionMode::gated(f64::NAN).is_err());
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm(&DenseMatrix::diag(&[3.0, 1.0, 0.5]), 1e-14) - 3.0).abs() < 1e-10);
        assert!((spectral_norm(&DenseMatrix::identity(5), 1e-12) - 1.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&DenseMatrix::zeros(3, 2), 1e-12), 0.0);
        let mut r = rng(6);
        let w = DenseMatrix::random_normal(10, 7, 1.0, &mut r);
        let oracle = thin_svd(&w).unwrap().s.largest();
        assert!((spectral_norm(&w, 1e-14) - oracle).abs() <= 1e-6 * oracle);
    }

    fn record(path: GatePath, rho: f64) -> GateRecord {
        GateRecord {
            rho,
            threshold: Some(0.1),
            path,
            reads_fast: 2,
            reads_full: 8,
            reads_actual: if path.is_fast() { 2 } else { 8 },
            gate_reads: 4,
        }
    }

    #[test]
    fn fold_counts() {
        let all_fast: Vec<_> = (0..4).map(|_| record(GatePath::Fast, 0.01)).collect();
        assert_eq!(fold_gate_stats(&all_fast).unwrap().fast_fraction(), 1.0);

        let half: Vec<_> = (0..6)
            .map(|i| record(if i % 2 == 0 { GatePath::Fast } else { GatePath::Slow }, 0.2))
            .collect();
        assert_eq!(fold_gate_stats(&half).unwrap().fast_fraction(), 0.5);

        use GatePath::*;
        let mixed = [
            Fast, Slow, ForcedFast, Fast, ForcedSlow, Slow, Slow, Fast, ForcedFast, Slow,
        ];
        let recs: Vec<_> = mixed.iter().map(|p| record(*p, 0.1)).collect();
        let stats = fold_gate_stats(&recs).unwrap();
        // 3 Fast + 2 ForcedFast out of 10
        assert_eq!(stats.fast_fraction(), 0.5);
        assert_eq!(
            (stats.fast, stats.slow, stats.forced_fast, stats.forced_slow),
            (3, 4, 2, 1)
        );
        assert_eq!(stats.reads_actual, 5 * 2 + 5 * 8);

        assert!(fold_gate_stats(&[]).is_err());
    }

    #[test]
    fn merge_matches_single_fold() {
        use GatePath::*;
        let recs: Vec<_> = [Fast, Slow, Fast, ForcedFast, Slow]
            .iter()
            .map(|p| record(*p, 0.3))
            .collect();
        let whole = fold_gate_stats(&recs).unwrap();
        let mut a = fold_gate_stats(&recs[..2]).unwrap();
        let b = fold_gate_stats(&recs[2..]).unwrap();
        a.merge(&b);
        assert_eq!(a.total, whole.total);
        assert_eq!(a.fast_fraction(), whole.fast_fraction());
        assert_eq!(a.reads_actual, whole.reads_actual);
    }
}
