//! Orthonormal activation bases and the operations that act on them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, DenseMatrix};
use crate::svd::{thin_svd, ThinSvd};

/// Orthonormality tolerance every basis must meet after construction or update.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Post-orthogonalization norms below this (relative to ‖x‖) count as dependent.
const DEPENDENCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisOrigin {
    Calibrated,
    Inherited,
    Streamed,
}

/// A `dim × rank` matrix with orthonormal columns, stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    dim: usize,
    columns: Vec<Vec<f64>>,
    origin: BasisOrigin,
    fingerprint: String,
}

/// `x = V·coefficients + residual`, `rho = ‖residual‖ / ‖x‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub coefficients: Vec<f64>,
    pub residual: Vec<f64>,
    pub rho: f64,
}

impl SubspaceBasis {
    /// Rank-0 basis in `dim` dimensions.
    pub fn empty(dim: usize) -> Self {
        Self::assemble(dim, Vec::new(), BasisOrigin::Streamed)
    }

    fn assemble(dim: usize, columns: Vec<Vec<f64>>, origin: BasisOrigin) -> Self {
        let fingerprint = fingerprint_of(dim, &columns);
        Self {
            dim,
            columns,
            origin,
            fingerprint,
        }
    }

    /// Wraps caller-supplied columns after checking they are orthonormal.
    pub fn from_columns(dim: usize, columns: Vec<Vec<f64>>, origin: BasisOrigin) -> Result<Self> {
        if let Some(bad) = columns.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "basis column length",
                expected: dim,
                actual: bad.len(),
            });
        }
        if columns.len() > dim {
            return Err(Error::RankOutOfRange {
                k: columns.len(),
                max: dim,
                context: "basis rank cannot exceed its dimension",
            });
        }
        let basis = Self::assemble(dim, columns, origin);
        let defect = basis.orthonormality_defect();
        if !(defect <= ORTHONORMALITY_TOL) {
            return Err(Error::InvalidParameter(format!(
                "basis columns are not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(basis)
    }

    pub fn from_matrix(v: &DenseMatrix, origin: BasisOrigin) -> Result<Self> {
        Self::from_columns(v.rows(), v.columns(), origin)
    }

    /// Leading `k` right singular vectors of an existing decomposition.
    pub fn from_svd(svd: &ThinSvd, k: usize) -> Result<Self> {
        let max = svd.v.cols();
        if k == 0 || k > max {
            return Err(Error::RankOutOfRange {
                k,
                max,
                context: "basis rank vs. min(rows, cols) of the activation matrix",
            });
        }
        let columns = (0..k).map(|j| svd.v.column(j)).collect();
        Ok(Self::assemble(svd.v.rows(), columns, BasisOrigin::Calibrated))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    pub fn origin(&self) -> BasisOrigin {
        self.origin
    }

    pub fn set_origin(&mut self, origin: BasisOrigin) {
        self.origin = origin;
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// `dim × rank` matrix form.
    pub fn matrix(&self) -> DenseMatrix {
        DenseMatrix::from_columns(self.dim, &self.columns)
    }

    /// Basis spanned by the leading `k` columns.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.rank() {
            return Err(Error::RankOutOfRange {
                k,
                max: self.rank(),
                context: "truncation rank",
            });
        }
        Ok(Self::assemble(self.dim, self.columns[..k].to_vec(), self.origin))
    }

    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, a) in self.columns.iter().enumerate() {
            for (j, b) in self.columns.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(a, b) - target).abs());
            }
        }
        worst
    }

    /// Content hash over dimension, rank and column bits.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// `g = Vᵀx`.
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| dot(c, x)).collect()
    }

    /// `V·g`.
    pub fn expand(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (c, &gj) in self.columns.iter().zip(g) {
            axpy(gj, c, &mut out);
        }
        out
    }

    pub fn project(&self, x: &[f64]) -> Result<ProjectionResult> {
        self.check_len(x.len())?;
        let coefficients = self.coefficients(x);
        let mut residual = x.to_vec();
        for (c, &gj) in self.columns.iter().zip(&coefficients) {
            axpy(-gj, c, &mut residual);
        }
        let xn = norm(x);
        let rho = if xn > 0.0 { norm(&residual) / xn } else { 0.0 };
        Ok(ProjectionResult {
            coefficients,
            residual,
            rho,
        })
    }

    /// Residual ratio only.
    pub fn residual_ratio(&self, x: &[f64]) -> Result<f64> {
        Ok(self.project(x)?.rho)
    }

    /// DGKS rank-one extension: if `ρ(x) > eta`, orthogonalize `x` against the
    /// basis twice (classical Gram-Schmidt, then a corrective pass),
    /// normalize and append it. Returns whether a column was added.
    pub fn insert_dgks(&mut self, x: &[f64], eta: f64) -> Result<bool> {
        self.check_len(x.len())?;
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "DGKS acceptance threshold must lie in (0, 1), got {eta}"
            )));
        }
        if self.rank() >= self.dim {
            return Ok(false);
        }
        let xn = norm(x);
        if xn == 0.0 {
            return Ok(false);
        }
        let mut r = x.to_vec();
        self.cgs_pass(&mut r);
        if norm(&r) / xn <= eta {
            return Ok(false);
        }
        self.cgs_pass(&mut r);
        let rn = norm(&r);
        if rn < DEPENDENCE_TOL * xn {
            return Ok(false);
        }
        r.iter_mut().for_each(|v| *v /= rn);
        self.columns.push(r);
        self.origin = BasisOrigin::Streamed;
        self.fingerprint = fingerprint_of(self.dim, &self.columns);
        Ok(true)
    }

    fn cgs_pass(&self, r: &mut [f64]) {
        let h = self.coefficients(r);
        for (c, hj) in self.columns.iter().zip(h) {
            axpy(-hj, c, r);
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                context: "vector length vs. basis dimension",
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }
}

fn fingerprint_of(dim: usize, columns: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    h.update((dim as u64).to_le_bytes());
    h.update((columns.len() as u64).to_le_bytes());
    for c in columns {
        for v in c {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// First `k` right singular vectors of `x`.
pub fn build_basis(x: &DenseMatrix, k: usize) -> Result<SubspaceBasis> {
    let max = x.rows().min(x.cols());
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange {
            k,
            max,
            context: "basis rank vs. min(rows, cols) of the activation matrix",
        });
    }
    SubspaceBasis::from_svd(&thin_svd(x)?, k)
}

pub fn project(basis: &SubspaceBasis, x: &[f64]) -> Result<ProjectionResult> {
    basis.project(x)
}

/// Value-returning form of [`SubspaceBasis::insert_dgks`].
pub fn dgks_insert(basis: &SubspaceBasis, x: &[f64], eta: f64) -> Result<(SubspaceBasis, bool)> {
    let mut out = basis.clone();
    let accepted = out.insert_dgks(x, eta)?;
    Ok((out, accepted))
}

/// Cosines of the principal angles between `span(a)` and `span(b)`:
/// singular values of `AᵀB`, clipped to `[0, 1]`, non-increasing.
pub fn principal_angle_cosines(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "principal angles between bases",
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.rank() == 0 || b.rank() == 0 {
        return Ok(Vec::new());
    }
    let cross = DenseMatrix::from_fn(a.rank(), b.rank(), |i, j| dot(&a.columns[i], &b.columns[j]));
    let svd = thin_svd(&cross)?;
    Ok(svd.s.values().iter().map(|s| s.clamp(0.0, 1.0)).collect())
}
