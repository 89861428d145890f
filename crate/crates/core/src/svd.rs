//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working matrix are rotated pairwise until every pair is
//! orthogonal to working precision; the column norms are then the singular
//! values and the accumulated rotations the right singular vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, DenseMatrix};

const MAX_SWEEPS: usize = 100;

/// Singular values, non-increasing and non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum(Vec<f64>);

impl SingularSpectrum {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "singular values must be finite and non-negative".into(),
            ));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }

    /// Σ σ_i² over indices ≥ k: the squared Frobenius residual of the best rank-k fit.
    pub fn tail_energy(&self, k: usize) -> f64 {
        self.0.iter().skip(k).map(|s| s * s).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ThinSvd {
    /// m × p, p = min(m, n)
    pub u: DenseMatrix,
    pub s: SingularSpectrum,
    /// n × p
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let p = self.s.len();
        let us = DenseMatrix::from_fn(self.u.rows(), p, |i, j| self.u[(i, j)] * self.s.values()[j]);
        us.matmul(&self.v.transpose()).expect("conformant factors")
    }
}

/// Thin SVD `X = U·diag(S)·Vᵀ`.
pub fn thin_svd(x: &DenseMatrix) -> Result<ThinSvd> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Empty("SVD input has no rows or no columns"));
    }
    x.check_finite()?;
    if x.rows() >= x.cols() {
        jacobi_tall(x)
    } else {
        let t = jacobi_tall(&x.transpose())?;
        let mut out = ThinSvd { u: t.v, s: t.s, v: t.u };
        fix_signs(&mut out);
        Ok(out)
    }
}

fn jacobi_tall(x: &DenseMatrix) -> Result<ThinSvd> {
    let (m, n) = x.shape();
    let mut a = x.columns();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Pairwise orthogonality is only resolvable down to the dot-product roundoff.
    let tol = 2.0 * (m as f64) * f64::EPSILON;
    // Columns this small are numerically zero; rotating them only chases noise.
    let negligible = (f64::EPSILON * x.frobenius_norm()).powi(2);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            rows: m,
            cols: n,
            sweeps: MAX_SWEEPS,
        });
    }

    let sigma: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for &j in &order {
        let sj = sigma[j];
        let col = if sj > smax * 1e-12 && sj > 0.0 {
            a[j].iter().map(|x| x / sj).collect()
        } else {
            // Direction is noise or undefined; orthonormalize it (or a canonical
            // vector) against what we already have.
            complete_against(&u_cols, &a[j], m)
        };
        u_cols.push(col);
        v_cols.push(v[j].clone());
        values.push(sj);
    }
    let mut out = ThinSvd {
        u: DenseMatrix::from_columns(m, &u_cols),
        s: SingularSpectrum(values),
        v: DenseMatrix::from_columns(n, &v_cols),
    };
    fix_signs(&mut out);
    Ok(out)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn gs_twice(basis: &[Vec<f64>], v: &mut [f64]) {
    for _ in 0..2 {
        for b in basis {
            let h = dot(b, v);
            axpy(-h, b, v);
        }
    }
}

fn complete_against(basis: &[Vec<f64>], hint: &[f64], m: usize) -> Vec<f64> {
    let mut candidate = hint.to_vec();
    gs_twice(basis, &mut candidate);
    let nrm = norm(&candidate);
    if nrm > 1e-8 * norm(hint).max(f64::MIN_POSITIVE) && nrm > 0.0 {
        candidate.iter_mut().for_each(|x| *x /= nrm);
        return candidate;
    }
    for e in 0..m {
        let mut c = vec![0.0; m];
        c[e] = 1.0;
        gs_twice(basis, &mut c);
        let nrm = norm(&c);
        if nrm > 1e-6 {
            c.iter_mut().for_each(|x| *x /= nrm);
            return c;
        }
    }
    unreachable!("a basis of fewer than m vectors always has a complement")
}

/// First significant component of every right singular vector is made positive.
fn fix_signs(svd: &mut ThinSvd) {
    let p = svd.s.len();
    for j in 0..p {
        let col = svd.v.column(j);
        let scale = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let lead = col.iter().find(|x| x.abs() > 1e-12 * scale).copied().unwrap_or(0.0);
        if lead < 0.0 {
            for i in 0..svd.v.rows() {
                svd.v[(i, j)] = -svd.v[(i, j)];
            }
            for i in 0..svd.u.rows() {
                svd.u[(i, j)] = -svd.u[(i, j)];
            }
        }
    }
}

/// `exp(−Σ p_i log p_i)` with `p_i = σ_i / Σσ_j`; zero values contribute nothing.
pub fn effective_rank(spectrum: &SingularSpectrum) -> Result<f64> {
    let total: f64 = spectrum.values().iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    let entropy: f64 = spectrum
        .values()
        .iter()
        .filter(|s| **s > 0.0)
        .map(|s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}
