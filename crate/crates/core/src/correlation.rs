//! Working-correlation structures and their closed-form inverses.

use serde::{Deserialize, Serialize};

use crate::data::CorrelationKind;
use crate::error::{MdspError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Distance kept from the positive-definiteness boundary when clipping an
/// estimated correlation parameter.
pub const RHO_MARGIN: f64 = 1e-6;

/// Working correlation `R(ρ)` of an `m`-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CorrelationModel<T: Scalar> {
    kind: CorrelationKind,
    rho: T,
    m: usize,
}

impl<T: Scalar> CorrelationModel<T> {
    pub fn independence(m: usize) -> Self {
        Self {
            kind: CorrelationKind::Independence,
            rho: T::zero(),
            m,
        }
    }

    /// Builds a model, rejecting parameters at or beyond the
    /// positive-definiteness bound of the family.
    pub fn new(kind: CorrelationKind, rho: T, m: usize) -> Result<Self> {
        let (lo, hi) = open_bounds::<T>(kind, m);
        let ok = match kind {
            CorrelationKind::Independence => rho == T::zero(),
            _ => rho > lo && rho < hi,
        };
        if !ok || !rho.is_finite() {
            return Err(MdspError::DegenerateCorrelation(format!(
                "{kind} correlation with rho = {rho} and m = {m} is not positive definite"
            )));
        }
        Ok(Self { kind, rho, m })
    }

    #[inline]
    pub fn kind(&self) -> CorrelationKind {
        self.kind
    }

    #[inline]
    pub fn rho(&self) -> T {
        self.rho
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m
    }

    /// Explicit `R` as a dense matrix.
    pub fn matrix(&self) -> Matrix<T> {
        let m = self.m;
        let mut r = Matrix::identity(m);
        for s in 0..m {
            for t in 0..m {
                if s != t {
                    r[(s, t)] = match self.kind {
                        CorrelationKind::Independence => T::zero(),
                        CorrelationKind::Exchangeable => self.rho,
                        CorrelationKind::Ar1 => self.rho.powi(s.abs_diff(t) as i32),
                    };
                }
            }
        }
        r
    }

    /// `R⁻¹ v` without forming `R`.
    pub fn inverse_apply(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); v.len()];
        self.inverse_apply_into(v, &mut out);
        out
    }

    pub fn inverse_apply_into(&self, v: &[T], out: &mut [T]) {
        let m = self.m;
        assert_eq!(v.len(), m, "vector length must equal m");
        let one = T::one();
        let rho = self.rho;
        match self.kind {
            CorrelationKind::Independence => out.copy_from_slice(v),
            CorrelationKind::Exchangeable => {
                let total: T = v.iter().copied().sum();
                let mt = T::from_usize(m).unwrap();
                let shrink = rho / (one + (mt - one) * rho) * total;
                let scale = one / (one - rho);
                for (o, &vi) in out.iter_mut().zip(v) {
                    *o = scale * (vi - shrink);
                }
            }
            CorrelationKind::Ar1 => {
                if m == 1 {
                    out[0] = v[0];
                    return;
                }
                let denom = one - rho * rho;
                let mid = one + rho * rho;
                out[0] = (v[0] - rho * v[1]) / denom;
                for t in 1..m - 1 {
                    out[t] = (mid * v[t] - rho * (v[t - 1] + v[t + 1])) / denom;
                }
                out[m - 1] = (v[m - 1] - rho * v[m - 2]) / denom;
            }
        }
    }

    /// Restricts the model to vectors of a different length (same family and
    /// parameter), e.g. for a new individual with fewer measurements.
    pub fn resized(&self, m: usize) -> Result<Self> {
        match self.kind {
            CorrelationKind::Independence => Ok(Self::independence(m)),
            kind => Self::new(kind, self.rho, m),
        }
    }
}

/// Open interval of admissible `ρ` for a family at dimension `m`.
fn open_bounds<T: Scalar>(kind: CorrelationKind, m: usize) -> (T, T) {
    let one = T::one();
    match kind {
        CorrelationKind::Independence => (T::zero(), T::zero()),
        CorrelationKind::Exchangeable if m <= 1 => (-one, one),
        CorrelationKind::Exchangeable => (-one / T::from_usize(m - 1).unwrap(), one),
        CorrelationKind::Ar1 => (-one, one),
    }
}

/// One-step moment estimate of `ρ` from an `N × m` residual matrix (normally
/// from an individual-wise independence fit), clipped inside the
/// positive-definiteness bound by [`RHO_MARGIN`].
pub fn estimate_rho<T: Scalar>(kind: CorrelationKind, residuals: &Matrix<T>) -> Result<T> {
    let (n, m) = (residuals.rows(), residuals.cols());
    if n * m < 2 {
        return Err(MdspError::InvalidDataset(
            "need at least two residuals to estimate rho".into(),
        ));
    }
    let sum_sq: T = residuals.as_slice().iter().map(|&e| e * e).sum();
    let sigma2 = sum_sq / T::from_usize(n * m).unwrap();
    if !(sigma2 > T::zero()) {
        return Err(MdspError::ZeroVariance);
    }
    if m < 2 {
        return Ok(T::zero());
    }
    let nt = T::from_usize(n).unwrap();
    let raw = match kind {
        CorrelationKind::Independence => return Ok(T::zero()),
        CorrelationKind::Exchangeable => {
            let mut cross = T::zero();
            for i in 0..n {
                let row = residuals.row(i);
                let s: T = row.iter().copied().sum();
                let ss: T = row.iter().map(|&e| e * e).sum();
                cross += s * s - ss;
            }
            cross / (T::from_usize(m * (m - 1)).unwrap() * nt * sigma2)
        }
        CorrelationKind::Ar1 => {
            let mut lag = T::zero();
            for i in 0..n {
                let row = residuals.row(i);
                for t in 0..m - 1 {
                    lag += row[t] * row[t + 1];
                }
            }
            lag / (T::from_usize(m - 1).unwrap() * nt * sigma2)
        }
    };
    let (lo, hi) = open_bounds::<T>(kind, m);
    let margin = T::lit(RHO_MARGIN);
    Ok(raw.max(lo + margin).min(hi - margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn independence_and_zero_rho_are_identity() {
        let v = [1.0, -2.0, 3.5];
        assert_eq!(CorrelationModel::<f64>::independence(3).inverse_apply(&v), v);
        let ex = CorrelationModel::new(CorrelationKind::Exchangeable, 0.0, 3).unwrap();
        assert_eq!(ex.inverse_apply(&v), v);
    }

    #[test]
    fn rejects_non_positive_definite_parameters() {
        assert!(CorrelationModel::new(CorrelationKind::Ar1, 1.0, 4).is_err());
        assert!(CorrelationModel::new(CorrelationKind::Exchangeable, -1.0 / 3.0, 4).is_err());
        assert!(CorrelationModel::new(CorrelationKind::Exchangeable, -0.3, 4).is_ok());
        assert!(CorrelationModel::new(CorrelationKind::Independence, 0.2, 4).is_err());
    }

    #[test]
    fn perfectly_correlated_residuals_clip_to_bound() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 - 1.7; 4]).collect();
        let rho = estimate_rho(CorrelationKind::Exchangeable, &Matrix::from_rows(&rows)).unwrap();
        assert_eq!(rho, 1.0 - RHO_MARGIN);
    }

    #[test]
    fn zero_residuals_have_no_variance() {
        let r = Matrix::<f64>::zeros(3, 4);
        assert_eq!(estimate_rho(CorrelationKind::Ar1, &r), Err(MdspError::ZeroVariance));
    }

    fn normal_residuals(n: usize, m: usize, ar: f64, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let mut prev: f64 = StandardNormal.sample(&mut rng);
            out[(i, 0)] = prev;
            for t in 1..m {
                let e: f64 = StandardNormal.sample(&mut rng);
                prev = ar * prev + (1.0 - ar * ar).sqrt() * e;
                out[(i, t)] = prev;
            }
        }
        out
    }

    #[test]
    fn null_residuals_estimate_near_zero() {
        for seed in 0..5 {
            let r = normal_residuals(500, 20, 0.0, seed);
            for kind in [CorrelationKind::Exchangeable, CorrelationKind::Ar1] {
                let rho = estimate_rho(kind, &r).unwrap();
                assert!(rho.abs() < 0.05, "{kind}: {rho}");
            }
        }
    }

    #[test]
    fn ar1_residuals_recover_rho() {
        let r = normal_residuals(500, 20, 0.5, 11);
        let rho = estimate_rho(CorrelationKind::Ar1, &r).unwrap();
        assert!((rho - 0.5).abs() < 0.05, "{rho}");
    }

    #[test]
    fn estimate_is_invariant_to_individual_order() {
        let r = normal_residuals(30, 6, 0.3, 2);
        let mut rows = r.to_rows();
        rows.reverse();
        rows.swap(3, 17);
        let permuted = Matrix::from_rows(&rows);
        for kind in [CorrelationKind::Exchangeable, CorrelationKind::Ar1] {
            let a = estimate_rho(kind, &r).unwrap();
            let b = estimate_rho(kind, &permuted).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }
}
