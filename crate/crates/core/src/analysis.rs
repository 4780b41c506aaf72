//! Closed-form error theory evaluated at the true parameters.
//!
//! Everything here uses design matrices built from the *true* line-of-sight
//! vectors; the solvers linearize at their own estimates instead.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::wls_step;
use crate::linalg::{min_eigenvalue, spd_inverse};
use crate::model::{
    build_design_kvd, build_design_pvd, build_design_uvd, BsConstellation, FullParams, MeasurementBatch, Variant,
    VelocityPrior, WeightModel,
};

/// Loewner-ordering checks accept a difference matrix whose smallest
/// eigenvalue is above this.
pub const PSD_TOLERANCE: f64 = -1e-10;

/// Relative slack on the first-order bias bound `||μ||² ≥ α ||Δv||²`.
pub const LINEAR_BIAS_TOLERANCE: f64 = 0.05;

/// Fisher information `Gᵀ W G` at the truth, together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct FimMatrix {
    pub variant: Variant,
    dim: usize,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl FimMatrix {
    /// Wraps an information matrix; fails unless it is positive definite.
    pub fn from_matrix(variant: Variant, dim: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let inverse = spd_inverse(&matrix)?;
        Ok(Self {
            variant,
            dim,
            matrix,
            inverse,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Position dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `[F⁻¹]` restricted to the first `k` parameters.
    pub fn inverse_block(&self, k: usize) -> DMatrix<f64> {
        self.inverse.view((0, 0), (k, k)).into_owned()
    }

    /// Top-left `k × k` block of the inverse via the Schur complement,
    /// `(A - B C⁻¹ Bᵀ)⁻¹`.
    pub fn schur_inverse_block(&self, k: usize) -> Result<DMatrix<f64>> {
        let total = self.matrix.nrows();
        if k == 0 || k >= total {
            return Err(Error::DimensionMismatch(format!(
                "cannot split {total} parameters at {k}"
            )));
        }
        let a = self.matrix.view((0, 0), (k, k));
        let b = self.matrix.view((0, k), (k, total - k));
        let c = self.matrix.view((k, k), (total - k, total - k)).into_owned();
        let c_inv = spd_inverse(&c)?;
        let reduced = a - b * c_inv * b.transpose();
        spd_inverse(&reduced)
    }
}

/// Fisher information for the given estimator family. `prior` is required
/// for [`Variant::Pvd`] and ignored otherwise.
pub fn fim(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    truth: &FullParams,
    variant: Variant,
    prior: Option<&VelocityPrior>,
) -> Result<FimMatrix> {
    let (g, w) = match variant {
        Variant::Kvd => (
            build_design_kvd(batch, bs, &truth.kvd(), &truth.v)?,
            WeightModel::from_batch(batch),
        ),
        Variant::Uvd => (build_design_uvd(batch, bs, truth)?, WeightModel::from_batch(batch)),
        Variant::Pvd => {
            let prior = prior.ok_or_else(|| Error::InvalidInput("PVD information needs a velocity prior".into()))?;
            (
                build_design_pvd(batch, bs, truth)?,
                WeightModel::with_prior(batch, prior),
            )
        }
    };
    if g.rows() < g.cols() {
        return Err(Error::rank(format!("{} rows for {} parameters", g.rows(), g.cols())));
    }
    FimMatrix::from_matrix(variant, truth.dim(), g.normal_matrix(&w)?)
}

/// Diagonal of `F⁻¹`; the first `N` entries are the position bounds.
pub fn crlb(f: &FimMatrix) -> DVector<f64> {
    f.inverse.diagonal()
}

/// Position bias, position covariance and the RMSE they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBudget {
    pub bias: DVector<f64>,
    pub variance: DMatrix<f64>,
    pub rmse: f64,
}

impl ErrorBudget {
    pub fn new(bias: DVector<f64>, variance: DMatrix<f64>) -> Self {
        let rmse = (bias.norm_squared() + variance.trace()).sqrt();
        Self { bias, variance, rmse }
    }

    pub fn mse(&self) -> f64 {
        self.rmse * self.rmse
    }
}

/// Unbiased budget of the KVD, UVD or PVD estimator.
pub fn theoretical_rmse(
    variant: Variant,
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    truth: &FullParams,
    prior: Option<&VelocityPrior>,
) -> Result<ErrorBudget> {
    let f = fim(batch, bs, truth, variant, prior)?;
    let n = truth.dim();
    Ok(ErrorBudget::new(DVector::zeros(n), f.inverse_block(n)))
}

/// KVD budget when the assumed velocity differs from the truth.
pub fn bias_deviated_velocity(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    truth: &FullParams,
    v_assumed: &DVector<f64>,
) -> Result<ErrorBudget> {
    if v_assumed.len() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "assumed velocity dimension {} vs {}",
            v_assumed.len(),
            truth.dim()
        )));
    }
    let n = truth.dim();
    let g = build_design_kvd(batch, bs, &truth.kvd(), &truth.v)?;
    let w = WeightModel::from_batch(batch);
    // Range mismatch between the true and the assumed displacement.
    let r = DVector::from_iterator(
        batch.len(),
        batch.entries().iter().zip(batch.dt()).map(|(m, &dt)| {
            let q = bs.position(m.bs_index);
            (q - (&truth.p + &truth.v * dt)).norm() - (q - (&truth.p + v_assumed * dt)).norm()
        }),
    );
    let shift = wls_step(&g.matrix, &w, &r)?;
    let f = FimMatrix::from_matrix(Variant::Kvd, n, g.normal_matrix(&w)?)?;
    Ok(ErrorBudget::new(shift.rows(0, n).into_owned(), f.inverse_block(n)))
}

/// Budget of the drift-only baseline, which ignores the motion.
///
/// Its range mismatch is the deviated-velocity one with the assumed
/// velocity at zero, and its covariance equals the KVD one.
pub fn bias_lspm_d(batch: &MeasurementBatch, bs: &BsConstellation, truth: &FullParams) -> Result<ErrorBudget> {
    bias_deviated_velocity(batch, bs, truth, &DVector::zeros(truth.dim()))
}

/// Result of comparing the clock/position blocks of the three inverse FIMs.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlbOrdering {
    /// Traces of the `N × N` position blocks.
    pub trace_kvd: f64,
    pub trace_pvd: f64,
    pub trace_uvd: f64,
    /// Smallest eigenvalue of `[F_P⁻¹]₁₁ - F_K⁻¹`.
    pub min_eig_pvd_minus_kvd: f64,
    /// Smallest eigenvalue of `[F_U⁻¹]₁₁ - [F_P⁻¹]₁₁`.
    pub min_eig_uvd_minus_pvd: f64,
    pub holds: bool,
}

/// Checks `F_K⁻¹ ⪯ [F_P⁻¹]₁₁ ⪯ [F_U⁻¹]₁₁` on the `(N+2)`-parameter block.
pub fn check_crlb_ordering(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    truth: &FullParams,
    prior: &VelocityPrior,
) -> Result<CrlbOrdering> {
    let n = truth.dim();
    let k = n + 2;
    let fk = fim(batch, bs, truth, Variant::Kvd, None)?;
    let fp = fim(batch, bs, truth, Variant::Pvd, Some(prior))?;
    let fu = fim(batch, bs, truth, Variant::Uvd, None)?;
    let kvd = fk.inverse_block(k);
    let pvd = fp.inverse_block(k);
    let uvd = fu.inverse_block(k);
    let lo = min_eigenvalue(&(&pvd - &kvd));
    let hi = min_eigenvalue(&(&uvd - &pvd));
    let trace = |m: &DMatrix<f64>| m.view((0, 0), (n, n)).trace();
    Ok(CrlbOrdering {
        trace_kvd: trace(&kvd),
        trace_pvd: trace(&pvd),
        trace_uvd: trace(&uvd),
        min_eig_pvd_minus_kvd: lo,
        min_eig_uvd_minus_pvd: hi,
        holds: lo > PSD_TOLERANCE && hi > PSD_TOLERANCE,
    })
}

/// One deviation tested against the linear lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationCheck {
    pub deviation: DVector<f64>,
    /// Exact `||μ̃_K||²` at this deviation.
    pub bias_sq: f64,
    /// `α ||Δv||²`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBiasBound {
    /// Smallest eigenvalue of `S`.
    pub alpha: f64,
    /// First-order map `||μ̃_K||² ≈ Δvᵀ S Δv`.
    pub s: DMatrix<f64>,
    pub checks: Vec<DeviationCheck>,
}

impl LinearBiasBound {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// First-order lower bound on the KVD position bias under a velocity
/// deviation: `S = S₂ᵀ S₁ᵀ S₁ S₂`, `α = λ_min(S)`, checked against the exact
/// bias for each deviation (assumed velocity = truth + deviation).
pub fn bias_linear_lower_bound(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    truth: &FullParams,
    deviations: &[DVector<f64>],
) -> Result<LinearBiasBound> {
    let n = truth.dim();
    let g = build_design_kvd(batch, bs, &truth.kvd(), &truth.v)?;
    let w = WeightModel::from_batch(batch);
    let f = FimMatrix::from_matrix(Variant::Kvd, n, g.normal_matrix(&w)?)?;

    // S₁ = [(GᵀWG)⁻¹ GᵀW]_{1:N,:}
    let mut gtw = g.matrix.transpose();
    for (j, wj) in w.w_rho().iter().enumerate() {
        gtw.column_mut(j).scale_mut(*wj);
    }
    let s1 = (f.inverse() * gtw).rows(0, n).into_owned();

    // [S₂]_i = dt_i e_iᵀ, the derivative of the range mismatch in the
    // deviation. e_i is the displaced line of sight used by G, so S is the
    // exact first-order map even when the true velocity is large.
    let mut s2 = DMatrix::zeros(batch.len(), n);
    for (i, (m, &dt)) in batch.entries().iter().zip(batch.dt()).enumerate() {
        let diff = bs.position(m.bs_index) - &truth.p - &truth.v * dt;
        let dist = diff.norm();
        if !(dist > 0.0) {
            return Err(Error::DegenerateGeometry {
                bs_index: m.bs_index,
                distance: dist,
            });
        }
        s2.row_mut(i).copy_from(&(diff.transpose() * (dt / dist)));
    }
    let s1s2 = &s1 * &s2;
    let s = s1s2.transpose() * s1s2;
    let alpha = min_eigenvalue(&s);
    if !(alpha > 0.0) {
        return Err(Error::rank(format!(
            "bias map is not positive definite (λ_min = {alpha:e})"
        )));
    }

    let checks = deviations
        .iter()
        .map(|dv| {
            let assumed = &truth.v + dv;
            let bias_sq = bias_deviated_velocity(batch, bs, truth, &assumed)?.bias.norm_squared();
            let bound = alpha * dv.norm_squared();
            Ok(DeviationCheck {
                deviation: dv.clone(),
                bias_sq,
                bound,
                holds: bias_sq >= (1.0 - LINEAR_BIAS_TOLERANCE) * bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearBiasBound { alpha, s, checks })
}
