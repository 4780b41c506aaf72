//! Gauss-Newton solvers for sequential pseudoranges.
//!
//! All four estimators share one iteration: linearize at the current
//! estimate, solve the weighted least-squares step, update, and stop once the
//! step norm falls below the threshold.
//!
//! | solver | unknowns | velocity |
//! |---|---|---|
//! | [`solve_ilspm_kvd`] | `[p, b, d]` | known |
//! | [`solve_ilspm_uvd`] | `[p, b, d, v]` | estimated |
//! | [`solve_ilspm_pvd`] | `[p, b, d, v]` | estimated with a Gaussian prior (MAP) |
//! | [`solve_lspm_d`] | `[p, b, d]` | assumed zero |

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    design_kvd_eps, design_pvd_eps, design_uvd_eps, residual_kvd, residual_pvd, residual_uvd, BsConstellation,
    FullParams, KvdParams, MeasurementBatch, Variant, VelocityPrior, WeightModel, DEFAULT_LOS_EPSILON,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Convergence threshold on the step norm.
    pub threshold: f64,
    /// Abort with [`Error::Diverged`] when a step norm exceeds this.
    pub divergence_guard: f64,
    pub los_epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            threshold: 1e-3,
            divergence_guard: 1e6,
            los_epsilon: DEFAULT_LOS_EPSILON,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidInput("threshold must be positive".into()));
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::InvalidInput("divergence guard must be positive".into()));
        }
        Ok(())
    }
}

/// Solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport<P> {
    pub params: P,
    pub iterations: usize,
    pub converged: bool,
    /// `(Gᵀ W G)⁻¹` at the solution.
    pub covariance: DMatrix<f64>,
    pub final_step_norm: f64,
}

impl<P> EstimateReport<P> {
    fn map<Q>(self, f: impl FnOnce(P) -> Q) -> EstimateReport<Q> {
        EstimateReport {
            params: f(self.params),
            iterations: self.iterations,
            converged: self.converged,
            covariance: self.covariance,
            final_step_norm: self.final_step_norm,
        }
    }
}

/// Weighted least-squares step `(GᵀWG)⁻¹ GᵀW r`.
///
/// Solved through an SVD of the whitened, column-equilibrated design rather
/// than by forming and inverting the normal matrix.
pub fn wls_step(g: &DMatrix<f64>, w: &WeightModel, r: &DVector<f64>) -> Result<DVector<f64>> {
    let (a, y) = w.whiten(g, r)?;
    Ok(linalg::least_squares(&a, &y)?.0)
}

/// `(GᵀWG)⁻¹` through the same factorization as [`wls_step`].
pub fn normal_inverse(g: &DMatrix<f64>, w: &WeightModel) -> Result<DMatrix<f64>> {
    let zeros = DVector::zeros(g.nrows());
    let (a, y) = w.whiten(g, &zeros)?;
    Ok(linalg::symmetrize(&linalg::least_squares(&a, &y)?.1))
}

/// Deterministic starting point: centroid of the observed base stations,
/// offset from the mean pseudorange excess, zero drift, and the given
/// velocity.
pub fn initial_guess(batch: &MeasurementBatch, bs: &BsConstellation, velocity: &DVector<f64>) -> Result<FullParams> {
    if velocity.len() != bs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "velocity dimension {} vs base station dimension {}",
            velocity.len(),
            bs.dim()
        )));
    }
    let mut seen = vec![false; bs.len()];
    let mut centroid = DVector::zeros(bs.dim());
    let mut count = 0usize;
    for m in batch.entries() {
        let flag = seen
            .get_mut(m.bs_index)
            .ok_or_else(|| Error::DimensionMismatch(format!("bs_index {} out of range", m.bs_index)))?;
        if !*flag {
            *flag = true;
            centroid += bs.position(m.bs_index);
            count += 1;
        }
    }
    centroid /= count as f64;
    let b = batch
        .entries()
        .iter()
        .map(|m| m.rho - (bs.position(m.bs_index) - &centroid).norm())
        .sum::<f64>()
        / batch.len() as f64;
    Ok(FullParams::new(centroid, b, 0.0, velocity.clone()))
}

fn require_rows(rows: usize, variant: Variant, n: usize) -> Result<()> {
    let unknowns = variant.unknowns(n);
    if rows < unknowns {
        return Err(Error::rank(format!("{rows} equations for {unknowns} unknowns")));
    }
    Ok(())
}

/// Shared Gauss-Newton loop. `linearize` returns the design matrix and the
/// residual at the given flattened parameter vector.
fn gauss_newton<F>(
    x0: DVector<f64>,
    w: &WeightModel,
    cfg: &SolverConfig,
    mut linearize: F,
) -> Result<EstimateReport<DVector<f64>>>
where
    F: FnMut(&DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)>,
{
    cfg.validate()?;
    let mut x = x0;
    let mut step_norm = f64::INFINITY;
    for iteration in 1..=cfg.max_iter {
        let (g, r) = linearize(&x)?;
        let step = wls_step(&g, w, &r)?;
        step_norm = step.norm();
        if !step_norm.is_finite() || step_norm > cfg.divergence_guard {
            return Err(Error::Diverged { iteration, step_norm });
        }
        x += step;
        if step_norm < cfg.threshold {
            let (g, _) = linearize(&x)?;
            let covariance = normal_inverse(&g, w)?;
            return Ok(EstimateReport {
                params: x,
                iterations: iteration,
                converged: true,
                covariance,
                final_step_norm: step_norm,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        step_norm,
        last: Box::new(x),
    })
}

/// Known-velocity estimator (ILSPM-KVD).
pub fn solve_ilspm_kvd(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    v_known: &DVector<f64>,
    init: &KvdParams,
    cfg: &SolverConfig,
) -> Result<EstimateReport<KvdParams>> {
    let n = bs.dim();
    require_rows(batch.len(), Variant::Kvd, n)?;
    let w = WeightModel::from_batch(batch);
    let report = gauss_newton(init.to_vector(), &w, cfg, |x| {
        let at = KvdParams::from_vector(x, n)?;
        let g = design_kvd_eps(batch, bs, &at, v_known, cfg.los_epsilon)?;
        let r = residual_kvd(batch, bs, &at, v_known)?;
        Ok((g.matrix, r))
    })?;
    let params = KvdParams::from_vector(&report.params, n)?;
    Ok(report.map(|_| params))
}

/// Joint position-velocity estimator (ILSPM-UVD).
pub fn solve_ilspm_uvd(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    init: &FullParams,
    cfg: &SolverConfig,
) -> Result<EstimateReport<FullParams>> {
    let n = bs.dim();
    require_rows(batch.len(), Variant::Uvd, n)?;
    let w = WeightModel::from_batch(batch);
    let report = gauss_newton(init.to_vector(), &w, cfg, |x| {
        let at = FullParams::from_vector(x, n)?;
        let g = design_uvd_eps(batch, bs, &at, cfg.los_epsilon)?;
        let r = residual_uvd(batch, bs, &at)?;
        Ok((g.matrix, r))
    })?;
    let params = FullParams::from_vector(&report.params, n)?;
    Ok(report.map(|_| params))
}

/// MAP estimator with a Gaussian velocity prior (ILSPM-PVD).
///
/// Minimizes `||[ρ - h(θ); v̄ - v]||²_W` with `W = diag(W_ρ, Σ_v⁻¹)`.
pub fn solve_ilspm_pvd(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    prior: &VelocityPrior,
    init: &FullParams,
    cfg: &SolverConfig,
) -> Result<EstimateReport<FullParams>> {
    let n = bs.dim();
    if prior.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "prior dimension {} vs base station dimension {n}",
            prior.dim()
        )));
    }
    require_rows(batch.len() + n, Variant::Pvd, n)?;
    let w = WeightModel::with_prior(batch, prior);
    let report = gauss_newton(init.to_vector(), &w, cfg, |x| {
        let at = FullParams::from_vector(x, n)?;
        let g = design_pvd_eps(batch, bs, &at, cfg.los_epsilon)?;
        let r = residual_pvd(batch, bs, &at, prior)?;
        Ok((g.matrix, r))
    })?;
    let params = FullParams::from_vector(&report.params, n)?;
    Ok(report.map(|_| params))
}

/// Conventional drift-only estimator: KVD with the velocity fixed at zero.
pub fn solve_lspm_d(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    init: &KvdParams,
    cfg: &SolverConfig,
) -> Result<EstimateReport<KvdParams>> {
    solve_ilspm_kvd(batch, bs, &DVector::zeros(bs.dim()), init, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{predict_pseudorange, Measurement};
    use approx::assert_relative_eq;

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn square30() -> BsConstellation {
        BsConstellation::from_rows(&[[0.0, 0.0], [30.0, 0.0], [30.0, 30.0], [0.0, 30.0]]).unwrap()
    }

    fn noise_free(bs: &BsConstellation, truth: &FullParams, m: usize) -> MeasurementBatch {
        let entries = (0..m)
            .map(|i| {
                let dt = 0.01 * i as f64;
                Measurement {
                    bs_index: i % bs.len(),
                    t: dt,
                    rho: predict_pseudorange(bs.position(i % bs.len()), truth, dt),
                    sigma: 0.1,
                }
            })
            .collect();
        MeasurementBatch::new(entries, 0.0).unwrap()
    }

    #[test]
    fn wls_identity_returns_residual() {
        let g = DMatrix::identity(3, 3);
        let w = WeightModel::diagonal(DVector::from_element(3, 1.0)).unwrap();
        let r = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        assert_relative_eq!(wls_step(&g, &w, &r).unwrap(), r, epsilon = 1e-14);
    }

    #[test]
    fn wls_unweighted_and_weighted_mean() {
        let g = DMatrix::from_element(2, 1, 1.0);
        let w = WeightModel::diagonal(DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let step = wls_step(&g, &w, &DVector::from_vec(vec![1.0, 3.0])).unwrap();
        assert_relative_eq!(step[0], 2.0, epsilon = 1e-14);
        let w = WeightModel::diagonal(DVector::from_vec(vec![1.0, 3.0])).unwrap();
        let step = wls_step(&g, &w, &DVector::from_vec(vec![0.0, 4.0])).unwrap();
        assert_relative_eq!(step[0], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn wls_rank_deficient() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let w = WeightModel::diagonal(DVector::from_element(3, 1.0)).unwrap();
        let r = DVector::from_element(3, 1.0);
        assert!(matches!(wls_step(&g, &w, &r), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn kvd_recovers_noise_free_truth() {
        let bs = square30();
        let truth = FullParams::new(v2(15.0, 15.0), 30.0, 1498.96, v2(5.0, 0.0));
        let batch = noise_free(&bs, &truth, 8);
        let init = KvdParams::new(v2(19.0, 12.0), 35.0, 0.0);
        let rep = solve_ilspm_kvd(&batch, &bs, &truth.v, &init, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 10);
        assert!(rep.final_step_norm < 1e-3);
        assert!((rep.params.p - truth.p).norm() < 1e-6);
    }

    #[test]
    fn kvd_underdetermined() {
        let bs = square30();
        let truth = FullParams::new(v2(15.0, 15.0), 0.0, 0.0, v2(0.0, 0.0));
        let batch = noise_free(&bs, &truth, 3);
        let init = initial_guess(&batch, &bs, &truth.v).unwrap().kvd();
        let err = solve_ilspm_kvd(&batch, &bs, &truth.v, &init, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn kvd_identical_times_are_rank_deficient() {
        let bs = square30();
        let entries = (0..6)
            .map(|i| Measurement {
                bs_index: i % 4,
                t: 1.0,
                rho: 20.0,
                sigma: 0.1,
            })
            .collect();
        let batch = MeasurementBatch::new(entries, 0.0).unwrap();
        let init = KvdParams::new(v2(14.0, 14.0), 0.0, 0.0);
        let err = solve_ilspm_kvd(&batch, &bs, &v2(0.0, 0.0), &init, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn uvd_collinear_geometry_is_rank_deficient() {
        // Three base stations on the x-axis with the user device on the same
        // line: every LOS vector is ±x, so the y columns vanish.
        let bs = BsConstellation::from_rows(&[[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]]).unwrap();
        let truth = FullParams::new(v2(5.0, 0.0), 0.0, 0.0, v2(0.0, 0.0));
        let batch = noise_free(&bs, &truth, 6);
        let init = FullParams::new(v2(10.0 + 1e-3, 0.0), 0.0, 0.0, v2(0.0, 0.0));
        let err = solve_ilspm_uvd(&batch, &bs, &init, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }), "{err:?}");
    }

    #[test]
    fn not_converged_returns_last_iterate() {
        let bs = square30();
        let truth = FullParams::new(v2(15.0, 15.0), 30.0, 0.0, v2(0.0, 0.0));
        let batch = noise_free(&bs, &truth, 8);
        let init = KvdParams::new(v2(10.0, 20.0), 0.0, 0.0);
        let cfg = SolverConfig {
            max_iter: 1,
            ..Default::default()
        };
        match solve_ilspm_kvd(&batch, &bs, &truth.v, &init, &cfg) {
            Err(Error::NotConverged { iterations, last, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last.len(), 4);
                assert!((last.rows(0, 2) - &truth.p).norm() < (init.p.clone() - &truth.p).norm());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn divergence_guard_trips() {
        let bs = square30();
        let truth = FullParams::new(v2(15.0, 15.0), 30.0, 0.0, v2(0.0, 0.0));
        let batch = noise_free(&bs, &truth, 8);
        let init = KvdParams::new(v2(10.0, 20.0), 0.0, 0.0);
        let cfg = SolverConfig {
            divergence_guard: 1e-2,
            ..Default::default()
        };
        assert!(matches!(
            solve_ilspm_kvd(&batch, &bs, &truth.v, &init, &cfg),
            Err(Error::Diverged { iteration: 1, .. })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig {
            max_iter: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            threshold: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lspm_d_is_kvd_at_zero_velocity() {
        let bs = square30();
        let truth = FullParams::new(v2(13.0, 16.0), 30.0, 1498.96, v2(0.0, 0.0));
        let mut batch = noise_free(&bs, &truth, 8);
        let jitter: Vec<f64> = batch
            .rho()
            .iter()
            .enumerate()
            .map(|(i, r)| r + 0.05 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        batch = batch.with_rho(&jitter).unwrap();
        let init = initial_guess(&batch, &bs, &truth.v).unwrap().kvd();
        let cfg = SolverConfig::default();
        let d = solve_lspm_d(&batch, &bs, &init, &cfg).unwrap();
        let k = solve_ilspm_kvd(&batch, &bs, &v2(0.0, 0.0), &init, &cfg).unwrap();
        assert_eq!(d, k);
    }

    #[test]
    fn initial_guess_uses_observed_centroid() {
        let bs = BsConstellation::from_rows(&[[0.0, 0.0], [30.0, 0.0], [30.0, 30.0], [100.0, 100.0]]).unwrap();
        let truth = FullParams::new(v2(15.0, 15.0), 7.0, 0.0, v2(0.0, 0.0));
        let entries = (0..6)
            .map(|i| {
                let k = i % 3;
                Measurement {
                    bs_index: k,
                    t: 0.01 * i as f64,
                    rho: predict_pseudorange(bs.position(k), &truth, 0.01 * i as f64),
                    sigma: 0.1,
                }
            })
            .collect();
        let batch = MeasurementBatch::new(entries, 0.0).unwrap();
        let init = initial_guess(&batch, &bs, &v2(1.0, 2.0)).unwrap();
        assert_relative_eq!(init.p, v2(20.0, 10.0), epsilon = 1e-12);
        assert_eq!(init.d, 0.0);
        assert_eq!(init.v, v2(1.0, 2.0));
        let expected_b = batch
            .entries()
            .iter()
            .map(|m| m.rho - (bs.position(m.bs_index) - v2(20.0, 10.0)).norm())
            .sum::<f64>()
            / 6.0;
        assert_relative_eq!(init.b, expected_b, epsilon = 1e-12);
    }
}
