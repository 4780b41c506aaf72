//! Measurement model for sequential pseudoranges.
//!
//! A pseudorange received at time `t_i` from base station `q_i` is modelled
//! around the localization epoch `t_L` as
//!
//! ```text
//! rho_i = ||q_i - (p + v * dt_i)|| + b + d * dt_i + noise,   dt_i = t_i - t_L
//! ```
//!
//! with position `p`, velocity `v`, clock offset `b` (meters) and clock
//! drift `d` (meters per second), all referenced to `t_L`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Distance below which a base station and the displaced user device are
/// treated as coincident.
pub const DEFAULT_LOS_EPSILON: f64 = 1e-9;

/// Known base station positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BsConstellation {
    positions: Vec<DVector<f64>>,
}

impl BsConstellation {
    pub fn new(positions: Vec<DVector<f64>>) -> Result<Self> {
        let first = positions.first().ok_or(Error::EmptyInput("base station list"))?;
        let dim = first.len();
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidInput(format!("position dimension {dim} is not 2 or 3")));
        }
        for (i, q) in positions.iter().enumerate() {
            if q.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "base station {i} has dimension {}, expected {dim}",
                    q.len()
                )));
            }
            if q.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("base station {i} is not finite")));
            }
        }
        Ok(Self { positions })
    }

    /// Builds a constellation from coordinate rows, e.g. `&[[0.0, 0.0], [30.0, 0.0]]`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_column_slice(r.as_ref())).collect())
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, index: usize) -> &DVector<f64> {
        &self.positions[index]
    }

    pub fn positions(&self) -> &[DVector<f64>] {
        &self.positions
    }

    pub fn translated(&self, offset: &DVector<f64>) -> Self {
        Self {
            positions: self.positions.iter().map(|q| q + offset).collect(),
        }
    }
}

/// One received pseudorange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub bs_index: usize,
    /// Reception time in system time, seconds.
    pub t: f64,
    /// Pseudorange, meters.
    pub rho: f64,
    /// Noise standard deviation, meters.
    pub sigma: f64,
}

/// `M` sequential pseudoranges referenced to the localization epoch `t_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    entries: Vec<Measurement>,
    t_l: f64,
    dt: Vec<f64>,
}

impl MeasurementBatch {
    pub fn new(entries: Vec<Measurement>, t_l: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("measurement batch"));
        }
        if !t_l.is_finite() {
            return Err(Error::InvalidInput("localization epoch is not finite".into()));
        }
        for (i, m) in entries.iter().enumerate() {
            if !(m.sigma > 0.0) || !m.sigma.is_finite() {
                return Err(Error::InvalidInput(format!("entry {i}: sigma must be positive")));
            }
            if !m.t.is_finite() || !m.rho.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "entry {i}: non-finite time or pseudorange"
                )));
            }
        }
        let dt = entries.iter().map(|m| m.t - t_l).collect();
        Ok(Self { entries, t_l, dt })
    }

    /// Batch whose epoch is the first reception time.
    pub fn referenced_to_first(entries: Vec<Measurement>) -> Result<Self> {
        let t_l = entries.first().ok_or(Error::EmptyInput("measurement batch"))?.t;
        Self::new(entries, t_l)
    }

    pub fn entries(&self) -> &[Measurement] {
        &self.entries
    }

    pub fn t_l(&self) -> f64 {
        self.t_l
    }

    /// `t_i - t_L` for every entry.
    pub fn dt(&self) -> &[f64] {
        &self.dt
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rho(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.entries.iter().map(|m| m.rho))
    }

    /// Copy of the batch with every sigma multiplied by `factor`.
    pub fn with_scaled_sigma(&self, factor: f64) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|m| Measurement {
                sigma: m.sigma * factor,
                ..*m
            })
            .collect();
        Self::new(entries, self.t_l)
    }

    /// Copy of the batch with the pseudoranges replaced.
    pub fn with_rho(&self, rho: &[f64]) -> Result<Self> {
        if rho.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} pseudoranges for {} entries",
                rho.len(),
                self.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(rho)
            .map(|(m, r)| Measurement { rho: *r, ..*m })
            .collect();
        Self::new(entries, self.t_l)
    }

    fn check_against(&self, bs: &BsConstellation) -> Result<()> {
        match self.entries.iter().find(|m| m.bs_index >= bs.len()) {
            Some(m) => Err(Error::DimensionMismatch(format!(
                "bs_index {} out of range for {} base stations",
                m.bs_index,
                bs.len()
            ))),
            None => Ok(()),
        }
    }
}

/// Position, clock offset and clock drift: `[pᵀ, b, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvdParams {
    pub p: DVector<f64>,
    pub b: f64,
    pub d: f64,
}

impl KvdParams {
    pub fn new(p: DVector<f64>, b: f64, d: f64) -> Self {
        Self { p, b, d }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::zeros(n + 2);
        x.rows_mut(0, n).copy_from(&self.p);
        x[n] = self.b;
        x[n + 1] = self.d;
        x
    }

    pub fn from_vector(x: &DVector<f64>, n: usize) -> Result<Self> {
        if x.len() != n + 2 {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for N+2 = {}",
                x.len(),
                n + 2
            )));
        }
        Ok(Self {
            p: x.rows(0, n).into_owned(),
            b: x[n],
            d: x[n + 1],
        })
    }

    pub fn with_velocity(&self, v: DVector<f64>) -> FullParams {
        FullParams {
            p: self.p.clone(),
            b: self.b,
            d: self.d,
            v,
        }
    }
}

/// Position, clock offset, clock drift and velocity: `[pᵀ, b, d, vᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullParams {
    pub p: DVector<f64>,
    pub b: f64,
    pub d: f64,
    pub v: DVector<f64>,
}

impl FullParams {
    pub fn new(p: DVector<f64>, b: f64, d: f64, v: DVector<f64>) -> Self {
        Self { p, b, d, v }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::zeros(2 * n + 2);
        x.rows_mut(0, n).copy_from(&self.p);
        x[n] = self.b;
        x[n + 1] = self.d;
        x.rows_mut(n + 2, n).copy_from(&self.v);
        x
    }

    pub fn from_vector(x: &DVector<f64>, n: usize) -> Result<Self> {
        if x.len() != 2 * n + 2 {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for 2N+2 = {}",
                x.len(),
                2 * n + 2
            )));
        }
        Ok(Self {
            p: x.rows(0, n).into_owned(),
            b: x[n],
            d: x[n + 1],
            v: x.rows(n + 2, n).into_owned(),
        })
    }

    pub fn kvd(&self) -> KvdParams {
        KvdParams::new(self.p.clone(), self.b, self.d)
    }

    fn check(&self) -> Result<()> {
        if self.v.len() != self.p.len() {
            return Err(Error::DimensionMismatch(format!(
                "velocity dimension {} vs position dimension {}",
                self.v.len(),
                self.p.len()
            )));
        }
        Ok(())
    }
}

/// Gaussian prior on the user velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPrior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    information: DMatrix<f64>,
    /// Upper-triangular `R` with `information = Rᵀ R`.
    whitener: DMatrix<f64>,
}

impl VelocityPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "prior covariance is {:?}, mean has {n} entries",
                covariance.shape()
            )));
        }
        let scale = covariance.amax();
        if (&covariance - covariance.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput("prior covariance is not symmetric".into()));
        }
        let eig = nalgebra::SymmetricEigen::new(covariance.clone());
        if !(eig.eigenvalues.min() > 0.0) {
            return Err(Error::InvalidInput("prior covariance is not positive definite".into()));
        }
        let information = crate::linalg::spd_inverse(&covariance)
            .map_err(|e| Error::InvalidInput(format!("prior covariance: {e}")))?;
        let whitener = information
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("prior information is not positive definite".into()))?
            .l()
            .transpose();
        Ok(Self {
            mean,
            covariance,
            information,
            whitener,
        })
    }

    /// Independent axes with a common standard deviation.
    pub fn isotropic(mean: DVector<f64>, std: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * (std * std))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `W_v = Σ_v⁻¹`.
    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Weighting of the least-squares problem: inverse pseudorange variances,
/// optionally stacked with the prior velocity information.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    w_rho: DVector<f64>,
    velocity: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl WeightModel {
    pub fn from_batch(batch: &MeasurementBatch) -> Self {
        Self {
            w_rho: DVector::from_iterator(batch.len(), batch.entries().iter().map(|m| 1.0 / (m.sigma * m.sigma))),
            velocity: None,
        }
    }

    pub fn with_prior(batch: &MeasurementBatch, prior: &VelocityPrior) -> Self {
        Self {
            velocity: Some((prior.information.clone(), prior.whitener.clone())),
            ..Self::from_batch(batch)
        }
    }

    /// Diagonal weights from explicit values, for generic WLS problems.
    pub fn diagonal(weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be positive".into()));
        }
        Ok(Self {
            w_rho: weights,
            velocity: None,
        })
    }

    /// Diagonal of `W_ρ`.
    pub fn w_rho(&self) -> &DVector<f64> {
        &self.w_rho
    }

    pub fn has_prior(&self) -> bool {
        self.velocity.is_some()
    }

    pub fn rows(&self) -> usize {
        self.w_rho.len() + self.velocity.as_ref().map_or(0, |(w, _)| w.nrows())
    }

    /// Dense `W`: `diag(W_ρ)` alone, or block-diagonal with `Σ_v⁻¹`.
    pub fn full(&self) -> DMatrix<f64> {
        let m = self.w_rho.len();
        let mut w = DMatrix::zeros(self.rows(), self.rows());
        w.view_mut((0, 0), (m, m)).set_diagonal(&self.w_rho);
        if let Some((info, _)) = &self.velocity {
            let n = info.nrows();
            w.view_mut((m, m), (n, n)).copy_from(info);
        }
        w
    }

    /// Returns `W^{1/2} g` and `W^{1/2} r` so that `||W^{1/2}(r - g x)||²`
    /// equals the weighted cost.
    pub(crate) fn whiten(&self, g: &DMatrix<f64>, r: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let rows = self.rows();
        if g.nrows() != rows || r.len() != rows {
            return Err(Error::DimensionMismatch(format!(
                "weights cover {rows} rows, design has {} and residual {}",
                g.nrows(),
                r.len()
            )));
        }
        let m = self.w_rho.len();
        let mut a = g.clone();
        let mut y = r.clone();
        for i in 0..m {
            let s = self.w_rho[i].sqrt();
            a.row_mut(i).scale_mut(s);
            y[i] *= s;
        }
        if let Some((_, whitener)) = &self.velocity {
            let n = whitener.nrows();
            let block = whitener * g.rows(m, n);
            a.rows_mut(m, n).copy_from(&block);
            let yb = whitener * r.rows(m, n);
            y.rows_mut(m, n).copy_from(&yb);
        }
        Ok((a, y))
    }
}

/// Which linearization a design matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Known velocity: columns `[p, b, d]`.
    Kvd,
    /// Unknown velocity: columns `[p, b, d, v]`.
    Uvd,
    /// Velocity prior: UVD rows stacked over `[0 | I_N]`.
    Pvd,
}

impl Variant {
    pub fn unknowns(self, n: usize) -> usize {
        match self {
            Variant::Kvd => n + 2,
            Variant::Uvd | Variant::Pvd => 2 * n + 2,
        }
    }
}

/// Jacobian of the (stacked) measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub variant: Variant,
    pub matrix: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `Gᵀ W G`.
    pub fn normal_matrix(&self, w: &WeightModel) -> Result<DMatrix<f64>> {
        let zeros = DVector::zeros(self.rows());
        let (a, _) = w.whiten(&self.matrix, &zeros)?;
        Ok(a.transpose() * a)
    }
}

/// Noise-free pseudorange `||q - (p + v dt)|| + b + d dt`.
pub fn predict_pseudorange(q: &DVector<f64>, params: &FullParams, dt: f64) -> f64 {
    (q - (&params.p + &params.v * dt)).norm() + params.b + params.d * dt
}

/// Unit vector from the displaced user device `p + v dt` towards `q`.
pub fn los_vector(q: &DVector<f64>, p: &DVector<f64>, v: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    los_vector_with_epsilon(q, p, v, dt, DEFAULT_LOS_EPSILON).map_err(|e| match e {
        Error::DegenerateGeometry { distance, .. } => Error::DegenerateGeometry { bs_index: 0, distance },
        other => other,
    })
}

pub fn los_vector_with_epsilon(
    q: &DVector<f64>,
    p: &DVector<f64>,
    v: &DVector<f64>,
    dt: f64,
    epsilon: f64,
) -> Result<DVector<f64>> {
    if q.len() != p.len() || v.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "q, p, v have dimensions {}, {}, {}",
            q.len(),
            p.len(),
            v.len()
        )));
    }
    let diff = q - (p + v * dt);
    let distance = diff.norm();
    if !(distance > epsilon) {
        return Err(Error::DegenerateGeometry { bs_index: 0, distance });
    }
    Ok(diff / distance)
}

fn los_rows(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    p: &DVector<f64>,
    v: &DVector<f64>,
    epsilon: f64,
) -> Result<Vec<DVector<f64>>> {
    batch.check_against(bs)?;
    if p.len() != bs.dim() || v.len() != bs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameters have dimension {}, base stations {}",
            p.len(),
            bs.dim()
        )));
    }
    batch
        .entries()
        .iter()
        .zip(batch.dt())
        .map(|(m, &dt)| {
            los_vector_with_epsilon(bs.position(m.bs_index), p, v, dt, epsilon).map_err(|e| match e {
                Error::DegenerateGeometry { distance, .. } => Error::DegenerateGeometry {
                    bs_index: m.bs_index,
                    distance,
                },
                other => other,
            })
        })
        .collect()
}

/// Fills `[-eᵀ, 1, dt]` and, when `with_velocity`, `-eᵀ dt` in `m` rows.
fn fill_rows(los: &[DVector<f64>], dt: &[f64], with_velocity: bool, extra_rows: usize) -> DMatrix<f64> {
    let n = los[0].len();
    let cols = if with_velocity { 2 * n + 2 } else { n + 2 };
    let mut g = DMatrix::zeros(los.len() + extra_rows, cols);
    for (i, (e, &dt)) in los.iter().zip(dt).enumerate() {
        for k in 0..n {
            g[(i, k)] = -e[k];
        }
        g[(i, n)] = 1.0;
        g[(i, n + 1)] = dt;
        if with_velocity {
            for k in 0..n {
                g[(i, n + 2 + k)] = -e[k] * dt;
            }
        }
    }
    g
}

pub(crate) fn design_kvd_eps(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    at: &KvdParams,
    v_known: &DVector<f64>,
    epsilon: f64,
) -> Result<DesignMatrix> {
    let los = los_rows(batch, bs, &at.p, v_known, epsilon)?;
    Ok(DesignMatrix {
        variant: Variant::Kvd,
        matrix: fill_rows(&los, batch.dt(), false, 0),
    })
}

pub(crate) fn design_uvd_eps(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    at: &FullParams,
    epsilon: f64,
) -> Result<DesignMatrix> {
    at.check()?;
    let los = los_rows(batch, bs, &at.p, &at.v, epsilon)?;
    Ok(DesignMatrix {
        variant: Variant::Uvd,
        matrix: fill_rows(&los, batch.dt(), true, 0),
    })
}

pub(crate) fn design_pvd_eps(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    at: &FullParams,
    epsilon: f64,
) -> Result<DesignMatrix> {
    at.check()?;
    let los = los_rows(batch, bs, &at.p, &at.v, epsilon)?;
    let n = at.dim();
    let m = batch.len();
    let mut g = fill_rows(&los, batch.dt(), true, n);
    g.view_mut((m, n + 2), (n, n)).fill_with_identity();
    Ok(DesignMatrix {
        variant: Variant::Pvd,
        matrix: g,
    })
}

/// Known-velocity design matrix: row `i` is `[-e_iᵀ, 1, dt_i]`, with `e_i`
/// displaced by the known velocity.
pub fn build_design_kvd(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    at: &KvdParams,
    v_known: &DVector<f64>,
) -> Result<DesignMatrix> {
    design_kvd_eps(batch, bs, at, v_known, DEFAULT_LOS_EPSILON)
}

/// Unknown-velocity design matrix: row `i` is `[-e_iᵀ, 1, dt_i, -e_iᵀ dt_i]`.
pub fn build_design_uvd(batch: &MeasurementBatch, bs: &BsConstellation, at: &FullParams) -> Result<DesignMatrix> {
    design_uvd_eps(batch, bs, at, DEFAULT_LOS_EPSILON)
}

/// Velocity-prior design matrix: the UVD rows over `[0_{N×(N+2)} | I_N]`.
pub fn build_design_pvd(batch: &MeasurementBatch, bs: &BsConstellation, at: &FullParams) -> Result<DesignMatrix> {
    design_pvd_eps(batch, bs, at, DEFAULT_LOS_EPSILON)
}

fn predicted(batch: &MeasurementBatch, bs: &BsConstellation, at: &FullParams) -> Result<DVector<f64>> {
    batch.check_against(bs)?;
    at.check()?;
    if at.dim() != bs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameters have dimension {}, base stations {}",
            at.dim(),
            bs.dim()
        )));
    }
    Ok(DVector::from_iterator(
        batch.len(),
        batch
            .entries()
            .iter()
            .zip(batch.dt())
            .map(|(m, &dt)| predict_pseudorange(bs.position(m.bs_index), at, dt)),
    ))
}

/// `ρ - h(θ)` with the velocity held at `v_known`.
pub fn residual_kvd(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    at: &KvdParams,
    v_known: &DVector<f64>,
) -> Result<DVector<f64>> {
    let full = at.with_velocity(v_known.clone());
    Ok(batch.rho() - predicted(batch, bs, &full)?)
}

/// `ρ - h(θ)`.
pub fn residual_uvd(batch: &MeasurementBatch, bs: &BsConstellation, at: &FullParams) -> Result<DVector<f64>> {
    Ok(batch.rho() - predicted(batch, bs, at)?)
}

/// Stacked residual `[ρ - h(θ); v̄ - v]`.
pub fn residual_pvd(
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    at: &FullParams,
    prior: &VelocityPrior,
) -> Result<DVector<f64>> {
    if prior.dim() != at.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prior dimension {} vs parameter dimension {}",
            prior.dim(),
            at.dim()
        )));
    }
    let top = residual_uvd(batch, bs, at)?;
    let m = top.len();
    let n = at.dim();
    let mut r = DVector::zeros(m + n);
    r.rows_mut(0, m).copy_from(&top);
    r.rows_mut(m, n).copy_from(&(prior.mean() - &at.v));
    Ok(r)
}
