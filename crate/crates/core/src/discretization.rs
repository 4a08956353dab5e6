//! Discrete LTV model on a uniform true-anomaly grid and the stacked
//! terminal-constraint system `x(N) = beta + C_N U`.

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6x3, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{input_matrix, stm, stm_with_j, Frame, OrbitParams, StateVector};
use crate::quadrature::GaussLegendre;

/// Control dimension.
pub const M: usize = 3;

/// Relative change tolerated when the quadrature node count is doubled.
pub const QUADRATURE_CHECK: f64 = 1e-8;

/// Uniform grid `nu_k = nu0 + alpha k`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyGrid {
    nu0: f64,
    nuf: f64,
    stages: usize,
    alpha: f64,
}

impl AnomalyGrid {
    pub fn new(nu0: f64, nuf: f64, stages: usize) -> Result<Self> {
        if !(nu0.is_finite() && nuf.is_finite()) {
            return Err(Error::InvalidGrid("anomalies must be finite".into()));
        }
        if nuf <= nu0 {
            return Err(Error::InvalidGrid(format!("nuf ({nuf}) must exceed nu0 ({nu0})")));
        }
        if stages == 0 {
            return Err(Error::InvalidGrid("stage count must be at least 1".into()));
        }
        Ok(Self { nu0, nuf, stages, alpha: (nuf - nu0) / stages as f64 })
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }
    pub fn nuf(&self) -> f64 {
        self.nuf
    }
    /// Number of stages `N`.
    pub fn stages(&self) -> usize {
        self.stages
    }
    /// Sampling period in anomaly.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Anomaly of node `k`; the last node is exactly `nuf`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.stages {
            self.nuf
        } else {
            self.nu0 + self.alpha * k as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.stages).map(|k| self.node(k))
    }
}

/// Units of the stacked control vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlUnits {
    /// `u(k)` enters through `Bc` held constant in `nu` over the stage.
    Literal,
    /// `u(k)` is the velocity increment [m/s] delivered over the stage by
    /// that same held input.
    #[default]
    DeltaV,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizeOptions {
    /// Gauss–Legendre nodes per stage; the check runs with twice as many.
    pub gauss_nodes: usize,
    pub units: ControlUnits,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self { gauss_nodes: 5, units: ControlUnits::Literal }
    }
}

/// `x(k+1) = A(k) x(k) + B(k) u(k)` on an [`AnomalyGrid`].
#[derive(Debug, Clone)]
pub struct DiscreteLTV {
    params: OrbitParams,
    grid: AnomalyGrid,
    a: Vec<Matrix6<f64>>,
    b_literal: Vec<Matrix6x3<f64>>,
    dv_gain: Vec<f64>,
    units: ControlUnits,
}

impl DiscreteLTV {
    pub fn params(&self) -> &OrbitParams {
        &self.params
    }
    pub fn grid(&self) -> &AnomalyGrid {
        &self.grid
    }
    pub fn units(&self) -> ControlUnits {
        self.units
    }
    pub fn stages(&self) -> usize {
        self.grid.stages
    }
    pub fn a(&self, k: usize) -> &Matrix6<f64> {
        &self.a[k]
    }

    /// `B(k)` as the integral of `Phi(nu_{k+1}, s) Bc(s)` over the stage.
    pub fn b_literal(&self, k: usize) -> &Matrix6x3<f64> {
        &self.b_literal[k]
    }

    /// Velocity increment [m/s] per unit of literal input held over stage `k`:
    /// `(1/gamma) * integral of rho^-3` over the stage.
    pub fn dv_gain(&self, k: usize) -> f64 {
        self.dv_gain[k]
    }

    /// Input matrix of stage `k` in this system's control units.
    pub fn b(&self, k: usize) -> Matrix6x3<f64> {
        match self.units {
            ControlUnits::Literal => self.b_literal[k],
            ControlUnits::DeltaV => self.b_literal[k] / self.dv_gain[k],
        }
    }

    /// Same system re-expressed in other control units.
    pub fn with_units(mut self, units: ControlUnits) -> Self {
        self.units = units;
        self
    }

    /// Converts a schedule in this system's units to the other convention.
    pub fn convert_schedule(&self, u: &ControlSchedule, to: ControlUnits) -> ControlSchedule {
        let mut out = u.clone();
        if to == self.units {
            return out;
        }
        for k in 0..self.stages() {
            let g = self.dv_gain[k];
            let factor = match to {
                ControlUnits::DeltaV => g,
                ControlUnits::Literal => 1.0 / g,
            };
            for i in 0..M {
                out.stacked[M * k + i] *= factor;
            }
        }
        out
    }
}

/// Builds the discrete system with the default options (5 Gauss nodes, literal units).
pub fn discretize(params: &OrbitParams, grid: &AnomalyGrid) -> Result<DiscreteLTV> {
    discretize_with(params, grid, DiscretizeOptions::default())
}

pub fn discretize_with(
    params: &OrbitParams,
    grid: &AnomalyGrid,
    opts: DiscretizeOptions,
) -> Result<DiscreteLTV> {
    if opts.gauss_nodes == 0 {
        return Err(Error::InvalidGrid("need at least one Gauss node".into()));
    }
    let rule = GaussLegendre::new(opts.gauss_nodes);
    let check = GaussLegendre::new(2 * opts.gauss_nodes);

    let stages: Vec<(Matrix6<f64>, Matrix6x3<f64>, f64)> = (0..grid.stages)
        .into_par_iter()
        .map(|k| {
            let (lo, hi) = (grid.node(k), grid.node(k + 1));
            let a = stm(params, lo, hi);
            let (b, g) = stage_input(params, lo, hi, &rule);
            let (b_ref, g_ref) = stage_input(params, lo, hi, &check);
            let scale = b_ref.abs().max();
            let change = if scale > 0.0 { (b - b_ref).abs().max() / scale } else { 0.0 };
            let g_change = ((g - g_ref) / g_ref).abs();
            let worst = change.max(g_change);
            if worst > QUADRATURE_CHECK || !worst.is_finite() {
                return Err(Error::QuadratureNonconvergence { stage: k, change: worst });
            }
            Ok((a, b, g))
        })
        .collect::<Result<_>>()?;

    let mut a = Vec::with_capacity(grid.stages);
    let mut b_literal = Vec::with_capacity(grid.stages);
    let mut dv_gain = Vec::with_capacity(grid.stages);
    for (ak, bk, gk) in stages {
        a.push(ak);
        b_literal.push(bk);
        dv_gain.push(gk);
    }
    Ok(DiscreteLTV { params: *params, grid: *grid, a, b_literal, dv_gain, units: opts.units })
}

fn stage_input(
    params: &OrbitParams,
    lo: f64,
    hi: f64,
    rule: &GaussLegendre,
) -> (Matrix6x3<f64>, f64) {
    let mut b = Matrix6x3::zeros();
    let mut g = 0.0;
    for (sigma, w) in rule.mapped(lo, hi) {
        let j = params.j_integral(sigma, hi);
        b += stm_with_j(params, sigma, hi, j) * input_matrix(params, sigma) * w;
        g += w / params.rho(sigma).powi(3);
    }
    (b, g / params.gamma())
}

/// `Phi_d(k, m) = A(k-1) ... A(m)`, identity when `k == m`.
pub fn discrete_stm(sys: &DiscreteLTV, k: usize, m: usize) -> Result<Matrix6<f64>> {
    if k < m {
        return Err(Error::IndexOrder { k, m });
    }
    if k > sys.stages() {
        return Err(Error::StageOutOfRange { index: k, stages: sys.stages() });
    }
    Ok((m..k).fold(Matrix6::identity(), |acc, i| sys.a[i] * acc))
}

/// Stacked control vector `U = [u(0); u(1); ...; u(N-1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    stacked: DVector<f64>,
}

impl ControlSchedule {
    pub fn zeros(stages: usize) -> Self {
        Self { stacked: DVector::zeros(M * stages) }
    }

    pub fn from_stacked(stacked: DVector<f64>) -> Result<Self> {
        if !stacked.len().is_multiple_of(M) {
            return Err(Error::LengthMismatch { expected: M * (stacked.len() / M + 1), found: stacked.len() });
        }
        Ok(Self { stacked })
    }

    pub fn from_stages(stages: &[Vector3<f64>]) -> Self {
        let stacked = DVector::from_iterator(M * stages.len(), stages.iter().flat_map(|u| u.iter().copied()));
        Self { stacked }
    }

    pub fn stages(&self) -> usize {
        self.stacked.len() / M
    }

    pub fn stage(&self, k: usize) -> Vector3<f64> {
        Vector3::new(self.stacked[M * k], self.stacked[M * k + 1], self.stacked[M * k + 2])
    }

    pub fn iter_stages(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..self.stages()).map(|k| self.stage(k))
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.stacked
    }

    /// `sum_k |u(k)|_1`.
    pub fn norm_l1(&self) -> f64 {
        self.stacked.iter().map(|v| v.abs()).sum()
    }

    /// `sum_k |u(k)|_2`.
    pub fn norm_l21(&self) -> f64 {
        self.iter_stages().map(|u| u.norm()).sum()
    }
}

/// Terminal-constraint system with right-hand side `b = xf - beta`.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub c: DMatrix<f64>,
    pub beta: Vector6<f64>,
    pub b: Vector6<f64>,
    pub x0: StateVector,
    pub xf: StateVector,
}

impl StackedSystem {
    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_column_slice(self.b.as_slice())
    }

    /// Terminal state `beta + C_N U`.
    pub fn terminal(&self, u: &ControlSchedule) -> Vector6<f64> {
        let cu = &self.c * u.stacked();
        self.beta + Vector6::from_column_slice(cu.as_slice())
    }
}

/// Stacks the terminal constraint for tilde-frame boundary states.
pub fn stack(sys: &DiscreteLTV, x0: &StateVector, xf: &StateVector) -> Result<StackedSystem> {
    x0.expect_frame(Frame::Tilde)?;
    xf.expect_frame(Frame::Tilde)?;
    let n = sys.stages();
    let mut c = DMatrix::zeros(6, M * n);
    let mut tail = Matrix6::identity();
    for k in (0..n).rev() {
        let block = tail * sys.b(k);
        c.fixed_view_mut::<6, 3>(0, M * k).copy_from(&block);
        tail *= sys.a[k];
    }
    let beta = tail * x0.values;
    Ok(StackedSystem { c, beta, b: xf.values - beta, x0: *x0, xf: *xf })
}

/// Runs the recursion `x(k+1) = A(k) x(k) + B(k) u(k)` and returns all N+1 states.
pub fn propagate(
    sys: &DiscreteLTV,
    x0: &StateVector,
    u: &ControlSchedule,
) -> Result<Vec<StateVector>> {
    x0.expect_frame(Frame::Tilde)?;
    if u.stages() != sys.stages() {
        return Err(Error::LengthMismatch { expected: sys.stages(), found: u.stages() });
    }
    let mut out = Vec::with_capacity(sys.stages() + 1);
    let mut x = x0.values;
    out.push(StateVector::tilde(x));
    for k in 0..sys.stages() {
        x = sys.a[k] * x + sys.b(k) * u.stage(k);
        out.push(StateVector::tilde(x));
    }
    Ok(out)
}
