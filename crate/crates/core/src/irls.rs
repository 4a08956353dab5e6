//! Iteratively reweighted least squares for the minimum-l1 (orthogonal
//! vectoring) and minimum-l2/l1 (thrust vectoring) control problems.
//!
//! Every iteration solves a weighted minimum-norm problem
//! `min U' W U  s.t.  C U = b` in closed form,
//! `U = W^-1 C' (C W^-1 C' + tau I)^-1 b`,
//! then shrinks the smoothing parameter `eps` and rebuilds the weights from
//! the new iterate.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6};
use serde::{Deserialize, Serialize};

use crate::discretization::{ControlSchedule, DiscreteLTV, StackedSystem, M};
use crate::error::{Error, Result};

/// Which objective the reweighting targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// `sum |U_i|`.
    L1,
    /// `sum_k |u(k)|_2` over 3-blocks.
    L21,
}

/// Weight update used in l2/l1 mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// Per entry, `w = (u^2 + eps^2)^(-1/4)`.
    PaperLiteral,
    /// Per block, `w = (|u(k)|^2 + eps^2)^(-1/2)` on all three entries.
    #[default]
    BlockNorm,
}

/// Smoothing-parameter schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum EpsRule {
    /// `eps = min(eps, max_i u_i)`.
    PaperMax,
    /// `eps = min(eps, |u|_(r+1) / n)` with `|u|_(r+1)` the (r+1)-th largest magnitude.
    SortedR { r: usize },
}

impl Default for EpsRule {
    fn default() -> Self {
        EpsRule::SortedR { r: 6 }
    }
}

/// Row handling before the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    None,
    /// Each row of `[C | b]` divided by the 2-norm of the row of `C`.
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrlsConfig {
    pub jmax: usize,
    pub eps0: f64,
    pub eps_bar: f64,
    /// Tikhonov term relative to `trace(Gramian) / rows`.
    pub tau: f64,
    /// Stall tolerance on `|u[j+1] - u[j]|_inf`, relative to `|u[j+1]|_inf`.
    pub tol_u: f64,
    pub weight_rule: WeightRule,
    pub eps_rule: EpsRule,
    /// When set, `eps` is additionally multiplied by this factor whenever an
    /// iteration moves `u` by no more than `eps` (in the inf-norm).
    pub eps_decay: Option<f64>,
    pub scaling: Scaling,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            jmax: 250_000,
            eps0: 1.0,
            eps_bar: 1e-13,
            tau: 1e-12,
            tol_u: 1e-14,
            weight_rule: WeightRule::default(),
            eps_rule: EpsRule::default(),
            eps_decay: Some(0.1),
            scaling: Scaling::default(),
        }
    }
}

impl IrlsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.jmax < 1 {
            return bad("jmax must be at least 1".into());
        }
        if !(self.eps0.is_finite() && self.eps0 > 0.0) {
            return bad(format!("eps0 must be positive, got {}", self.eps0));
        }
        if !(self.eps_bar.is_finite() && self.eps_bar > 0.0) {
            return bad(format!("eps_bar must be positive, got {}", self.eps_bar));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if !(self.tol_u.is_finite() && self.tol_u >= 0.0) {
            return bad(format!("tol_u must be non-negative, got {}", self.tol_u));
        }
        if let Some(f) = self.eps_decay {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("eps_decay must lie in (0, 1), got {f}"));
            }
        }
        Ok(())
    }
}

/// Positive weights `w`; the block-diagonal weight matrix is `diag(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    w: DVector<f64>,
}

impl WeightState {
    pub fn uniform(n: usize) -> Self {
        Self { w: DVector::from_element(n, 1.0) }
    }

    pub fn new(w: DVector<f64>) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("weights must be positive and finite".into()));
        }
        Ok(Self { w })
    }

    /// `w_l = (u_l^2 + eps^2)^(-1/2)`.
    pub fn l1(u: &DVector<f64>, eps: f64) -> Self {
        Self { w: u.map(|v| (v * v + eps * eps).powf(-0.5)) }
    }

    /// `w_l = (u_l^2 + eps^2)^(-1/4)`.
    pub fn l21_literal(u: &DVector<f64>, eps: f64) -> Self {
        Self { w: u.map(|v| (v * v + eps * eps).powf(-0.25)) }
    }

    /// `w = (|u(k)|^2 + eps^2)^(-1/2)` replicated over each 3-block.
    pub fn l21_block(u: &DVector<f64>, eps: f64) -> Self {
        let mut w = DVector::zeros(u.len());
        for (blk, out) in u.as_slice().chunks(M).zip(w.as_mut_slice().chunks_mut(M)) {
            let sq: f64 = blk.iter().map(|v| v * v).sum();
            out.fill((sq + eps * eps).powf(-0.5));
        }
        Self { w }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Diagonal block `W(k)`.
    pub fn block(&self, k: usize) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.w.fixed_rows::<3>(M * k).into_owned())
    }

    /// `U' W U`.
    pub fn quadratic(&self, u: &DVector<f64>) -> f64 {
        u.iter().zip(self.w.iter()).map(|(x, w)| w * x * x).sum()
    }
}

/// `C W^-1 C'` computed directly.
pub fn gramian(c: &DMatrix<f64>, weights: &WeightState) -> DMatrix<f64> {
    let m = c.nrows();
    let mut g = DMatrix::zeros(m, m);
    accumulate_gramian(c, weights.values(), &mut g);
    g
}

fn accumulate_gramian(c: &DMatrix<f64>, w: &DVector<f64>, g: &mut DMatrix<f64>) {
    let m = c.nrows();
    g.fill(0.0);
    if m == 0 {
        return;
    }
    // upper triangle, then mirror
    let mut acc = vec![0.0; m * m];
    for (col, wi) in c.as_slice().chunks_exact(m).zip(w.iter()) {
        let d = 1.0 / wi;
        for r in 0..m {
            let cr = d * col[r];
            if cr == 0.0 {
                continue;
            }
            let row = &mut acc[r * m..(r + 1) * m];
            for s in r..m {
                row[s] += cr * col[s];
            }
        }
    }
    for r in 0..m {
        for s in r..m {
            let v = acc[r * m + s];
            g[(r, s)] = v;
            g[(s, r)] = v;
        }
    }
}

/// Gramian of the stacked system by the forward recursion
/// `G(k+1) = A(k) G(k) A(k)' + B(k) W(k)^-1 B(k)'`, `G(0) = 0`.
///
/// Valid for time-varying `(A, B)`; `G(N)` equals `C_N W^-1 C_N'`.
pub fn gramian_recursive(sys: &DiscreteLTV, weights: &WeightState) -> Matrix6<f64> {
    let mut g = Matrix6::zeros();
    for k in 0..sys.stages() {
        let a = sys.a(k);
        let b = sys.b(k);
        let winv = weights.block(k).map(|v| if v == 0.0 { 0.0 } else { 1.0 / v });
        g = a * g * a.transpose() + b * winv * b.transpose();
    }
    g
}

/// Weighted minimum-norm solution `W^-1 C' (C W^-1 C' + tau I)^-1 b` with absolute `tau`.
pub fn weighted_min_norm(
    c: &DMatrix<f64>,
    weights: &WeightState,
    b: &DVector<f64>,
    tau: f64,
) -> Result<DVector<f64>> {
    if weights.len() != c.ncols() {
        return Err(Error::LengthMismatch { expected: c.ncols(), found: weights.len() });
    }
    if b.len() != c.nrows() {
        return Err(Error::LengthMismatch { expected: c.nrows(), found: b.len() });
    }
    let mut g = gramian(c, weights);
    solve_min_norm(c, weights.values(), &mut g, b, tau)
}

fn solve_min_norm(
    c: &DMatrix<f64>,
    w: &DVector<f64>,
    g: &mut DMatrix<f64>,
    b: &DVector<f64>,
    tau: f64,
) -> Result<DVector<f64>> {
    let n = c.ncols();
    if b.iter().all(|v| *v == 0.0) {
        return Ok(DVector::zeros(n));
    }
    for i in 0..g.nrows() {
        g[(i, i)] += tau;
    }
    let lambda = match g.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => g.clone().lu().solve(b).ok_or(Error::SingularGramian)?,
    };
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularGramian);
    }
    let m = c.nrows();
    let u = DVector::from_iterator(
        n,
        c.as_slice().chunks_exact(m).zip(w.iter()).map(|(col, wi)| {
            let dot: f64 = col.iter().zip(lambda.iter()).map(|(a, l)| a * l).sum();
            dot / wi
        }),
    );
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularGramian);
    }
    Ok(u)
}

/// Next smoothing parameter under `rule`; never negative.
pub fn eps_update(eps_prev: f64, u: &DVector<f64>, rule: EpsRule) -> f64 {
    let candidate = match rule {
        EpsRule::PaperMax => u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        EpsRule::SortedR { r } => {
            let n = u.len();
            if r >= n {
                0.0
            } else {
                let mut mags: Vec<f64> = u.iter().map(|v| v.abs()).collect();
                // (r+1)-th largest = element r in descending order
                let (_, nth, _) = mags.select_nth_unstable_by(r, |a, b| b.total_cmp(a));
                *nth / n as f64
            }
        }
    };
    eps_prev.min(candidate).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IrlsStatus {
    /// `eps` reached `eps_bar`.
    Converged,
    /// Iterates stopped moving before `eps` reached `eps_bar`.
    Stalled,
    /// `jmax` reached with settled iterates but `eps` above `eps_bar`.
    EpsNotReached,
    /// `jmax` reached while iterates were still moving.
    MaxIterations,
}

impl IrlsStatus {
    pub fn is_success(self) -> bool {
        matches!(self, IrlsStatus::Converged | IrlsStatus::Stalled)
    }
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct IrlsReport {
    pub u_star: DVector<f64>,
    pub norm_l1: f64,
    pub norm_l21: f64,
    pub eps_history: Vec<f64>,
    /// `|C U - b| / (1 + |b|)` in the caller's units.
    pub residual: f64,
    pub iterations: usize,
    pub status: IrlsStatus,
    pub last_step: f64,
}

impl IrlsReport {
    pub fn eps_final(&self) -> f64 {
        self.eps_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn schedule(&self) -> Result<ControlSchedule> {
        ControlSchedule::from_stacked(self.u_star.clone())
    }
}

/// `sum_k |u(k)|_2` over consecutive 3-blocks (a short trailing block counts as one).
pub fn block_norm_sum(u: &DVector<f64>) -> f64 {
    u.as_slice().chunks(M).map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt()).sum()
}

pub fn relative_residual(c: &DMatrix<f64>, b: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (c * u - b).norm() / (1.0 + b.norm())
}

/// Outcome of a single [`Irls::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub step: f64,
    pub eps: f64,
    pub done: Option<IrlsStatus>,
}

/// Step-by-step IRLS driver.
#[derive(Debug, Clone)]
pub struct Irls {
    mode: NormMode,
    config: IrlsConfig,
    c: DMatrix<f64>,
    b: DVector<f64>,
    gram: DMatrix<f64>,
    u: DVector<f64>,
    weights: WeightState,
    eps: f64,
    eps_history: Vec<f64>,
    iterations: usize,
    last_step: f64,
    status: Option<IrlsStatus>,
}

impl Irls {
    pub fn new(c: &DMatrix<f64>, b: &DVector<f64>, mode: NormMode, config: IrlsConfig) -> Result<Self> {
        config.validate()?;
        if b.len() != c.nrows() {
            return Err(Error::LengthMismatch { expected: c.nrows(), found: b.len() });
        }
        let mut c = c.clone();
        let mut b = b.clone();
        if config.scaling == Scaling::Normalized {
            for r in 0..c.nrows() {
                let norm = c.row(r).norm();
                if norm > 0.0 {
                    c.row_mut(r).scale_mut(1.0 / norm);
                    b[r] /= norm;
                }
            }
        }
        let m = c.nrows();
        let n = c.ncols();
        Ok(Self {
            mode,
            config,
            c,
            b,
            gram: DMatrix::zeros(m, m),
            u: DVector::zeros(n),
            weights: WeightState::uniform(n),
            eps: config.eps0,
            eps_history: Vec::new(),
            iterations: 0,
            last_step: f64::INFINITY,
            status: None,
        })
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    /// Weights the next step will use.
    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn status(&self) -> Option<IrlsStatus> {
        self.status
    }

    /// One weighted min-norm solve followed by the `eps` and weight updates.
    pub fn step(&mut self) -> Result<StepSummary> {
        if let Some(done) = self.status {
            return Ok(StepSummary { step: 0.0, eps: self.eps, done: Some(done) });
        }
        accumulate_gramian(&self.c, self.weights.values(), &mut self.gram);
        let rows = self.c.nrows().max(1) as f64;
        let tau = self.config.tau * self.gram.trace() / rows;
        let mut gram = std::mem::replace(&mut self.gram, DMatrix::zeros(0, 0));
        let next = solve_min_norm(&self.c, self.weights.values(), &mut gram, &self.b, tau);
        self.gram = gram;
        let next = next?;

        let step = (&next - &self.u).amax();
        let mut eps = eps_update(self.eps, &next, self.config.eps_rule);
        if let Some(factor) = self.config.eps_decay {
            if step <= self.eps {
                eps = eps.min(self.eps * factor);
            }
        }
        self.u = next;
        self.eps = eps;
        self.eps_history.push(eps);
        self.iterations += 1;
        self.last_step = step;

        let scale = self.u.amax();
        let done = if eps <= self.config.eps_bar {
            Some(IrlsStatus::Converged)
        } else if step <= self.config.tol_u * scale {
            Some(IrlsStatus::Stalled)
        } else if self.iterations >= self.config.jmax {
            if step <= 1e-6 * scale.max(f64::MIN_POSITIVE) {
                Some(IrlsStatus::EpsNotReached)
            } else {
                Some(IrlsStatus::MaxIterations)
            }
        } else {
            None
        };
        if done.is_none() {
            self.weights = match (self.mode, self.config.weight_rule) {
                (NormMode::L1, _) => WeightState::l1(&self.u, eps),
                (NormMode::L21, WeightRule::PaperLiteral) => WeightState::l21_literal(&self.u, eps),
                (NormMode::L21, WeightRule::BlockNorm) => WeightState::l21_block(&self.u, eps),
            };
        }
        self.status = done;
        Ok(StepSummary { step, eps, done })
    }

    /// Iterates to termination and reports against the unscaled `(c, b)`.
    pub fn run(mut self, c: &DMatrix<f64>, b: &DVector<f64>) -> Result<IrlsReport> {
        while self.step()?.done.is_none() {}
        let status = self.status.unwrap_or(IrlsStatus::MaxIterations);
        let u = self.u;
        Ok(IrlsReport {
            norm_l1: u.iter().map(|v| v.abs()).sum(),
            norm_l21: block_norm_sum(&u),
            residual: relative_residual(c, b, &u),
            u_star: u,
            eps_history: self.eps_history,
            iterations: self.iterations,
            status,
            last_step: self.last_step,
        })
    }
}

/// IRLS on a dense system `C U = b`.
pub fn irls_dense(
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    mode: NormMode,
    config: &IrlsConfig,
) -> Result<IrlsReport> {
    Irls::new(c, b, mode, *config)?.run(c, b)
}

/// Minimum-l1 control for the stacked system.
pub fn irls_l1(stacked: &StackedSystem, config: &IrlsConfig) -> Result<IrlsReport> {
    irls_dense(&stacked.c, &stacked.rhs(), NormMode::L1, config)
}

/// Minimum-l2/l1 control for the stacked system.
pub fn irls_l21(stacked: &StackedSystem, config: &IrlsConfig) -> Result<IrlsReport> {
    irls_dense(&stacked.c, &stacked.rhs(), NormMode::L21, config)
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use crate::discretization::{discretize, AnomalyGrid};
    use crate::kinematics::OrbitParams;
    use proptest::prelude::*;

    fn system(m: usize, n: usize) -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        (
            proptest::collection::vec(-1.0f64..1.0, m * n),
            proptest::collection::vec(-1.0f64..1.0, m),
            proptest::collection::vec(0.05f64..20.0, n),
        )
            .prop_map(move |(c, b, w)| {
                (DMatrix::from_vec(m, n, c), DVector::from_vec(b), DVector::from_vec(w))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Optimality: C u = b and W u lies in range(C'), checked through the
        // normal equations of a plain least-squares fit.
        #[test]
        fn min_norm_satisfies_kkt((c, b, w) in system(6, 15)) {
            let ws = WeightState::new(w.clone()).unwrap();
            let u = weighted_min_norm(&c, &ws, &b, 0.0).unwrap();
            prop_assert!((&c * &u - &b).norm() < 1e-9 * (1.0 + b.norm()));
            let wu = u.component_mul(&w);
            let ct = c.transpose();
            let lambda = (&c * &ct).lu().solve(&(&c * &wu)).unwrap();
            prop_assert!((ct * lambda - &wu).norm() < 1e-8 * (1.0 + wu.norm()));
        }

        #[test]
        fn min_norm_beats_feasible_perturbations((c, b, w) in system(4, 10), dir in proptest::collection::vec(-1.0f64..1.0, 10)) {
            let ws = WeightState::new(w).unwrap();
            let u = weighted_min_norm(&c, &ws, &b, 0.0).unwrap();
            // project dir onto null(C)
            let d = DVector::from_vec(dir);
            let ct = c.transpose();
            let y = (&c * &ct).lu().solve(&(&c * &d)).unwrap();
            let z = d - ct * y;
            let base = ws.quadratic(&u);
            for t in [1e-3, 0.1, 1.0] {
                prop_assert!(ws.quadratic(&(&u + &z * t)) >= base - 1e-10 * (1.0 + base));
            }
        }

        #[test]
        fn surrogate_is_nonincreasing((c, b, _w) in system(6, 18), l21 in any::<bool>()) {
            let mode = if l21 { NormMode::L21 } else { NormMode::L1 };
            let cfg = IrlsConfig { jmax: 60, ..Default::default() };
            let mut it = Irls::new(&c, &b, mode, cfg).unwrap();
            it.step().unwrap();
            for _ in 0..40 {
                if it.status().is_some() { break; }
                let w = it.weights().clone();
                let before = w.quadratic(it.u());
                it.step().unwrap();
                let after = w.quadratic(it.u());
                prop_assert!(after <= before * (1.0 + 1e-9) + 1e-12, "{after} > {before}");
            }
        }

        #[test]
        fn iterates_scale_linearly_with_rhs((c, b, _w) in system(6, 18), alpha in prop_oneof![0.01f64..0.5, 2.0f64..1000.0]) {
            let cfg = IrlsConfig { jmax: 30, ..Default::default() };
            let scaled = IrlsConfig { eps0: cfg.eps0 * alpha, eps_bar: cfg.eps_bar * alpha, ..cfg };
            let mut a = Irls::new(&c, &b, NormMode::L1, cfg).unwrap();
            let mut s = Irls::new(&c, &(&b * alpha), NormMode::L1, scaled).unwrap();
            for _ in 0..30 {
                let ra = a.step().unwrap();
                let rs = s.step().unwrap();
                let tol = 1e-7 * (1.0 + a.u().amax());
                prop_assert!((s.u() / alpha - a.u()).amax() <= tol);
                prop_assert!((rs.eps / alpha - ra.eps).abs() <= 1e-7 * (ra.eps + 1e-12));
                if ra.done.is_some() || rs.done.is_some() { break; }
            }
        }

        #[test]
        fn recursive_gramian_matches_direct(n in 6usize..16, e in 0.0f64..0.5, seed in proptest::collection::vec(0.1f64..10.0, 36)) {
            let params = OrbitParams::earth(8000e3, e).unwrap();
            let grid = AnomalyGrid::new(0.2, 3.0, n).unwrap();
            let sys = discretize(&params, &grid).unwrap();
            let x0 = crate::kinematics::StateVector::tilde(nalgebra::Vector6::zeros());
            let st = crate::discretization::stack(&sys, &x0, &x0).unwrap();
            let w = WeightState::new(DVector::from_iterator(3 * n, seed.iter().cycle().copied().take(3 * n))).unwrap();
            let direct = gramian(&st.c, &w);
            let rec = gramian_recursive(&sys, &w);
            let scale = direct.amax();
            for i in 0..6 { for j in 0..6 {
                prop_assert!((direct[(i, j)] - rec[(i, j)]).abs() <= 1e-10 * scale);
            }}
        }
    }
}
