//! Seeded random comparison of the IRLS solvers against the LP oracle and
//! the optimality certificates.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::discretization::M;
use crate::error::Result;
use crate::irls::{irls_dense, IrlsConfig, IrlsStatus, NormMode, WeightRule};
use crate::oracle::{certificate_l1, certificate_l21, solve_l1_lp};

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub min_stages: usize,
    pub max_stages: usize,
    /// Relative slack allowed above the LP optimum.
    pub l1_slack: f64,
    /// Violation tolerance for the LP-solution and perturbation certificates.
    pub lp_cert_tol: f64,
    /// Violation tolerance for the l2/l1 certificate.
    pub l21_cert_tol: f64,
    pub irls: IrlsConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            seed: 0,
            min_stages: 3,
            max_stages: 10,
            l1_slack: 1e-3,
            lp_cert_tol: 1e-6,
            l21_cert_tol: 1e-3,
            irls: IrlsConfig { weight_rule: WeightRule::BlockNorm, ..IrlsConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceOutcome {
    pub index: usize,
    pub stages: usize,
    pub lp_optimum: f64,
    pub lp_pivots: usize,
    pub irls_l1: f64,
    pub irls_l1_status: IrlsStatus,
    pub irls_l1_iterations: usize,
    pub l1_within_bounds: bool,
    pub lp_certified: bool,
    pub lp_violation: f64,
    /// `None` when the perturbed point was not strictly worse.
    pub perturbed_rejected: Option<bool>,
    pub irls_l21: f64,
    pub irls_l21_status: IrlsStatus,
    pub l21_certified: bool,
    pub l21_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub seed: u64,
    pub elapsed: Duration,
    pub outcomes: Vec<InstanceOutcome>,
}

impl SuiteReport {
    pub fn l1_failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.l1_within_bounds).count()
    }

    pub fn worst_l1_gap(&self) -> f64 {
        self.outcomes
            .iter()
            .map(|o| (o.irls_l1 - o.lp_optimum) / o.lp_optimum.max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lp_cert_failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.lp_certified).count()
    }

    /// (rejected, tested)
    pub fn perturbation_rejections(&self) -> (usize, usize) {
        let tested: Vec<bool> = self.outcomes.iter().filter_map(|o| o.perturbed_rejected).collect();
        (tested.iter().filter(|r| **r).count(), tested.len())
    }

    pub fn l21_pass_rate(&self) -> f64 {
        let ok = self.outcomes.iter().filter(|o| o.l21_certified).count();
        ok as f64 / self.outcomes.len().max(1) as f64
    }

    pub fn l21_failures(&self) -> impl Iterator<Item = &InstanceOutcome> {
        self.outcomes.iter().filter(|o| !o.l21_certified)
    }
}

/// 6 x 3N standard-normal `C` and `b = C U` for a standard-normal `U`.
pub fn random_instance<R: Rng>(rng: &mut R, stages: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = M * stages;
    let c = DMatrix::from_fn(6, n, |_, _| rng.sample(StandardNormal));
    let u = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let b = &c * u;
    (c, b)
}

fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn run_instance(cfg: &SuiteConfig, index: usize) -> Result<InstanceOutcome> {
    let mut rng = instance_rng(cfg.seed, index);
    let stages = rng.random_range(cfg.min_stages..=cfg.max_stages);
    let (c, b) = random_instance(&mut rng, stages);

    let lp = solve_l1_lp(&c, &b)?;
    let l1 = irls_dense(&c, &b, NormMode::L1, &cfg.irls)?;
    let l1_within_bounds =
        l1.norm_l1 <= (1.0 + cfg.l1_slack) * lp.objective && l1.norm_l1 >= lp.objective - 1e-9;
    let lp_cert = certificate_l1(&c, &b, &lp.u, cfg.lp_cert_tol)?;

    // Move off the optimum along a random null-space direction.
    let n = c.ncols();
    let d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ct = c.transpose();
    let perturbed_rejected = (&c * &ct).lu().solve(&(&c * &d)).and_then(|y| {
        let z = d - &ct * y;
        if z.amax() <= 1e-9 {
            return None;
        }
        let v = &lp.u + &z * (0.05 * lp.u.amax().max(1e-3) / z.amax());
        let obj: f64 = v.iter().map(|x| x.abs()).sum();
        if obj <= lp.objective * (1.0 + 1e-6) {
            return None;
        }
        certificate_l1(&c, &b, &v, cfg.lp_cert_tol).ok().map(|cert| !cert.accepted)
    });

    let l21 = irls_dense(&c, &b, NormMode::L21, &cfg.irls)?;
    let l21_cert = certificate_l21(&c, &b, &l21.u_star, cfg.l21_cert_tol)?;

    Ok(InstanceOutcome {
        index,
        stages,
        lp_optimum: lp.objective,
        lp_pivots: lp.pivot_count,
        irls_l1: l1.norm_l1,
        irls_l1_status: l1.status,
        irls_l1_iterations: l1.iterations,
        l1_within_bounds,
        lp_certified: lp_cert.accepted,
        lp_violation: lp_cert.max_violation,
        perturbed_rejected,
        irls_l21: l21.norm_l21,
        irls_l21_status: l21.status,
        l21_certified: l21_cert.accepted,
        l21_violation: l21_cert.max_violation,
    })
}

/// Runs all instances in parallel; results are ordered by instance index.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let outcomes = (0..cfg.instances)
        .into_par_iter()
        .map(|i| run_instance(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    for o in outcomes.iter().filter(|o| !o.l21_certified) {
        log::warn!(
            "instance {}: l2/l1 certificate rejected, max violation {:e}",
            o.index,
            o.l21_violation
        );
    }
    Ok(SuiteReport { instances: cfg.instances, seed: cfg.seed, elapsed: start.elapsed(), outcomes })
}
