//! Exact reference solutions for the l1 problem and optimality certificates
//! for both objectives.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::discretization::M;
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub u: DVector<f64>,
    /// `sum |u_i|` recomputed from `u`.
    pub objective: f64,
    pub status: LpStatus,
    pub pivot_count: usize,
    /// Dual multipliers of `C u = b`.
    pub dual: DVector<f64>,
    pub duality_gap: f64,
}

/// `min |u|_1  s.t.  C u = b` by a two-phase dense simplex with Bland's rule.
pub fn solve_l1_lp(c: &DMatrix<f64>, b: &DVector<f64>) -> Result<LpSolution> {
    let order: Vec<usize> = (0..c.ncols()).collect();
    solve_l1_lp_ordered(c, b, &order)
}

/// As [`solve_l1_lp`] but with the columns of `C` visited in `order`.
///
/// Bland's rule breaks ties by index, so a different order starts the
/// search from a different basis path.
pub fn solve_l1_lp_ordered(c: &DMatrix<f64>, b: &DVector<f64>, order: &[usize]) -> Result<LpSolution> {
    let (m, n) = c.shape();
    if b.len() != m {
        return Err(Error::LengthMismatch { expected: m, found: b.len() });
    }
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::InvalidLp("column order must be a permutation".into()));
    }
    if c.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidLp("non-finite entry".into()));
    }

    // Row scaling: unit-norm rows, flipped so the right-hand side is non-negative.
    let mut scale = vec![1.0; m];
    for (r, s) in scale.iter_mut().enumerate() {
        let norm = c.row(r).norm();
        let base = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        *s = if b[r] < 0.0 { -base } else { base };
    }
    // Structural columns: u+ of order[j] at j, u- of order[j] at n + j.
    let nv = 2 * n;
    let width = nv + m + 1;
    let mut t = vec![0.0; m * width];
    for r in 0..m {
        let row = &mut t[r * width..(r + 1) * width];
        for (j, &col) in order.iter().enumerate() {
            let v = scale[r] * c[(r, col)];
            row[j] = v;
            row[n + j] = -v;
        }
        row[nv + r] = 1.0;
        row[width - 1] = scale[r] * b[r];
    }
    let mut tab = Tableau { t, m, width, basis: (nv..nv + m).collect(), pivots: 0 };

    // Phase one: minimise the sum of artificials.
    let mut cost1 = vec![0.0; width];
    cost1[nv..nv + m].fill(1.0);
    tab.optimise(&cost1, nv + m)?;
    let infeas: f64 = tab.basis.iter().enumerate().filter(|(_, &v)| v >= nv).map(|(r, _)| tab.rhs(r)).sum();
    let bn = b.norm();
    if infeas > 1e-9 * (1.0 + bn) {
        return Err(Error::Infeasible(infeas));
    }
    // Drive remaining artificials out of the basis where possible.
    for r in 0..m {
        if tab.basis[r] < nv {
            continue;
        }
        if let Some(s) = (0..nv).find(|&j| tab.at(r, j).abs() > PIVOT_TOL) {
            tab.pivot(r, s);
        }
    }

    // Phase two over structural columns only.
    let mut cost2 = vec![0.0; width];
    cost2[..nv].fill(1.0);
    tab.optimise(&cost2, nv)?;

    // Recompute the basic solution and duals from the original data.
    let mut bmat = DMatrix::zeros(m, m);
    let mut cb = DVector::zeros(m);
    for (i, &v) in tab.basis.iter().enumerate() {
        for r in 0..m {
            bmat[(r, i)] = if v < nv {
                let (col, sign) = if v < n { (order[v], 1.0) } else { (order[v - n], -1.0) };
                sign * scale[r] * c[(r, col)]
            } else if v - nv == r {
                1.0
            } else {
                0.0
            };
        }
        cb[i] = if v < nv { 1.0 } else { 0.0 };
    }
    let rhs = DVector::from_iterator(m, (0..m).map(|r| scale[r] * b[r]));
    let lu = bmat.clone().lu();
    let xb = lu.solve(&rhs).ok_or(Error::InvalidLp("singular final basis".into()))?;
    let lam_scaled = bmat
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or(Error::InvalidLp("singular final basis".into()))?;

    let mut u = DVector::zeros(n);
    for (i, &v) in tab.basis.iter().enumerate() {
        if v < n {
            u[order[v]] += xb[i];
        } else if v < nv {
            u[order[v - n]] -= xb[i];
        }
    }
    let dual = DVector::from_iterator(m, (0..m).map(|r| scale[r] * lam_scaled[r]));
    let objective: f64 = u.iter().map(|v: &f64| v.abs()).sum();

    let dual_obj = b.dot(&dual);
    let duality_gap = (objective - dual_obj).abs();
    let dual_infeas = (c.transpose() * &dual).amax() - 1.0;
    let residual = (c * &u - b).norm();
    if duality_gap > 1e-8 * (1.0 + objective) || dual_infeas > 1e-8 || residual > 1e-9 * (1.0 + bn) {
        return Err(Error::InvalidLp(format!(
            "internal duality check failed: gap {duality_gap:e}, dual infeasibility {dual_infeas:e}, residual {residual:e}"
        )));
    }
    Ok(LpSolution { u, objective, status: LpStatus::Optimal, pivot_count: tab.pivots, dual, duality_gap })
}

struct Tableau {
    t: Vec<f64>,
    m: usize,
    width: usize,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn at(&self, r: usize, j: usize) -> f64 {
        self.t[r * self.width + j]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let w = self.width;
        let p = self.t[r * w + s];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v /= p;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + s];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in self.t[i * w..(i + 1) * w].iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            self.t[i * w + s] = 0.0;
        }
        self.basis[r] = s;
        self.pivots += 1;
    }

    /// Primal simplex on `cost` with entering candidates restricted to columns `< allowed`.
    fn optimise(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let w = self.width;
        let limit = 50 * (w + self.m) * (self.m + 1) + 10_000;
        loop {
            // Reduced costs d_j = c_j - c_B' T_j, scanned in index order (Bland).
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for (r, &bv) in self.basis.iter().enumerate() {
                    d -= cost[bv] * self.t[r * w + j];
                }
                if d < -COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(s) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r * w + s];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::InvalidLp("LP is unbounded".into()));
            };
            self.pivot(r, s);
            if self.pivots > limit {
                return Err(Error::InvalidLp("simplex pivot limit exceeded".into()));
            }
        }
    }
}

/// Result of a dual-feasibility check.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub accepted: bool,
    pub max_violation: f64,
    pub residual: f64,
    pub active: usize,
    #[serde(skip)]
    pub lambda: DVector<f64>,
}

/// Active entries are those above this fraction of `|U|_inf`.
pub const ACTIVE_FRACTION: f64 = 1e-6;

fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>, m: usize) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(m);
    }
    let svd = a.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    svd.solve(y, cutoff).unwrap_or_else(|_| DVector::zeros(m))
}

fn residual_check(c: &DMatrix<f64>, b: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    if u.len() != c.ncols() {
        return Err(Error::LengthMismatch { expected: c.ncols(), found: u.len() });
    }
    if b.len() != c.nrows() {
        return Err(Error::LengthMismatch { expected: c.nrows(), found: b.len() });
    }
    Ok((c * u - b).norm() / (1.0 + b.norm()))
}

/// l1 optimality check: `(C' lambda)_i = sign(U_i)` on the active set and
/// `|(C' lambda)_i| <= 1` elsewhere, each to `tol`.
pub fn certificate_l1(c: &DMatrix<f64>, b: &DVector<f64>, u: &DVector<f64>, tol: f64) -> Result<Certificate> {
    let residual = residual_check(c, b, u)?;
    let m = c.nrows();
    let cut = ACTIVE_FRACTION * u.amax();
    let active: Vec<usize> = (0..u.len()).filter(|&i| u[i].abs() > cut && u[i] != 0.0).collect();
    let a = DMatrix::from_fn(active.len(), m, |i, r| c[(r, active[i])]);
    let y = DVector::from_iterator(active.len(), active.iter().map(|&i| u[i].signum()));
    let lambda = least_squares(&a, &y, m);
    let ct_l = c.transpose() * &lambda;
    let mut viol: f64 = 0.0;
    for i in 0..u.len() {
        let v = if active.contains(&i) {
            (ct_l[i] - u[i].signum()).abs()
        } else {
            (ct_l[i].abs() - 1.0).max(0.0)
        };
        viol = viol.max(v);
    }
    Ok(Certificate {
        accepted: residual <= tol && viol <= tol,
        max_violation: viol.max(residual),
        residual,
        active: active.len(),
        lambda,
    })
}

/// l2/l1 optimality check over 3-blocks: `C_k' lambda = u_k / |u_k|` on active
/// blocks and `|C_k' lambda| <= 1` elsewhere, each to `tol`.
pub fn certificate_l21(c: &DMatrix<f64>, b: &DVector<f64>, u: &DVector<f64>, tol: f64) -> Result<Certificate> {
    let residual = residual_check(c, b, u)?;
    if !u.len().is_multiple_of(M) {
        return Err(Error::LengthMismatch { expected: M * u.len().div_ceil(M), found: u.len() });
    }
    let m = c.nrows();
    let blocks = u.len() / M;
    let norms: Vec<f64> = (0..blocks).map(|k| u.rows(M * k, M).norm()).collect();
    let cut = ACTIVE_FRACTION * norms.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = (0..blocks).filter(|&k| norms[k] > cut && norms[k] > 0.0).collect();
    let rows = M * active.len();
    let mut a = DMatrix::zeros(rows, m);
    let mut y = DVector::zeros(rows);
    for (i, &k) in active.iter().enumerate() {
        for j in 0..M {
            for r in 0..m {
                a[(M * i + j, r)] = c[(r, M * k + j)];
            }
            y[M * i + j] = u[M * k + j] / norms[k];
        }
    }
    let lambda = least_squares(&a, &y, m);
    let ct_l = c.transpose() * &lambda;
    let mut viol: f64 = 0.0;
    for (k, norm) in norms.iter().enumerate() {
        let g = ct_l.rows(M * k, M);
        let v = if active.contains(&k) {
            (g - u.rows(M * k, M) / *norm).norm()
        } else {
            (g.norm() - 1.0).max(0.0)
        };
        viol = viol.max(v);
    }
    Ok(Certificate {
        accepted: residual <= tol && viol <= tol,
        max_violation: viol.max(residual),
        residual,
        active: active.len(),
        lambda,
    })
}
