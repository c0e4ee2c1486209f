//! Convex recovery programs for block-sparse signals.
//!
//! * BS-BP: `min ||z||_b1` s.t. `||y - A z||_2 <= eps`
//! * BS-DS: `min ||z||_b1` s.t. `||A^T (y - A z)||_binf <= mu`
//! * BS-LASSO: `min 1/2 ||y - A z||_2^2 + mu ||z||_b1`
//! * noise-free: `min ||z||_b1` s.t. `A z = y`
//!
//! The constrained programs share one ADMM scheme on
//! `min ||u||_b1 + I_S(v)` s.t. `u = z`, `v = K z - c`, whose linear step uses
//! a thin SVD of `A`. Its multiplier yields a dual-feasible point, so the
//! stopping rule is a certified duality gap. BS-LASSO uses monotone FISTA
//! with a KKT-residual stopping rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block::{
    block_norm_slice, block_norms, soft_threshold_in_place, BlockNorm, BlockVector, SensingMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, POWER_TOL};

/// The recovery program and its noise parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum Variant {
    Bsbp { eps: f64 },
    Bsds { mu: f64 },
    Bslasso { mu: f64 },
    Noisefree,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Bsbp { .. } => "bsbp",
            Variant::Bsds { .. } => "bsds",
            Variant::Bslasso { .. } => "bslasso",
            Variant::Noisefree => "noisefree",
        }
    }
}

/// Stopping rules shared by all solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Constraint violation allowed, relative to `max(1, ||c||)`.
    pub feas_tol: f64,
    /// Duality gap allowed, relative to `max(1, objective)`.
    pub obj_tol: f64,
    /// KKT residual allowed for BS-LASSO.
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub check_every: usize,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            obj_tol: 1e-6,
            kkt_tol: 1e-6,
            max_iter: 50_000,
            rho: 1.0,
            check_every: 10,
        }
    }
}

/// A solved (or best-effort) recovery.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryResult {
    pub variant: Variant,
    pub xhat: BlockVector,
    /// `||xhat||_b1`, or the LASSO objective for BS-LASSO.
    pub objective: f64,
    /// Violation of the variant's constraint (KKT residual for BS-LASSO).
    pub feasibility_residual: f64,
    /// Certified lower bound on the optimal value (0 for BS-LASSO).
    pub lower_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration LASSO objectives (empty for the constrained programs).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub objective_history: Vec<f64>,
}

/// A recovery instance.
#[derive(Debug, Clone)]
pub struct RecoveryProblem<'a> {
    pub a: &'a SensingMatrix,
    pub y: &'a DVector<f64>,
    pub variant: Variant,
}

impl RecoveryProblem<'_> {
    fn validate(&self) -> Result<()> {
        if self.y.len() != self.a.rows() {
            return Err(Error::DimensionMismatch(format!(
                "measurement length {} does not match {} rows",
                self.y.len(),
                self.a.rows()
            )));
        }
        match self.variant {
            Variant::Bsbp { eps } if !(eps >= 0.0) => Err(Error::InvalidArgument(format!(
                "noise radius must be nonnegative, got {eps}"
            ))),
            Variant::Bsds { mu } | Variant::Bslasso { mu } if !(mu > 0.0) => Err(
                Error::InvalidArgument(format!("tuning parameter must be positive, got {mu}")),
            ),
            _ => Ok(()),
        }
    }
}

pub fn solve(problem: &RecoveryProblem<'_>, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    problem.validate()?;
    match problem.variant {
        Variant::Bslasso { mu } => lasso(problem.a, problem.y, mu, opts),
        _ => constrained(problem, opts),
    }
}

pub fn solve_bsbp(
    a: &SensingMatrix,
    y: &DVector<f64>,
    eps: f64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    solve(&RecoveryProblem { a, y, variant: Variant::Bsbp { eps } }, opts)
}

pub fn solve_bsds(
    a: &SensingMatrix,
    y: &DVector<f64>,
    mu: f64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    solve(&RecoveryProblem { a, y, variant: Variant::Bsds { mu } }, opts)
}

pub fn solve_bslasso(
    a: &SensingMatrix,
    y: &DVector<f64>,
    mu: f64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    solve(&RecoveryProblem { a, y, variant: Variant::Bslasso { mu } }, opts)
}

pub fn solve_noisefree(
    a: &SensingMatrix,
    y: &DVector<f64>,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    solve(&RecoveryProblem { a, y, variant: Variant::Noisefree }, opts)
}

/// Constraint violation of `x` for a constrained variant.
pub fn feasibility_residual(a: &SensingMatrix, y: &DVector<f64>, x: &DVector<f64>, variant: Variant) -> f64 {
    let r = y - a.matrix() * x;
    let n = a.structure().n();
    match variant {
        Variant::Bsbp { eps } => (r.norm() - eps).max(0.0),
        Variant::Noisefree => r.norm(),
        Variant::Bsds { mu } => {
            let g = a.matrix().tr_mul(&r);
            (block_norm_slice(g.as_slice(), n, BlockNorm::BInf) - mu).max(0.0)
        }
        Variant::Bslasso { mu } => lasso_kkt(a, y, x, mu),
    }
}

fn zero_result(a: &SensingMatrix, variant: Variant) -> RecoveryResult {
    let st = a.structure();
    RecoveryResult {
        variant,
        xhat: BlockVector::zeros(st),
        objective: 0.0,
        feasibility_residual: 0.0,
        lower_bound: 0.0,
        iterations: 0,
        converged: true,
        objective_history: Vec::new(),
    }
}

/// Thin SVD pieces of `A`: right singular vectors and singular values.
struct Factor {
    v: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: Vec<f64>,
}

fn factor(a: &DMatrix<f64>) -> Factor {
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * top)
        .collect();
    Factor {
        v: svd.v_t.unwrap().select_rows(&keep).transpose(),
        u: svd.u.unwrap().select_columns(&keep),
        sigma: keep.iter().map(|&k| svd.singular_values[k]).collect(),
    }
}

/// Projection of `v` onto the constraint set `S` of the variant.
fn project(v: &mut DVector<f64>, variant: Variant, n: usize) {
    match variant {
        Variant::Bsbp { eps } => {
            let norm = v.norm();
            if norm > eps {
                if norm > 0.0 {
                    *v *= eps / norm;
                }
            }
        }
        Variant::Noisefree => v.fill(0.0),
        Variant::Bsds { mu } => {
            for block in v.as_mut_slice().chunks_mut(n) {
                let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > mu {
                    block.iter_mut().for_each(|x| *x *= mu / norm);
                }
            }
        }
        Variant::Bslasso { .. } => unreachable!(),
    }
}

/// Support function of `S` at `nu`.
fn support(nu: &DVector<f64>, variant: Variant, n: usize) -> f64 {
    match variant {
        Variant::Bsbp { eps } => eps * nu.norm(),
        Variant::Noisefree => 0.0,
        Variant::Bsds { mu } => mu * block_norm_slice(nu.as_slice(), n, BlockNorm::B1),
        Variant::Bslasso { .. } => unreachable!(),
    }
}

fn constrained(problem: &RecoveryProblem<'_>, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    let a = problem.a;
    let y = problem.y;
    let variant = problem.variant;
    let st = a.structure();
    let n = st.n();
    let am = a.matrix();
    let f = factor(am);

    // z = 0 feasible: it is the minimizer.
    let zero_feasible = match variant {
        Variant::Bsbp { eps } => y.norm() <= eps,
        Variant::Noisefree => y.norm() == 0.0,
        Variant::Bsds { mu } => {
            block_norm_slice(am.tr_mul(y).as_slice(), n, BlockNorm::BInf) <= mu
        }
        Variant::Bslasso { .. } => unreachable!(),
    };
    if zero_feasible {
        return Ok(zero_result(a, variant));
    }

    // component of y outside range(A)
    let coeff = f.u.tr_mul(y);
    let ls_residual = (y - &f.u * &coeff).norm();
    let scale = y.norm().max(1.0);
    match variant {
        Variant::Bsbp { eps } if ls_residual > eps + opts.feas_tol * scale => {
            return Err(Error::Infeasible { residual: ls_residual, radius: eps });
        }
        Variant::Noisefree if ls_residual > opts.feas_tol * scale => {
            return Err(Error::Infeasible { residual: ls_residual, radius: 0.0 });
        }
        _ => {}
    }

    let gram = matches!(variant, Variant::Bsds { .. });
    // K = A or A^T A, c = y or A^T y
    let c = if gram { am.tr_mul(y) } else { y.clone() };
    let apply_k = |z: &DVector<f64>| -> DVector<f64> {
        let az = am * z;
        if gram {
            am.tr_mul(&az)
        } else {
            az
        }
    };
    let apply_kt = |w: &DVector<f64>| -> DVector<f64> {
        if gram {
            am.tr_mul(&(am * w))
        } else {
            am.tr_mul(w)
        }
    };
    // (I + K^T K)^{-1} = I - V diag(d) V^T
    let damp: Vec<f64> = f
        .sigma
        .iter()
        .map(|s| {
            let e = if gram { s.powi(4) } else { s * s };
            e / (1.0 + e)
        })
        .collect();
    let solve_lin = |rhs: &DVector<f64>| -> DVector<f64> {
        let mut t = f.v.tr_mul(rhs);
        for (k, x) in t.iter_mut().enumerate() {
            *x *= damp[k];
        }
        rhs - &f.v * t
    };

    let dim = st.dim();
    let kdim = c.len();
    let c_scale = c.norm().max(1.0);
    let mut u = DVector::zeros(dim);
    let mut v = DVector::zeros(kdim);
    let mut da = DVector::zeros(dim);
    let mut db = DVector::zeros(kdim);
    let mut rho = opts.rho;
    let mut best_lb: f64 = 0.0;
    let mut iterations = 0;
    let mut prev_u = u.clone();
    let mut prev_v = v.clone();
    let mut feas = f64::INFINITY;
    let mut objective = 0.0;

    while iterations < opts.max_iter {
        iterations += 1;
        let rhs = (&u - &da) + apply_kt(&(&c + &v - &db));
        let z = solve_lin(&rhs);
        let kz = apply_k(&z);
        u = &z + &da;
        soft_threshold_in_place(u.as_mut_slice(), n, 1.0 / rho);
        v = &kz - &c + &db;
        project(&mut v, variant, n);
        da += &z - &u;
        db += &kz - &c - &v;

        if iterations % opts.check_every == 0 {
            feas = feasibility_residual(a, y, &u, variant);
            objective = block_norm_slice(u.as_slice(), n, BlockNorm::B1);
            let nu = &db * rho;
            let ktnu = apply_kt(&nu);
            let dual_norm = block_norm_slice(ktnu.as_slice(), n, BlockNorm::BInf);
            if dual_norm > 0.0 {
                let d = -support(&nu, variant, n) - nu.dot(&c);
                best_lb = best_lb.max(d / dual_norm);
            }
            let gap = objective - best_lb;
            if feas <= opts.feas_tol * c_scale && gap <= opts.obj_tol * objective.max(1.0) {
                return Ok(RecoveryResult {
                    variant,
                    xhat: BlockVector::new(st, u)?,
                    objective,
                    feasibility_residual: feas,
                    lower_bound: best_lb,
                    iterations,
                    converged: true,
                    objective_history: Vec::new(),
                });
            }
            // residual balancing
            let r = ((&z - &u).norm_squared() + (&kz - &c - &v).norm_squared()).sqrt();
            let s = rho * ((&u - &prev_u).norm_squared() + (&v - &prev_v).norm_squared()).sqrt();
            if r > 10.0 * s {
                rho *= 2.0;
                da /= 2.0;
                db /= 2.0;
            } else if s > 10.0 * r {
                rho /= 2.0;
                da *= 2.0;
                db *= 2.0;
            }
        }
        if iterations % opts.check_every == opts.check_every - 1 {
            prev_u.copy_from(&u);
            prev_v.copy_from(&v);
        }
    }
    let gap = objective - best_lb;
    let best = RecoveryResult {
        variant,
        xhat: BlockVector::new(st, u)?,
        objective,
        feasibility_residual: feas,
        lower_bound: best_lb,
        iterations,
        converged: false,
        objective_history: Vec::new(),
    };
    Err(Error::RecoveryNotConverged {
        iterations,
        primal_residual: feas,
        gap,
        best: Box::new(best),
    })
}

fn lasso_objective(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, mu: f64, n: usize) -> f64 {
    0.5 * (y - a * x).norm_squared() + mu * block_norm_slice(x.as_slice(), n, BlockNorm::B1)
}

/// Norm of the smallest element of `A^T (A x - y) + mu * d||x||_b1`.
fn lasso_kkt(a: &SensingMatrix, y: &DVector<f64>, x: &DVector<f64>, mu: f64) -> f64 {
    let n = a.structure().n();
    let g = a.matrix().tr_mul(&(a.matrix() * x - y));
    let norms = block_norms(x.as_slice(), n);
    let mut total = 0.0;
    for (i, (gb, xb)) in g.as_slice().chunks(n).zip(x.as_slice().chunks(n)).enumerate() {
        if norms[i] > 0.0 {
            total += gb
                .iter()
                .zip(xb)
                .map(|(gv, xv)| (gv + mu * xv / norms[i]).powi(2))
                .sum::<f64>();
        } else {
            let gn = gb.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += (gn - mu).max(0.0).powi(2);
        }
    }
    total.sqrt()
}

fn lasso(a: &SensingMatrix, y: &DVector<f64>, mu: f64, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    let st = a.structure();
    let n = st.n();
    let am = a.matrix();
    let variant = Variant::Bslasso { mu };
    let aty = am.tr_mul(y);
    if block_norm_slice(aty.as_slice(), n, BlockNorm::BInf) <= mu {
        let mut res = zero_result(a, variant);
        res.objective = 0.5 * y.norm_squared();
        res.objective_history.push(res.objective);
        return Ok(res);
    }
    let lip = spectral_norm(am, POWER_TOL).powi(2) * (1.0 + 1e-9);
    let step = 1.0 / lip;
    let mut x = DVector::zeros(st.dim());
    let mut w = x.clone();
    let mut t: f64 = 1.0;
    let mut obj = lasso_objective(am, y, &x, mu, n);
    let mut history = vec![obj];
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let grad = am.tr_mul(&(am * &w - y));
        let mut z = &w - grad * step;
        soft_threshold_in_place(z.as_mut_slice(), n, mu * step);
        let z_obj = lasso_objective(am, y, &z, mu, n);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let x_prev = x.clone();
        if z_obj <= obj {
            x = z.clone();
            obj = z_obj;
        }
        w = &x + (&z - &x) * (t / t_next) + (&x - &x_prev) * ((t - 1.0) / t_next);
        t = t_next;
        history.push(obj);
        if iterations % opts.check_every == 0 {
            kkt = lasso_kkt(a, y, &x, mu);
            if kkt <= opts.kkt_tol {
                return Ok(RecoveryResult {
                    variant,
                    xhat: BlockVector::new(st, x)?,
                    objective: obj,
                    feasibility_residual: kkt,
                    lower_bound: 0.0,
                    iterations,
                    converged: true,
                    objective_history: history,
                });
            }
        }
    }
    let best = RecoveryResult {
        variant,
        xhat: BlockVector::new(st, x)?,
        objective: obj,
        feasibility_residual: kkt,
        lower_bound: 0.0,
        iterations,
        converged: false,
        objective_history: history,
    };
    Err(Error::RecoveryNotConverged {
        iterations,
        primal_residual: kkt,
        gap: kkt,
        best: Box::new(best),
    })
}
