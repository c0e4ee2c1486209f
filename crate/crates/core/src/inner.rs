//! Per-index min-max spectral problems behind the verification bound and the
//! relaxation functions.
//!
//! For a matrix `Q` with column blocks `Q_j`, index `i`, weight `w` and a
//! penalty `pen`, the inner problem is
//!
//! ```text
//! minimize over P (q_rows x n):  w * max_j || delta_ij I - P^T Q_j ||_2 + pen(P)
//! ```
//!
//! where `pen` is zero (verification mode, objective is the max term alone),
//! the spectral norm of `P`, or the sum of spectral norms of its `n x n` row
//! blocks.
//!
//! The solver is ADMM on the splitting `Y = C - P^T Q`, `W = P`, where every
//! proximal step reduces to capping singular values of `n`-row blocks. Each
//! check also builds a feasible dual point from the multiplier, so the
//! reported gap is a certified bound on suboptimality and the returned
//! objective (the exact value at the best iterate) always upper-bounds the
//! true infimum.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::block::{numerical_rank, orthonormalize_rows, BlockStructure, SensingMatrix};
use crate::error::{Error, Result};
use crate::linalg::{gemm, l1_ball_threshold, BlockWork};

/// Absolute duality-gap tolerance used when none is given.
pub const DEFAULT_INNER_TOL: f64 = 1e-7;

/// Penalty attached to the multiplier `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// Verification mode: the max term alone.
    None,
    /// `||P||_2`.
    Spectral,
    /// `sum_l ||P^l||_2` over the `n x n` row blocks of `P`.
    BlockSum,
}

/// A matrix `Q` together with the eigen-decomposition of `Q Q^T` used by the
/// solver's linear step.
#[derive(Debug, Clone)]
pub struct PreparedQ {
    structure: BlockStructure,
    q: DMatrix<f64>,
    /// Eigenvectors of `Q Q^T` for its nonzero eigenvalues (`q_rows x r`).
    range: DMatrix<f64>,
    eig: Vec<f64>,
}

const RANGE_TOL: f64 = 1e-12;

impl PreparedQ {
    /// Uses `q` itself.
    pub fn new(q: &SensingMatrix) -> Self {
        let mat = q.matrix().clone();
        let qqt = &mat * mat.transpose();
        let se = SymmetricEigen::new(qqt);
        let top = se.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..se.eigenvalues.len())
            .filter(|&k| se.eigenvalues[k] > RANGE_TOL * top)
            .collect();
        let range = se.eigenvectors.select_columns(&keep);
        let eig = keep.iter().map(|&k| se.eigenvalues[k]).collect();
        Self {
            structure: q.structure(),
            q: mat,
            range,
            eig,
        }
    }

    /// Uses the Gram matrix `A^T A`, taking its factorization from the SVD of `A`.
    pub fn gram_of(a: &SensingMatrix) -> Self {
        let svd = a.matrix().clone().svd(false, true);
        let vt = svd.v_t.expect("requested right singular vectors");
        let top = svd.singular_values.iter().cloned().fold(0.0, f64::max).powi(4);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k].powi(4) > RANGE_TOL * top)
            .collect();
        let range = vt.select_rows(&keep).transpose();
        let eig = keep
            .iter()
            .map(|&k| svd.singular_values[k].powi(4))
            .collect();
        let q = a.matrix().tr_mul(a.matrix());
        Self {
            structure: a.structure(),
            q,
            range,
            eig,
        }
    }

    pub fn structure(&self) -> BlockStructure {
        self.structure
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_rows(&self) -> usize {
        self.q.nrows()
    }

    /// Dimension of the range of `Q`.
    pub fn rank(&self) -> usize {
        self.eig.len()
    }
}

/// One inner problem: matrix, block index, weight and penalty.
#[derive(Debug, Clone, Copy)]
pub struct InnerProblem<'a> {
    pub q: &'a PreparedQ,
    pub index: usize,
    pub weight: f64,
    pub penalty: Penalty,
}

impl<'a> InnerProblem<'a> {
    /// Verification-mode problem for index `i`.
    pub fn verification(q: &'a PreparedQ, index: usize) -> Self {
        Self {
            q,
            index,
            weight: 1.0,
            penalty: Penalty::None,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.q.structure.p();
        if self.index >= p {
            return Err(Error::InvalidArgument(format!(
                "block index {} out of range for p = {p}",
                self.index
            )));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weight must be finite and nonnegative, got {}",
                self.weight
            )));
        }
        Ok(())
    }

    /// Weight on the max term actually used by the objective.
    fn max_weight(&self) -> f64 {
        match self.penalty {
            Penalty::None => 1.0,
            _ => self.weight,
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Absolute duality-gap target.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations between objective/certificate evaluations.
    pub check_every: usize,
    /// Initial augmented-Lagrangian parameter.
    pub rho: f64,
    /// Record the best-so-far trajectory.
    pub record_history: bool,
    /// Stop early once the certified interval `[lower_bound, objective]`
    /// lies strictly on one side of this value (objective `<=` it counts).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decide_at: Option<f64>,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_INNER_TOL,
            max_iter: 20_000,
            check_every: 10,
            rho: 1.0,
            record_history: false,
            decide_at: None,
        }
    }
}

/// One evaluation point of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub iteration: usize,
    /// Exact objective at the current iterate.
    pub objective: f64,
    pub best_objective: f64,
    pub best_lower_bound: f64,
}

/// Result of an inner solve. `certificate` is the best multiplier found.
#[derive(Debug, Clone, Serialize)]
pub struct InnerSolution {
    pub index: usize,
    #[serde(skip)]
    pub certificate: DMatrix<f64>,
    pub objective: f64,
    pub maxterm: f64,
    pub penalty_value: f64,
    /// Certified lower bound on the infimum.
    pub lower_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub first_order_residual: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<HistoryPoint>,
}

/// Solver state that can seed a later solve of the same `(Q, i, penalty)`.
#[derive(Debug, Clone)]
pub struct WarmStart {
    xt: DMatrix<f64>,
    u: DMatrix<f64>,
    wt: DMatrix<f64>,
    v: DMatrix<f64>,
    rho: f64,
    weight: f64,
}

impl WarmStart {
    /// The multiplier (as `q_rows x n`) carried by this state.
    pub fn multiplier(&self) -> DMatrix<f64> {
        self.xt.transpose()
    }
}

struct Evaluator {
    work: BlockWork,
    n: usize,
    p: usize,
}

impl Evaluator {
    fn new(n: usize, p: usize) -> Self {
        Self {
            work: BlockWork::new(n),
            n,
            p,
        }
    }

    /// Max over blocks of the spectral norm of `d` (n x np).
    fn max_block_spectral(&mut self, d: &DMatrix<f64>) -> f64 {
        let bs = self.n * self.n;
        d.as_slice()
            .chunks(bs)
            .map(|b| self.work.spectral(b))
            .fold(0.0, f64::max)
    }

    fn penalty(&mut self, xt: &DMatrix<f64>, penalty: Penalty) -> f64 {
        match penalty {
            Penalty::None => 0.0,
            Penalty::Spectral => self.work.spectral(xt.as_slice()),
            Penalty::BlockSum => xt
                .as_slice()
                .chunks(self.n * self.n)
                .map(|b| self.work.spectral(b))
                .sum(),
        }
    }

    fn penalty_dual(&mut self, zq: &DMatrix<f64>, penalty: Penalty) -> f64 {
        match penalty {
            Penalty::None => 0.0,
            Penalty::Spectral => self.work.nuclear(zq.as_slice()),
            Penalty::BlockSum => zq
                .as_slice()
                .chunks(self.n * self.n)
                .map(|b| self.work.nuclear(b))
                .fold(0.0, f64::max),
        }
    }

    fn sum_nuclear(&mut self, z: &DMatrix<f64>) -> f64 {
        let bs = self.n * self.n;
        z.as_slice().chunks(bs).map(|b| self.work.nuclear(b)).sum()
    }

    fn trace_block(&self, z: &DMatrix<f64>, i: usize) -> f64 {
        let _ = self.p;
        (0..self.n).map(|k| z[(k, i * self.n + k)]).sum()
    }
}

fn selector(n: usize, p: usize, i: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n, n * p);
    for k in 0..n {
        c[(k, i * n + k)] = 1.0;
    }
    c
}

fn check_certificate(prob: &InnerProblem<'_>, p_i: &DMatrix<f64>) -> Result<()> {
    let n = prob.q.structure.n();
    if p_i.nrows() != prob.q.q_rows() || p_i.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "multiplier is {}x{}, expected {}x{n}",
            p_i.nrows(),
            p_i.ncols(),
            prob.q.q_rows()
        )));
    }
    Ok(())
}

/// Exact `(objective, maxterm, penalty_value)` at the multiplier `p_i`.
pub fn inner_objective(prob: &InnerProblem<'_>, p_i: &DMatrix<f64>) -> Result<(f64, f64, f64)> {
    prob.validate()?;
    check_certificate(prob, p_i)?;
    let st = prob.q.structure;
    let xt = p_i.transpose();
    let mut d = selector(st.n(), st.p(), prob.index);
    gemm(-1.0, &xt, false, &prob.q.q, false, 1.0, &mut d);
    let mut ev = Evaluator::new(st.n(), st.p());
    Ok(objective_parts(prob, &mut ev, &d, &xt))
}

fn objective_parts(
    prob: &InnerProblem<'_>,
    ev: &mut Evaluator,
    d: &DMatrix<f64>,
    xt: &DMatrix<f64>,
) -> (f64, f64, f64) {
    let maxterm = ev.max_block_spectral(d);
    let pen = ev.penalty(xt, prob.penalty);
    let objective = match prob.penalty {
        Penalty::None => maxterm,
        _ => prob.weight * maxterm + pen,
    };
    (objective, maxterm, pen)
}

/// Starting multiplier `Q_i (Q_i^T Q_i)^{-1}`, transposed, or zero when that is ill-conditioned.
fn initial_xt(q: &PreparedQ, i: usize) -> DMatrix<f64> {
    let n = q.structure.n();
    let qi = q.q.columns(i * n, n);
    let g = qi.tr_mul(&qi);
    let se = SymmetricEigen::new(g.clone());
    let lo = se.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = se.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(lo > 1e-12) || hi / lo > 1e12 {
        return DMatrix::zeros(n, q.q_rows());
    }
    match g.try_inverse() {
        Some(inv) => inv * qi.transpose(),
        None => DMatrix::zeros(n, q.q_rows()),
    }
}

/// Certified lower bound from the dual point `z` (n x np).
fn dual_bound(prob: &InnerProblem<'_>, ev: &mut Evaluator, z: &DMatrix<f64>) -> f64 {
    let q = prob.q;
    let (n, qr) = (z.nrows(), q.q_rows());
    let mut zq = DMatrix::zeros(n, qr);
    gemm(1.0, z, false, &q.q, true, 0.0, &mut zq);
    match prob.penalty {
        Penalty::None => {
            // restrict z to the kernel: z - z Q^T (Q Q^T)^+ Q
            let mut coeff = DMatrix::zeros(n, q.rank());
            gemm(1.0, &zq, false, &q.range, false, 0.0, &mut coeff);
            for (k, mut col) in coeff.column_iter_mut().enumerate() {
                col /= q.eig[k];
            }
            gemm(1.0, &coeff, false, &q.range, true, 0.0, &mut zq);
            let mut zp = z.clone();
            gemm(-1.0, &zq, false, &q.q, false, 1.0, &mut zp);
            let tr = ev.trace_block(&zp, prob.index);
            let denom = ev.sum_nuclear(&zp);
            if tr > 0.0 && denom > 0.0 {
                tr / denom
            } else {
                0.0
            }
        }
        pen => {
            let w = prob.weight;
            let tr = ev.trace_block(z, prob.index);
            let denom = ev.sum_nuclear(z).max(w * ev.penalty_dual(&zq, pen));
            if tr > 0.0 && denom > 0.0 {
                w * tr / denom
            } else {
                0.0
            }
        }
    }
}

/// Solves the inner problem; fails with [`Error::InnerNotConverged`] (carrying
/// the best iterate) when the gap target is not met.
pub fn solve_inner(prob: &InnerProblem<'_>, opts: &InnerOptions) -> Result<InnerSolution> {
    let (sol, _) = solve_inner_warm(prob, opts, None)?;
    if sol.converged {
        Ok(sol)
    } else {
        Err(Error::InnerNotConverged(Box::new(sol)))
    }
}

/// Solves the inner problem, optionally from a previous state. Never fails on
/// non-convergence; inspect `converged` instead.
pub fn solve_inner_warm(
    prob: &InnerProblem<'_>,
    opts: &InnerOptions,
    warm: Option<&WarmStart>,
) -> Result<(InnerSolution, WarmStart)> {
    prob.validate()?;
    if !(opts.tol > 0.0) || opts.check_every == 0 || !(opts.rho > 0.0) {
        return Err(Error::InvalidArgument(
            "inner options need tol > 0, rho > 0 and check_every >= 1".into(),
        ));
    }
    let q = prob.q;
    let st = q.structure;
    let (n, p) = (st.n(), st.p());
    let qr = q.q_rows();
    let penalized = prob.penalty != Penalty::None;
    let c = selector(n, p, prob.index);
    let mut ev = Evaluator::new(n, p);

    // Zero weight with a penalty: P = 0 is optimal with value 0.
    if penalized && prob.weight == 0.0 {
        let xt = DMatrix::zeros(n, qr);
        let sol = InnerSolution {
            index: prob.index,
            certificate: xt.transpose(),
            objective: 0.0,
            maxterm: 1.0,
            penalty_value: 0.0,
            lower_bound: 0.0,
            gap: 0.0,
            iterations: 0,
            first_order_residual: 0.0,
            converged: true,
            history: Vec::new(),
        };
        let state = WarmStart {
            u: DMatrix::zeros(n, n * p),
            wt: xt.clone(),
            v: xt.clone(),
            xt,
            rho: opts.rho,
            weight: 0.0,
        };
        return Ok((sol, state));
    }

    let wmax = prob.max_weight();
    let (mut xt, mut u, mut wt, mut v, mut rho) = match warm {
        Some(ws) if ws.xt.shape() == (n, qr) => {
            let mut u = ws.u.clone();
            if penalized && ws.weight > 0.0 {
                u *= prob.weight / ws.weight;
            }
            (ws.xt.clone(), u, ws.wt.clone(), ws.v.clone(), ws.rho)
        }
        _ => {
            let xt = initial_xt(q, prob.index);
            (
                xt.clone(),
                DMatrix::zeros(n, n * p),
                xt,
                DMatrix::zeros(n, qr),
                opts.rho,
            )
        }
    };

    // xq = Xt Q, kept in sync with xt
    let mut xq = DMatrix::zeros(n, n * p);
    gemm(1.0, &xt, false, &q.q, false, 0.0, &mut xq);

    let mut best_xt;
    let mut best = {
        let d = &c - &xq;
        objective_parts(prob, &mut ev, &d, &xt)
    };
    best_xt = xt.clone();
    if penalized {
        // P = 0 gives objective w.
        if prob.weight < best.0 {
            best = (prob.weight, 1.0, 0.0);
            best_xt = DMatrix::zeros(n, qr);
        }
    }
    let mut best_lb: f64 = 0.0;
    let mut history = Vec::new();

    let bs = n * n;
    let mut t = DMatrix::zeros(n, n * p);
    let mut y = DMatrix::zeros(n, n * p);
    let mut rhs = DMatrix::zeros(n, qr);
    let mut coeff = DMatrix::zeros(n, q.rank());
    let mut prev_xq = xq.clone();
    let mut prev_xt = xt.clone();
    let mut sv = vec![0.0; n * p];
    let mut vecs = vec![0.0; bs * p];
    let mut sv_w = vec![0.0; n];
    let mut iterations = 0;
    let decided = |obj: f64, lb: f64| opts.decide_at.is_some_and(|t| obj <= t || lb > t);
    let mut converged = best.0 - best_lb <= opts.tol;
    let mut done = converged || decided(best.0, best_lb);
    let mut residual = f64::INFINITY;

    while !done && iterations < opts.max_iter {
        iterations += 1;

        // Y-step: prox of (wmax / rho) * max_j ||.||_2
        t.copy_from(&c);
        t -= &xq;
        t -= &u;
        let radius = wmax / rho;
        for (j, blk) in t.as_slice().chunks(bs).enumerate() {
            let (vals, basis) = (&mut sv[j * n..(j + 1) * n], &mut vecs[j * bs..(j + 1) * bs]);
            if iterations % 64 == 1 {
                ev.work.decompose(blk, vals, basis);
            } else {
                ev.work.decompose_warm(blk, vals, basis);
            }
        }
        let total: f64 = sv.iter().sum();
        if total <= radius {
            y.fill(0.0);
        } else {
            let theta = l1_ball_threshold(&sv, radius);
            y.copy_from(&t);
            for (j, blk) in y.as_mut_slice().chunks_mut(bs).enumerate() {
                ev.work.clip_with(
                    blk,
                    &sv[j * n..(j + 1) * n],
                    &vecs[j * bs..(j + 1) * bs],
                    theta,
                );
            }
        }

        // W-step: prox of pen / rho
        if penalized {
            wt.copy_from(&xt);
            wt -= &v;
            let radius = 1.0 / rho;
            match prob.penalty {
                Penalty::Spectral => clip_to_ball(&mut ev.work, wt.as_mut_slice(), radius, &mut sv_w),
                Penalty::BlockSum => {
                    for blk in wt.as_mut_slice().chunks_mut(bs) {
                        clip_to_ball(&mut ev.work, blk, radius, &mut sv_w);
                    }
                }
                Penalty::None => unreachable!(),
            }
        }

        // X-step: least squares against both constraints
        t.copy_from(&c);
        t -= &y;
        t -= &u;
        gemm(1.0, &t, false, &q.q, true, 0.0, &mut rhs);
        if penalized {
            rhs += &wt;
            rhs += &v;
        }
        gemm(1.0, &rhs, false, &q.range, false, 0.0, &mut coeff);
        if penalized {
            for (k, mut col) in coeff.column_iter_mut().enumerate() {
                col *= q.eig[k] / (1.0 + q.eig[k]);
            }
            xt.copy_from(&rhs);
            gemm(-1.0, &coeff, false, &q.range, true, 1.0, &mut xt);
        } else {
            for (k, mut col) in coeff.column_iter_mut().enumerate() {
                col /= q.eig[k];
            }
            gemm(1.0, &coeff, false, &q.range, true, 0.0, &mut xt);
        }
        gemm(1.0, &xt, false, &q.q, false, 0.0, &mut xq);

        // dual update
        u += &y;
        u -= &c;
        u += &xq;
        if penalized {
            v += &wt;
            v -= &xt;
        }

        if iterations % opts.check_every == 0 || iterations == opts.max_iter {
            let d = &c - &xq;
            let cur = objective_parts(prob, &mut ev, &d, &xt);
            if cur.0 < best.0 {
                best = cur;
                best_xt.copy_from(&xt);
            }
            let z = -&u;
            let lb = dual_bound(prob, &mut ev, &z);
            best_lb = best_lb.max(lb);
            if opts.record_history {
                history.push(HistoryPoint {
                    iteration: iterations,
                    objective: cur.0,
                    best_objective: best.0,
                    best_lower_bound: best_lb,
                });
            }
            converged = best.0 - best_lb <= opts.tol;
            done = converged || decided(best.0, best_lb);

            // residual balancing
            let mut r2 = (&y - &d).norm_squared();
            let dx = &xq - &prev_xq;
            let mut s2 = dx.norm_squared();
            if penalized {
                r2 += (&wt - &xt).norm_squared();
                s2 += (&xt - &prev_xt).norm_squared();
            }
            let r = r2.sqrt();
            let s = rho * s2.sqrt();
            residual = r;
            if r > 10.0 * s {
                rho *= 2.0;
                u /= 2.0;
                v /= 2.0;
            } else if s > 10.0 * r {
                rho /= 2.0;
                u *= 2.0;
                v *= 2.0;
            }
        }
        if iterations % opts.check_every == opts.check_every - 1 || opts.check_every == 1 {
            prev_xq.copy_from(&xq);
            prev_xt.copy_from(&xt);
        }
    }

    let state = WarmStart {
        xt,
        u,
        wt,
        v,
        rho,
        weight: prob.weight,
    };
    let sol = InnerSolution {
        index: prob.index,
        certificate: best_xt.transpose(),
        objective: best.0,
        maxterm: best.1,
        penalty_value: best.2,
        lower_bound: best_lb.min(best.0),
        gap: (best.0 - best_lb).max(0.0),
        iterations,
        first_order_residual: if residual.is_finite() { residual } else { 0.0 },
        converged,
        history,
    };
    Ok((sol, state))
}

/// `t - Proj_{nuclear ball of the given radius}(t)`, in place.
fn clip_to_ball(work: &mut BlockWork, t: &mut [f64], radius: f64, sv: &mut [f64]) {
    work.singular_values(t, sv);
    let total: f64 = sv.iter().sum();
    if total <= radius {
        t.iter_mut().for_each(|x| *x = 0.0);
    } else {
        let theta = l1_ball_threshold(sv, radius);
        work.clip(t, theta);
    }
}

/// Options for [`verify_s_star`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub inner: InnerOptions,
    /// Replace `A` by a row-orthonormal matrix with the same kernel first.
    pub orthonormalize: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            inner: InnerOptions {
                tol: 1e-5,
                ..InnerOptions::default()
            },
            orthonormalize: true,
        }
    }
}

fn serialize_level<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("unconditional")
    } else {
        s.serialize_f64(*v)
    }
}

/// Outcome of the exact-recovery verification.
#[derive(Debug, Clone, Serialize)]
pub struct CertifierResult {
    /// Certified lower bound on the kernel ratio; infinite when the kernel is trivial.
    #[serde(serialize_with = "serialize_level")]
    pub s_star: f64,
    /// Largest block sparsity guaranteed to be recovered, `floor(s_star / 2)`
    /// (all `p` blocks when the kernel is trivial).
    pub k_star: usize,
    pub kernel_trivial: bool,
    pub per_index: Vec<InnerSolution>,
}

impl CertifierResult {
    pub fn is_unconditional(&self) -> bool {
        self.s_star.is_infinite()
    }

    /// Largest per-index objective, whose reciprocal is `s_star`.
    pub fn max_objective(&self) -> f64 {
        self.per_index
            .iter()
            .map(|s| s.objective)
            .fold(0.0, f64::max)
    }
}

/// Computes the verification bound `s_*` for `a`.
///
/// Every per-index objective is the exact value at a concrete multiplier, so
/// the returned `s_star` is a lower bound on the true kernel ratio whether or
/// not the solves reached their gap target.
pub fn verify_s_star(a: &SensingMatrix, opts: &VerifyOptions) -> Result<CertifierResult> {
    // full column rank: the kernel is trivial and no row basis is needed
    let q = if opts.orthonormalize && numerical_rank(a.matrix()) < a.structure().dim() {
        orthonormalize_rows(a)?
    } else {
        a.clone()
    };
    let prepared = PreparedQ::new(&q);
    verify_prepared(&prepared, &opts.inner)
}

/// Verification on an already prepared `Q`.
pub fn verify_prepared(q: &PreparedQ, inner: &InnerOptions) -> Result<CertifierResult> {
    let st = q.structure();
    let per_index: Vec<InnerSolution> = (0..st.p())
        .into_par_iter()
        .map(|i| {
            let prob = InnerProblem::verification(q, i);
            solve_inner_warm(&prob, inner, None).map(|(sol, _)| sol)
        })
        .collect::<Result<_>>()?;
    let kernel_trivial = q.rank() >= st.dim();
    let worst = per_index.iter().map(|s| s.objective).fold(0.0, f64::max);
    let s_star = if kernel_trivial || worst == 0.0 {
        f64::INFINITY
    } else {
        1.0 / worst
    };
    let k_star = if s_star.is_infinite() {
        st.p()
    } else {
        ((s_star / 2.0).floor() as usize).min(st.p())
    };
    Ok(CertifierResult {
        s_star,
        k_star,
        kernel_trivial: s_star.is_infinite(),
        per_index,
    })
}
