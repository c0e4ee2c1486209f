//! Fixed points of the relaxation functions and the resulting lower bounds
//! on the goodness measures.
//!
//! For `Q = A` (target [`Target::Omega2`]) the per-index function is
//! `g_i(eta) = min_P s*eta*max_j ||delta_ij I - P^T Q_j||_2 + ||P||_2`; for
//! `Q = A^T A` ([`Target::OmegaBinf`]) the penalty is the sum of spectral
//! norms of the row blocks of `P`. The overall function is the max over `i`.
//! Both are increasing and concave in `eta` with a unique positive fixed
//! point `eta*`, and `1 / eta*` bounds the goodness measure from below.
//!
//! Evaluations use the inner solver's objective at a concrete multiplier,
//! which can only overestimate the function and hence `eta*`; the bound
//! `1 / eta*` errs on the safe side.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::SensingMatrix;
use crate::error::{Error, Result};
use crate::inner::{
    solve_inner_warm, verify_s_star, InnerOptions, InnerProblem, Penalty, PreparedQ, VerifyOptions,
    WarmStart,
};

/// Which goodness measure to bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// `omega_2(A, s)`, from `Q = A` with the spectral penalty.
    Omega2,
    /// `omega_binf(A^T A, s)`, from `Q = A^T A` with the block-sum penalty.
    OmegaBinf,
}

impl Target {
    pub fn penalty(self) -> Penalty {
        match self {
            Target::Omega2 => Penalty::Spectral,
            Target::OmegaBinf => Penalty::BlockSum,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Omega2 => "omega2",
            Target::OmegaBinf => "omegabinf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Bisection,
    Hybrid,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Naive => "naive",
            Strategy::Bisection => "bisection",
            Strategy::Hybrid => "hybrid",
        })
    }
}

/// A request for a lower bound on `omega(Q, s)`.
#[derive(Debug, Clone)]
pub struct OmegaQuery {
    a: SensingMatrix,
    s: f64,
    target: Target,
    s_star: f64,
}

impl OmegaQuery {
    /// Builds a query given the verification bound `s_star` of `a`.
    pub fn new(a: SensingMatrix, s: f64, target: Target, s_star: f64) -> Result<Self> {
        if !(s > 1.0) {
            return Err(Error::InvalidQuery(format!("s must exceed 1, got {s}")));
        }
        if !(s < s_star) {
            return Err(Error::InvalidQuery(format!(
                "s = {s} is not below the verified level s_* = {s_star}"
            )));
        }
        Ok(Self {
            a,
            s,
            target,
            s_star,
        })
    }

    /// Builds a query, computing `s_star` first.
    pub fn verified(a: SensingMatrix, s: f64, target: Target, opts: &VerifyOptions) -> Result<Self> {
        if !(s > 1.0) {
            return Err(Error::InvalidQuery(format!("s must exceed 1, got {s}")));
        }
        let s_star = verify_s_star(&a, opts)?.s_star;
        Self::new(a, s, target, s_star)
    }

    pub fn matrix(&self) -> &SensingMatrix {
        &self.a
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn s_star(&self) -> f64 {
        self.s_star
    }
}

/// Settings shared by the three strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub tol: f64,
    pub eta_lo: f64,
    pub eta_hi: f64,
    pub strategy: Strategy,
    pub max_outer: usize,
    /// Starting point of the naive iteration (defaults to `eta_lo`).
    pub eta0: Option<f64>,
    /// Bracket expansions allowed before giving up.
    pub max_bracket_retries: usize,
    /// First index tried by the hybrid strategy.
    pub hybrid_start: usize,
    pub inner: InnerOptions,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            eta_lo: 0.1,
            eta_hi: 10.0,
            strategy: Strategy::Hybrid,
            max_outer: 1000,
            eta0: None,
            max_bracket_retries: 20,
            hybrid_start: 0,
            inner: InnerOptions::default(),
        }
    }
}

impl FixedPointConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.eta_lo > 0.0) || !(self.eta_lo < self.eta_hi) {
            return Err(Error::InvalidArgument(format!(
                "fixed-point settings need tol > 0 and 0 < eta_lo < eta_hi (got tol {}, [{}, {}])",
                self.tol, self.eta_lo, self.eta_hi
            )));
        }
        Ok(())
    }
}

/// One evaluation made by a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub eta: f64,
    pub value: f64,
    /// The single index evaluated, or `None` when `value` is the max over all indices.
    pub index: Option<usize>,
    pub eta_lo: f64,
    pub eta_hi: f64,
}

/// Full account of a fixed-point run.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointTrace {
    pub strategy: Strategy,
    pub target: Target,
    pub s: f64,
    pub records: Vec<TraceRecord>,
    pub eta_star: f64,
    pub omega_lower_bound: f64,
    pub converged: bool,
    /// Final bracket, when the strategy maintains one.
    pub enclosure: Option<(f64, f64)>,
    /// Per-index fixed points found by the hybrid strategy.
    pub index_fixed_points: Vec<(usize, f64)>,
    /// Indices dropped by the hybrid strategy, with the value that justified it.
    pub eliminated: Vec<(usize, f64)>,
    pub inner_solves: usize,
    pub inner_not_converged: usize,
    /// Largest duality gap reported by any inner solve.
    pub max_inner_gap: f64,
    /// Latest multiplier per index.
    #[serde(skip)]
    pub certificates: Vec<Option<DMatrix<f64>>>,
}

/// Evaluates `g_i` / `h_i` with warm starts carried across calls.
pub struct RelaxationEvaluator {
    q: PreparedQ,
    s: f64,
    penalty: Penalty,
    inner: InnerOptions,
    warm: Vec<Option<WarmStart>>,
    solves: usize,
    not_converged: usize,
    max_gap: f64,
}

/// Per-index values and multipliers of one full evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub per_index: Vec<f64>,
    pub certificates: Vec<DMatrix<f64>>,
}

impl RelaxationEvaluator {
    pub fn new(a: &SensingMatrix, s: f64, target: Target, inner: InnerOptions) -> Self {
        let q = match target {
            Target::Omega2 => PreparedQ::new(a),
            Target::OmegaBinf => PreparedQ::gram_of(a),
        };
        let p = a.structure().p();
        Self {
            q,
            s,
            penalty: target.penalty(),
            inner,
            warm: vec![None; p],
            solves: 0,
            not_converged: 0,
            max_gap: 0.0,
        }
    }

    pub fn p(&self) -> usize {
        self.q.structure().p()
    }

    pub fn solves(&self) -> usize {
        self.solves
    }

    fn problem(&self, i: usize, eta: f64) -> InnerProblem<'_> {
        InnerProblem {
            q: &self.q,
            index: i,
            weight: self.s * eta,
            penalty: self.penalty,
        }
    }

    /// Upper estimate of `g_i(eta)`.
    pub fn eval_index(&mut self, i: usize, eta: f64) -> Result<f64> {
        if eta == 0.0 {
            return Ok(0.0);
        }
        let prob = self.problem(i, eta);
        let (sol, state) = solve_inner_warm(&prob, &self.inner, self.warm[i].as_ref())?;
        self.solves += 1;
        if !sol.converged {
            self.not_converged += 1;
        }
        self.max_gap = self.max_gap.max(sol.gap);
        self.warm[i] = Some(state);
        Ok(sol.objective)
    }

    /// Upper estimates of `g_i(eta)` for the listed indices, solved in parallel.
    pub fn eval_many(&mut self, indices: &[usize], eta: f64) -> Result<Vec<f64>> {
        if eta == 0.0 {
            return Ok(vec![0.0; indices.len()]);
        }
        let jobs: Vec<(usize, Option<WarmStart>)> =
            indices.iter().map(|&i| (i, self.warm[i].take())).collect();
        let this = &*self;
        let results: Vec<Result<_>> = jobs
            .into_par_iter()
            .map(|(i, ws)| {
                let prob = this.problem(i, eta);
                solve_inner_warm(&prob, &this.inner, ws.as_ref()).map(|r| (i, r))
            })
            .collect();
        let mut values = Vec::with_capacity(indices.len());
        for r in results {
            let (i, (sol, state)) = r?;
            self.solves += 1;
            if !sol.converged {
                self.not_converged += 1;
            }
            self.max_gap = self.max_gap.max(sol.gap);
            self.warm[i] = Some(state);
            values.push(sol.objective);
        }
        Ok(values)
    }

    /// Certified `(upper, lower)` bounds on `g_i(eta)` for the listed indices,
    /// each solve stopping as soon as its bounds settle the sign of `g_i(eta) - eta`.
    pub fn decide_many(&mut self, indices: &[usize], eta: f64) -> Result<Vec<(f64, f64)>> {
        if eta == 0.0 {
            return Ok(vec![(0.0, 0.0); indices.len()]);
        }
        let opts = InnerOptions { decide_at: Some(eta), ..self.inner };
        let jobs: Vec<(usize, Option<WarmStart>)> =
            indices.iter().map(|&i| (i, self.warm[i].take())).collect();
        let this = &*self;
        let results: Vec<Result<_>> = jobs
            .into_par_iter()
            .map(|(i, ws)| {
                let prob = this.problem(i, eta);
                solve_inner_warm(&prob, &opts, ws.as_ref()).map(|r| (i, r))
            })
            .collect();
        let mut bounds = Vec::with_capacity(indices.len());
        for r in results {
            let (i, (sol, state)) = r?;
            self.solves += 1;
            let decided = sol.objective <= eta || sol.lower_bound > eta;
            if !sol.converged && !decided {
                self.not_converged += 1;
                self.max_gap = self.max_gap.max(sol.gap);
            }
            self.warm[i] = Some(state);
            bounds.push((sol.objective, sol.lower_bound));
        }
        Ok(bounds)
    }

    /// Upper estimate of `g(eta) = max_i g_i(eta)` with every per-index value.
    pub fn eval_all(&mut self, eta: f64) -> Result<Evaluation> {
        let indices: Vec<usize> = (0..self.p()).collect();
        let per_index = self.eval_many(&indices, eta)?;
        let value = per_index.iter().cloned().fold(0.0, f64::max);
        Ok(Evaluation {
            value,
            per_index,
            certificates: self.certificates().into_iter().flatten().collect(),
        })
    }

    /// Scans indices starting at `start` (cyclically) and returns the first
    /// `(i, g_i(eta))` with value above `threshold`; otherwise the max over all.
    fn first_above(&mut self, eta: f64, threshold: f64, start: usize) -> Result<(Option<usize>, f64)> {
        let p = self.p();
        let mut best: f64 = 0.0;
        for k in 0..p {
            let i = (start + k) % p;
            let v = self.eval_index(i, eta)?;
            if v > threshold {
                return Ok((Some(i), v));
            }
            best = best.max(v);
        }
        Ok((None, best))
    }

    pub fn certificates(&self) -> Vec<Option<DMatrix<f64>>> {
        self.warm
            .iter()
            .map(|w| w.as_ref().map(|w| w.multiplier()))
            .collect()
    }
}

/// Upper estimate of `g_s(eta)` (target [`Target::Omega2`]).
pub fn eval_g(a: &SensingMatrix, s: f64, eta: f64, inner: &InnerOptions) -> Result<Evaluation> {
    check_eta(eta)?;
    RelaxationEvaluator::new(a, s, Target::Omega2, *inner).eval_all(eta)
}

/// Upper estimate of `h_s(eta)` (target [`Target::OmegaBinf`]).
pub fn eval_h(a: &SensingMatrix, s: f64, eta: f64, inner: &InnerOptions) -> Result<Evaluation> {
    check_eta(eta)?;
    RelaxationEvaluator::new(a, s, Target::OmegaBinf, *inner).eval_all(eta)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("eta must be finite and nonnegative, got {eta}")));
    }
    Ok(())
}

struct Run {
    eval: RelaxationEvaluator,
    records: Vec<TraceRecord>,
    strategy: Strategy,
}

impl Run {
    fn new(query: &OmegaQuery, config: &FixedPointConfig, strategy: Strategy) -> Self {
        Self {
            eval: RelaxationEvaluator::new(&query.a, query.s, query.target, config.inner),
            records: Vec::new(),
            strategy,
        }
    }

    fn record(&mut self, eta: f64, value: f64, index: Option<usize>, lo: f64, hi: f64) {
        self.records.push(TraceRecord {
            eta,
            value,
            index,
            eta_lo: lo,
            eta_hi: hi,
        });
    }

    fn finish(
        self,
        query: &OmegaQuery,
        eta_star: f64,
        converged: bool,
        enclosure: Option<(f64, f64)>,
        index_fixed_points: Vec<(usize, f64)>,
        eliminated: Vec<(usize, f64)>,
    ) -> FixedPointTrace {
        FixedPointTrace {
            strategy: self.strategy,
            target: query.target,
            s: query.s,
            records: self.records,
            eta_star,
            omega_lower_bound: 1.0 / eta_star,
            converged,
            enclosure,
            index_fixed_points,
            eliminated,
            inner_solves: self.eval.solves,
            inner_not_converged: self.eval.not_converged,
            max_inner_gap: self.eval.max_gap,
            certificates: self.eval.certificates(),
        }
    }
}

/// Plain iteration `eta <- g(eta)`, taking the first index that raises `eta`
/// by more than `tol` when ascending.
///
/// Stops when the step is small enough that the geometric tail implied by
/// the observed contraction ratio stays within `tol`.
pub fn fp_naive(query: &OmegaQuery, config: &FixedPointConfig) -> Result<FixedPointTrace> {
    config.validate()?;
    let mut run = Run::new(query, config, Strategy::Naive);
    let mut eta = config.eta0.unwrap_or(config.eta_lo);
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("starting point must be positive, got {eta}")));
    }
    let mut start = 0;
    let mut last_step: Option<f64> = None;
    for _ in 0..config.max_outer {
        let (idx, next) = run.eval.first_above(eta, eta + config.tol, start)?;
        if let Some(i) = idx {
            start = i;
        }
        run.record(eta, next, idx, f64::NAN, f64::NAN);
        let step = (next - eta).abs();
        // A linearly convergent iteration with ratio r is within
        // step * r / (1 - r) of its limit; stop once that is below tol.
        let ratio = last_step
            .filter(|&prev| prev > 0.0)
            .map_or(0.5, |prev| (step / prev).clamp(0.0, 0.9));
        if step <= config.tol * (1.0 - ratio) || step == 0.0 {
            return Ok(run.finish(query, next, true, None, Vec::new(), Vec::new()));
        }
        last_step = Some(step);
        eta = next;
    }
    Err(Error::MaxIterations(config.max_outer))
}

/// Makes `[lo, hi]` a bracket for index set `indices`: `g(lo) > lo` and `g(hi) < hi`.
/// Returns the (possibly expanded) bracket; `hi` is replaced by `g(hi)`.
fn bracket(
    run: &mut Run,
    config: &FixedPointConfig,
    index: Option<usize>,
    mut lo: f64,
    mut hi: f64,
) -> Result<(f64, f64)> {
    let mut retries = 0;
    // lower end
    loop {
        let (idx, v) = match index {
            Some(i) => {
                let v = run.eval.eval_index(i, lo)?;
                (Some(i).filter(|_| v > lo), v)
            }
            None => run.eval.first_above(lo, lo, 0)?,
        };
        run.record(lo, v, index.or(idx), lo, hi);
        if v > lo {
            lo = v.min(hi).max(lo);
            break;
        }
        retries += 1;
        if retries > config.max_bracket_retries {
            return Err(Error::BracketFailure { retries, lo, hi });
        }
        lo /= 2.0;
    }
    // upper end
    loop {
        let v = match index {
            Some(i) => run.eval.eval_index(i, hi)?,
            None => run.eval.eval_all(hi)?.value,
        };
        run.record(hi, v, index, lo, hi);
        if v < hi {
            hi = v.max(lo);
            break;
        }
        retries += 1;
        if retries > config.max_bracket_retries {
            return Err(Error::BracketFailure { retries, lo, hi });
        }
        hi *= 2.0;
    }
    Ok((lo, hi))
}

/// Bisection on `[lo, hi]` for one index (`Some(i)`) or for the max (`None`).
/// Returns the final bracket.
fn bisect(
    run: &mut Run,
    config: &FixedPointConfig,
    index: Option<usize>,
    mut lo: f64,
    mut hi: f64,
) -> Result<(f64, f64, bool)> {
    let mut start = 0;
    for _ in 0..config.max_outer {
        if hi - lo <= config.tol {
            return Ok((lo, hi, true));
        }
        let mid = 0.5 * (lo + hi);
        let (idx, v) = match index {
            Some(i) => (Some(i), run.eval.eval_index(i, mid)?),
            None => {
                let (idx, v) = run.eval.first_above(mid, mid, start)?;
                if let Some(i) = idx {
                    start = i;
                }
                (idx, v)
            }
        };
        run.record(mid, v, idx, lo, hi);
        if v > mid {
            lo = v.min(hi).max(lo);
        } else if v < mid {
            hi = v.max(lo).min(hi);
        } else {
            return Ok((mid, mid, true));
        }
    }
    Ok((lo, hi, hi - lo <= config.tol))
}

/// Bisection with the first-index acceleration on the lower side.
pub fn fp_bisection(query: &OmegaQuery, config: &FixedPointConfig) -> Result<FixedPointTrace> {
    config.validate()?;
    let mut run = Run::new(query, config, Strategy::Bisection);
    let (lo, hi) = bracket(&mut run, config, None, config.eta_lo, config.eta_hi)?;
    let (lo, hi, converged) = bisect(&mut run, config, None, lo, hi)?;
    if !converged {
        return Err(Error::MaxIterations(config.max_outer));
    }
    let eta = 0.5 * (lo + hi);
    Ok(run.finish(query, eta, true, Some((lo, hi)), Vec::new(), Vec::new()))
}

/// Per-index bisection with elimination of every index whose fixed point
/// cannot exceed the current one.
pub fn fp_hybrid(query: &OmegaQuery, config: &FixedPointConfig) -> Result<FixedPointTrace> {
    config.validate()?;
    let mut run = Run::new(query, config, Strategy::Hybrid);
    let p = run.eval.p();
    let mut alive: Vec<usize> = (0..p).collect();
    let mut current = config.hybrid_start.min(p - 1);
    let mut lo = config.eta_lo;
    let mut hi = config.eta_hi;
    let mut fixed_points = Vec::new();
    let mut eliminated = Vec::new();
    let mut enclosure;
    let mut eta_star;
    let mut start_value: Option<f64> = None;
    loop {
        alive.retain(|&j| j != current);
        // bracket for the current index: the lower end is known when we
        // arrive from a previous index
        let (blo, bhi) = match start_value {
            Some(v) => {
                let hi_v = run.eval.eval_index(current, hi)?;
                run.record(hi, hi_v, Some(current), lo, hi);
                if hi_v < hi {
                    (v.max(lo), hi_v.max(v))
                } else {
                    bracket(&mut run, config, Some(current), v, hi * 2.0)?
                }
            }
            None => bracket(&mut run, config, Some(current), lo, hi)?,
        };
        let (l, h, ok) = bisect(&mut run, config, Some(current), blo, bhi)?;
        if !ok {
            return Err(Error::MaxIterations(config.max_outer));
        }
        eta_star = 0.5 * (l + h);
        enclosure = (l, h);
        fixed_points.push((current, eta_star));
        hi = hi.max(h);
        lo = eta_star;
        if alive.is_empty() {
            break;
        }
        // only the sign of g_j(eta*) - eta* matters here
        let bounds = run.eval.decide_many(&alive, eta_star)?;
        let mut next: Option<(usize, f64, f64)> = None;
        let mut survivors = Vec::new();
        for (&j, &(upper, lower)) in alive.iter().zip(&bounds) {
            run.record(eta_star, upper, Some(j), lo, hi);
            if upper <= eta_star {
                eliminated.push((j, upper));
            } else {
                survivors.push(j);
                // ranked by the upper estimate, ties to the lowest index
                if next.map_or(true, |(_, best, _)| upper > best) {
                    next = Some((j, upper, lower));
                }
            }
        }
        alive = survivors;
        match next {
            Some((j, _, lower)) => {
                current = j;
                start_value = Some(lower.max(eta_star));
            }
            None => break,
        }
    }
    Ok(run.finish(query, eta_star, true, Some(enclosure), fixed_points, eliminated))
}

/// Runs the configured strategy and returns `1 / eta*` with its trace.
pub fn omega_lower_bound(query: &OmegaQuery, config: &FixedPointConfig) -> Result<(f64, FixedPointTrace)> {
    let trace = match config.strategy {
        Strategy::Naive => fp_naive(query, config)?,
        Strategy::Bisection => fp_bisection(query, config)?,
        Strategy::Hybrid => fp_hybrid(query, config)?,
    };
    Ok((trace.omega_lower_bound, trace))
}
