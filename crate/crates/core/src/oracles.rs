//! Brute-force reference values for tiny instances.
//!
//! These exist to validate the relaxations and fixed points, not to scale:
//! `np <= 12` and kernel dimension `<= 6` are enforced.
//!
//! All three exact quantities reduce to convex programs once the block `i`
//! attaining the block-l_inf norm and its direction `u` are fixed:
//!
//! * `omega(Q, s) = min_{i,u} min { ||Q_i u + sum_{j != i} Q_j w_j|| : sum_j ||w_j||_2 <= s - 1 }`
//! * `f_s(eta) = max_{i,u} max { t : ||t Q_i u + Q_{-i} z|| <= 1, t + ||z||_b1 <= s eta }`
//! * `s^* = min_{i,u} min { ||z||_b1 : z in Ker(A), z_i = u }`
//!
//! The inner programs are solved by a deep-cut ellipsoid method and the
//! directions `u` are sampled from a low-discrepancy sequence plus the axes.
//! Sampling makes `f_s` a lower estimate and `omega`, `s^*` upper
//! estimates. `rho_s` is nonconvex and estimated by multi-start projected
//! descent (an upper estimate).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{numerical_rank, SensingMatrix};
use crate::error::{Error, Result};
use crate::fixedpoint::Target;

/// Largest `np` accepted by the oracles.
pub const MAX_ORACLE_DIM: usize = 12;
/// Largest kernel dimension accepted by [`oracle_s_star`].
pub const MAX_KERNEL_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Sampled directions per block (at least 8).
    pub direction_samples: usize,
    /// Local refinements of the best directions, and multi-starts for `rho_s`.
    pub restarts: usize,
    /// Target gap of each convex sub-problem.
    pub tol: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            direction_samples: 64,
            restarts: 4,
            tol: 1e-10,
            seed: 0,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.direction_samples < 8 || self.restarts < 1 || !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "oracle config needs direction_samples >= 8, restarts >= 1, tol > 0 (got {}, {}, {})",
                self.direction_samples, self.restarts, self.tol
            )));
        }
        Ok(())
    }
}

fn check_size(a: &SensingMatrix) -> Result<()> {
    let dim = a.structure().dim();
    if dim > MAX_ORACLE_DIM {
        return Err(Error::TooLarge(format!("np = {dim} exceeds {MAX_ORACLE_DIM}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ellipsoid method

enum Cut {
    Objective(f64),
    Constraint(f64),
}

struct Ellipsoid {
    best: f64,
    point: Vec<f64>,
    lower: f64,
}

/// Minimizes a convex function over a convex set contained in the ball
/// `||x - center|| <= radius`. The oracle fills the subgradient of the
/// objective (at feasible points) or of a violated constraint. Stops once
/// the certified gap is below `tol * max(|best|, floor)`.
///
/// The ellipsoid `{x + B v : ||v|| <= 1}` is kept in factored form, which
/// stays positive definite where the `P = B B^T` update loses it.
fn ellipsoid<F>(center: &[f64], radius: f64, tol: f64, floor: f64, max_iter: usize, mut oracle: F) -> Ellipsoid
where
    F: FnMut(&[f64], &mut [f64]) -> Cut,
{
    let d = center.len();
    let mut x = center.to_vec();
    // row-major d x d
    let mut b = vec![0.0; d * d];
    for k in 0..d {
        b[k * d + k] = radius;
    }
    let mut g = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut bxi = vec![0.0; d];
    let mut out = Ellipsoid {
        best: f64::INFINITY,
        point: x.clone(),
        lower: f64::NEG_INFINITY,
    };
    for _ in 0..max_iter {
        g.iter_mut().for_each(|v| *v = 0.0);
        let cut = oracle(&x, &mut g);
        // xi = B^T g
        for c in 0..d {
            xi[c] = (0..d).map(|r| b[r * d + c] * g[r]).sum();
        }
        let s = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let alpha = match cut {
            Cut::Objective(value) => {
                if value < out.best {
                    out.best = value;
                    out.point.copy_from_slice(&x);
                }
                if !(s > 0.0) {
                    if g.iter().all(|&v| v == 0.0) {
                        out.lower = out.lower.max(value);
                    }
                    break;
                }
                out.lower = out.lower.max(value - s);
                if out.best - out.lower <= tol * out.best.abs().max(floor) {
                    break;
                }
                (value - out.best) / s
            }
            Cut::Constraint(violation) => {
                if !(s > 0.0) {
                    break;
                }
                let a = violation / s;
                if a >= 1.0 {
                    // no feasible point left in the ellipsoid
                    break;
                }
                a
            }
        };
        // shallower than the exact deep cut, which keeps B well conditioned
        let alpha = alpha.clamp(0.0, 0.5);
        xi.iter_mut().for_each(|v| *v /= s);
        for r in 0..d {
            bxi[r] = (0..d).map(|c| b[r * d + c] * xi[c]).sum();
        }
        if d == 1 {
            x[0] -= 0.5 * (1.0 + alpha) * bxi[0];
            b[0] *= 0.5 * (1.0 - alpha);
        } else {
            let df = d as f64;
            let tau = (1.0 + df * alpha) / (df + 1.0);
            let sigma = 2.0 * (1.0 + df * alpha) / ((df + 1.0) * (1.0 + alpha));
            let scale = (df * df * (1.0 - alpha * alpha) / (df * df - 1.0)).sqrt();
            let shrink = 1.0 - (1.0 - sigma).sqrt();
            for k in 0..d {
                x[k] -= tau * bxi[k];
            }
            for r in 0..d {
                for c in 0..d {
                    b[r * d + c] = scale * (b[r * d + c] - shrink * bxi[r] * xi[c]);
                }
            }
        }
    }
    out
}

fn max_iter_for(d: usize) -> usize {
    400 * (d + 1) * (d + 1) + 200
}

// ---------------------------------------------------------------------------
// the Q operator and its norm

#[derive(Clone)]
struct QForm {
    /// Column-major `rows x np`.
    q: Vec<f64>,
    rows: usize,
    n: usize,
    p: usize,
    /// Block length of the output norm (`None` for l_2).
    out_block: Option<usize>,
}

impl QForm {
    fn new(a: &SensingMatrix, target: Target) -> Self {
        let st = a.structure();
        let (m, out_block) = match target {
            Target::Omega2 => (a.matrix().clone(), None),
            Target::OmegaBinf => (a.matrix().transpose() * a.matrix(), Some(st.n())),
        };
        Self {
            rows: m.nrows(),
            q: m.as_slice().to_vec(),
            n: st.n(),
            p: st.p(),
            out_block,
        }
    }

    fn col(&self, c: usize) -> &[f64] {
        &self.q[c * self.rows..(c + 1) * self.rows]
    }

    /// `||v||` and the dual direction `w` with `<w, v> = ||v||`.
    fn norm_and_dual(&self, v: &[f64], w: &mut [f64]) -> f64 {
        w.iter_mut().for_each(|x| *x = 0.0);
        match self.out_block {
            None => {
                let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nrm > 0.0 {
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi = vi / nrm;
                    }
                }
                nrm
            }
            Some(b) => {
                let mut best = 0;
                let mut best_norm = -1.0;
                for (l, chunk) in v.chunks(b).enumerate() {
                    let nrm = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if nrm > best_norm {
                        best_norm = nrm;
                        best = l;
                    }
                }
                if best_norm > 0.0 {
                    for k in best * b..(best + 1) * b {
                        w[k] = v[k] / best_norm;
                    }
                }
                best_norm
            }
        }
    }

    /// `Q_i u`.
    fn block_times(&self, i: usize, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (k, &uk) in u.iter().enumerate() {
            for (o, q) in out.iter_mut().zip(self.col(i * self.n + k)) {
                *o += q * uk;
            }
        }
        out
    }

    /// Columns of every block but `i`, in order.
    fn other_columns(&self, i: usize) -> Vec<usize> {
        (0..self.p)
            .filter(|&j| j != i)
            .flat_map(|j| j * self.n..(j + 1) * self.n)
            .collect()
    }
}

fn block_l1(x: &[f64], n: usize, grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    match grad {
        Some(g) => {
            for (xb, gb) in x.chunks(n).zip(g.chunks_mut(n)) {
                let nrm = xb.iter().map(|v| v * v).sum::<f64>().sqrt();
                total += nrm;
                if nrm > 0.0 {
                    for (gv, xv) in gb.iter_mut().zip(xb) {
                        *gv += xv / nrm;
                    }
                }
            }
        }
        None => {
            for xb in x.chunks(n) {
                total += xb.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
    }
    total
}

/// `min ||c + B w|| s.t. ||w||_b1 <= r`, with `B` the columns `cols` of `Q`.
fn min_residual(qf: &QForm, c: &[f64], cols: &[usize], r: f64, tol: f64) -> f64 {
    let d = cols.len();
    let mut v = vec![0.0; qf.rows];
    let mut dual = vec![0.0; qf.rows];
    if d == 0 || r <= 0.0 {
        return qf.norm_and_dual(c, &mut dual);
    }
    let floor = 1e-6 * qf.norm_and_dual(c, &mut dual);
    let center = vec![0.0; d];
    let res = ellipsoid(&center, r * (1.0 + 1e-12), tol, floor, max_iter_for(d), |w, g| {
        let h = block_l1(w, qf.n, Some(g)) - r;
        if h > 0.0 {
            return Cut::Constraint(h);
        }
        g.iter_mut().for_each(|x| *x = 0.0);
        v.copy_from_slice(c);
        for (k, &col) in cols.iter().enumerate() {
            let wk = w[k];
            if wk != 0.0 {
                for (vi, qi) in v.iter_mut().zip(qf.col(col)) {
                    *vi += qi * wk;
                }
            }
        }
        let value = qf.norm_and_dual(&v, &mut dual);
        for (k, &col) in cols.iter().enumerate() {
            g[k] = qf.col(col).iter().zip(&dual).map(|(a, b)| a * b).sum();
        }
        Cut::Objective(value)
    });
    res.best
}

/// `max t s.t. ||t c + B z|| <= 1, t + ||z||_b1 <= budget`.
fn max_scale(qf: &QForm, c: &[f64], cols: &[usize], budget: f64, tol: f64) -> f64 {
    let d = cols.len() + 1;
    let mut v = vec![0.0; qf.rows];
    let mut dual = vec![0.0; qf.rows];
    let center = vec![0.0; d];
    let res = ellipsoid(&center, budget * (1.0 + 1e-12), tol, 1e-6 * budget, max_iter_for(d), |x, g| {
        let t = x[0];
        let z = &x[1..];
        let h2 = t.abs() + block_l1(z, qf.n, Some(&mut g[1..])) - budget;
        if h2 > 0.0 {
            g[0] = t.signum();
            return Cut::Constraint(h2);
        }
        for (vi, ci) in v.iter_mut().zip(c) {
            *vi = t * ci;
        }
        for (k, &col) in cols.iter().enumerate() {
            let zk = z[k];
            if zk != 0.0 {
                for (vi, qi) in v.iter_mut().zip(qf.col(col)) {
                    *vi += qi * zk;
                }
            }
        }
        let nrm = qf.norm_and_dual(&v, &mut dual);
        g.iter_mut().for_each(|x| *x = 0.0);
        if nrm > 1.0 {
            g[0] = c.iter().zip(&dual).map(|(a, b)| a * b).sum();
            for (k, &col) in cols.iter().enumerate() {
                g[k + 1] = qf.col(col).iter().zip(&dual).map(|(a, b)| a * b).sum();
            }
            return Cut::Constraint(nrm - 1.0);
        }
        g[0] = -1.0;
        Cut::Objective(-t)
    });
    if res.best.is_finite() {
        (-res.best).max(0.0)
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// directions

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Nested, deterministic set of unit directions in `R^k` up to sign: the
/// `k` axes followed by `samples` low-discrepancy points.
fn directions(k: usize, samples: usize) -> Vec<Vec<f64>> {
    if k == 1 {
        return vec![vec![1.0]];
    }
    let mut out: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            let mut e = vec![0.0; k];
            e[a] = 1.0;
            e
        })
        .collect();
    let mut idx = 1u64;
    while out.len() < k + samples {
        let v: Vec<f64> = if k == 2 {
            let th = std::f64::consts::PI * radical_inverse(idx, 2);
            vec![th.cos(), th.sin()]
        } else {
            (0..k).map(|a| 2.0 * radical_inverse(idx, PRIMES[a]) - 1.0).collect()
        };
        idx += 1;
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-3 {
            out.push(v.into_iter().map(|x| x / nrm).collect());
        }
    }
    out
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / nrm).collect()
}

/// Pattern search on the unit sphere.
fn refine_direction<F: Fn(&[f64]) -> f64>(start: &[f64], value: f64, f: F) -> f64 {
    let k = start.len();
    if k == 1 {
        return value;
    }
    let mut u = start.to_vec();
    let mut best = value;
    let mut h = 0.05;
    let mut evals = 0;
    while h > 1e-7 && evals < 400 {
        let mut improved = false;
        for a in 0..k {
            for sign in [1.0, -1.0] {
                let mut trial = u.clone();
                trial[a] += sign * h;
                let trial = normalized(&trial);
                let v = f(&trial);
                evals += 1;
                if v < best {
                    best = v;
                    u = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    best
}

/// Minimum over `(i, u)` of `f(i, u)`, sampling directions and refining the
/// best few candidates.
fn min_over_directions<F>(dims: &[usize], cfg: &OracleConfig, f: F) -> f64
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    let mut jobs = Vec::new();
    for (i, &k) in dims.iter().enumerate() {
        if k == 0 {
            continue;
        }
        for u in directions(k, cfg.direction_samples) {
            jobs.push((i, u));
        }
    }
    let values: Vec<f64> = jobs.par_iter().map(|(i, u)| f(*i, u)).collect();
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let refined: Vec<f64> = order
        .iter()
        .take(cfg.restarts)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&j| {
            let (i, u) = &jobs[j];
            refine_direction(u, values[j], |v| f(*i, v))
        })
        .collect();
    values.into_iter().chain(refined).fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// public oracles

/// Lower estimate of `f_s(eta) = max { ||z||_binf : ||Q z|| <= 1, ||z||_b1 <= s eta }`
/// with `Q = A` (l_2 norm) or `Q = A^T A` (block-l_inf norm).
pub fn oracle_f_s(a: &SensingMatrix, s: f64, eta: f64, target: Target, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    check_size(a)?;
    if !(eta >= 0.0) || !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("need eta >= 0 and s > 0, got {eta}, {s}")));
    }
    if eta == 0.0 {
        return Ok(0.0);
    }
    let qf = QForm::new(a, target);
    let mut jobs = Vec::new();
    for i in 0..qf.p {
        for u in directions(qf.n, cfg.direction_samples) {
            jobs.push((i, u));
        }
    }
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|(i, u)| {
            let c = qf.block_times(*i, u);
            max_scale(&qf, &c, &qf.other_columns(*i), s * eta, cfg.tol)
        })
        .collect();
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Upper estimate of `omega(Q, s)`, the reciprocal of the fixed point of `f_s`.
///
/// `f_s(eta) > eta` exactly when `eta * omega < 1`, so the bisection on the
/// sign of `f_s(eta) - eta` collapses to computing `omega` itself.
pub fn oracle_omega(a: &SensingMatrix, s: f64, target: Target, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    check_size(a)?;
    let p = a.structure().p() as f64;
    if !(s >= 1.0) || s > p {
        return Err(Error::InvalidArgument(format!("s must lie in [1, p], got {s}")));
    }
    let qf = QForm::new(a, target);
    let dims = vec![qf.n; qf.p];
    let omega = min_over_directions(&dims, cfg, |i, u| {
        let c = qf.block_times(i, u);
        min_residual(&qf, &c, &qf.other_columns(i), s - 1.0, cfg.tol)
    });
    let scale = (0..qf.p * qf.n)
        .map(|c| qf.col(c).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    // a (numerically) zero minimum means s is at or beyond s^*
    if !(omega > 1e-6 * scale) {
        return Err(Error::NoBracket {
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    Ok(omega)
}

/// Orthonormal basis of `Ker(A)` (columns), or `None` when it is trivial.
fn kernel_basis(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let dim = a.ncols();
    let d = dim - numerical_rank(a);
    if d == 0 {
        return None;
    }
    // eigenvectors of A^T A for the d smallest eigenvalues
    let eig = (a.transpose() * a).symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    Some(eig.eigenvectors.select_columns(&order[..d]))
}

/// Upper estimate of `s^* = min ||z||_b1 / ||z||_binf` over the kernel of `A`
/// (`+inf` when the kernel is trivial).
pub fn oracle_s_star(a: &SensingMatrix, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    let st = a.structure();
    let n = st.n();
    let Some(basis) = kernel_basis(a.matrix()) else {
        return Ok(f64::INFINITY);
    };
    let d = basis.ncols();
    if d > MAX_KERNEL_DIM {
        return Err(Error::KernelTooLarge(d));
    }
    // per block: z_i = N_i c; parametrize c = V_r S^{-1} w + V_0 y with w on the sphere
    struct BlockParam {
        rank: usize,
        lift: DMatrix<f64>,
        free: DMatrix<f64>,
    }
    let params: Vec<BlockParam> = (0..st.p())
        .map(|i| {
            let ni = basis.rows(i * n, n).into_owned();
            let svd = ni.clone().svd(true, true);
            let v_t = svd.v_t.unwrap();
            let smax = svd.singular_values.max();
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
            let keep: Vec<usize> = order
                .iter()
                .cloned()
                .filter(|&k| svd.singular_values[k] > 1e-10 * smax.max(1e-300) && smax > 1e-12)
                .collect();
            let rank = keep.len();
            let mut lift = DMatrix::zeros(d, rank);
            let mut row_space = DMatrix::zeros(d, rank);
            for (col, &k) in keep.iter().enumerate() {
                let v = v_t.row(k).transpose();
                row_space.set_column(col, &v);
                lift.set_column(col, &(v / svd.singular_values[k]));
            }
            // u = U_r w for unit w, so ||u|| = 1 and N_i lift w = u
            let free = complement(&row_space, d);
            BlockParam { rank, lift, free }
        })
        .collect();
    let dims: Vec<usize> = params.iter().map(|b| b.rank).collect();
    let value = min_over_directions(&dims, cfg, |i, w| {
        let bp = &params[i];
        let c0 = &bp.lift * DVector::from_column_slice(w);
        let z0 = &basis * &c0;
        let m = &basis * &bp.free;
        let k = m.ncols();
        let base = block_l1(z0.as_slice(), n, None);
        if k == 0 {
            return base;
        }
        let mut v = vec![0.0; z0.len()];
        let mut gz = vec![0.0; z0.len()];
        let radius = base * (1.0 + 1e-9) + 1e-12;
        let res = ellipsoid(&vec![0.0; k], radius, cfg.tol, 1e-6 * base, max_iter_for(k), |y, g| {
            v.copy_from_slice(z0.as_slice());
            for (col, &yc) in y.iter().enumerate() {
                for (vi, mi) in v.iter_mut().zip(m.column(col).iter()) {
                    *vi += mi * yc;
                }
            }
            gz.iter_mut().for_each(|x| *x = 0.0);
            let val = block_l1(&v, n, Some(&mut gz));
            for (col, gc) in g.iter_mut().enumerate() {
                *gc = m.column(col).iter().zip(&gz).map(|(a, b)| a * b).sum();
            }
            Cut::Objective(val)
        });
        res.best.min(base)
    });
    Ok(value)
}

/// Orthonormal basis of the complement of the column span of `span` in `R^d`.
fn complement(span: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let r = span.ncols();
    if r == d {
        return DMatrix::zeros(d, 0);
    }
    let proj = DMatrix::<f64>::identity(d, d) - span * span.transpose();
    let eig = proj.symmetric_eigen();
    let cols: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    eig.eigenvectors.select_columns(&cols)
}

/// Upper estimate of the block l_1-constrained minimal singular value
/// `rho_s(A) = min { ||A z||_2 / ||z||_2 : ||z||_b1^2 <= s ||z||_2^2 }`.
pub fn oracle_rho(a: &SensingMatrix, s: f64, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    check_size(a)?;
    let st = a.structure();
    let (n, p) = (st.n(), st.p());
    if !(s >= 1.0) {
        return Err(Error::InvalidArgument(format!("s must be at least 1, got {s}")));
    }
    let gram = a.matrix().transpose() * a.matrix();
    let eig = gram.clone().symmetric_eigen();
    if s >= p as f64 {
        // the constraint is inactive
        return Ok(eig.eigenvalues.min().max(0.0).sqrt());
    }
    let radius = s.sqrt();
    let value = |z: &DVector<f64>| (z.dot(&(&gram * z)).max(0.0) / z.norm_squared()).sqrt();
    let mut starts: Vec<DVector<f64>> = Vec::new();
    // single-block minimizers are feasible for every s >= 1
    for i in 0..p {
        let gi = gram.view((i * n, i * n), (n, n)).into_owned().symmetric_eigen();
        let k = gi.eigenvalues.imin();
        let mut z = DVector::zeros(st.dim());
        z.rows_mut(i * n, n).copy_from(&gi.eigenvectors.column(k));
        starts.push(z);
    }
    for k in 0..st.dim() {
        starts.push(eig.eigenvectors.column(k).into_owned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..8 * cfg.restarts {
        starts.push(DVector::from_fn(st.dim(), |_, _| rng.sample(StandardNormal)));
    }
    let lmax = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let best: Vec<f64> = starts
        .par_iter()
        .map(|z0| {
            let mut z = project_ratio(z0, n, radius);
            let mut best = value(&z);
            for _ in 0..2000 {
                let grad = &gram * &z;
                let next = project_ratio(&(&z - grad * (0.5 / lmax)), n, radius);
                let v = value(&next);
                if v < best {
                    best = v;
                }
                if (&next - &z).norm() < 1e-13 {
                    break;
                }
                z = next;
            }
            best
        })
        .collect();
    Ok(best.into_iter().fold(f64::INFINITY, f64::min))
}

/// Maps `z` to a unit vector with `||z||_b1 <= radius` by group soft-thresholding.
fn project_ratio(z: &DVector<f64>, n: usize, radius: f64) -> DVector<f64> {
    let norms: Vec<f64> = z.as_slice().chunks(n).map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let ratio = |tau: f64| {
        let l1: f64 = norms.iter().map(|&r| (r - tau).max(0.0)).sum();
        let l2: f64 = norms.iter().map(|&r| (r - tau).max(0.0).powi(2)).sum::<f64>().sqrt();
        if l2 > 0.0 {
            l1 / l2
        } else {
            1.0
        }
    };
    let shrink = |tau: f64| {
        let mut out = z.clone();
        for (b, &r) in out.as_mut_slice().chunks_mut(n).zip(&norms) {
            let f = if r > tau { (r - tau) / r } else { 0.0 };
            b.iter_mut().for_each(|v| *v *= f);
        }
        let nrm = out.norm();
        out / nrm
    };
    if ratio(0.0) <= radius {
        return z / z.norm();
    }
    let top = norms.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, top * (1.0 - 1e-15));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) <= radius {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * top {
            break;
        }
    }
    shrink(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{normalize_columns, BlockStructure};

    fn gaussian(seed: u64, m: usize, n: usize, p: usize) -> SensingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st = BlockStructure::new(n, p).unwrap();
        let data = DMatrix::from_fn(m, n * p, |_, _| rng.sample(StandardNormal));
        normalize_columns(&SensingMatrix::new(st, data).unwrap()).unwrap()
    }

    fn cfg() -> OracleConfig {
        OracleConfig::default()
    }

    #[test]
    fn config_is_validated() {
        let a = gaussian(0, 4, 1, 6);
        let few = OracleConfig {
            direction_samples: 4,
            ..cfg()
        };
        assert!(oracle_f_s(&a, 1.5, 1.0, Target::Omega2, &few).is_err());
        let none = OracleConfig { restarts: 0, ..cfg() };
        assert!(oracle_omega(&a, 1.5, Target::Omega2, &none).is_err());
    }

    #[test]
    fn size_caps() {
        let a = gaussian(0, 6, 2, 7);
        assert!(matches!(oracle_omega(&a, 1.5, Target::Omega2, &cfg()), Err(Error::TooLarge(_))));
        assert!(matches!(oracle_rho(&a, 1.5, &cfg()), Err(Error::TooLarge(_))));
        let b = gaussian(0, 2, 1, 9);
        assert!(matches!(oracle_s_star(&b, &cfg()), Err(Error::KernelTooLarge(7))));
    }

    #[test]
    fn f_s_zero_and_identity() {
        let a = gaussian(1, 5, 1, 8);
        assert_eq!(oracle_f_s(&a, 2.0, 0.0, Target::Omega2, &cfg()).unwrap(), 0.0);
        let st = BlockStructure::new(1, 3).unwrap();
        let id = SensingMatrix::new(st, DMatrix::identity(3, 3)).unwrap();
        let f = oracle_f_s(&id, 2.0, 10.0, Target::Omega2, &cfg()).unwrap();
        assert!((f - 1.0).abs() < 1e-8, "{f}");
        // with a binding l1 budget the box corner is cut off
        let f = oracle_f_s(&id, 2.0, 0.2, Target::Omega2, &cfg()).unwrap();
        assert!((f - 0.4).abs() < 1e-8, "{f}");
    }

    #[test]
    fn f_s_increasing_and_above_s_eta() {
        for target in [Target::Omega2, Target::OmegaBinf] {
            let a = gaussian(2, 6, 2, 4);
            let s = 1.5;
            let mut prev = 0.0;
            for &eta in &[0.01, 0.1, 0.5, 1.0, 3.0] {
                let f = oracle_f_s(&a, s, eta, target, &cfg()).unwrap();
                assert!(f > prev, "{f} <= {prev}");
                prev = f;
            }
            let eta = 1e-4;
            let f = oracle_f_s(&a, s, eta, target, &cfg()).unwrap();
            assert!(f >= s * eta * (1.0 - 1e-8), "{f}");
        }
    }

    #[test]
    fn f_s_refines_with_more_directions() {
        let a = gaussian(3, 6, 3, 3);
        let mut prev = 0.0;
        for samples in [8, 16, 64, 128] {
            let c = OracleConfig {
                direction_samples: samples,
                ..cfg()
            };
            let f = oracle_f_s(&a, 1.4, 0.7, Target::Omega2, &c).unwrap();
            assert!(f >= prev - 1e-12, "{samples}: {f} < {prev}");
            prev = f;
        }
    }

    #[test]
    fn omega_is_the_fixed_point_of_f_s() {
        // n = 1 has no direction sampling, so both values are exact
        let a = gaussian(4, 5, 1, 8);
        let s = 1.6;
        let w = oracle_omega(&a, s, Target::Omega2, &cfg()).unwrap();
        let f = oracle_f_s(&a, s, 1.0 / w, Target::Omega2, &cfg()).unwrap();
        assert!((f * w - 1.0).abs() < 1e-7, "{f} vs {}", 1.0 / w);
        assert!(oracle_f_s(&a, s, 0.9 / w, Target::Omega2, &cfg()).unwrap() > 0.9 / w);
        assert!(oracle_f_s(&a, s, 1.1 / w, Target::Omega2, &cfg()).unwrap() < 1.1 / w);
    }

    #[test]
    fn omega_vanishes_near_s_star() {
        let a = gaussian(5, 5, 1, 8);
        let s_up = oracle_s_star(&a, &cfg()).unwrap();
        let w_far = oracle_omega(&a, 0.5 * (1.0 + s_up), Target::Omega2, &cfg()).unwrap();
        let w_near = oracle_omega(&a, s_up - 1e-3, Target::Omega2, &cfg()).unwrap();
        assert!(w_near < 0.05 * w_far, "{w_near} vs {w_far}");
        assert!(matches!(
            oracle_omega(&a, s_up + 0.1, Target::Omega2, &cfg()),
            Err(Error::NoBracket { .. })
        ));
    }

    #[test]
    fn s_star_hand_instances() {
        let a = SensingMatrix::from_row_slice(BlockStructure::new(1, 2).unwrap(), 1, &[1.0, 1.0]).unwrap();
        assert!((oracle_s_star(&a, &cfg()).unwrap() - 2.0).abs() < 1e-9);
        let st = BlockStructure::new(2, 3).unwrap();
        let full = SensingMatrix::new(st, DMatrix::identity(6, 6)).unwrap();
        assert!(oracle_s_star(&full, &cfg()).unwrap().is_infinite());
        // kernel spanned by (1, 0, -1, 0, 0, 0): one block pair cancels
        let mut data = DMatrix::<f64>::identity(6, 6);
        data[(0, 2)] = 1.0;
        data[(2, 2)] = 0.0;
        let a = SensingMatrix::new(st, data).unwrap();
        assert!((oracle_s_star(&a, &cfg()).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rho_special_cases() {
        let st = BlockStructure::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = DMatrix::<f64>::from_fn(8, 6, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let a = SensingMatrix::new(st, q).unwrap();
        for s in [1.0, 2.0, 3.5] {
            assert!((oracle_rho(&a, s, &cfg()).unwrap() - 1.0).abs() < 1e-9);
        }
        let b = gaussian(7, 5, 2, 4);
        let direct = (0..4)
            .map(|i| b.column_block(i).singular_values().min())
            .fold(f64::INFINITY, f64::min);
        assert!((oracle_rho(&b, 1.0, &cfg()).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn oracles_are_reproducible() {
        let a = gaussian(8, 6, 2, 5);
        let c = cfg();
        assert_eq!(
            oracle_omega(&a, 1.5, Target::OmegaBinf, &c).unwrap().to_bits(),
            oracle_omega(&a, 1.5, Target::OmegaBinf, &c).unwrap().to_bits()
        );
        assert_eq!(
            oracle_rho(&a, 2.0, &c).unwrap().to_bits(),
            oracle_rho(&a, 2.0, &c).unwrap().to_bits()
        );
        assert_eq!(
            oracle_s_star(&a, &c).unwrap().to_bits(),
            oracle_s_star(&a, &c).unwrap().to_bits()
        );
    }

    #[test]
    fn ellipsoid_solves_a_known_program() {
        // min |x - 3| + |y + 1| over the unit disk is 4 - sqrt 2
        let f = |x: f64, y: f64| (x - 3.0).abs() + (y + 1.0).abs();
        let res = ellipsoid(&[0.0, 0.0], 1.0 + 1e-12, 1e-12, 1.0, max_iter_for(2), |v, g| {
            let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
            if r > 1.0 {
                g[0] = v[0] / r;
                g[1] = v[1] / r;
                return Cut::Constraint(r - 1.0);
            }
            g[0] = (v[0] - 3.0).signum();
            g[1] = (v[1] + 1.0).signum();
            Cut::Objective(f(v[0], v[1]))
        });
        let grid = (0..200_000)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 200_000.0;
                f(t.cos(), t.sin())
            })
            .fold(f64::INFINITY, f64::min);
        assert!((res.best - grid).abs() < 1e-8, "{} vs {grid}", res.best);
        assert!((res.best - (4.0 - 2f64.sqrt())).abs() < 1e-10);
        assert!(res.lower <= res.best && res.best - res.lower < 1e-9);
        assert!(res.point[0] * res.point[0] + res.point[1] * res.point[1] <= 1.0);
    }
}
