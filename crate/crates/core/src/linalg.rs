//! Dense kernels for the small symmetric eigenproblems and singular-value
//! operations that the solvers run on `n x c` blocks.
//!
//! Block matrices are passed as column-major slices with `n` rows. Every
//! spectral quantity is taken from the `n x n` row Gram matrix `T T^T`,
//! so `n` is the only dimension that enters the eigen-solves.

use nalgebra::DMatrix;

/// Default relative tolerance for [`spectral_norm`].
pub const POWER_TOL: f64 = 1e-9;

const POWER_MAX_ITER: usize = 100_000;

/// Eigen-decomposition of a symmetric `n x n` matrix by cyclic Jacobi sweeps.
///
/// On return `a` holds the eigenvalues on its diagonal and `v` (column-major)
/// the matching orthonormal eigenvectors.
pub fn jacobi_eigen(a: &mut [f64], v: &mut [f64], n: usize) {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(v.len(), n * n);
    v.iter_mut().for_each(|x| *x = 0.0);
    for k in 0..n {
        v[k * n + k] = 1.0;
    }
    jacobi_sweeps(a, v, n);
}

/// Jacobi sweeps that accumulate rotations onto an existing orthonormal `v`.
fn jacobi_sweeps(a: &mut [f64], v: &mut [f64], n: usize) {
    if n == 1 {
        return;
    }
    let idx = |r: usize, c: usize| c * n + r;
    for _sweep in 0..64 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for c in 0..n {
            for r in 0..n {
                if r == c {
                    diag += a[idx(r, c)] * a[idx(r, c)];
                } else {
                    off += a[idx(r, c)] * a[idx(r, c)];
                }
            }
        }
        if off <= 1e-28 * diag || off == 0.0 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[idx(k, p)];
                    let vkq = v[idx(k, q)];
                    v[idx(k, p)] = c * vkp - s * vkq;
                    v[idx(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
}

/// Scratch buffers for block spectral operations with `n` rows.
#[derive(Debug, Clone)]
pub struct BlockWork {
    n: usize,
    gram: Vec<f64>,
    vecs: Vec<f64>,
    tmp: Vec<f64>,
}

impl BlockWork {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            gram: vec![0.0; n * n],
            vecs: vec![0.0; n * n],
            tmp: vec![0.0; n * n],
        }
    }

    fn load_gram(&mut self, t: &[f64]) {
        let n = self.n;
        let c = t.len() / n;
        self.gram.iter_mut().for_each(|x| *x = 0.0);
        for col in 0..c {
            let tc = &t[col * n..(col + 1) * n];
            for r2 in 0..n {
                let x = tc[r2];
                if x == 0.0 {
                    continue;
                }
                for r1 in 0..=r2 {
                    self.gram[r2 * n + r1] += tc[r1] * x;
                }
            }
        }
        for r2 in 0..n {
            for r1 in 0..r2 {
                self.gram[r1 * n + r2] = self.gram[r2 * n + r1];
            }
        }
    }

    /// Singular values of the `n x c` column-major block `t` (unsorted).
    pub fn singular_values(&mut self, t: &[f64], out: &mut [f64]) {
        let n = self.n;
        self.load_gram(t);
        jacobi_eigen(&mut self.gram, &mut self.vecs, n);
        for k in 0..n {
            out[k] = self.gram[k * n + k].max(0.0).sqrt();
        }
    }

    /// Largest singular value of `t`.
    pub fn spectral(&mut self, t: &[f64]) -> f64 {
        let n = self.n;
        self.load_gram(t);
        jacobi_eigen(&mut self.gram, &mut self.vecs, n);
        (0..n)
            .map(|k| self.gram[k * n + k])
            .fold(0.0, f64::max)
            .max(0.0)
            .sqrt()
    }

    /// Sum of singular values of `t`.
    pub fn nuclear(&mut self, t: &[f64]) -> f64 {
        let n = self.n;
        self.load_gram(t);
        jacobi_eigen(&mut self.gram, &mut self.vecs, n);
        (0..n).map(|k| self.gram[k * n + k].max(0.0).sqrt()).sum()
    }

    /// Singular values of `t` (into `vals`) and the left singular vectors
    /// (column-major into `vecs`), for a later [`BlockWork::clip_with`].
    pub fn decompose(&mut self, t: &[f64], vals: &mut [f64], vecs: &mut [f64]) {
        let n = self.n;
        self.load_gram(t);
        jacobi_eigen(&mut self.gram, vecs, n);
        for k in 0..n {
            vals[k] = self.gram[k * n + k].max(0.0).sqrt();
        }
    }

    /// [`BlockWork::decompose`] starting from the orthonormal basis already in
    /// `vecs`; cheap when `t` changed little since that basis was computed.
    pub fn decompose_warm(&mut self, t: &[f64], vals: &mut [f64], vecs: &mut [f64]) {
        let n = self.n;
        self.load_gram(t);
        // gram <- V^T G V
        for c in 0..n {
            for r in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.gram[k * n + r] * vecs[c * n + k];
                }
                self.tmp[c * n + r] = acc;
            }
        }
        for c in 0..n {
            for r in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vecs[r * n + k] * self.tmp[c * n + k];
                }
                self.gram[c * n + r] = acc;
            }
        }
        jacobi_sweeps(&mut self.gram, vecs, n);
        for k in 0..n {
            vals[k] = self.gram[k * n + k].max(0.0).sqrt();
        }
    }

    /// Caps the singular values of `t` at `theta` in place, keeping its singular vectors.
    ///
    /// With `sigma` the singular values of `t`, the result is
    /// `U diag(min(sigma, theta)) V^T`.
    pub fn clip(&mut self, t: &mut [f64], theta: f64) {
        let n = self.n;
        let mut vals = vec![0.0; n];
        let mut vecs = vec![0.0; n * n];
        self.decompose(t, &mut vals, &mut vecs);
        self.clip_with(t, &vals, &vecs, theta);
    }

    /// [`BlockWork::clip`] with a decomposition of `t` computed earlier.
    pub fn clip_with(&mut self, t: &mut [f64], vals: &[f64], vecs: &[f64], theta: f64) {
        let n = self.n;
        let mut any = false;
        for k in 0..n {
            let sigma = vals[k];
            let f = if sigma > theta { theta / sigma } else { 1.0 };
            any |= f < 1.0;
            // 1 - f, so that M = I - U diag(1 - f) U^T
            self.vecs[k] = 1.0 - f;
        }
        if !any {
            return;
        }
        for c in 0..n {
            for r in 0..n {
                let mut acc = if r == c { 1.0 } else { 0.0 };
                for k in 0..n {
                    acc -= vecs[k * n + r] * self.vecs[k] * vecs[k * n + c];
                }
                self.tmp[c * n + r] = acc;
            }
        }
        let mut col = [0.0; 16];
        let mut heap;
        let col: &mut [f64] = if n <= 16 {
            &mut col[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for chunk in t.chunks_mut(n) {
            col.copy_from_slice(chunk);
            for r in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.tmp[k * n + r] * col[k];
                }
                chunk[r] = acc;
            }
        }
    }
}

/// `c <- alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
///
/// Goes straight to `matrixmultiply`, which stays fast for the skinny
/// `n x q` shapes the solvers produce.
pub fn gemm(
    alpha: f64,
    a: &DMatrix<f64>,
    trans_a: bool,
    b: &DMatrix<f64>,
    trans_b: bool,
    beta: f64,
    c: &mut DMatrix<f64>,
) {
    let (m, k, rsa, csa) = if trans_a {
        (a.ncols(), a.nrows(), a.nrows() as isize, 1)
    } else {
        (a.nrows(), a.ncols(), 1, a.nrows() as isize)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (b.ncols(), b.nrows(), b.nrows() as isize, 1)
    } else {
        (b.nrows(), b.ncols(), 1, b.nrows() as isize)
    };
    assert_eq!(k, kb, "gemm: inner dimensions differ");
    assert_eq!((c.nrows(), c.ncols()), (m, n), "gemm: output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            *c *= beta;
        }
        return;
    }
    let csc = c.nrows() as isize;
    // SAFETY: the pointers come from live column-major buffers whose shapes
    // were checked above, and `c` does not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            1,
            csc,
        );
    }
}

/// Threshold `theta` such that `sum_k max(x_k - theta, 0) = radius`, for
/// nonnegative `x` whose sum exceeds `radius`.
pub fn l1_ball_threshold(x: &[f64], radius: f64) -> f64 {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let cand = (cumsum - radius) / (k + 1) as f64;
        if u > cand {
            theta = cand;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Largest singular value of `m` by power iteration on `M^T M`.
///
/// The start vector is a fixed pseudo-random sequence, so the result is
/// deterministic. Iteration stops once the Rayleigh quotient changes by less
/// than a small fraction of `tol` relative to its value.
pub fn spectral_norm(m: &DMatrix<f64>, tol: f64) -> f64 {
    let c = m.ncols();
    if c == 0 || m.nrows() == 0 || m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    // Work on the smaller Gram side.
    let gram = if m.nrows() < c {
        m * m.transpose()
    } else {
        m.tr_mul(m)
    };
    let d = gram.nrows();
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut v = nalgebra::DVector::from_fn(d, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 + 0.5
    });
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = &gram * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= 0.01 * tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn jacobi_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..7 {
            let b = random(&mut rng, n, n);
            let s = &b + b.transpose();
            let mut a = s.as_slice().to_vec();
            let mut v = vec![0.0; n * n];
            jacobi_eigen(&mut a, &mut v, n);
            let vm = DMatrix::from_column_slice(n, n, &v);
            let d = DMatrix::from_fn(n, n, |r, c| if r == c { a[c * n + r] } else { 0.0 });
            let rebuilt = &vm * d * vm.transpose();
            assert!((rebuilt - &s).norm() < 1e-12 * (1.0 + s.norm()));
            assert!((vm.transpose() * &vm - DMatrix::identity(n, n)).norm() < 1e-12);
        }
    }

    #[test]
    fn warm_decomposition_matches_cold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut w = BlockWork::new(4);
        let t = random(&mut rng, 4, 4);
        let mut vals = vec![0.0; 4];
        let mut vecs = vec![0.0; 16];
        w.decompose(t.as_slice(), &mut vals, &mut vecs);
        let t2 = &t + random(&mut rng, 4, 4) * 1e-3;
        let mut warm_vals = vals.clone();
        w.decompose_warm(t2.as_slice(), &mut warm_vals, &mut vecs);
        let mut cold_vals = vec![0.0; 4];
        let mut cold_vecs = vec![0.0; 16];
        w.decompose(t2.as_slice(), &mut cold_vals, &mut cold_vecs);
        warm_vals.sort_by(|a, b| a.total_cmp(b));
        cold_vals.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in warm_vals.iter().zip(&cold_vals) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let mut clipped = t2.as_slice().to_vec();
        let mut vals2 = vec![0.0; 4];
        w.decompose_warm(t2.as_slice(), &mut vals2, &mut vecs);
        w.clip_with(&mut clipped, &vals2, &vecs, 0.3);
        assert!(w.spectral(&clipped) <= 0.3 + 1e-12);
    }

    #[test]
    fn block_values_match_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = BlockWork::new(3);
        for c in [1, 3, 7] {
            let t = random(&mut rng, 3, c);
            let mut sv = vec![0.0; 3];
            w.singular_values(t.as_slice(), &mut sv);
            sv.sort_by(|a, b| b.total_cmp(a));
            let mut reference: Vec<f64> = t.singular_values().iter().cloned().collect();
            reference.resize(3, 0.0);
            reference.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in sv.iter().zip(&reference) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-7);
            }
            assert_abs_diff_eq!(w.spectral(t.as_slice()), reference[0], epsilon = 1e-12);
            assert_abs_diff_eq!(
                w.nuclear(t.as_slice()),
                reference.iter().sum::<f64>(),
                epsilon = 1e-7
            );
        }
    }

    #[test]
    fn clip_caps_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = BlockWork::new(4);
        let t = random(&mut rng, 4, 6);
        let svd = t.clone().svd(true, true);
        let theta = svd.singular_values[1] * 0.9;
        let capped = svd.singular_values.map(|s| s.min(theta));
        let expected =
            svd.u.as_ref().unwrap() * DMatrix::from_diagonal(&capped) * svd.v_t.as_ref().unwrap();
        let mut out = t.as_slice().to_vec();
        w.clip(&mut out, theta);
        let out = DMatrix::from_column_slice(4, 6, &out);
        assert!((out - expected).norm() < 1e-10);
    }

    #[test]
    fn gemm_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, 4, 7);
        let b = random(&mut rng, 7, 9);
        let mut c = random(&mut rng, 4, 9);
        let expected = &a * &b * 2.0 + &c * 0.5;
        gemm(2.0, &a, false, &b, false, 0.5, &mut c);
        assert!((&c - expected).norm() < 1e-12);
        let at = a.transpose();
        let bt = b.transpose();
        gemm(1.0, &at, true, &bt, true, 0.0, &mut c);
        assert!((&c - &a * &b).norm() < 1e-12);
    }

    #[test]
    fn l1_threshold_examples() {
        assert_abs_diff_eq!(l1_ball_threshold(&[3.0, 1.0], 2.0), 1.0);
        assert_abs_diff_eq!(l1_ball_threshold(&[3.0, 1.0], 1.0), 2.0);
        let x = [0.5, 2.0, 1.5, 0.1];
        let theta = l1_ball_threshold(&x, 1.2);
        let total: f64 = x.iter().map(|v| (v - theta).max(0.0)).sum();
        assert_abs_diff_eq!(total, 1.2, epsilon = 1e-14);
    }

    #[test]
    fn spectral_norm_examples() {
        assert_abs_diff_eq!(spectral_norm(&DMatrix::identity(4, 4), POWER_TOL), 1.0, epsilon = 1e-12);
        let u = DMatrix::from_column_slice(2, 1, &[2.0, 0.0]);
        let v = DMatrix::from_column_slice(3, 1, &[0.0, 3.0, 0.0]);
        assert_abs_diff_eq!(spectral_norm(&(u * v.transpose()), POWER_TOL), 6.0, epsilon = 1e-12);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2), POWER_TOL), 0.0);
    }

    #[test]
    fn spectral_norm_matches_svd_on_many_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let r = rng.random_range(1..=50);
            let c = rng.random_range(1..=50);
            let m = random(&mut rng, r, c);
            let reference = m.singular_values().max();
            let got = spectral_norm(&m, POWER_TOL);
            assert!((got - reference).abs() <= 1e-8 * reference, "{got} vs {reference}");
        }
    }

    #[test]
    fn spectral_norm_random_five_by_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(&mut rng, 5, 3);
        let reference = m.singular_values().max();
        assert!((spectral_norm(&m, POWER_TOL) - reference).abs() <= 1e-8 * reference);
    }

    proptest! {
        #[test]
        fn clip_never_raises_spectral_norm(seed in 0u64..500, theta in 0.01f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random(&mut rng, 3, 5);
            let mut w = BlockWork::new(3);
            let mut out = t.as_slice().to_vec();
            w.clip(&mut out, theta);
            let s = w.spectral(&out);
            prop_assert!(s <= theta + 1e-10);
        }
    }
}
