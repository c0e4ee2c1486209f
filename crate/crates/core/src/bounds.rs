//! Recovery error bounds from certified goodness measures, and the block-RIP
//! comparison.
//!
//! With `omega` a lower bound on the goodness measure at level `s_used`:
//!
//! | program  | block-l_inf bound               | l_2 bound                              |
//! |----------|---------------------------------|----------------------------------------|
//! | BS-BP    | `2 eps / omega_2(A, 2k)`        | `2 sqrt(2k) eps / omega_2`             |
//! | BS-DS    | `2 mu / omega_binf(A^T A, 2k)`  | `2 sqrt(2k) mu / omega_binf`           |
//! | BS-LASSO | `(1+kappa) mu / omega_binf(A^T A, 2k/(1-kappa))` | `sqrt(2k/(1-kappa)) (1+kappa) mu / omega_binf` |

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::block::SensingMatrix;
use crate::error::{Error, Result};
use crate::fixedpoint::{omega_lower_bound, FixedPointConfig, OmegaQuery, Target};
use crate::inner::{verify_s_star, VerifyOptions};

/// Recovery program a bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Program {
    Bsbp,
    Bsds,
    Bslasso,
}

impl Program {
    /// Goodness measure the bound is stated in.
    pub fn target(self) -> Target {
        match self {
            Program::Bsbp => Target::Omega2,
            Program::Bsds | Program::Bslasso => Target::OmegaBinf,
        }
    }

    /// Level at which the goodness measure must be certified.
    pub fn s_used(self, k: usize, kappa: Option<f64>) -> Result<f64> {
        let two_k = 2.0 * k as f64;
        match self {
            Program::Bsbp | Program::Bsds => Ok(two_k),
            Program::Bslasso => Ok(two_k / (1.0 - check_kappa(kappa)?)),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Program::Bsbp => "bsbp",
            Program::Bsds => "bsds",
            Program::Bslasso => "bslasso",
        })
    }
}

fn check_kappa(kappa: Option<f64>) -> Result<f64> {
    match kappa {
        Some(c) if c > 0.0 && c < 1.0 => Ok(c),
        other => Err(Error::InvalidArgument(format!(
            "BS-LASSO needs kappa in (0, 1), got {other:?}"
        ))),
    }
}

fn check_inputs(omega_lb: f64, noise: f64) -> Result<()> {
    if !(omega_lb > 0.0) || !omega_lb.is_finite() {
        return Err(Error::NonPositiveOmega(omega_lb));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise parameter must be finite and nonnegative, got {noise}"
        )));
    }
    Ok(())
}

/// Block-l_inf error bound with `omega` replaced by its lower bound.
pub fn bound_binf(program: Program, omega_lb: f64, noise: f64, kappa: Option<f64>) -> Result<f64> {
    check_inputs(omega_lb, noise)?;
    Ok(match program {
        Program::Bsbp | Program::Bsds => 2.0 * noise / omega_lb,
        Program::Bslasso => (1.0 + check_kappa(kappa)?) * noise / omega_lb,
    })
}

/// l_2 error bound for block sparsity `k`.
pub fn bound_l2(program: Program, omega_lb: f64, noise: f64, kappa: Option<f64>, k: usize) -> Result<f64> {
    check_inputs(omega_lb, noise)?;
    let two_k = 2.0 * k as f64;
    Ok(match program {
        Program::Bsbp | Program::Bsds => 2.0 * two_k.sqrt() * noise / omega_lb,
        Program::Bslasso => {
            let c = check_kappa(kappa)?;
            (two_k / (1.0 - c)).sqrt() * (1.0 + c) * noise / omega_lb
        }
    })
}

/// Monte-Carlo estimate of the block-RIP constant `delta_2k`.
///
/// Each trial draws `2k` distinct blocks uniformly and records
/// `max(sigma_max^2 - 1, 1 - sigma_min^2)` of the sub-matrix. Trial `t` uses
/// its own ChaCha stream derived from `(seed, t)`, so the result does not
/// depend on the thread count and a longer run extends a shorter one.
pub fn block_rip_mc(a: &SensingMatrix, k: usize, trials: usize, seed: u64) -> Result<f64> {
    let st = a.structure();
    let p = st.p();
    if k == 0 || 2 * k > p {
        return Err(Error::InvalidK { k, p });
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let n = st.n();
    let m = a.rows();
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut blocks = sample(&mut rng, p, 2 * k).into_vec();
            blocks.sort_unstable();
            let cols = 2 * k * n;
            let mut sub = DMatrix::<f64>::zeros(m, cols);
            for (slot, &b) in blocks.iter().enumerate() {
                sub.columns_mut(slot * n, n).copy_from(&a.matrix().columns(b * n, n));
            }
            let sv = sub.singular_values();
            let smax = sv.max();
            let smin = if cols > m { 0.0 } else { sv.min() };
            (smax * smax - 1.0).max(1.0 - smin * smin)
        })
        .collect();
    Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// The block-RIP based bound, or the marker that it does not apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RipBound {
    Valid(f64),
    /// `delta >= sqrt(2) - 1`.
    Invalid,
}

impl RipBound {
    pub fn value(self) -> Option<f64> {
        match self {
            RipBound::Valid(v) => Some(v),
            RipBound::Invalid => None,
        }
    }
}

impl fmt::Display for RipBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RipBound::Valid(v) => write!(f, "{v}"),
            RipBound::Invalid => f.write_str("invalid (delta >= sqrt(2)-1)"),
        }
    }
}

impl Serialize for RipBound {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RipBound::Valid(v) => serializer.serialize_f64(*v),
            RipBound::Invalid => serializer.serialize_str("invalid"),
        }
    }
}

/// `4 sqrt(1 + delta) / (1 - (1 + sqrt 2) delta) * eps` when `delta < sqrt(2) - 1`.
pub fn rip_bound(delta: f64, eps: f64) -> RipBound {
    if !(delta < std::f64::consts::SQRT_2 - 1.0) {
        return RipBound::Invalid;
    }
    let delta = delta.max(0.0);
    RipBound::Valid(4.0 * (1.0 + delta).sqrt() / (1.0 - (1.0 + std::f64::consts::SQRT_2) * delta) * eps)
}

/// One row of a comparison report. Missing values mark cells that could
/// not be certified.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub program: Program,
    pub k: usize,
    pub s_used: f64,
    pub certified: bool,
    pub omega_lb: Option<f64>,
    pub noise_param: f64,
    pub kappa: Option<f64>,
    pub binf_bound: Option<f64>,
    pub l2_bound: Option<f64>,
    pub rip_delta_hat: Option<f64>,
    pub rip_bound: Option<RipBound>,
    /// Why a cell is empty.
    pub note: Option<String>,
}

/// Settings for [`compare_report`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub programs: Vec<Program>,
    pub eps: f64,
    pub mu: f64,
    pub kappa: f64,
    /// Monte-Carlo trials for the block-RIP estimate; 0 skips it.
    pub rip_trials: usize,
    pub seed: u64,
    pub verify: VerifyOptions,
    pub fixed_point: FixedPointConfig,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            programs: vec![Program::Bsbp],
            eps: 1.0,
            mu: 1.0,
            kappa: 0.5,
            rip_trials: 1000,
            seed: 0,
            verify: VerifyOptions::default(),
            fixed_point: FixedPointConfig::default(),
        }
    }
}

impl ReportConfig {
    fn noise(&self, program: Program) -> f64 {
        match program {
            Program::Bsbp => self.eps,
            Program::Bsds | Program::Bslasso => self.mu,
        }
    }
}

/// Bound rows for every `(k, program)`, computing `s_*` first.
pub fn compare_report(a: &SensingMatrix, k_values: &[usize], config: &ReportConfig) -> Result<Vec<BoundReport>> {
    let s_star = verify_s_star(a, &config.verify)?.s_star;
    Ok(compare_with_s_star(a, s_star, k_values, config))
}

/// Bound rows given a verified `s_star`. Failures end up in the row's note.
pub fn compare_with_s_star(
    a: &SensingMatrix,
    s_star: f64,
    k_values: &[usize],
    config: &ReportConfig,
) -> Vec<BoundReport> {
    let mut omegas: HashMap<(Target, u64), std::result::Result<f64, String>> = HashMap::new();
    let mut rows = Vec::new();
    for &k in k_values {
        let delta = (config.rip_trials > 0)
            .then(|| block_rip_mc(a, k, config.rip_trials, config.seed).ok())
            .flatten();
        for &program in &config.programs {
            let kappa = (program == Program::Bslasso).then_some(config.kappa);
            let noise = config.noise(program);
            let mut row = BoundReport {
                program,
                k,
                s_used: f64::NAN,
                certified: false,
                omega_lb: None,
                noise_param: noise,
                kappa,
                binf_bound: None,
                l2_bound: None,
                rip_delta_hat: delta,
                rip_bound: match (program, delta) {
                    (Program::Bsbp, Some(d)) => Some(rip_bound(d, config.eps)),
                    _ => None,
                },
                note: None,
            };
            let s = match program.s_used(k, kappa) {
                Ok(s) => s,
                Err(e) => {
                    row.note = Some(e.to_string());
                    rows.push(row);
                    continue;
                }
            };
            row.s_used = s;
            if !(s < s_star) {
                row.note = Some(format!("s = {s} is not below s_* = {s_star}"));
                rows.push(row);
                continue;
            }
            let target = program.target();
            let omega = omegas
                .entry((target, s.to_bits()))
                .or_insert_with(|| {
                    OmegaQuery::new(a.clone(), s, target, s_star)
                        .and_then(|q| omega_lower_bound(&q, &config.fixed_point))
                        .map(|(w, _)| w)
                        .map_err(|e| e.to_string())
                })
                .clone();
            match omega {
                Ok(w) => {
                    row.omega_lb = Some(w);
                    match (
                        bound_binf(program, w, noise, kappa),
                        bound_l2(program, w, noise, kappa, k),
                    ) {
                        (Ok(b), Ok(l)) => {
                            row.binf_bound = Some(b);
                            row.l2_bound = Some(l);
                            row.certified = true;
                        }
                        (Err(e), _) | (_, Err(e)) => row.note = Some(e.to_string()),
                    }
                }
                Err(e) => row.note = Some(e),
            }
            rows.push(row);
        }
    }
    rows
}
