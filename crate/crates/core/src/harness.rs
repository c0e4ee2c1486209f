//! Random ensembles and the experiment presets that regenerate the published
//! tables.
//!
//! A run writes one CSV per table (laid out like the published one, with `-`
//! in cells that are not certified) and a JSON provenance record holding the
//! configuration, seeds, per-cell timings, fixed-point traces and a check of
//! each reproduced number against its published value.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::block::{normalize_columns, BlockStructure, SensingMatrix};
use crate::bounds::{block_rip_mc, bound_l2, rip_bound, Program, RipBound};
use crate::error::{Error, Result};
use crate::fixedpoint::{omega_lower_bound, FixedPointConfig, FixedPointTrace, OmegaQuery, Strategy, Target};
use crate::fixedpoint::{fp_bisection, fp_hybrid, fp_naive};
use crate::inner::{verify_s_star, VerifyOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Gaussian,
    Bernoulli,
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "bernoulli" => Ok(Self::Bernoulli),
            _ => Err(Error::Parse(format!("unknown ensemble {s:?}"))),
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Bernoulli => "bernoulli",
        })
    }
}

/// A random sensing-matrix ensemble with i.i.d. entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl EnsembleSpec {
    pub fn gaussian(m: usize, n: usize, p: usize, seed: u64) -> Self {
        Self {
            kind: EnsembleKind::Gaussian,
            m,
            n,
            p,
            seed,
            normalize: true,
        }
    }
}

/// Draws a matrix. Entries are generated row by row from a ChaCha8 stream
/// seeded with `spec.seed`, so a spec always yields the same matrix.
pub fn generate(spec: &EnsembleSpec) -> Result<SensingMatrix> {
    let structure = BlockStructure::new(spec.n, spec.p)?;
    if spec.m == 0 {
        return Err(Error::InvalidArgument("ensemble needs m >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let len = spec.m * structure.dim();
    let entries: Vec<f64> = match spec.kind {
        EnsembleKind::Gaussian => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
        EnsembleKind::Bernoulli => (0..len)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    };
    let a = SensingMatrix::from_row_slice(structure, spec.m, &entries)?;
    if spec.normalize {
        normalize_columns(&a)
    } else {
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Table1,
    Table2,
    Table3,
    RuntimeCompare,
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Table1 => "table1",
            Self::Table2 => "table2",
            Self::Table3 => "table3",
            Self::RuntimeCompare => "runtime_compare",
            Self::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "table1" => Ok(Self::Table1),
            "table2" => Ok(Self::Table2),
            "table3" => Ok(Self::Table3),
            "runtime_compare" | "runtime" => Ok(Self::RuntimeCompare),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::Parse(format!("unknown preset {s:?}"))),
        }
    }
}

/// Row counts of the published tables.
pub const TABLE_M: [usize; 6] = [72, 96, 120, 144, 168, 192];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Ensemble of every draw; `m` and `seed` are replaced per cell.
    pub ensemble: EnsembleSpec,
    pub m_values: Vec<usize>,
    pub k_values: Vec<usize>,
    /// Strategies timed by the runtime comparison.
    pub strategies: Vec<Strategy>,
    /// Sparsity level of the runtime comparison.
    pub s: f64,
    /// Also verify each draw as an unstructured (`n = 1`) matrix.
    pub sparse_model: bool,
    pub eps: f64,
    pub rip_trials: usize,
    /// Independent draws per row count, with seeds `seed, seed + 1, ...`.
    pub repeat: usize,
    pub verify: VerifyOptions,
    pub fixed_point: FixedPointConfig,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Preset defaults. Table presets use `m` in {72, 96} unless `full`.
    pub fn preset(preset: Preset, full: bool) -> Self {
        let m_values = if full { TABLE_M.to_vec() } else { TABLE_M[..2].to_vec() };
        let base = Self {
            preset,
            ensemble: EnsembleSpec::gaussian(72, 4, 60, 0),
            m_values,
            k_values: (1..=5).collect(),
            strategies: vec![Strategy::Naive, Strategy::Bisection, Strategy::Hybrid],
            s: 2.0,
            sparse_model: preset == Preset::Table1,
            eps: 1.0,
            rip_trials: 1000,
            repeat: 1,
            verify: VerifyOptions::default(),
            fixed_point: FixedPointConfig {
                eta0: Some(0.1),
                ..FixedPointConfig::default()
            },
            out_dir: PathBuf::from("."),
        };
        match preset {
            Preset::RuntimeCompare => Self {
                ensemble: EnsembleSpec::gaussian(72, 3, 40, 0),
                m_values: vec![72],
                k_values: vec![],
                ..base
            },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return bad("m_values must be non-empty and positive");
        }
        if self.repeat == 0 {
            return bad("repeat must be at least 1");
        }
        if self.k_values.contains(&0) {
            return bad("k values must be positive");
        }
        if !(self.eps >= 0.0) {
            return bad("eps must be non-negative");
        }
        if self.preset == Preset::RuntimeCompare && (self.strategies.is_empty() || !(self.s >= 1.0)) {
            return bad("runtime comparison needs strategies and s >= 1");
        }
        BlockStructure::new(self.ensemble.n, self.ensemble.p)?;
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        (0..self.repeat as u64).map(|r| self.ensemble.seed.wrapping_add(r)).collect()
    }
}

fn serialize_number<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

/// One computed number of a run.
#[derive(Debug, Clone, Serialize)]
pub struct CellRecord {
    pub quantity: String,
    pub m: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub strategy: Option<Strategy>,
    #[serde(serialize_with = "serialize_number")]
    pub value: f64,
    /// `false` for dash cells and failures.
    pub certified: bool,
    pub failed: bool,
    pub seconds: f64,
    pub error: Option<String>,
    pub trace: Option<FixedPointTrace>,
}

impl CellRecord {
    fn new(quantity: &str, m: usize, seed: u64) -> Self {
        Self {
            quantity: quantity.into(),
            m,
            seed,
            k: None,
            strategy: None,
            value: f64::NAN,
            certified: false,
            failed: false,
            seconds: 0.0,
            error: None,
            trace: None,
        }
    }

    fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    fn set(mut self, value: f64, seconds: f64) -> Self {
        self.value = value;
        self.certified = true;
        self.seconds = seconds;
        self
    }

    fn fail(mut self, msg: impl fmt::Display, seconds: f64) -> Self {
        self.error = Some(msg.to_string());
        self.failed = true;
        self.seconds = seconds;
        self
    }

    fn dash(mut self, why: impl Into<String>) -> Self {
        self.error = Some(why.into());
        self
    }

    fn cell_text(&self) -> String {
        if self.certified {
            self.value.to_string()
        } else {
            "-".into()
        }
    }
}

/// A reproduced number next to its published counterpart.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceCheck {
    pub quantity: String,
    pub m: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub published: f64,
    /// Relative tolerance, or 0 for exact matches of integer quantities.
    pub tolerance: f64,
    pub observed: Option<f64>,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub preset: Preset,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub started_unix: u64,
    pub total_seconds: f64,
    pub csv_files: Vec<PathBuf>,
    pub provenance: PathBuf,
    pub cells: Vec<CellRecord>,
    pub checks: Vec<ReferenceCheck>,
}

impl ExperimentReport {
    /// Cells that failed outright (dash cells are not failures).
    pub fn failures(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| c.failed)
    }

    pub fn cell(&self, quantity: &str, m: usize, seed: u64, k: Option<usize>) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.quantity == quantity && c.m == m && c.seed == seed && c.k == k)
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// All cells for one draw of a table preset.
fn table_draw(config: &ExperimentConfig, m: usize, seed: u64) -> Vec<CellRecord> {
    let spec = EnsembleSpec { m, seed, ..config.ensemble };
    let (a, secs) = timed(|| generate(&spec));
    let a = match a {
        Ok(a) => a,
        Err(e) => return vec![CellRecord::new("matrix", m, seed).fail(e, secs)],
    };
    let n = spec.n;
    let mut cells = Vec::new();
    let (verified, secs) = timed(|| verify_s_star(&a, &config.verify));
    let s_star = match verified {
        Ok(r) => {
            cells.push(CellRecord::new("s_star", m, seed).set(r.s_star, secs));
            cells.push(CellRecord::new("k_star", m, seed).set(r.k_star as f64, 0.0));
            cells.push(CellRecord::new("nk_star", m, seed).set((n * r.k_star) as f64, 0.0));
            r.s_star
        }
        Err(e) => {
            cells.push(CellRecord::new("s_star", m, seed).fail(e, secs));
            f64::NAN
        }
    };

    if config.preset == Preset::Table1 {
        if config.sparse_model {
            let (sparse, secs) = timed(|| {
                BlockStructure::new(1, a.structure().dim())
                    .and_then(|st| SensingMatrix::new(st, a.matrix().clone()))
                    .and_then(|flat| verify_s_star(&flat, &config.verify))
            });
            match sparse {
                Ok(r) => {
                    cells.push(CellRecord::new("sparse_s_star", m, seed).set(r.s_star, secs));
                    cells.push(CellRecord::new("sparse_k_star", m, seed).set(r.k_star as f64, 0.0));
                }
                Err(e) => cells.push(CellRecord::new("sparse_s_star", m, seed).fail(e, secs)),
            }
        }
        return cells;
    }

    let per_k: Vec<Vec<CellRecord>> = config
        .k_values
        .par_iter()
        .map(|&k| k_cells(config, &a, s_star, m, seed, k))
        .collect();
    cells.extend(per_k.into_iter().flatten());
    cells
}

/// ω₂(A, 2k), δ̂_2k and the two ℓ2 bounds for one `k`.
fn k_cells(config: &ExperimentConfig, a: &SensingMatrix, s_star: f64, m: usize, seed: u64, k: usize) -> Vec<CellRecord> {
    let s = 2.0 * k as f64;
    let names = ["omega2", "delta", "l2_bound", "rip_bound"];
    if !(s < s_star) {
        let why = format!("2k = {s} is not below s_* = {s_star}");
        return names
            .iter()
            .map(|q| CellRecord::new(q, m, seed).with_k(k).dash(why.clone()))
            .collect();
    }
    let mut cells = Vec::new();
    let (omega, secs) = timed(|| {
        OmegaQuery::new(a.clone(), s, Target::Omega2, s_star).and_then(|q| omega_lower_bound(&q, &config.fixed_point))
    });
    let omega = match omega {
        Ok((w, trace)) => {
            let mut cell = CellRecord::new("omega2", m, seed).with_k(k).set(w, secs);
            cell.trace = Some(trace);
            cells.push(cell);
            Some(w)
        }
        Err(e) => {
            cells.push(CellRecord::new("omega2", m, seed).with_k(k).fail(e, secs));
            None
        }
    };
    let (delta, secs) = timed(|| block_rip_mc(a, k, config.rip_trials, seed));
    match delta {
        Ok(d) => {
            cells.push(CellRecord::new("delta", m, seed).with_k(k).set(d, secs));
            let cell = CellRecord::new("rip_bound", m, seed).with_k(k);
            cells.push(match rip_bound(d, config.eps) {
                RipBound::Valid(b) => cell.set(b, 0.0),
                RipBound::Invalid => cell.dash(format!("delta = {d} is not below sqrt(2) - 1")),
            });
        }
        Err(e) => {
            cells.push(CellRecord::new("delta", m, seed).with_k(k).fail(&e, secs));
            cells.push(CellRecord::new("rip_bound", m, seed).with_k(k).fail(e, 0.0));
        }
    }
    let l2 = CellRecord::new("l2_bound", m, seed).with_k(k);
    cells.push(match omega.map(|w| bound_l2(Program::Bsbp, w, config.eps, None, k)) {
        Some(Ok(b)) => l2.set(b, 0.0),
        Some(Err(e)) => l2.fail(e, 0.0),
        None => l2.fail("no omega lower bound", 0.0),
    });
    cells
}

/// Verification plus one timed fixed-point run per strategy, run one after
/// another so the timings do not compete for cores.
fn runtime_draw(config: &ExperimentConfig, m: usize, seed: u64) -> Vec<CellRecord> {
    let spec = EnsembleSpec { m, seed, ..config.ensemble };
    let (a, secs) = timed(|| generate(&spec));
    let a = match a {
        Ok(a) => a,
        Err(e) => return vec![CellRecord::new("matrix", m, seed).fail(e, secs)],
    };
    let (verified, secs) = timed(|| verify_s_star(&a, &config.verify));
    let s_star = match verified {
        Ok(r) => r.s_star,
        Err(e) => return vec![CellRecord::new("s_star", m, seed).fail(e, secs)],
    };
    let mut cells = vec![CellRecord::new("s_star", m, seed).set(s_star, secs)];
    let query = match OmegaQuery::new(a, config.s, Target::Omega2, s_star) {
        Ok(q) => q,
        Err(e) => {
            cells.push(CellRecord::new("eta_star", m, seed).fail(e, 0.0));
            return cells;
        }
    };
    for &strategy in &config.strategies {
        let fp = FixedPointConfig { strategy, ..config.fixed_point };
        let (run, secs) = timed(|| match strategy {
            Strategy::Naive => fp_naive(&query, &fp),
            Strategy::Bisection => fp_bisection(&query, &fp),
            Strategy::Hybrid => fp_hybrid(&query, &fp),
        });
        let mut cell = CellRecord::new("eta_star", m, seed);
        cell.strategy = Some(strategy);
        cells.push(match run {
            Ok(trace) => {
                let mut cell = cell.set(trace.eta_star, secs);
                cell.trace = Some(trace);
                cell
            }
            Err(e) => cell.fail(e, secs),
        });
    }
    cells
}

struct Published {
    quantity: &'static str,
    k: Option<usize>,
    values: [f64; 6],
    tolerance: f64,
}

/// Published values per preset, indexed like [`TABLE_M`].
fn published(preset: Preset) -> Vec<Published> {
    let p = |quantity, k, values, tolerance| Published { quantity, k, values, tolerance };
    match preset {
        Preset::Table1 => vec![
            p("s_star", None, [3.96, 4.87, 5.94, 7.14, 8.60, 11.02], 0.15),
            p("k_star", None, [1.0, 2.0, 2.0, 3.0, 4.0, 5.0], 0.0),
            p("sparse_s_star", None, [6.12, 7.55, 9.54, 11.96, 14.66, 18.41], 0.15),
        ],
        Preset::Table2 => vec![
            p("s_star", None, [3.88, 4.78, 5.89, 7.02, 8.30, 10.80], 0.15),
            p("omega2", Some(1), [0.45, 0.53, 0.57, 0.62, 0.65, 0.67], 0.20),
            p("delta", Some(1), [0.90, 0.79, 0.66, 0.58, 0.55, 0.51], 0.15),
        ],
        Preset::Table3 => vec![p("l2_bound", Some(1), [6.22, 13.01, 9.89, 6.50, 11.52, 9.50], 0.20)],
        Preset::RuntimeCompare | Preset::Custom => vec![],
    }
}

fn reference_checks(config: &ExperimentConfig, cells: &[CellRecord]) -> Vec<ReferenceCheck> {
    let e = &config.ensemble;
    if (e.kind, e.n, e.p, e.normalize) != (EnsembleKind::Gaussian, 4, 60, true) {
        return Vec::new();
    }
    let mut checks = Vec::new();
    for seed in config.seeds() {
        for entry in published(config.preset) {
            for (idx, &m) in TABLE_M.iter().enumerate() {
                if !config.m_values.contains(&m) {
                    continue;
                }
                let published = entry.values[idx];
                let observed = cells
                    .iter()
                    .find(|c| c.quantity == entry.quantity && c.m == m && c.seed == seed && c.k == entry.k)
                    .filter(|c| c.certified)
                    .map(|c| c.value);
                let within = observed.is_some_and(|v| (v - published).abs() <= entry.tolerance * published + 1e-12);
                checks.push(ReferenceCheck {
                    quantity: entry.quantity.into(),
                    m,
                    seed,
                    k: entry.k,
                    published,
                    tolerance: entry.tolerance,
                    observed,
                    within,
                });
            }
        }
    }
    checks
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn text(cells: &[CellRecord], quantity: &str, m: usize, seed: u64, k: Option<usize>) -> String {
    cells
        .iter()
        .find(|c| c.quantity == quantity && c.m == m && c.seed == seed && c.k == k)
        .map_or_else(|| "-".into(), CellRecord::cell_text)
}

fn write_csv(config: &ExperimentConfig, cells: &[CellRecord], seed: u64, path: &Path) -> Result<()> {
    let ms = &config.m_values;
    let by_m = |label: &str| -> Vec<String> {
        std::iter::once(label.to_string()).chain(ms.iter().map(|m| m.to_string())).collect()
    };
    match config.preset {
        Preset::Table1 => {
            let mut header: Vec<String> = ["m", "s_star", "k_star", "nk_star"].map(String::from).to_vec();
            let mut quantities = vec!["s_star", "k_star", "nk_star"];
            if config.sparse_model {
                header.extend(["sparse_s_star", "sparse_k_star"].map(String::from));
                quantities.extend(["sparse_s_star", "sparse_k_star"]);
            }
            let rows: Vec<Vec<String>> = ms
                .iter()
                .map(|&m| {
                    std::iter::once(m.to_string())
                        .chain(quantities.iter().map(|q| text(cells, q, m, seed, None)))
                        .collect()
                })
                .collect();
            write_table(path, &header, &rows)
        }
        Preset::Table2 => {
            let mut header = vec!["k".to_string()];
            header.extend(by_m("quantity"));
            let mut rows = Vec::new();
            for q in ["s_star", "k_star"] {
                let mut row = vec![String::new(), q.to_string()];
                row.extend(ms.iter().map(|&m| text(cells, q, m, seed, None)));
                rows.push(row);
            }
            for &k in &config.k_values {
                for q in ["omega2", "delta"] {
                    let mut row = vec![k.to_string(), q.to_string()];
                    row.extend(ms.iter().map(|&m| text(cells, q, m, seed, Some(k))));
                    rows.push(row);
                }
            }
            write_table(path, &header, &rows)
        }
        Preset::Table3 => {
            let header = by_m("k");
            let rows: Vec<Vec<String>> = config
                .k_values
                .iter()
                .map(|&k| {
                    std::iter::once(k.to_string())
                        .chain(ms.iter().map(|&m| text(cells, "l2_bound", m, seed, Some(k))))
                        .collect()
                })
                .collect();
            write_table(path, &header, &rows)
        }
        Preset::Custom => {
            let header: Vec<String> = ["m", "k", "s_star", "k_star", "omega2", "delta", "l2_bound", "rip_bound"]
                .map(String::from)
                .to_vec();
            let mut rows = Vec::new();
            for &m in ms {
                for &k in &config.k_values {
                    let mut row = vec![m.to_string(), k.to_string()];
                    row.push(text(cells, "s_star", m, seed, None));
                    row.push(text(cells, "k_star", m, seed, None));
                    for q in ["omega2", "delta", "l2_bound", "rip_bound"] {
                        row.push(text(cells, q, m, seed, Some(k)));
                    }
                    rows.push(row);
                }
            }
            write_table(path, &header, &rows)
        }
        Preset::RuntimeCompare => {
            let header: Vec<String> = ["m", "strategy", "eta_star", "omega_lb", "seconds", "inner_solves", "records", "converged"]
                .map(String::from)
                .to_vec();
            let rows: Vec<Vec<String>> = cells
                .iter()
                .filter(|c| c.seed == seed && c.quantity == "eta_star")
                .map(|c| {
                    let strategy = c.strategy.map_or_else(String::new, |s| s.to_string());
                    match &c.trace {
                        Some(t) => vec![
                            c.m.to_string(),
                            strategy,
                            t.eta_star.to_string(),
                            t.omega_lower_bound.to_string(),
                            c.seconds.to_string(),
                            t.inner_solves.to_string(),
                            t.records.len().to_string(),
                            t.converged.to_string(),
                        ],
                        None => vec![c.m.to_string(), strategy, "-".into(), "-".into(), c.seconds.to_string(), "-".into(), "-".into(), "false".into()],
                    }
                })
                .collect();
            write_table(path, &header, &rows)
        }
    }
}

/// Runs a preset, writing its CSV tables and `<preset>.json` provenance into
/// `config.out_dir`. Failing cells are recorded and the run carries on; only
/// configuration and file-system errors abort.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let start = Instant::now();
    let seeds = config.seeds();
    let draws: Vec<(usize, u64)> = seeds
        .iter()
        .flat_map(|&seed| config.m_values.iter().map(move |&m| (m, seed)))
        .collect();
    let cells: Vec<CellRecord> = if config.preset == Preset::RuntimeCompare {
        draws.iter().flat_map(|&(m, seed)| runtime_draw(config, m, seed)).collect()
    } else {
        let per_draw: Vec<Vec<CellRecord>> = draws
            .par_iter()
            .map(|&(m, seed)| table_draw(config, m, seed))
            .collect();
        per_draw.into_iter().flatten().collect()
    };

    let name = config.preset.name();
    let mut csv_files = Vec::new();
    for &seed in &seeds {
        let file = if seeds.len() == 1 {
            format!("{name}.csv")
        } else {
            format!("{name}_seed{seed}.csv")
        };
        let path = config.out_dir.join(file);
        write_csv(config, &cells, seed, &path)?;
        csv_files.push(path);
    }
    let checks = reference_checks(config, &cells);
    let report = ExperimentReport {
        tool: "blockcert",
        version: env!("CARGO_PKG_VERSION"),
        preset: config.preset,
        config: config.clone(),
        threads: rayon::current_num_threads(),
        started_unix,
        total_seconds: start.elapsed().as_secs_f64(),
        csv_files,
        provenance: config.out_dir.join(format!("{name}.json")),
        cells,
        checks,
    };
    std::fs::write(&report.provenance, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
