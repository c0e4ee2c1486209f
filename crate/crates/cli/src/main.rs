use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use blockcert::block::SensingMatrix;
use blockcert::bounds::{compare_report, Program, ReportConfig};
use blockcert::fixedpoint::{
    fp_bisection, fp_hybrid, fp_naive, FixedPointConfig, OmegaQuery, Strategy, Target,
};
use blockcert::harness::{generate, run_experiment, EnsembleKind, EnsembleSpec, ExperimentConfig, Preset};
use blockcert::inner::{verify_s_star, VerifyOptions};
use blockcert::io::{read_matrix, read_vector, write_matrix, write_vector};
use blockcert::oracles::{oracle_f_s, oracle_omega, oracle_rho, oracle_s_star, OracleConfig};
use blockcert::recovery::{solve, RecoveryOptions, RecoveryProblem, Variant};
use blockcert::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(name = "blockcert", version, about = "Certified performance bounds for block-sparse recovery")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every random draw
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Outer tolerance (fixed-point tolerance, oracle gap)
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Directory for output files
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Key-value JSON file with defaults for the global flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

/// Contents of `--config`. Command-line flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    tol: Option<f64>,
    out: Option<PathBuf>,
    inner_tol: Option<f64>,
    inner_max_iter: Option<usize>,
    eta_lo: Option<f64>,
    eta_hi: Option<f64>,
    rip_trials: Option<usize>,
}

struct Settings {
    seed: u64,
    tol: Option<f64>,
    out: Option<PathBuf>,
    file: FileConfig,
}

impl Settings {
    fn verify_options(&self, orthonormalize: bool) -> VerifyOptions {
        let mut v = VerifyOptions { orthonormalize, ..VerifyOptions::default() };
        if let Some(t) = self.file.inner_tol {
            v.inner.tol = t;
        }
        if let Some(it) = self.file.inner_max_iter {
            v.inner.max_iter = it;
        }
        v
    }

    fn fixed_point(&self) -> FixedPointConfig {
        let mut fp = FixedPointConfig::default();
        if let Some(t) = self.tol {
            fp.tol = t;
        }
        if let Some(t) = self.file.inner_tol {
            fp.inner.tol = t;
        }
        if let Some(it) = self.file.inner_max_iter {
            fp.inner.max_iter = it;
        }
        if let Some(lo) = self.file.eta_lo {
            fp.eta_lo = lo;
        }
        if let Some(hi) = self.file.eta_hi {
            fp.eta_hi = hi;
        }
        fp
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Prints `value` and, with `--out`, also saves it as `<out>/<name>.json`.
    fn emit<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(value)?;
        println!("{text}");
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{name}.json")), text + "\n")?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct MatrixArg {
    /// Matrix CSV; its block layout comes from the sidecar `.json`
    #[arg(long)]
    matrix: PathBuf,
    /// Block size, used when the sidecar descriptor is missing
    #[arg(long)]
    block_size: Option<usize>,
}

impl MatrixArg {
    fn load(&self) -> Result<SensingMatrix, Error> {
        read_matrix(&self.matrix, self.block_size)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Omega2,
    #[value(alias = "omega-binf")]
    Omegabinf,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Omega2 => Target::Omega2,
            TargetArg::Omegabinf => Target::OmegaBinf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Naive,
    #[value(alias = "bisection")]
    Bisect,
    Hybrid,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Naive => Strategy::Naive,
            StrategyArg::Bisect => Strategy::Bisection,
            StrategyArg::Hybrid => Strategy::Hybrid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Bsbp,
    Bsds,
    Bslasso,
    Noisefree,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Table1,
    Table2,
    Table3,
    #[value(alias = "runtime_compare")]
    RuntimeCompare,
    Custom,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Table1 => Preset::Table1,
            PresetArg::Table2 => Preset::Table2,
            PresetArg::Table3 => Preset::Table3,
            PresetArg::RuntimeCompare => Preset::RuntimeCompare,
            PresetArg::Custom => Preset::Custom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Gaussian,
    Bernoulli,
}

impl From<KindArg> for EnsembleKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Gaussian => EnsembleKind::Gaussian,
            KindArg::Bernoulli => EnsembleKind::Bernoulli,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleQuantity {
    Omega,
    SStar,
    Rho,
    FS,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the exact-recovery level s_* of a matrix
    Verify {
        #[command(flatten)]
        matrix: MatrixArg,
        /// Skip the row-orthonormalization step
        #[arg(long)]
        no_qr: bool,
    },
    /// Lower-bound a goodness measure by fixed-point iteration
    Omega {
        #[command(flatten)]
        matrix: MatrixArg,
        #[arg(long)]
        s: f64,
        #[arg(long, value_enum, default_value = "omega2")]
        target: TargetArg,
        #[arg(long, value_enum, default_value = "hybrid")]
        strategy: StrategyArg,
        #[arg(long)]
        eta_lo: Option<f64>,
        #[arg(long)]
        eta_hi: Option<f64>,
        /// Starting point of the naive iteration
        #[arg(long)]
        eta0: Option<f64>,
        /// Known s_* (skips verification)
        #[arg(long)]
        s_star: Option<f64>,
    },
    /// Error bounds for a recovery program at block sparsity k
    Bounds {
        #[command(flatten)]
        matrix: MatrixArg,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "bsbp")]
        variant: VariantArg,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 0.5)]
        kappa: f64,
        #[arg(long)]
        rip_trials: Option<usize>,
    },
    /// Solve a recovery program
    Recover {
        #[command(flatten)]
        matrix: MatrixArg,
        #[arg(long, value_enum)]
        variant: VariantArg,
        /// Measurement vector CSV
        #[arg(long)]
        y: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Where to write the estimate (default `<out>/xhat.csv`)
        #[arg(long)]
        xhat: Option<PathBuf>,
    },
    /// Regenerate a published table
    Report {
        #[arg(long, value_enum)]
        preset: PresetArg,
        /// Use every row count of the published tables
        #[arg(long)]
        full: bool,
        /// Independent draws per row count
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        /// Row counts, overriding the preset
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        /// Block sparsities, overriding the preset
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Block size (custom runs)
        #[arg(long)]
        n: Option<usize>,
        /// Number of blocks (custom runs)
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Skip the unstructured verification of TABLE1
        #[arg(long)]
        no_sparse: bool,
    },
    /// Draw a random sensing matrix
    Generate {
        #[arg(long, value_enum, default_value = "gaussian")]
        kind: KindArg,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        no_normalize: bool,
        /// Output CSV (default `<out>/A.csv`)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Brute-force reference values for tiny matrices
    Oracle {
        #[command(flatten)]
        matrix: MatrixArg,
        #[arg(long, value_enum)]
        quantity: OracleQuantity,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, value_enum, default_value = "omega2")]
        target: TargetArg,
        #[arg(long)]
        directions: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
    },
}

fn required(v: Option<f64>, flag: &str) -> Result<f64, Error> {
    v.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for this quantity")))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let file: FileConfig = match &cli.global.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => FileConfig::default(),
    };
    let threads = cli.global.threads.or(file.threads);
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let settings = Settings {
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
        tol: cli.global.tol.or(file.tol),
        out: cli.global.out.clone().or(file.out.clone()),
        file,
    };

    match cli.command {
        Command::Verify { matrix, no_qr } => {
            let a = matrix.load()?;
            let result = verify_s_star(&a, &settings.verify_options(!no_qr))?;
            settings.emit("verify", &result)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Omega { matrix, s, target, strategy, eta_lo, eta_hi, eta0, s_star } => {
            let a = matrix.load()?;
            let target = Target::from(target);
            let query = match s_star {
                Some(s_star) => OmegaQuery::new(a, s, target, s_star)?,
                None => OmegaQuery::verified(a, s, target, &settings.verify_options(true))?,
            };
            let mut fp = settings.fixed_point();
            fp.strategy = strategy.into();
            fp.eta_lo = eta_lo.unwrap_or(fp.eta_lo);
            fp.eta_hi = eta_hi.unwrap_or(fp.eta_hi);
            fp.eta0 = eta0.or(fp.eta0);
            let trace = match fp.strategy {
                Strategy::Naive => fp_naive(&query, &fp)?,
                Strategy::Bisection => fp_bisection(&query, &fp)?,
                Strategy::Hybrid => fp_hybrid(&query, &fp)?,
            };
            settings.emit("omega", &trace)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds { matrix, k, variant, eps, mu, kappa, rip_trials } => {
            let a = matrix.load()?;
            let program = match variant {
                VariantArg::Bsbp => Program::Bsbp,
                VariantArg::Bsds => Program::Bsds,
                VariantArg::Bslasso => Program::Bslasso,
                VariantArg::Noisefree => {
                    return Err(Error::InvalidArgument(
                        "noise-free recovery is exact below s_*; use `verify`".into(),
                    ))
                }
            };
            let config = ReportConfig {
                programs: vec![program],
                eps,
                mu,
                kappa,
                rip_trials: rip_trials.or(settings.file.rip_trials).unwrap_or(1000),
                seed: settings.seed,
                verify: settings.verify_options(true),
                fixed_point: settings.fixed_point(),
            };
            let mut rows = compare_report(&a, &[k], &config)?;
            let row = rows.pop().expect("one k and one program give one row");
            settings.emit("bounds", &row)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Recover { matrix, variant, y, eps, mu, xhat } => {
            let a = matrix.load()?;
            let y = read_vector(&y)?;
            let variant = match variant {
                VariantArg::Bsbp => Variant::Bsbp { eps },
                VariantArg::Bsds => Variant::Bsds { mu },
                VariantArg::Bslasso => Variant::Bslasso { mu },
                VariantArg::Noisefree => Variant::Noisefree,
            };
            let problem = RecoveryProblem { a: &a, y: &y, variant };
            // a non-converged solve still reports its best iterate
            let (result, code) = match solve(&problem, &RecoveryOptions::default()) {
                Ok(r) => (r, ExitCode::SUCCESS),
                Err(Error::RecoveryNotConverged { best, iterations, primal_residual, gap }) => {
                    eprintln!(
                        "warning: not converged after {iterations} iterations (primal residual {primal_residual:e}, gap {gap:e})"
                    );
                    (*best, ExitCode::from(2))
                }
                Err(e) => return Err(e),
            };
            let path = xhat.unwrap_or_else(|| settings.out_dir().join("xhat.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_vector(&path, result.xhat.values())?;
            settings.emit("recover", &result)?;
            Ok(code)
        }
        Command::Report { preset, full, repeat, m, k, n, p, kind, no_sparse } => {
            let preset = Preset::from(preset);
            let mut config = ExperimentConfig::preset(preset, full);
            config.repeat = repeat;
            config.ensemble.seed = settings.seed;
            config.out_dir = settings.out_dir();
            config.verify = settings.verify_options(true);
            let fp = settings.fixed_point();
            config.fixed_point = FixedPointConfig { eta0: config.fixed_point.eta0, ..fp };
            if let Some(m) = m {
                config.m_values = m;
            }
            if let Some(k) = k {
                config.k_values = k;
            }
            if let Some(n) = n {
                config.ensemble.n = n;
            }
            if let Some(p) = p {
                config.ensemble.p = p;
            }
            if let Some(kind) = kind {
                config.ensemble.kind = kind.into();
            }
            if let Some(t) = settings.file.rip_trials {
                config.rip_trials = t;
            }
            config.sparse_model &= !no_sparse;
            let report = run_experiment(&config)?;
            for f in &report.csv_files {
                eprintln!("wrote {}", f.display());
            }
            eprintln!("wrote {}", report.provenance.display());
            for c in report.failures() {
                eprintln!(
                    "cell {} (m = {}, k = {:?}) failed: {}",
                    c.quantity,
                    c.m,
                    c.k,
                    c.error.as_deref().unwrap_or("")
                );
            }
            for c in &report.checks {
                eprintln!(
                    "{:<14} m = {:<3} k = {:<4} published {:<6} observed {:<22} {}",
                    c.quantity,
                    c.m,
                    c.k.map_or("-".into(), |k| k.to_string()),
                    c.published,
                    c.observed.map_or("-".into(), |v| v.to_string()),
                    if c.within { "within" } else { "outside" }
                );
            }
            let summary = json!({
                "preset": report.preset,
                "csv_files": report.csv_files,
                "provenance": report.provenance,
                "failures": report.failures().count(),
                "total_seconds": report.total_seconds,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { kind, m, n, p, no_normalize, output } => {
            let spec = EnsembleSpec {
                kind: kind.into(),
                m,
                n,
                p,
                seed: settings.seed,
                normalize: !no_normalize,
            };
            let a = generate(&spec)?;
            let path = output.unwrap_or_else(|| settings.out_dir().join("A.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_matrix(&path, &a)?;
            println!("{}", serde_json::to_string_pretty(&json!({ "matrix": path, "spec": spec }))?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { matrix, quantity, s, eta, target, directions, restarts } => {
            let a = matrix.load()?;
            let mut cfg = OracleConfig { seed: settings.seed, ..OracleConfig::default() };
            if let Some(d) = directions {
                cfg.direction_samples = d;
            }
            if let Some(r) = restarts {
                cfg.restarts = r;
            }
            if let Some(t) = settings.tol {
                cfg.tol = t;
            }
            let target = Target::from(target);
            let (name, value) = match quantity {
                OracleQuantity::Omega => ("omega", oracle_omega(&a, required(s, "s")?, target, &cfg)?),
                OracleQuantity::SStar => ("s_star", oracle_s_star(&a, &cfg)?),
                OracleQuantity::Rho => ("rho", oracle_rho(&a, required(s, "s")?, &cfg)?),
                OracleQuantity::FS => (
                    "f_s",
                    oracle_f_s(&a, required(s, "s")?, required(eta, "eta")?, target, &cfg)?,
                ),
            };
            let value = if value.is_finite() { json!(value) } else { json!(value.to_string()) };
            settings.emit(
                "oracle",
                &json!({ "quantity": name, "value": value, "s": s, "eta": eta, "target": target, "config": cfg }),
            )?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
