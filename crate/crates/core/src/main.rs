use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracspec::diagnostics::{
    estimate_monitor, laplace_residual, monitor_growth, oracle_compare, predicted_exponent, random_draws, regularity_exponent,
    regularity_grid, CompareError, MonitorParams, MonitorStats,
};
use fracspec::elliptic_compat::compat_defect;
use fracspec::fd_oracle::{FdError, FdScheme};
use fracspec::mittag_leffler::{ml_eval, MlParams};
use fracspec::problem_model::{load_config, MonitorKind, ProblemError, RunConfig};
use fracspec::spectral_basis::{build_basis, BasisError, SpectralBasis};
use fracspec::weak_solver::{evaluate_solution, fmt_num, solve_orders, SolverError, TimeGrid};

/// Largest allowed growth of the monitor maximum when the mode count doubles.
const MONITOR_GROWTH: f64 = 1.2;

/// Base config used by `ml-eval` when no file is given.
const ML_DEFAULT: &str = "[problem]\nalpha = 0.5\nchi = 0\nT = 1\n";

#[derive(Parser, Debug)]
#[command(name = "fracspec", version, about = "Spectral solver, oracles and diagnostics for time-fractional diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config key: `--set section.key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (falls back to FRACSPEC_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Modal solution and reconstructed field.
    Solve(Common),
    /// Export the eigenbasis.
    Eigen(Common),
    /// Tabulate E_{alpha,beta}(z) from the [ml] section.
    MlEval(Common),
    /// Compatibility defects b_n (and e_n for alpha > 1).
    CheckCompat(Common),
    /// Small-time exponent of the m-th time derivative.
    Regularity(Common),
    /// Spectral solution against the L1 and Talbot oracles.
    OracleCompare(Common),
    /// Laplace-characterization residuals.
    LaplaceCheck(Common),
    /// Estimate-ratio monitors over random draws.
    Monitor(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Solve(c) => ("solve", c),
            Command::Eigen(c) => ("eigen", c),
            Command::MlEval(c) => ("ml-eval", c),
            Command::CheckCompat(c) => ("check-compat", c),
            Command::Regularity(c) => ("regularity", c),
            Command::OracleCompare(c) => ("oracle-compare", c),
            Command::LaplaceCheck(c) => ("laplace-check", c),
            Command::Monitor(c) => ("monitor", c),
        }
    }
}

/// Exit 1: bad input; exit 2: a numerical method or check failed.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl From<ProblemError> for Failure {
    fn from(e: ProblemError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<BasisError> for Failure {
    fn from(e: BasisError) -> Self {
        match e {
            BasisError::Eigen(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Basis(b) => b.into(),
            SolverError::Ml(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<FdError> for Failure {
    fn from(e: FdError) -> Self {
        match e {
            FdError::Talbot { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<CompareError> for Failure {
    fn from(e: CompareError) -> Self {
        match e {
            CompareError::Solver(e) => e.into(),
            CompareError::Oracle(e) => e.into(),
        }
    }
}

struct Run<'a> {
    name: &'static str,
    common: &'a Common,
    config: RunConfig,
    written: Vec<String>,
}

impl Run<'_> {
    fn write(&mut self, file: &str, text: &str) -> Result<(), Failure> {
        let path = self.common.out.join(file);
        std::fs::write(&path, text).map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(file.to_string());
        Ok(())
    }

    fn basis(&self, modes: usize, mesh: usize) -> Result<SpectralBasis, Failure> {
        let p = &self.config.problem;
        Ok(build_basis(&p.domain, &p.coeffs, p.chi, modes, mesh)?)
    }

    fn default_basis(&self) -> Result<SpectralBasis, Failure> {
        self.basis(self.config.settings.modes, self.config.settings.mesh)
    }

    fn manifest(&self, threads: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tool = fracspec {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "subcommand = {}", self.name);
        let config = self.common.config.as_deref().map(|p| p.display().to_string());
        let _ = writeln!(s, "config = {}", config.as_deref().unwrap_or("(none)"));
        let _ = writeln!(s, "out = {}", self.common.out.display());
        let _ = writeln!(s, "overrides = {}", self.common.set.join("; "));
        let _ = writeln!(s, "seed = {}", self.config.settings.seed);
        let _ = writeln!(s, "threads = {threads}");
        let _ = writeln!(s, "outputs = {}", self.written.join(", "));
        s
    }
}

fn read_config(name: &str, common: &Common) -> Result<RunConfig, Failure> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))?,
        None if name == "ml-eval" => ML_DEFAULT.to_string(),
        None => return Err(Failure::Invalid(format!("{name} needs --config"))),
    };
    Ok(load_config(&text, &common.set)?)
}

fn thread_count(common: &Common) -> Result<usize, Failure> {
    if let Some(n) = common.threads {
        return Ok(n);
    }
    match std::env::var("FRACSPEC_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Invalid(format!("FRACSPEC_THREADS must be a non-negative integer, found '{v}'"))),
        Err(_) => Ok(0),
    }
}

fn solve(run: &mut Run) -> Result<(), Failure> {
    let basis = run.default_basis()?;
    let (p, s) = (&run.config.problem, &run.config.settings);
    let grid = TimeGrid::new(p.horizon, s.steps)?;
    let series = solve_orders(p, &basis, &grid, &[0], false)?.remove(0);
    let field = evaluate_solution(&series, &basis, Some(p), s.reconstruction)?;
    println!("solved {} modes on {}; tail indicator {:e}", basis.len(), grid.describe(), field.tail_fraction);
    let (modes, field) = (series.to_csv(), field.to_csv());
    run.write("modes.csv", &modes)?;
    run.write("field.csv", &field)
}

fn eigen(run: &mut Run) -> Result<(), Failure> {
    let basis = run.default_basis()?;
    let mut csv = String::from("n,lambda");
    for c in 0..basis.components() {
        let _ = write!(csv, ",trace_{c}");
    }
    csv.push('\n');
    for (i, lam) in basis.eigenvalues.iter().enumerate() {
        let _ = write!(csv, "{},{}", i + 1, fmt_num(*lam));
        for t in &basis.traces[i] {
            let _ = write!(csv, ",{}", fmt_num(*t));
        }
        csv.push('\n');
    }
    println!("{} eigenpairs, lambda_1 = {:e}, lambda_N = {:e}", basis.len(), basis.eigenvalues[0], basis.eigenvalues[basis.len() - 1]);
    run.write("eigenvalues.csv", &csv)?;
    run.write("basis.txt", &basis.export())
}

fn ml(run: &mut Run) -> Result<(), Failure> {
    let s = &run.config.settings;
    let params = MlParams::new(s.ml_alpha, s.ml_beta);
    let mut csv = String::from("alpha,beta,z,value\n");
    for &z in &s.ml_z {
        let v = ml_eval(params, z).map_err(|e| Failure::Invalid(e.to_string()))?;
        println!("E_{{{},{}}}({z}) = {v:e}", s.ml_alpha, s.ml_beta);
        let _ = writeln!(csv, "{},{},{},{}", fmt_num(s.ml_alpha), fmt_num(s.ml_beta), fmt_num(z), fmt_num(v));
    }
    run.write("ml.csv", &csv)
}

fn check_compat(run: &mut Run) -> Result<(), Failure> {
    let basis = run.default_basis()?;
    let report = compat_defect(&run.config.problem, &basis, run.config.settings.compat_tol)?;
    print!("{}", report.render());
    run.write("compat.csv", &report.to_csv())
}

fn regularity(run: &mut Run) -> Result<(), Failure> {
    let basis = run.default_basis()?;
    let (p, s) = (&run.config.problem, &run.config.settings);
    let m = s.regularity_order;
    let grid = regularity_grid(p.horizon, s.steps)?;
    let series = solve_orders(p, &basis, &grid, &[m], false)?.remove(0);
    let predicted = predicted_exponent(p, &basis, m, s.compat_tol)?;
    let report = regularity_exponent(&series, p.horizon, predicted)?;
    print!("{}", report.render());
    let csv = report.to_csv();
    run.write("regularity.csv", &csv)?;
    run.write("derivative_modes.csv", &series.to_csv())
}

fn compare(run: &mut Run) -> Result<(), Failure> {
    let basis = run.default_basis()?;
    let s = &run.config.settings;
    let scheme = FdScheme {
        cells: s.oracle_mesh,
        steps: s.oracle_steps,
        talbot_nodes: s.talbot_nodes,
    };
    let result = oracle_compare(&run.config.problem, &basis, &scheme)?;
    print!("{}", result.render());
    run.write("oracle.csv", &result.to_csv())?;
    if result.passes() {
        Ok(())
    } else {
        Err(Failure::Numerical("oracle comparison outside tolerance".into()))
    }
}

fn laplace(run: &mut Run) -> Result<(), Failure> {
    let basis = run.default_basis()?;
    let report = laplace_residual(&run.config.problem, &basis, &run.config.settings.laplace_p)?;
    print!("{}", report.render());
    run.write("laplace.csv", &report.to_csv())?;
    if report.passes() {
        Ok(())
    } else {
        Err(Failure::Numerical("Laplace residual outside tolerance".into()))
    }
}

fn monitor(run: &mut Run) -> Result<(), Failure> {
    let s = run.config.settings.clone();
    let draws = random_draws(&run.config.problem, s.draws, s.seed, s.monitor_kind);
    let params = MonitorParams {
        kind: s.monitor_kind,
        theta: s.theta,
        r: s.r,
        epsilon: s.epsilon,
        steps: s.steps,
    };
    // the same mesh for both truncations isolates the effect of N
    let mesh = s.mesh.max(20 * s.modes);
    let coarse = estimate_monitor(&draws, &run.basis(s.modes, mesh)?, &params)?;
    let fine = estimate_monitor(&draws, &run.basis(2 * s.modes, mesh)?, &params)?;
    let (growth, pass) = monitor_growth(&coarse, &fine, MONITOR_GROWTH);
    let kind = match s.monitor_kind {
        MonitorKind::T1a => "t1a",
        MonitorKind::C1a => "c1a",
    };
    let line = |st: &MonitorStats| format!("N={}: max ratio {:.6e}, median {:.6e} over {} draws", st.modes, st.max, st.median, st.used);
    println!("{kind} monitor (theta={}, r={}, epsilon={})", s.theta, s.r, s.epsilon);
    println!("{}", line(&coarse));
    println!("{}", line(&fine));
    println!("growth {growth:.4} (limit {MONITOR_GROWTH}) -> {}", if pass { "PASS" } else { "FAIL" });
    let mut csv = coarse.to_csv();
    csv.push_str(fine.to_csv().split_once('\n').map(|x| x.1).unwrap_or(""));
    run.write("monitor.csv", &csv)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("monitor maximum grew by {growth:.4} when N doubled")))
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let (name, common) = cli.command.parts();
    let threads = thread_count(common)?;
    if threads > 0 {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let config = read_config(name, common)?;
    std::fs::create_dir_all(&common.out).map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", common.out.display())))?;
    let mut run = Run {
        name,
        common,
        config,
        written: Vec::new(),
    };
    let result = match cli.command {
        Command::Solve(_) => solve(&mut run),
        Command::Eigen(_) => eigen(&mut run),
        Command::MlEval(_) => ml(&mut run),
        Command::CheckCompat(_) => check_compat(&mut run),
        Command::Regularity(_) => regularity(&mut run),
        Command::OracleCompare(_) => compare(&mut run),
        Command::LaplaceCheck(_) => laplace(&mut run),
        Command::Monitor(_) => monitor(&mut run),
    };
    // the manifest is written even when a check fails
    let manifest = run.manifest(threads.max(rayon::current_num_threads()));
    let path: &Path = &common.out;
    std::fs::write(path.join("manifest.txt"), manifest).map_err(|e| Failure::Invalid(format!("cannot write manifest: {e}")))?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) => eprintln!("error: {m}"),
                Failure::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
