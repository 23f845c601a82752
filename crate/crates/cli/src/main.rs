//! `dcqp` command-line front end: solve, bench, gen and convert.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcqp::driver::{dcqp, DriverSettings, SolveStatus, SolverReport};
use dcqp::instance::{
    generate_synthetic, load_instance, reduce, write_canonical, Distribution, Format, InstanceError, SyntheticSpec,
};
use dcqp::report::{curve_csv, failure_row, results_csv, results_row, solved_curve, trace_csv, write_atomic};
use rayon::prelude::*;

const EXIT_PARSE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "dcqp", version, about = "Global solver for nonconvex quadratic programs over polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write its results and trace CSVs.
    Solve {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Canonical)]
        format: InputFormat,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Solve every `.qpinst` file in a directory.
    Bench {
        dir: PathBuf,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Write seeded synthetic instances in the canonical format.
    Gen(GenArgs),
    /// Convert a dense-text instance to the canonical format.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Dense)]
        from: InputFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Canonical,
    Dense,
}

impl From<InputFormat> for Format {
    fn from(f: InputFormat) -> Format {
        match f {
            InputFormat::Canonical => Format::Canonical,
            InputFormat::Dense => Format::DenseText,
        }
    }
}

#[derive(Args, Clone)]
struct RunConfig {
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 9e-5)]
    eta: f64,
    #[arg(long, default_value_t = 1e-7)]
    conic_tol: f64,
    /// Seconds per instance.
    #[arg(long, default_value_t = 3600.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 200)]
    max_cuts: usize,
    /// Harness threads; `DCQP_THREADS` takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Write `-` instead of wall-clock times so reruns produce identical files.
    #[arg(long)]
    mask_timing: bool,
}

impl RunConfig {
    fn settings(&self) -> Result<DriverSettings, String> {
        if !(self.eta > 0.0 && self.eta <= self.eps) {
            return Err(format!("need 0 < eta <= eps, got eta={} eps={}", self.eta, self.eps));
        }
        if self.conic_tol.is_nan() || self.conic_tol <= 0.0 {
            return Err("--conic-tol must be positive".into());
        }
        if !(self.time_limit >= 0.0 && self.time_limit.is_finite()) {
            return Err("--time-limit must be a finite nonnegative number".into());
        }
        let mut s = DriverSettings {
            eps: self.eps,
            eta: self.eta,
            time_limit: Duration::from_secs_f64(self.time_limit),
            max_cuts: self.max_cuts,
            ..DriverSettings::default()
        };
        s.bound.conic.tol = self.conic_tol;
        Ok(s)
    }

    fn threads(&self) -> Result<Option<usize>, String> {
        match std::env::var("DCQP_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| format!("DCQP_THREADS must be a positive integer, got `{v}`")),
            Err(_) => Ok(self.threads),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = DistArg::U)]
    dist: DistArg,
    #[arg(long, default_value_t = 0)]
    meq: usize,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    m_ineq: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    U,
    N,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { path, format, run } => cmd_solve(&path, format.into(), &run),
        Command::Bench { dir, run } => cmd_bench(&dir, &run),
        Command::Gen(args) => cmd_gen(&args),
        Command::Convert { input, output, from } => cmd_convert(&input, &output, from.into()),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load_reduced(path: &Path, format: Format) -> Result<dcqp::instance::ReducedInstance, (&'static str, InstanceError)> {
    let inst = load_instance(path, format).map_err(|e| ("parse_error", e))?;
    reduce(&inst).map_err(|e| ("invalid_region", e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_solve(path: &Path, format: Format, run: &RunConfig) -> ExitCode {
    let settings = match run.settings() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let inst = match load_reduced(path, format) {
        Ok(i) => i,
        Err((_, e)) => return fail(EXIT_PARSE, format!("{}: {e}", path.display())),
    };
    let report = dcqp(&inst, &settings);
    let row = results_row(&report, run.mask_timing);
    println!("{row}");
    if let Err(e) = write_reports(run, &report, &row) {
        return fail(EXIT_SOLVER, format!("writing reports: {e}"));
    }
    if report.status == SolveStatus::Solved {
        ExitCode::SUCCESS
    } else {
        eprintln!("status {}", report.status);
        ExitCode::from(EXIT_SOLVER)
    }
}

fn write_reports(run: &RunConfig, report: &SolverReport, row: &str) -> std::io::Result<()> {
    fs::create_dir_all(&run.out)?;
    write_atomic(&run.out.join(format!("{}.results.csv", report.name)), &results_csv([row]))?;
    write_atomic(
        &run.out.join(format!("{}.trace.csv", report.name)),
        &trace_csv(&report.trace, run.mask_timing),
    )
}

struct BenchRun {
    row: String,
    trace: Option<(String, String)>,
    elapsed: f64,
    solved: bool,
}

fn bench_one(path: &Path, settings: &DriverSettings, mask: bool) -> BenchRun {
    match load_reduced(path, Format::Canonical) {
        Ok(inst) => {
            let r = dcqp(&inst, settings);
            BenchRun {
                row: results_row(&r, mask),
                trace: Some((r.name.clone(), trace_csv(&r.trace, mask))),
                elapsed: r.elapsed.as_secs_f64(),
                solved: r.status == SolveStatus::Solved,
            }
        }
        Err((status, e)) => {
            eprintln!("warning: {}: {e}", path.display());
            BenchRun {
                row: failure_row(&stem(path), status),
                trace: None,
                elapsed: 0.0,
                solved: false,
            }
        }
    }
}

fn cmd_bench(dir: &Path, run: &RunConfig) -> ExitCode {
    let settings = match run.settings() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let threads = match run.threads() {
        Ok(t) => t,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(it) => it
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "qpinst"))
            .collect(),
        Err(e) => return fail(EXIT_PARSE, format!("{}: {e}", dir.display())),
    };
    files.sort_by_key(|p| stem(p));
    if files.is_empty() {
        eprintln!("warning: no .qpinst files in {}", dir.display());
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_SOLVER, e),
    };
    // Collecting an indexed parallel iterator keeps the file order.
    let runs: Vec<BenchRun> =
        pool.install(|| files.par_iter().map(|p| bench_one(p, &settings, run.mask_timing)).collect());

    let written = (|| -> std::io::Result<()> {
        let traces = run.out.join("traces");
        fs::create_dir_all(&traces)?;
        for (name, csv) in runs.iter().filter_map(|r| r.trace.as_ref()) {
            write_atomic(&traces.join(format!("{name}.csv")), csv)?;
        }
        let summary = results_csv(runs.iter().map(|r| r.row.as_str()));
        write_atomic(&run.out.join("results.csv"), &summary)?;
        let times: Vec<(f64, bool)> = runs.iter().map(|r| (r.elapsed, r.solved)).collect();
        write_atomic(&run.out.join("curve.csv"), &curve_csv(&solved_curve(&times), run.mask_timing))
    })();
    if let Err(e) = written {
        return fail(EXIT_SOLVER, format!("writing reports: {e}"));
    }
    let solved = runs.iter().filter(|r| r.solved).count();
    println!("{solved}/{} solved", runs.len());
    ExitCode::SUCCESS
}

/// `1.0` prints as `1`, `0.25` as `0.25`.
fn density_label(d: f64) -> String {
    format!("{d}")
}

fn cmd_gen(args: &GenArgs) -> ExitCode {
    if !(args.density > 0.0 && args.density <= 1.0) {
        return fail(EXIT_PARSE, "--density must lie in (0, 1]");
    }
    if args.n == 0 || args.m_ineq == 0 {
        return fail(EXIT_PARSE, "--n and --m-ineq must be positive");
    }
    let dist = match args.dist {
        DistArg::U => Distribution::Uniform,
        DistArg::N => Distribution::Normal,
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        return fail(EXIT_SOLVER, e);
    }
    for index in 1..=args.count {
        let spec = SyntheticSpec {
            n: args.n,
            m_ineq: args.m_ineq,
            m_eq: args.meq,
            distribution: dist,
            density: args.density,
            seed: args.seed + index as u64,
        };
        let name = format!("qp_{}_{}_{}_{index}", dist.tag(), args.meq, density_label(args.density));
        let mut inst = generate_synthetic(&spec);
        inst.name = name.clone();
        if let Err(e) = write_atomic(&args.out.join(format!("{name}.qpinst")), &write_canonical(&inst)) {
            return fail(EXIT_SOLVER, e);
        }
    }
    ExitCode::SUCCESS
}

fn cmd_convert(input: &Path, output: &Path, from: Format) -> ExitCode {
    let inst = match load_instance(input, from) {
        Ok(i) => i,
        Err(e) => return fail(EXIT_PARSE, format!("{}: {e}", input.display())),
    };
    match write_atomic(output, &write_canonical(&inst)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_SOLVER, e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_labels() {
        assert_eq!(density_label(1.0), "1");
        assert_eq!(density_label(0.1), "0.1");
    }

    #[test]
    fn eta_above_eps_rejected() {
        let cli = Cli::try_parse_from(["dcqp", "solve", "x", "--eps", "1e-4", "--eta", "2e-4"]).unwrap();
        let Command::Solve { run, .. } = cli.command else { panic!() };
        assert!(run.settings().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
