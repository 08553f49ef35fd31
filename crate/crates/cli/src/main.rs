//! Command line front end. Exit codes: 0 success, 1 solver failure or
//! internal error, 2 verification failure, 3 usage error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use birkhoff::birkhoff::{build_birkhoff, condition_report, identity_residuals};
use birkhoff::error::Error;
use birkhoff::grids::{make_grid, GridSpec};
use birkhoff::problems::{self, CheckResult, Preset};
use birkhoff::solution::SolutionFile;
use birkhoff::solver::{solve_ladder, Status};
use birkhoff::vnv::{
    feasibility_certificate, pontryagin_report, CertificateOptions, OptimalityOptions,
};

#[derive(Parser)]
#[command(name = "birkhoff", version, about = "Birkhoff pseudospectral trajectory optimization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the nodes and quadrature weights of a grid.
    Grid(GridArgs),
    /// Print the Birkhoff matrices and their identity residuals.
    Birkhoff(BirkhoffArgs),
    /// Print condition numbers of the linear transcription blocks.
    Cond(CondArgs),
    /// Solve a benchmark problem and report its checks.
    Solve(SolveArgs),
    /// Verify a solution file by independent propagation.
    Verify(VerifyArgs),
    /// Solve a list of benchmark problems and tabulate the outcomes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
struct GridArgs {
    /// Grid code: lgl, lgr, lg, cgl, cgr, or cg.
    #[arg(long)]
    grid: String,
    /// Polynomial order N (N + 1 nodes).
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct BirkhoffArgs {
    #[arg(long)]
    grid: String,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct CondArgs {
    #[arg(long)]
    grid: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct SolveArgs {
    /// Benchmark name, see `bench --list`.
    #[arg(long)]
    problem: String,
    /// Override the preset grid code.
    #[arg(long)]
    grid: Option<String>,
    /// Override the preset grid order.
    #[arg(long)]
    n: Option<usize>,
    /// Override the warm-start ladder, comma separated orders.
    #[arg(long)]
    ladder: Option<String>,
    /// Override the objective scaling.
    #[arg(long)]
    cost_scale: Option<f64>,
    #[arg(long)]
    tol_feas: Option<f64>,
    #[arg(long)]
    tol_opt: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    /// Skip multiplier extraction; the file then carries no duals.
    #[arg(long)]
    no_duals: bool,
    /// Write the solution file here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Parser)]
struct VerifyArgs {
    /// Solution file to verify.
    file: PathBuf,
    /// Benchmark the file claims to solve; defaults to the name it carries.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    tol_bc: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol_path: f64,
    /// Largest allowed gap between the stored states and the propagation.
    #[arg(long, default_value_t = 1e-2)]
    tol_state: f64,
    /// Relative tolerance of the first-order optimality checks.
    #[arg(long, default_value_t = 1e-2)]
    tol_pmp: f64,
    #[arg(long, default_value_t = 10)]
    samples_per_node: usize,
    /// Check feasibility only.
    #[arg(long)]
    skip_optimality: bool,
}

#[derive(Parser)]
struct BenchArgs {
    /// Comma separated benchmark names; the slow orbit raising is opt-in.
    #[arg(long, default_value = "lq,ml1,breakwell")]
    problems: String,
    /// List the available benchmarks and exit.
    #[arg(long)]
    list: bool,
    /// Write each solution to <name>.json inside this directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 3, msg: msg.into() }
    }
    fn solver(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
    fn verification(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Grid(args) => cmd_grid(args),
        Cmd::Birkhoff(args) => cmd_birkhoff(args),
        Cmd::Cond(args) => cmd_cond(args),
        Cmd::Solve(args) => cmd_solve(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Bench(args) => cmd_bench(args),
    }
}

fn parse_spec(code: &str, n: usize) -> Result<GridSpec, Failure> {
    GridSpec::from_code(code, n).map_err(|e| Failure::usage(e.to_string()))
}

fn emit(out: &Option<PathBuf>, text: String) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_grid(args: GridArgs) -> Result<(), Failure> {
    let spec = parse_spec(&args.grid, args.n)?;
    let grid = make_grid(spec).map_err(|e| Failure::usage(e.to_string()))?;
    let text = match args.format {
        Format::Csv => {
            let mut s = String::from("index,node,weight\n");
            for (i, (t, w)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
                let _ = writeln!(s, "{i},{},{}", num(*t), num(*w));
            }
            s
        }
        Format::Json => {
            let v = serde_json::json!({
                "code": spec.code(),
                "order": spec.order,
                "nodes": grid.nodes,
                "weights": grid.weights,
            });
            format!("{:#}\n", v)
        }
    };
    emit(&args.out, text)
}

fn cmd_birkhoff(args: BirkhoffArgs) -> Result<(), Failure> {
    let spec = parse_spec(&args.grid, args.n)?;
    let grid = make_grid(spec).map_err(|e| Failure::usage(e.to_string()))?;
    let sys = build_birkhoff(&grid).map_err(|e| Failure::solver(e.to_string()))?;
    let res = identity_residuals(&sys);
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    let text = match args.format {
        Format::Json => {
            let v = serde_json::json!({
                "code": spec.code(),
                "order": spec.order,
                "nodes": grid.nodes,
                "wb": sys.wb.as_slice(),
                "ba": rows(&sys.ba),
                "bb": rows(&sys.bb),
                "residuals": {
                    "prop3": res.prop3,
                    "weights_match": res.weights_match,
                    "exchange": res.exchange,
                    "last_row": res.last_row,
                    "row0": res.row0,
                    "worst": res.worst(),
                },
            });
            format!("{:#}\n", v)
        }
        Format::Csv => {
            let mut s = String::from("matrix,row,col,value\n");
            for (i, t) in grid.nodes.iter().enumerate() {
                let _ = writeln!(s, "nodes,{i},0,{}", num(*t));
            }
            for (i, w) in sys.wb.iter().enumerate() {
                let _ = writeln!(s, "wb,{i},0,{}", num(*w));
            }
            for (name, m) in [("ba", &sys.ba), ("bb", &sys.bb)] {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let _ = writeln!(s, "{name},{i},{j},{}", num(m[(i, j)]));
                    }
                }
            }
            s
        }
    };
    emit(&args.out, text)
}

fn cmd_cond(args: CondArgs) -> Result<(), Failure> {
    let spec = parse_spec(&args.grid, args.n)?;
    let grid = make_grid(spec).map_err(|e| Failure::usage(e.to_string()))?;
    let report = condition_report(&grid).map_err(|e| Failure::solver(e.to_string()))?;
    let v = serde_json::json!({
        "code": spec.code(),
        "order": report.order,
        "cond_full": report.cond_full,
        "cond_block": report.cond_block,
    });
    emit(&args.out, format!("{:#}\n", v))
}

fn parse_ladder(text: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Failure::usage(format!("bad ladder entry `{s}`")))
        })
        .collect()
}

fn format_check(c: &CheckResult) -> String {
    format!(
        "check {}: {} ({})",
        c.name,
        if c.passed { "pass" } else { "FAIL" },
        c.detail
    )
}

/// Solve one preset, honoring the CLI overrides. Returns the solution and
/// the text block describing the run.
fn solve_preset(
    preset: &Preset,
    spec: GridSpec,
    ladder: &[usize],
    cost_scale: Option<f64>,
    opts: &birkhoff::solver::SolverOptions,
    with_duals: bool,
) -> Result<(SolutionFile, Vec<CheckResult>, String), Failure> {
    let make = || {
        let mut ocp = (preset.make)();
        if let Some(s) = cost_scale {
            ocp.cost_scale = s;
        }
        ocp
    };
    let started = Instant::now();
    let (nlp, report) = solve_ladder(make, spec, ladder, opts)
        .map_err(|e| Failure::solver(e.to_string()))?;
    let elapsed = started.elapsed();
    let sol = if with_duals {
        SolutionFile::from_report_with_duals(&nlp, &report)
    } else {
        SolutionFile::from_report(&nlp, &report, None)
    };
    let checks = (preset.checks)(&sol);

    let mut text = String::new();
    let _ = writeln!(
        text,
        "problem {} on {} N={}",
        preset.name,
        spec.code(),
        spec.order
    );
    let _ = writeln!(text, "status {}", report.status);
    let _ = writeln!(text, "objective {}", num(sol.objective));
    if let Some(kkt) = &sol.kkt {
        let _ = writeln!(
            text,
            "kkt stationarity {:.3e} feasibility {:.3e} complementarity {:.3e}",
            kkt.stationarity, kkt.feasibility, kkt.complementarity
        );
    }
    let _ = writeln!(
        text,
        "outer {} inner {} ({} ms)",
        report.outer_iters,
        report.inner_iters,
        elapsed.as_millis()
    );
    for c in &checks {
        let _ = writeln!(text, "{}", format_check(c));
    }
    if !matches!(report.status, Status::Optimal | Status::Feasible) {
        return Err(Failure::solver(format!(
            "solver stopped with status {}:\n{text}",
            report.status
        )));
    }
    Ok((sol, checks, text))
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let preset = problems::preset(&args.problem).map_err(|e| Failure::usage(e.to_string()))?;
    let spec = match (&args.grid, args.n) {
        (Some(code), n) => parse_spec(code, n.unwrap_or(preset.grid.order))?,
        (None, Some(n)) => parse_spec(preset.grid.code(), n)?,
        (None, None) => preset.grid,
    };
    let ladder = match &args.ladder {
        Some(text) => parse_ladder(text)?,
        None => preset.ladder.clone(),
    };
    let mut opts = preset.options.clone();
    if let Some(t) = args.tol_feas {
        opts.feas_tol = t;
    }
    if let Some(t) = args.tol_opt {
        opts.opt_tol = t;
    }
    if let Some(m) = args.max_outer {
        opts.max_outer = m;
    }
    if let Some(m) = args.max_inner {
        opts.max_inner = m;
    }
    opts.verbose = args.verbose;

    let (sol, _, text) = solve_preset(
        &preset,
        spec,
        &ladder,
        args.cost_scale,
        &opts,
        !args.no_duals,
    )?;
    print!("{text}");
    if let Some(path) = &args.out {
        sol.save(path).map_err(|e| Failure::solver(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let sol = SolutionFile::load(&args.file).map_err(|e| match e {
        Error::Io(io) => Failure::from(io),
        other => Failure::verification(format!("malformed solution file: {other}")),
    })?;
    let name = args.problem.as_deref().unwrap_or(&sol.problem);
    let preset = problems::preset(name).map_err(|e| Failure::usage(e.to_string()))?;
    let ocp = (preset.make)();

    println!(
        "solution {}: {} samples on [{}, {}], status {}",
        sol.problem,
        sol.t.len(),
        sol.ta,
        sol.tf,
        sol.status
    );

    let mut all_ok = true;
    let cert_opts = CertificateOptions {
        tol_bc: args.tol_bc,
        tol_path: args.tol_path,
        samples_per_node: args.samples_per_node,
        ..CertificateOptions::default()
    };
    let cert = feasibility_certificate(&ocp, &sol, &cert_opts)
        .map_err(|e| Failure::verification(format!("propagation failed: {e}")))?;
    all_ok &= cert.passed;
    println!(
        "certificate: {} (events {:.2e}, path {:.2e}, state defect {:.2e}, terminal defect {:.2e})",
        if cert.passed { "pass" } else { "FAIL" },
        cert.event_violation,
        cert.path_violation,
        cert.state_defect,
        cert.terminal_defect
    );
    // The certificate judges the control; the stored samples must also agree
    // with what that control actually produces, or the file lies about its
    // own trajectory.
    let consistent =
        cert.state_defect <= args.tol_state && cert.terminal_defect <= args.tol_state;
    all_ok &= consistent;
    println!(
        "stored states: {} (defect {:.2e} within {:.0e})",
        if consistent { "pass" } else { "FAIL" },
        cert.state_defect.max(cert.terminal_defect),
        args.tol_state
    );

    if args.skip_optimality {
        println!("optimality: skipped");
    } else if !sol.has_duals() {
        println!("optimality: skipped (no multiplier samples)");
    } else {
        let pmp_opts = OptimalityOptions {
            tol: args.tol_pmp,
            ..OptimalityOptions::default()
        };
        let report = pontryagin_report(&ocp, &sol, &pmp_opts)
            .map_err(|e| Failure::verification(e.to_string()))?;
        for c in &report {
            all_ok &= c.passed;
            println!("optimality {}", format_check(c));
        }
    }

    for c in (preset.checks)(&sol) {
        all_ok &= c.passed;
        println!("{}", format_check(&c));
    }

    if all_ok {
        println!("verification passed");
        Ok(())
    } else {
        Err(Failure::verification("verification failed"))
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let all = problems::presets();
    if args.list {
        for p in &all {
            println!("{}: {} (grid {} N={})", p.name, p.summary, p.grid.code(), p.grid.order);
        }
        return Ok(());
    }
    let mut selected = Vec::new();
    for name in args.problems.split(',').filter(|s| !s.trim().is_empty()) {
        let p = problems::preset(name.trim()).map_err(|e| Failure::usage(e.to_string()))?;
        selected.push(p);
    }
    if selected.is_empty() {
        return Err(Failure::usage("no benchmarks selected"));
    }
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
    }

    // One worker per benchmark, capped by BIRKHOFF_THREADS; results keep
    // the requested order regardless of completion order.
    let cap = std::env::var("BIRKHOFF_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(selected.len());

    struct Row {
        name: &'static str,
        outcome: Result<(SolutionFile, Vec<CheckResult>, String), Failure>,
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let rows = std::sync::Mutex::new(Vec::<(usize, Row)>::new());
    std::thread::scope(|scope| {
        for _ in 0..cap {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= selected.len() {
                    break;
                }
                let p = &selected[idx];
                let outcome = solve_preset(p, p.grid, &p.ladder, None, &p.options, true);
                let row = Row { name: p.name, outcome };
                rows.lock().expect("bench worker panicked").push((idx, row));
            });
        }
    });
    let mut rows = rows.into_inner().expect("bench worker panicked");
    rows.sort_by_key(|(idx, _)| *idx);

    let mut failures = 0usize;
    let mut check_failures = 0usize;
    for (_, row) in &rows {
        match &row.outcome {
            Ok((sol, checks, text)) => {
                print!("{text}");
                let bad = checks.iter().filter(|c| !c.passed).count();
                if bad > 0 {
                    check_failures += 1;
                }
                if let Some(dir) = &args.out_dir {
                    let path = dir.join(format!("{}.json", row.name));
                    sol.save(&path).map_err(|e| Failure::solver(e.to_string()))?;
                    println!("wrote {}", path.display());
                }
            }
            Err(f) => {
                failures += 1;
                println!("problem {} FAILED: {}", row.name, f.msg);
            }
        }
        println!();
    }
    if failures > 0 {
        Err(Failure::solver(format!("{failures} benchmark(s) failed to solve")))
    } else if check_failures > 0 {
        Err(Failure::verification(format!(
            "{check_failures} benchmark(s) failed their checks"
        )))
    } else {
        Ok(())
    }
}
