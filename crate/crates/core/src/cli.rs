//! Command-line front end.
//!
//! Every question is read from a versioned JSON scenario (see
//! [`crate::scenario`]).  Output goes to standard output or `--out` as text,
//! CSV or JSON; JSON output embeds the scenario and can be fed back through
//! `--scenario` to replay a run.
//!
//! Exit codes: `0` success, `1` computational failure (including an
//! unattainable target power or a failed verification check), `2` invalid
//! input.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::allocation::{solve_allocation, CostConstraint, CostSpec};
use crate::covariance::{CovarianceSpec, RsIntuitiveParams, RsParams, RsRawParams, Spacing, TimeGrid};
use crate::error::DesignError;
use crate::oracle::{simulate_power, verify_battery, PowerEstimate, SimConfig};
use crate::pilot;
use crate::scenario::{evaluate, run_sweep, status_name, LoadedScenario, Outcome, Scenario, Status, Task};
use crate::solvers::{min_detectable_effect, required_n, DesignQuery, EffectSpec, RBounds, DEFAULT_ALPHA};
use crate::variance::{Hypothesis, PopulationSpec};

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for a computational failure.
pub const EXIT_COMPUTE: i32 = 1;
/// Exit code for invalid input.
pub const EXIT_VALIDATION: i32 = 2;

/// Environment variable fixing the size of the worker pool.
pub const THREADS_ENV: &str = "LONGIDESIGN_THREADS";

/// Default number of Monte Carlo replicates for `verify`.
pub const DEFAULT_VERIFY_REPLICATES: u64 = 20_000;

/// Output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Human-readable aligned text.
    Text,
    /// Comma-separated values with a fixed header.
    Csv,
    /// JSON document embedding the scenario.
    Json,
}

/// Power, sample size and cost-optimal designs for longitudinal studies.
#[derive(Debug, Parser)]
#[command(name = "longidesign", version, about)]
pub struct Cli {
    /// Question to answer.
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (`-` reads standard input).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub format: Format,
    /// Write output to this file instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for Monte Carlo runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo replicates (`power` simulates only when this is given).
    #[arg(long, global = true)]
    pub replicates: Option<u64>,
    /// Largest number of follow-up measures searched by `r`, `optimal`,
    /// `sweep` and `wizard`.
    #[arg(long, global = true)]
    pub r_max: Option<u32>,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Power for `n` participants.
    Power,
    /// Participants needed for the target power.
    N,
    /// Follow-up measures needed for the target power with `n` participants.
    R,
    /// Minimum detectable effect for `n` participants and the target power.
    Mde,
    /// Cost-optimal number of participants and follow-up measures.
    Optimal,
    /// Evaluate a task over the cross product of the scenario's sweep axes.
    Sweep {
        /// Task evaluated in every cell.
        #[arg(long, value_enum, default_value = "n")]
        task: TaskArg,
    },
    /// Run the built-in verification checks.
    Verify,
    /// Regenerate the reference tables computed from the pilot study.
    Tables {
        /// Table to print (all when omitted).
        #[arg(long, value_parser = clap::value_parser!(u8).range(3..=5))]
        which: Option<u8>,
    },
    /// Ask for a design interactively, save it as a scenario and solve it.
    Wizard {
        /// Where to save the collected scenario.
        #[arg(long, default_value = "longidesign-scenario.json")]
        save: PathBuf,
    },
}

/// Task selector for `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    /// Power for `n` participants.
    Power,
    /// Required participants.
    N,
    /// Required follow-up measures.
    R,
    /// Minimum detectable effect.
    Mde,
    /// Cost-optimal allocation.
    Optimal,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Power => Task::Power,
            TaskArg::N => Task::N,
            TaskArg::R => Task::R,
            TaskArg::Mde => Task::Mde,
            TaskArg::Optimal => Task::Optimal,
        }
    }
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    fn compute(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_COMPUTE,
            message: message.into(),
        }
    }
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        Failure {
            code: if e.is_validation() { EXIT_VALIDATION } else { EXIT_COMPUTE },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` and runs the command against the process's standard
/// streams, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = io::stdin();
    let mut input = stdin.lock();
    run_with_io(args, &mut input, &mut io::stdout(), &mut io::stderr())
}

/// Same as [`run`] with explicit streams.
pub fn run_with_io<I, T>(args: I, input: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli, input, stderr) {
        Ok((text, code)) => {
            if let Err(f) = emit(&cli, &text, stdout) {
                let _ = writeln!(stderr, "error: {}", f.message);
                return f.code;
            }
            code
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn emit(cli: &Cli, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match &cli.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::compute(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::compute(format!("cannot write output: {e}"))),
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::validation(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // A pool built earlier in the same process is kept as is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load(cli: &Cli, input: &mut dyn BufRead) -> CliResult<LoadedScenario> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| Failure::validation("this command needs --scenario <FILE>"))?;
    let text = if path == Path::new("-") {
        let mut s = String::new();
        input
            .read_to_string(&mut s)
            .map_err(|e| Failure::validation(format!("cannot read standard input: {e}")))?;
        s
    } else {
        fs::read_to_string(path).map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))?
    };
    Ok(LoadedScenario::from_json(&text)?)
}

fn execute(cli: &Cli, input: &mut dyn BufRead, stderr: &mut dyn Write) -> CliResult<(String, i32)> {
    configure_threads()?;
    match &cli.command {
        Command::Power => single(cli, input, stderr, Task::Power),
        Command::N => single(cli, input, stderr, Task::N),
        Command::R => single(cli, input, stderr, Task::R),
        Command::Mde => single(cli, input, stderr, Task::Mde),
        Command::Optimal => single(cli, input, stderr, Task::Optimal),
        Command::Sweep { task } => sweep(cli, input, stderr, (*task).into()),
        Command::Verify => verify(cli),
        Command::Tables { which } => tables(cli, *which),
        Command::Wizard { save } => wizard(cli, input, stderr, save),
    }
}

/// Formats `x` with six significant digits, dropping trailing zeros.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Number(n) if n.is_f64() => sig6(n.as_f64().unwrap_or(f64::NAN)),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rectangular result with named columns.
struct Table {
    title: String,
    header: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Text => {
                let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(fmt_value).collect()).collect();
                let widths: Vec<usize> = (0..self.header.len())
                    .map(|j| {
                        cells
                            .iter()
                            .map(|r| r[j].len())
                            .chain([self.header[j].len()])
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let line = |row: &[String]| {
                    row.iter()
                        .zip(&widths)
                        .map(|(c, w)| format!("{c:>w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                };
                let mut out = format!("{}\n{}\n", self.title, line(&self.header));
                for r in &cells {
                    out.push_str(&line(r));
                    out.push('\n');
                }
                out
            }
            Format::Csv => {
                let mut out = self.header.iter().map(|h| csv_escape(h)).collect::<Vec<_>>().join(",");
                out.push('\n');
                for r in &self.rows {
                    out.push_str(&r.iter().map(|v| csv_escape(&fmt_value(v))).collect::<Vec<_>>().join(","));
                    out.push('\n');
                }
                out
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| Value::Object(self.header.iter().cloned().zip(r.iter().cloned()).collect()))
                    .collect();
                let doc = json!({ "title": self.title, "rows": rows });
                format!("{}\n", serde_json::to_string_pretty(&doc).unwrap_or_default())
            }
        }
    }
}

fn opt_f(x: Option<f64>) -> Value {
    x.map_or(Value::Null, Value::from)
}

fn opt_u(x: Option<u64>) -> Value {
    x.map_or(Value::Null, Value::from)
}

fn outcome_text(out: &Outcome, loaded: &LoadedScenario, sim: Option<&PowerEstimate>) -> String {
    let mut lines: Vec<(String, String)> = Vec::new();
    for d in &loaded.defaults {
        lines.push((format!("default {}", d.path), sig6(d.value)));
    }
    lines.push(("task".into(), out.task.name().into()));
    let mut push_f = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            lines.push((k.into(), sig6(v)));
        }
    };
    push_f("alpha", Some(loaded.scenario.design.alpha));
    push_f("target power", loaded.scenario.power.filter(|_| out.task != Task::Power));
    let ints = [("n", out.n), ("n enrolled", out.n_enrolled), ("r", out.r.map(u64::from))];
    let mut lines_int: Vec<(String, String)> = ints
        .iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v.to_string())))
        .collect();
    lines.append(&mut lines_int);
    let floats = [
        ("power", out.power),
        ("cost", out.cost),
        ("mde coefficient", out.mde_coefficient),
        ("mde fraction", out.mde_fraction),
        ("unit variance", out.unit_variance),
        ("max power", out.max_power),
    ];
    for (k, v) in floats {
        if let Some(v) = v {
            lines.push((k.into(), sig6(v)));
        }
    }
    if let Some(e) = sim {
        lines.push(("simulated power".into(), sig6(e.rejection_rate)));
        lines.push(("simulated 95% interval".into(), format!("[{}, {}]", sig6(e.ci_low), sig6(e.ci_high))));
        lines.push(("replicates".into(), e.replicates.to_string()));
        lines.push(("redrawn covariate samples".into(), e.redraws.to_string()));
    }
    lines.push(("status".into(), status_name(out.status).into()));
    let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut text = String::new();
    for (k, v) in lines {
        text.push_str(&format!("{k:<width$}  {v}\n"));
    }
    text
}

fn outcome_csv(out: &Outcome, sim: Option<&PowerEstimate>) -> String {
    let mut header: Vec<String> = Outcome::CSV_HEADER.iter().map(|s| s.to_string()).collect();
    let mut row = out.csv_fields(sig6);
    if let Some(e) = sim {
        header.extend(["simulated_power", "ci_low", "ci_high", "replicates"].map(String::from));
        row.extend([sig6(e.rejection_rate), sig6(e.ci_low), sig6(e.ci_high), e.replicates.to_string()]);
    }
    format!("{}\n{}\n", header.join(","), row.join(","))
}

fn archive(loaded: &LoadedScenario, results: Value, extra: Option<(&str, Value)>) -> String {
    let mut doc = json!({
        "scenario": loaded.scenario,
        "defaults_applied": loaded.defaults,
        "results": results,
    });
    if let (Some((k, v)), Some(obj)) = (extra, doc.as_object_mut()) {
        obj.insert(k.to_string(), v);
    }
    format!("{}\n", serde_json::to_string_pretty(&doc).unwrap_or_default())
}

fn echo_defaults(loaded: &LoadedScenario, cli: &Cli, stderr: &mut dyn Write) {
    if cli.format != Format::Text {
        for d in &loaded.defaults {
            let _ = writeln!(stderr, "note: default applied: {} = {}", d.path, sig6(d.value));
        }
    }
}

fn single(cli: &Cli, input: &mut dyn BufRead, stderr: &mut dyn Write, task: Task) -> CliResult<(String, i32)> {
    let loaded = load(cli, input)?;
    echo_defaults(&loaded, cli, stderr);
    let out = evaluate(&loaded.scenario, task, cli.r_max)?;
    let sim = match (task, cli.replicates) {
        (Task::Power, Some(reps)) => {
            let n = out.n.unwrap_or(0);
            Some(simulate_power(&loaded.scenario.design, n, &SimConfig::new(reps, cli.seed))?)
        }
        _ => None,
    };
    let code = if out.status == Status::Unattainable {
        let target = loaded.scenario.power.unwrap_or(f64::NAN);
        let max = out.max_power.unwrap_or(f64::NAN);
        let whence = match out.r {
            Some(r) => format!("best within the search range, at r = {r}"),
            None => "limit of many follow-up measures".to_string(),
        };
        let _ = writeln!(
            stderr,
            "error: target power {} is unattainable; maximum achievable power is {} ({whence})",
            sig6(target),
            sig6(max)
        );
        EXIT_COMPUTE
    } else {
        if out.status == Status::AtUpperBound {
            let _ = writeln!(stderr, "note: optimum lies at the largest r searched; consider raising --r-max");
        }
        EXIT_OK
    };
    let text = match cli.format {
        Format::Text => outcome_text(&out, &loaded, sim.as_ref()),
        Format::Csv => outcome_csv(&out, sim.as_ref()),
        Format::Json => archive(
            &loaded,
            json!([out]),
            sim.map(|e| ("simulation", serde_json::to_value(e).unwrap_or(Value::Null))),
        ),
    };
    Ok((text, code))
}

fn sweep(cli: &Cli, input: &mut dyn BufRead, stderr: &mut dyn Write, task: Task) -> CliResult<(String, i32)> {
    let loaded = load(cli, input)?;
    if loaded.scenario.sweep.is_empty() {
        return Err(Failure::validation("sweep: the scenario defines no sweep axes"));
    }
    echo_defaults(&loaded, cli, stderr);
    let rows = run_sweep(&loaded, task, cli.r_max)?;
    let mut code = EXIT_OK;
    for (i, row) in rows.iter().enumerate() {
        if let Err(e) = &row.outcome {
            let _ = writeln!(stderr, "error: cell {i}: {e}");
            code = code.max(if e.is_validation() { EXIT_VALIDATION } else { EXIT_COMPUTE });
        }
    }
    let paths: Vec<String> = loaded.scenario.sweep.iter().map(|a| a.path.clone()).collect();
    if cli.format == Format::Json {
        let results: Vec<Value> = rows
            .iter()
            .map(|row| {
                let values: serde_json::Map<String, Value> =
                    paths.iter().cloned().zip(row.values.iter().map(|&v| Value::from(v))).collect();
                match &row.outcome {
                    Ok(o) => json!({ "values": values, "outcome": o }),
                    Err(e) => json!({ "values": values, "error": e.to_string() }),
                }
            })
            .collect();
        return Ok((archive(&loaded, Value::Array(results), None), code));
    }
    let mut header = paths.clone();
    header.extend(Outcome::CSV_HEADER.iter().map(|s| s.to_string()));
    let table_rows = rows
        .iter()
        .map(|row| {
            let mut cells: Vec<Value> = row.values.iter().map(|&v| Value::from(v)).collect();
            match &row.outcome {
                Ok(o) => cells.extend(o.csv_fields(sig6).into_iter().map(Value::String)),
                Err(_) => {
                    cells.push(Value::String(task.name().into()));
                    cells.extend(std::iter::repeat_n(Value::Null, Outcome::CSV_HEADER.len() - 2));
                    cells.push(Value::String("error".into()));
                }
            }
            cells
        })
        .collect();
    let table = Table {
        title: format!("sweep of `{}` over {} cells", task.name(), rows.len()),
        header,
        rows: table_rows,
    };
    Ok((table.render(cli.format), code))
}

fn verify(cli: &Cli) -> CliResult<(String, i32)> {
    let cfg = SimConfig::new(cli.replicates.unwrap_or(DEFAULT_VERIFY_REPLICATES), cli.seed);
    let reports = verify_battery(&cfg)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    let join = |v: &[f64]| v.iter().map(|&x| sig6(x)).collect::<Vec<_>>().join(" ");
    let table = Table {
        title: format!("{} checks, {} failed", reports.len(), failed),
        header: ["check", "result", "observed", "expected", "tolerance"].map(String::from).to_vec(),
        rows: reports
            .iter()
            .map(|r| {
                vec![
                    Value::String(r.name.clone()),
                    Value::String(if r.passed { "PASS" } else { "FAIL" }.into()),
                    Value::String(join(&r.observed)),
                    Value::String(join(&r.expected)),
                    Value::from(r.tolerance),
                ]
            })
            .collect(),
    };
    Ok((table.render(cli.format), if failed == 0 { EXIT_OK } else { EXIT_COMPUTE }))
}

fn covariance_models() -> [(&'static str, CovarianceSpec); 3] {
    [
        ("cs", pilot::cs()),
        ("dex", pilot::dex()),
        ("rs", pilot::rs_intuitive(0.36, Spacing::FixedS { s: pilot::S })),
    ]
}

fn table_mde() -> CliResult<Table> {
    let mut rows = Vec::new();
    for (name, cov) in covariance_models() {
        let mut row = vec![Value::from(name)];
        for (hyp, effect) in [
            (Hypothesis::Cmd, pilot::cmd_effect(0.1)),
            (Hypothesis::Ldd, pilot::ldd_effect(0.1)),
        ] {
            let q = pilot::fixed_tau_query(pilot::R, cov, hyp, pilot::population(pilot::V_T0, 0.0), effect);
            for target in [0.8, 0.9] {
                let m = min_detectable_effect(target, pilot::N_PILOT, &q)?;
                row.push(opt_f(m.fraction.map(|f| 100.0 * f)));
            }
        }
        rows.push(row);
    }
    Ok(Table {
        title: format!(
            "Minimum detectable effect in percent: {} participants, {} follow-ups over {} years, entry-time variance {}",
            pilot::N_PILOT,
            pilot::R,
            pilot::TAU,
            pilot::V_T0
        ),
        header: ["model", "cmd_power_0.8", "cmd_power_0.9", "ldd_power_0.8", "ldd_power_0.9"]
            .map(String::from)
            .to_vec(),
        rows,
    })
}

fn table_n() -> CliResult<Table> {
    let mut rows = Vec::new();
    for (name, cov) in covariance_models() {
        for (v, rho) in [(0.0, 0.0), (pilot::V_T0, 0.0), (pilot::V_T0, 0.8)] {
            let pop = pilot::population(v, rho);
            let cmd = pilot::fixed_tau_query(pilot::R, cov, Hypothesis::Cmd, pop, pilot::cmd_effect(0.1));
            let ldd = pilot::fixed_tau_query(pilot::R, cov, Hypothesis::Ldd, pop, pilot::ldd_effect(0.1));
            rows.push(vec![
                Value::from(name),
                Value::from(v),
                Value::from(rho),
                opt_u(Some(required_n(0.9, &cmd)?.n)),
                opt_u(Some(required_n(0.9, &ldd)?.n)),
            ]);
        }
    }
    Ok(Table {
        title: format!(
            "Participants for 90% power against 10% effects: {} follow-ups over {} years",
            pilot::R,
            pilot::TAU
        ),
        header: ["model", "v_t0", "rho_e_t0", "cmd_n", "ldd_n"].map(String::from).to_vec(),
        rows,
    })
}

/// Budget of the allocation table.
const TABLE_BUDGET: f64 = 100_000.0;
/// First-measurement cost of the allocation table.
const TABLE_C1: f64 = 80.0;

fn table_allocation() -> CliResult<Table> {
    let models = [("cs", pilot::cs()), ("dex", pilot::dex()), ("rs", pilot::rs_raw())];
    let mut rows = Vec::new();
    for (name, cov) in models {
        for v in [0.0, pilot::V_T0] {
            for kappa in [5.0, 20.0] {
                let q = pilot::fixed_tau_query(1, cov, Hypothesis::Ldd, pilot::population(v, 0.0), pilot::ldd_effect(0.1));
                let cost = CostSpec {
                    c1: TABLE_C1,
                    kappa,
                    constraint: CostConstraint::Budget { total: TABLE_BUDGET },
                };
                let sol = solve_allocation(&q, &cost, RBounds { lo: 1, hi: 18 })?;
                rows.push(vec![
                    Value::from(name),
                    Value::from(v),
                    Value::from(kappa),
                    Value::from(sol.n_opt),
                    Value::from(sol.r_opt),
                    Value::from(sol.power),
                ]);
            }
        }
    }
    Ok(Table {
        title: format!(
            "Cost-optimal allocation for a 10% slope difference: budget {}, c1 = {}, {} years, 1 <= r <= 18",
            TABLE_BUDGET,
            TABLE_C1,
            pilot::TAU
        ),
        header: ["model", "v_t0", "kappa", "n", "r", "power"].map(String::from).to_vec(),
        rows,
    })
}

fn tables(cli: &Cli, which: Option<u8>) -> CliResult<(String, i32)> {
    let wanted: Vec<u8> = which.map_or(vec![3, 4, 5], |w| vec![w]);
    let mut text = String::new();
    let mut docs = Vec::new();
    for w in wanted {
        let table = match w {
            3 => table_mde()?,
            4 => table_n()?,
            _ => table_allocation()?,
        };
        match cli.format {
            Format::Json => docs.push(json!({ "table": w, "title": table.title, "header": table.header, "rows": table.rows })),
            f => {
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&table.render(f));
            }
        }
    }
    if cli.format == Format::Json {
        text = format!("{}\n", serde_json::to_string_pretty(&docs).unwrap_or_default());
    }
    Ok((text, EXIT_OK))
}

/// Prompt-and-answer helper for the wizard.
struct Prompter<'a> {
    input: &'a mut dyn BufRead,
    prompts: &'a mut dyn Write,
}

impl Prompter<'_> {
    fn line(&mut self, question: &str, default: &str) -> CliResult<String> {
        let _ = write!(self.prompts, "{question} [{default}]: ");
        let _ = self.prompts.flush();
        let mut buf = String::new();
        let read = self
            .input
            .read_line(&mut buf)
            .map_err(|e| Failure::validation(format!("cannot read answer: {e}")))?;
        if read == 0 {
            return Err(Failure::validation(format!("input ended before answering `{question}`")));
        }
        let answer = buf.trim();
        Ok(if answer.is_empty() { default.to_string() } else { answer.to_string() })
    }

    fn number(&mut self, question: &str, default: f64) -> CliResult<f64> {
        loop {
            let a = self.line(question, &sig6(default))?;
            match a.parse::<f64>() {
                Ok(v) if v.is_finite() => return Ok(v),
                _ => {
                    let _ = writeln!(self.prompts, "  please enter a number");
                }
            }
        }
    }

    fn integer(&mut self, question: &str, default: u32) -> CliResult<u32> {
        loop {
            let a = self.line(question, &default.to_string())?;
            match a.parse::<u32>() {
                Ok(v) => return Ok(v),
                Err(_) => {
                    let _ = writeln!(self.prompts, "  please enter a whole number");
                }
            }
        }
    }

    fn choice(&mut self, question: &str, options: &[&str], default: &str) -> CliResult<String> {
        loop {
            let a = self.line(&format!("{question} ({})", options.join("/")), default)?.to_lowercase();
            if options.contains(&a.as_str()) {
                return Ok(a);
            }
            let _ = writeln!(self.prompts, "  please answer one of {}", options.join(", "));
        }
    }
}

fn collect_scenario(p: &mut Prompter<'_>, r_max: Option<u32>) -> CliResult<Scenario> {
    let objective = p.choice("Minimise cost for a power floor, or maximise power within a budget", &["cost", "power"], "cost")?;
    let constraint = if objective == "cost" {
        CostConstraint::PowerFloor {
            pi: p.number("Minimum power", 0.8)?,
        }
    } else {
        CostConstraint::Budget {
            total: p.number("Total budget", 100_000.0)?,
        }
    };
    let c1 = p.number("Cost per participant of the baseline measurement (c1)", 80.0)?;
    let kappa = p.number("Ratio of baseline cost to the cost of each later measurement (kappa)", 20.0)?;
    let grid_kind = p.choice("Keep the follow-up length fixed (tau) or the spacing fixed (s)", &["tau", "s"], "tau")?;
    let mode = if grid_kind == "tau" {
        Spacing::FixedTau {
            tau: p.number("Follow-up length", pilot::TAU)?,
        }
    } else {
        Spacing::FixedS {
            s: p.number("Time between measurements", pilot::S)?,
        }
    };
    let hyp = match p.choice("Hypothesis", &["cmd", "ldd", "bw"], "ldd")?.as_str() {
        "cmd" => Hypothesis::Cmd,
        "bw" => Hypothesis::Bw,
        _ => Hypothesis::Ldd,
    };
    let pe = p.number("Proportion exposed (pe)", pilot::PE)?;
    let v_t0 = p.number("Variance of the time variable at entry (v_t0)", pilot::V_T0)?;
    let rho_e_t0 = if v_t0 > 0.0 {
        p.number("Correlation between exposure and entry time", 0.0)?
    } else {
        0.0
    };
    let scale = p.choice("Effect scale", &["percent", "absolute"], "percent")?;
    let effect = if scale == "absolute" {
        EffectSpec::Absolute {
            beta: p.number("Coefficient under the alternative (beta)", 0.1)?,
        }
    } else {
        let mu00 = p.number("Mean baseline response of the unexposed (mu00)", 3.5)?;
        if hyp == Hypothesis::Cmd {
            EffectSpec::Cmd {
                p1: p.number("Relative group difference (p1)", 0.1)?,
                mu00,
            }
        } else {
            let p2 = p.number("Relative change of the unexposed over the follow-up (p2)", pilot::P2)?;
            let p3 = p.number("Relative excess change among the exposed (p3)", 0.1)?;
            let p1 = if p2 == 0.0 {
                Some(p.number("Relative baseline group difference (p1)", 0.0)?)
            } else {
                None
            };
            let tau_ref = match mode {
                Spacing::FixedS { .. } => Some(p.number("Length of follow-up over which p2 and p3 are stated", pilot::TAU)?),
                Spacing::FixedTau { .. } => None,
            };
            EffectSpec::Ldd {
                p2,
                p3,
                mu00,
                p1,
                tau_ref,
            }
        }
    };
    let cov = match p.choice("Covariance model", &["cs", "dex", "rs"], "rs")?.as_str() {
        "cs" => CovarianceSpec::Cs {
            sigma2: p.number("Total variance (sigma2)", 0.3214)?,
            rho: p.number("Correlation (rho)", 0.857)?,
        },
        "dex" => CovarianceSpec::Dex {
            sigma2: p.number("Total variance (sigma2)", 0.3179)?,
            rho: p.number("Correlation one time unit apart (rho)", 0.896)?,
            theta: p.number("Damping exponent (theta)", 0.18)?,
        },
        _ => {
            let form = p.choice("Random-slope parameters as reliabilities or as variance components", &["rel", "var"], "rel")?;
            let params = if form == "var" {
                RsParams::Raw(RsRawParams {
                    sigma_w2: p.number("Within-participant variance", 0.0418)?,
                    sigma_b0_2: p.number("Intercept variance", 0.2982)?,
                    sigma_b1_2: p.number("Slope variance", 0.000095)?,
                    sigma_b0b1: p.number("Intercept-slope covariance", -0.0017)?,
                })
            } else {
                RsParams::Intuitive(RsIntuitiveParams {
                    sigma_t0_2: p.number("Variance of the baseline response", 0.34)?,
                    rho_t0: p.number("Reliability of the baseline response", 0.877)?,
                    rho_b0b1: p.number("Correlation between intercept and slope", -0.32)?,
                    slope_rel: p.number("Reliability of the slope estimate", 0.364)?,
                    r_tilde: p.integer("Number of follow-ups at which that reliability holds", pilot::R)?,
                    rel_mode: mode,
                })
            };
            CovarianceSpec::Rs { params }
        }
    };
    let hi = p.integer("Largest number of follow-up measures to consider", r_max.unwrap_or(20))?;
    let design = DesignQuery {
        grid: TimeGrid { r: 1, mode },
        pop: PopulationSpec { pe, v_t0, rho_e_t0 },
        cov,
        hyp,
        effect,
        alpha: DEFAULT_ALPHA,
    };
    let mut scenario = Scenario::new(design);
    let lo = RBounds::default_for(&scenario.design).lo;
    scenario.r_bounds = Some(RBounds { lo, hi });
    scenario.cost = Some(CostSpec { c1, kappa, constraint });
    Ok(scenario)
}

fn wizard(cli: &Cli, input: &mut dyn BufRead, stderr: &mut dyn Write, save: &Path) -> CliResult<(String, i32)> {
    let scenario = {
        let mut p = Prompter { input, prompts: stderr };
        collect_scenario(&mut p, cli.r_max)?
    };
    let loaded = LoadedScenario::from_scenario(scenario)?;
    let doc = serde_json::to_string_pretty(&loaded.scenario).map_err(|e| Failure::compute(e.to_string()))?;
    fs::write(save, format!("{doc}\n"))
        .map_err(|e| Failure::compute(format!("cannot save scenario to {}: {e}", save.display())))?;
    let _ = writeln!(stderr, "scenario saved to {}", save.display());
    let out = evaluate(&loaded.scenario, Task::Optimal, None)?;
    if out.status == Status::AtUpperBound {
        let _ = writeln!(stderr, "note: optimum lies at the largest r considered");
    }
    let text = match cli.format {
        Format::Text => outcome_text(&out, &loaded, None),
        Format::Csv => outcome_csv(&out, None),
        Format::Json => archive(&loaded, json!([out]), None),
    };
    Ok((text, EXIT_OK))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.790432123), "0.790432");
        assert_eq!(sig6(93696.0), "93696");
        assert_eq!(sig6(1041.0), "1041");
        assert_eq!(sig6(0.5), "0.5");
        assert_eq!(sig6(0.0015182345), "0.00151823");
        assert_eq!(sig6(1.0e-7), "1.00000e-7");
        assert_eq!(sig6(-2.5), "-2.5");
    }

    #[test]
    fn csv_fields_are_escaped() {
        assert_eq!(csv_escape("a,b"), "\"a,b\"");
        assert_eq!(csv_escape("plain"), "plain");
    }

    #[test]
    fn missing_scenario_is_a_validation_error() {
        let mut input = io::Cursor::new(Vec::new());
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with_io(["longidesign", "n"], &mut input, &mut out, &mut err);
        assert_eq!(code, EXIT_VALIDATION);
    }

    #[test]
    fn bad_arguments_exit_with_validation_code() {
        let mut input = io::Cursor::new(Vec::new());
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with_io(["longidesign", "tables", "--which", "9"], &mut input, &mut out, &mut err);
        assert_eq!(code, EXIT_VALIDATION);
    }
}
