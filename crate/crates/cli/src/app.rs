//! Argument parsing and dispatch.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use soc_icnn::io::{load_model, model_to_json, save_model};
use soc_icnn::model::{build_random, Architecture};
use soc_icnn::SocIcnnParams;

use crate::config::{load_config, Exp1Config, Exp2Config, Exp3Config, Exp4Config};
use crate::error::CliError;
use crate::experiments::{run_exp1, run_exp2, run_exp3, run_exp4, Check};
use crate::table::{write_tables, write_tables_to_dir, Format, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "soc-icnn",
    version,
    about = "Dual-geometry experiments for SOC-ICNNs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or inspect model files.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Readout gradient vs local formula and finite differences.
    Exp1(ExpArgs),
    /// Local Hessian formula and quadratic model.
    Exp2(ExpArgs),
    /// Directional derivatives and subgradients at a degenerate point.
    Exp3(ExpArgs),
    /// Downstream inference with white-box and finite-difference derivatives.
    Exp4(ExpArgs),
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Write a randomly initialized model as JSON.
    Gen(GenArgs),
    /// Print dimensions, validation status and parameter norms.
    Info { path: PathBuf },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 2)]
    pub quad: usize,
    #[arg(long, default_value_t = 2)]
    pub cone: usize,
    #[arg(long, default_value_t = 20)]
    pub module_dim: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    /// JSON config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving one file per table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Exit with status 3 when a result misses its threshold.
    #[arg(long)]
    pub check: bool,
}

fn emit<W: Write>(tables: &[Table], args: &ExpArgs, stdout: &mut W) -> Result<(), CliError> {
    match &args.out {
        Some(dir) => write_tables_to_dir(tables, dir, args.format),
        None => write_tables(tables, stdout, args.format),
    }
}

fn report_checks<W: Write>(checks: &[Check], stderr: &mut W) -> Result<i32, CliError> {
    let mut code = EXIT_OK;
    for c in checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(stderr, "{tag} {} ({})", c.name, c.detail)?;
        if !c.passed {
            code = EXIT_CHECK_FAILED;
        }
    }
    Ok(code)
}

fn run_experiment<W: Write, E: Write>(
    command: &Command,
    stdout: &mut W,
    stderr: &mut E,
) -> Result<i32, CliError> {
    let (args, tables, checks) = match command {
        Command::Exp1(a) => {
            let r = run_exp1(&load_config::<Exp1Config>(a.config.as_deref(), a.seed)?)?;
            (a, r.tables(), r.checks())
        }
        Command::Exp2(a) => {
            let r = run_exp2(&load_config::<Exp2Config>(a.config.as_deref(), a.seed)?)?;
            (a, r.tables(), r.checks())
        }
        Command::Exp3(a) => {
            let r = run_exp3(&load_config::<Exp3Config>(a.config.as_deref(), a.seed)?)?;
            (a, r.tables(), r.checks())
        }
        Command::Exp4(a) => {
            let r = run_exp4(&load_config::<Exp4Config>(a.config.as_deref(), a.seed)?)?;
            (a, r.tables(), r.checks())
        }
        Command::Model(_) => unreachable!("model commands are dispatched separately"),
    };
    emit(&tables, args, stdout)?;
    if args.check {
        report_checks(&checks, stderr)
    } else {
        Ok(EXIT_OK)
    }
}

/// Human-readable summary of a model.
pub fn model_summary(params: &SocIcnnParams) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(": ");
        s.push_str(&v);
        s.push('\n');
    };
    line("input_dim", params.input_dim().to_string());
    line("widths", format!("{:?}", params.widths()));
    line(
        "quad_dims",
        format!(
            "{:?}",
            params.quad.iter().map(|m| m.e.len()).collect::<Vec<_>>()
        ),
    );
    line(
        "cone_dims",
        format!(
            "{:?}",
            params.cone.iter().map(|m| m.d.len()).collect::<Vec<_>>()
        ),
    );
    line(
        "seed",
        params
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string()),
    );
    line(
        "validate",
        match params.validate() {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        },
    );
    for (i, l) in params.layers.iter().enumerate() {
        line(
            &format!("layer{}", i + 1),
            format!(
                "|W|={:e} |U|={:e} |b|={:e}",
                l.w.norm(),
                l.u.norm(),
                l.b.norm()
            ),
        );
    }
    line("|c|", format!("{:e}", params.c.norm()));
    line("|v|", format!("{:e}", params.v.norm()));
    line("b0", format!("{:e}", params.b0));
    for (i, m) in params.quad.iter().enumerate() {
        line(
            &format!("quad{}", i + 1),
            format!(
                "alpha={:e} |B|={:e} |e|={:e}",
                m.alpha,
                m.b.norm(),
                m.e.norm()
            ),
        );
    }
    for (i, m) in params.cone.iter().enumerate() {
        line(
            &format!("cone{}", i + 1),
            format!(
                "lambda={:e} |A|={:e} |d|={:e}",
                m.lambda,
                m.a.norm(),
                m.d.norm()
            ),
        );
    }
    s
}

fn run_model<W: Write>(cmd: &ModelCommand, stdout: &mut W) -> Result<i32, CliError> {
    match cmd {
        ModelCommand::Gen(g) => {
            let arch =
                Architecture::uniform(g.input_dim, g.width, g.depth, g.quad, g.cone, g.module_dim);
            let params = build_random(g.seed, &arch).map_err(|e| match e {
                soc_icnn::Error::InvalidDescriptor(m) => CliError::Config(m),
                other => other.into(),
            })?;
            match &g.out {
                Some(p) => save_model(&params, p)?,
                None => writeln!(stdout, "{}", model_to_json(&params))?,
            }
        }
        ModelCommand::Info { path } => {
            let params = load_model(Path::new(path))?;
            write!(stdout, "{}", model_summary(&params))?;
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, T, W, E>(args: I, stdout: &mut W, stderr: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Model(m) => run_model(m, stdout),
        other => run_experiment(other, stdout, stderr),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
