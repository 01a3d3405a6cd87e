//! `pdl`: run, check and evaluate PDL programs.

mod live;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use pdl_core::ast::BlockKind;
use pdl_core::check::{check_source, has_errors};
use pdl_core::harness::{render_report, run_suite, SeedSpec, SuiteConfig, SuiteError};
use pdl_core::patterns::Architecture;
use pdl_core::{
    parse_program, Block, Environment, EvalError, JsonlSink, ModelProvider, ModelRequest,
    ModelResponse, Program, ProviderError, ProviderSpec, Scope, SidecarRunner, SourceSpan, Value,
};

use live::LivePrinter;

#[derive(Parser)]
#[command(name = "pdl", version, about = "Run, check and evaluate PDL programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a program, printing contributions as they are produced.
    Run(RunArgs),
    /// Parse a program and scan it for undefined variables.
    Check { file: PathBuf },
    /// Run an agent evaluation suite and write reports.
    Eval(EvalArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    file: PathBuf,
    /// Initial variable, `key=value`; the value is parsed as JSON when possible.
    #[arg(long = "data", value_name = "KEY=VALUE")]
    data: Vec<String>,
    /// `mock:FIXTURES[,options]` or `http:BASE_URL[,options]`.
    #[arg(long, env = "PDL_PROVIDER")]
    provider: Option<String>,
    /// Write trace events as JSON lines.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    #[arg(long, env = "PDL_SEED")]
    seed: Option<u64>,
    /// Report spec violations without failing.
    #[arg(long)]
    lenient_specs: bool,
    #[arg(long)]
    no_color: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated architectures (react, split).
    #[arg(long, value_delimiter = ',')]
    arch: Vec<String>,
    /// Run seeds 0..N instead of the configured seeds.
    #[arg(long)]
    seeds: Option<u64>,
}

const EXIT_EVAL: u8 = 1;
const EXIT_PARSE: u8 = 2;

/// Used when no provider is configured; fails on the first model call.
struct NoProvider;

impl ModelProvider for NoProvider {
    fn complete(&mut self, _req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        Err(ProviderError::Config(
            "no model provider configured (use --provider or PDL_PROVIDER)".into(),
        ))
    }
}

fn parse_data(items: &[String]) -> Result<Scope, String> {
    let mut scope = Scope::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| format!("--data expects KEY=VALUE, got `{item}`"))?;
        let value = Value::from_json_str(v).unwrap_or_else(|_| Value::from(v));
        scope.set(k, value);
    }
    Ok(scope)
}

/// Source span of the deepest block on an evaluation path.
fn locate(program: &Program, path: &[usize]) -> Option<SourceSpan> {
    let (first, rest) = path.split_first()?;
    let mut block: &Block = if *first < program.defs.len() {
        program.defs.get_index(*first)?.1
    } else {
        &program.root
    };
    let mut span = block.span;
    for idx in rest {
        let next = match &block.kind {
            BlockKind::Text(parts) | BlockKind::LastOf(parts) | BlockKind::Array(parts) => {
                parts.get(*idx)
            }
            BlockKind::Message { content } => Some(content.as_ref()),
            BlockKind::Model(m) => m.input.as_deref(),
            BlockKind::If {
                then, otherwise, ..
            } => match idx {
                0 => Some(then.as_ref()),
                _ => otherwise.as_deref(),
            },
            BlockKind::Repeat(r) => Some(r.body.as_ref()),
            _ => None,
        };
        let Some(b) = next else { break };
        block = b;
        span = b.span.or(span);
    }
    span.map(|s| SourceSpan::from_span(&program.source_path, s))
}

fn report_eval_error(program: &Program, e: &EvalError) {
    match locate(program, &e.path) {
        Some(s) => eprintln!(
            "{}:{}:{}: error: {}",
            s.file.display(),
            s.start_line,
            s.start_col,
            e.kind
        ),
        None => eprintln!("{}: error: {}", program.source_path.display(), e.kind),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), u8> {
    let text = std::fs::read_to_string(&args.file).map_err(|e| {
        eprintln!("{}: error: {e}", args.file.display());
        EXIT_PARSE
    })?;
    let program = parse_program(&text, &args.file).map_err(|diags| {
        diags.iter().for_each(|d| eprintln!("{d}"));
        EXIT_PARSE
    })?;
    let scope = parse_data(&args.data).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_EVAL
    })?;
    let provider: Box<dyn ModelProvider> = match &args.provider {
        Some(spec) => {
            let mut spec = ProviderSpec::parse(spec).map_err(|e| {
                eprintln!("error: {e}");
                EXIT_EVAL
            })?;
            if let Some(seed) = args.seed {
                spec = spec.with_seed(seed);
            }
            spec.build().map_err(|e| {
                eprintln!("error: {e}");
                EXIT_EVAL
            })?
        }
        None => Box::new(NoProvider),
    };
    let color = !args.no_color && std::io::stdout().is_terminal();
    let mut env = Environment::new(provider)
        .with_lenient_specs(args.lenient_specs)
        .with_sink(Arc::new(LivePrinter::new(std::io::stdout(), color)));
    if let Some(seed) = args.seed {
        env = env.with_seed(seed);
    }
    if let Some(runner) = SidecarRunner::discover() {
        env = env.with_code_runner(runner);
    }
    if let Some(path) = &args.trace {
        let sink = JsonlSink::create(path).map_err(|e| {
            eprintln!("{}: error: {e}", path.display());
            EXIT_EVAL
        })?;
        env = env.with_sink(Arc::new(sink));
    }
    let run = pdl_core::run_program(&program, scope, env);
    for e in &run.errors {
        report_eval_error(&program, e);
    }
    if run.is_ok() {
        Ok(())
    } else {
        Err(EXIT_EVAL)
    }
}

fn cmd_check(file: &Path) -> Result<(), u8> {
    let text = std::fs::read_to_string(file).map_err(|e| {
        eprintln!("{}: error: {e}", file.display());
        EXIT_EVAL
    })?;
    let diags = check_source(&text, file);
    for d in &diags {
        eprintln!("{d}");
    }
    if has_errors(&diags) {
        Err(EXIT_EVAL)
    } else {
        Ok(())
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), u8> {
    let fail = |e: SuiteError| {
        eprintln!("error: {e}");
        EXIT_EVAL
    };
    let mut cfg = SuiteConfig::load(&args.config).map_err(fail)?;
    if let Some(n) = args.seeds {
        cfg.seeds = SeedSpec::Count(n);
    }
    if !args.arch.is_empty() {
        cfg.archs = args
            .arch
            .iter()
            .map(|a| {
                Architecture::parse(a.trim()).ok_or_else(|| {
                    eprintln!("error: unknown architecture `{a}` (expected react or split)");
                    EXIT_EVAL
                })
            })
            .collect::<Result<_, _>>()?;
    }
    let scenarios = cfg.load_scenarios().map_err(fail)?;
    let seeds = cfg.seeds.seeds();
    let conditions = cfg.conditions();
    for (i, faults) in conditions.iter().enumerate() {
        let report = run_suite(&scenarios, &cfg.archs, &seeds, faults.as_ref())
            .map_err(|e| fail(e.into()))?;
        let dir = if conditions.len() == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("condition-{i}"))
        };
        render_report(&report, &dir).map_err(|e| {
            eprintln!("{}: error: {e}", dir.display());
            EXIT_EVAL
        })?;
        print!("{}", pdl_core::harness::markdown_table(&report));
        println!("\nReport written to {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check { file } => cmd_check(&file),
        Command::Eval(args) => cmd_eval(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
