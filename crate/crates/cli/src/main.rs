use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use sdfsnn::config::{RunConfig, PRESETS};
use sdfsnn::pipeline::run;
use sdfsnn::Error;

#[derive(Parser, Debug)]
#[command(name = "sdfsnn", version, about = "Frozen random-feature solver for the Gross-Pitaevskii equation")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; artifacts go to <out>/<config hash>/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Named preset to start from.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// TOML or JSON config file applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// List presets and exit.
    #[arg(long)]
    list_presets: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time-dependent run of the reduced coefficient ODE.
    Evolve(EvolveArgs),
    /// Manufactured-solution static solve, one table row per dimension.
    Static(StaticArgs),
    /// Split-step Fourier reference fields only.
    Reference(ReferenceArgs),
    /// Wall-time scaling of the reference solver and the feature solver.
    Bench(BenchArgs),
    /// Decay, subset or conservation ablation.
    Ablation(AblationArgs),
}

#[derive(Args, Debug, Default)]
struct ProblemArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// Interaction in the original dimension; beta_d is derived.
    #[arg(long, conflicts_with = "beta_d")]
    beta: Option<f64>,
    #[arg(long)]
    beta_d: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Dopri5,
    ImplicitMidpoint,
}

#[derive(Args, Debug)]
struct EvolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    neurons: Option<usize>,
    /// Number of collocation points.
    #[arg(long)]
    collocation: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Fixed step of the implicit midpoint scheme.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args, Debug)]
struct StaticArgs {
    /// Dimension; repeat for several rows.
    #[arg(long)]
    dim: Vec<usize>,
    #[arg(long)]
    collocation: Option<usize>,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    beta_d: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    subset_size: Option<usize>,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WhichArg {
    Decay,
    Subset,
    Conservation,
}

#[derive(Args, Debug)]
struct AblationArgs {
    #[arg(long, value_enum)]
    which: Option<WhichArg>,
    #[command(flatten)]
    problem: ProblemArgs,
}

/// Insert `value` at a dotted path, creating objects on the way.
fn set(root: &mut Map<String, Value>, path: &str, value: Value) {
    let mut parts = path.split('.').peekable();
    let mut map = root;
    while let Some(key) = parts.next() {
        if parts.peek().is_none() {
            map.insert(key.to_string(), value);
            return;
        }
        map = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("intermediate keys are objects");
    }
}

fn set_opt<T: Into<Value>>(root: &mut Map<String, Value>, path: &str, value: Option<T>) {
    if let Some(v) = value {
        set(root, path, v.into());
    }
}

fn problem_overrides(m: &mut Map<String, Value>, p: &ProblemArgs) {
    set_opt(m, "problem.d", p.dim);
    set_opt(m, "problem.t_final", p.t_final);
    if let Some(b) = p.beta {
        set(m, "problem.beta", b.into());
        set(m, "problem.beta_d", Value::Null);
    }
    if let Some(b) = p.beta_d {
        set(m, "problem.beta_d", b.into());
        set(m, "problem.beta", Value::Null);
    }
}

fn overrides(cli: &Cli, command: &Command) -> Value {
    let mut m = Map::new();
    set_opt(&mut m, "seed", cli.seed);
    set_opt(&mut m, "out", cli.out.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut m, "threads", cli.threads);
    let mode = match command {
        Command::Evolve(a) => {
            problem_overrides(&mut m, &a.problem);
            set_opt(&mut m, "discretization.neurons", a.neurons);
            set_opt(&mut m, "discretization.n_c", a.collocation);
            set_opt(&mut m, "discretization.alpha", a.alpha);
            set_opt(&mut m, "integrator.subset_size", a.subset_size);
            set_opt(
                &mut m,
                "integrator.scheme",
                a.scheme.map(|s| match s {
                    SchemeArg::Dopri5 => "dopri5",
                    SchemeArg::ImplicitMidpoint => "implicit-midpoint",
                }),
            );
            set_opt(&mut m, "integrator.dt", a.dt);
            "evolve"
        }
        Command::Static(a) => {
            if !a.dim.is_empty() {
                set(&mut m, "static.dims", json!(a.dim));
            }
            set_opt(&mut m, "static.n_c", a.collocation);
            set_opt(&mut m, "static.settings.neurons", a.neurons);
            set_opt(&mut m, "static.beta_d", a.beta_d);
            set_opt(&mut m, "static.epsilon", a.epsilon);
            set_opt(&mut m, "static.settings.subset_size", a.subset_size);
            "static"
        }
        Command::Reference(a) => {
            problem_overrides(&mut m, &a.problem);
            set_opt(&mut m, "reference.n_g", a.grid);
            "reference"
        }
        Command::Bench(a) => {
            set_opt(&mut m, "bench.settings.t_final", a.t_final);
            set_opt(&mut m, "bench.settings.repeats", a.repeats);
            "bench"
        }
        Command::Ablation(a) => {
            problem_overrides(&mut m, &a.problem);
            set_opt(
                &mut m,
                "ablation.which",
                a.which.map(|w| match w {
                    WhichArg::Decay => "decay",
                    WhichArg::Subset => "subset",
                    WhichArg::Conservation => "conservation",
                }),
            );
            "ablation"
        }
    };
    set(&mut m, "mode", mode.into());
    Value::Object(m)
}

fn execute(cli: &Cli, command: &Command) -> Result<(), Error> {
    let config = RunConfig::assemble(cli.preset.as_deref(), cli.config.as_deref(), overrides(cli, command))?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    let outcome = run(&config)?;
    println!("{}", outcome.dir.display());
    for (label, e) in &outcome.summary.errors {
        println!("{label}: rel_l2 = {:.3e}, rel_l1 = {:.3e}", e.rel_l2, e.rel_l1);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.list_presets {
        for p in PRESETS {
            println!("{p}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        eprintln!("error: a subcommand is required (evolve, static, reference, bench, ablation)");
        return ExitCode::from(2);
    };
    match execute(&cli, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
