use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use prefopt::bench::{self, ExperimentSpec, StrategyChoice};
use prefopt::fractal::{self, ColoringParams, RenderSpec, NUM_PARAMS};
use prefopt::optimizer::OptimizerConfig;
use prefopt_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "prefopt", version, about = "Preference-guided Bayesian optimization with ties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark experiments against synthetic oracles.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Render one fractal coloring to PNG.
    Render(RenderArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    Run(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// One of shekel05, mo2d, sphere, linear1d.
    #[arg(long)]
    oracle: String,
    #[arg(long, value_delimiter = ',', default_value = "1e-5,1e-3,0.1,1")]
    tolerances: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 60)]
    budget: usize,
    #[arg(long, default_value = "both")]
    strategy: StrategyChoice,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Hue x3, saturation x3, transition speed, base RGB x3.
    #[arg(long, num_args = NUM_PARAMS, allow_negative_numbers = true, required = true)]
    params: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 384)]
    width: usize,
    #[arg(long, default_value_t = 384)]
    height: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PREFOPT_LISTEN", default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, env = "PREFOPT_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Rendered image side length in pixels.
    #[arg(long, env = "PREFOPT_RENDER_SIZE", default_value_t = 384)]
    render_size: usize,
    #[arg(long, env = "PREFOPT_SEED", default_value_t = 0)]
    seed: u64,
}

fn bench_run(a: BenchArgs) -> anyhow::Result<ExitCode> {
    let spec = ExperimentSpec {
        oracle: a.oracle,
        tolerances: a.tolerances,
        trials: a.trials,
        budget: a.budget,
        seed: a.seed,
        strategy: a.strategy,
        config: OptimizerConfig::default(),
    };
    let result = bench::run_experiment(&spec)?;
    bench::write_outputs(&a.out, &result).with_context(|| format!("writing results to {}", a.out.display()))?;
    for t in result.trials.iter().filter(|t| t.error.is_some()) {
        tracing::warn!(strategy = %t.strategy, tolerance = t.tolerance, seed = t.seed, error = t.error.as_deref(), "trial failed");
    }
    println!(
        "{} trials, {} failed; results in {}",
        result.trials.len(),
        result.failures(),
        a.out.display()
    );
    Ok(if result.failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn render(a: RenderArgs) -> anyhow::Result<ExitCode> {
    let params = ColoringParams::from_slice(&a.params)?;
    let image = fractal::render(&params, &RenderSpec::with_size(a.width, a.height))?;
    std::fs::write(&a.out, image.to_png()?).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> anyhow::Result<ExitCode> {
    if a.render_size == 0 {
        bail!("render size must be positive");
    }
    let state = AppState::open(ServiceConfig {
        data_dir: a.data_dir,
        render: RenderSpec::with_size(a.render_size, a.render_size),
        seed: a.seed,
        optimizer: OptimizerConfig::default(),
    })?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .with_context(|| format!("binding {}", a.listen))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        prefopt_service::serve(listener, state).await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Bench { command: BenchCommand::Run(a) } => bench_run(a),
        Command::Render(a) => render(a),
        Command::Serve(a) => serve(a),
    }
}
