use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use looplens::report::{cmd_analyze, cmd_detect, cmd_run, cmd_synth, RunConfig};
use looplens::synthlab::SynthScenario;

#[derive(Parser)]
#[command(name = "looplens", version, about = "Bike-sharing self-loop detection and modelling")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "LOOPLENS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city with ground truth and a ready-to-run config.
    Synth(SynthArgs),
    /// Detect self-loops and write intensity tables.
    Detect(ConfigArgs),
    /// Fit Moran, VIF, SAR, DML and CATE reports from intensity tables.
    Analyze(ConfigArgs),
    /// detect followed by analyze.
    Run(ConfigArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bikes: Option<usize>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    loop_propensity: Option<f64>,
    #[arg(long)]
    reposition_rate: Option<f64>,
    #[arg(long)]
    stations: Option<usize>,
    /// City side length in metres.
    #[arg(long)]
    extent: Option<f64>,
    /// Street blocks per side.
    #[arg(long)]
    street_blocks: Option<usize>,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    cell_size: Option<f64>,
}

impl ConfigArgs {
    /// Loads the config file and applies flag overrides. Paths given as
    /// flags are taken relative to the working directory.
    fn load(&self) -> looplens::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        let cwd = std::env::current_dir().map_err(|e| looplens::Error::io(".", e))?;
        if let Some(p) = &self.events {
            cfg.paths.events = Some(cwd.join(p));
        }
        if let Some(p) = &self.output {
            cfg.paths.output = cwd.join(p);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.window_days {
            cfg.window_days = d;
        }
        if let Some(c) = self.cell_size {
            cfg.grid.cell_size = c;
        }
        Ok(cfg)
    }
}

fn synth(args: &SynthArgs) -> looplens::Result<()> {
    let mut sc = SynthScenario::default();
    if let Some(v) = args.seed {
        sc.seed = v;
    }
    if let Some(v) = args.bikes {
        sc.n_bikes = v;
    }
    if let Some(v) = args.days {
        sc.days = v;
    }
    if let Some(v) = args.loop_propensity {
        sc.loop_propensity = v;
    }
    if let Some(v) = args.reposition_rate {
        sc.reposition_rate = v;
    }
    if let Some(v) = args.stations {
        sc.n_stations = v;
    }
    if let Some(v) = args.extent {
        sc.extent_m = v;
    }
    if let Some(v) = args.street_blocks {
        sc.street_blocks = v;
    }
    for path in cmd_synth(&sc, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn execute(command: &Command) -> Result<(), (String, i32)> {
    let config_error = |e: looplens::Error| {
        let code = if e.is_input_error() { 2 } else { 1 };
        (format!("[config] {e}"), code)
    };
    let stage_error = |e: looplens::report::StageError| (e.to_string(), e.exit_code());
    match command {
        Command::Synth(args) => synth(args).map_err(|e| {
            let code = if e.is_input_error() { 2 } else { 1 };
            (format!("[synth] {e}"), code)
        }),
        Command::Detect(args) => {
            let cfg = args.load().map_err(config_error)?;
            let m = cmd_detect(&cfg).map_err(stage_error)?;
            println!("{} loops, proportion {:.4}", m.total_loops, m.self_loop_proportion);
            Ok(())
        }
        Command::Analyze(args) => {
            let cfg = args.load().map_err(config_error)?;
            cmd_analyze(&cfg).map_err(stage_error)?;
            println!("reports written to {}", cfg.output_dir().display());
            Ok(())
        }
        Command::Run(args) => {
            let cfg = args.load().map_err(config_error)?;
            let (m, _) = cmd_run(&cfg).map_err(stage_error)?;
            println!("{} loops, proportion {:.4}", m.total_loops, m.self_loop_proportion);
            println!("reports written to {}", cfg.output_dir().display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| execute(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
