use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use fsolink::channel::{coherence_time, ModelOverride};
use fsolink::runtime::{run_scenario, ConfigError, Engine, RuntimeError, ScenarioConfig, SourceData};
use fsolink_server::{serve_control, ServeError, ServeOptions};

#[derive(Parser)]
#[command(name = "fsolink", version, about = "Free-space optical link emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write report.jsonl plus received frames.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; without it only the summary is printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario live behind the HTTP/WebSocket control API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_name = "ADDR:PORT")]
        listen: String,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Print the two canonical scenarios.
    Scenarios {
        /// Also write them as low.json and high.json into this directory.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Io(e.to_string())
        }
    }
}

impl From<ServeError> for Failure {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Runtime(e) => e.into(),
            e => Failure::Io(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out.as_deref()),
        Command::Serve { config, listen, speed } => serve(&config, &listen, speed),
        Command::Scenarios { write } => scenarios(write.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut config = ScenarioConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    let config = load(path, seed)?;
    let outcome = run_scenario(&config, out)?;
    let s = &outcome.summary;
    println!(
        "{} ticks, ber pre/post fec {:.3e}/{:.3e}, packets lost {}/{}, frames concealed {}/{}",
        s.ticks,
        s.ber_pre_fec,
        s.ber_post_fec,
        s.packets_lost,
        s.packets_sent + s.packets_unsent,
        s.frames_concealed,
        s.frames_total
    );
    if let Some(dir) = out {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn serve(path: &Path, listen: &str, speed: f64) -> Result<(), Failure> {
    if speed.is_nan() || speed <= 0.0 {
        return Err(Failure::Validation(format!("--speed must be > 0, got {speed}")));
    }
    let config = load(path, None)?;
    let source = SourceData::load(&config)?;
    let engine = Engine::new(config, source)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    rt.block_on(async {
        let mut server = serve_control(engine, listen, ServeOptions { speed }).await?;
        eprintln!("listening on http://{}", server.local_addr());
        tokio::select! {
            done = server.wait_engine() => {
                if let Some(summary) = done {
                    let s = summary?;
                    eprintln!("run finished: {} ticks, ber post fec {:.3e}; still serving, ctrl-c to stop", s.ticks, s.ber_post_fec);
                }
                let _ = tokio::signal::ctrl_c().await;
            }
            _ = tokio::signal::ctrl_c() => {}
        }
        server.shutdown();
        Ok(())
    })
}

fn scenarios(write: Option<&Path>) -> Result<(), Failure> {
    let list = [("low", ScenarioConfig::canonical_low()), ("high", ScenarioConfig::canonical_high())];
    println!("{:<6} {:>10} {:>12} {:>10} {:>12} {:>10}", "name", "cn2", "wind [m/s]", "rytov", "regime", "tau_c [ms]");
    for (name, config) in &list {
        let ch = &config.channel;
        let rytov = ch.rytov_variance().map_err(|e| Failure::Validation(e.to_string()))?;
        let tau = coherence_time(ch.wind_speed, ch.wavelength, ch.distance).map_err(|e| Failure::Validation(e.to_string()))?;
        let regime = match ch.model {
            ModelOverride::Auto if rytov == 0.0 => "none",
            ModelOverride::Auto if rytov < 1.0 => "log-normal",
            ModelOverride::Auto | ModelOverride::GammaGamma => "gamma-gamma",
            ModelOverride::LogNormal => "log-normal",
            ModelOverride::None => "none",
        };
        println!(
            "{name:<6} {:>10.1e} {:>12} {:>10.4} {:>12} {:>10.3}",
            ch.cn2,
            ch.wind_speed,
            rytov,
            regime,
            tau * 1e3
        );
    }
    if let Some(dir) = write {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        for (name, config) in &list {
            let path = dir.join(format!("{name}.json"));
            fs::write(&path, config.to_json_pretty() + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}
