use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use testbed::{campaigns, default_world, reports, Coordinator, ServerConfig};
use testbed_core::coordinator::campaign::{self, CampaignConfig, CampaignSpec, GridParams, RepeatabilityParams, SyncParams};
use testbed_core::coordinator::WorldConfig;
use testbed_core::dut::{Behavior, FirmwareImage, Manifest};
use testbed_core::text;

#[derive(Parser)]
#[command(name = "testbed", version, about = "Simulated UWB testbed coordinator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the coordinator with its REST API over a live simulated world.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Holds the action journal and the reports directory.
        #[arg(long, default_value = "testbed-data")]
        data_dir: PathBuf,
        /// World config file; the built-in world is used when absent.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Seed for the built-in world.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Virtual seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Run one campaign in virtual time and write its report files.
    Campaign {
        config: PathBuf,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        /// Directory name under `out`; defaults to the next free number.
        #[arg(long)]
        id: Option<String>,
    },
    /// Print a default config to start editing from.
    Config { kind: ConfigKind },
    #[command(subcommand)]
    Firmware(FirmwareCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    World,
    Grid,
    Sync,
    Repeatability,
}

#[derive(Subcommand)]
enum FirmwareCmd {
    /// Build a firmware file from a behavior, parameters and an optional blob.
    Pack {
        #[arg(long)]
        behavior: String,
        /// Manifest parameter as key=value; repeatable.
        #[arg(long = "param", value_parser = parse_kv)]
        params: Vec<(String, String)>,
        #[arg(long)]
        blob: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check a firmware file and print its manifest.
    Inspect { file: PathBuf },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected key=value, got {s:?}"))
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn read_text<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Box<dyn std::error::Error>> {
    let s = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text::from_text(&s).map_err(|e| format!("{}: {e}", path.display()))?)
}

async fn serve(addr: SocketAddr, data_dir: PathBuf, world: Option<PathBuf>, seed: u64, speed: f64) -> CliResult {
    let world: WorldConfig = match world {
        Some(p) => read_text(&p)?,
        None => default_world(seed),
    };
    let coord = Coordinator::start(&ServerConfig { data_dir: data_dir.clone(), world, speed })?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}, data in {}", listener.local_addr()?, data_dir.display());
    axum::serve(listener, coord.app())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn run_campaign(config: &Path, out: &Path, id: Option<String>) -> CliResult {
    let cfg: CampaignConfig = read_text(config)?;
    let id = id.unwrap_or_else(|| (campaigns::last_id(out) + 1).to_string());
    let mut last = -1i32;
    let report = campaign::run(&cfg, &mut |p| {
        let pct = (p * 100.0) as i32;
        if pct / 10 != last / 10 {
            last = pct;
            eprintln!("{pct:3}%");
        }
    })?;
    let paths = reports::write(out, &id, &report)?;
    println!("{}", paths.text.display());
    if let Some(e) = &report.error {
        eprintln!("campaign incomplete: {e}");
    }
    Ok(())
}

fn print_config(kind: ConfigKind) -> CliResult {
    let s = match kind {
        ConfigKind::World => text::to_text_pretty(&default_world(0))?,
        ConfigKind::Grid => text::to_text_pretty(&CampaignConfig::new(1, CampaignSpec::Grid(GridParams::default())))?,
        ConfigKind::Sync => text::to_text_pretty(&CampaignConfig::new(7, CampaignSpec::Sync(SyncParams::default())))?,
        ConfigKind::Repeatability => {
            text::to_text_pretty(&CampaignConfig::new(42, CampaignSpec::Repeatability(RepeatabilityParams::default())))?
        }
    };
    println!("{s}");
    Ok(())
}

fn firmware(cmd: FirmwareCmd) -> CliResult {
    match cmd {
        FirmwareCmd::Pack { behavior, params, blob, output } => {
            let behavior: Behavior =
                text::from_text(&format!("{behavior:?}")).map_err(|_| format!("unknown behavior {behavior:?}"))?;
            let mut manifest = Manifest::new(behavior);
            manifest.params.extend(params);
            let blob = match blob {
                Some(p) => std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?,
                None => Vec::new(),
            };
            let bytes = FirmwareImage::new(manifest, blob).encode();
            std::fs::write(&output, &bytes)?;
            println!("{} ({} bytes)", output.display(), bytes.len());
        }
        FirmwareCmd::Inspect { file } => {
            let image = FirmwareImage::decode(&std::fs::read(&file)?)?;
            println!("{}", text::to_text_pretty(&image.manifest)?);
            println!("blob {} bytes, crc32 {:08x}", image.blob.len(), image.checksum);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().cmd {
        Cmd::Serve { addr, data_dir, world, seed, speed } => tokio::runtime::Runtime::new()
            .map_err(Into::into)
            .and_then(|rt| rt.block_on(serve(addr, data_dir, world, seed, speed))),
        Cmd::Campaign { config, out, id } => run_campaign(&config, &out, id),
        Cmd::Config { kind } => print_config(kind),
        Cmd::Firmware(cmd) => firmware(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
