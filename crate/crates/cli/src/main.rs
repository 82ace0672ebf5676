use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bistrack::channel::write_frame_dump;
use bistrack::metrics::{write_epoch_csv, write_summary_csv, Aggregator, Mode};
use bistrack::scenario::{load_config, Architecture, ScenarioConfig};
use bistrack::sim::{run_sweep, synthesize_epoch_frame, stream_seed, Scenario, SweepRequest};

#[derive(Parser)]
#[command(name = "bistrack", version, about = "Bistatic sensing-assisted beam tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo runs at a single transmit power.
    Run(SimArgs),
    /// Monte Carlo runs over a list of transmit powers.
    Sweep(SimArgs),
    /// Writes the echo frame one receiver records at one epoch.
    DumpFrame(DumpArgs),
    /// Prints the effective configuration as JSON.
    PrintConfig(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Digital,
    Hda,
}

#[derive(Clone, Copy, ValueEnum)]
enum YesNo {
    Yes,
    No,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Receiver architecture; overrides the config.
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// rx0, rx1, ..., fuse, oracle or all; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    mode: Vec<String>,
    /// Monte Carlo runs; overrides the config.
    #[arg(long)]
    runs: Option<u32>,
    /// Transmit powers in dBm, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    power_dbm: Vec<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core, 1 runs serially.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Keep the per-epoch CSV (default: yes for run, no for sweep).
    #[arg(long, value_enum)]
    emit_epochs: Option<YesNo>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 0)]
    run: u32,
    #[arg(long)]
    epoch: usize,
    /// Receiver index.
    #[arg(long)]
    rx: usize,
    /// Transmit power in dBm; the config value when omitted.
    #[arg(long, allow_negative_numbers = true)]
    power_dbm: Option<f64>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunSeed {
    run_id: u32,
    seed: u64,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config_hash: String,
    master_seed: u64,
    seeds: Vec<RunSeed>,
    output_dir: String,
    modes: Vec<String>,
    power_dbm: Vec<f64>,
    architecture: &'static str,
    timestamp_unix_s: u64,
}

fn load(common: &CommonArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(arch) = common.arch {
        cfg.receiver.architecture = match arch {
            ArchArg::Digital => Architecture::Digital,
            ArchArg::Hda => Architecture::Hda,
        };
    }
    if let Some(seed) = common.seed {
        cfg.seeds.master = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_modes(names: &[String], scn: &Scenario<f64>) -> Result<Vec<Mode>> {
    let mut modes = Vec::new();
    for name in names {
        if name == "all" {
            modes.extend(scn.all_modes());
        } else {
            modes.push(name.parse::<Mode>().map_err(anyhow::Error::msg)?);
        }
    }
    modes.sort();
    modes.dedup();
    if modes.is_empty() {
        bail!("no modes requested");
    }
    Ok(modes)
}

fn simulate(args: SimArgs, sweep: bool) -> Result<()> {
    let cfg = load(&args.common)?;
    let scn = Scenario::<f64>::from_config(&cfg)?;
    let modes = parse_modes(&args.mode, &scn)?;
    let powers = match (args.power_dbm.is_empty(), sweep) {
        (false, false) if args.power_dbm.len() > 1 => {
            bail!("run takes one --power-dbm value; use sweep for a list")
        }
        (false, _) => args.power_dbm.clone(),
        (true, false) => vec![cfg.system.tx_power_dbm],
        (true, true) => cfg.sweep.power_dbm.clone(),
    };
    if powers.is_empty() {
        bail!("empty power list");
    }
    let runs = match args.runs {
        Some(r) => r,
        None => u32::try_from(cfg.sweep.runs).context("runs in config")?,
    };
    if runs == 0 {
        bail!("--runs must be positive");
    }
    let emit = match args.emit_epochs {
        Some(YesNo::Yes) => true,
        Some(YesNo::No) => false,
        None => !sweep,
    };
    let req = SweepRequest {
        runs,
        first_run: 0,
        powers_dbm: powers.clone(),
        modes: modes.clone(),
        master_seed: cfg.seeds.master,
        workers: args.workers,
    };
    let records = run_sweep(&scn, &req)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if emit {
        write_epoch_csv(create(&args.out.join("epochs.csv"))?, scn.n_receivers(), &records)?;
    }
    let mut agg = Aggregator::new(scn.config_hash.clone());
    agg.extend(&records)?;
    write_summary_csv(create(&args.out.join("summary.csv"))?, &agg.finish().summaries)?;

    let manifest = RunManifest {
        command: if sweep { "sweep" } else { "run" },
        config_hash: scn.config_hash.clone(),
        master_seed: cfg.seeds.master,
        seeds: (0..runs)
            .map(|r| RunSeed {
                run_id: r,
                seed: stream_seed(cfg.seeds.master, r, 0, 0, 0),
            })
            .collect(),
        output_dir: args.out.display().to_string(),
        modes: modes.iter().map(ToString::to_string).collect(),
        power_dbm: powers,
        architecture: match cfg.receiver.architecture {
            Architecture::Digital => "digital",
            Architecture::Hda => "hda",
        },
        timestamp_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    serde_json::to_writer_pretty(create(&args.out.join("manifest.json"))?, &manifest)?;
    Ok(())
}

fn dump_frame(args: DumpArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let scn = Scenario::<f64>::from_config(&cfg)?;
    let power = args.power_dbm.unwrap_or(cfg.system.tx_power_dbm);
    let frame = synthesize_epoch_frame(&scn, args.run, args.epoch, args.rx, power, cfg.seeds.master)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_frame_dump(&frame, create(&args.out)?)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => simulate(a, false),
        Command::Sweep(a) => simulate(a, true),
        Command::DumpFrame(a) => dump_frame(a),
        Command::PrintConfig(a) => load(&a).and_then(|cfg| {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
