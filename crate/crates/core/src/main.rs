use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mirage_sim::defender::{write_precoder_csv, ObfuscationMode};
use mirage_sim::geometry::{Vec2, GeometryError};
use mirage_sim::harness::experiment::profile_path;
use mirage_sim::harness::{
    emit_outputs, precoder_at, run_experiment, run_single, summarize, HarnessError, RunOptions,
    ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "mirage-sim", version, about = "Wi-Fi AoA obfuscation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output location.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the CSI SNR in dB (`inf` disables noise).
    #[arg(long)]
    snr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo run over random user positions.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override the number of user positions.
        #[arg(long)]
        positions: Option<usize>,
        /// Write every attacker profile under <out>/profiles.
        #[arg(long)]
        dump_profiles: bool,
    },
    /// Attacker profiles for one user position.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_position)]
        position: Vec2,
        #[arg(long)]
        policy: ObfuscationMode,
        /// Report only this AP.
        #[arg(long)]
        ap: Option<usize>,
    },
    /// Per-subcarrier precoder weights for one user position.
    Precoder {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_position)]
        position: Vec2,
        #[arg(long)]
        policy: ObfuscationMode,
    },
}

fn parse_position(s: &str) -> Result<Vec2, String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected x,y but got '{s}'"))?;
    let x: f64 = x.trim().parse().map_err(|e| format!("bad x '{x}': {e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("bad y '{y}': {e}"))?;
    Ok(Vec2::new(x, y))
}

fn load(common: &Common) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    if let Some(snr) = common.snr {
        cfg.snr_db = snr;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            common,
            positions,
            dump_profiles,
        } => {
            let mut cfg = load(&common)?;
            if let Some(n) = positions {
                cfg.num_positions = n;
            }
            let outdir = cfg.output_dir.clone();
            let options = RunOptions {
                profile_dir: dump_profiles.then(|| outdir.join("profiles")),
            };
            let records = run_experiment(&cfg, &options)?;
            let summary = summarize(&records);
            let files = emit_outputs(&cfg, &records, &summary, &outdir)?;
            let policies: Vec<_> = summary
                .policies
                .iter()
                .map(|p| {
                    json!({
                        "policy": p.label,
                        "aoa_error_mean_deg": finite(p.aoa.mean),
                        "triangulation_rmse_m": finite(p.triangulation.rmse),
                        "rssi_delta_db": finite(p.rssi_delta_db),
                    })
                })
                .collect();
            println!(
                "{}",
                json!({
                    "status": "ok",
                    "trials": summary.trials,
                    "failed_trials": summary.failed_trials,
                    "files": files,
                    "policies": policies,
                })
            );
        }
        Command::Profile {
            common,
            position,
            policy,
            ap,
        } => {
            let mut cfg = load(&common)?;
            cfg.policies.retain(|p| p.mode == policy);
            if cfg.policies.is_empty() {
                cfg.policies.push(mirage_sim::defender::ObfuscationPolicy::new(policy));
            }
            let outdir = cfg.output_dir.clone();
            let record = run_single(&cfg, position, 0, Some(outdir.clone()))?;
            if let Some(reason) = &record.failure {
                return Err(HarnessError::Config(format!("trial failed: {reason}")));
            }
            let outcome = record
                .outcomes
                .iter()
                .find(|o| o.policy.mode == policy)
                .expect("requested policy is always run");
            if let Some(reason) = &outcome.error {
                return Err(HarnessError::Config(format!("policy failed: {reason}")));
            }
            if let Some(k) = ap {
                if k >= outcome.aps.len() {
                    return Err(GeometryError::BadApIndex {
                        index: k,
                        count: outcome.aps.len(),
                    }
                    .into());
                }
            }
            let aps: Vec<_> = outcome
                .aps
                .iter()
                .filter(|o| ap.is_none_or(|k| k == o.ap))
                .map(|o| {
                    let (angle, distance) = match &o.estimate {
                        Ok(p) => (Some(p.angle.to_degrees()), Some(p.distance)),
                        Err(_) => (None, None),
                    };
                    json!({
                        "ap": o.ap,
                        "serving": Some(o.ap) == record.serving_ap,
                        "true_aoa_deg": o.true_aoa.to_degrees(),
                        "est_aoa_deg": angle,
                        "est_distance_m": distance,
                        "aoa_error_deg": o.aoa_error_deg,
                        "rssi_db": finite(o.rssi_db),
                        "profile": o.estimate.is_ok().then(|| profile_path(&outdir, 0, &outcome.label, o.ap)),
                    })
                })
                .collect();
            println!(
                "{}",
                json!({
                    "status": "ok",
                    "policy": outcome.label,
                    "applied_policy": outcome.applied.name(),
                    "d_obf_m": outcome.d_obf,
                    "aps": aps,
                })
            );
        }
        Command::Precoder {
            common,
            position,
            policy,
        } => {
            let cfg = load(&common)?;
            let (w, knowledge, applied, d_obf) = precoder_at(&cfg, position, policy)?;
            match &common.out {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
                    }
                    let file = std::fs::File::create(path).map_err(io_err(path))?;
                    write_precoder_csv(&w, std::io::BufWriter::new(file))?;
                    println!(
                        "{}",
                        json!({
                            "status": "ok",
                            "file": path,
                            "applied_policy": applied.name(),
                            "d_obf_m": d_obf,
                            "knowledge": knowledge,
                        })
                    );
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    write_precoder_csv(&w, &mut lock)?;
                    lock.flush().map_err(io_err(Path::new("<stdout>")))?;
                }
            }
        }
    }
    Ok(())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "kind": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
