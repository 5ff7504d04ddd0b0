use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use verf_core::harness::{
    emit_summary, read_summary_settings, report_from_csv, run_experiment_streaming, ExperimentConfig, HarnessError, TrialsCsvWriter,
};
use verf_core::scene::{load_image, ImageDirectoryBackend, SceneError};
use verf_core::{disparity_check, verf_light, verf_pnp, CameraIntrinsics, MonitorConfig, MonitorError, Pose, VerificationReport};

const DEFAULT_OUTPUT_DIR: &str = "verf-output";

#[derive(Parser)]
#[command(name = "verf", version, about = "Check camera position estimates against a sensor image")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch experiment described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify one pose estimate against stored renders.
    Verify {
        /// Sensor image (PNG).
        #[arg(long)]
        image: PathBuf,
        /// Camera-to-world `[R | t]`, 12 comma-separated numbers in row-major order.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Focal length in pixels when the manifest carries no intrinsics.
        #[arg(long)]
        focal: Option<f64>,
    },
    /// Rebuild summary.csv and scatter.svg from a trials.csv.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Error radius; read from a summary.csv beside the records when omitted.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        cutoff: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Light,
    Pnp,
    Disparity,
}

enum Failure {
    Config(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io(_) => Failure::Io(e.to_string()),
            HarnessError::Scene(s) => s.into(),
            HarnessError::Config(_) | HarnessError::Monitor(_) => Failure::Config(e.to_string()),
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io(_) | SceneError::ImageDecode(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<MonitorError> for Failure {
    fn from(e: MonitorError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.apply_env_seed()?;
    let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let mut writer = TrialsCsvWriter::create(&out.join("trials.csv"))?;
    let mut records = Vec::new();
    let summary = run_experiment_streaming(&cfg, &mut |r| {
        writer.write(r)?;
        records.push(r.clone());
        Ok(())
    })?;
    emit_summary(&records, &summary, cfg.monitor.confidence_cutoff, &out)?;
    println!("{:<14} {:>8} {:>14} {:>8}", "method", "all %", "band-excl. %", "failed");
    for m in &summary.methods {
        println!("{:<14} {:>8.1} {:>14.1} {:>8}", m.method.as_str(), m.all.total_correct_pct(), m.band_excluded.total_correct_pct(), m.all.failed);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn report_json(r: &VerificationReport) -> serde_json::Value {
    let vec3 = |v: Option<nalgebra::Vector3<f64>>| v.map(|v| vec![v.x, v.y, v.z]);
    json!({
        "method": r.method.as_str(),
        "confidence": r.confidence,
        "decision": r.decision.as_str(),
        "direction_estimate": vec3(r.direction_estimate),
        "n": r.n,
        "n_prime": r.n_prime,
        "n_double_prime": r.n_double_prime,
        "estimated_offset": vec3(r.estimated_offset),
        "corrected_pose": r.corrected_pose.map(|p| p.to_row_major().to_vec()),
        "failure_reason": r.failure_reason.map(|f| f.as_str()),
        "detail": r.detail,
    })
}

fn parse_pose(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Failure::Config(format!("--pose: {v:?}: {e}"))))
        .collect()
}

fn verify(image: &Path, pose: &str, manifest: &Path, epsilon: f64, method: MethodArg, focal: Option<f64>) -> Result<(), Failure> {
    let pose = parse_pose(pose)?;
    if pose.len() != 12 {
        return Err(Failure::Config(format!("--pose needs 12 numbers, got {}", pose.len())));
    }
    let x_est = Pose::from_row_major(&pose).map_err(|e| Failure::Config(format!("--pose: {e}")))?;
    let sensor = load_image(image)?;
    let fallback = focal.map(|f| CameraIntrinsics::centered(f, sensor.width(), sensor.height()));
    let backend = ImageDirectoryBackend::open(manifest, fallback)?;
    let cfg = MonitorConfig::with_epsilon(epsilon);
    let report = match method {
        MethodArg::Light => verf_light(&sensor, &x_est, &backend, &backend, &cfg, None)?,
        MethodArg::Pnp => verf_pnp(&sensor, &x_est, &backend, &backend, &cfg)?,
        MethodArg::Disparity => disparity_check(&sensor, &x_est, &backend, &backend, &cfg)?,
    };
    println!("{}", serde_json::to_string_pretty(&report_json(&report)).expect("json"));
    Ok(())
}

fn report(records: &Path, out: &Path, epsilon: Option<f64>, cutoff: f64) -> Result<(), Failure> {
    if !records.is_file() {
        return Err(Failure::Io(format!("{} does not exist", records.display())));
    }
    let (epsilon, band) = match epsilon {
        Some(e) if e > 0.0 => (e, [0.8, 1.2]),
        Some(_) => return Err(Failure::Config("--epsilon must be positive".into())),
        None => {
            let sibling = records.with_file_name("summary.csv");
            if !sibling.is_file() {
                return Err(Failure::Config(format!("no --epsilon given and no {} to read it from", sibling.display())));
            }
            read_summary_settings(&sibling)?
        }
    };
    let summary = report_from_csv(records, epsilon, band, cutoff, out)?;
    for m in &summary.methods {
        println!("{:<14} {:>6.1}% ({:.1}% band-excluded)", m.method.as_str(), m.all.total_correct_pct(), m.band_excluded.total_correct_pct());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Verify { image, pose, manifest, epsilon, method, focal } => verify(&image, &pose, &manifest, epsilon, method, focal),
        Command::Report { records, out, epsilon, cutoff } => report(&records, &out, epsilon, cutoff),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(msg) | Failure::Io(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
