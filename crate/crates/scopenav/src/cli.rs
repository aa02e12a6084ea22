//! Subcommands behind the `scopenav` binary: generate, train, eval,
//! infer, ingest. Exit codes: 0 success, 2 validation/config error,
//! 3 runtime numeric error, 4 i/o error.
//!
//! Progress goes to stderr (silence it with `SCOPENAV_LOG=quiet`);
//! results and tables go to files or stdout.

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{load_run_config, RunConfig};
use crate::data::{
    ingest_yolo_labels, read_dataset, records_from_trajectory, sequence_at, windows,
    write_dataset, ClassMap, FrameRecord,
};
use crate::error::{Error, Result};
use crate::eval::{
    angle_errors, angle_errors_with, depth_correlation, depth_correlation_with, guidance_delta,
    labeled_sequences, latent_spread, latent_spread_with, write_report, EvalReport,
};
use crate::geometry::latent_to_angle;
use crate::model::{LatentCode, ModelParams};
use crate::scene::{default_scene, generate_trajectory, read_scene_file};
use crate::training::{train_with, EpochStats};

#[derive(Parser)]
#[command(
    name = "scopenav",
    version,
    about = "Unsupervised surgical-path and camera-angle embedding from detection sequences"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic corridor trajectory into a dataset file
    Generate(GenerateArgs),
    /// Train the autoencoder on a dataset and write a run directory
    Train(TrainArgs),
    /// Evaluate a checkpoint: angle errors, depth correlation, spread
    Eval(EvalArgs),
    /// Emit per-window latents (and guidance deltas) as a table
    Infer(InferArgs),
    /// Convert a YOLO label directory into a dataset file
    Ingest(IngestArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scene spec file (TOML); omitted: the seeded default scene [default: 8 structures]
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Frames to render [default: 4000]
    #[arg(long)]
    frames: Option<usize>,
    /// Forward+backward corridor sweeps [default: 4]
    #[arg(long)]
    passes: Option<usize>,
    /// Seed for the scene and the camera walk [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Run config supplying scene/trajectory knobs (flags win)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset file
    #[arg(long)]
    data: PathBuf,
    /// Run config (TOML) [default: built-in defaults]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to create (config snapshot, history, checkpoints)
    #[arg(long)]
    out: PathBuf,
    /// Train the rotation-free baseline instead
    #[arg(long, default_value_t = false)]
    no_rotation: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Labeled dataset file (synthetic, with poses)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate (optional in --oracle mode)
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Report file to write (TOML)
    #[arg(long)]
    report: PathBuf,
    /// Depth bins for the spread report [default: 10]
    #[arg(long)]
    bins: Option<usize>,
    /// Window stride for angle/correlation reports [default: 16]
    #[arg(long)]
    stride: Option<usize>,
    /// Run config (TOML) [default: built-in defaults]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the model with a ground-truth oracle (value: "depth")
    #[arg(long, hide = true)]
    oracle: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint to run
    #[arg(long)]
    ckpt: PathBuf,
    /// Input dataset file
    #[arg(long)]
    data: PathBuf,
    /// Output table (TSV): video, frame, z1, pitch_deg, yaw_deg
    #[arg(long)]
    out: PathBuf,
    /// Reference latent "z1,z2,z3"; adds guidance-delta columns
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of per-frame YOLO label files (or one subdir per video)
    #[arg(long)]
    yolo_dir: PathBuf,
    /// Total class count of the detector
    #[arg(long)]
    classes: usize,
    /// Comma-separated class ids to drop (e.g. the instrument class)
    #[arg(long)]
    drop: Option<String>,
    /// Keep every k-th frame [default: 1]
    #[arg(long)]
    stride: Option<u64>,
    /// Output dataset file
    #[arg(long)]
    out: PathBuf,
}

fn chatty() -> bool {
    std::env::var("SCOPENAV_LOG")
        .map(|v| v != "quiet")
        .unwrap_or(true)
}

macro_rules! progress {
    ($($arg:tt)*) => {
        if chatty() {
            eprintln!($($arg)*);
        }
    };
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Ingest(a) => cmd_ingest(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Input(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            require_file(p, "config file")?;
            load_run_config(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = args
        .seed
        .unwrap_or_else(|| cfg.resolve_seed(cfg.trajectory.seed, 7));
    let scene = match &args.scene {
        Some(path) => {
            require_file(path, "scene file")?;
            read_scene_file(path)?
        }
        None => default_scene(
            cfg.scene.n_structures,
            cfg.resolve_seed(cfg.scene.seed, seed),
        )?,
    };
    let mut traj = cfg.trajectory.to_trajectory_config(seed)?;
    if let Some(frames) = args.frames {
        traj.n_frames = frames;
    }
    if let Some(passes) = args.passes {
        traj.n_passes = passes;
    }
    traj.validate()?;

    progress!(
        "rendering {} frames over {} passes (seed {seed})",
        traj.n_frames,
        traj.n_passes
    );
    let frames = generate_trajectory(&scene, &traj)?;
    let records = records_from_trajectory("synth", &frames);
    write_dataset(&records, &args.out)?;
    progress!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

const HISTORY_HEADER: &str = "epoch\tlr\ttotal\tbce\tbox\tcentering";

fn cmd_train(args: TrainArgs) -> Result<()> {
    require_file(&args.data, "data file")?;
    let cfg = load_config(&args.config)?;
    let records = read_dataset(&args.data)?;
    let n_classes = records
        .first()
        .map(|r| r.detections.n_classes())
        .ok_or_else(|| Error::Input("dataset is empty".into()))?;

    let mut model_cfg = cfg
        .model
        .to_model_config(n_classes, cfg.resolve_seed(cfg.model.seed, 11));
    if args.no_rotation {
        model_cfg.rotation_enabled = false;
    }
    let train_cfg = cfg
        .training
        .to_train_config(cfg.resolve_seed(cfg.training.seed, 0))?;
    model_cfg.validate()?;

    std::fs::create_dir_all(&args.out)?;
    let snapshot = RunSnapshot {
        format: "scopenav-run".into(),
        version: 1,
        data: args.data.display().to_string(),
        model: model_cfg.clone(),
        training: train_cfg.clone(),
    };
    std::fs::write(
        args.out.join("config.toml"),
        toml::to_string_pretty(&snapshot).map_err(|e| Error::Config(e.to_string()))?,
    )?;

    let mut history_text = String::from(HISTORY_HEADER);
    history_text.push('\n');
    progress!(
        "training {} epochs on {} records ({} classes)",
        train_cfg.epochs,
        records.len(),
        n_classes
    );
    let out_dir = args.out.clone();
    let checkpoint_every = train_cfg.checkpoint_every;
    let epochs = train_cfg.epochs;
    let (params, history) = train_with(&records, &model_cfg, &train_cfg, |stats, params| {
        let EpochStats {
            epoch,
            learning_rate,
            mean_loss: m,
        } = stats;
        writeln!(
            history_text,
            "{epoch}\t{learning_rate}\t{}\t{}\t{}\t{}",
            m.total, m.bce_term, m.box_term, m.centering_term
        )
        .expect("string write");
        if chatty() && (epoch % 25 == 0 || epoch + 1 == epochs) {
            eprintln!(
                "epoch {epoch}: loss {:.6} (lr {learning_rate:.2e})",
                m.total
            );
        }
        if checkpoint_every > 0 && (epoch + 1) % checkpoint_every == 0 {
            params.save(&out_dir.join(format!("model_epoch_{epoch}.ckpt")))?;
        }
        Ok(())
    })?;

    std::fs::write(args.out.join("history.tsv"), history_text)?;
    params.save(&args.out.join("model_final.ckpt"))?;
    let first = history.get(1).or_else(|| history.first());
    let last = history.last();
    if let (Some(first), Some(last)) = (first, last) {
        progress!(
            "done: loss {:.6} -> {:.6}; run directory {}",
            first.total,
            last.total,
            args.out.display()
        );
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct RunSnapshot {
    format: String,
    version: u32,
    data: String,
    model: crate::model::ModelConfig,
    training: crate::training::TrainConfig,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    require_file(&args.data, "data file")?;
    let cfg = load_config(&args.config)?;
    let records = read_dataset(&args.data)?;
    let stride = args.stride.unwrap_or(cfg.eval.stride);
    let bins = args.bins.unwrap_or(cfg.eval.n_bins);

    let mut report = EvalReport::new();
    match args.oracle.as_deref() {
        Some("depth") => {
            // Ground-truth oracle: z1 = d / max depth, perfect angles.
            let seq_len = cfg.model.seq_len;
            let max_d = records
                .iter()
                .filter_map(|r| r.pose.map(|p| p.depth))
                .fold(f64::NEG_INFINITY, f64::max);
            if !max_d.is_finite() || max_d <= 0.0 {
                return Err(Error::Input("oracle mode needs posed records".into()));
            }
            let z1_of =
                |_: &_, last: &FrameRecord| Ok(last.pose.expect("validated above").depth / max_d);
            report.depth_correlation =
                Some(depth_correlation_with(z1_of, &records, seq_len, stride)?);
            report.latent_spread =
                Some(latent_spread_with(z1_of, &records, seq_len, bins, "oracle")?);
            let items = labeled_sequences(&records, seq_len, stride)?;
            let truth: Vec<_> = items.iter().map(|(_, p)| *p).collect();
            let idx = std::cell::Cell::new(0usize);
            report.angle_errors = Some(angle_errors_with(
                |_| {
                    let k = idx.get();
                    idx.set(k + 1);
                    Ok((truth[k].pitch.degrees(), truth[k].yaw.degrees()))
                },
                &items,
            )?);
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown oracle {other:?}; supported: depth"
            )));
        }
        None => {
            let ckpt = args
                .ckpt
                .as_ref()
                .ok_or_else(|| Error::Config("--ckpt is required without --oracle".into()))?;
            require_file(ckpt, "checkpoint")?;
            let params = ModelParams::load(ckpt)?;
            let items = labeled_sequences(&records, params.config().seq_len, stride)?;
            report.angle_errors = Some(angle_errors(&params, &items)?);
            report.depth_correlation = Some(depth_correlation(&params, &records, stride)?);
            report.latent_spread = Some(latent_spread(&params, &records, bins)?);
        }
    }

    write_report(&report, &args.report)?;
    if let Some(a) = &report.angle_errors {
        progress!(
            "angles: mean abs pitch {:.3} deg, yaw {:.3} deg over {} sequences",
            a.mean_abs_pitch_err,
            a.mean_abs_yaw_err,
            a.n_sequences
        );
    }
    if let Some(c) = &report.depth_correlation {
        progress!(
            "depth correlation: r = {:.4} (|r| = {:.4})",
            c.pearson_r,
            c.abs_r
        );
    }
    if let Some(s) = &report.latent_spread {
        progress!(
            "latent spread ({}): mean range {:.5} over {} bins",
            s.variant,
            s.mean_range,
            s.n_bins
        );
    }
    progress!("report written to {}", args.report.display());
    Ok(())
}

fn parse_reference(text: &str) -> Result<LatentCode> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad --reference {text:?}: {e}")))?;
    if vals.len() != 3 {
        return Err(Error::Config(format!(
            "--reference needs 3 comma-separated values, got {}",
            vals.len()
        )));
    }
    Ok(LatentCode {
        z1: vals[0],
        z2: vals[1],
        z3: vals[2],
    })
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    require_file(&args.ckpt, "checkpoint")?;
    require_file(&args.data, "data file")?;
    let params = ModelParams::load(&args.ckpt)?;
    let records = read_dataset(&args.data)?;
    let reference = args.reference.as_deref().map(parse_reference).transpose()?;

    let mut out = String::from("video\tframe\tz1\tpitch_deg\tyaw_deg");
    if reference.is_some() {
        out.push_str("\tdelta_path\tdelta_pitch_deg\tdelta_yaw_deg");
    }
    out.push('\n');
    let mut rows = 0usize;
    for w in windows(&records, params.config().seq_len)? {
        let seq = sequence_at(&records, w);
        let z = params.encode(&seq)?;
        let last = &records[w.end - 1];
        write!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            last.video_id,
            last.frame_index,
            z.z1,
            latent_to_angle(z.z2)?.degrees(),
            latent_to_angle(z.z3)?.degrees()
        )
        .expect("string write");
        if let Some(r) = &reference {
            let d = guidance_delta(&z, r);
            write!(
                out,
                "\t{}\t{}\t{}",
                d.delta_path, d.delta_pitch_deg, d.delta_yaw_deg
            )
            .expect("string write");
        }
        out.push('\n');
        rows += 1;
    }
    std::fs::write(&args.out, out)?;
    progress!("wrote {rows} rows to {}", args.out.display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    if !args.yolo_dir.is_dir() {
        return Err(Error::Input(format!(
            "label directory {} does not exist",
            args.yolo_dir.display()
        )));
    }
    let drop_ids: Vec<usize> = match &args.drop {
        Some(text) => text
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad --drop id {s:?}: {e}")))
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let map = ClassMap::new(args.classes, drop_ids)?;
    let records = ingest_yolo_labels(&args.yolo_dir, &map, args.stride.unwrap_or(1))?;
    write_dataset(&records, &args.out)?;
    progress!(
        "ingested {} frames ({} classes kept) into {}",
        records.len(),
        map.n_kept(),
        args.out.display()
    );
    Ok(())
}
