//! Quantitative assessment: angle-error statistics against ground truth,
//! Pearson correlation of the path coordinate with true depth,
//! same-location latent spread, and guidance deltas.
//!
//! Every report is a pure function of (params, data). The `*_with`
//! variants take a predictor closure instead of a model, which is how
//! the tests inject oracles and the CLI implements its hidden oracle
//! mode.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{sequence_at, windows, FrameRecord};
use crate::error::{Error, Result};
use crate::model::{DetectionSequence, LatentCode, ModelParams};
use crate::scene::CameraPose;

pub const REPORT_FORMAT: &str = "scopenav-eval-report";
pub const REPORT_VERSION: u32 = 1;

/// Pearson correlation coefficient of two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(format!(
            "pearson needs two equal series of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series is constant".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Signed and absolute angle-error statistics, in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleErrorReport {
    pub n_sequences: usize,
    pub mean_pitch_err: f64,
    pub mean_yaw_err: f64,
    pub sd_pitch_err: f64,
    pub sd_yaw_err: f64,
    pub mean_abs_pitch_err: f64,
    pub mean_abs_yaw_err: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_sd(v: &[f64], m: f64) -> f64 {
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Angle errors with an injected predictor returning (pitch, yaw) in
/// degrees for a window.
pub fn angle_errors_with(
    predict_deg: impl Fn(&DetectionSequence) -> Result<(f64, f64)>,
    items: &[(DetectionSequence, CameraPose)],
) -> Result<AngleErrorReport> {
    if items.len() < 2 {
        return Err(Error::Input(format!(
            "angle evaluation needs >= 2 sequences, got {}",
            items.len()
        )));
    }
    let mut pitch_err = Vec::with_capacity(items.len());
    let mut yaw_err = Vec::with_capacity(items.len());
    for (seq, pose) in items {
        let (p, y) = predict_deg(seq)?;
        pitch_err.push(p - pose.pitch.degrees());
        yaw_err.push(y - pose.yaw.degrees());
    }
    let mp = mean(&pitch_err);
    let my = mean(&yaw_err);
    Ok(AngleErrorReport {
        n_sequences: items.len(),
        mean_pitch_err: mp,
        mean_yaw_err: my,
        sd_pitch_err: population_sd(&pitch_err, mp),
        sd_yaw_err: population_sd(&yaw_err, my),
        mean_abs_pitch_err: mean(&pitch_err.iter().map(|e| e.abs()).collect::<Vec<_>>()),
        mean_abs_yaw_err: mean(&yaw_err.iter().map(|e| e.abs()).collect::<Vec<_>>()),
    })
}

/// Angle errors of a trained model on labeled sequences.
pub fn angle_errors(
    params: &ModelParams,
    items: &[(DetectionSequence, CameraPose)],
) -> Result<AngleErrorReport> {
    angle_errors_with(|seq| params.predict_angles_deg(seq), items)
}

/// Correlation of the path coordinate against true depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub abs_r: f64,
    pub n_frames: usize,
}

/// `(z1, depth)` pairs for every `stride`-th valid window; the depth is
/// the window's last frame's.
fn z1_depth_pairs(
    z1_of: impl Fn(&DetectionSequence, &FrameRecord) -> Result<f64>,
    frames: &[FrameRecord],
    seq_len: usize,
    stride: usize,
) -> Result<Vec<(f64, f64)>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let mut pairs = Vec::new();
    for w in windows(frames, seq_len)?.into_iter().step_by(stride) {
        let last = &frames[w.end - 1];
        let pose = last.pose.as_ref().ok_or_else(|| {
            Error::Input(format!(
                "record {}:{} lacks ground-truth pose",
                last.video_id, last.frame_index
            ))
        })?;
        let z1 = z1_of(&sequence_at(frames, w), last)?;
        pairs.push((z1, pose.depth));
    }
    Ok(pairs)
}

pub fn depth_correlation_with(
    z1_of: impl Fn(&DetectionSequence, &FrameRecord) -> Result<f64>,
    frames: &[FrameRecord],
    seq_len: usize,
    stride: usize,
) -> Result<CorrelationReport> {
    let pairs = z1_depth_pairs(z1_of, frames, seq_len, stride)?;
    if pairs.len() < 2 {
        return Err(Error::Input(format!(
            "correlation needs >= 2 windows, got {}",
            pairs.len()
        )));
    }
    let (z1s, depths): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let r = pearson(&z1s, &depths)?;
    Ok(CorrelationReport {
        pearson_r: r,
        abs_r: r.abs(),
        n_frames: z1s.len(),
    })
}

pub fn depth_correlation(
    params: &ModelParams,
    frames: &[FrameRecord],
    stride: usize,
) -> Result<CorrelationReport> {
    depth_correlation_with(
        |seq, _| Ok(params.encode(seq)?.z1),
        frames,
        params.config().seq_len,
        stride,
    )
}

/// Per-depth-bin range of the path coordinate; the paper's
/// "same location -> same point" check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    /// Model variant tag: "rotation" or "no-rotation".
    pub variant: String,
    pub n_bins: usize,
    pub bin_ranges: Vec<f64>,
    pub bin_counts: Vec<usize>,
    pub mean_range: f64,
}

pub const SPREAD_MIN_VISITS: usize = 5;

/// Bins `(z1, depth)` pairs into `n_bins` equal depth bins and reports
/// the per-bin z1 range. Every bin must be visited at least
/// [`SPREAD_MIN_VISITS`] times.
pub fn spread_from_pairs(
    pairs: &[(f64, f64)],
    n_bins: usize,
    variant: &str,
) -> Result<SpreadReport> {
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be >= 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Input("no windows to bin".into()));
    }
    let min_d = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_d = pairs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = max_d - min_d;
    if span <= 0.0 {
        return Err(Error::Input("depth range is degenerate".into()));
    }
    let mut lo = vec![f64::INFINITY; n_bins];
    let mut hi = vec![f64::NEG_INFINITY; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(z1, d) in pairs {
        let bin = (((d - min_d) / span) * n_bins as f64).floor() as usize;
        let bin = bin.min(n_bins - 1);
        lo[bin] = lo[bin].min(z1);
        hi[bin] = hi[bin].max(z1);
        counts[bin] += 1;
    }
    let starved: Vec<usize> = (0..n_bins)
        .filter(|&b| counts[b] < SPREAD_MIN_VISITS)
        .collect();
    if !starved.is_empty() {
        return Err(Error::InsufficientCoverage {
            min_visits: SPREAD_MIN_VISITS,
            bins: starved,
        });
    }
    let bin_ranges: Vec<f64> = lo.iter().zip(hi.iter()).map(|(a, b)| b - a).collect();
    let mean_range = bin_ranges.iter().sum::<f64>() / n_bins as f64;
    Ok(SpreadReport {
        variant: variant.into(),
        n_bins,
        bin_ranges,
        bin_counts: counts,
        mean_range,
    })
}

pub fn latent_spread_with(
    z1_of: impl Fn(&DetectionSequence, &FrameRecord) -> Result<f64>,
    frames: &[FrameRecord],
    seq_len: usize,
    n_bins: usize,
    variant: &str,
) -> Result<SpreadReport> {
    let pairs = z1_depth_pairs(z1_of, frames, seq_len, 1)?;
    spread_from_pairs(&pairs, n_bins, variant)
}

pub fn latent_spread(
    params: &ModelParams,
    frames: &[FrameRecord],
    n_bins: usize,
) -> Result<SpreadReport> {
    let variant = if params.config().rotation_enabled {
        "rotation"
    } else {
        "no-rotation"
    };
    latent_spread_with(
        |seq, _| Ok(params.encode(seq)?.z1),
        frames,
        params.config().seq_len,
        n_bins,
        variant,
    )
}

/// Component-wise `reference - current`, the numeric content of a
/// guidance arrow: how to turn and how far along the path to move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDelta {
    pub delta_pitch_deg: f64,
    pub delta_yaw_deg: f64,
    pub delta_path: f64,
}

pub fn guidance_delta(current: &LatentCode, reference: &LatentCode) -> GuidanceDelta {
    GuidanceDelta {
        delta_pitch_deg: (reference.z2 - current.z2) * 90.0,
        delta_yaw_deg: (reference.z3 - current.z3) * 90.0,
        delta_path: reference.z1 - current.z1,
    }
}

/// Builds (sequence, true pose of last frame) pairs from every
/// `stride`-th valid window.
pub fn labeled_sequences(
    frames: &[FrameRecord],
    seq_len: usize,
    stride: usize,
) -> Result<Vec<(DetectionSequence, CameraPose)>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    for w in windows(frames, seq_len)?.into_iter().step_by(stride) {
        let last = &frames[w.end - 1];
        let pose = last.pose.ok_or_else(|| {
            Error::Input(format!(
                "record {}:{} lacks ground-truth pose",
                last.video_id, last.frame_index
            ))
        })?;
        out.push((sequence_at(frames, w), pose));
    }
    Ok(out)
}

/// The combined, re-readable evaluation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub angle_errors: Option<AngleErrorReport>,
    pub depth_correlation: Option<CorrelationReport>,
    pub latent_spread: Option<SpreadReport>,
}

impl EvalReport {
    pub fn new() -> EvalReport {
        EvalReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            angle_errors: None,
            depth_correlation: None,
            latent_spread: None,
        }
    }
}

impl Default for EvalReport {
    fn default() -> Self {
        EvalReport::new()
    }
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(report).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: format!("report encoding failed: {e}"),
    })?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    let report: EvalReport = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: format!("report decoding failed: {e}"),
    })?;
    if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!(
                "expected {REPORT_FORMAT} v{REPORT_VERSION}, got {} v{}",
                report.format, report.version
            ),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records_from_trajectory;
    use crate::scene::{default_scene, generate_trajectory, TrajectoryConfig};
    use proptest::prelude::*;

    #[test]
    fn pearson_trivial_cases() {
        let x = [1.0, 2.0, 5.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    // Oracle: by the definition, x=(1,2,3), y=(2,4,7) gives
    // cov = 5, var_x = 2, var_y = 38/3, r = 5 / sqrt(2 * 38/3) = 0.99340.
    #[test]
    fn pearson_hand_computed_example() {
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - 0.99340).abs() < 1e-4, "r = {r}");
    }

    #[test]
    fn pearson_rejects_constant_series() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(Error::Input(_))
        ));
    }

    fn labeled_items(n: usize) -> Vec<(DetectionSequence, CameraPose)> {
        let scene = default_scene(3, 3).unwrap();
        let cfg = TrajectoryConfig {
            n_frames: n + 4,
            n_passes: 1,
            seed: 8,
            ..TrajectoryConfig::default()
        };
        let frames = generate_trajectory(&scene, &cfg).unwrap();
        let records = records_from_trajectory("t", &frames);
        labeled_sequences(&records, 4, 1).unwrap()
    }

    #[test]
    fn perfect_predictor_has_zero_errors() {
        let items = labeled_items(12);
        let truth: Vec<CameraPose> = items.iter().map(|(_, p)| *p).collect();
        let i = std::cell::Cell::new(0usize);
        let report = angle_errors_with(
            |_| {
                let k = i.get();
                i.set(k + 1);
                Ok((truth[k].pitch.degrees(), truth[k].yaw.degrees()))
            },
            &items,
        )
        .unwrap();
        assert_eq!(report.mean_pitch_err, 0.0);
        assert_eq!(report.mean_yaw_err, 0.0);
        assert_eq!(report.sd_pitch_err, 0.0);
        assert_eq!(report.sd_yaw_err, 0.0);
        assert_eq!(report.mean_abs_pitch_err, 0.0);
        assert_eq!(report.mean_abs_yaw_err, 0.0);

    }

    #[test]
    fn constant_bias_shows_up_in_mean_not_sd() {
        let items = labeled_items(10);
        let truth: Vec<CameraPose> = items.iter().map(|(_, p)| *p).collect();
        let i = std::cell::Cell::new(0usize);
        let report = angle_errors_with(
            |_| {
                let k = i.get();
                i.set(k + 1);
                Ok((truth[k].pitch.degrees() + 2.0, truth[k].yaw.degrees()))
            },
            &items,
        )
        .unwrap();
        assert!((report.mean_pitch_err - 2.0).abs() < 1e-12);
        assert!(report.sd_pitch_err.abs() < 1e-9);
        assert!((report.mean_abs_pitch_err - 2.0).abs() < 1e-12);
    }

    #[test]
    fn angle_errors_need_two_sequences() {
        let items = labeled_items(12);
        assert!(matches!(
            angle_errors_with(|_| Ok((0.0, 0.0)), &items[..1]),
            Err(Error::Input(_))
        ));
    }

    fn posed_records(n_frames: usize) -> (Vec<FrameRecord>, f64) {
        let scene = default_scene(3, 3).unwrap();
        let cfg = TrajectoryConfig {
            n_frames,
            n_passes: 2,
            seed: 4,
            ..TrajectoryConfig::default()
        };
        let frames = generate_trajectory(&scene, &cfg).unwrap();
        (
            records_from_trajectory("t", &frames),
            scene.corridor_length,
        )
    }

    #[test]
    fn depth_oracle_correlates_perfectly() {
        let (records, length) = posed_records(64);
        let up = depth_correlation_with(
            |_, last| Ok(last.pose.unwrap().depth / length),
            &records,
            4,
            1,
        )
        .unwrap();
        assert!((up.pearson_r - 1.0).abs() < 1e-12);
        let down = depth_correlation_with(
            |_, last| Ok(1.0 - last.pose.unwrap().depth / length),
            &records,
            4,
            1,
        )
        .unwrap();
        assert!((down.pearson_r + 1.0).abs() < 1e-12);
        assert!((down.abs_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spread_oracles() {
        let (records, length) = posed_records(400);
        // A constant embedding has zero spread everywhere.
        let constant = latent_spread_with(|_, _| Ok(0.25), &records, 4, 10, "oracle").unwrap();
        assert!(constant.bin_ranges.iter().all(|r| *r == 0.0));
        assert_eq!(constant.mean_range, 0.0);

        // The linear oracle's range per bin is bounded by the bin width.
        let linear = latent_spread_with(
            |_, last| Ok(last.pose.unwrap().depth / length),
            &records,
            4,
            10,
            "oracle",
        )
        .unwrap();
        for r in &linear.bin_ranges {
            assert!(*r <= 0.1 + 1e-12, "range {r}");
        }
    }

    #[test]
    fn starved_bins_are_reported() {
        // Two tight clusters leave middle bins empty.
        let mut pairs = Vec::new();
        for i in 0..10 {
            pairs.push((0.1, i as f64 * 0.001));
            pairs.push((0.9, 1.0 + i as f64 * 0.001));
        }
        match spread_from_pairs(&pairs, 5, "x") {
            Err(Error::InsufficientCoverage { bins, .. }) => {
                assert_eq!(bins, vec![1, 2, 3]);
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn spread_shrinks_on_subsets() {
        let (records, length) = posed_records(300);
        let pairs = z1_depth_pairs(
            |_, last| {
                let d = last.pose.unwrap().depth / length;
                Ok(d + 0.05 * (d * 40.0).sin())
            },
            &records,
            4,
            1,
        )
        .unwrap();
        let full = spread_from_pairs(&pairs, 5, "x").unwrap();
        // Keep depth extremes so bin edges stay put, drop half the rest.
        let mut subset: Vec<(f64, f64)> = pairs.iter().copied().step_by(2).collect();
        let min = pairs
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let max = pairs
            .iter()
            .copied()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        subset.push(min);
        subset.push(max);
        if let Ok(sub) = spread_from_pairs(&subset, 5, "x") {
            for (a, b) in sub.bin_ranges.iter().zip(full.bin_ranges.iter()) {
                assert!(a <= &(b + 1e-12), "subset range {a} > full {b}");
            }
        }
    }

    #[test]
    fn guidance_examples() {
        let a = LatentCode {
            z1: 0.3,
            z2: 0.5,
            z3: -0.25,
        };
        let b = LatentCode {
            z1: 0.8,
            z2: 0.0,
            z3: 0.5,
        };
        let zero = guidance_delta(&a, &a);
        assert_eq!(
            (zero.delta_pitch_deg, zero.delta_yaw_deg, zero.delta_path),
            (0.0, 0.0, 0.0)
        );
        let ab = guidance_delta(&a, &b);
        let ba = guidance_delta(&b, &a);
        assert_eq!(ab.delta_pitch_deg, -ba.delta_pitch_deg);
        assert_eq!(ab.delta_yaw_deg, -ba.delta_yaw_deg);
        assert_eq!(ab.delta_path, -ba.delta_path);
        assert!((ab.delta_pitch_deg + 45.0).abs() < 1e-12);
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.toml");
        let mut report = EvalReport::new();
        report.depth_correlation = Some(CorrelationReport {
            pearson_r: -0.93,
            abs_r: 0.93,
            n_frames: 61,
        });
        report.angle_errors = Some(AngleErrorReport {
            n_sequences: 12,
            mean_pitch_err: 0.5,
            mean_yaw_err: -0.25,
            sd_pitch_err: 1.5,
            sd_yaw_err: 2.0,
            mean_abs_pitch_err: 1.0,
            mean_abs_yaw_err: 1.75,
        });
        write_report(&report, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), report);
    }

    #[test]
    fn evaluation_is_repeatable() {
        let items = labeled_items(8);
        let (records, _) = posed_records(64);
        let params = ModelParams::init(crate::model::test_support::tiny_config()).unwrap();
        let a = angle_errors(&params, &items).unwrap();
        let b = angle_errors(&params, &items).unwrap();
        assert_eq!(a, b);
        let c = depth_correlation(&params, &records, 2).unwrap();
        let d = depth_correlation(&params, &records, 2).unwrap();
        assert_eq!(c, d);
    }

    proptest! {
        // r is invariant to positive affine maps; |r| also to negative.
        #[test]
        fn pearson_affine_invariance(
            seed in 0u64..300,
            a in 0.1..5.0f64,
            b in -3.0..3.0f64,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            prop_assume!(pearson(&x, &y).is_ok());
            let r = pearson(&x, &y).unwrap();
            let x_pos: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&x_pos, &y).unwrap() - r).abs() < 1e-9);
            let x_neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&x_neg, &y).unwrap() + r).abs() < 1e-9);
        }
    }
}
