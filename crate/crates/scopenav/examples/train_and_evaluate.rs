//! End-to-end miniature of the full pipeline: simulate a corridor
//! trajectory, train the autoencoder unsupervised, and evaluate angle
//! errors, depth correlation, and latent spread against the simulator's
//! ground truth. Takes around a minute on one core.
//!
//! ```bash
//! cargo run --release --example train_and_evaluate
//! ```

use scopenav::data::records_from_trajectory;
use scopenav::eval::{angle_errors, depth_correlation, labeled_sequences, latent_spread};
use scopenav::model::ModelConfig;
use scopenav::scene::{default_scene, generate_trajectory, TrajectoryConfig};
use scopenav::training::{train_with, TrainConfig};

fn main() -> scopenav::Result<()> {
    let scene = default_scene(8, 7)?;
    let train_frames = records_from_trajectory(
        "train",
        &generate_trajectory(
            &scene,
            &TrajectoryConfig {
                n_frames: 1200,
                n_passes: 2,
                seed: 7,
                ..TrajectoryConfig::default()
            },
        )?,
    );
    let eval_frames = records_from_trajectory(
        "eval",
        &generate_trajectory(
            &scene,
            &TrajectoryConfig {
                n_frames: 400,
                n_passes: 1,
                seed: 99,
                ..TrajectoryConfig::default()
            },
        )?,
    );

    let model_cfg = ModelConfig {
        n_classes: scene.n_classes(),
        seq_len: 16,
        encoder_layers: 2,
        attention_heads: 5,
        fc_dims: [128, 64, 32],
        ff_multiplier: 2,
        class_dec_hidden: 8,
        box_dec_hidden: 32,
        token_dim: None,
        rotation_enabled: true,
        seed: 11,
    };
    let train_cfg = TrainConfig {
        lr_peak: 3e-4,
        warmup_epochs: 5,
        epochs: 40,
        batch_size: 16,
        weight_decay: 0.02,
        window_sample_stride: 2,
        seed: 5,
        ..TrainConfig::default()
    };

    println!(
        "training {} epochs on {} frames...",
        train_cfg.epochs,
        train_frames.len()
    );
    let (params, history) = train_with(&train_frames, &model_cfg, &train_cfg, |s, _| {
        if s.epoch % 10 == 0 {
            println!("  epoch {:>3}: loss {:.4}", s.epoch, s.mean_loss.total);
        }
        Ok(())
    })?;
    println!(
        "loss: {:.4} (epoch 1) -> {:.4} (final)",
        history[1].total,
        history.last().unwrap().total
    );

    let items = labeled_sequences(&eval_frames, model_cfg.seq_len, 8)?;
    let angles = angle_errors(&params, &items)?;
    println!(
        "\nangle errors over {} held-out sequences:",
        angles.n_sequences
    );
    println!(
        "  pitch: mean {:+.2} deg (sd {:.2}), mean abs {:.2}",
        angles.mean_pitch_err, angles.sd_pitch_err, angles.mean_abs_pitch_err
    );
    println!(
        "  yaw:   mean {:+.2} deg (sd {:.2}), mean abs {:.2}",
        angles.mean_yaw_err, angles.sd_yaw_err, angles.mean_abs_yaw_err
    );

    let corr = depth_correlation(&params, &eval_frames, 4)?;
    println!(
        "depth correlation: r = {:+.4} over {} windows (direction is not identifiable, use |r| = {:.4})",
        corr.pearson_r, corr.n_frames, corr.abs_r
    );

    match latent_spread(&params, &eval_frames, 8) {
        Ok(spread) => println!(
            "same-depth latent spread: mean range {:.4} of the z1 interval",
            spread.mean_range
        ),
        Err(e) => println!("latent spread unavailable: {e}"),
    }
    Ok(())
}
