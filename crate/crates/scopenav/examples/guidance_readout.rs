//! Guidance deltas: after a quick training run, pick a reference view
//! deep in the corridor and read off, for windows along the path, how the
//! camera should turn and move to reach it.
//!
//! ```bash
//! cargo run --release --example guidance_readout
//! ```

use scopenav::data::{records_from_trajectory, sequence_at, windows};
use scopenav::eval::guidance_delta;
use scopenav::model::ModelConfig;
use scopenav::scene::{default_scene, generate_trajectory, TrajectoryConfig};
use scopenav::training::{train, TrainConfig};

fn main() -> scopenav::Result<()> {
    let scene = default_scene(8, 7)?;
    let frames = records_from_trajectory(
        "walk",
        &generate_trajectory(
            &scene,
            &TrajectoryConfig {
                n_frames: 900,
                n_passes: 2,
                seed: 7,
                ..TrajectoryConfig::default()
            },
        )?,
    );

    let model_cfg = ModelConfig {
        n_classes: scene.n_classes(),
        seq_len: 16,
        encoder_layers: 1,
        attention_heads: 5,
        fc_dims: [64, 32, 16],
        ff_multiplier: 2,
        class_dec_hidden: 8,
        box_dec_hidden: 32,
        token_dim: None,
        rotation_enabled: true,
        seed: 11,
    };
    let train_cfg = TrainConfig {
        lr_peak: 3e-4,
        warmup_epochs: 3,
        epochs: 25,
        batch_size: 16,
        weight_decay: 0.02,
        window_sample_stride: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    println!("training a small model ({} epochs)...", train_cfg.epochs);
    let (params, _) = train(&frames, &model_cfg, &train_cfg)?;

    // Reference: the view around the deepest point of the first sweep.
    let all = windows(&frames, model_cfg.seq_len)?;
    let reference_window = all[all.len() / 4];
    let reference = params.encode(&sequence_at(&frames, reference_window))?;
    println!(
        "reference window ends at frame {} (z1 = {:.3})\n",
        frames[reference_window.end - 1].frame_index,
        reference.z1
    );

    println!("frame   z1      -> turn (pitch, yaw) and move along path");
    for w in all.iter().step_by(all.len() / 12) {
        let z = params.encode(&sequence_at(&frames, *w))?;
        let d = guidance_delta(&z, &reference);
        println!(
            "{:>5}  {:.3}   pitch {:+6.1} deg, yaw {:+6.1} deg, path {:+.3}",
            frames[w.end - 1].frame_index,
            z.z1,
            d.delta_pitch_deg,
            d.delta_yaw_deg,
            d.delta_path
        );
    }
    println!("\n(the arrows of a guidance display plot exactly these deltas)");
    Ok(())
}
