// scratch: desk-scale recipe search
use scopenav::data::records_from_trajectory;
use scopenav::eval::*;
use scopenav::geometry::Angle;
use scopenav::model::ModelConfig;
use scopenav::scene::*;
use scopenav::training::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let sigma_deg: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let stride: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2);
    let rotation: bool = args.get(6).map(|s| s != "norot").unwrap_or(true);
    eprintln!("== epochs={epochs} lr={lr} batch={batch} sigma={sigma_deg} stride={stride} rot={rotation}");

    let scene = default_scene(8, 7).unwrap();
    let sd = Angle::from_degrees(sigma_deg).unwrap();
    let train_traj = TrajectoryConfig { n_frames: 4000, n_passes: 4, seed: 7, angle_step_sd: sd, ..TrajectoryConfig::default() };
    let eval_traj = TrajectoryConfig { n_frames: 1000, n_passes: 2, seed: 99, angle_step_sd: sd, ..TrajectoryConfig::default() };
    let train_frames = records_from_trajectory("train", &generate_trajectory(&scene, &train_traj).unwrap());
    let eval_frames = records_from_trajectory("eval", &generate_trajectory(&scene, &eval_traj).unwrap());

    // how big are the true angles on eval?
    let items = labeled_sequences(&eval_frames, 16, 16).unwrap();
    let mean_abs_pitch: f64 = items.iter().map(|(_, p)| p.pitch.degrees().abs()).sum::<f64>() / items.len() as f64;
    let mean_abs_yaw: f64 = items.iter().map(|(_, p)| p.yaw.degrees().abs()).sum::<f64>() / items.len() as f64;
    eprintln!("true |angles| on eval: pitch {mean_abs_pitch:.2} yaw {mean_abs_yaw:.2} (zero-predictor bar)");

    let mcfg = ModelConfig {
        n_classes: 8, seq_len: 16, encoder_layers: 2, attention_heads: 5,
        fc_dims: [128, 64, 32], ff_multiplier: 2, class_dec_hidden: 8, box_dec_hidden: 32,
        token_dim: None, rotation_enabled: rotation, seed: 11,
    };
    let tcfg = TrainConfig {
        lr_peak: lr, warmup_epochs: (epochs / 10).max(1), epochs, batch_size: batch,
        window_sample_stride: stride, seed: 5, weight_decay: 0.05, ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let (params, history) = train_with(&train_frames, &mcfg, &tcfg, |s, p| {
        if s.epoch % 10 == 9 || s.epoch + 1 == epochs {
            let a = angle_errors(p, &items).unwrap();
            let c = depth_correlation(p, &eval_frames, 16).unwrap();
            let sp = latent_spread(p, &eval_frames, 10).map(|r| r.mean_range).unwrap_or(f64::NAN);
            eprintln!("epoch {}: loss {:.4} | mae {:.2}/{:.2} | r {:+.3} | spread {:.4} | {:.1}s/e",
                s.epoch, s.mean_loss.total, a.mean_abs_pitch_err, a.mean_abs_yaw_err,
                c.pearson_r, sp, t1.elapsed().as_secs_f64() / (s.epoch + 1) as f64);
        }
        Ok(())
    }).unwrap();
    eprintln!("total {:.0}s; loss epoch1 {:.4} -> {:.4}", t1.elapsed().as_secs_f64(),
        history[1].total, history.last().unwrap().total);
    let _ = params;
}
