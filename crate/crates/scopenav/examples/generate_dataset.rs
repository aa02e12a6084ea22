//! Builds the default corridor scene, renders a seeded trajectory with
//! ground-truth poses, and writes it as a dataset file.
//!
//! ```bash
//! cargo run --release --example generate_dataset
//! ```

use scopenav::data::{records_from_trajectory, write_dataset};
use scopenav::scene::{default_scene, generate_trajectory, write_scene_file, TrajectoryConfig};

fn main() -> scopenav::Result<()> {
    let scene = default_scene(8, 7)?;
    println!(
        "scene: corridor {} units, fov half-angle {} deg, clip ({}, {})",
        scene.corridor_length,
        scene.fov_half_angle.degrees(),
        scene.near_clip,
        scene.far_clip
    );
    for s in &scene.structures {
        println!(
            "  class {}: center ({:+.2}, {:+.2}, {:.2}), radius {:.2}",
            s.class_id, s.center[0], s.center[1], s.center[2], s.radius
        );
    }

    let cfg = TrajectoryConfig {
        n_frames: 800,
        n_passes: 2,
        seed: 7,
        ..TrajectoryConfig::default()
    };
    let frames = generate_trajectory(&scene, &cfg)?;

    // How often each structure is visible along the path.
    let n = scene.n_classes();
    let mut visible = vec![0usize; n];
    for f in &frames {
        for (i, s) in f.detections.slots.iter().enumerate() {
            if s.presence == 1.0 {
                visible[i] += 1;
            }
        }
    }
    println!("\nvisibility over {} frames:", frames.len());
    for (i, v) in visible.iter().enumerate() {
        println!("  class {i}: {:.0}%", 100.0 * *v as f64 / frames.len() as f64);
    }

    let out = std::env::temp_dir().join("scopenav_example_dataset.tsv");
    write_dataset(&records_from_trajectory("synth", &frames), &out)?;
    println!("\ndataset written to {}", out.display());

    let scene_out = std::env::temp_dir().join("scopenav_example_scene.toml");
    write_scene_file(&scene, &scene_out)?;
    println!("scene spec written to {}", scene_out.display());
    Ok(())
}
