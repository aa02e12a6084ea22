//! The rotation-only homography on box centers: matrix construction,
//! the yaw tangent identity, inverse round trips, and the analytic
//! Jacobian against finite differences.
//!
//! ```bash
//! cargo run --release --example rotation_geometry
//! ```

use scopenav::geometry::{
    latent_to_angle, rotate_center_jacobian, rotate_centers, rotation_matrix, Angle, BBox,
};

fn main() -> scopenav::Result<()> {
    // Latent units to angles: z = 1 means +90 degrees.
    for z in [-1.0, -0.5, 0.0, 0.25, 1.0] {
        println!("z = {z:+.2}  ->  {:+.1} deg", latent_to_angle(z)?.degrees());
    }

    // A box seen under a combined pitch/yaw rotation.
    let pitch = Angle::from_degrees(10.0)?;
    let yaw = Angle::from_degrees(-20.0)?;
    let r = rotation_matrix(pitch, yaw);
    let boxes = vec![
        BBox::new(0.5, 0.5, 0.2, 0.1)?,
        BBox::new(0.25, 0.7, 0.1, 0.1)?,
        BBox::new(0.9, 0.2, 0.05, 0.3)?,
    ];
    let rotated = rotate_centers(&boxes, &r)?;
    println!("\npitch {:+.0} deg, yaw {:+.0} deg:", pitch.degrees(), yaw.degrees());
    for (b, o) in boxes.iter().zip(rotated.iter()) {
        println!(
            "  ({:.3}, {:.3}) -> ({:+.3}, {:+.3})   (w, h unchanged: {} x {})",
            b.cx, b.cy, o.cx, o.cy, o.w, o.h
        );
    }

    // Rotating back with the transpose recovers the original centers.
    let back = rotate_centers(&rotated, &r.transposed())?;
    let worst = boxes
        .iter()
        .zip(back.iter())
        .map(|(a, b)| (a.cx - b.cx).abs().max((a.cy - b.cy).abs()))
        .fold(0.0f64, f64::max);
    println!("\ninverse round-trip worst center error: {worst:.2e}");

    // On the v = 0 line a pure yaw is the tangent addition formula.
    let theta = 0.3f64;
    let r_yaw = rotation_matrix(Angle::ZERO, Angle::from_radians(theta)?);
    let cx = 0.7f64;
    let u = 2.0 * cx - 1.0;
    let analytic = (u.atan() + theta).tan();
    let via_matrix = {
        let out = rotate_centers(&[BBox::new(cx, 0.5, 0.0, 0.0)?], &r_yaw)?;
        2.0 * out[0].cx - 1.0
    };
    println!("yaw-line identity: tan(atan(u)+theta) = {analytic:.9}, homography = {via_matrix:.9}");

    // The analytic Jacobian matches central differences.
    let jac = rotate_center_jacobian(0.3, 0.6, pitch, yaw)?;
    let h = 1e-6;
    let numeric = {
        let up = rotate_centers(
            &[BBox::new(0.3, 0.6, 0.0, 0.0)?],
            &rotation_matrix(Angle::from_radians(pitch.radians() + h)?, yaw),
        )?[0]
            .cx;
        let dn = rotate_centers(
            &[BBox::new(0.3, 0.6, 0.0, 0.0)?],
            &rotation_matrix(Angle::from_radians(pitch.radians() - h)?, yaw),
        )?[0]
            .cx;
        (up - dn) / (2.0 * h)
    };
    println!(
        "d cx'/d pitch: analytic {:.9}, finite difference {numeric:.9}",
        jac.d[0][2]
    );
    Ok(())
}
