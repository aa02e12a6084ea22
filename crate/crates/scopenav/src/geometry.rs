//! Rotation matrices, angle/latent conversion, and the rotation-only
//! homography acting on bounding-box centers.
//!
//! Conventions, fixed once and used identically by the simulator and the
//! model so that learned angles are directly comparable to ground truth:
//!
//! * Normalized image coordinates `[0,1]^2` are mapped affinely to
//!   `[-1,1]^2` and lifted onto the `z = 1` plane before rotating.
//! * `rotation_matrix(pitch, yaw)` returns `R = R_yaw(psi) * R_pitch(phi)`,
//!   i.e. pitch is applied first. Positive pitch moves the principal
//!   point's image content toward `+v`; positive yaw moves it toward `+u`
//!   (so on the `v = 0` line, `u' = tan(atan(u) + yaw)`).
//! * After rotation the point is perspective-divided and mapped back to
//!   `[0,1]^2`. Box widths and heights are carried over untouched.

use crate::error::{Error, Result};

/// Rotated points with `p'_z` at or below this are reported as degenerate.
pub const EPS_Z: f64 = 1e-6;

const ANGLE_LIMIT: f64 = std::f64::consts::FRAC_PI_2 + 1e-12;

/// An angle restricted to `[-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Angle {
    radians: f64,
}

impl Angle {
    pub const ZERO: Angle = Angle { radians: 0.0 };

    pub fn from_radians(radians: f64) -> Result<Angle> {
        if !radians.is_finite() || radians.abs() > ANGLE_LIMIT {
            return Err(Error::Input(format!(
                "angle {radians} rad outside [-pi/2, pi/2]"
            )));
        }
        Ok(Angle { radians })
    }

    pub fn from_degrees(degrees: f64) -> Result<Angle> {
        Angle::from_radians(degrees.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.radians
    }

    pub fn degrees(self) -> f64 {
        self.radians.to_degrees()
    }
}

/// A 3x3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    m: [[f64; 3]; 3],
}

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn as_array(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// `R^T`, which is the inverse for a rotation.
    pub fn transposed(&self) -> RotationMatrix {
        let m = &self.m;
        RotationMatrix {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    /// Matrix product `self * other` (apply `other` first).
    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                *out = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RotationMatrix { m }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    /// Max deviation from orthonormality, `max |R^T R - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let t = self.transposed().compose(self);
        let mut worst: f64 = 0.0;
        for (i, row) in t.m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - expect).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// A bounding box in normalized image coordinates: center plus extents.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const ZERO: BBox = BBox {
        cx: 0.0,
        cy: 0.0,
        w: 0.0,
        h: 0.0,
    };

    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<BBox> {
        let b = BBox { cx, cy, w, h };
        if !b.is_finite() {
            return Err(Error::Input(format!("non-finite box {b:?}")));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::Input(format!("negative box extent {b:?}")));
        }
        Ok(b)
    }

    pub fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Dataset boxes must additionally lie inside the unit square.
    pub fn in_unit_square(&self) -> bool {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        ok(self.cx) && ok(self.cy) && ok(self.w) && ok(self.h)
    }
}

fn pitch_matrix(phi: f64) -> [[f64; 3]; 3] {
    let (s, c) = phi.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]]
}

fn yaw_matrix(psi: f64) -> [[f64; 3]; 3] {
    let (s, c) = psi.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// `R = R_yaw(psi) * R_pitch(phi)`; pitch rotates about the image x-axis,
/// yaw about the image y-axis.
pub fn rotation_matrix(pitch: Angle, yaw: Angle) -> RotationMatrix {
    let ry = RotationMatrix {
        m: yaw_matrix(yaw.radians()),
    };
    let rx = RotationMatrix {
        m: pitch_matrix(pitch.radians()),
    };
    ry.compose(&rx)
}

/// Latent angle units to radians: `z = 1` is `+90` degrees.
pub fn latent_to_angle(z: f64) -> Result<Angle> {
    if !z.is_finite() || z.abs() > 1.0 {
        return Err(Error::Input(format!("latent angle {z} outside [-1, 1]")));
    }
    Angle::from_radians(z * std::f64::consts::FRAC_PI_2)
}

/// Rotation-only homography on a single normalized box center.
///
/// `[0,1]^2 -> [-1,1]^2`, lift to `z = 1`, rotate, perspective-divide, map
/// back. Errors when the rotated point reaches `p'_z <= EPS_Z`.
pub fn rotate_center(cx: f64, cy: f64, r: &RotationMatrix) -> Result<(f64, f64)> {
    // The identity must be a bit-exact no-op; the affine [0,1] <-> [-1,1]
    // round trip alone would introduce rounding.
    if *r == RotationMatrix::IDENTITY {
        return Ok((cx, cy));
    }
    let p = [2.0 * cx - 1.0, 2.0 * cy - 1.0, 1.0];
    let q = r.apply(p);
    if q[2] <= EPS_Z {
        return Err(Error::DegenerateRotation(format!(
            "center ({cx}, {cy}) rotated to p'_z = {} <= {EPS_Z}",
            q[2]
        )));
    }
    let u = q[0] / q[2];
    let v = q[1] / q[2];
    Ok(((u + 1.0) / 2.0, (v + 1.0) / 2.0))
}

/// Applies [`rotate_center`] to every box; widths and heights are copied
/// bit-for-bit.
pub fn rotate_centers(boxes: &[BBox], r: &RotationMatrix) -> Result<Vec<BBox>> {
    boxes
        .iter()
        .map(|b| {
            if !b.is_finite() {
                return Err(Error::Input(format!("non-finite box {b:?}")));
            }
            let (cx, cy) = rotate_center(b.cx, b.cy, r)?;
            Ok(BBox {
                cx,
                cy,
                w: b.w,
                h: b.h,
            })
        })
        .collect()
}

/// Partial derivatives of a rotated center `(cx', cy')` with respect to
/// `(cx, cy, pitch, yaw)`. Row 0 is `cx'`, row 1 is `cy'`.
#[derive(Debug, Clone, Copy)]
pub struct CenterJacobian {
    pub d: [[f64; 4]; 2],
}

/// Analytic Jacobian of [`rotate_center`] at `(cx, cy, pitch, yaw)`.
///
/// Backs the reverse-mode gradient of the model's rotation head; checked
/// against central finite differences in the test suite.
pub fn rotate_center_jacobian(
    cx: f64,
    cy: f64,
    pitch: Angle,
    yaw: Angle,
) -> Result<CenterJacobian> {
    let phi = pitch.radians();
    let psi = yaw.radians();
    let rx = pitch_matrix(phi);
    let ry = yaw_matrix(psi);
    let r = RotationMatrix { m: ry }.compose(&RotationMatrix { m: rx });

    let p = [2.0 * cx - 1.0, 2.0 * cy - 1.0, 1.0];
    let q = r.apply(p);
    if q[2] <= EPS_Z {
        return Err(Error::DegenerateRotation(format!(
            "center ({cx}, {cy}) rotated to p'_z = {} <= {EPS_Z}",
            q[2]
        )));
    }

    // d(u')/dq and d(v')/dq with u' = q_x/q_z, v' = q_y/q_z.
    let inv_z = 1.0 / q[2];
    let du_dq = [inv_z, 0.0, -q[0] * inv_z * inv_z];
    let dv_dq = [0.0, inv_z, -q[1] * inv_z * inv_z];

    // dq/dcx = 2 * R col0, dq/dcy = 2 * R col1.
    let m = r.as_array();
    let dq_dcx = [2.0 * m[0][0], 2.0 * m[1][0], 2.0 * m[2][0]];
    let dq_dcy = [2.0 * m[0][1], 2.0 * m[1][1], 2.0 * m[2][1]];

    // dq/dphi = R_yaw * dR_pitch/dphi * p, dq/dpsi = dR_yaw/dpsi * R_pitch * p.
    let (sp, cp) = phi.sin_cos();
    let drx = [[0.0, 0.0, 0.0], [0.0, -sp, cp], [0.0, -cp, -sp]];
    let (sy, cyw) = psi.sin_cos();
    let dry = [[-sy, 0.0, cyw], [0.0, 0.0, 0.0], [-cyw, 0.0, -sy]];
    let dq_dphi = RotationMatrix { m: ry }.apply(RotationMatrix { m: drx }.apply(p));
    let dq_dpsi = RotationMatrix { m: dry }.apply(RotationMatrix { m: rx }.apply(p));

    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    // cx' = (u' + 1) / 2 so every derivative picks up a factor 1/2.
    let row = |dout_dq: [f64; 3]| {
        [
            0.5 * dot(dout_dq, dq_dcx),
            0.5 * dot(dout_dq, dq_dcy),
            0.5 * dot(dout_dq, dq_dphi),
            0.5 * dot(dout_dq, dq_dpsi),
        ]
    };
    Ok(CenterJacobian {
        d: [row(du_dq), row(dv_dq)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn angle_range_enforced() {
        assert!(Angle::from_radians(FRAC_PI_2).is_ok());
        assert!(Angle::from_radians(-FRAC_PI_2).is_ok());
        assert!(Angle::from_radians(FRAC_PI_2 + 1e-6).is_err());
        assert!(Angle::from_radians(f64::NAN).is_err());
    }

    #[test]
    fn zero_angles_give_identity() {
        let r = rotation_matrix(Angle::ZERO, Angle::ZERO);
        assert_eq!(r, RotationMatrix::IDENTITY);
    }

    #[test]
    fn quarter_pitch_is_orthonormal() {
        let r = rotation_matrix(Angle::from_radians(FRAC_PI_2).unwrap(), Angle::ZERO);
        assert!(r.orthonormality_defect() < 1e-9);
        assert_close(r.determinant(), 1.0, 1e-9);
        // Pure x-axis rotation: first row and column untouched.
        let m = r.as_array();
        assert_close(m[0][0], 1.0, 1e-15);
        assert_close(m[0][1], 0.0, 1e-15);
        assert_close(m[1][0], 0.0, 1e-15);
    }

    // Oracle: single-axis matrices written out longhand, composed here,
    // independent of the implementation's helpers.
    #[test]
    fn composes_single_axis_matrices() {
        let phi = 0.1_f64;
        let psi = 0.2_f64;
        let rx = [
            [1.0, 0.0, 0.0],
            [0.0, phi.cos(), phi.sin()],
            [0.0, -phi.sin(), phi.cos()],
        ];
        let ry = [
            [psi.cos(), 0.0, psi.sin()],
            [0.0, 1.0, 0.0],
            [-psi.sin(), 0.0, psi.cos()],
        ];
        let mut expect = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, rx_row) in rx.iter().enumerate() {
                    expect[i][j] += ry[i][k] * rx_row[j];
                }
            }
        }
        let r = rotation_matrix(
            Angle::from_radians(phi).unwrap(),
            Angle::from_radians(psi).unwrap(),
        );
        let m = r.as_array();
        for i in 0..3 {
            for j in 0..3 {
                assert_close(m[i][j], expect[i][j], 1e-12);
            }
        }
    }

    #[test]
    fn latent_angle_mapping() {
        assert_close(latent_to_angle(1.0).unwrap().radians(), FRAC_PI_2, 0.0);
        assert_close(latent_to_angle(0.0).unwrap().radians(), 0.0, 0.0);
        assert_close(latent_to_angle(-0.5).unwrap().radians(), -FRAC_PI_4, 0.0);
        assert_close(latent_to_angle(1.0).unwrap().degrees(), 90.0, 1e-12);
        assert!(latent_to_angle(1.0 + 1e-9).is_err());
        assert!(latent_to_angle(f64::NAN).is_err());
    }

    #[test]
    fn identity_rotation_is_noop() {
        let boxes = [
            BBox::new(0.1, 0.9, 0.05, 0.2).unwrap(),
            BBox::new(0.5, 0.5, 0.0, 0.0).unwrap(),
        ];
        let out = rotate_centers(&boxes, &RotationMatrix::IDENTITY).unwrap();
        assert_eq!(out.as_slice(), boxes.as_slice());
    }

    #[test]
    fn yaw_line_tangent_identity() {
        // On the v = 0 line, pure yaw acts as u' = tan(atan(u) + theta).
        for &cx in &[0.0_f64, 0.2, 0.37, 0.5, 0.81, 1.0] {
            for &theta in &[-0.5_f64, -0.2, 0.05, 0.3, 0.6] {
                let u = 2.0 * cx - 1.0;
                let expected = (u.atan() + theta).tan();
                let r = rotation_matrix(Angle::ZERO, Angle::from_radians(theta).unwrap());
                let (cx2, cy2) = rotate_center(cx, 0.5, &r).unwrap();
                assert_close(2.0 * cx2 - 1.0, expected, 1e-9);
                assert_close(cy2, 0.5, 1e-9);
            }
        }
    }

    #[test]
    fn principal_point_under_pitch() {
        for &phi in &[-0.7_f64, -0.1, 0.25, 1.0] {
            let r = rotation_matrix(Angle::from_radians(phi).unwrap(), Angle::ZERO);
            let (cx, cy) = rotate_center(0.5, 0.5, &r).unwrap();
            assert_close(2.0 * cy - 1.0, phi.tan(), 1e-12);
            assert_close(cx, 0.5, 1e-12);
        }
    }

    #[test]
    fn composition_matches_matrix_product() {
        let r1 = rotation_matrix(
            Angle::from_radians(0.2).unwrap(),
            Angle::from_radians(-0.15).unwrap(),
        );
        let r2 = rotation_matrix(
            Angle::from_radians(-0.1).unwrap(),
            Angle::from_radians(0.3).unwrap(),
        );
        let boxes = [
            BBox::new(0.3, 0.6, 0.1, 0.1).unwrap(),
            BBox::new(0.7, 0.2, 0.02, 0.3).unwrap(),
        ];
        let two_step = rotate_centers(&rotate_centers(&boxes, &r1).unwrap(), &r2).unwrap();
        let one_step = rotate_centers(&boxes, &r2.compose(&r1)).unwrap();
        for (a, b) in two_step.iter().zip(one_step.iter()) {
            assert_close(a.cx, b.cx, 1e-9);
            assert_close(a.cy, b.cy, 1e-9);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let r = rotation_matrix(
            Angle::from_radians(0.4).unwrap(),
            Angle::from_radians(-0.35).unwrap(),
        );
        let boxes = [
            BBox::new(0.25, 0.4, 0.11, 0.07).unwrap(),
            BBox::new(0.9, 0.8, 0.5, 0.01).unwrap(),
        ];
        let back = rotate_centers(&rotate_centers(&boxes, &r).unwrap(), &r.transposed()).unwrap();
        for (a, b) in back.iter().zip(boxes.iter()) {
            assert_close(a.cx, b.cx, 1e-9);
            assert_close(a.cy, b.cy, 1e-9);
            assert_eq!(a.w.to_bits(), b.w.to_bits());
            assert_eq!(a.h.to_bits(), b.h.to_bits());
        }
    }

    #[test]
    fn degenerate_rotation_is_typed_error() {
        // u near +1 with a large yaw pushes p'_z negative.
        let r = rotation_matrix(Angle::ZERO, Angle::from_radians(1.4).unwrap());
        let err = rotate_center(1.0, 0.5, &r).unwrap_err();
        assert!(matches!(err, Error::DegenerateRotation(_)));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let h = 1e-6;
        let eval = |x: [f64; 4]| {
            let r = rotation_matrix(
                Angle::from_radians(x[2]).unwrap(),
                Angle::from_radians(x[3]).unwrap(),
            );
            let (cx, cy) = rotate_center(x[0], x[1], &r).unwrap();
            [cx, cy]
        };
        let points = [
            [0.3, 0.7, 0.1, -0.2],
            [0.5, 0.5, 0.0, 0.0],
            [0.9, 0.1, -0.5, 0.4],
            [0.05, 0.95, 0.6, 0.55],
        ];
        for p in points {
            let jac = rotate_center_jacobian(
                p[0],
                p[1],
                Angle::from_radians(p[2]).unwrap(),
                Angle::from_radians(p[3]).unwrap(),
            )
            .unwrap();
            for k in 0..4 {
                let mut hi = p;
                let mut lo = p;
                hi[k] += h;
                lo[k] -= h;
                let fhi = eval(hi);
                let flo = eval(lo);
                for out in 0..2 {
                    let numeric = (fhi[out] - flo[out]) / (2.0 * h);
                    let analytic = jac.d[out][k];
                    let denom = numeric.abs().max(analytic.abs()).max(1.0);
                    assert!(
                        ((numeric - analytic) / denom).abs() < 1e-5,
                        "d out{out}/d in{k} at {p:?}: analytic {analytic}, numeric {numeric}"
                    );
                }
            }
        }
    }
}
