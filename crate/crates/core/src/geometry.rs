//! Rigid poses, probe frame conventions and the pixel-to-probe calibration map.
//!
//! Probe frame `{p}`: X runs along the transducer footprint (lateral), Y along
//! the short (elevation) axis and Z into the tissue (axial depth). The image
//! plane is the X–Z plane of `{p}`. Image column `u` grows along +X and image
//! row `v` grows along +Z.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Footprint length of the linear probe (mm).
pub const FOOTPRINT_MM: f64 = 51.3;
/// Imaging depth (mm).
pub const DEPTH_MM: f64 = 50.0;
/// Image width (px).
pub const IMAGE_WIDTH: usize = 671;
/// Image height (px).
pub const IMAGE_HEIGHT: usize = 657;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("pixel ({u:.2}, {v:.2}) lies outside the {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("matrix is not a proper rotation (orthonormality error {0:.3e})")]
    NotARotation(f64),
    #[error("bottom row of homogeneous matrix must be [0, 0, 0, 1]")]
    BadHomogeneousRow,
}

/// Continuous image coordinate; `(u, v)` = (column, row) in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn dist(&self, other: &ImagePoint) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }

    pub fn midpoint(&self, other: &ImagePoint) -> ImagePoint {
        ImagePoint::new(0.5 * (self.u + other.u), 0.5 * (self.v + other.v))
    }
}

/// A proper rigid-body transform `x -> R x + t` (mm).
///
/// A pose `T_b_p` of frame `{p}` in frame `{b}` maps coordinates expressed in
/// `{p}` into `{b}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, rejecting matrices that are not rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let err = orthonormality_error(&rotation);
        if err > 1e-6 || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NotARotation(err));
        }
        let mut t = Self {
            rotation,
            translation,
        };
        t.reorthonormalize_if_drifted();
        Ok(t)
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle_rad: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle_rad);
        Self {
            rotation: *rot.matrix(),
            translation: Vec3::zeros(),
        }
    }

    pub fn rot_z(angle_rad: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle_rad)
    }

    /// Quaternion input as `(w, x, y, z)`; normalised before conversion.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64, translation: Vec3) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }

    /// Quaternion output as `(w, x, y, z)`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        [q.w, q.i, q.j, q.k]
    }

    /// Frame built from an origin and its x and z axes (y completes a right-handed frame).
    pub fn from_axes(origin: Vec3, x_axis: Vec3, z_axis: Vec3) -> Self {
        let z = z_axis.normalize();
        let x = (x_axis - z * x_axis.dot(&z)).normalize();
        let y = z.cross(&x);
        Self {
            rotation: Matrix3::from_columns(&[x, y, z]),
            translation: origin,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut out = RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        };
        out.reorthonormalize_if_drifted();
        out
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn axis_x(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    pub fn axis_y(&self) -> Vec3 {
        self.rotation.column(1).into_owned()
    }

    pub fn axis_z(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn is_valid(&self) -> bool {
        orthonormality_error(&self.rotation) <= ORTHO_TOL
            && (self.rotation.determinant() - 1.0).abs() <= ORTHO_TOL
            && self.translation.iter().all(|c| c.is_finite())
    }

    /// Largest element-wise deviation between two transforms.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }

    fn reorthonormalize_if_drifted(&mut self) {
        if orthonormality_error(&self.rotation) > ORTHO_TOL {
            let svd = self.rotation.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut r = u * vt;
            if r.determinant() < 0.0 {
                let mut u_fix = u;
                u_fix.column_mut(2).neg_mut();
                r = u_fix * vt;
            }
            self.rotation = r;
        }
    }

    /// Row-major homogeneous 4x4 matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix4(m: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::BadHomogeneousRow);
        }
        let rot = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Self::new(rot, Vec3::new(m[0][3], m[1][3], m[2][3]))
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_matrix4().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = <[[f64; 4]; 4]>::deserialize(d)?;
        RigidTransform::from_matrix4(&m).map_err(serde::de::Error::custom)
    }
}

/// Maps image pixels onto the X–Z plane of the probe frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationMap {
    /// mm per pixel along `u`.
    pub pixel_spacing_u: f64,
    /// mm per pixel along `v`.
    pub pixel_spacing_v: f64,
    /// Probe-frame position of pixel (0, 0).
    pub image_origin_in_p: [f64; 3],
    pub u_axis_in_p: [f64; 3],
    pub v_axis_in_p: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl Default for CalibrationMap {
    fn default() -> Self {
        Self {
            pixel_spacing_u: FOOTPRINT_MM / IMAGE_WIDTH as f64,
            pixel_spacing_v: DEPTH_MM / IMAGE_HEIGHT as f64,
            image_origin_in_p: [-FOOTPRINT_MM / 2.0, 0.0, 0.0],
            u_axis_in_p: [1.0, 0.0, 0.0],
            v_axis_in_p: [0.0, 0.0, 1.0],
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
        }
    }
}

impl CalibrationMap {
    /// Image centre in pixel coordinates.
    pub fn center(&self) -> ImagePoint {
        ImagePoint::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    fn origin(&self) -> Vec3 {
        Vec3::from(self.image_origin_in_p)
    }

    fn u_axis(&self) -> Vec3 {
        Vec3::from(self.u_axis_in_p)
    }

    fn v_axis(&self) -> Vec3 {
        Vec3::from(self.v_axis_in_p)
    }

    /// Checks that both image axes lie in the X–Z plane and are orthonormal.
    pub fn validate(&self) -> bool {
        let (u, v) = (self.u_axis(), self.v_axis());
        self.pixel_spacing_u > 0.0
            && self.pixel_spacing_v > 0.0
            && self.width > 0
            && self.height > 0
            && u.y.abs() < 1e-12
            && v.y.abs() < 1e-12
            && self.image_origin_in_p[1].abs() < 1e-12
            && (u.norm() - 1.0).abs() < 1e-9
            && (v.norm() - 1.0).abs() < 1e-9
            && u.dot(&v).abs() < 1e-9
    }

    /// Bounds are inclusive of the far image edge.
    pub fn contains(&self, p: &ImagePoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= self.width as f64 && p.v <= self.height as f64
    }

    pub fn pixel_to_probe(&self, p: &ImagePoint) -> Result<Vec3, GeometryError> {
        if !self.contains(p) {
            return Err(GeometryError::OutOfBounds {
                u: p.u,
                v: p.v,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.pixel_to_probe_unchecked(p))
    }

    pub fn pixel_to_probe_unchecked(&self, p: &ImagePoint) -> Vec3 {
        self.origin()
            + self.u_axis() * (p.u * self.pixel_spacing_u)
            + self.v_axis() * (p.v * self.pixel_spacing_v)
    }

    /// Orthogonal projection of a probe-frame point onto the image grid.
    pub fn probe_to_pixel(&self, p: &Vec3) -> ImagePoint {
        let d = p - self.origin();
        ImagePoint::new(
            d.dot(&self.u_axis()) / self.pixel_spacing_u,
            d.dot(&self.v_axis()) / self.pixel_spacing_v,
        )
    }

    /// Pixel offset converted to millimetres (anisotropic spacing aware).
    pub fn pixel_delta_mm(&self, du: f64, dv: f64) -> f64 {
        ((du * self.pixel_spacing_u).powi(2) + (dv * self.pixel_spacing_v).powi(2)).sqrt()
    }
}

pub fn probe_to_base(pt_in_p: &Vec3, probe_pose: &RigidTransform) -> Vec3 {
    probe_pose.apply(pt_in_p)
}

pub fn base_to_probe(pt_in_b: &Vec3, probe_pose: &RigidTransform) -> Vec3 {
    probe_pose.inverse().apply(pt_in_b)
}

pub fn pixel_to_base(
    p: &ImagePoint,
    cal: &CalibrationMap,
    probe_pose: &RigidTransform,
) -> Result<Vec3, GeometryError> {
    Ok(probe_to_base(&cal.pixel_to_probe(p)?, probe_pose))
}

/// Distance from a point to an infinite line given by a point and unit direction.
pub fn point_line_distance(p: &Vec3, line_point: &Vec3, line_dir: &Vec3) -> f64 {
    let d = p - line_point;
    (d - line_dir * d.dot(line_dir)).norm()
}
