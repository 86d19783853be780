//! Rigid poses and frame transforms.
//!
//! The world convention is z-up and right-handed. Orientations are unit
//! quaternions and are serialized as `[x, y, z, qw, qx, qy, qz]`.

use nalgebra::{Isometry3, Matrix4, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;

/// A 6-DoF rigid pose: translation in meters plus a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6D {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6D {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Pose at `position` rotated by `yaw` radians about +z.
    pub fn from_yaw(position: Vec3, yaw: f64) -> Self {
        Self::new(position, UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw))
    }

    /// Camera pose at `eye` looking at `target`.
    ///
    /// The camera frame is the optical one: +z forward, +x right, +y down
    /// in the image. `up` is the world up direction used to fix the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = nalgebra::Rotation3::from_basis_unchecked(&[right, down, forward]);
        Self::new(eye, UnitQuaternion::from_rotation_matrix(&rot))
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D {
            position: self.position + self.orientation * other.position,
            orientation: renormalize(self.orientation * other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let inv = self.orientation.inverse();
        Pose6D {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation.inverse() * (p - self.position)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    /// Rotation about +z, in (-π, π]. Meaningful for poses whose up axis is +z.
    pub fn yaw(&self) -> f64 {
        let x = self.orientation * Vec3::x();
        x.y.atan2(x.x)
    }

    /// Same position, rotated by `angle` about `axis` expressed in the pose's own frame.
    pub fn rotated_about_local(&self, axis: &Vec3, angle: f64) -> Pose6D {
        let r = UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Pose6D {
            position: self.position,
            orientation: renormalize(self.orientation * r),
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        self.to_isometry().to_homogeneous()
    }

    /// Wire form `[x, y, z, qw, qx, qy, qz]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    /// Parses the wire form; the quaternion is normalized and must not be zero.
    pub fn from_array(a: [f64; 7]) -> Option<Pose6D> {
        let q = Quaternion::new(a[3], a[4], a[5], a[6]);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 || a[..3].iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Pose6D::new(
            Vec3::new(a[0], a[1], a[2]),
            UnitQuaternion::from_quaternion(q),
        ))
    }

    /// Distance between positions plus absolute rotation angle between orientations.
    pub fn distance_to(&self, other: &Pose6D) -> (f64, f64) {
        (
            (self.position - other.position).norm(),
            self.orientation.angle_to(&other.orientation),
        )
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

impl Serialize for Pose6D {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose6D {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose6D::from_array(a)
            .ok_or_else(|| serde::de::Error::custom("pose quaternion must be finite and non-zero"))
    }
}

pub type FrameId = String;

/// A named transform mapping points from the `child` frame into `parent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub parent: FrameId,
    pub child: FrameId,
    pub transform: Pose6D,
}

impl FrameTransform {
    pub fn new(parent: impl Into<FrameId>, child: impl Into<FrameId>, transform: Pose6D) -> Self {
        Self {
            parent: parent.into(),
            child: child.into(),
            transform,
        }
    }

    /// Map frame to AW frame. Both are the same frame by default.
    pub fn map_to_aw() -> Self {
        Self::new("aw", "map", Pose6D::identity())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.transform.transform_point(p)
    }

    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.transform.inverse_transform_point(p)
    }

    pub fn apply_pose(&self, pose: &Pose6D) -> Pose6D {
        self.transform.compose(pose)
    }

    pub fn inverse(&self) -> FrameTransform {
        FrameTransform {
            parent: self.child.clone(),
            child: self.parent.clone(),
            transform: self.transform.inverse(),
        }
    }
}

pub fn transform_point(t: &FrameTransform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
