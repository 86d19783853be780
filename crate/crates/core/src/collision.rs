//! Oriented bounding boxes and separating-axis overlap depth.

use crate::geometry::{Pose6D, Vec3};
use crate::mesh::CollisionBox;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb {
    pub center: Vec3,
    /// Unit axes of the box, world frame.
    pub axes: [Vec3; 3],
    pub half: Vec3,
}

impl Obb {
    /// Box `[min, max]` given in the frame of `pose`.
    pub fn from_local(min: Vec3, max: Vec3, pose: &Pose6D) -> Self {
        let r = pose.orientation.to_rotation_matrix();
        let m = r.matrix();
        Self {
            center: pose.transform_point(&((min + max) / 2.0)),
            axes: [m.column(0).into(), m.column(1).into(), m.column(2).into()],
            half: (max - min) / 2.0,
        }
    }

    /// World box of a collision box. The margin widens the axes that are not
    /// parallel to `up`, so resting contact along the up axis is not an overlap.
    pub fn from_collision_box(cb: &CollisionBox, up: &Vec3, pose: &Pose6D, with_margin: bool) -> Self {
        let mut min = cb.min;
        let mut max = cb.max;
        if with_margin {
            for i in 0..3 {
                let axis = Vec3::ith(i, 1.0);
                if axis.dot(up).abs() < 0.5 {
                    min[i] -= cb.margin;
                    max[i] += cb.margin;
                }
            }
        }
        Self::from_local(min, max, pose)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            let sx = if k & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if k & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if k & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.center
                + self.axes[0] * (sx * self.half.x)
                + self.axes[1] * (sy * self.half.y)
                + self.axes[2] * (sz * self.half.z);
        }
        out
    }

    /// World-axis-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut ext = Vec3::zeros();
        for i in 0..3 {
            ext += self.axes[i].abs() * self.half[i];
        }
        (self.center - ext, self.center + ext)
    }

    fn radius_along(&self, axis: &Vec3) -> f64 {
        (0..3).map(|i| self.half[i] * self.axes[i].dot(axis).abs()).sum()
    }
}

/// Smallest overlap of the two boxes over all 15 candidate separating axes.
///
/// Returns `None` when some axis separates them (touching counts as separated),
/// otherwise the penetration depth in meters.
pub fn penetration_depth(a: &Obb, b: &Obb) -> Option<f64> {
    let d = b.center - a.center;
    let mut min_overlap = f64::INFINITY;
    let mut test = |axis: Vec3| -> bool {
        let n = axis.norm();
        if n < 1e-9 {
            return true;
        }
        let l = axis / n;
        let overlap = a.radius_along(&l) + b.radius_along(&l) - d.dot(&l).abs();
        if overlap <= 0.0 {
            return false;
        }
        min_overlap = min_overlap.min(overlap);
        true
    };
    for i in 0..3 {
        if !test(a.axes[i]) || !test(b.axes[i]) {
            return None;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if !test(a.axes[i].cross(&b.axes[j])) {
                return None;
            }
        }
    }
    Some(min_overlap)
}
