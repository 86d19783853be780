//! The semantic map: static environment geometry and the support surfaces
//! where objects are expected.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::geometry::{Pose6D, Vec3};
use crate::mesh::TriangleMesh;

/// Maximum distance between a surface region corner and the static geometry.
const REGION_ATTACH_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticGeometry {
    pub name: String,
    pub mesh: TriangleMesh,
    pub pose: Pose6D,
}

/// A planar region objects may rest on.
///
/// `bounds` is `[u_min, v_min, u_max, v_max]` in the plane's own 2D frame,
/// whose origin is `point` (see [`SurfaceRegion::plane_axes`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRegion {
    pub name: String,
    pub point: Vec3,
    pub normal: Vec3,
    pub bounds: [f64; 4],
    pub height_band: f64,
}

impl SurfaceRegion {
    /// In-plane unit axes (u, v) with u × v = normal. For a +z normal these are +x and +y.
    pub fn plane_axes(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = (seed - n * seed.dot(&n)).normalize();
        (u, n.cross(&u))
    }

    /// Signed height of `p` above the plane.
    pub fn height_of(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }

    /// Plane coordinates of the projection of `p`.
    pub fn plane_coords(&self, p: &Vec3) -> (f64, f64) {
        let (u, v) = self.plane_axes();
        let d = p - self.point;
        (d.dot(&u), d.dot(&v))
    }

    pub fn contains_projection(&self, p: &Vec3) -> bool {
        let (a, b) = self.plane_coords(p);
        a >= self.bounds[0] && a <= self.bounds[2] && b >= self.bounds[1] && b <= self.bounds[3]
    }

    /// True if a point belongs to the volume above the region considered for segmentation.
    pub fn admits(&self, p: &Vec3, min_height: f64) -> bool {
        let h = self.height_of(p);
        h > min_height && h <= self.height_band && self.contains_projection(p)
    }

    pub fn corners(&self) -> [Vec3; 4] {
        let (u, v) = self.plane_axes();
        let [a0, b0, a1, b1] = self.bounds;
        [
            self.point + u * a0 + v * b0,
            self.point + u * a1 + v * b0,
            self.point + u * a1 + v * b1,
            self.point + u * a0 + v * b1,
        ]
    }

    /// True if the plane is a floor-like support (normal close to world +z).
    pub fn is_horizontal(&self) -> bool {
        self.normal.z > 0.999
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if (self.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidMap(format!("region {} normal is not unit", self.name)));
        }
        let [a0, b0, a1, b1] = self.bounds;
        if !(a1 > a0 && b1 > b0) {
            return Err(ModelError::InvalidMap(format!("region {} bounds are empty", self.name)));
        }
        if self.height_band <= 0.0 {
            return Err(ModelError::InvalidMap(format!(
                "region {} height band must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub static_geometry: Vec<StaticGeometry>,
    pub surfaces: Vec<SurfaceRegion>,
}

impl SemanticMap {
    pub fn surface(&self, name: &str) -> Option<&SurfaceRegion> {
        self.surfaces.iter().find(|s| s.name == name)
    }

    /// Checks region validity and that every region rectangle lies on static geometry.
    pub fn validate(&self) -> Result<(), ModelError> {
        for g in &self.static_geometry {
            g.mesh.validate()?;
        }
        for s in &self.surfaces {
            s.validate()?;
            for c in s.corners() {
                let d = self.distance_to_static(&c);
                if d > REGION_ATTACH_TOLERANCE {
                    return Err(ModelError::InvalidMap(format!(
                        "region {} corner is {:.3} m away from static geometry",
                        s.name, d
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distance from `p` to the nearest static triangle.
    pub fn distance_to_static(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for g in &self.static_geometry {
            let local = g.pose.inverse_transform_point(p);
            for i in 0..g.mesh.triangles.len() {
                let [a, b, c] = g.mesh.corners(i);
                best = best.min(point_triangle_distance(&local, &a, &b, &c));
            }
        }
        best
    }
}

/// Euclidean distance from `p` to the closed triangle `abc`.
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    // Closest-point regions (Ericson, Real-Time Collision Detection 5.1.5)
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}
