//! Triangle meshes, object models and the model library.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::geometry::Vec3;

pub type Rgb = [f64; 3];

const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Default margin added around auto-derived collision boxes, meters.
pub const DEFAULT_COLLISION_MARGIN: f64 = 0.005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// One albedo per triangle, each channel in [0, 1].
    pub albedo: Vec<Rgb>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        albedo: Vec<Rgb>,
    ) -> Result<Self, ModelError> {
        let mesh = Self {
            vertices,
            triangles,
            albedo,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.albedo.len() != self.triangles.len() {
            return Err(ModelError::InvalidMesh(format!(
                "{} triangles but {} albedo entries",
                self.triangles.len(),
                self.albedo.len()
            )));
        }
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(ModelError::InvalidMesh(format!(
                    "triangle {i} references a vertex out of range"
                )));
            }
            if self.triangle_area(i) <= MIN_TRIANGLE_AREA {
                return Err(ModelError::InvalidMesh(format!("triangle {i} is degenerate")));
            }
        }
        for (i, c) in self.albedo.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ModelError::InvalidMesh(format!(
                    "albedo of triangle {i} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn corners(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.corners(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Axis-aligned bounds `(min, max)` of the vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Parses the `v`/`f` subset of Wavefront OBJ and paints every triangle `color`.
    ///
    /// Polygonal faces are fan-triangulated; `f 1/2/3` style references keep only
    /// the vertex index.
    pub fn from_obj(text: &str, color: Rgb) -> Result<Self, ModelError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|e| ModelError::Obj(lineno + 1, format!("{e}")))?;
                    if c.len() != 3 {
                        return Err(ModelError::Obj(lineno + 1, "vertex needs 3 coordinates".into()));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|tok| {
                            let first = tok.split('/').next().unwrap_or("");
                            first.parse::<i64>().map_err(|e| format!("{e}")).and_then(|i| {
                                let n = vertices.len() as i64;
                                let resolved = if i < 0 { n + i } else { i - 1 };
                                if resolved < 0 || resolved >= n {
                                    Err(format!("face index {i} out of range"))
                                } else {
                                    Ok(resolved as u32)
                                }
                            })
                        })
                        .collect::<Result<_, _>>()
                        .map_err(|e| ModelError::Obj(lineno + 1, e))?;
                    if idx.len() < 3 {
                        return Err(ModelError::Obj(lineno + 1, "face needs 3 vertices".into()));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        let albedo = vec![color; triangles.len()];
        Self::new(vertices, triangles, albedo)
    }
}

/// Colors of the six faces of a box. Front is the −y face in the model frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxFaces {
    pub front: Rgb,
    pub back: Rgb,
    pub left: Rgb,
    pub right: Rgb,
    pub top: Rgb,
    pub bottom: Rgb,
}

impl BoxFaces {
    pub fn uniform(c: Rgb) -> Self {
        Self {
            front: c,
            back: c,
            left: c,
            right: c,
            top: c,
            bottom: c,
        }
    }
}

/// A box with `size` = (x, y, z) extents whose origin sits at the center of its bottom face.
pub fn box_mesh(size: Vec3, faces: BoxFaces) -> TriangleMesh {
    let (hx, hy, h) = (size.x / 2.0, size.y / 2.0, size.z);
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let vertices = vec![
        v(-hx, -hy, 0.0),
        v(hx, -hy, 0.0),
        v(hx, hy, 0.0),
        v(-hx, hy, 0.0),
        v(-hx, -hy, h),
        v(hx, -hy, h),
        v(hx, hy, h),
        v(-hx, hy, h),
    ];
    // outward-facing winding
    let quads: [([u32; 4], Rgb); 6] = [
        ([0, 1, 5, 4], faces.front),
        ([2, 3, 7, 6], faces.back),
        ([3, 0, 4, 7], faces.left),
        ([1, 2, 6, 5], faces.right),
        ([4, 5, 6, 7], faces.top),
        ([3, 2, 1, 0], faces.bottom),
    ];
    let mut triangles = Vec::with_capacity(12);
    let mut albedo = Vec::with_capacity(12);
    for (q, c) in quads {
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
        albedo.push(c);
        albedo.push(c);
    }
    TriangleMesh {
        vertices,
        triangles,
        albedo,
    }
}

/// Axis-aligned collision box in the model frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionBox {
    pub min: Vec3,
    pub max: Vec3,
    pub margin: f64,
}

impl CollisionBox {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn half_extents(&self) -> Vec3 {
        (self.max - self.min) / 2.0
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-12 && p[i] <= self.max[i] + 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub label: String,
    pub mesh: TriangleMesh,
    pub collision_box: CollisionBox,
    pub up_axis: Vec3,
}

impl ObjectModel {
    /// Builds a model whose collision box is the mesh bounds with the default margin.
    pub fn new(label: impl Into<String>, mesh: TriangleMesh) -> Result<Self, ModelError> {
        Self::with_margin(label, mesh, DEFAULT_COLLISION_MARGIN)
    }

    pub fn with_margin(
        label: impl Into<String>,
        mesh: TriangleMesh,
        margin: f64,
    ) -> Result<Self, ModelError> {
        mesh.validate()?;
        let (min, max) = mesh.bounds();
        let model = Self {
            label: label.into(),
            mesh,
            collision_box: CollisionBox { min, max, margin },
            up_axis: Vec3::z(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.mesh.validate()?;
        if self.collision_box.margin < 0.0 {
            return Err(ModelError::InvalidModel(self.label.clone(), "negative margin".into()));
        }
        if !self.mesh.vertices.iter().all(|v| self.collision_box.contains(v)) {
            return Err(ModelError::InvalidModel(
                self.label.clone(),
                "collision box does not contain the mesh".into(),
            ));
        }
        if (self.up_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidModel(self.label.clone(), "up axis is not unit".into()));
        }
        Ok(())
    }

    pub fn height(&self) -> f64 {
        self.collision_box.max.z - self.collision_box.min.z
    }
}

/// Every object the system can instantiate, keyed by class label.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelLibrary {
    models: BTreeMap<String, ObjectModel>,
}

impl ModelLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_models(models: impl IntoIterator<Item = ObjectModel>) -> Result<Self, ModelError> {
        let mut lib = Self::new();
        for m in models {
            lib.insert(m)?;
        }
        Ok(lib)
    }

    pub fn insert(&mut self, model: ObjectModel) -> Result<(), ModelError> {
        model.validate()?;
        if self.models.contains_key(&model.label) {
            return Err(ModelError::DuplicateLabel(model.label));
        }
        self.models.insert(model.label.clone(), model);
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&ObjectModel> {
        self.models.get(label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.models.contains_key(label)
    }

    /// Labels in sorted order.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn models(&self) -> impl Iterator<Item = &ObjectModel> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mesh_is_valid_and_bottom_anchored() {
        let m = box_mesh(Vec3::new(0.1, 0.06, 0.2), BoxFaces::uniform([0.5, 0.5, 0.5]));
        m.validate().unwrap();
        let (lo, hi) = m.bounds();
        assert_eq!(lo, Vec3::new(-0.05, -0.03, 0.0));
        assert_eq!(hi, Vec3::new(0.05, 0.03, 0.2));
        // outward normals
        for i in 0..m.triangles.len() {
            let [a, b, c] = m.corners(i);
            let n = (b - a).cross(&(c - a));
            let centroid = (a + b + c) / 3.0 - Vec3::new(0.0, 0.0, 0.1);
            assert!(n.dot(&centroid) > 0.0, "triangle {i} faces inward");
        }
    }

    #[test]
    fn rejects_bad_meshes() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]], vec![[0.0; 3]]).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 1]], vec![[0.0; 3]]).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]], vec![]).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]], vec![[1.5, 0.0, 0.0]]).is_err());
        assert!(TriangleMesh::new(v, vec![[0, 1, 2]], vec![[1.0, 0.0, 0.0]]).is_ok());
    }

    #[test]
    fn obj_subset_parses_and_triangulates() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n";
        let m = TriangleMesh::from_obj(text, [0.2, 0.3, 0.4]).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.albedo.len(), 2);
        assert!(TriangleMesh::from_obj("v 0 0\n", [0.0; 3]).is_err());
        assert!(TriangleMesh::from_obj("v 0 0 0\nf 1 2 3\n", [0.0; 3]).is_err());
        let neg = TriangleMesh::from_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", [0.0; 3]).unwrap();
        assert_eq!(neg.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn model_collision_box_contains_mesh() {
        let mesh = box_mesh(Vec3::new(0.1, 0.06, 0.2), BoxFaces::uniform([0.5; 3]));
        let m = ObjectModel::new("cereal", mesh).unwrap();
        assert_eq!(m.collision_box.margin, DEFAULT_COLLISION_MARGIN);
        assert!((m.height() - 0.2).abs() < 1e-12);
        let mut bad = m.clone();
        bad.collision_box.max.z = 0.1;
        assert!(bad.validate().is_err());
        bad = m.clone();
        bad.collision_box.margin = -0.01;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn library_labels_unique() {
        let mesh = box_mesh(Vec3::new(0.1, 0.06, 0.2), BoxFaces::uniform([0.5; 3]));
        let mut lib = ModelLibrary::new();
        lib.insert(ObjectModel::new("a", mesh.clone()).unwrap()).unwrap();
        assert!(matches!(
            lib.insert(ObjectModel::new("a", mesh).unwrap()),
            Err(ModelError::DuplicateLabel(_))
        ));
        assert_eq!(lib.labels().collect::<Vec<_>>(), vec!["a"]);
    }
}
