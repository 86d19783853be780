//! Scenario documents: the map, the model library, the ground-truth scene,
//! the camera trajectory and the noise applied by the harness.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::geometry::{Pose6D, Vec3};
use crate::map::SemanticMap;
use crate::mesh::{box_mesh, BoxFaces, ModelLibrary, ObjectModel, Rgb, TriangleMesh, DEFAULT_COLLISION_MARGIN};
use crate::render::CameraIntrinsics;

/// Where a model's mesh comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshSource {
    /// A box with its origin at the bottom center.
    Box { size: Vec3, faces: BoxFaces },
    Inline {
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        albedo: Vec<Rgb>,
    },
    /// OBJ file with `v`/`f` records, relative to the scenario file.
    Obj { path: String, color: Rgb },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub label: String,
    pub mesh: MeshSource,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_COLLISION_MARGIN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub label: String,
    pub pose: Pose6D,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian pixel noise, 8-bit counts.
    pub pixel_sigma: f64,
    /// Gaussian jitter of perceived positions, meters.
    pub position_jitter: f64,
    /// Gaussian jitter of perceived yaw, degrees.
    pub yaw_jitter_deg: f64,
    /// Probability that a hypothesis gets a wrong top label.
    pub label_corruption: f64,
    /// Probability that a hypothesis is turned by 180° about its up axis.
    pub flip_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    pub k: usize,
    /// Yaw offsets from facing the first camera pose, degrees. Each model is
    /// rendered once per offset to produce its exemplars.
    pub yaw_offsets_deg: Vec<f64>,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            k: 3,
            yaw_offsets_deg: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub map: SemanticMap,
    pub models: Vec<ModelSpec>,
    /// Labels of models that look alike from the front and back.
    #[serde(default)]
    pub confusers: Vec<String>,
    pub objects: Vec<Placement>,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    pub trajectory: Vec<Pose6D>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    /// Directory that relative OBJ paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let mut s: Scenario = serde_json::from_str(text)?;
        s.base_dir = base_dir.map(Path::to_path_buf);
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, path.parent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    pub fn is_confuser(&self, label: &str) -> bool {
        self.confusers.iter().any(|c| c == label)
    }

    fn mesh_of(&self, spec: &ModelSpec) -> Result<TriangleMesh, ScenarioError> {
        Ok(match &spec.mesh {
            MeshSource::Box { size, faces } => box_mesh(*size, *faces),
            MeshSource::Inline {
                vertices,
                triangles,
                albedo,
            } => TriangleMesh::new(vertices.clone(), triangles.clone(), albedo.clone())?,
            MeshSource::Obj { path, color } => {
                let full = match &self.base_dir {
                    Some(dir) => dir.join(path),
                    None => PathBuf::from(path),
                };
                let text = std::fs::read_to_string(&full).map_err(|source| ScenarioError::Io {
                    path: full.display().to_string(),
                    source,
                })?;
                TriangleMesh::from_obj(&text, *color)?
            }
        })
    }

    pub fn library(&self) -> Result<ModelLibrary, ScenarioError> {
        let mut lib = ModelLibrary::new();
        for spec in &self.models {
            lib.insert(ObjectModel::with_margin(spec.label.clone(), self.mesh_of(spec)?, spec.margin)?)?;
        }
        Ok(lib)
    }

    /// Checks everything a run relies on and returns the model library.
    pub fn validate(&self) -> Result<ModelLibrary, ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let n = &self.noise;
        for (name, rate) in [("label_corruption", n.label_corruption), ("flip_rate", n.flip_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return invalid(format!("{name} = {rate} is outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("pixel_sigma", n.pixel_sigma),
            ("position_jitter", n.position_jitter),
            ("yaw_jitter_deg", n.yaw_jitter_deg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be a finite non-negative number"));
            }
        }
        if self.trajectory.is_empty() {
            return invalid("the camera trajectory is empty".into());
        }
        self.intrinsics.validate().map_err(ScenarioError::Invalid)?;
        self.map.validate()?;
        let lib = self.library()?;
        for p in &self.objects {
            if !lib.contains(&p.label) {
                return invalid(format!("placed object {} is not in the library", p.label));
            }
        }
        for c in &self.confusers {
            if !lib.contains(c) {
                return invalid(format!("confuser {c} is not in the library"));
            }
        }
        let exemplars = lib.len() * self.classifier.yaw_offsets_deg.len();
        if self.classifier.k == 0 || self.classifier.k > exemplars {
            return invalid(format!("classifier k = {} must be in 1..={exemplars}", self.classifier.k));
        }
        Ok(lib)
    }
}
