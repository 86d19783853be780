//! The default desk scene: a table against a wall, eight two-tone product
//! boxes and two look-alike cups, watched from a camera that sways around
//! the table.

use std::f64::consts::PI;

use crate::geometry::{Pose6D, Vec3};
use crate::map::{SemanticMap, StaticGeometry, SurfaceRegion};
use crate::mesh::{box_mesh, BoxFaces, Rgb, DEFAULT_COLLISION_MARGIN};
use crate::render::CameraIntrinsics;
use crate::scenario::{ClassifierSpec, MeshSource, ModelSpec, NoiseConfig, Placement, Scenario};

pub const TABLE_HEIGHT: f64 = 0.75;
/// Where the camera looks from, as an angle around the table center.
/// 45° turns the front faces toward the light, where their shade varies least with yaw.
pub const BASE_AZIMUTH_DEG: f64 = 45.0;
const SWAY_DEG: f64 = 8.0;
const SWAY_PERIOD: f64 = 20.0;
const CAMERA_RADIUS: f64 = 0.72;
const CAMERA_HEIGHT: f64 = 1.42;
const LOOK_HEIGHT: f64 = 0.76;

fn rgb(r: u8, g: u8, b: u8) -> Rgb {
    [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0]
}

/// Front and sides in one color, back in another, top like the front.
fn two_tone(front: Rgb, back: Rgb) -> BoxFaces {
    BoxFaces {
        front,
        back,
        left: front,
        right: front,
        top: front,
        bottom: front,
    }
}

/// Same color all around, distinct top.
fn symmetric(body: Rgb, top: Rgb) -> BoxFaces {
    BoxFaces {
        top,
        ..BoxFaces::uniform(body)
    }
}

/// Channel levels of the desk palette. Front and back faces are seen at Lambert
/// shades between roughly 0.51 and 0.58 over the sway and yaw range of the
/// scene; each level keeps its shaded value inside a single 8-per-channel bin
/// over that range, so small pose errors do not move whole faces across bins.
const LEVELS: [u8; 4] = [20, 86, 146, 205];

fn level(r: usize, g: usize, b: usize) -> Rgb {
    rgb(LEVELS[r], LEVELS[g], LEVELS[b])
}

/// (label, size, face colors)
fn catalog() -> Vec<(&'static str, Vec3, BoxFaces)> {
    let pink = level(3, 1, 2);
    vec![
        ("cereal", Vec3::new(0.12, 0.05, 0.20), two_tone(level(3, 0, 0), level(3, 3, 0))),
        ("tea", Vec3::new(0.10, 0.06, 0.14), two_tone(level(0, 2, 0), level(3, 3, 3))),
        ("soap", Vec3::new(0.09, 0.05, 0.16), two_tone(level(0, 0, 3), level(3, 2, 0))),
        ("juice", Vec3::new(0.08, 0.05, 0.22), two_tone(level(3, 1, 0), level(1, 0, 2))),
        ("milk", Vec3::new(0.10, 0.07, 0.19), two_tone(level(3, 3, 3), level(0, 1, 3))),
        ("coffee", Vec3::new(0.11, 0.07, 0.12), two_tone(level(2, 1, 0), level(3, 0, 3))),
        ("spice", Vec3::new(0.07, 0.045, 0.13), two_tone(level(2, 0, 3), level(0, 3, 3))),
        ("cocoa", Vec3::new(0.11, 0.07, 0.15), two_tone(level(0, 0, 0), level(3, 3, 2))),
        ("yogurt_strawberry", Vec3::new(0.09, 0.06, 0.12), symmetric(pink, level(3, 0, 1))),
        ("yogurt_peach", Vec3::new(0.09, 0.06, 0.13), symmetric(pink, level(3, 2, 1))),
    ]
}

pub const CONFUSERS: [&str; 2] = ["yogurt_strawberry", "yogurt_peach"];

/// Default placement order: slots alternate front and back row, so the short
/// products stand in front of the tall ones.
const DEFAULT_LAYOUT: [&str; 10] = [
    "cocoa",
    "juice",
    "coffee",
    "cereal",
    "yogurt_strawberry",
    "milk",
    "spice",
    "soap",
    "tea",
    "yogurt_peach",
];

/// Yaw at which a model's front face looks at a camera in direction `azimuth` (radians).
pub fn facing_yaw(azimuth: f64) -> f64 {
    azimuth + PI / 2.0
}

pub fn camera_at(azimuth_deg: f64) -> Pose6D {
    let a = azimuth_deg.to_radians();
    let eye = Vec3::new(CAMERA_RADIUS * a.cos(), CAMERA_RADIUS * a.sin(), CAMERA_HEIGHT);
    Pose6D::look_at(eye, Vec3::new(0.0, 0.0, LOOK_HEIGHT), Vec3::z())
}

/// Camera pose for frame `tick`.
pub fn camera_for(tick: usize) -> Pose6D {
    let phase = 2.0 * PI * tick as f64 / SWAY_PERIOD;
    camera_at(BASE_AZIMUTH_DEG + SWAY_DEG * phase.sin())
}

pub fn desk_map() -> SemanticMap {
    let slab = |name: &str, size: Vec3, color: Rgb, at: Vec3| StaticGeometry {
        name: name.to_string(),
        mesh: box_mesh(size, BoxFaces::uniform(color)),
        pose: Pose6D::from_translation(at.x, at.y, at.z),
    };
    SemanticMap {
        static_geometry: vec![
            slab("floor", Vec3::new(4.0, 4.0, 0.02), rgb(110, 110, 115), Vec3::new(0.0, 0.0, -0.02)),
            slab("table", Vec3::new(1.6, 0.8, 0.04), rgb(150, 110, 75), Vec3::new(0.0, 0.0, TABLE_HEIGHT - 0.04)),
            slab("wall", Vec3::new(4.0, 0.02, 2.0), rgb(200, 200, 185), Vec3::new(0.0, -0.46, 0.0)),
        ],
        surfaces: vec![
            SurfaceRegion {
                name: "table".into(),
                point: Vec3::new(0.0, 0.0, TABLE_HEIGHT),
                normal: Vec3::z(),
                bounds: [-0.79, -0.39, 0.79, 0.39],
                height_band: 0.35,
            },
            SurfaceRegion {
                name: "floor".into(),
                point: Vec3::zeros(),
                normal: Vec3::z(),
                bounds: [-1.9, -0.44, 1.9, 1.9],
                height_band: 0.3,
            },
        ],
    }
}

/// Slot positions on the table: two rows across the line of sight, the back
/// row shifted by half a slot.
fn slots() -> Vec<Vec3> {
    let a = BASE_AZIMUTH_DEG.to_radians();
    let toward = Vec3::new(a.cos(), a.sin(), 0.0);
    let across = Vec3::new(-a.sin(), a.cos(), 0.0);
    let mut out = Vec::new();
    for i in 0..5 {
        let s = -0.34 + 0.17 * i as f64;
        out.push(across * s + toward * 0.14);
        out.push(across * (s + 0.085) - toward * 0.14);
    }
    out.into_iter().map(|p| p + Vec3::new(0.0, 0.0, TABLE_HEIGHT)).collect()
}

const YAW_OFFSETS_DEG: [f64; 10] = [-20.0, 10.0, 20.0, -10.0, 0.0, 15.0, -15.0, 5.0, -5.0, 12.0];

/// Options of [`desk_scenario`].
#[derive(Clone, Debug)]
pub struct DeskOptions {
    pub frames: usize,
    /// Labels to place, in slot order; `None` places every model once.
    pub labels: Option<Vec<String>>,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for DeskOptions {
    fn default() -> Self {
        Self {
            frames: 20,
            labels: None,
            noise: NoiseConfig::default(),
            seed: 7,
        }
    }
}

pub fn desk_scenario(options: &DeskOptions) -> Scenario {
    let catalog = catalog();
    let models = catalog
        .iter()
        .map(|(label, size, faces)| ModelSpec {
            label: label.to_string(),
            mesh: MeshSource::Box {
                size: *size,
                faces: *faces,
            },
            margin: DEFAULT_COLLISION_MARGIN,
        })
        .collect();
    let labels: Vec<String> = options
        .labels
        .clone()
        .unwrap_or_else(|| DEFAULT_LAYOUT.iter().map(|l| l.to_string()).collect());
    let base_yaw = facing_yaw(BASE_AZIMUTH_DEG.to_radians());
    let objects = labels
        .into_iter()
        .zip(slots())
        .enumerate()
        .map(|(i, (label, at))| Placement {
            label,
            pose: Pose6D::from_yaw(at, base_yaw + YAW_OFFSETS_DEG[i % YAW_OFFSETS_DEG.len()].to_radians()),
        })
        .collect();
    Scenario {
        name: "desk".into(),
        map: desk_map(),
        models,
        confusers: CONFUSERS.iter().map(|s| s.to_string()).collect(),
        objects,
        intrinsics: CameraIntrinsics::desk(),
        trajectory: (0..options.frames).map(camera_for).collect(),
        noise: options.noise,
        seed: options.seed,
        classifier: ClassifierSpec::default(),
        base_dir: None,
    }
}
