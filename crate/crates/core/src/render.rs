//! Deterministic pinhole ray caster producing RGB, depth and object-mask images.
//!
//! Every pixel casts one ray through its center and keeps the nearest
//! triangle hit. Triangles are visited in a fixed global order (static
//! geometry first, then objects in the order given) and equal distances keep
//! the earlier triangle, so the output is a pure function of the input.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose6D, Vec3};
use crate::map::StaticGeometry;
use crate::mesh::{ObjectModel, Rgb, TriangleMesh};
use crate::world::AwId;

/// Determinant threshold of the ray/triangle test.
const DET_EPSILON: f64 = 1e-9;
const SHADE_FLOOR: f64 = 0.2;

/// Direction the light travels, before normalization.
pub const LIGHT_DIRECTION: [f64; 3] = [-1.0, -1.0, -2.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::desk()
    }
}

impl CameraIntrinsics {
    /// 128×96 with a 100 px focal length, principal point at the image center.
    pub fn desk() -> Self {
        Self::centered(128, 96, 100.0)
    }

    pub fn centered(width: u32, height: u32, focal: f64) -> Self {
        Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width < 16 || self.height < 16 {
            return Err(format!("image {}x{} smaller than 16x16", self.width, self.height));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if !(self.cx >= 0.0
            && self.cx <= self.width as f64
            && self.cy >= 0.0
            && self.cy <= self.height as f64)
        {
            return Err("principal point outside the image".into());
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Ray direction in the camera frame with unit z, so ray parameter = depth.
    pub fn ray(&self, u: u32, v: u32) -> Vec3 {
        Vec3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Back-projects a pixel at `depth` into the camera frame.
    pub fn back_project(&self, u: u32, v: u32, depth: f64) -> Vec3 {
        self.ray(u, v) * depth
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// One RGB-D-mask observation: the triple of images plus the camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorFrame {
    pub intrinsics: CameraIntrinsics,
    pub rgb: Vec<[u8; 3]>,
    /// Meters along the optical axis; 0 where nothing was hit.
    pub depth: Vec<f64>,
    /// Owning object id; 0 for background and static geometry.
    pub mask: Vec<AwId>,
    pub camera: Pose6D,
    pub timestamp: u64,
}

impl SensorFrame {
    pub fn blank(intrinsics: CameraIntrinsics, camera: Pose6D) -> Self {
        let n = intrinsics.pixel_count();
        Self {
            intrinsics,
            rgb: vec![[0; 3]; n],
            depth: vec![0.0; n],
            mask: vec![0; n],
            camera,
            timestamp: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn pixel_uv(&self, index: u32) -> (u32, u32) {
        (index % self.width(), index / self.width())
    }

    /// World-frame point seen at pixel `index`, if it has depth.
    pub fn world_point(&self, index: u32) -> Option<Vec3> {
        let d = self.depth[index as usize];
        if d <= 0.0 {
            return None;
        }
        let (u, v) = self.pixel_uv(index);
        Some(self.camera.transform_point(&self.intrinsics.back_project(u, v, d)))
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.intrinsics.pixel_count();
        self.rgb.len() == n
            && self.depth.len() == n
            && self.mask.len() == n
            && self.depth.iter().all(|d| *d >= 0.0)
    }
}

/// An object to draw: its id in the mask, its model and its pose.
#[derive(Clone, Copy, Debug)]
pub struct RenderItem<'a> {
    pub id: AwId,
    pub model: &'a ObjectModel,
    pub pose: Pose6D,
}

struct Triangle {
    v0: Vec3,
    e1: Vec3,
    e2: Vec3,
    normal: Vec3,
    albedo: Rgb,
}

struct Group {
    owner: AwId,
    lo: Vec3,
    hi: Vec3,
    triangles: Vec<Triangle>,
}

impl Group {
    fn new(owner: AwId, mesh: &TriangleMesh, pose: &Pose6D) -> Self {
        let world: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.transform_point(v)).collect();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &world {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let pad = Vec3::repeat(1e-9);
        let triangles = mesh
            .triangles
            .iter()
            .zip(&mesh.albedo)
            .map(|(t, c)| {
                let v0 = world[t[0] as usize];
                let e1 = world[t[1] as usize] - v0;
                let e2 = world[t[2] as usize] - v0;
                Triangle {
                    v0,
                    e1,
                    e2,
                    normal: e1.cross(&e2).normalize(),
                    albedo: *c,
                }
            })
            .collect();
        Self {
            owner,
            lo: lo - pad,
            hi: hi + pad,
            triangles,
        }
    }

    /// Entry parameter of the ray into the group's bounds, if it hits them.
    fn entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if origin[i] < self.lo[i] || origin[i] > self.hi[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut a, mut b) = ((self.lo[i] - origin[i]) * inv, (self.hi[i] - origin[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Ray/triangle intersection parameter, Möller–Trumbore.
fn intersect(origin: &Vec3, dir: &Vec3, tri: &Triangle) -> Option<f64> {
    let p = dir.cross(&tri.e2);
    let det = tri.e1.dot(&p);
    if det.abs() < DET_EPSILON {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri.v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&tri.e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = tri.e2.dot(&q) * inv;
    (t > DET_EPSILON).then_some(t)
}

fn light() -> Vec3 {
    Vec3::from(LIGHT_DIRECTION).normalize()
}

/// Lambert factor for a surface with normal `n` hit by a ray along `dir`.
fn shade(normal: &Vec3, dir: &Vec3, light: &Vec3) -> f64 {
    let n = if normal.dot(dir) > 0.0 { -normal } else { *normal };
    n.dot(&-light).clamp(SHADE_FLOOR, 1.0)
}

fn to_u8(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

type Pixel = ([u8; 3], f64, AwId);

fn trace(groups: &[Group], origin: &Vec3, dir: &Vec3, light: &Vec3) -> Pixel {
    let mut best = f64::INFINITY;
    let mut hit: Option<(&Triangle, AwId)> = None;
    for g in groups {
        match g.entry(origin, dir) {
            Some(t) if t <= best => {}
            _ => continue,
        }
        for tri in &g.triangles {
            if let Some(t) = intersect(origin, dir, tri) {
                if t < best {
                    best = t;
                    hit = Some((tri, g.owner));
                }
            }
        }
    }
    match hit {
        None => ([0; 3], 0.0, 0),
        Some((tri, owner)) => {
            let s = shade(&tri.normal, dir, light);
            let c = tri.albedo;
            ([to_u8(c[0] * s), to_u8(c[1] * s), to_u8(c[2] * s)], best, owner)
        }
    }
}

/// Renders `objects` and `statics` from `camera`.
///
/// Depth is the camera-frame z of the nearest hit, RGB the hit triangle's
/// albedo times a Lambert term from a fixed light clamped to [0.2, 1], mask
/// the owning object id (0 for static geometry and background).
pub fn render(
    objects: &[RenderItem<'_>],
    statics: &[StaticGeometry],
    camera: &Pose6D,
    intrinsics: &CameraIntrinsics,
) -> SensorFrame {
    let mut groups: Vec<Group> = statics.iter().map(|s| Group::new(0, &s.mesh, &s.pose)).collect();
    groups.extend(objects.iter().map(|o| Group::new(o.id, &o.model.mesh, &o.pose)));
    let light = light();
    let origin = camera.position;
    let (w, h) = (intrinsics.width, intrinsics.height);

    let row = |v: u32| -> Vec<Pixel> {
        (0..w)
            .map(|u| {
                let dir = camera.transform_vector(&intrinsics.ray(u, v));
                trace(&groups, &origin, &dir, &light)
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<Pixel>> = {
        use rayon::prelude::*;
        (0..h).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<Pixel>> = (0..h).map(row).collect();

    let mut frame = SensorFrame::blank(*intrinsics, *camera);
    for (i, (c, d, m)) in rows.into_iter().flatten().enumerate() {
        frame.rgb[i] = c;
        frame.depth[i] = d;
        frame.mask[i] = m;
    }
    frame
}

/// Pixel indices whose mask equals `id`, in ascending order. Empty when the
/// object is occluded or out of view.
pub fn roi_of(frame: &SensorFrame, id: AwId) -> Vec<u32> {
    frame
        .mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m == id)
        .map(|(i, _)| i as u32)
        .collect()
}

pub mod pnm {
    //! Binary PPM (P6) and PGM (P5) encoding of frames.

    use super::SensorFrame;

    pub fn encode_ppm(width: u32, height: u32, rgb: &[[u8; 3]]) -> Vec<u8> {
        let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
        out.reserve(rgb.len() * 3);
        for p in rgb {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn encode_pgm16(width: u32, height: u32, values: &[u16]) -> Vec<u8> {
        let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
        out.reserve(values.len() * 2);
        for v in values {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn rgb_ppm(frame: &SensorFrame) -> Vec<u8> {
        encode_ppm(frame.width(), frame.height(), &frame.rgb)
    }

    /// Depth in millimeters, saturating at 65.535 m.
    pub fn depth_pgm(frame: &SensorFrame) -> Vec<u8> {
        let mm: Vec<u16> = frame
            .depth
            .iter()
            .map(|d| (d * 1000.0).round().clamp(0.0, 65535.0) as u16)
            .collect();
        encode_pgm16(frame.width(), frame.height(), &mm)
    }

    pub fn mask_pgm(frame: &SensorFrame) -> Vec<u8> {
        let ids: Vec<u16> = frame.mask.iter().map(|&m| m.min(65535) as u16).collect();
        encode_pgm16(frame.width(), frame.height(), &ids)
    }

    struct Header {
        magic: [u8; 2],
        width: u32,
        height: u32,
        maxval: u32,
        offset: usize,
    }

    fn header(bytes: &[u8]) -> Result<Header, String> {
        if bytes.len() < 2 {
            return Err("truncated header".into());
        }
        let magic = [bytes[0], bytes[1]];
        let mut pos = 2;
        let mut fields = [0u32; 3];
        for f in &mut fields {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            *f = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or("malformed header")?;
        }
        // exactly one whitespace byte before the raster
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 65535 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        Ok(Header {
            magic,
            width,
            height,
            maxval,
            offset: pos,
        })
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<(u32, u32, Vec<[u8; 3]>), String> {
        let h = header(bytes)?;
        if &h.magic != b"P6" || h.maxval != 255 {
            return Err("expected an 8-bit P6 image".into());
        }
        let n = h.width as usize * h.height as usize;
        let raster = bytes.get(h.offset..h.offset + 3 * n).ok_or("truncated raster")?;
        Ok((
            h.width,
            h.height,
            raster.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        ))
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), String> {
        let h = header(bytes)?;
        if &h.magic != b"P5" {
            return Err("expected a P5 image".into());
        }
        let n = h.width as usize * h.height as usize;
        let wide = h.maxval > 255;
        let len = if wide { 2 * n } else { n };
        let raster = bytes.get(h.offset..h.offset + len).ok_or("truncated raster")?;
        let values = if wide {
            raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            raster.iter().map(|&b| b as u16).collect()
        };
        Ok((h.width, h.height, values))
    }

    /// Rebuilds a frame from its three encoded images. Depth comes back millimeter-quantized.
    pub fn decode_frame(
        rgb: &[u8],
        depth: &[u8],
        mask: &[u8],
        intrinsics: super::CameraIntrinsics,
        camera: crate::geometry::Pose6D,
        timestamp: u64,
    ) -> Result<SensorFrame, String> {
        let (w, h, rgb) = decode_ppm(rgb)?;
        let (dw, dh, depth) = decode_pgm(depth)?;
        let (mw, mh, mask) = decode_pgm(mask)?;
        if (w, h) != (dw, dh) || (w, h) != (mw, mh) || (w, h) != (intrinsics.width, intrinsics.height)
        {
            return Err("image dimensions disagree".into());
        }
        Ok(SensorFrame {
            intrinsics,
            rgb,
            depth: depth.into_iter().map(|d| d as f64 / 1000.0).collect(),
            mask: mask.into_iter().map(u32::from).collect(),
            camera,
            timestamp,
        })
    }
}
