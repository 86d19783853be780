//! Percept processing: surface-based segmentation and the annotation experts
//! (color histogram, PCA shape and pose, k-NN classifier) that turn a sensor
//! frame into object hypotheses.

use std::collections::HashMap;

use nalgebra::{Matrix2, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::HistogramError;
use crate::geometry::{Pose6D, Vec3};
use crate::histogram::{Binning, Histogram};
use crate::map::{SemanticMap, SurfaceRegion};
use crate::render::SensorFrame;
use crate::scene::ObjectHypothesis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptError {
    #[error("cluster has {0} points, at least {1} are needed")]
    TooFewPoints(usize, usize),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Single-linkage distance, meters.
    pub link_distance: f64,
    pub min_points: usize,
    /// Points this close to the support plane belong to the surface, meters.
    pub plane_clearance: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            link_distance: 0.02,
            min_points: 30,
            plane_clearance: 0.005,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerceptConfig {
    pub segmentation: SegmentationConfig,
    pub binning: Binning,
}

/// Points of one segmented object candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCluster {
    /// Source pixels, ascending; one per point.
    pub roi: Vec<u32>,
    /// Back-projected points, map frame.
    pub points: Vec<Vec3>,
    pub region: String,
    pub plane_point: Vec3,
    pub plane_normal: Vec3,
    /// Camera position the points were seen from.
    pub viewpoint: Vec3,
}

impl PointCluster {
    fn plane_axes(&self) -> (Vec3, Vec3) {
        let region = SurfaceRegion {
            name: String::new(),
            point: self.plane_point,
            normal: self.plane_normal,
            bounds: [0.0, 0.0, 1.0, 1.0],
            height_band: 1.0,
        };
        region.plane_axes()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage Euclidean clustering: points closer than `link` end up in the
/// same group. Groups are returned with ascending member indices, ordered by
/// their first member.
pub fn euclidean_clusters(points: &[Vec3], link: f64) -> Vec<Vec<usize>> {
    let cell = |p: &Vec3| {
        (
            (p.x / link).floor() as i64,
            (p.y / link).floor() as i64,
            (p.z / link).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let link2 = link * link;
    let mut sets = DisjointSet::new(points.len());
    for (i, p) in points.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if j > i && (points[j] - p).norm_squared() <= link2 {
                                sets.union(i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..points.len() {
        let root = sets.find(i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Segments the frame into object candidates standing on the map's surfaces.
///
/// Pixels are back-projected into the map frame; points inside a region's
/// bounds and height band (but not on the plane itself) are clustered per
/// region. Clusters below the minimum size are dropped. The result is sorted
/// by each cluster's top-left pixel.
pub fn segment(frame: &SensorFrame, map: &SemanticMap, config: &SegmentationConfig) -> Vec<PointCluster> {
    let mut per_region: Vec<Vec<(u32, Vec3)>> = vec![Vec::new(); map.surfaces.len()];
    for idx in 0..frame.depth.len() as u32 {
        let Some(p) = frame.world_point(idx) else { continue };
        if let Some(r) = map
            .surfaces
            .iter()
            .position(|s| s.admits(&p, config.plane_clearance))
        {
            per_region[r].push((idx, p));
        }
    }
    let mut clusters = Vec::new();
    for (region, members) in map.surfaces.iter().zip(per_region) {
        let points: Vec<Vec3> = members.iter().map(|(_, p)| *p).collect();
        for group in euclidean_clusters(&points, config.link_distance) {
            if group.len() < config.min_points {
                continue;
            }
            clusters.push(PointCluster {
                roi: group.iter().map(|&i| members[i].0).collect(),
                points: group.iter().map(|&i| members[i].1).collect(),
                region: region.name.clone(),
                plane_point: region.point,
                plane_normal: region.normal,
                viewpoint: frame.camera.position,
            });
        }
    }
    clusters.sort_by_key(|c| c.roi[0]);
    clusters
}

/// Color histogram of the frame's RGB pixels inside `roi`.
pub fn histogram_expert(frame: &SensorFrame, roi: &[u32], binning: Binning) -> Result<Histogram, HistogramError> {
    if roi.is_empty() {
        return Err(HistogramError::EmptyRoi);
    }
    Ok(Histogram::from_pixels(binning, roi.iter().map(|&i| &frame.rgb[i as usize])))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeEstimate {
    /// Spans along the first in-plane axis, the second in-plane axis, and the normal.
    pub extents: Vec3,
    /// Origin on the support plane under the footprint center; x along the first axis, z along the normal.
    pub pose: Pose6D,
    /// No dominant in-plane axis: yaw fixed to 0.
    pub yaw_degenerate: bool,
}

/// Relative eigenvalue gap below which the footprint counts as isotropic.
const ISOTROPY_GAP: f64 = 0.05;

fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Area, centroid and central second moments of a simple polygon.
fn polygon_moments(poly: &[(f64, f64)]) -> (f64, (f64, f64), Matrix2<f64>) {
    let n = poly.len();
    let (mut a, mut cx, mut cy, mut ixx, mut iyy, mut ixy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        let c = x0 * y1 - x1 * y0;
        a += c;
        cx += (x0 + x1) * c;
        cy += (y0 + y1) * c;
        ixx += (x0 * x0 + x0 * x1 + x1 * x1) * c;
        iyy += (y0 * y0 + y0 * y1 + y1 * y1) * c;
        ixy += (x0 * y1 + 2.0 * x0 * y0 + 2.0 * x1 * y1 + x1 * y0) * c;
    }
    a /= 2.0;
    if a.abs() < 1e-14 {
        return (0.0, (0.0, 0.0), Matrix2::zeros());
    }
    cx /= 6.0 * a;
    cy /= 6.0 * a;
    // raw moments about the origin, then shift to the centroid
    let sxx = ixx / 12.0 / a - cx * cx;
    let syy = iyy / 12.0 / a - cy * cy;
    let sxy = ixy / 24.0 / a - cx * cy;
    (a.abs(), (cx, cy), Matrix2::new(sxx, sxy, sxy, syy))
}

/// Long-side direction of the smallest-area rectangle enclosing a convex
/// polygon. One side of that rectangle is collinear with a polygon edge.
fn min_area_direction(hull: &[(f64, f64)]) -> (f64, f64) {
    let n = hull.len();
    let mut best = (f64::INFINITY, (1.0, 0.0));
    for i in 0..n {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % n];
        let len = (x1 - x0).hypot(y1 - y0);
        if len < 1e-12 {
            continue;
        }
        let (c, s) = ((x1 - x0) / len, (y1 - y0) / len);
        let (mut a0, mut a1, mut b0, mut b1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in hull {
            let a = c * x + s * y;
            let b = -s * x + c * y;
            a0 = a0.min(a);
            a1 = a1.max(a);
            b0 = b0.min(b);
            b1 = b1.max(b);
        }
        let area = (a1 - a0) * (b1 - b0);
        if area < best.0 - 1e-12 {
            best = (area, if a1 - a0 >= b1 - b0 { (c, s) } else { (-s, c) });
        }
    }
    best.1
}

/// PCA geometry and pose of a cluster standing on its support plane.
///
/// The up axis is the plane normal. The footprint is the convex hull of the
/// points projected onto the plane; its second moments decide whether it has
/// a dominant axis at all, and the yaw axis is the long side of its
/// smallest enclosing rectangle. Moments of a coarsely sampled footprint lean
/// toward the image rows, the rectangle follows the well-sampled front edge.
/// Its sign is chosen so the object's −y face (the front) looks toward the
/// viewpoint; without that convention the yaw is only known up to a half turn.
/// The position is the middle of the footprint's extent along those axes.
pub fn shape_pose_expert(cluster: &PointCluster) -> Result<ShapeEstimate, PerceptError> {
    const MIN_POINTS: usize = 30;
    if cluster.points.len() < MIN_POINTS {
        return Err(PerceptError::TooFewPoints(cluster.points.len(), MIN_POINTS));
    }
    let n = cluster.plane_normal;
    let (u, v) = cluster.plane_axes();
    let rel: Vec<Vec3> = cluster.points.iter().map(|p| p - cluster.plane_point).collect();
    let flat: Vec<(f64, f64)> = rel.iter().map(|d| (d.dot(&u), d.dot(&v))).collect();

    let hull = convex_hull(&flat);
    let (area, _, cov) = if hull.len() >= 3 {
        polygon_moments(&hull)
    } else {
        (0.0, (0.0, 0.0), Matrix2::zeros())
    };
    let eig = cov.symmetric_eigen();
    let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let l1 = eig.eigenvalues[major];
    let l2 = eig.eigenvalues[minor];
    let degenerate = area < 1e-8 || l1 <= 1e-12 || (l1 - l2) / l1 < ISOTROPY_GAP;

    let mut x_axis = if degenerate {
        u
    } else {
        let (a, b) = min_area_direction(&hull);
        (u * a + v * b).normalize()
    };
    let spans = |axis: &Vec3| {
        rel.iter()
            .map(|d| d.dot(axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
    };
    let (x0, x1) = spans(&x_axis);
    let (y0, y1) = spans(&n.cross(&x_axis));
    let center = cluster.plane_point + x_axis * ((x0 + x1) / 2.0) + n.cross(&x_axis) * ((y0 + y1) / 2.0);
    if !degenerate {
        let front = -n.cross(&x_axis);
        if front.dot(&(cluster.viewpoint - center)) < 0.0 {
            x_axis = -x_axis;
        }
    }
    let height = rel.iter().map(|d| d.dot(&n)).fold(0.0, f64::max);
    let y_axis = n.cross(&x_axis);
    let rot = Rotation3::from_basis_unchecked(&[x_axis, y_axis, n]);
    Ok(ShapeEstimate {
        extents: Vec3::new(x1 - x0, y1 - y0, height),
        pose: Pose6D::new(center, UnitQuaternion::from_rotation_matrix(&rot)),
        yaw_degenerate: degenerate,
    })
}

/// Normalized color histogram followed by the extents sorted in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn new(histogram: &Histogram, extents: &Vec3) -> Self {
        let mut v = histogram.normalized();
        let mut e = [extents.x, extents.y, extents.z];
        e.sort_by(|a, b| b.total_cmp(a));
        v.extend_from_slice(&e);
        Self(v)
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub label: String,
    pub features: FeatureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub exemplars: Vec<Exemplar>,
    pub k: usize,
}

impl ClassifierModel {
    pub fn new(exemplars: Vec<Exemplar>, k: usize) -> Result<Self, String> {
        let m = Self { exemplars, k };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 || self.k > self.exemplars.len() {
            return Err(format!(
                "k = {} must be in 1..={}",
                self.k,
                self.exemplars.len()
            ));
        }
        Ok(())
    }
}

/// k-NN ranking: the score of a label is the fraction of the k nearest
/// exemplars carrying it. Ties go to the smaller mean neighbor distance, then
/// to the lexicographically smaller label.
pub fn classify(model: &ClassifierModel, fv: &FeatureVector) -> Vec<(String, f64)> {
    let mut dists: Vec<(f64, usize)> = model
        .exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| (e.features.distance(fv), i))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = model.k.min(dists.len());
    let mut tally: Vec<(&str, usize, f64)> = Vec::new();
    for &(d, i) in &dists[..k] {
        let label = model.exemplars[i].label.as_str();
        match tally.iter_mut().find(|t| t.0 == label) {
            Some(t) => {
                t.1 += 1;
                t.2 += d;
            }
            None => tally.push((label, 1, d)),
        }
    }
    tally.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then((a.2 / a.1 as f64).total_cmp(&(b.2 / b.1 as f64)))
            .then(a.0.cmp(b.0))
    });
    tally
        .into_iter()
        .map(|(l, c, _)| (l.to_string(), c as f64 / k as f64))
        .collect()
}

/// Annotates one cluster with every expert.
pub fn annotate(
    frame: &SensorFrame,
    cluster: &PointCluster,
    model: &ClassifierModel,
    binning: Binning,
) -> Result<ObjectHypothesis, PerceptError> {
    let histogram = histogram_expert(frame, &cluster.roi, binning)?;
    let shape = shape_pose_expert(cluster)?;
    let fv = FeatureVector::new(&histogram, &shape.extents);
    let mut h = ObjectHypothesis::new(shape.pose, cluster.roi.clone());
    h.ranking = classify(model, &fv);
    h.histogram = Some(histogram);
    h.extents = Some(shape.extents);
    h.yaw_degenerate = shape.yaw_degenerate;
    h.region = cluster.region.clone();
    Ok(h)
}

/// Full percept pipeline: segment, then annotate every cluster. Identities are left unassigned.
pub fn process(
    frame: &SensorFrame,
    map: &SemanticMap,
    model: &ClassifierModel,
    config: &PerceptConfig,
) -> Result<Vec<ObjectHypothesis>, PerceptError> {
    segment(frame, map, &config.segmentation)
        .iter()
        .map(|c| annotate(frame, c, model, config.binning))
        .collect()
}
