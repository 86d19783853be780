//! The artificial world: virtual objects instantiated from library models,
//! quasi-static plausibility physics, and the event log.
//!
//! Physics is reduced to two checks run after every spawn and pose change:
//! an overlap test of margin-inflated oriented collision boxes against static
//! geometry and the other objects, and a settle test that drops an unsupported
//! object onto the highest support below its footprint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::collision::{penetration_depth, Obb};
use crate::error::WorldError;
use crate::geometry::{Pose6D, Vec3};
use crate::map::SemanticMap;
use crate::mesh::{ModelLibrary, ObjectModel};
use crate::render::{render, CameraIntrinsics, RenderItem, SensorFrame};

/// Id of an object in the artificial world. 0 is reserved for "no object".
pub type AwId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    /// Overlap depth above which two boxes are in collision, meters.
    pub penetration_tolerance: f64,
    /// Gap below an object that still counts as resting, meters.
    pub support_tolerance: f64,
    /// Longest fall considered; beyond it the drop is capped, meters.
    pub max_fall: f64,
    /// Falls longer than this make a hypothesis implausible, meters.
    pub implausible_fall: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            penetration_tolerance: 0.002,
            support_tolerance: 0.003,
            max_fall: 2.0,
            implausible_fall: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partner {
    Object(AwId),
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhysicsEventKind {
    Collision { partner: Partner, depth: f64 },
    Fall { displacement: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsEvent {
    #[serde(flatten)]
    pub kind: PhysicsEventKind,
    pub subject: AwId,
    pub tick: u64,
}

impl PhysicsEvent {
    /// True if the event marks the subject's pose as physically implausible.
    pub fn is_disqualifying(&self, config: &PhysicsConfig) -> bool {
        match self.kind {
            PhysicsEventKind::Collision { .. } => true,
            PhysicsEventKind::Fall { displacement } => displacement.norm() > config.implausible_fall,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldObject {
    pub label: String,
    pub pose: Pose6D,
}

/// Command surface of an artificial world, local or remote.
pub trait WorldChannel {
    fn spawn(&mut self, label: &str, pose: &Pose6D) -> Result<(AwId, Vec<PhysicsEvent>), WorldError>;
    fn set_pose(&mut self, id: AwId, pose: &Pose6D) -> Result<Vec<PhysicsEvent>, WorldError>;
    fn delete(&mut self, id: AwId) -> Result<(), WorldError>;
    fn snapshot(&mut self, camera: Option<&Pose6D>) -> Result<SensorFrame, WorldError>;
    fn drain_events(&mut self) -> Result<Vec<PhysicsEvent>, WorldError>;
}

#[derive(Clone, Debug)]
pub struct ArtificialWorld {
    library: ModelLibrary,
    map: SemanticMap,
    objects: BTreeMap<AwId, WorldObject>,
    camera: Pose6D,
    intrinsics: CameraIntrinsics,
    config: PhysicsConfig,
    log: Vec<PhysicsEvent>,
    pending: Vec<PhysicsEvent>,
    tick: u64,
    next_id: AwId,
}

impl ArtificialWorld {
    pub fn new(library: ModelLibrary, map: SemanticMap, intrinsics: CameraIntrinsics) -> Self {
        Self {
            library,
            map,
            objects: BTreeMap::new(),
            camera: Pose6D::identity(),
            intrinsics,
            config: PhysicsConfig::default(),
            log: Vec::new(),
            pending: Vec::new(),
            tick: 0,
            next_id: 1,
        }
    }

    pub fn with_config(mut self, config: PhysicsConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &PhysicsConfig {
        &self.config
    }

    pub fn library(&self) -> &ModelLibrary {
        &self.library
    }

    pub fn map(&self) -> &SemanticMap {
        &self.map
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn set_camera(&mut self, pose: Pose6D) {
        self.camera = pose;
    }

    pub fn camera(&self) -> &Pose6D {
        &self.camera
    }

    pub fn objects(&self) -> &BTreeMap<AwId, WorldObject> {
        &self.objects
    }

    pub fn object(&self, id: AwId) -> Option<&WorldObject> {
        self.objects.get(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Append-only log of every event so far.
    pub fn event_log(&self) -> &[PhysicsEvent] {
        &self.log
    }

    fn model(&self, label: &str) -> Result<&ObjectModel, WorldError> {
        self.library
            .get(label)
            .ok_or_else(|| WorldError::UnknownLabel(label.to_string()))
    }

    fn obb(&self, id: AwId, with_margin: bool) -> Obb {
        let obj = &self.objects[&id];
        let model = &self.library.get(&obj.label).expect("live objects have models");
        Obb::from_collision_box(&model.collision_box, &model.up_axis, &obj.pose, with_margin)
    }

    fn static_obbs(&self) -> Vec<Obb> {
        self.map
            .static_geometry
            .iter()
            .map(|g| {
                let (lo, hi) = g.mesh.bounds();
                Obb::from_local(lo, hi, &g.pose)
            })
            .collect()
    }

    fn emit(&mut self, kind: PhysicsEventKind, subject: AwId) -> PhysicsEvent {
        let e = PhysicsEvent {
            kind,
            subject,
            tick: self.tick,
        };
        self.log.push(e);
        self.pending.push(e);
        e
    }

    fn next_tick(&mut self) {
        self.tick += 1;
    }

    pub fn spawn(&mut self, label: &str, pose: Pose6D) -> Result<(AwId, Vec<PhysicsEvent>), WorldError> {
        self.model(label)?;
        self.next_tick();
        let id = self.next_id;
        self.next_id += 1;
        self.objects.insert(
            id,
            WorldObject {
                label: label.to_string(),
                pose,
            },
        );
        Ok((id, self.check(id)))
    }

    pub fn set_pose(&mut self, id: AwId, pose: Pose6D) -> Result<Vec<PhysicsEvent>, WorldError> {
        let obj = self.objects.get_mut(&id).ok_or(WorldError::UnknownId(id))?;
        obj.pose = pose;
        self.next_tick();
        Ok(self.check(id))
    }

    pub fn delete(&mut self, id: AwId) -> Result<(), WorldError> {
        self.objects.remove(&id).ok_or(WorldError::UnknownId(id))?;
        self.next_tick();
        Ok(())
    }

    /// Collision check followed by the settle check.
    fn check(&mut self, id: AwId) -> Vec<PhysicsEvent> {
        let mut events = self.collisions(id);
        events.extend(self.settle_inner(id));
        events
    }

    fn collisions(&mut self, id: AwId) -> Vec<PhysicsEvent> {
        let me = self.obb(id, true);
        let tol = self.config.penetration_tolerance;
        let mut found = Vec::new();
        let static_hit = self
            .static_obbs()
            .iter()
            .filter_map(|s| penetration_depth(&me, s))
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
        if let Some(depth) = static_hit.filter(|d| *d > tol) {
            found.push((Partner::Static, depth));
        }
        let others: Vec<AwId> = self.objects.keys().copied().filter(|o| *o != id).collect();
        for other in others {
            if let Some(depth) = penetration_depth(&me, &self.obb(other, true)) {
                if depth > tol {
                    found.push((Partner::Object(other), depth));
                }
            }
        }
        found
            .into_iter()
            .map(|(partner, depth)| self.emit(PhysicsEventKind::Collision { partner, depth }, id))
            .collect()
    }

    /// Drops `id` onto its support if it hovers; returns the Fall event, if any.
    pub fn settle(&mut self, id: AwId) -> Result<Option<PhysicsEvent>, WorldError> {
        if !self.objects.contains_key(&id) {
            return Err(WorldError::UnknownId(id));
        }
        self.next_tick();
        Ok(self.settle_inner(id))
    }

    /// Height of the highest support under the footprint of `id` that is not above its middle.
    pub fn support_height(&self, id: AwId) -> Option<f64> {
        let me = self.obb(id, false);
        let (lo, hi) = me.aabb();
        let ceiling = (lo.z + hi.z) / 2.0;
        let overlaps = |a_lo: &Vec3, a_hi: &Vec3| {
            a_lo.x.max(lo.x) < a_hi.x.min(hi.x) - 1e-9 && a_lo.y.max(lo.y) < a_hi.y.min(hi.y) - 1e-9
        };
        let mut best: Option<f64> = None;
        let mut consider = |h: f64| {
            if h <= ceiling {
                best = Some(best.map_or(h, |b: f64| b.max(h)));
            }
        };
        for s in self.map.surfaces.iter().filter(|s| s.is_horizontal()) {
            let coords: Vec<(f64, f64)> = me.corners().iter().map(|c| s.plane_coords(c)).collect();
            let (u0, v0, u1, v1) = coords.iter().fold(
                (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
                |(a, b, c, d), (u, v)| (a.min(*u), b.min(*v), c.max(*u), d.max(*v)),
            );
            let [bu0, bv0, bu1, bv1] = s.bounds;
            if u0.max(bu0) < u1.min(bu1) - 1e-9 && v0.max(bv0) < v1.min(bv1) - 1e-9 {
                consider(s.point.z);
            }
        }
        for &other in self.objects.keys().filter(|o| **o != id) {
            let (olo, ohi) = self.obb(other, false).aabb();
            if overlaps(&olo, &ohi) {
                consider(ohi.z);
            }
        }
        best
    }

    fn settle_inner(&mut self, id: AwId) -> Option<PhysicsEvent> {
        let bottom = self.obb(id, false).aabb().0.z;
        let drop = match self.support_height(id) {
            Some(h) => (bottom - h).max(0.0),
            None => f64::INFINITY,
        };
        if drop <= self.config.support_tolerance {
            return None;
        }
        let drop = drop.min(self.config.max_fall);
        let displacement = Vec3::new(0.0, 0.0, -drop);
        if let Some(obj) = self.objects.get_mut(&id) {
            obj.pose.position += displacement;
        }
        Some(self.emit(PhysicsEventKind::Fall { displacement }, id))
    }

    /// Renders the current state, from `camera` if given, else from the world camera.
    pub fn snapshot(&self, camera: Option<&Pose6D>) -> SensorFrame {
        let items: Vec<RenderItem<'_>> = self
            .objects
            .iter()
            .map(|(id, o)| RenderItem {
                id: *id,
                model: self.library.get(&o.label).expect("live objects have models"),
                pose: o.pose,
            })
            .collect();
        let cam = camera.copied().unwrap_or(self.camera);
        let mut frame = render(&items, &self.map.static_geometry, &cam, &self.intrinsics);
        frame.timestamp = self.tick;
        frame
    }

    /// Events since the previous drain, in order.
    pub fn drain_events(&mut self) -> Vec<PhysicsEvent> {
        std::mem::take(&mut self.pending)
    }
}

impl WorldChannel for ArtificialWorld {
    fn spawn(&mut self, label: &str, pose: &Pose6D) -> Result<(AwId, Vec<PhysicsEvent>), WorldError> {
        ArtificialWorld::spawn(self, label, *pose)
    }

    fn set_pose(&mut self, id: AwId, pose: &Pose6D) -> Result<Vec<PhysicsEvent>, WorldError> {
        ArtificialWorld::set_pose(self, id, *pose)
    }

    fn delete(&mut self, id: AwId) -> Result<(), WorldError> {
        ArtificialWorld::delete(self, id)
    }

    fn snapshot(&mut self, camera: Option<&Pose6D>) -> Result<SensorFrame, WorldError> {
        Ok(ArtificialWorld::snapshot(self, camera))
    }

    fn drain_events(&mut self) -> Result<Vec<PhysicsEvent>, WorldError> {
        Ok(ArtificialWorld::drain_events(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{StaticGeometry, SurfaceRegion};
    use crate::mesh::{box_mesh, BoxFaces};

    const TABLE: f64 = 0.75;

    fn world() -> ArtificialWorld {
        let grey = BoxFaces::uniform([0.5; 3]);
        let map = SemanticMap {
            static_geometry: vec![
                StaticGeometry {
                    name: "table".into(),
                    mesh: box_mesh(Vec3::new(1.0, 1.0, 0.04), grey),
                    pose: Pose6D::from_translation(0.0, 0.0, TABLE - 0.04),
                },
                StaticGeometry {
                    name: "wall".into(),
                    mesh: box_mesh(Vec3::new(0.1, 2.0, 2.0), grey),
                    pose: Pose6D::from_translation(-0.6, 0.0, 0.0),
                },
            ],
            surfaces: vec![SurfaceRegion {
                name: "table_top".into(),
                point: Vec3::new(0.0, 0.0, TABLE),
                normal: Vec3::z(),
                bounds: [-0.5, -0.5, 0.5, 0.5],
                height_band: 0.4,
            }],
        };
        let lib = ModelLibrary::from_models([
            ObjectModel::new("box", box_mesh(Vec3::new(0.1, 0.06, 0.2), BoxFaces::uniform([0.9, 0.1, 0.1])))
                .unwrap(),
            ObjectModel::new("flat", box_mesh(Vec3::new(0.2, 0.2, 0.05), BoxFaces::uniform([0.1, 0.9, 0.1])))
                .unwrap(),
        ])
        .unwrap();
        ArtificialWorld::new(lib, map, CameraIntrinsics::desk())
    }

    #[test]
    fn resting_spawn_has_no_events() {
        let mut w = world();
        let (_, ev) = w.spawn("box", Pose6D::from_translation(0.0, 0.0, TABLE)).unwrap();
        assert!(ev.is_empty(), "{ev:?}");
        assert!(w.drain_events().is_empty());
    }

    #[test]
    fn floating_spawn_falls() {
        let mut w = world();
        let (id, ev) = w.spawn("box", Pose6D::from_translation(0.0, 0.0, TABLE + 0.10)).unwrap();
        assert_eq!(ev.len(), 1);
        match ev[0].kind {
            PhysicsEventKind::Fall { displacement } => {
                assert!((displacement - Vec3::new(0.0, 0.0, -0.10)).norm() < 1e-3)
            }
            _ => panic!("expected a fall"),
        }
        assert!((w.object(id).unwrap().pose.position.z - TABLE).abs() < 1e-9);
        assert_eq!(w.drain_events(), ev);
        assert!(w.drain_events().is_empty());
    }

    #[test]
    fn spawn_inside_wall_collides_with_static() {
        let mut w = world();
        let (_, ev) = w.spawn("box", Pose6D::from_translation(-0.6, 0.0, 1.0)).unwrap();
        assert!(ev.iter().any(|e| matches!(
            e.kind,
            PhysicsEventKind::Collision { partner: Partner::Static, .. }
        )));
    }

    #[test]
    fn unknown_label_and_id() {
        let mut w = world();
        assert_eq!(
            w.spawn("nope", Pose6D::identity()),
            Err(WorldError::UnknownLabel("nope".into()))
        );
        assert_eq!(w.set_pose(9, Pose6D::identity()), Err(WorldError::UnknownId(9)));
        assert_eq!(w.settle(9), Err(WorldError::UnknownId(9)));
    }

    #[test]
    fn set_pose_cases() {
        let mut w = world();
        let rest = Pose6D::from_translation(0.0, 0.0, TABLE);
        let (a, _) = w.spawn("box", rest).unwrap();
        assert!(w.set_pose(a, rest).unwrap().is_empty());
        let (b, _) = w.spawn("box", Pose6D::from_translation(0.3, 0.0, TABLE)).unwrap();
        let ev = w.set_pose(b, Pose6D::from_translation(0.05, 0.0, TABLE)).unwrap();
        assert!(ev.iter().any(|e| matches!(
            e.kind,
            PhysicsEventKind::Collision { partner: Partner::Object(p), .. } if p == a
        )));
        let ev = w.set_pose(b, Pose6D::from_translation(0.3, 0.0, TABLE + 0.05)).unwrap();
        assert_eq!(ev.len(), 1);
        assert!(matches!(ev[0].kind, PhysicsEventKind::Fall { displacement } if (displacement.z + 0.05).abs() < 1e-9));
    }

    #[test]
    fn delete_twice_errors_and_clears_render() {
        let mut w = world();
        let before = w.snapshot(None);
        let (id, _) = w.spawn("box", Pose6D::from_translation(0.0, 0.0, TABLE)).unwrap();
        w.delete(id).unwrap();
        assert!(w.is_empty());
        assert_eq!(w.delete(id), Err(WorldError::UnknownId(id)));
        let after = w.snapshot(None);
        assert_eq!(before.rgb, after.rgb);
        assert!(after.mask.iter().all(|m| *m != id));
    }

    #[test]
    fn stacked_box_settles_on_lower_box() {
        let mut w = world();
        let (_, _) = w.spawn("flat", Pose6D::from_translation(0.0, 0.0, TABLE)).unwrap();
        let top_of_flat = TABLE + 0.05;
        let (upper, ev) = w.spawn("box", Pose6D::from_translation(0.0, 0.0, top_of_flat + 0.02)).unwrap();
        // support heights: table at 0.75, flat box top at 0.80; the highest one below wins
        assert_eq!(ev.len(), 1);
        assert!(matches!(ev[0].kind, PhysicsEventKind::Fall { displacement } if (displacement.z + 0.02).abs() < 1e-9));
        assert!((w.object(upper).unwrap().pose.position.z - top_of_flat).abs() < 1e-9);
    }

    #[test]
    fn no_support_caps_fall() {
        let mut w = world();
        let (_, ev) = w.spawn("box", Pose6D::from_translation(3.0, 3.0, 1.0)).unwrap();
        assert!(matches!(ev[0].kind, PhysicsEventKind::Fall { displacement } if (displacement.z + 2.0).abs() < 1e-12));
    }

    #[test]
    fn two_partner_collisions() {
        let mut w = world();
        let (a, _) = w.spawn("box", Pose6D::from_translation(-0.06, 0.0, TABLE)).unwrap();
        let (b, _) = w.spawn("box", Pose6D::from_translation(0.06, 0.0, TABLE)).unwrap();
        w.drain_events();
        let (_, ev) = w.spawn("box", Pose6D::from_translation(0.0, 0.0, TABLE)).unwrap();
        let partners: Vec<Partner> = ev
            .iter()
            .filter_map(|e| match e.kind {
                PhysicsEventKind::Collision { partner, .. } => Some(partner),
                _ => None,
            })
            .collect();
        assert_eq!(partners, vec![Partner::Object(a), Partner::Object(b)]);
    }

    #[test]
    fn log_is_tick_ordered() {
        let mut w = world();
        w.spawn("box", Pose6D::from_translation(0.0, 0.0, TABLE + 0.1)).unwrap();
        w.spawn("box", Pose6D::from_translation(0.0, 0.0, TABLE + 0.3)).unwrap();
        w.spawn("box", Pose6D::from_translation(0.3, 0.3, TABLE + 0.05)).unwrap();
        let ticks: Vec<u64> = w.event_log().iter().map(|e| e.tick).collect();
        assert!(ticks.windows(2).all(|p| p[0] <= p[1]));
        assert!(!ticks.is_empty());
    }
}
