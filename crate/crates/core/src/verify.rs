//! The verification loop: mirror the belief into the artificial world,
//! render what the camera should see, compare per object with the real
//! frame, and refine or reject hypotheses that do not explain it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{GraphError, LoopError, WorldError};
use crate::geometry::{FrameTransform, Pose6D, Vec3};
use crate::histogram::{hellinger, Binning};
use crate::map::SemanticMap;
use crate::mesh::ModelLibrary;
use crate::ois::{synchronize, IdentityPolicy};
use crate::percept::{histogram_expert, process, ClassifierModel, PerceptConfig};
use crate::render::{render, roi_of, CameraIntrinsics, RenderItem, SensorFrame};
use crate::scene::{IdentityEvent, ObjectHypothesis, ObjectId, SceneGraph, Status};
use crate::world::{AwId, PhysicsConfig, PhysicsEvent, PhysicsEventKind, WorldChannel};

pub const NOT_VISIBLE: &str = "not visible as expected";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Detect,
    Verify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Query {
    pub kind: QueryKind,
    pub class_filter: Option<String>,
    pub region_filter: Option<String>,
    /// Compare rounds per frame.
    pub max_iterations: u32,
    /// Largest histogram distance that still counts as a match.
    pub tau_match: f64,
    /// Largest mean absolute depth error that still counts as a match, meters.
    pub tau_depth: f64,
}

impl Default for Query {
    fn default() -> Self {
        Self {
            kind: QueryKind::Detect,
            class_filter: None,
            region_filter: None,
            max_iterations: 3,
            tau_match: 0.45,
            tau_depth: 0.03,
        }
    }
}

impl Query {
    pub fn validate(&self) -> Result<(), LoopError> {
        if self.max_iterations == 0 {
            return Err(LoopError::InvalidQuery("max_iterations must be at least 1".into()));
        }
        if !(self.tau_match > 0.0 && self.tau_match < 1.0) {
            return Err(LoopError::InvalidQuery("tau_match must lie in (0, 1)".into()));
        }
        if self.tau_depth.is_nan() || self.tau_depth <= 0.0 {
            return Err(LoopError::InvalidQuery("tau_depth must be positive".into()));
        }
        if self.kind == QueryKind::Verify && self.class_filter.is_none() {
            return Err(LoopError::InvalidQuery("a verify query names the class to verify".into()));
        }
        Ok(())
    }

    pub fn admits(&self, label: &str, region: &str) -> bool {
        self.class_filter.as_deref().is_none_or(|c| c == label)
            && self.region_filter.as_deref().is_none_or(|r| r == region)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
    Implausible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectComparison {
    pub id: ObjectId,
    pub aw_id: Option<AwId>,
    pub label: String,
    /// Histogram distance between the real and rendered region; `None` if
    /// either region is empty.
    pub distance: Option<f64>,
    /// Mean absolute depth error over the pixels both regions share, meters.
    pub depth_error: Option<f64>,
    pub events: Vec<PhysicsEvent>,
    pub verdict: Verdict,
    pub reason: Option<String>,
}

impl ObjectComparison {
    /// Distance used when judging edits; a missing region counts as maximal.
    pub fn effective_distance(&self) -> f64 {
        self.distance.unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tick: u64,
    pub iteration: u32,
    pub objects: Vec<ObjectComparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfirmedObject {
    pub id: ObjectId,
    pub label: String,
    pub pose: Pose6D,
    pub region: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedObject {
    pub id: ObjectId,
    pub label: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryAnswer {
    pub confirmed: Vec<ConfirmedObject>,
    pub rejected: Vec<RejectedObject>,
    pub iterations: u32,
}

/// Which edits changed a hypothesis during one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edit {
    #[default]
    None,
    Flip,
    Relabel,
}

/// What happened to one hypothesis during one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectOutcome {
    pub id: ObjectId,
    /// Top label as perceived, before verification.
    pub perceived_label: String,
    pub final_label: String,
    pub final_pose: Pose6D,
    pub status: Status,
    pub edits: Vec<Edit>,
    /// Distance measured in each compare round.
    pub distances: Vec<f64>,
    /// Compare round in which the object was confirmed.
    pub confirmed_in: Option<u32>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub tick: u64,
    pub answer: QueryAnswer,
    pub reports: Vec<ComparisonReport>,
    /// One entry per fresh hypothesis, in percept order.
    pub outcomes: Vec<ObjectOutcome>,
    pub identity_events: Vec<IdentityEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub percept: PerceptConfig,
    pub policy: IdentityPolicy,
    pub physics: PhysicsConfig,
    /// An edit is kept only if it lowers the distance by more than this.
    pub improvement_margin: f64,
    /// Transform from the map frame into the artificial world's frame.
    pub frame: FrameTransform,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            percept: PerceptConfig::default(),
            policy: IdentityPolicy::default(),
            physics: PhysicsConfig::default(),
            improvement_margin: 0.05,
            frame: FrameTransform::map_to_aw(),
        }
    }
}

/// Compares the real and rendered frames for each object in `ids`.
///
/// Both frames must come from the same camera pose.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    s_rw: &SensorFrame,
    s_aw: &SensorFrame,
    graph: &SceneGraph,
    ids: &[ObjectId],
    physics: &BTreeMap<ObjectId, Vec<PhysicsEvent>>,
    query: &Query,
    physics_config: &PhysicsConfig,
    binning: Binning,
) -> ComparisonReport {
    let (dp, da) = s_rw.camera.distance_to(&s_aw.camera);
    assert!(dp < 1e-6 && da < 1e-6, "frames were taken from different camera poses");
    let objects = ids
        .iter()
        .filter_map(|id| {
            let h = graph.get(*id)?;
            let events = physics.get(id).cloned().unwrap_or_default();
            Some(compare_object(s_rw, s_aw, h, *id, graph.link_of(*id), events, query, physics_config, binning))
        })
        .collect();
    ComparisonReport {
        tick: s_rw.timestamp,
        iteration: 0,
        objects,
    }
}

#[allow(clippy::too_many_arguments)]
fn compare_object(
    s_rw: &SensorFrame,
    s_aw: &SensorFrame,
    h: &ObjectHypothesis,
    id: ObjectId,
    aw_id: Option<AwId>,
    events: Vec<PhysicsEvent>,
    query: &Query,
    physics_config: &PhysicsConfig,
    binning: Binning,
) -> ObjectComparison {
    let label = h.top_label().unwrap_or_default().to_string();
    let aw_roi = aw_id.map(|a| roi_of(s_aw, a)).unwrap_or_default();
    let distance = match (histogram_expert(s_rw, &h.roi, binning), histogram_expert(s_aw, &aw_roi, binning)) {
        (Ok(a), Ok(b)) => hellinger(&a, &b).ok(),
        _ => None,
    };
    let depth_error = depth_mae(s_rw, s_aw, &h.roi, &aw_roi);
    let disqualifying = events.iter().find(|e| e.is_disqualifying(physics_config));

    let (verdict, reason) = if let Some(e) = disqualifying {
        (Verdict::Implausible, Some(describe(e)))
    } else if aw_id.is_none() {
        (Verdict::Implausible, Some("no virtual counterpart".to_string()))
    } else if aw_roi.is_empty() {
        (Verdict::Mismatch, Some(NOT_VISIBLE.to_string()))
    } else {
        let d = distance.unwrap_or(1.0);
        let z = depth_error.unwrap_or(f64::INFINITY);
        if d <= query.tau_match && z <= query.tau_depth {
            (Verdict::Match, None)
        } else if d > query.tau_match {
            (Verdict::Mismatch, Some(format!("appearance differs (distance {d:.3})")))
        } else if depth_error.is_none() {
            (Verdict::Mismatch, Some("real and rendered regions do not overlap".to_string()))
        } else {
            (Verdict::Mismatch, Some(format!("geometry differs (depth error {z:.3} m)")))
        }
    };
    ObjectComparison {
        id,
        aw_id,
        label,
        distance,
        depth_error,
        events,
        verdict,
        reason,
    }
}

fn describe(e: &PhysicsEvent) -> String {
    match e.kind {
        PhysicsEventKind::Collision { depth, .. } => format!("physically implausible: collision ({depth:.3} m)"),
        PhysicsEventKind::Fall { displacement } => {
            format!("physically implausible: falls {:.3} m", displacement.norm())
        }
    }
}

/// Mean absolute depth difference over the pixels in both regions.
pub fn depth_mae(s_rw: &SensorFrame, s_aw: &SensorFrame, rw_roi: &[u32], aw_roi: &[u32]) -> Option<f64> {
    let aw: BTreeSet<u32> = aw_roi.iter().copied().collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for &i in rw_roi.iter().filter(|i| aw.contains(i)) {
        let (a, b) = (s_rw.depth[i as usize], s_aw.depth[i as usize]);
        if a.is_finite() && b.is_finite() {
            sum += (a - b).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Copy, Debug, Default)]
struct EditState {
    flip_tried: bool,
    /// Next ranking position to try as a relabel.
    next_rank: usize,
}

/// The belief state and its mirror in the artificial world.
pub struct Icbs<W: WorldChannel> {
    world: W,
    library: ModelLibrary,
    map: SemanticMap,
    classifier: ClassifierModel,
    config: LoopConfig,
    graph: SceneGraph,
    /// Label and pose last sent for each virtual object.
    sent: BTreeMap<AwId, (String, Pose6D)>,
    /// Physics events of the last command issued for each object.
    physics: BTreeMap<ObjectId, Vec<PhysicsEvent>>,
}

impl<W: WorldChannel> Icbs<W> {
    pub fn new(
        world: W,
        library: ModelLibrary,
        map: SemanticMap,
        classifier: ClassifierModel,
        config: LoopConfig,
    ) -> Self {
        Self {
            world,
            library,
            map,
            classifier,
            config,
            graph: SceneGraph::new(),
            sent: BTreeMap::new(),
            physics: BTreeMap::new(),
        }
    }

    pub fn graph(&self) -> &SceneGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut SceneGraph {
        &mut self.graph
    }

    pub fn world(&self) -> &W {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut W {
        &mut self.world
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn physics_events(&self, id: ObjectId) -> &[PhysicsEvent] {
        self.physics.get(&id).map_or(&[], |v| v.as_slice())
    }

    fn aw_pose(&self, pose: &Pose6D) -> Pose6D {
        self.config.frame.apply_pose(pose)
    }

    fn up_axis(&self, label: &str) -> Vec3 {
        self.library.get(label).map_or_else(Vec3::z, |m| m.up_axis)
    }

    /// Renders the artificial world from `camera`, given in the map frame.
    pub fn render_belief(&mut self, camera: &Pose6D) -> Result<SensorFrame, WorldError> {
        let cam = self.aw_pose(camera);
        let mut s = self.world.snapshot(Some(&cam))?;
        s.camera = *camera;
        Ok(s)
    }

    /// Renders the believed objects that are not rejected, locally and in the
    /// map frame. Mask value `i + 1` is the `i`-th returned id.
    fn render_accepted(&self, camera: &Pose6D, intrinsics: &CameraIntrinsics) -> (Vec<ObjectId>, SensorFrame) {
        let mut ids = Vec::new();
        let mut items = Vec::new();
        for (id, h) in self.graph.objects() {
            let model = h.top_label().and_then(|l| self.library.get(l));
            if let (Some(model), false) = (model, h.status == Status::Rejected) {
                items.push(RenderItem {
                    id: ids.len() as AwId + 1,
                    model,
                    pose: h.pose,
                });
                ids.push(*id);
            }
        }
        (ids, render(&items, &self.map.static_geometry, camera, intrinsics))
    }

    /// Issues the world commands that bring the artificial world in line
    /// with the graph and returns how many were sent. Physics events of each
    /// command are attributed to the owning hypothesis.
    pub fn sync_belief(&mut self) -> Result<usize, WorldError> {
        let mut commands = 0;
        for aw in self.graph.take_orphaned() {
            self.world.delete(aw)?;
            self.sent.remove(&aw);
            commands += 1;
        }
        let graph = &self.graph;
        self.physics.retain(|id, _| graph.get(*id).is_some());
        for id in self.graph.ids() {
            let h = self.graph.get(id).expect("listed id");
            let label = h.top_label().unwrap_or_default().to_string();
            let pose = self.aw_pose(&h.pose);
            match self.graph.link_of(id) {
                Some(aw) => {
                    let (sent_label, sent_pose) = self.sent.get(&aw).cloned().expect("linked objects were sent");
                    if sent_label != label {
                        self.despawn(id, aw)?;
                        self.spawn_for(id, &label, &pose)?;
                        commands += 2;
                    } else if !same_pose(&sent_pose, &pose) {
                        let events = self.world.set_pose(aw, &pose)?;
                        self.sent.insert(aw, (label, pose));
                        self.physics.insert(id, events);
                        commands += 1;
                    }
                }
                None => {
                    self.spawn_for(id, &label, &pose)?;
                    commands += 1;
                }
            }
        }
        Ok(commands)
    }

    fn despawn(&mut self, id: ObjectId, aw: AwId) -> Result<(), WorldError> {
        self.graph.unlink(id);
        self.world.delete(aw)?;
        self.sent.remove(&aw);
        Ok(())
    }

    /// Spawns the model for `id`. An unknown label leaves the object
    /// unlinked, which the comparison reports as implausible.
    fn spawn_for(&mut self, id: ObjectId, label: &str, pose: &Pose6D) -> Result<(), WorldError> {
        match self.world.spawn(label, pose) {
            Ok((aw, events)) => {
                self.graph
                    .link(id, aw)
                    .map_err(|e: GraphError| WorldError::Protocol(e.to_string()))?;
                self.sent.insert(aw, (label.to_string(), *pose));
                self.physics.insert(id, events);
                Ok(())
            }
            Err(WorldError::UnknownLabel(_)) => {
                self.physics.remove(&id);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn compare_one(&mut self, s_rw: &SensorFrame, id: ObjectId, query: &Query) -> Result<ObjectComparison, WorldError> {
        let s_aw = self.render_belief(&s_rw.camera)?;
        let h = self.graph.get(id).expect("known id");
        let events = self.physics.get(&id).cloned().unwrap_or_default();
        Ok(compare_object(
            s_rw,
            &s_aw,
            h,
            id,
            self.graph.link_of(id),
            events,
            query,
            &self.config.physics,
            self.config.percept.binning,
        ))
    }

    fn keeps(&self, before: f64, after: &ObjectComparison, query: &Query) -> bool {
        let d = after.effective_distance();
        after.verdict != Verdict::Implausible && d < before - self.config.improvement_margin && d <= query.tau_match
    }

    /// Tries the remaining edits for one object in fixed order and keeps the
    /// first that improves it; the world is restored when an edit is dropped.
    fn try_edits(
        &mut self,
        s_rw: &SensorFrame,
        current: &ObjectComparison,
        state: &mut EditState,
        query: &Query,
    ) -> Result<Option<Edit>, WorldError> {
        let id = current.id;
        let before = current.effective_distance();
        let original = self.graph.get(id).expect("known id").clone();
        let label = original.top_label().unwrap_or_default().to_string();

        if !state.flip_tried && current.verdict == Verdict::Mismatch {
            state.flip_tried = true;
            if let Some(aw) = self.graph.link_of(id) {
                let up = self.up_axis(&label);
                let flipped = original.pose.rotated_about_local(&up, std::f64::consts::PI);
                let aw_pose = self.aw_pose(&flipped);
                let events = self.world.set_pose(aw, &aw_pose)?;
                let saved = self.physics.insert(id, events);
                self.graph.get_mut(id).expect("known id").pose = flipped;
                let after = self.compare_one(s_rw, id, query)?;
                if self.keeps(before, &after, query) {
                    self.sent.insert(aw, (label, aw_pose));
                    return Ok(Some(Edit::Flip));
                }
                self.graph.get_mut(id).expect("known id").pose = original.pose;
                self.world.set_pose(aw, &self.aw_pose(&original.pose))?;
                match saved {
                    Some(ev) => self.physics.insert(id, ev),
                    None => self.physics.remove(&id),
                };
            }
        }

        while state.next_rank < original.ranking.len() {
            let rank = state.next_rank;
            state.next_rank += 1;
            let candidate = original.ranking[rank].0.clone();
            if candidate == label {
                continue;
            }
            let pose = self.aw_pose(&original.pose);
            let saved = self.physics.get(&id).cloned();
            if let Some(aw) = self.graph.link_of(id) {
                self.despawn(id, aw)?;
            }
            self.spawn_for(id, &candidate, &pose)?;
            let mut edited = original.clone();
            let entry = edited.ranking.remove(rank);
            edited.ranking.insert(0, entry);
            *self.graph.get_mut(id).expect("known id") = edited;
            let after = self.compare_one(s_rw, id, query)?;
            if self.graph.link_of(id).is_some() && self.keeps(before, &after, query) {
                return Ok(Some(Edit::Relabel));
            }
            if let Some(aw) = self.graph.link_of(id) {
                self.despawn(id, aw)?;
            }
            *self.graph.get_mut(id).expect("known id") = original.clone();
            self.spawn_for(id, &label, &pose)?;
            match saved {
                Some(ev) => self.physics.insert(id, ev),
                None => self.physics.remove(&id),
            };
            // only the next label is tried per round
            break;
        }
        Ok(None)
    }

    /// Runs the full loop on one real frame. `corrupt` may alter the fresh
    /// hypotheses between perception and identity synchronization.
    pub fn process_frame(
        &mut self,
        s_rw: &SensorFrame,
        query: &Query,
        corrupt: impl FnOnce(&mut Vec<ObjectHypothesis>),
    ) -> Result<FrameResult, LoopError> {
        query.validate()?;
        let tick = s_rw.timestamp;
        let mut fresh = process(s_rw, &self.map, &self.classifier, &self.config.percept)?;
        corrupt(&mut fresh);
        let perceived: Vec<String> = fresh.iter().map(|h| h.top_label().unwrap_or_default().to_string()).collect();

        // visibility of known objects from the current viewpoint, judged on the
        // belief without rejected hypotheses: those cannot hide what is missing
        let (shown, before) = self.render_accepted(&s_rw.camera, &s_rw.intrinsics);
        let intrinsics = s_rw.intrinsics;
        let camera = s_rw.camera;
        let visible = |id: ObjectId, h: &ObjectHypothesis| match shown.iter().position(|s| *s == id) {
            Some(i) => !roi_of(&before, i as AwId + 1).is_empty(),
            None => {
                let p = camera.inverse_transform_point(&h.pose.position);
                intrinsics
                    .project(&p)
                    .is_some_and(|(u, v)| u >= 0.0 && v >= 0.0 && u < intrinsics.width as f64 && v < intrinsics.height as f64)
            }
        };
        let sync = synchronize(&mut self.graph, fresh, &self.config.policy, tick, visible);
        self.sync_belief()?;

        let ids = sync.assigned.clone();
        let mut states: BTreeMap<ObjectId, EditState> = ids.iter().map(|id| (*id, EditState { flip_tried: false, next_rank: 1 })).collect();
        let mut edits: BTreeMap<ObjectId, Vec<Edit>> = BTreeMap::new();
        let mut distances: BTreeMap<ObjectId, Vec<f64>> = BTreeMap::new();
        let mut confirmed_in: BTreeMap<ObjectId, u32> = BTreeMap::new();
        let mut reasons: BTreeMap<ObjectId, String> = BTreeMap::new();
        let mut pending: Vec<ObjectId> = {
            let mut v = ids.clone();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut reports = Vec::new();
        let mut iterations = 0;
        for round in 1..=query.max_iterations {
            iterations = round;
            let s_aw = self.render_belief(&s_rw.camera)?;
            let mut report = compare(
                s_rw,
                &s_aw,
                &self.graph,
                &pending,
                &self.physics,
                query,
                &self.config.physics,
                self.config.percept.binning,
            );
            report.iteration = round;
            let mut next = Vec::new();
            for c in &report.objects {
                distances.entry(c.id).or_default().push(c.effective_distance());
                if c.verdict == Verdict::Match {
                    self.graph.get_mut(c.id).expect("known id").set_status(Status::Confirmed)?;
                    confirmed_in.insert(c.id, round);
                    continue;
                }
                self.graph.get_mut(c.id).expect("known id").set_status(Status::Mismatched)?;
                let edit = if round < query.max_iterations {
                    let state = states.get_mut(&c.id).expect("pending ids have state");
                    self.try_edits(s_rw, c, state, query)?
                } else {
                    None
                };
                match edit {
                    Some(e) => {
                        edits.entry(c.id).or_default().push(e);
                        next.push(c.id);
                    }
                    None => {
                        self.graph.get_mut(c.id).expect("known id").set_status(Status::Rejected)?;
                        reasons.insert(c.id, c.reason.clone().unwrap_or_else(|| "no edit explains the observation".into()));
                    }
                }
            }
            reports.push(report);
            if next.is_empty() {
                break;
            }
            pending = next;
        }

        let mut answer = QueryAnswer {
            iterations,
            ..QueryAnswer::default()
        };
        let mut outcomes = Vec::new();
        for (id, perceived_label) in ids.iter().zip(perceived) {
            let h = self.graph.get(*id).expect("assigned ids are live");
            let label = h.top_label().unwrap_or_default().to_string();
            if query.admits(&label, &h.region) {
                match h.status {
                    Status::Confirmed if !answer.confirmed.iter().any(|c| c.id == *id) => answer.confirmed.push(ConfirmedObject {
                        id: *id,
                        label: label.clone(),
                        pose: h.pose,
                        region: h.region.clone(),
                    }),
                    Status::Rejected if !answer.rejected.iter().any(|r| r.id == *id) => answer.rejected.push(RejectedObject {
                        id: *id,
                        label: label.clone(),
                        reason: reasons.get(id).cloned().unwrap_or_default(),
                    }),
                    _ => {}
                }
            }
            outcomes.push(ObjectOutcome {
                id: *id,
                perceived_label,
                final_label: label,
                final_pose: h.pose,
                status: h.status,
                edits: edits.get(id).cloned().unwrap_or_default(),
                distances: distances.get(id).cloned().unwrap_or_default(),
                confirmed_in: confirmed_in.get(id).copied(),
                reason: reasons.get(id).cloned(),
            });
        }
        Ok(FrameResult {
            tick,
            answer,
            reports,
            outcomes,
            identity_events: sync.events,
        })
    }

    /// Processes every frame of the stream and returns the answer for the last one.
    pub fn answer_query<'a>(
        &mut self,
        query: &Query,
        frames: impl IntoIterator<Item = &'a SensorFrame>,
    ) -> Result<QueryAnswer, LoopError> {
        query.validate()?;
        let mut last = None;
        for f in frames {
            last = Some(self.process_frame(f, query, |_| {})?.answer);
        }
        last.ok_or(LoopError::EmptyStream)
    }
}

fn same_pose(a: &Pose6D, b: &Pose6D) -> bool {
    let (dp, da) = a.distance_to(b);
    dp < 1e-12 && da < 1e-12
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::world::Partner;

    const AW: AwId = 5;

    /// Real and rendered 4×4 frames where pixels 0..8 belong to the object.
    fn frames(rw_color: [u8; 3], aw_color: [u8; 3], depth_offset: f64) -> (SensorFrame, SensorFrame) {
        let k = CameraIntrinsics::centered(4, 4, 4.0);
        let mut rw = SensorFrame::blank(k, Pose6D::identity());
        let mut aw = rw.clone();
        for i in 0..16 {
            rw.depth[i] = 1.0;
            aw.depth[i] = 1.0;
        }
        for i in 0..8 {
            rw.rgb[i] = rw_color;
            aw.rgb[i] = aw_color;
            aw.mask[i] = AW;
            aw.depth[i] = 1.0 + depth_offset;
        }
        (rw, aw)
    }

    fn graph(linked: bool) -> (SceneGraph, ObjectId) {
        let mut g = SceneGraph::new();
        let mut h = ObjectHypothesis::new(Pose6D::identity(), (0..8).collect());
        h.ranking = vec![("red".into(), 1.0)];
        let id = g.insert(h, 0).id;
        if linked {
            g.link(id, AW).unwrap();
        }
        (g, id)
    }

    fn run(rw: &SensorFrame, aw: &SensorFrame, g: &SceneGraph, id: ObjectId, events: Vec<PhysicsEvent>) -> ObjectComparison {
        let physics = BTreeMap::from([(id, events)]);
        let r = compare(rw, aw, g, &[id], &physics, &Query::default(), &PhysicsConfig::default(), Binning::default());
        r.objects.into_iter().next().unwrap()
    }

    const RED: [u8; 3] = [200, 20, 20];
    const GREEN: [u8; 3] = [20, 200, 20];

    #[test]
    fn identical_regions_match() {
        let (rw, aw) = frames(RED, RED, 0.0);
        let (g, id) = graph(true);
        let c = run(&rw, &aw, &g, id, vec![]);
        assert_eq!(c.verdict, Verdict::Match);
        assert_eq!(c.distance, Some(0.0));
        assert_eq!(c.depth_error, Some(0.0));
        assert!(c.reason.is_none());
    }

    #[test]
    fn wrong_color_is_a_mismatch() {
        let (rw, aw) = frames(RED, GREEN, 0.0);
        let (g, id) = graph(true);
        let c = run(&rw, &aw, &g, id, vec![]);
        assert_eq!(c.verdict, Verdict::Mismatch);
        assert!((c.distance.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depth_error_alone_is_a_mismatch() {
        let (rw, aw) = frames(RED, RED, 0.05);
        let (g, id) = graph(true);
        let c = run(&rw, &aw, &g, id, vec![]);
        assert_eq!(c.verdict, Verdict::Mismatch);
        assert!((c.depth_error.unwrap() - 0.05).abs() < 1e-12);
        assert!(c.reason.unwrap().starts_with("geometry differs"));
    }

    #[test]
    fn unlinked_or_disqualified_is_implausible() {
        let (rw, aw) = frames(RED, RED, 0.0);
        let (g, id) = graph(false);
        assert_eq!(run(&rw, &aw, &g, id, vec![]).verdict, Verdict::Implausible);

        let (g, id) = graph(true);
        let fall = PhysicsEvent {
            kind: PhysicsEventKind::Fall {
                displacement: Vec3::new(0.0, 0.0, -0.5),
            },
            subject: AW,
            tick: 1,
        };
        assert_eq!(run(&rw, &aw, &g, id, vec![fall]).verdict, Verdict::Implausible);
        // a settle within the allowance does not disqualify
        let nudge = PhysicsEvent {
            kind: PhysicsEventKind::Fall {
                displacement: Vec3::new(0.0, 0.0, -0.01),
            },
            ..fall
        };
        assert_eq!(run(&rw, &aw, &g, id, vec![nudge]).verdict, Verdict::Match);
        let hit = PhysicsEvent {
            kind: PhysicsEventKind::Collision {
                partner: Partner::Static,
                depth: 0.01,
            },
            ..fall
        };
        assert_eq!(run(&rw, &aw, &g, id, vec![hit]).verdict, Verdict::Implausible);
    }

    #[test]
    fn missing_rendering_is_not_visible() {
        let (rw, mut aw) = frames(RED, RED, 0.0);
        aw.mask.iter_mut().for_each(|m| *m = 0);
        let (g, id) = graph(true);
        let c = run(&rw, &aw, &g, id, vec![]);
        assert_eq!(c.verdict, Verdict::Mismatch);
        assert_eq!(c.reason.as_deref(), Some(NOT_VISIBLE));
        assert_eq!(c.effective_distance(), 1.0);
    }

    #[test]
    #[should_panic(expected = "different camera poses")]
    fn frames_from_different_poses_are_refused() {
        let (rw, mut aw) = frames(RED, RED, 0.0);
        aw.camera = Pose6D::from_translation(0.0, 0.0, 1e-3);
        let (g, id) = graph(true);
        run(&rw, &aw, &g, id, vec![]);
    }

    #[test]
    fn depth_mae_over_intersection_only() {
        let (rw, mut aw) = frames(RED, RED, 0.0);
        aw.depth[2] = 1.3;
        aw.depth[3] = 1.1;
        let mae = depth_mae(&rw, &aw, &[2, 3], &[2, 3, 9]).unwrap();
        assert!((mae - 0.2).abs() < 1e-12, "{mae}");
        assert_eq!(depth_mae(&rw, &aw, &[0, 1], &[2, 3]), None);
    }

    #[test]
    fn query_validation_and_filters() {
        assert!(Query::default().validate().is_ok());
        for bad in [
            Query {
                max_iterations: 0,
                ..Query::default()
            },
            Query {
                tau_match: 1.0,
                ..Query::default()
            },
            Query {
                kind: QueryKind::Verify,
                ..Query::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let q = Query {
            class_filter: Some("milk".into()),
            region_filter: Some("table".into()),
            ..Query::default()
        };
        assert!(q.admits("milk", "table"));
        assert!(!q.admits("milk", "floor"));
        assert!(!q.admits("tea", "table"));
    }

    proptest! {
        #[test]
        fn match_iff_both_thresholds_hold(
            aw_color in prop::array::uniform3(0u8..=255),
            offset in -0.1f64..0.1,
        ) {
            let (rw, aw) = frames(RED, aw_color, offset);
            let (g, id) = graph(true);
            let c = run(&rw, &aw, &g, id, vec![]);
            let q = Query::default();
            let expect = c.distance.unwrap() <= q.tau_match && c.depth_error.unwrap() <= q.tau_depth;
            prop_assert_eq!(c.verdict == Verdict::Match, expect);
        }
    }
}
