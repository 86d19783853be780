//! Object hypotheses and the scene graph that holds the belief over time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::geometry::{Pose6D, Vec3};
use crate::histogram::Histogram;
use crate::world::AwId;

pub type ObjectId = u64;

/// Stable identity of a perceived object: a counter plus the tick it was created at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Identity {
    pub id: ObjectId,
    pub created: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Unverified,
    Confirmed,
    Mismatched,
    Rejected,
}

impl Status {
    pub fn can_become(self, to: Status) -> bool {
        use Status::*;
        self == to
            || matches!(
                (self, to),
                (Unverified, Confirmed) | (Unverified, Mismatched) | (Mismatched, Confirmed) | (Mismatched, Rejected)
            )
    }
}

/// A perceived object candidate with the annotations of every expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectHypothesis {
    /// Assigned by identity synchronization; `None` for fresh percepts.
    pub identity: Option<Identity>,
    /// Pose in the map frame.
    pub pose: Pose6D,
    /// Pixel indices in the source frame, ascending.
    pub roi: Vec<u32>,
    /// Class labels with scores, best first.
    pub ranking: Vec<(String, f64)>,
    pub histogram: Option<Histogram>,
    pub extents: Option<Vec3>,
    /// The shape expert could not determine a yaw axis.
    pub yaw_degenerate: bool,
    /// Surface region the object was segmented on.
    pub region: String,
    pub status: Status,
    pub last_distance: Option<f64>,
}

impl ObjectHypothesis {
    pub fn new(pose: Pose6D, roi: Vec<u32>) -> Self {
        Self {
            identity: None,
            pose,
            roi,
            ranking: Vec::new(),
            histogram: None,
            extents: None,
            yaw_degenerate: false,
            region: String::new(),
            status: Status::Unverified,
            last_distance: None,
        }
    }

    pub fn top_label(&self) -> Option<&str> {
        self.ranking.first().map(|(l, _)| l.as_str())
    }

    pub fn id(&self) -> Option<ObjectId> {
        self.identity.map(|i| i.id)
    }

    pub fn set_status(&mut self, to: Status) -> Result<(), GraphError> {
        if !self.status.can_become(to) {
            return Err(GraphError::IllegalTransition(self.status, to));
        }
        self.status = to;
        Ok(())
    }

    /// Sorts the ranking by descending score, ties by label.
    pub fn sort_ranking(&mut self) {
        self.ranking
            .sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    }

    pub fn is_valid(&self) -> bool {
        !self.roi.is_empty() && self.ranking.windows(2).all(|w| w[0].1 >= w[1].1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum IdentityEventKind {
    Added,
    Moved { distance: f64 },
    Removed,
    Updated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityEvent {
    #[serde(flatten)]
    pub kind: IdentityEventKind,
    pub id: ObjectId,
    pub tick: u64,
}

impl IdentityEvent {
    /// One JSON object per line, as the harness consumes them.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("identity events serialize")
    }
}

/// The persistent belief: identified objects, their links into the
/// artificial world, and the identity event log.
#[derive(Clone, Debug, Default)]
pub struct SceneGraph {
    objects: BTreeMap<ObjectId, ObjectHypothesis>,
    links: BTreeMap<ObjectId, AwId>,
    linked_by: BTreeMap<AwId, ObjectId>,
    misses: BTreeMap<ObjectId, u32>,
    events: Vec<IdentityEvent>,
    orphaned: Vec<AwId>,
    next_id: ObjectId,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: ObjectId) -> Option<&ObjectHypothesis> {
        self.objects.get(&id)
    }

    pub fn get_mut(&mut self, id: ObjectId) -> Option<&mut ObjectHypothesis> {
        self.objects.get_mut(&id)
    }

    pub fn ids(&self) -> Vec<ObjectId> {
        self.objects.keys().copied().collect()
    }

    pub fn objects(&self) -> impl Iterator<Item = (&ObjectId, &ObjectHypothesis)> {
        self.objects.iter()
    }

    /// Adds a fresh hypothesis under a new identity created at `tick`.
    pub fn insert(&mut self, mut h: ObjectHypothesis, tick: u64) -> Identity {
        if self.next_id == 0 {
            self.next_id = 1;
        }
        let identity = Identity {
            id: self.next_id,
            created: tick,
        };
        self.next_id += 1;
        h.identity = Some(identity);
        self.objects.insert(identity.id, h);
        self.misses.insert(identity.id, 0);
        identity
    }

    /// Replaces the annotations of a known object, keeping its identity.
    pub fn update(&mut self, id: ObjectId, mut h: ObjectHypothesis) -> Result<(), GraphError> {
        let slot = self.objects.get_mut(&id).ok_or(GraphError::UnknownObject(id))?;
        h.identity = slot.identity;
        *slot = h;
        self.misses.insert(id, 0);
        Ok(())
    }

    /// Removes an object. A linked virtual counterpart is queued for deletion.
    pub fn remove(&mut self, id: ObjectId) -> Result<ObjectHypothesis, GraphError> {
        let h = self.objects.remove(&id).ok_or(GraphError::UnknownObject(id))?;
        self.misses.remove(&id);
        if let Some(aw) = self.unlink(id) {
            self.orphaned.push(aw);
        }
        Ok(h)
    }

    pub fn link(&mut self, id: ObjectId, aw: AwId) -> Result<(), GraphError> {
        if !self.objects.contains_key(&id) {
            return Err(GraphError::UnknownObject(id));
        }
        match self.linked_by.get(&aw) {
            Some(owner) if *owner != id => return Err(GraphError::AlreadyLinked(aw)),
            _ => {}
        }
        if let Some(old) = self.links.insert(id, aw) {
            self.linked_by.remove(&old);
        }
        self.linked_by.insert(aw, id);
        Ok(())
    }

    pub fn unlink(&mut self, id: ObjectId) -> Option<AwId> {
        let aw = self.links.remove(&id)?;
        self.linked_by.remove(&aw);
        Some(aw)
    }

    pub fn link_of(&self, id: ObjectId) -> Option<AwId> {
        self.links.get(&id).copied()
    }

    pub fn object_of(&self, aw: AwId) -> Option<ObjectId> {
        self.linked_by.get(&aw).copied()
    }

    pub fn links(&self) -> &BTreeMap<ObjectId, AwId> {
        &self.links
    }

    /// Virtual objects whose hypotheses were removed and still need deleting.
    pub fn take_orphaned(&mut self) -> Vec<AwId> {
        std::mem::take(&mut self.orphaned)
    }

    pub fn misses(&self, id: ObjectId) -> u32 {
        self.misses.get(&id).copied().unwrap_or(0)
    }

    pub fn set_misses(&mut self, id: ObjectId, n: u32) {
        if self.objects.contains_key(&id) {
            self.misses.insert(id, n);
        }
    }

    pub fn record(&mut self, event: IdentityEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[IdentityEvent] {
        &self.events
    }

    /// Link keys are known objects and no virtual object is linked twice.
    pub fn invariants_hold(&self) -> bool {
        let keys_known = self.links.keys().all(|k| self.objects.contains_key(k));
        let mut seen = std::collections::BTreeSet::new();
        let injective = self.links.values().all(|aw| seen.insert(*aw));
        let reverse_agrees = self.linked_by.len() == self.links.len()
            && self.linked_by.iter().all(|(aw, id)| self.links.get(id) == Some(aw));
        keys_known && injective && reverse_agrees
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyp() -> ObjectHypothesis {
        ObjectHypothesis::new(Pose6D::identity(), vec![1, 2, 3])
    }

    #[test]
    fn status_transitions() {
        use Status::*;
        let mut h = hyp();
        assert!(h.set_status(Rejected).is_err());
        h.set_status(Mismatched).unwrap();
        assert!(h.set_status(Unverified).is_err());
        h.set_status(Rejected).unwrap();
        assert!(h.set_status(Confirmed).is_err());
        let mut g = hyp();
        g.set_status(Confirmed).unwrap();
        assert!(g.set_status(Mismatched).is_err());
    }

    #[test]
    fn ids_are_monotonic_and_links_injective() {
        let mut g = SceneGraph::new();
        let a = g.insert(hyp(), 5);
        let b = g.insert(hyp(), 6);
        assert!(b.id > a.id);
        assert_eq!(a.created, 5);
        g.link(a.id, 10).unwrap();
        assert_eq!(g.link(b.id, 10), Err(GraphError::AlreadyLinked(10)));
        g.link(b.id, 11).unwrap();
        g.remove(a.id).unwrap();
        assert_eq!(g.take_orphaned(), vec![10]);
        assert!(g.invariants_hold());
        assert_eq!(g.link(a.id, 12), Err(GraphError::UnknownObject(a.id)));
    }

    #[test]
    fn ranking_sorted() {
        let mut h = hyp();
        h.ranking = vec![("b".into(), 0.2), ("a".into(), 0.2), ("c".into(), 0.6)];
        h.sort_ranking();
        assert_eq!(h.top_label(), Some("c"));
        assert_eq!(h.ranking[1].0, "a");
        assert!(h.is_valid());
    }

    #[test]
    fn event_json_line() {
        let e = IdentityEvent {
            kind: IdentityEventKind::Moved { distance: 0.05 },
            id: 3,
            tick: 7,
        };
        assert_eq!(e.to_json_line(), r#"{"event":"moved","distance":0.05,"id":3,"tick":7}"#);
    }

    #[derive(Clone, Debug)]
    enum Op {
        Insert,
        Remove(usize),
        Link(usize, AwId),
        Unlink(usize),
        Update(usize),
    }

    fn arb_op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Insert),
            (0usize..8).prop_map(Op::Remove),
            (0usize..8, 1u32..6).prop_map(|(i, a)| Op::Link(i, a)),
            (0usize..8).prop_map(Op::Unlink),
            (0usize..8).prop_map(Op::Update),
        ]
    }

    proptest! {
        #[test]
        fn link_map_stays_injective(ops in prop::collection::vec(arb_op(), 0..60)) {
            let mut g = SceneGraph::new();
            for op in ops {
                let ids = g.ids();
                let pick = |i: usize| ids.get(i % ids.len().max(1)).copied().unwrap_or(999);
                match op {
                    Op::Insert => { g.insert(hyp(), 0); }
                    Op::Remove(i) => { let _ = g.remove(pick(i)); }
                    Op::Link(i, aw) => { let _ = g.link(pick(i), aw); }
                    Op::Unlink(i) => { g.unlink(pick(i)); }
                    Op::Update(i) => { let _ = g.update(pick(i), hyp()); }
                }
                prop_assert!(g.invariants_hold());
            }
        }
    }
}
