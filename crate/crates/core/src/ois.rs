//! Object identity synchronization: keeps ids stable across frames by
//! matching fresh hypotheses against the known objects of the scene graph.

use serde::{Deserialize, Serialize};

use crate::histogram::hellinger;
use crate::scene::{IdentityEvent, IdentityEventKind, ObjectHypothesis, ObjectId, SceneGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityPolicy {
    pub w_position: f64,
    pub w_class: f64,
    pub w_histogram: f64,
    pub w_shape: f64,
    /// Distance scale of the position term, meters.
    pub position_scale: f64,
    /// L1 extent difference scale of the shape term, meters.
    pub shape_scale: f64,
    /// Minimum score for a match.
    pub accept: f64,
    /// Displacement above which a match also counts as moved.
    pub move_threshold: f64,
    /// Consecutive visible misses before a known object is removed.
    pub patience: u32,
}

impl Default for IdentityPolicy {
    fn default() -> Self {
        Self {
            w_position: 0.4,
            w_class: 0.2,
            w_histogram: 0.3,
            w_shape: 0.1,
            position_scale: 0.10,
            shape_scale: 0.05,
            accept: 0.6,
            move_threshold: 0.01,
            patience: 3,
        }
    }
}

impl IdentityPolicy {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.w_position, self.w_class, self.w_histogram, self.w_shape];
        if w.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err("similarity weights must be non-negative".into());
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("similarity weights must sum to 1".into());
        }
        if !(self.accept > 0.0 && self.accept < 1.0) {
            return Err("acceptance threshold must lie in (0, 1)".into());
        }
        if !(self.position_scale > 0.0 && self.shape_scale > 0.0) {
            return Err("similarity scales must be positive".into());
        }
        if self.patience == 0 {
            return Err("removal patience must be at least one frame".into());
        }
        Ok(())
    }
}

/// Weighted similarity in `[0, 1]`. Terms whose annotation is missing on
/// either side contribute nothing.
pub fn similarity(policy: &IdentityPolicy, a: &ObjectHypothesis, b: &ObjectHypothesis) -> f64 {
    let dp = (a.pose.position - b.pose.position).norm();
    let mut score = policy.w_position * (-dp / policy.position_scale).exp();
    if let (Some(la), Some(lb)) = (a.top_label(), b.top_label()) {
        if la == lb {
            score += policy.w_class;
        }
    }
    if let (Some(ha), Some(hb)) = (&a.histogram, &b.histogram) {
        if let Ok(d) = hellinger(ha, hb) {
            score += policy.w_histogram * (1.0 - d);
        }
    }
    if let (Some(ea), Some(eb)) = (&a.extents, &b.extents) {
        let l1 = (ea - eb).abs().sum();
        score += policy.w_shape * (-l1 / policy.shape_scale).exp();
    }
    score
}

/// Greedy partial matching on a score table `scores[fresh][known]`.
///
/// Pairs are accepted in descending score order while the score reaches
/// `accept` and both sides are still free. Equal scores prefer the lower
/// known id, then the lower fresh index. Returns `(fresh, known)` index pairs.
pub fn greedy_match(scores: &[Vec<f64>], known_ids: &[ObjectId], accept: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (f, row) in scores.iter().enumerate() {
        for (k, &s) in row.iter().enumerate() {
            if s >= accept {
                pairs.push((s, f, k));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| known_ids[a.2].cmp(&known_ids[b.2]))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut fresh_used = vec![false; scores.len()];
    let mut known_used = vec![false; known_ids.len()];
    let mut out = Vec::new();
    for (_, f, k) in pairs {
        if !fresh_used[f] && !known_used[k] {
            fresh_used[f] = true;
            known_used[k] = true;
            out.push((f, k));
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyncOutcome {
    /// Identity given to each fresh hypothesis, in input order.
    pub assigned: Vec<ObjectId>,
    pub events: Vec<IdentityEvent>,
}

/// Matches one frame of fresh hypotheses into the graph.
///
/// `visible` tells whether a known object should have been seen in this
/// frame; only visible objects accumulate misses and can be removed.
pub fn synchronize(
    graph: &mut SceneGraph,
    fresh: Vec<ObjectHypothesis>,
    policy: &IdentityPolicy,
    tick: u64,
    visible: impl Fn(ObjectId, &ObjectHypothesis) -> bool,
) -> SyncOutcome {
    let known_ids = graph.ids();
    let scores: Vec<Vec<f64>> = fresh
        .iter()
        .map(|h| {
            known_ids
                .iter()
                .map(|id| similarity(policy, h, graph.get(*id).expect("listed id")))
                .collect()
        })
        .collect();
    let matches = greedy_match(&scores, &known_ids, policy.accept);

    let mut assigned: Vec<Option<ObjectId>> = vec![None; fresh.len()];
    let mut known_matched = vec![false; known_ids.len()];
    for &(f, k) in &matches {
        assigned[f] = Some(known_ids[k]);
        known_matched[k] = true;
    }

    let mut events = Vec::new();
    let mut emit = |graph: &mut SceneGraph, kind, id| {
        let e = IdentityEvent { kind, id, tick };
        graph.record(e);
        events.push(e);
    };

    for (f, h) in fresh.into_iter().enumerate() {
        match assigned[f] {
            Some(id) => {
                let old = graph.get(id).expect("matched id").pose.position;
                let moved = (h.pose.position - old).norm();
                graph.update(id, h).expect("matched id");
                emit(graph, IdentityEventKind::Updated, id);
                if moved > policy.move_threshold {
                    emit(graph, IdentityEventKind::Moved { distance: moved }, id);
                }
            }
            None => {
                let identity = graph.insert(h, tick);
                assigned[f] = Some(identity.id);
                emit(graph, IdentityEventKind::Added, identity.id);
            }
        }
    }

    for (k, &id) in known_ids.iter().enumerate() {
        if known_matched[k] {
            continue;
        }
        let seen = visible(id, graph.get(id).expect("known id"));
        if !seen {
            continue;
        }
        let misses = graph.misses(id) + 1;
        if misses >= policy.patience {
            graph.remove(id).expect("known id");
            emit(graph, IdentityEventKind::Removed, id);
        } else {
            graph.set_misses(id, misses);
        }
    }

    SyncOutcome {
        assigned: assigned.into_iter().map(|a| a.expect("every fresh hypothesis assigned")).collect(),
        events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose6D, Vec3};
    use crate::histogram::{Binning, Histogram};
    use proptest::prelude::*;

    fn hyp(x: f64, label: &str, color: [u8; 3]) -> ObjectHypothesis {
        let mut h = ObjectHypothesis::new(Pose6D::from_translation(x, 0.0, 0.75), vec![0]);
        h.ranking = vec![(label.to_string(), 1.0)];
        h.histogram = Some(Histogram::from_pixels(Binning::default(), [color; 20].iter()));
        h.extents = Some(Vec3::new(0.1, 0.06, 0.2));
        h
    }

    fn count(events: &[IdentityEvent], f: impl Fn(&IdentityEventKind) -> bool) -> usize {
        events.iter().filter(|e| f(&e.kind)).count()
    }

    #[test]
    fn identical_scores_one() {
        let p = IdentityPolicy::default();
        let a = hyp(0.0, "a", [200, 10, 10]);
        assert!((similarity(&p, &a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn displaced_by_scale() {
        let p = IdentityPolicy::default();
        let a = hyp(0.0, "a", [200, 10, 10]);
        let b = hyp(0.10, "a", [200, 10, 10]);
        let expected = 1.0 - 0.4 * (1.0 - (-1.0f64).exp());
        assert!((similarity(&p, &a, &b) - expected).abs() < 1e-9);
        assert!((expected - 0.7472).abs() < 1e-4);
    }

    #[test]
    fn unrelated_bounded_by_shape_weight() {
        let p = IdentityPolicy::default();
        let a = hyp(0.0, "a", [200, 10, 10]);
        let b = hyp(5.0, "b", [10, 200, 10]);
        assert!(similarity(&p, &a, &b) <= p.w_shape + 1e-9);
    }

    #[test]
    fn missing_annotations_contribute_nothing() {
        let p = IdentityPolicy::default();
        let a = ObjectHypothesis::new(Pose6D::identity(), vec![0]);
        assert!((similarity(&p, &a, &a) - p.w_position).abs() < 1e-12);
    }

    #[test]
    fn policy_validation() {
        assert!(IdentityPolicy::default().validate().is_ok());
        let p = IdentityPolicy {
            w_class: 0.5,
            ..IdentityPolicy::default()
        };
        assert!(p.validate().is_err());
        let p = IdentityPolicy {
            accept: 1.0,
            ..IdentityPolicy::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn static_scene_keeps_ids() {
        let p = IdentityPolicy::default();
        let mut g = SceneGraph::new();
        let frame = || vec![hyp(0.0, "a", [200, 10, 10]), hyp(0.3, "b", [10, 200, 10])];
        let first = synchronize(&mut g, frame(), &p, 0, |_, _| true);
        assert_eq!(count(&first.events, |k| *k == IdentityEventKind::Added), 2);
        for t in 1..5 {
            let out = synchronize(&mut g, frame(), &p, t, |_, _| true);
            assert_eq!(out.assigned, first.assigned);
            assert_eq!(count(&out.events, |k| !matches!(k, IdentityEventKind::Updated)), 0);
        }
    }

    #[test]
    fn small_move_keeps_id_and_reports_it() {
        let p = IdentityPolicy::default();
        let mut g = SceneGraph::new();
        let a = synchronize(&mut g, vec![hyp(0.0, "a", [200, 10, 10])], &p, 0, |_, _| true);
        let b = synchronize(&mut g, vec![hyp(0.05, "a", [200, 10, 10])], &p, 1, |_, _| true);
        assert_eq!(a.assigned, b.assigned);
        let moved: Vec<_> = b
            .events
            .iter()
            .filter_map(|e| match e.kind {
                IdentityEventKind::Moved { distance } => Some(distance),
                _ => None,
            })
            .collect();
        assert_eq!(moved.len(), 1);
        assert!((moved[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn exchanged_object_gets_new_id_after_patience() {
        let p = IdentityPolicy::default();
        let mut g = SceneGraph::new();
        let old = synchronize(&mut g, vec![hyp(0.0, "a", [200, 10, 10])], &p, 0, |_, _| true).assigned[0];
        let mut removed = 0;
        let mut added = Vec::new();
        for t in 1..=4 {
            let out = synchronize(&mut g, vec![hyp(0.0, "b", [10, 200, 10])], &p, t, |_, _| true);
            removed += count(&out.events, |k| *k == IdentityEventKind::Removed);
            added.extend(out.events.iter().filter(|e| e.kind == IdentityEventKind::Added).map(|e| e.id));
            if t < 3 {
                assert!(g.get(old).is_some());
            }
        }
        assert_eq!(removed, 1);
        assert_eq!(added.len(), 1);
        assert!(added[0] > old);
        assert!(g.get(old).is_none());
    }

    #[test]
    fn out_of_view_objects_are_kept() {
        let p = IdentityPolicy::default();
        let mut g = SceneGraph::new();
        synchronize(&mut g, vec![hyp(0.0, "a", [200, 10, 10])], &p, 0, |_, _| true);
        for t in 1..10 {
            let out = synchronize(&mut g, vec![], &p, t, |_, _| false);
            assert!(out.events.is_empty());
        }
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn greedy_tie_prefers_lower_known_id() {
        let scores = vec![vec![0.9, 0.9]];
        assert_eq!(greedy_match(&scores, &[7, 3], 0.6), vec![(0, 1)]);
        assert!(greedy_match(&[vec![0.5]], &[1], 0.6).is_empty());
    }

    fn optimal_total(scores: &[Vec<f64>], accept: f64) -> f64 {
        fn go(scores: &[Vec<f64>], f: usize, used: &mut Vec<bool>, accept: f64) -> f64 {
            if f == scores.len() {
                return 0.0;
            }
            let mut best = go(scores, f + 1, used, accept);
            for k in 0..used.len() {
                if !used[k] && scores[f][k] >= accept {
                    used[k] = true;
                    best = best.max(scores[f][k] + go(scores, f + 1, used, accept));
                    used[k] = false;
                }
            }
            best
        }
        let n = scores.first().map_or(0, |r| r.len());
        go(scores, 0, &mut vec![false; n], accept)
    }

    proptest! {
        #[test]
        fn greedy_is_injective_and_separated_instances_are_optimal(
            n_fresh in 0usize..6,
            n_known in 0usize..6,
            seed in prop::collection::vec(0.0f64..1.0, 36),
        ) {
            // well separated: a diagonal of strong matches over weak noise
            let scores: Vec<Vec<f64>> = (0..n_fresh)
                .map(|f| (0..n_known).map(|k| if f == k { 0.85 + 0.1 * seed[f * 6 + k] } else { 0.7 * seed[f * 6 + k] }).collect())
                .collect();
            let ids: Vec<ObjectId> = (1..=n_known as u64).collect();
            let m = greedy_match(&scores, &ids, 0.6);
            let mut fs: Vec<_> = m.iter().map(|p| p.0).collect();
            let mut ks: Vec<_> = m.iter().map(|p| p.1).collect();
            fs.sort();
            fs.dedup();
            ks.sort();
            ks.dedup();
            prop_assert_eq!(fs.len(), m.len());
            prop_assert_eq!(ks.len(), m.len());
            let total: f64 = m.iter().map(|&(f, k)| scores[f][k]).sum();
            let best = optimal_total(&scores, 0.6);
            prop_assert!((total - best).abs() < 1e-9);
        }
    }
}
