mod common;

use std::f64::consts::PI;

use common::Lab;
use icbs::geometry::{wrap_angle, Pose6D, Vec3};
use icbs::harness::synthesize_rw;
use icbs::histogram::{hellinger, Binning, Histogram};
use icbs::render::{render, roi_of, RenderItem};
use icbs::scenario::NoiseConfig;
use icbs::scene::{ObjectHypothesis, Status};
use icbs::verify::{compare, Edit, Query, Verdict};

fn quiet() -> NoiseConfig {
    NoiseConfig::default()
}

/// The placement nearest to `position`.
fn placed_at<'a>(lab: &'a Lab, position: &Vec3) -> &'a icbs::scenario::Placement {
    lab.scenario
        .objects
        .iter()
        .min_by(|a, b| (a.pose.position - position).norm().total_cmp(&(b.pose.position - position).norm()))
        .unwrap()
}

fn flip(h: &mut ObjectHypothesis) {
    h.pose = h.pose.rotated_about_local(&Vec3::z(), PI);
}

#[test]
fn belief_equal_to_world_compares_clean() {
    let lab = Lab::desk(None, 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    // hypotheses at the true poses, regions from the true render
    let truth = lab.truth_world();
    let truth_frame = truth.snapshot(Some(&s_rw.camera));
    let mut ids = Vec::new();
    for (i, p) in lab.scenario.objects.iter().enumerate() {
        let mut h = ObjectHypothesis::new(p.pose, roi_of(&truth_frame, i as u32 + 1));
        h.ranking = vec![(p.label.clone(), 1.0)];
        ids.push(icbs.graph_mut().insert(h, 0).id);
    }
    icbs.sync_belief().unwrap();
    let s_aw = icbs.render_belief(&s_rw.camera).unwrap();
    let physics = ids.iter().map(|id| (*id, icbs.physics_events(*id).to_vec())).collect();
    let report = compare(
        &s_rw,
        &s_aw,
        icbs.graph(),
        &ids,
        &physics,
        &Query::default(),
        &icbs.config().physics,
        Binning::default(),
    );
    assert_eq!(report.objects.len(), 10);
    for c in &report.objects {
        assert_eq!(c.verdict, Verdict::Match, "{c:?}");
        assert!(c.distance.unwrap() < 0.05, "{c:?}");
    }
}

#[test]
fn perceived_scene_is_confirmed_in_one_round() {
    let lab = Lab::desk(None, 3, quiet());
    let mut icbs = lab.icbs();
    for tick in 0..3 {
        let s_rw = synthesize_rw(&lab.scenario, &lab.library, tick);
        let r = icbs.process_frame(&s_rw, &Query::default(), |_| {}).unwrap();
        assert_eq!(r.answer.iterations, 1);
        assert_eq!(r.answer.confirmed.len(), 10);
        assert!(r.answer.rejected.is_empty());
    }
}

#[test]
fn wrong_class_model_is_far() {
    let lab = Lab::desk(Some(&["cereal"]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let r = icbs
        .process_frame(&s_rw, &Query { max_iterations: 1, ..Query::default() }, |hs| {
            // red box seen, green box believed
            hs[0].ranking = vec![("tea".into(), 1.0)];
        })
        .unwrap();
    let c = &r.reports[0].objects[0];
    assert_eq!(c.verdict, Verdict::Mismatch);
    assert!(c.distance.unwrap() > 0.95, "{c:?}");
}

#[test]
fn flipped_two_tone_object_is_above_threshold() {
    let lab = Lab::desk(Some(&["cereal"]), 1, quiet());
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let model = lab.library.get("cereal").unwrap();
    let pose = lab.scenario.objects[0].pose;
    let draw = |pose: Pose6D| {
        let f = render(&[RenderItem { id: 1, model, pose }], &lab.scenario.map.static_geometry, &s_rw.camera, &s_rw.intrinsics);
        Histogram::from_pixels(Binning::default(), roi_of(&f, 1).iter().map(|&i| &f.rgb[i as usize]))
    };
    let upright = draw(pose);
    let turned = draw(pose.rotated_about_local(&Vec3::z(), PI));
    // term-by-term evaluation of the distance as an independent check
    let (a, b) = (upright.bins(), turned.bins());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let overlap: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
    let oracle = (1.0 - overlap / (ma * mb * n * n).sqrt()).max(0.0).sqrt();
    let d = hellinger(&upright, &turned).unwrap();
    assert!((d - oracle).abs() < 1e-9);
    assert!(d > Query::default().tau_match, "{d}");
}

#[test]
fn flipped_asymmetric_object_is_turned_back() {
    let lab = Lab::desk(Some(&["cereal", "milk", "soap"]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let r = icbs.process_frame(&s_rw, &Query::default(), |hs| hs.iter_mut().for_each(flip)).unwrap();
    assert_eq!(r.outcomes.len(), 3);
    for o in &r.outcomes {
        let p = placed_at(&lab, &o.final_pose.position);
        assert_eq!(o.status, Status::Confirmed, "{o:?}");
        assert_eq!(o.edits, vec![Edit::Flip]);
        assert_eq!(o.confirmed_in, Some(2));
        let off = wrap_angle(o.final_pose.yaw() - p.pose.yaw());
        assert!(off.abs() < 10f64.to_radians(), "{} off by {off}", p.label);
    }
}

#[test]
fn corrupted_label_with_true_runner_up_is_relabeled() {
    let lab = Lab::desk(Some(&["juice", "spice"]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let r = icbs
        .process_frame(&s_rw, &Query::default(), |hs| {
            for h in hs.iter_mut() {
                let truth = h.ranking[0].0.clone();
                h.ranking = vec![("coffee".into(), 0.67), (truth, 0.33)];
            }
        })
        .unwrap();
    assert_eq!(r.outcomes.len(), 2);
    for o in &r.outcomes {
        let p = placed_at(&lab, &o.final_pose.position);
        assert_eq!(o.perceived_label, "coffee");
        assert_eq!(o.final_label, p.label);
        assert_eq!(o.status, Status::Confirmed);
        // the flip is tried first and refused, then the label is swapped
        assert_eq!(o.edits, vec![Edit::Relabel]);
    }
}

#[test]
fn corrupted_label_without_alternative_is_rejected() {
    let lab = Lab::desk(Some(&["juice"]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let r = icbs
        .process_frame(&s_rw, &Query::default(), |hs| hs[0].ranking = vec![("milk".into(), 1.0)])
        .unwrap();
    assert_eq!(r.answer.rejected.len(), 1);
    assert!(r.answer.confirmed.is_empty());
    assert!(r.answer.iterations <= Query::default().max_iterations);
    assert_eq!(r.outcomes[0].status, Status::Rejected);
}

#[test]
fn flipped_symmetric_object_stays_confirmed() {
    let lab = Lab::desk(Some(&["yogurt_strawberry"]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let r = icbs.process_frame(&s_rw, &Query::default(), |hs| flip(&mut hs[0])).unwrap();
    let o = &r.outcomes[0];
    assert_eq!(o.status, Status::Confirmed);
    assert!(o.edits.is_empty(), "front and back look alike, nothing to correct");
}

#[test]
fn hypothesis_on_a_poster_falls_and_is_implausible() {
    // a detector fired on a picture of a milk carton on the wall, 55 cm above the table
    let lab = Lab::desk(Some(&[]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let mut h = ObjectHypothesis::new(Pose6D::from_yaw(Vec3::new(0.0, -0.38, 1.3), PI / 2.0), vec![0, 1, 2]);
    h.ranking = vec![("milk".into(), 1.0)];
    let id = icbs.graph_mut().insert(h, 0).id;
    icbs.sync_belief().unwrap();
    let events = icbs.physics_events(id).to_vec();
    assert_eq!(events.len(), 1);
    assert!(events[0].is_disqualifying(&icbs.config().physics));
    let s_aw = icbs.render_belief(&s_rw.camera).unwrap();
    let physics = [(id, events)].into_iter().collect();
    let report = compare(&s_rw, &s_aw, icbs.graph(), &[id], &physics, &Query::default(), &icbs.config().physics, Binning::default());
    assert_eq!(report.objects[0].verdict, Verdict::Implausible);
    assert!(report.objects[0].reason.as_deref().unwrap().contains("falls"));
}

#[test]
fn empty_scene_detect_answers_nothing_in_one_round() {
    let lab = Lab::desk(Some(&[]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let answer = icbs.answer_query(&Query::default(), [&s_rw]).unwrap();
    assert!(answer.confirmed.is_empty() && answer.rejected.is_empty());
    assert_eq!(answer.iterations, 1);
}

#[test]
fn empty_stream_is_an_error() {
    let lab = Lab::desk(Some(&[]), 1, quiet());
    assert!(lab.icbs().answer_query(&Query::default(), []).is_err());
}

#[test]
fn class_filter_limits_the_answer() {
    let lab = Lab::desk(Some(&["cereal", "milk", "soap"]), 1, quiet());
    let mut icbs = lab.icbs();
    let s_rw = synthesize_rw(&lab.scenario, &lab.library, 0);
    let q = Query {
        kind: icbs::verify::QueryKind::Verify,
        class_filter: Some("milk".into()),
        ..Query::default()
    };
    let answer = icbs.answer_query(&q, [&s_rw]).unwrap();
    assert_eq!(answer.confirmed.len(), 1);
    assert_eq!(answer.confirmed[0].label, "milk");
}

#[test]
fn rounds_are_bounded_and_distances_never_grow() {
    let noise = NoiseConfig {
        pixel_sigma: 2.0,
        label_corruption: 0.3,
        flip_rate: 0.3,
        ..NoiseConfig::default()
    };
    let lab = Lab::desk(None, 8, noise);
    let labels: Vec<String> = lab.library.labels().map(String::from).collect();
    for l in 1..=3u32 {
        let mut icbs = lab.icbs();
        let q = Query {
            max_iterations: l,
            ..Query::default()
        };
        for tick in 0..8 {
            let s_rw = synthesize_rw(&lab.scenario, &lab.library, tick);
            let r = icbs
                .process_frame(&s_rw, &q, |hs| {
                    icbs::harness::corrupt(hs, &noise, &labels, 11, tick as u64);
                })
                .unwrap();
            assert!(r.reports.len() as u32 <= l);
            assert!(r.answer.iterations <= l);
            for o in &r.outcomes {
                assert!(o.distances.len() as u32 <= l);
                assert!(o.distances.windows(2).all(|w| w[1] <= w[0]), "{o:?}");
                assert!(matches!(o.status, Status::Confirmed | Status::Rejected));
            }
            let confirmed: Vec<_> = r.answer.confirmed.iter().map(|c| c.id).collect();
            assert!(r.answer.rejected.iter().all(|x| !confirmed.contains(&x.id)));
        }
    }
}
