//! The synthetic real world and the experiment runner.
//!
//! The "real" sensor is the renderer applied to the ground-truth scene plus
//! pixel noise; imperfect perception is simulated by corrupting labels,
//! flipping poses and jittering positions of correct hypotheses. All draws
//! come from named random streams derived from the scenario seed, the stream
//! name and the frame, so changing one rate never shifts another stream.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::desk::facing_yaw;
use crate::error::{LoopError, ScenarioError};
use crate::geometry::{Pose6D, Vec3};
use crate::mesh::ModelLibrary;
use crate::percept::{annotate, segment, ClassifierModel, Exemplar, FeatureVector};
use crate::render::{pnm, render, RenderItem, SensorFrame};
use crate::scenario::{NoiseConfig, Scenario};
use crate::scene::{ObjectHypothesis, Status};
use crate::verify::{Edit, Icbs, LoopConfig, Query};
use crate::world::ArtificialWorld;

/// Largest horizontal distance at which a hypothesis is attributed to a
/// ground-truth object.
const ASSOCIATION_RADIUS: f64 = 0.06;

/// Deterministic generator for one named stream at one frame.
pub fn stream(seed: u64, name: &str, tick: u64) -> ChaCha8Rng {
    // FNV-1a of the stream name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17));
    rng.set_stream(tick);
    rng
}

/// Renders the ground-truth scene from the camera at `tick` and adds
/// independent Gaussian noise to every color channel.
pub fn synthesize_rw(scenario: &Scenario, library: &ModelLibrary, tick: usize) -> SensorFrame {
    let camera = scenario.trajectory[tick];
    let items: Vec<RenderItem<'_>> = scenario
        .objects
        .iter()
        .enumerate()
        .map(|(i, p)| RenderItem {
            id: i as u32 + 1,
            model: library.get(&p.label).expect("validated scenario"),
            pose: p.pose,
        })
        .collect();
    let mut frame = render(&items, &scenario.map.static_geometry, &camera, &scenario.intrinsics);
    frame.timestamp = tick as u64;
    let sigma = scenario.noise.pixel_sigma;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = stream(scenario.seed, "pixel_noise", tick as u64);
        for px in frame.rgb.iter_mut() {
            for c in px.iter_mut() {
                let v = *c as f64 + normal.sample(&mut rng);
                *c = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    frame
}

/// What the harness did to one hypothesis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub corrupted: bool,
    pub flipped: bool,
}

/// Injects label errors, 180° flips and pose jitter into `hypotheses`.
///
/// Every hypothesis consumes the same number of draws from each stream
/// whatever the rates, so outcomes for one rate do not depend on another.
pub fn corrupt(
    hypotheses: &mut [ObjectHypothesis],
    noise: &NoiseConfig,
    labels: &[String],
    seed: u64,
    tick: u64,
) -> Vec<Injection> {
    let mut labels_rng = stream(seed, "corruption", tick);
    let mut flip_rng = stream(seed, "flips", tick);
    let mut jitter_rng = stream(seed, "jitter", tick);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    hypotheses
        .iter_mut()
        .map(|h| {
            let mut inj = Injection::default();
            let u: f64 = labels_rng.random();
            let top = h.top_label().map(str::to_string);
            let wrong: Vec<&String> = labels.iter().filter(|l| Some(l.as_str()) != top.as_deref()).collect();
            let pick = wrong.choose(&mut labels_rng).map(|s| s.to_string());
            if u < noise.label_corruption {
                if let (Some(top), Some(pick)) = (top, pick) {
                    let score = h.ranking.first().map_or(1.0, |r| r.1);
                    h.ranking.retain(|(l, _)| *l != pick && *l != top);
                    h.ranking.insert(0, (top, score));
                    h.ranking.insert(0, (pick, score));
                    inj.corrupted = true;
                }
            }
            let f: f64 = flip_rng.random();
            if f < noise.flip_rate {
                h.pose = h.pose.rotated_about_local(&Vec3::z(), PI);
                inj.flipped = true;
            }
            let (dx, dy, dyaw): (f64, f64, f64) = (
                unit.sample(&mut jitter_rng),
                unit.sample(&mut jitter_rng),
                unit.sample(&mut jitter_rng),
            );
            if noise.position_jitter > 0.0 {
                h.pose.position += Vec3::new(dx, dy, 0.0) * noise.position_jitter;
            }
            if noise.yaw_jitter_deg > 0.0 {
                h.pose = h.pose.rotated_about_local(&Vec3::z(), (dyaw * noise.yaw_jitter_deg).to_radians());
            }
            inj
        })
        .collect()
}

/// Renders each model alone on the first support surface and uses the
/// perceived features as classifier exemplars.
pub fn build_classifier(scenario: &Scenario, library: &ModelLibrary) -> Result<ClassifierModel, ScenarioError> {
    let camera = scenario.trajectory[0];
    let surface = scenario
        .map
        .surfaces
        .first()
        .ok_or_else(|| ScenarioError::Invalid("the map has no support surface".into()))?;
    let [u0, v0, u1, v1] = surface.bounds;
    let (u, v) = surface.plane_axes();
    let center = surface.point + u * ((u0 + u1) / 2.0) + v * ((v0 + v1) / 2.0);
    let to_cam = camera.position - center;
    let base_yaw = facing_yaw(to_cam.y.atan2(to_cam.x));
    let binning = crate::histogram::Binning::default();
    let seg = crate::percept::SegmentationConfig::default();
    let probe = ClassifierModel {
        exemplars: vec![],
        k: 1,
    };
    let mut exemplars = Vec::new();
    for model in library.models() {
        for off in &scenario.classifier.yaw_offsets_deg {
            let pose = Pose6D::from_yaw(center, base_yaw + off.to_radians());
            let items = [RenderItem { id: 1, model, pose }];
            let frame = render(&items, &scenario.map.static_geometry, &camera, &scenario.intrinsics);
            let clusters = segment(&frame, &scenario.map, &seg);
            let cluster = clusters.iter().max_by_key(|c| c.roi.len()).ok_or_else(|| {
                ScenarioError::Invalid(format!("model {} is not visible for exemplar rendering", model.label))
            })?;
            let h = annotate(&frame, cluster, &probe, binning).map_err(|e| ScenarioError::Loop(e.into()))?;
            exemplars.push(Exemplar {
                label: model.label.clone(),
                features: FeatureVector::new(h.histogram.as_ref().expect("annotated"), &h.extents.expect("annotated")),
            });
        }
    }
    ClassifierModel::new(exemplars, scenario.classifier.k).map_err(ScenarioError::Invalid)
}

/// One row per hypothesis per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tick: u64,
    pub object_id: u64,
    pub truth: String,
    pub confuser: bool,
    pub perceived: String,
    pub final_label: String,
    pub status: String,
    pub corrupted: bool,
    pub flipped: bool,
    pub flip_corrected: bool,
    pub relabeled: bool,
    pub rounds: usize,
    /// Distances of each compare round, `;`-separated.
    pub distances: String,
    /// Why the hypothesis was rejected; empty otherwise.
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub seed: u64,
    pub frames: usize,
    pub predictions: usize,
    pub baseline_accuracy: f64,
    /// Accuracy over the hypotheses that were not rejected.
    pub icbs_accuracy: f64,
    pub rejected: usize,
    pub true_rejections: usize,
    pub false_rejections: usize,
    /// False rejections over baseline-correct predictions.
    pub false_rejection_rate: f64,
    /// Corrupted predictions of distinct-looking objects.
    pub corrupted: usize,
    /// Of those, rejected or relabeled to the truth.
    pub corrupted_handled: usize,
    pub corrupted_handled_rate: f64,
    pub confuser_corrupted: usize,
    pub confuser_handled: usize,
    /// Flips injected on front/back-distinct objects.
    pub flips: usize,
    pub flips_corrected: usize,
    pub flip_detection_rate: f64,
    pub symmetric_flips: usize,
    pub symmetric_flips_corrected: usize,
    /// Every verdict of the first compare round was a match.
    pub first_round_all_match: bool,
    /// Mean distance per compare round over all objects compared in it.
    pub mean_distance_per_round: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn to_csv(&self) -> Result<String, ScenarioError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions<'a> {
    /// Writes the real and believed frames of every tick as PPM files here.
    pub dump_frames: Option<&'a Path>,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Runs the verification loop over the whole trajectory and scores every
/// hypothesis against the ground truth.
pub fn run_experiment(scenario: &Scenario, query: &Query, options: &RunOptions<'_>) -> Result<ExperimentReport, ScenarioError> {
    let library = scenario.validate()?;
    query.validate()?;
    let classifier = build_classifier(scenario, &library)?;
    let labels: Vec<String> = library.labels().map(str::to_string).collect();
    let world = ArtificialWorld::new(library.clone(), scenario.map.clone(), scenario.intrinsics);
    let mut icbs = Icbs::new(world, library.clone(), scenario.map.clone(), classifier, LoopConfig::default());

    let mut rows = Vec::new();
    let mut round_sums: Vec<(f64, usize)> = Vec::new();
    let mut first_round_all_match = true;
    for tick in 0..scenario.trajectory.len() {
        let s_rw = synthesize_rw(scenario, &library, tick);
        let mut injected = Vec::new();
        let mut truths = Vec::new();
        let result = icbs.process_frame(&s_rw, query, |hyps| {
            truths = hyps.iter().map(|h| truth_of(scenario, h)).collect();
            injected = corrupt(hyps, &scenario.noise, &labels, scenario.seed, tick as u64);
        })?;
        if let Some(dir) = options.dump_frames {
            let s_aw = icbs.render_belief(&s_rw.camera).map_err(LoopError::from)?;
            let write = |name: String, bytes: Vec<u8>| {
                let path = dir.join(name);
                std::fs::write(&path, bytes).map_err(|source| ScenarioError::Io {
                    path: path.display().to_string(),
                    source,
                })
            };
            write(format!("rw_{tick:04}.ppm"), pnm::rgb_ppm(&s_rw))?;
            write(format!("aw_{tick:04}.ppm"), pnm::rgb_ppm(&s_aw))?;
        }
        if let Some(first) = result.reports.first() {
            first_round_all_match &= first.objects.iter().all(|o| o.verdict == crate::verify::Verdict::Match);
        }
        for report in &result.reports {
            let i = report.iteration as usize - 1;
            if round_sums.len() <= i {
                round_sums.resize(i + 1, (0.0, 0));
            }
            for o in &report.objects {
                round_sums[i].0 += o.effective_distance();
                round_sums[i].1 += 1;
            }
        }
        for ((o, inj), truth) in result.outcomes.iter().zip(&injected).zip(&truths) {
            let truth = truth.clone().unwrap_or_default();
            rows.push(ReportRow {
                tick: tick as u64,
                object_id: o.id,
                confuser: scenario.is_confuser(&truth),
                truth,
                perceived: o.perceived_label.clone(),
                final_label: o.final_label.clone(),
                status: format!("{:?}", o.status).to_lowercase(),
                corrupted: inj.corrupted,
                flipped: inj.flipped,
                flip_corrected: o.edits.contains(&Edit::Flip) && o.status == Status::Confirmed,
                relabeled: o.edits.contains(&Edit::Relabel),
                rounds: o.distances.len(),
                distances: o.distances.iter().map(|d| format!("{d:.6}")).collect::<Vec<_>>().join(";"),
                reason: o.reason.clone().unwrap_or_default(),
            });
        }
    }

    let summary = summarize(scenario, &rows, first_round_all_match, &round_sums);
    Ok(ExperimentReport { summary, rows })
}

fn truth_of(scenario: &Scenario, h: &ObjectHypothesis) -> Option<String> {
    scenario
        .objects
        .iter()
        .map(|p| {
            let d = p.pose.position - h.pose.position;
            ((d.x * d.x + d.y * d.y).sqrt(), &p.label)
        })
        .filter(|(d, _)| *d <= ASSOCIATION_RADIUS)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, l)| l.clone())
}

fn summarize(scenario: &Scenario, rows: &[ReportRow], first_round_all_match: bool, round_sums: &[(f64, usize)]) -> ExperimentSummary {
    let rejected = |r: &&ReportRow| r.status == "rejected";
    let baseline_ok = |r: &&ReportRow| r.perceived == r.truth;
    let kept: Vec<&ReportRow> = rows.iter().filter(|r| !rejected(r)).collect();
    let baseline_correct = rows.iter().filter(baseline_ok).count();
    let false_rejections = rows.iter().filter(|r| rejected(r) && baseline_ok(r)).count();
    let handled = |r: &&&ReportRow| r.status == "rejected" || r.final_label == r.truth;
    let corrupted: Vec<&ReportRow> = rows.iter().filter(|r| r.corrupted && !r.confuser).collect();
    let confuser_corrupted: Vec<&ReportRow> = rows.iter().filter(|r| r.corrupted && r.confuser).collect();
    let flips: Vec<&ReportRow> = rows.iter().filter(|r| r.flipped && !r.confuser).collect();
    let sym_flips: Vec<&ReportRow> = rows.iter().filter(|r| r.flipped && r.confuser).collect();
    let n_rejected = rows.iter().filter(rejected).count();
    ExperimentSummary {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        frames: scenario.trajectory.len(),
        predictions: rows.len(),
        baseline_accuracy: ratio(baseline_correct, rows.len()),
        icbs_accuracy: ratio(kept.iter().filter(|r| r.final_label == r.truth).count(), kept.len()),
        rejected: n_rejected,
        true_rejections: n_rejected - false_rejections,
        false_rejections,
        false_rejection_rate: ratio(false_rejections, baseline_correct),
        corrupted: corrupted.len(),
        corrupted_handled: corrupted.iter().filter(handled).count(),
        corrupted_handled_rate: ratio(corrupted.iter().filter(handled).count(), corrupted.len()),
        confuser_corrupted: confuser_corrupted.len(),
        confuser_handled: confuser_corrupted.iter().filter(handled).count(),
        flips: flips.len(),
        flips_corrected: flips.iter().filter(|r| r.flip_corrected).count(),
        flip_detection_rate: ratio(flips.iter().filter(|r| r.flip_corrected).count(), flips.len()),
        symmetric_flips: sym_flips.len(),
        symmetric_flips_corrected: sym_flips.iter().filter(|r| r.flip_corrected).count(),
        first_round_all_match,
        mean_distance_per_round: round_sums.iter().map(|(s, n)| s / (*n).max(1) as f64).collect(),
    }
}
