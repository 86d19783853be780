#![allow(dead_code)]

use icbs::desk::{desk_scenario, DeskOptions};
use icbs::harness::build_classifier;
use icbs::mesh::ModelLibrary;
use icbs::percept::ClassifierModel;
use icbs::scenario::{NoiseConfig, Scenario};
use icbs::verify::{Icbs, LoopConfig};
use icbs::world::ArtificialWorld;

pub struct Lab {
    pub scenario: Scenario,
    pub library: ModelLibrary,
    pub classifier: ClassifierModel,
}

impl Lab {
    pub fn desk(labels: Option<&[&str]>, frames: usize, noise: NoiseConfig) -> Self {
        let scenario = desk_scenario(&DeskOptions {
            frames,
            labels: labels.map(|l| l.iter().map(|s| s.to_string()).collect()),
            noise,
            ..DeskOptions::default()
        });
        let library = scenario.validate().expect("desk scenario validates");
        let classifier = build_classifier(&scenario, &library).expect("exemplars render");
        Self {
            scenario,
            library,
            classifier,
        }
    }

    pub fn icbs(&self) -> Icbs<ArtificialWorld> {
        let world = ArtificialWorld::new(self.library.clone(), self.scenario.map.clone(), self.scenario.intrinsics);
        Icbs::new(
            world,
            self.library.clone(),
            self.scenario.map.clone(),
            self.classifier.clone(),
            LoopConfig::default(),
        )
    }

    /// An artificial world holding the ground-truth scene, ids in placement order.
    pub fn truth_world(&self) -> ArtificialWorld {
        let mut w = ArtificialWorld::new(self.library.clone(), self.scenario.map.clone(), self.scenario.intrinsics);
        for p in &self.scenario.objects {
            w.spawn(&p.label, p.pose).expect("library label");
        }
        w
    }
}
