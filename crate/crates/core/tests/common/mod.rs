#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use tacovc::checkpoint::{CheckpointSet, NetworkKind};
use tacovc::enhancer::build_taco_se;
use tacovc::recognizer::{PrConfig, PrModel};
use tacovc::synthesizer::{SynthConfig, SynthModel};
use tacovc::vocoder::{VocoderConfig, VocoderModel};
use tacovc::FeatureConfig;

/// Untrained desk networks saved as a complete checkpoint set.
pub fn untrained_set(dir: &Path, seed: u64) -> CheckpointSet {
    let set = CheckpointSet::new(dir);
    std::fs::create_dir_all(dir).unwrap();
    let f = FeatureConfig::default();
    let pr = Arc::new(PrModel::new(PrConfig::desk(), seed).unwrap());
    let syn = SynthModel::new(SynthConfig::desk(), seed + 1).unwrap();
    let se = build_taco_se(pr.clone(), &syn).unwrap();
    let voc = VocoderModel::new(VocoderConfig::desk(), seed + 2).unwrap();
    pr.to_checkpoint(&f, 0).unwrap().save(&set.path(NetworkKind::Recognizer)).unwrap();
    syn.to_checkpoint(NetworkKind::Synthesizer, &f, 0, vec![])
        .unwrap()
        .save(&set.path(NetworkKind::Synthesizer))
        .unwrap();
    se.to_checkpoint(&f, 0, vec![]).unwrap().save(&set.path(NetworkKind::Enhancer)).unwrap();
    voc.to_checkpoint(&f, 0).unwrap().save(&set.path(NetworkKind::Vocoder)).unwrap();
    set
}
