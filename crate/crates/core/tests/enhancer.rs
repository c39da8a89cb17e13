use std::sync::Arc;

use tacovc::enhancer::{
    build_taco_se, generate_smspec_corpus, load_se_utterances, train_taco_se, SeTrainConfig,
};
use tacovc::recognizer::{PrConfig, PrModel};
use tacovc::store::FeatureStore;
use tacovc::synthesizer::{SynthConfig, SynthModel};
use tacovc::toy::{write_toy_corpus, ToySpeaker};
use tacovc::{Error, FeatureConfig, MelRole};

struct Fixture {
    _dir: tempfile::TempDir,
    store: FeatureStore,
    ids: Vec<String>,
    pr: Arc<PrModel>,
    syn: SynthModel,
}

fn fixture(n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let f = FeatureConfig::default();
    let m = write_toy_corpus(&dir.path().join("toy"), &[ToySpeaker::a()], n, 1, &f).unwrap();
    let store = FeatureStore::new(dir.path().join("feat"), f).unwrap();
    store.extract_manifest(&m).unwrap();
    Fixture {
        ids: m.records.iter().map(|r| r.utt_id.clone()).collect(),
        store,
        _dir: dir,
        pr: Arc::new(PrModel::new(PrConfig::desk(), 1).unwrap()),
        syn: SynthModel::new(SynthConfig::desk(), 2).unwrap(),
    }
}

#[test]
fn fresh_enhancer_equals_recognizer_then_synthesizer() {
    let fx = fixture(2);
    let se = build_taco_se(fx.pr.clone(), &fx.syn).unwrap();
    assert_eq!(se.synthesizer().checksum().unwrap(), fx.syn.checksum().unwrap());
    for id in &fx.ids {
        let y = fx.store.read_mel(&fx.store.mel_path(id)).unwrap();
        let direct = fx.syn.synthesize(&fx.pr.extract_ppg(&y).unwrap()).unwrap().mel;
        let enhanced = se.enhance(&y).unwrap();
        assert_eq!(enhanced.frames, direct.frames);
        assert_eq!(enhanced.role, MelRole::Enhanced);
    }
}

#[test]
fn training_moves_only_the_synthesizer_copy() {
    let fx = fixture(2);
    let statuses = generate_smspec_corpus(&fx.pr, &fx.syn, &fx.store, &fx.ids, &["synthesizer=test".into()]);
    assert!(statuses.iter().all(|s| s.ok));
    let data = load_se_utterances(&fx.store, &fx.ids).unwrap();
    for u in &data {
        assert_eq!(u.yhat.as_ref().unwrap().n_frames(), u.y.n_frames());
    }

    let pr_before = fx.pr.checksum().unwrap();
    let syn_before = fx.syn.checksum().unwrap();
    let se = build_taco_se(fx.pr.clone(), &fx.syn).unwrap();
    let cfg = SeTrainConfig {
        batch_size: 2,
        ..SeTrainConfig::with_steps(2)
    };
    train_taco_se(&se, &data, &cfg).unwrap();
    assert_eq!(fx.pr.checksum().unwrap(), pr_before);
    assert_eq!(se.recognizer().checksum().unwrap(), pr_before);
    assert_eq!(fx.syn.checksum().unwrap(), syn_before);
    assert_ne!(se.synthesizer().checksum().unwrap(), syn_before);
}

#[test]
fn training_without_synthesized_mels_fails() {
    let fx = fixture(1);
    let data = load_se_utterances(&fx.store, &fx.ids).unwrap();
    assert!(data[0].yhat.is_none());
    let se = build_taco_se(fx.pr.clone(), &fx.syn).unwrap();
    let err = train_taco_se(&se, &data, &SeTrainConfig::with_steps(1)).unwrap_err();
    assert!(matches!(err, Error::MissingFeature(_)), "{err}");
}
