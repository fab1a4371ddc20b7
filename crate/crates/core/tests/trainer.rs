use std::collections::BTreeSet;

use featscope::dict::{DictKind, DictModel, DictSpec};
use featscope::synth::{gen_planted, PlantedWorld};
use featscope::trainer::{train_dict, train_from, TrainConfig};

#[test]
fn planted_loss_decreases_for_five_epochs() {
    let world = PlantedWorld::standard(1);
    let data = gen_planted(&world, 5000).unwrap();
    let spec = DictSpec::single(DictKind::Transcoder, 96, 48, 64, 4).unwrap();
    let cfg = TrainConfig { epochs: 5, seed: 2, ..Default::default() };
    let out = match train_dict(&data.inputs, Some(&data.targets), spec, &cfg) {
        Ok(out) => out,
        Err(e) => panic!("{e}"),
    };
    let losses = &out.report.epoch_loss;
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss rose: {losses:?}");
    }
}

#[test]
fn dead_set_matches_mask_replay() {
    let world = PlantedWorld::standard(4);
    let data = gen_planted(&world, 3000).unwrap();
    let spec = DictSpec::new(DictKind::MatryoshkaTranscoder, 96, 48, vec![32, 64], vec![4, 8]).unwrap();
    let cfg = TrainConfig { epochs: 4, batch_size: 64, dead_window: 30, lr: 3e-3, seed: 4, ..Default::default() };
    let model = DictModel::init(spec, cfg.seed).unwrap();
    let mut masks: Vec<(usize, Vec<usize>)> = Vec::new();
    let out = train_from(model, &data.inputs, Some(&data.targets), &cfg, &mut |ev| {
        masks.push((ev.epoch, ev.active.to_vec()));
    })
    .unwrap_or_else(|e| panic!("{e}"));

    let replay = |upto: usize| -> Vec<usize> {
        let window = &masks[upto.saturating_sub(cfg.dead_window)..upto];
        let fired: BTreeSet<usize> = window.iter().flat_map(|(_, m)| m.iter().copied()).collect();
        (0..64).filter(|j| !fired.contains(j)).collect()
    };
    assert_eq!(out.report.dead_features, replay(masks.len()));
    for epoch in 0..cfg.epochs {
        let end = masks.iter().rposition(|(e, _)| *e == epoch).unwrap() + 1;
        assert_eq!(out.report.dead_per_epoch[epoch], replay(end).len(), "epoch {epoch}");
    }
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let world = PlantedWorld::standard(2);
    let data = gen_planted(&world, 1000).unwrap();
    let spec = DictSpec::new(DictKind::MatryoshkaTranscoder, 96, 48, vec![16, 32], vec![2, 4]).unwrap();
    let cfg = TrainConfig { epochs: 2, lr: 1e-3, seed: 8, ..Default::default() };
    let bytes = || {
        let out = train_dict(&data.inputs, Some(&data.targets), spec.clone(), &cfg).unwrap_or_else(|e| panic!("{e}"));
        let mut buf = Vec::new();
        out.model.write_to(&mut buf).unwrap();
        (buf, serde_json::to_string(&out.report).unwrap())
    };
    assert_eq!(bytes(), bytes());
}
