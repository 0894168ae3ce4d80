use std::collections::HashSet;

use natlog::dataset::{read_pairs, write_pairs, LabeledPair};
use natlog::experiment::{Recipe, Variant};
use natlog::model::{Checkpoint, PairModel};
use natlog::prop::{build_prop_dataset, label_pair, pair_bin, Formula, PropConfig};
use natlog::quant::{build_quant_dataset, Lexicon, QuantConfig, QuantLabeler, QuantSentence};
use natlog::train::{evaluate, predict_all, train, vocabulary, TrainConfig};
use natlog::worlds::{all_statements, generate_world, split_and_prune};

fn small_join_pairs() -> (Vec<LabeledPair>, Vec<LabeledPair>) {
    let world = generate_world(16, 5, 4).unwrap();
    let split = split_and_prune(&all_statements(&world), 4).unwrap();
    let pairs = |s: &[natlog::worlds::RelationalStatement]| s.iter().map(|x| x.to_pair()).collect();
    (pairs(&split.train), pairs(&split.test))
}

#[test]
fn join_training_is_reproducible_and_checkpoints_preserve_predictions() {
    let (train_pairs, test_pairs) = small_join_pairs();
    let mut all = train_pairs.clone();
    all.extend(test_pairs.iter().cloned());

    let run = || {
        let config = Variant::LeafNtn.model_config(6, vocabulary(&all));
        let mut model = PairModel::new(config, 9).unwrap();
        let mut cfg = TrainConfig::new(15, 9);
        cfg.dev_fraction = Recipe::Join.dev_fraction();
        let outcome = train(&mut model, &train_pairs, &cfg).unwrap();
        (model, outcome)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a.flat_params(), b.flat_params());
    assert_eq!(log_a.log, log_b.log);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::from_model(&a, 9, Some(log_a.optimizer))
        .save(&path)
        .unwrap();
    let restored = Checkpoint::load(&path).unwrap().to_model().unwrap();
    assert_eq!(
        predict_all(&a, &test_pairs).unwrap(),
        predict_all(&restored, &test_pairs).unwrap()
    );
    let m = evaluate(&restored, &test_pairs).unwrap();
    assert_eq!(m.count, test_pairs.len());
}

#[test]
fn prop_dataset_survives_tsv_and_labels_match_formulas() {
    let config = PropConfig {
        max_ops: 6,
        train_cutoff: 3,
        target_train: 400,
        target_test: 200,
        seed: 11,
        ..PropConfig::default()
    };
    let data = build_prop_dataset(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.tsv");
    write_pairs(&path, &data.train).unwrap();
    assert_eq!(read_pairs(&path).unwrap(), data.train);

    for p in &data.train {
        assert!(pair_bin(p).unwrap() <= 3);
    }
    for (bin, pairs) in &data.test_by_bin {
        for p in pairs {
            assert_eq!(pair_bin(p).unwrap(), *bin);
            let l = Formula::from_expression(&p.left).unwrap();
            let r = Formula::from_expression(&p.right).unwrap();
            assert_eq!(label_pair(&l, &r), Some(p.relation));
        }
    }
}

#[test]
fn quant_dataset_keeps_sentence_sides_apart() {
    let lexicon = Lexicon::default_lexicon();
    let config = QuantConfig {
        target_train: 300,
        target_test: 100,
        seed: 6,
        ..QuantConfig::default()
    };
    let data = build_quant_dataset(&lexicon, &config).unwrap();
    assert_eq!((data.train.len(), data.test.len()), (300, 100));

    let sentences = |pairs: &[LabeledPair]| -> HashSet<String> {
        pairs
            .iter()
            .flat_map(|p| [p.left.to_string(), p.right.to_string()])
            .collect()
    };
    assert!(sentences(&data.train).is_disjoint(&sentences(&data.test)));

    let mut labeler = QuantLabeler::new(lexicon, config.max_entities).unwrap();
    for p in data.test.iter().take(40) {
        let a = QuantSentence::from_expression(&p.left).unwrap();
        let b = QuantSentence::from_expression(&p.right).unwrap();
        assert_eq!(labeler.label(&a, &b), Some(p.relation));
    }
}
