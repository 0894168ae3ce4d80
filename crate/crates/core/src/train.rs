//! Minibatch AdaDelta training with dev-set early stopping, and evaluation
//! metrics (accuracy, macro-averaged F1, per-size bins).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPair;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::model::{argmax, CompiledTree, PairModel};
use crate::nn::{adadelta_step, AdaDeltaConfig, OptimizerState};
use crate::relation::Relation;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    /// Epochs between dev evaluations.
    pub eval_every: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    /// Fraction of the training data held out as a dev set; 0 disables
    /// early stopping.
    pub dev_fraction: f64,
    pub optimizer: AdaDeltaConfig,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            minibatch_size: 32,
            seed,
            eval_every: 1,
            patience: 20,
            dev_fraction: 0.1,
            optimizer: AdaDeltaConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs ({}), minibatch size ({}) and eval interval ({}) must be positive",
                self.epochs, self.minibatch_size, self.eval_every
            )));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::InvalidArgument(format!(
                "dev fraction {} outside [0, 1)",
                self.dev_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean example NLL over the epoch plus the L2 penalty at its end.
    pub loss: f64,
    /// Accuracy of the train-mode predictions made while training.
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (the best dev accuracy, or the last).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub dev_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub optimizer: Vec<OptimizerState>,
}

/// A labeled pair with both sides compiled against a model's vocabulary.
#[derive(Clone, Debug)]
pub struct CompiledPair {
    pub left: CompiledTree,
    pub right: CompiledTree,
    pub gold: usize,
}

pub fn compile_pairs(model: &PairModel, pairs: &[LabeledPair]) -> Result<Vec<CompiledPair>> {
    pairs
        .iter()
        .map(|p| {
            Ok(CompiledPair {
                left: model.compile(&p.left)?,
                right: model.compile(&p.right)?,
                gold: p.relation.index(),
            })
        })
        .collect()
}

/// Sorted leaf tokens of every expression in `pairs`.
pub fn vocabulary<'a>(pairs: impl IntoIterator<Item = &'a LabeledPair>) -> Vec<String> {
    let mut words = BTreeSet::new();
    let mut add = |e: &Expression| {
        for t in e.leaves() {
            if !words.contains(t) {
                words.insert(t.to_string());
            }
        }
    };
    for p in pairs {
        add(&p.left);
        add(&p.right);
    }
    words.into_iter().collect()
}

/// Trains `model` in place. The loss is the minibatch-mean NLL plus
/// `(λ/2)‖W‖²`; updates use AdaDelta. With a dev split, the parameters with the
/// best dev accuracy are restored at the end.
pub fn train(
    model: &mut PairModel,
    data: &[LabeledPair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut examples = compile_pairs(model, data)?;
    examples.shuffle(&mut rng::sub_rng(cfg.seed, "dev-split"));
    let dev_size = if cfg.dev_fraction > 0.0 && examples.len() >= 10 {
        ((examples.len() as f64) * cfg.dev_fraction).round() as usize
    } else {
        0
    };
    let dev = examples.split_off(examples.len() - dev_size);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut shuffle_rng = rng::sub_rng(cfg.seed, "minibatch");
    let mut dropout_rng = rng::sub_rng(cfg.seed, "dropout");
    let mut optimizer: Vec<OptimizerState> = model
        .params()
        .iter()
        .map(OptimizerState::for_param)
        .collect();
    let mut grads = model.zero_gradients();
    let mut log = TrainLog {
        train_size: examples.len(),
        dev_size,
        ..TrainLog::default()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut nll_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.minibatch_size) {
            grads.zero();
            for &i in batch {
                let ex = &examples[i];
                let (nll, pred) = model.accumulate_gradient_with_prediction(
                    &ex.left,
                    &ex.right,
                    ex.gold,
                    Some(&mut dropout_rng),
                    &mut grads,
                )?;
                if !nll.is_finite() {
                    return Err(Error::NonFiniteLoss(format!(
                        "epoch {epoch}, example {i}: loss {nll}"
                    )));
                }
                nll_sum += nll;
                correct += usize::from(pred == ex.gold);
            }
            grads.scale(1.0 / batch.len() as f64);
            model.add_l2_gradient(&mut grads);
            for ((p, g), s) in model
                .params_mut()
                .iter_mut()
                .zip(&grads.tensors)
                .zip(&mut optimizer)
            {
                adadelta_step(p, g, s, cfg.optimizer)?;
            }
        }
        let loss = nll_sum / examples.len() as f64 + model.l2_penalty();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("epoch {epoch}: loss {loss}")));
        }
        let mut record = EpochRecord {
            epoch,
            loss,
            train_accuracy: correct as f64 / examples.len() as f64,
            dev_accuracy: None,
        };
        if !dev.is_empty() && epoch % cfg.eval_every == 0 {
            let acc = accuracy_on(model, &dev);
            record.dev_accuracy = Some(acc);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.flat_params()));
                log.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
            }
        }
        log.epochs.push(record);
        if !dev.is_empty() && stale >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }
    match best {
        Some((_, params)) => model.set_flat_params(&params),
        None => log.best_epoch = log.epochs.len(),
    }
    Ok(TrainOutcome { log, optimizer })
}

fn accuracy_on(model: &PairModel, examples: &[CompiledPair]) -> f64 {
    let correct = examples
        .iter()
        .filter(|ex| model.predict(&ex.left, &ex.right) == ex.gold)
        .count();
    correct as f64 / examples.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub relation: Relation,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Classes present in the gold labels.
    pub per_class: Vec<ClassMetrics>,
}

/// Accuracy, and macro F1 as the harmonic mean of mean precision and mean
/// recall over the classes present in `gold`. Precision of a class that is
/// never predicted counts as 0. Empty input gives zeros.
pub fn compute_metrics(gold: &[Relation], predicted: &[Relation]) -> Metrics {
    assert_eq!(
        gold.len(),
        predicted.len(),
        "gold and predicted lengths differ"
    );
    let mut support = [0usize; Relation::COUNT];
    let mut predicted_n = [0usize; Relation::COUNT];
    let mut hits = [0usize; Relation::COUNT];
    for (g, p) in gold.iter().zip(predicted) {
        support[g.index()] += 1;
        predicted_n[p.index()] += 1;
        if g == p {
            hits[g.index()] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let per_class: Vec<ClassMetrics> = Relation::ALL
        .iter()
        .filter(|r| support[r.index()] > 0)
        .map(|&r| {
            let i = r.index();
            ClassMetrics {
                relation: r,
                support: support[i],
                predicted: predicted_n[i],
                precision: if predicted_n[i] == 0 {
                    0.0
                } else {
                    hits[i] as f64 / predicted_n[i] as f64
                },
                recall: hits[i] as f64 / support[i] as f64,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let (p, r) = if per_class.is_empty() {
        (0.0, 0.0)
    } else {
        (
            per_class.iter().map(|c| c.precision).sum::<f64>() / k,
            per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        )
    };
    Metrics {
        count: gold.len(),
        accuracy: if gold.is_empty() {
            0.0
        } else {
            correct as f64 / gold.len() as f64
        },
        macro_f1: if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        },
        per_class,
    }
}

/// Predictions of `model` (evaluation mode) for every pair.
pub fn predict_all(model: &PairModel, pairs: &[LabeledPair]) -> Result<Vec<Relation>> {
    compile_pairs(model, pairs)?
        .iter()
        .map(|ex| {
            Ok(Relation::from_index(model.predict(&ex.left, &ex.right))
                .expect("class index in range"))
        })
        .collect()
}

pub fn evaluate(model: &PairModel, pairs: &[LabeledPair]) -> Result<Metrics> {
    let predicted = predict_all(model, pairs)?;
    let gold: Vec<Relation> = pairs.iter().map(|p| p.relation).collect();
    Ok(compute_metrics(&gold, &predicted))
}

/// Accuracy of always predicting the most frequent gold class.
pub fn majority_baseline(pairs: &[LabeledPair]) -> f64 {
    let mut counts = [0usize; Relation::COUNT];
    for p in pairs {
        counts[p.relation.index()] += 1;
    }
    if pairs.is_empty() {
        return 0.0;
    }
    counts[argmax(&counts.map(|c| c as f64))] as f64 / pairs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub bin: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    /// Size of the largest training examples, drawn as a marker on plots.
    pub train_cutoff: Option<usize>,
    pub bins: Vec<BinMetrics>,
}

impl BinReport {
    /// `bin,size,accuracy,macro_f1`, one row per non-empty bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,size,accuracy,macro_f1\n");
        for b in &self.bins {
            writeln!(
                out,
                "{},{},{:.6},{:.6}",
                b.bin, b.metrics.count, b.metrics.accuracy, b.metrics.macro_f1
            )
            .expect("write to string");
        }
        out
    }

    /// Mean accuracy over bins in `range` that are present.
    pub fn mean_accuracy(&self, range: std::ops::RangeInclusive<usize>) -> Option<f64> {
        let accs: Vec<f64> = self
            .bins
            .iter()
            .filter(|b| range.contains(&b.bin))
            .map(|b| b.metrics.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

pub fn evaluate_by_bin(
    model: &PairModel,
    bins: &BTreeMap<usize, Vec<LabeledPair>>,
    train_cutoff: Option<usize>,
) -> Result<BinReport> {
    let mut out = Vec::new();
    for (&bin, pairs) in bins {
        if !pairs.is_empty() {
            out.push(BinMetrics {
                bin,
                metrics: evaluate(model, pairs)?,
            });
        }
    }
    Ok(BinReport {
        train_cutoff,
        bins: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ComparisonKind, ModelConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use Relation::*;

    #[test]
    fn metrics_worked_example() {
        let m = compute_metrics(
            &[Equivalence, Equivalence, Negation],
            &[Equivalence, Equivalence, Equivalence],
        );
        assert_abs_diff_eq!(m.accuracy, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.macro_f1, 0.4, epsilon = 1e-12);
        assert_eq!(m.per_class.len(), 2);
        assert_eq!(m.per_class[1].precision, 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let g = [Cover, Alternation, Cover, Independence];
        let m = compute_metrics(&g, &g);
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn absent_gold_classes_are_ignored() {
        // predicting a class absent from gold lowers precision of nothing in
        // the average, but lowers recall of the mispredicted gold class
        let m = compute_metrics(&[Cover, Cover], &[Cover, Negation]);
        assert_eq!(m.per_class.len(), 1);
        assert_abs_diff_eq!(m.macro_f1, 2.0 * 0.5 / 1.5, epsilon = 1e-12);
    }

    #[test]
    fn bin_csv_rows() {
        let report = BinReport {
            train_cutoff: Some(4),
            bins: vec![
                BinMetrics {
                    bin: 1,
                    metrics: compute_metrics(&[Cover], &[Cover]),
                },
                BinMetrics {
                    bin: 3,
                    metrics: compute_metrics(&[Cover, Cover], &[Cover, Negation]),
                },
            ],
        };
        assert_eq!(
            report.to_csv(),
            "bin,size,accuracy,macro_f1\n1,1,1.000000,1.000000\n3,2,0.500000,0.666667\n"
        );
        assert_eq!(report.mean_accuracy(1..=4), Some(0.75));
        assert_eq!(report.mean_accuracy(5..=9), None);
    }

    fn arb_relation() -> impl Strategy<Value = Relation> {
        (0..Relation::COUNT).prop_map(|i| Relation::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn macro_f1_bounded_and_exact_only_when_perfect(
            pairs in prop::collection::vec((arb_relation(), arb_relation()), 1..40)
        ) {
            let (g, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let m = compute_metrics(&g, &p);
            prop_assert!((0.0..=1.0).contains(&m.macro_f1));
            let perfect = m.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0);
            prop_assert_eq!(m.macro_f1 == 1.0, perfect);
        }

        #[test]
        fn metrics_depend_only_on_the_pair_multiset(
            pairs in prop::collection::vec((arb_relation(), arb_relation()), 1..30),
            seed in any::<u64>()
        ) {
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rng::seeded(seed));
            let (g1, p1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let (g2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let (a, b) = (compute_metrics(&g1, &p1), compute_metrics(&g2, &p2));
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        }
    }

    fn pair(rel: Relation, l: &str, r: &str) -> LabeledPair {
        LabeledPair {
            relation: rel,
            left: l.parse().unwrap(),
            right: r.parse().unwrap(),
        }
    }

    fn small_model(data: &[LabeledPair], l2: f64) -> PairModel {
        let mut c = ModelConfig::new(
            Architecture::TreeRnn,
            4,
            ComparisonKind::Nn,
            vocabulary(data),
        );
        c.comparison_dim = 8;
        c.l2_lambda = l2;
        PairModel::new(c, 1).unwrap()
    }

    #[test]
    fn memorizes_single_example() {
        let data = [pair(Cover, "( a b )", "c")];
        let mut m = small_model(&data, 0.0);
        let mut cfg = TrainConfig::new(200, 3);
        cfg.dev_fraction = 0.0;
        let out = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(out.log.epochs.len(), 200);
        assert_eq!(evaluate(&m, &data).unwrap().accuracy, 1.0);
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let data = [pair(Cover, "( a b )", "c"), pair(Negation, "a", "c")];
        let mut m = small_model(&data, 1e3);
        let before = m.params()[m
            .param_names()
            .iter()
            .position(|n| *n == "compare_w")
            .unwrap()]
        .squared_norm();
        let mut cfg = TrainConfig::new(50, 3);
        cfg.dev_fraction = 0.0;
        train(&mut m, &data, &cfg).unwrap();
        let after = m.params()[m
            .param_names()
            .iter()
            .position(|n| *n == "compare_w")
            .unwrap()]
        .squared_norm();
        assert!(after < 0.1 * before, "{before} -> {after}");
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<_> = (0..40)
            .map(|i| {
                pair(
                    Relation::from_index(i % 3).unwrap(),
                    &format!("( a{} b )", i % 5),
                    "c",
                )
            })
            .collect();
        let run = || {
            let mut c = small_model(&data, 1e-3).config().clone();
            c.embedding_transform = true;
            c.comparison_dropout = 0.1;
            c.transform_dropout = 0.25;
            let mut m = PairModel::new(c, 1).unwrap();
            let mut cfg = TrainConfig::new(5, 9);
            cfg.eval_every = 2;
            let out = train(&mut m, &data, &cfg).unwrap();
            (
                m.flat_params()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
                out.log,
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_unknown_tokens_and_empty_data() {
        let data = [pair(Cover, "a", "b")];
        let mut m = small_model(&data, 0.0);
        assert!(matches!(
            train(&mut m, &[], &TrainConfig::new(1, 0)),
            Err(Error::InvalidArgument(_))
        ));
        let other = [pair(Cover, "a", "zebra")];
        assert!(matches!(
            train(&mut m, &other, &TrainConfig::new(1, 0)),
            Err(Error::UnknownToken(_))
        ));
    }

    #[test]
    fn majority_baseline_counts_most_frequent() {
        let data = [
            pair(Cover, "a", "b"),
            pair(Cover, "a", "c"),
            pair(Negation, "b", "c"),
        ];
        assert_abs_diff_eq!(majority_baseline(&data), 2.0 / 3.0, epsilon = 1e-12);
    }
}
