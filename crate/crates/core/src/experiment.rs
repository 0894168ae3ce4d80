//! Canned experiments: generate a dataset, train one or more model variants,
//! and report test metrics averaged over independent seeded runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPair;
use crate::error::{Error, Result};
use crate::model::{Architecture, ComparisonKind, ModelConfig, PairModel};
use crate::prop::{build_prop_dataset, PropConfig};
use crate::quant::{build_quant_dataset, Lexicon, LexiconSpec, QuantConfig};
use crate::rng;
use crate::train::{
    evaluate, evaluate_by_bin, train, vocabulary, BinReport, Metrics, TrainConfig, TrainLog,
};
use crate::worlds::{all_statements, generate_world, split_and_prune};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Join,
    Recursion,
    Quantifier,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Join => "join",
            Recipe::Recursion => "recursion",
            Recipe::Quantifier => "quantifier",
        }
    }

    pub fn embedding_dim(self) -> usize {
        match self {
            Recipe::Join => 15,
            Recipe::Recursion | Recipe::Quantifier => 25,
        }
    }

    pub fn epochs(self) -> usize {
        match self {
            Recipe::Join => 500,
            Recipe::Recursion | Recipe::Quantifier => 200,
        }
    }

    /// Model variants the recipe compares.
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Recipe::Join => vec![Variant::LeafNn, Variant::LeafNtn],
            Recipe::Recursion | Recipe::Quantifier => {
                vec![Variant::Sum, Variant::Rnn, Variant::Rntn]
            }
        }
    }

    pub fn default_l2(self, variant: Variant) -> f64 {
        match (self, variant) {
            (Recipe::Recursion, _) => 0.0001,
            (_, Variant::Rntn) => 0.0003,
            (_, Variant::LeafNn) => 0.0005,
            _ => 0.001,
        }
    }

    /// Join data is not held out for early stopping: every training
    /// statement may be a premise some test statement depends on.
    pub fn dev_fraction(self) -> f64 {
        match self {
            Recipe::Join => 0.0,
            Recipe::Recursion | Recipe::Quantifier => 0.1,
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "join" => Ok(Recipe::Join),
            "recursion" => Ok(Recipe::Recursion),
            "quantifier" => Ok(Recipe::Quantifier),
            _ => Err(Error::InvalidArgument(format!("unknown recipe {s:?}"))),
        }
    }
}

/// A trainable model family. The leaf variants have no composition layer and
/// only see single-word expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Sum,
    Rnn,
    Rntn,
    LeafNn,
    LeafNtn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Sum => "sum",
            Variant::Rnn => "rnn",
            Variant::Rntn => "rntn",
            Variant::LeafNn => "leaf-nn",
            Variant::LeafNtn => "leaf-ntn",
        }
    }

    pub fn model_config(self, dim: usize, vocabulary: Vec<String>) -> ModelConfig {
        match self {
            Variant::Sum => ModelConfig::matched(Architecture::SumNn, dim, vocabulary),
            Variant::Rnn => ModelConfig::matched(Architecture::TreeRnn, dim, vocabulary),
            Variant::Rntn => ModelConfig::matched(Architecture::TreeRntn, dim, vocabulary),
            Variant::LeafNn => {
                ModelConfig::new(Architecture::SumNn, dim, ComparisonKind::Nn, vocabulary)
            }
            Variant::LeafNtn => {
                ModelConfig::new(Architecture::SumNn, dim, ComparisonKind::Ntn, vocabulary)
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Variant::Sum),
            "rnn" => Ok(Variant::Rnn),
            "rntn" => Ok(Variant::Rntn),
            "leaf-nn" | "nn" => Ok(Variant::LeafNn),
            "leaf-ntn" | "ntn" => Ok(Variant::LeafNtn),
            _ => Err(Error::InvalidArgument(format!("unknown model {s:?}"))),
        }
    }
}

/// Train/test data for one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentData {
    pub train: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
    /// Test pairs keyed by size (recursion recipe only).
    pub test_by_bin: BTreeMap<usize, Vec<LabeledPair>>,
    pub train_cutoff: Option<usize>,
}

impl ExperimentData {
    pub fn from_bins(
        train: Vec<LabeledPair>,
        bins: BTreeMap<usize, Vec<LabeledPair>>,
        cutoff: usize,
    ) -> Self {
        ExperimentData {
            train,
            test: bins.values().flatten().cloned().collect(),
            test_by_bin: bins,
            train_cutoff: Some(cutoff),
        }
    }

    /// Keeps a seeded random subset of at most `limit` training pairs.
    pub fn limit_train(&mut self, limit: usize, seed: u64) {
        if self.train.len() > limit {
            self.train.shuffle(&mut rng::sub_rng(seed, "train-subset"));
            self.train.truncate(limit);
        }
    }

    /// Likewise for the test side, per bin when bins are present.
    pub fn limit_test(&mut self, limit: usize, seed: u64) {
        let mut r = rng::sub_rng(seed, "test-subset");
        if self.test_by_bin.is_empty() {
            if self.test.len() > limit {
                self.test.shuffle(&mut r);
                self.test.truncate(limit);
            }
            return;
        }
        for pairs in self.test_by_bin.values_mut() {
            if pairs.len() > limit {
                pairs.shuffle(&mut r);
                pairs.truncate(limit);
            }
        }
        self.test = self.test_by_bin.values().flatten().cloned().collect();
    }
}

/// Generator settings for each recipe, with full-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    pub join_terms: usize,
    pub join_domain: u32,
    pub prop: PropConfig,
    pub quant: QuantConfig,
    /// Quantifier lexicon; the built-in one when absent.
    pub lexicon: Option<LexiconSpec>,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            join_terms: 80,
            join_domain: 7,
            prop: PropConfig::default(),
            quant: QuantConfig::default(),
            lexicon: None,
        }
    }
}

pub fn generate_data(recipe: Recipe, settings: &DataSettings, seed: u64) -> Result<ExperimentData> {
    match recipe {
        Recipe::Join => {
            let world = generate_world(settings.join_terms, settings.join_domain, seed)?;
            let split = split_and_prune(&all_statements(&world), seed)?;
            Ok(ExperimentData {
                train: split.train.iter().map(|s| s.to_pair()).collect(),
                test: split.test.iter().map(|s| s.to_pair()).collect(),
                ..ExperimentData::default()
            })
        }
        Recipe::Recursion => {
            let cfg = PropConfig {
                seed,
                ..settings.prop.clone()
            };
            let ds = build_prop_dataset(&cfg)?;
            Ok(ExperimentData::from_bins(
                ds.train,
                ds.test_by_bin,
                cfg.train_cutoff,
            ))
        }
        Recipe::Quantifier => {
            let cfg = QuantConfig {
                seed,
                ..settings.quant.clone()
            };
            let lexicon = match &settings.lexicon {
                Some(spec) => Lexicon::from_spec(spec.clone())?,
                None => Lexicon::default_lexicon(),
            };
            let ds = build_quant_dataset(&lexicon, &cfg)?;
            Ok(ExperimentData {
                train: ds.train,
                test: ds.test,
                ..ExperimentData::default()
            })
        }
    }
}

/// What to train on a given dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub variant: Variant,
    pub embedding_dim: usize,
    pub l2_lambda: f64,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn recipe_default(recipe: Recipe, variant: Variant, seed: u64) -> RunSpec {
        RunSpec {
            variant,
            embedding_dim: recipe.embedding_dim(),
            l2_lambda: recipe.default_l2(variant),
            train: TrainConfig {
                dev_fraction: recipe.dev_fraction(),
                ..TrainConfig::new(recipe.epochs(), seed)
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
    pub bins: Option<BinReport>,
    pub log: TrainLog,
}

/// Builds, trains and evaluates one model. The vocabulary covers both sides
/// so test-only tokens map to untrained embeddings instead of failing.
pub fn run_once(spec: &RunSpec, data: &ExperimentData) -> Result<(PairModel, RunResult)> {
    let vocab = vocabulary(data.train.iter().chain(&data.test));
    let mut cfg = spec.variant.model_config(spec.embedding_dim, vocab);
    cfg.l2_lambda = spec.l2_lambda;
    let mut model = PairModel::new(cfg, rng::derive_seed(spec.train.seed, spec.variant.name()))?;
    let outcome = train(&mut model, &data.train, &spec.train)?;
    let bins = if data.test_by_bin.is_empty() {
        None
    } else {
        Some(evaluate_by_bin(
            &model,
            &data.test_by_bin,
            data.train_cutoff,
        )?)
    };
    let result = RunResult {
        variant: spec.variant,
        seed: spec.train.seed,
        train_metrics: evaluate(&model, &data.train)?,
        test_metrics: evaluate(&model, &data.test)?,
        bins,
        log: outcome.log,
    };
    Ok((model, result))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub mean_test_accuracy: f64,
    pub mean_test_macro_f1: f64,
    pub mean_train_accuracy: f64,
    /// Largest minus smallest test accuracy across runs.
    pub test_accuracy_spread: f64,
    /// Mean accuracy per size bin across runs, when bins exist.
    pub mean_bin_accuracy: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub recipe: Recipe,
    pub options: ExperimentOptions,
    pub runs: Vec<RunResult>,
    pub summaries: Vec<VariantSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub embedding_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub train_limit: Option<usize>,
    /// Per-bin limit for binned tests, total limit otherwise.
    pub test_limit: Option<usize>,
    pub l2_lambda: Option<f64>,
    pub data: DataSettings,
}

impl ExperimentOptions {
    /// Five seeds, every variant of the recipe, recipe defaults.
    pub fn for_recipe(recipe: Recipe) -> ExperimentOptions {
        ExperimentOptions {
            seeds: (1..=5).collect(),
            variants: recipe.variants(),
            embedding_dim: None,
            epochs: None,
            patience: None,
            train_limit: None,
            test_limit: None,
            l2_lambda: None,
            data: DataSettings::default(),
        }
    }

    pub fn run_spec(&self, recipe: Recipe, variant: Variant, seed: u64) -> RunSpec {
        let mut spec = RunSpec::recipe_default(recipe, variant, seed);
        if let Some(d) = self.embedding_dim {
            spec.embedding_dim = d;
        }
        if let Some(e) = self.epochs {
            spec.train.epochs = e;
        }
        if let Some(p) = self.patience {
            spec.train.patience = p;
        }
        if let Some(l) = self.l2_lambda {
            spec.l2_lambda = l;
        }
        spec
    }
}

/// One dataset per seed, every requested variant trained on it.
pub fn run_experiment(recipe: Recipe, options: &ExperimentOptions) -> Result<ExperimentReport> {
    if options.seeds.is_empty() || options.variants.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one seed and one model".into(),
        ));
    }
    let mut runs = Vec::new();
    for &seed in &options.seeds {
        let mut data = generate_data(recipe, &options.data, seed)?;
        if let Some(limit) = options.train_limit {
            data.limit_train(limit, seed);
        }
        if let Some(limit) = options.test_limit {
            data.limit_test(limit, seed);
        }
        for &variant in &options.variants {
            let (_, result) = run_once(&options.run_spec(recipe, variant, seed), &data)?;
            runs.push(result);
        }
    }
    let summaries = summarize(&runs, &options.variants);
    Ok(ExperimentReport {
        recipe,
        options: options.clone(),
        runs,
        summaries,
    })
}

/// Partitions a fixed pair set into `k` folds and trains on each complement.
pub fn run_kfold(
    pairs: &[LabeledPair],
    k: usize,
    recipe: Recipe,
    options: &ExperimentOptions,
    seed: u64,
) -> Result<ExperimentReport> {
    if k < 2 || pairs.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{k} folds over {} pairs",
            pairs.len()
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut rng::sub_rng(seed, "folds"));
    let mut runs = Vec::new();
    for fold in 0..k {
        let (mut train_side, mut test_side) = (Vec::new(), Vec::new());
        for (i, p) in shuffled.iter().enumerate() {
            if i % k == fold {
                test_side.push(p.clone())
            } else {
                train_side.push(p.clone())
            }
        }
        let data = ExperimentData {
            train: train_side,
            test: test_side,
            ..ExperimentData::default()
        };
        let fold_seed = rng::derive_seed(seed, &format!("fold-{fold}"));
        for &variant in &options.variants {
            let (_, result) = run_once(&options.run_spec(recipe, variant, fold_seed), &data)?;
            runs.push(result);
        }
    }
    let summaries = summarize(&runs, &options.variants);
    Ok(ExperimentReport {
        recipe,
        options: options.clone(),
        runs,
        summaries,
    })
}

fn summarize(runs: &[RunResult], variants: &[Variant]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|&variant| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == variant).collect();
            let n = mine.len() as f64;
            let mean = |f: &dyn Fn(&RunResult) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / n;
            let accs: Vec<f64> = mine.iter().map(|r| r.test_metrics.accuracy).collect();
            let spread = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - accs.iter().copied().fold(f64::INFINITY, f64::min);
            let mut bin_sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for r in &mine {
                for b in r.bins.iter().flat_map(|b| &b.bins) {
                    let e = bin_sums.entry(b.bin).or_default();
                    e.0 += b.metrics.accuracy;
                    e.1 += 1;
                }
            }
            VariantSummary {
                variant,
                mean_test_accuracy: mean(&|r| r.test_metrics.accuracy),
                mean_test_macro_f1: mean(&|r| r.test_metrics.macro_f1),
                mean_train_accuracy: mean(&|r| r.train_metrics.accuracy),
                test_accuracy_spread: spread,
                mean_bin_accuracy: bin_sums
                    .into_iter()
                    .map(|(b, (s, c))| (b, s / c as f64))
                    .collect(),
            }
        })
        .collect()
}
