use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use natlog::dataset::{read_pairs, write_json, write_pairs, LabeledPair};
use natlog::experiment::{run_experiment, run_kfold, ExperimentOptions, Recipe, RunSpec, Variant};
use natlog::model::{
    gradient_check, random_tree, randomize_params, Architecture, Checkpoint, ComparisonKind,
    ModelConfig, PairModel,
};
use natlog::prop::{build_prop_dataset, pair_bin, PropConfig};
use natlog::quant::{build_quant_dataset, Lexicon, QuantConfig, DEFAULT_MAX_ENTITIES};
use natlog::relation::{derive_join_table, JoinTable};
use natlog::rng;
use natlog::train::{evaluate, evaluate_by_bin, train, vocabulary};
use natlog::worlds::{all_statements, generate_world, split_and_prune};
use natlog::{Error, Relation, Result};

/// Reference join table in relation codes, rows and columns in the order
/// `= < > ^ | v #`.
const REFERENCE_JOIN_TABLE: &str = "\
= < > ^ | v #
< < . | | . .
> . > v . v .
^ v | = > < #
| . | < . < .
v v . > > . .
# . . # . . .
";

/// Gradient checks pass below this max relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "natlog",
    version,
    about = "Natural-logic inference datasets and tree-structured pair classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive the join table by set enumeration and compare with the reference.
    DeriveJoinTable {
        #[arg(long, default_value_t = 5)]
        max_domain: u32,
    },
    /// Relation statements over a random set world, split and pruned.
    GenSets {
        #[arg(long, default_value_t = 80)]
        terms: usize,
        #[arg(long, default_value_t = 7)]
        domain: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propositional formula pairs binned by operator count.
    GenProp {
        #[arg(long, default_value_t = 12)]
        max_ops: usize,
        #[arg(long, default_value_t = 4)]
        train_cutoff: usize,
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        #[arg(long, default_value_t = 60_000)]
        target_train: usize,
        #[arg(long, default_value_t = 21_000)]
        target_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantified sentence pairs over a lexicon.
    GenQuant {
        /// Lexicon JSON; the built-in lexicon when omitted.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 27_000)]
        target_train: usize,
        #[arg(long, default_value_t = 7_000)]
        target_test: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_ENTITIES)]
        max_entities: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on DATA/train.tsv and write a checkpoint.
    Train {
        #[arg(long)]
        recipe: Recipe,
        /// sum, rnn, rntn, or for leaf-only data nn, ntn.
        #[arg(long)]
        model: Variant,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        /// Train on a seeded random subset of this many pairs.
        #[arg(long)]
        train_limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-size CSV (propositional data only).
        #[arg(long)]
        by_size: bool,
        #[arg(long)]
        train_cutoff: Option<usize>,
    },
    /// Finite-difference check of a randomly initialized model's gradient.
    Gradcheck {
        #[arg(long, default_value = "rntn")]
        model: Variant,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        /// Override the comparison layer (nn or ntn).
        #[arg(long)]
        comparison: Option<String>,
        #[arg(long)]
        transform: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate, train and evaluate a recipe over several seeds.
    Experiment {
        #[arg(long)]
        recipe: Recipe,
        #[arg(long, value_delimiter = ',')]
        models: Vec<Variant>,
        #[arg(long, default_value_t = 5)]
        runs: u64,
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        train_limit: Option<usize>,
        #[arg(long)]
        test_limit: Option<usize>,
        /// k-fold over a fixed dataset file instead of fresh data per seed.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("natlog: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::DeriveJoinTable { max_domain } => {
            let table = derive_join_table(max_domain)?;
            print!("{}", table.render());
            let reference = JoinTable::from_codes(REFERENCE_JOIN_TABLE)?;
            let mismatches: Vec<String> = Relation::ALL
                .iter()
                .flat_map(|&a| Relation::ALL.iter().map(move |&b| (a, b)))
                .filter(|&(a, b)| table.get(a, b) != reference.get(a, b))
                .map(|(a, b)| format!("({},{})", a.code(), b.code()))
                .collect();
            if mismatches.is_empty() {
                println!("matches reference: 49/49 cells");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "natlog: {} cells differ from the reference: {}",
                    mismatches.len(),
                    mismatches.join(" ")
                );
                Ok(ExitCode::FAILURE)
            }
        }
        Command::GenSets {
            terms,
            domain,
            seed,
            out,
        } => {
            let world = generate_world(terms, domain, seed)?;
            let split = split_and_prune(&all_statements(&world), seed)?;
            let pairs = |v: &[natlog::worlds::RelationalStatement]| {
                v.iter().map(|s| s.to_pair()).collect::<Vec<_>>()
            };
            std::fs::create_dir_all(&out)?;
            write_pairs(&out.join("train.tsv"), &pairs(&split.train))?;
            write_pairs(&out.join("test.tsv"), &pairs(&split.test))?;
            write_pairs(&out.join("dropped.tsv"), &pairs(&split.dropped))?;
            let extensions: BTreeMap<String, String> = world
                .terms
                .iter()
                .map(|t| {
                    (
                        t.id.clone(),
                        format!("{:0w$b}", t.extension, w = domain as usize),
                    )
                })
                .collect();
            write_json(
                &out.join("meta.json"),
                &json!({
                    "generator": "sets",
                    "rng": rng::RNG_NAME,
                    "seed": seed,
                    "num_terms": terms,
                    "domain_size": domain,
                    "counts": {"train": split.train.len(), "test": split.test.len(), "dropped": split.dropped.len()},
                    "extensions": extensions,
                }),
            )?;
            println!(
                "train {} test {} dropped {}",
                split.train.len(),
                split.test.len(),
                split.dropped.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::GenProp {
            max_ops,
            train_cutoff,
            test_frac,
            target_train,
            target_test,
            seed,
            out,
        } => {
            let config = PropConfig {
                max_ops,
                train_cutoff,
                test_fraction: test_frac,
                target_train,
                target_test,
                seed,
                ..PropConfig::default()
            };
            let ds = build_prop_dataset(&config)?;
            std::fs::create_dir_all(&out)?;
            write_pairs(&out.join("train.tsv"), &ds.train)?;
            let test: Vec<LabeledPair> = ds.test_by_bin.values().flatten().cloned().collect();
            write_pairs(&out.join("test.tsv"), &test)?;
            let bins: BTreeMap<usize, usize> =
                ds.test_by_bin.iter().map(|(b, v)| (*b, v.len())).collect();
            write_json(
                &out.join("meta.json"),
                &json!({
                    "generator": "prop",
                    "rng": rng::RNG_NAME,
                    "config": config,
                    "counts": {"train": ds.train.len(), "test": test.len()},
                    "test_bins": bins,
                }),
            )?;
            println!("train {} test {}", ds.train.len(), test.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::GenQuant {
            lexicon,
            target_train,
            target_test,
            max_entities,
            seed,
            out,
        } => {
            let lex = match &lexicon {
                Some(path) => Lexicon::load(path)?,
                None => Lexicon::default_lexicon(),
            };
            let config = QuantConfig {
                target_train,
                target_test,
                max_entities,
                seed,
                ..QuantConfig::default()
            };
            let ds = build_quant_dataset(&lex, &config)?;
            std::fs::create_dir_all(&out)?;
            write_pairs(&out.join("train.tsv"), &ds.train)?;
            write_pairs(&out.join("test.tsv"), &ds.test)?;
            write_json(&out.join("lexicon.json"), lex.spec())?;
            write_json(
                &out.join("meta.json"),
                &json!({
                    "generator": "quant",
                    "rng": rng::RNG_NAME,
                    "config": config,
                    "lexicon": lexicon.map(|p| p.display().to_string()),
                    "counts": {
                        "train": ds.train.len(),
                        "test": ds.test.len(),
                        "train_sentences": ds.train_sentences.len(),
                        "test_sentences": ds.test_sentences.len(),
                    },
                    "labels": ds.label_counts,
                }),
            )?;
            println!("train {} test {}", ds.train.len(), ds.test.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            recipe,
            model,
            dim,
            l2,
            epochs,
            patience,
            train_limit,
            seed,
            data,
            out,
            log,
        } => {
            let mut pairs = read_pairs(&data.join("train.tsv"))?;
            if let Some(limit) = train_limit {
                let mut d = natlog::experiment::ExperimentData {
                    train: pairs,
                    ..Default::default()
                };
                d.limit_train(limit, seed);
                pairs = d.train;
            }
            let mut spec = RunSpec::recipe_default(recipe, model, seed);
            if let Some(d) = dim {
                spec.embedding_dim = d;
            }
            if let Some(l) = l2 {
                spec.l2_lambda = l;
            }
            if let Some(e) = epochs {
                spec.train.epochs = e;
            }
            if let Some(p) = patience {
                spec.train.patience = p;
            }
            // test tokens get (untrained) rows too, so eval never fails on them
            let mut vocab_source = pairs.clone();
            let test_path = data.join("test.tsv");
            if test_path.exists() {
                vocab_source.extend(read_pairs(&test_path)?);
            }
            let mut config = model.model_config(spec.embedding_dim, vocabulary(&vocab_source));
            config.l2_lambda = spec.l2_lambda;
            let mut m = PairModel::new(config, rng::derive_seed(seed, model.name()))?;
            let outcome = train(&mut m, &pairs, &spec.train)?;
            Checkpoint::from_model(&m, seed, Some(outcome.optimizer)).save(&out)?;
            if let Some(path) = log {
                write_json(&path, &outcome.log)?;
            }
            let metrics = evaluate(&m, &pairs)?;
            println!(
                "epochs {} best {} train accuracy {:.4} macro F1 {:.4}",
                outcome.log.epochs.len(),
                outcome.log.best_epoch,
                metrics.accuracy,
                metrics.macro_f1
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            ckpt,
            data,
            by_size,
            train_cutoff,
        } => {
            let model = Checkpoint::load(&ckpt)?.to_model()?;
            let pairs = read_pairs(&data)?;
            if by_size {
                let mut bins: BTreeMap<usize, Vec<LabeledPair>> = BTreeMap::new();
                for p in pairs {
                    bins.entry(pair_bin(&p)?).or_default().push(p);
                }
                print!("{}", evaluate_by_bin(&model, &bins, train_cutoff)?.to_csv());
            } else {
                let m = evaluate(&model, &pairs)?;
                println!("{}", serde_json::to_string_pretty(&m)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            model,
            dim,
            comparison,
            transform,
            seed,
        } => {
            let err = gradcheck(model, dim, comparison.as_deref(), transform, seed)?;
            println!("max relative error {err:.3e}");
            if err < GRADCHECK_TOLERANCE {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("natlog: gradient check failed: {err:.3e} >= {GRADCHECK_TOLERANCE:e}");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Experiment {
            recipe,
            models,
            runs,
            first_seed,
            epochs,
            dim,
            train_limit,
            test_limit,
            folds,
            data,
            out,
        } => {
            let mut options = ExperimentOptions::for_recipe(recipe);
            options.seeds = (first_seed..first_seed + runs).collect();
            if !models.is_empty() {
                options.variants = models;
            }
            options.epochs = epochs;
            options.embedding_dim = dim;
            options.train_limit = train_limit;
            options.test_limit = test_limit;
            let report = match (folds, data) {
                (Some(k), Some(path)) => {
                    run_kfold(&read_pairs(&path)?, k, recipe, &options, first_seed)?
                }
                (Some(_), None) => {
                    return Err(Error::InvalidArgument("--folds needs --data".into()))
                }
                (None, _) => run_experiment(recipe, &options)?,
            };
            for s in &report.summaries {
                println!(
                    "{:<9} test accuracy {:.4} macro F1 {:.4} train accuracy {:.4} spread {:.4}",
                    s.variant.name(),
                    s.mean_test_accuracy,
                    s.mean_test_macro_f1,
                    s.mean_train_accuracy,
                    s.test_accuracy_spread
                );
            }
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn gradcheck(
    variant: Variant,
    dim: usize,
    comparison: Option<&str>,
    transform: bool,
    seed: u64,
) -> Result<f64> {
    let vocab: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let mut config: ModelConfig = variant.model_config(dim, vocab.clone());
    config.comparison_dim = 8;
    config.l2_lambda = 0.01;
    config.embedding_transform = transform;
    if let Some(c) = comparison {
        config.comparison = match c {
            "nn" => ComparisonKind::Nn,
            "ntn" => ComparisonKind::Ntn,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown comparison {other:?}"
                )))
            }
        };
    }
    let leaves = if config.architecture == Architecture::SumNn
        && matches!(variant, Variant::LeafNn | Variant::LeafNtn)
    {
        1
    } else {
        4
    };
    let mut model = PairModel::new(config, seed)?;
    randomize_params(&mut model, 0.5, seed);
    let mut r = rng::sub_rng(seed, "gradcheck-trees");
    let e1 = random_tree(&vocab, leaves, &mut r);
    let e2 = random_tree(&vocab, leaves.max(2) - 1, &mut r);
    gradient_check(&model, &e1, &e2, Relation::Cover, None, 1e-5)
}
