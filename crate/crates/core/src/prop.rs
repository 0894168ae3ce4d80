//! Propositional formulas over six variables, labeled by the relation between
//! their sets of satisfying valuations.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPair;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::relation::{classify_masks, Relation};
use crate::rng::{self, Rng};

pub const NUM_VARS: u8 = 6;
pub const NUM_VALUATIONS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    /// Variable index in `1..=6`.
    Var(u8),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

/// Truth assignment to `p1..p6`; bit `i - 1` holds `p_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Valuation(pub u8);

impl Valuation {
    pub fn all() -> impl Iterator<Item = Valuation> {
        (0..NUM_VALUATIONS as u8).map(Valuation)
    }

    pub fn get(self, var: u8) -> bool {
        self.0 >> (var - 1) & 1 == 1
    }
}

/// Set of valuations as a 64-bit mask; bit `v` is valuation `Valuation(v)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SatSet(pub u64);

impl SatSet {
    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_full(self) -> bool {
        self.0 == u64::MAX
    }

    pub fn is_degenerate(self) -> bool {
        self.is_empty() || self.is_full()
    }
}

/// Mask of valuations in which variable `var` is true.
fn var_mask(var: u8) -> u64 {
    (0..64u64)
        .filter(|v| v >> (var - 1) & 1 == 1)
        .fold(0, |m, v| m | 1 << v)
}

impl Formula {
    pub fn var(i: u8) -> Formula {
        assert!((1..=NUM_VARS).contains(&i), "variable p{i} out of range");
        Formula::Var(i)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(l: Formula, r: Formula) -> Formula {
        Formula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Formula, r: Formula) -> Formula {
        Formula::Or(Box::new(l), Box::new(r))
    }

    pub fn operator_count(&self) -> usize {
        match self {
            Formula::Var(_) => 0,
            Formula::Not(f) => 1 + f.operator_count(),
            Formula::And(l, r) | Formula::Or(l, r) => 1 + l.operator_count() + r.operator_count(),
        }
    }

    /// Bitmask of variables used; bit `i - 1` for `p_i`.
    pub fn variables(&self) -> u8 {
        match self {
            Formula::Var(i) => 1 << (i - 1),
            Formula::Not(f) => f.variables(),
            Formula::And(l, r) | Formula::Or(l, r) => l.variables() | r.variables(),
        }
    }

    pub fn eval(&self, v: Valuation) -> bool {
        match self {
            Formula::Var(i) => v.get(*i),
            Formula::Not(f) => !f.eval(v),
            Formula::And(l, r) => l.eval(v) && r.eval(v),
            Formula::Or(l, r) => l.eval(v) || r.eval(v),
        }
    }

    /// Satisfying valuations, computed bit-parallel over all 64 at once.
    pub fn sat_set(&self) -> SatSet {
        SatSet(self.sat_mask())
    }

    fn sat_mask(&self) -> u64 {
        match self {
            Formula::Var(i) => var_mask(*i),
            Formula::Not(f) => !f.sat_mask(),
            Formula::And(l, r) => l.sat_mask() & r.sat_mask(),
            Formula::Or(l, r) => l.sat_mask() | r.sat_mask(),
        }
    }

    /// Model input tree: `not φ` is `( not φ )`, `φ and ψ` is `( ( φ and ) ψ )`.
    pub fn to_expression(&self) -> Expression {
        match self {
            Formula::Var(i) => Expression::leaf(format!("p{i}")),
            Formula::Not(f) => Expression::branch(Expression::leaf("not"), f.to_expression()),
            Formula::And(l, r) => Expression::branch(
                Expression::branch(l.to_expression(), Expression::leaf("and")),
                r.to_expression(),
            ),
            Formula::Or(l, r) => Expression::branch(
                Expression::branch(l.to_expression(), Expression::leaf("or")),
                r.to_expression(),
            ),
        }
    }

    /// Inverse of [`Formula::to_expression`].
    pub fn from_expression(e: &Expression) -> Result<Formula> {
        match e {
            Expression::Leaf(t) => parse_var(t),
            Expression::Branch(l, r) => match (l.as_ref(), r.as_ref()) {
                (Expression::Leaf(t), inner) if t == "not" => {
                    Ok(Formula::not(Formula::from_expression(inner)?))
                }
                (Expression::Branch(ll, op), rhs) => {
                    let (a, b) = (
                        Formula::from_expression(ll)?,
                        Formula::from_expression(rhs)?,
                    );
                    match op.as_ref() {
                        Expression::Leaf(t) if t == "and" => Ok(Formula::and(a, b)),
                        Expression::Leaf(t) if t == "or" => Ok(Formula::or(a, b)),
                        _ => Err(Error::Parse(format!("expected `and`/`or` in {e}"))),
                    }
                }
                _ => Err(Error::Parse(format!("not a formula tree: {e}"))),
            },
        }
    }
}

fn parse_var(t: &str) -> Result<Formula> {
    t.strip_prefix('p')
        .and_then(|n| n.parse::<u8>().ok())
        .filter(|i| (1..=NUM_VARS).contains(i))
        .map(Formula::Var)
        .ok_or_else(|| Error::Parse(format!("not a variable: {t:?}")))
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Var(i) => write!(f, "p{i}"),
            Formula::Not(x) => write!(f, "not {x}"),
            Formula::And(l, r) => write!(f, "({l} and {r})"),
            Formula::Or(l, r) => write!(f, "({l} or {r})"),
        }
    }
}

pub fn eval_formula(f: &Formula, v: Valuation) -> bool {
    f.eval(v)
}

pub fn sat_set(f: &Formula) -> SatSet {
    f.sat_set()
}

/// Relation between the satisfying sets, over all 64 valuations; `None` when
/// either formula is a tautology or a contradiction.
pub fn label_pair(f1: &Formula, f2: &Formula) -> Option<Relation> {
    classify_masks(f1.sat_set().0, f2.sat_set().0, 64)
}

/// Random formula with exactly `ops` operators over the variables in `vars`.
///
/// Each internal node is `not`, `and` or `or` with equal probability; binary
/// nodes split the remaining operators uniformly between their children.
pub fn random_formula(rng: &mut Rng, ops: usize, vars: &[u8]) -> Formula {
    if ops == 0 {
        return Formula::Var(*vars.choose(rng).expect("non-empty variable pool"));
    }
    match rng.gen_range(0..3) {
        0 => Formula::not(random_formula(rng, ops - 1, vars)),
        kind => {
            let left_ops = rng.gen_range(0..ops);
            let l = random_formula(rng, left_ops, vars);
            let r = random_formula(rng, ops - 1 - left_ops, vars);
            if kind == 1 {
                Formula::and(l, r)
            } else {
                Formula::or(l, r)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropConfig {
    pub max_ops: usize,
    pub train_cutoff: usize,
    pub test_fraction: f64,
    pub max_vars_per_pair: u32,
    pub target_train: usize,
    pub target_test: usize,
    pub seed: u64,
}

impl Default for PropConfig {
    fn default() -> Self {
        PropConfig {
            max_ops: 12,
            train_cutoff: 4,
            test_fraction: 0.2,
            max_vars_per_pair: 4,
            target_train: 60_000,
            target_test: 21_000,
            seed: 0,
        }
    }
}

impl PropConfig {
    fn validate(&self) -> Result<()> {
        if self.max_ops == 0 || self.train_cutoff == 0 || self.train_cutoff > self.max_ops {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= train_cutoff ({}) <= max_ops ({})",
                self.train_cutoff, self.max_ops
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if !(1..=u32::from(NUM_VARS)).contains(&self.max_vars_per_pair) {
            return Err(Error::InvalidArgument(format!(
                "max vars per pair {}",
                self.max_vars_per_pair
            )));
        }
        Ok(())
    }

    /// Pairs to generate per bin before the test sample is drawn.
    ///
    /// Bins up to the cutoff share the pool that yields the training target;
    /// larger bins split what is left of the test target evenly.
    pub fn bin_quotas(&self) -> (usize, BTreeMap<usize, usize>) {
        let small_pool = (self.target_train as f64 / (1.0 - self.test_fraction)).round() as usize;
        let small_test = (small_pool as f64 * self.test_fraction).round() as usize;
        let large_bins = self.max_ops - self.train_cutoff;
        let mut quotas = BTreeMap::new();
        if large_bins > 0 {
            let per_bin_test = self
                .target_test
                .saturating_sub(small_test)
                .div_ceil(large_bins);
            let per_bin = (per_bin_test as f64 / self.test_fraction).round() as usize;
            for bin in self.train_cutoff + 1..=self.max_ops {
                quotas.insert(bin, per_bin);
            }
        }
        (small_pool, quotas)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PropDataset {
    pub train: Vec<LabeledPair>,
    /// Held-out pairs keyed by the operator count of the larger formula.
    pub test_by_bin: BTreeMap<usize, Vec<LabeledPair>>,
}

impl PropDataset {
    pub fn test_len(&self) -> usize {
        self.test_by_bin.values().map(Vec::len).sum()
    }
}

/// Operator count of the larger formula of a pair, read from model trees.
pub fn pair_bin(pair: &LabeledPair) -> Result<usize> {
    let a = Formula::from_expression(&pair.left)?.operator_count();
    let b = Formula::from_expression(&pair.right)?.operator_count();
    Ok(a.max(b))
}

struct PairSampler {
    rng: Rng,
    max_vars: usize,
    seen: HashSet<(String, String)>,
}

impl PairSampler {
    /// Draws one labeled pair with the given operator counts, or `None` when it
    /// is a duplicate, degenerate, or uses too many variables.
    fn draw(&mut self, ops_left: usize, ops_right: usize) -> Option<(LabeledPair, usize)> {
        let mut pool: Vec<u8> = (1..=NUM_VARS).collect();
        pool.shuffle(&mut self.rng);
        pool.truncate(self.max_vars);
        let f1 = random_formula(&mut self.rng, ops_left, &pool);
        let f2 = random_formula(&mut self.rng, ops_right, &pool);
        if (f1.variables() | f2.variables()).count_ones() as usize > self.max_vars {
            return None;
        }
        let relation = label_pair(&f1, &f2)?;
        let (e1, e2) = (f1.to_expression(), f2.to_expression());
        let (s1, s2) = (e1.to_string(), e2.to_string());
        let key = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        if !self.seen.insert(key) {
            return None;
        }
        Some((LabeledPair::new(relation, e1, e2), ops_left.max(ops_right)))
    }
}

/// Attempts without a new pair before giving up on a quota.
const STALL_LIMIT: usize = 200_000;

/// Generates unique labeled pairs, bins them by the larger formula's operator
/// count, holds out a fraction of each bin for test, and keeps only bins up to
/// the cutoff for training.
pub fn build_prop_dataset(config: &PropConfig) -> Result<PropDataset> {
    config.validate()?;
    let (small_pool, large_quotas) = config.bin_quotas();
    let mut sampler = PairSampler {
        rng: rng::sub_rng(config.seed, "prop-pairs"),
        max_vars: config.max_vars_per_pair as usize,
        seen: HashSet::new(),
    };
    let mut bins: BTreeMap<usize, Vec<LabeledPair>> = BTreeMap::new();

    let cutoff = config.train_cutoff;
    let mut made = 0;
    let mut stalled = 0;
    while made < small_pool {
        let a = sampler.rng.gen_range(0..=cutoff);
        let b = sampler.rng.gen_range(0..=cutoff);
        if a.max(b) == 0 {
            continue;
        }
        match sampler.draw(a, b) {
            Some((pair, bin)) => {
                bins.entry(bin).or_default().push(pair);
                made += 1;
                stalled = 0;
            }
            None => {
                stalled += 1;
                if stalled > STALL_LIMIT {
                    return Err(Error::GenerationExhausted(format!(
                        "only {made} of {small_pool} unique pairs with at most {cutoff} operators"
                    )));
                }
            }
        }
    }

    for (&bin, &quota) in &large_quotas {
        let mut made = 0;
        let mut stalled = 0;
        while made < quota {
            let other = sampler.rng.gen_range(0..=bin);
            let (a, b) = if sampler.rng.gen_bool(0.5) {
                (bin, other)
            } else {
                (other, bin)
            };
            match sampler.draw(a, b) {
                Some((pair, _)) => {
                    bins.entry(bin).or_default().push(pair);
                    made += 1;
                    stalled = 0;
                }
                None => {
                    stalled += 1;
                    if stalled > STALL_LIMIT {
                        return Err(Error::GenerationExhausted(format!(
                            "bin {bin}: {made} of {quota}"
                        )));
                    }
                }
            }
        }
    }

    let mut split_rng = rng::sub_rng(config.seed, "prop-split");
    let mut dataset = PropDataset::default();
    for (bin, mut pairs) in bins {
        pairs.shuffle(&mut split_rng);
        let n_test = (pairs.len() as f64 * config.test_fraction).round() as usize;
        let rest = pairs.split_off(n_test);
        dataset.test_by_bin.insert(bin, pairs);
        if bin <= cutoff {
            dataset.train.extend(rest);
        }
    }
    dataset.train.shuffle(&mut split_rng);
    Ok(dataset)
}
