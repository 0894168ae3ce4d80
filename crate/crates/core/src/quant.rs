//! Quantified sentences `(Q N) P` with optional negation on the noun and the
//! predicate, labeled by enumerating small finite models.
//!
//! A pair's universe is every model, up to isomorphism, over the distinct
//! content words of the pair: a multiset of entity types, where a type records
//! which word extensions an entity belongs to. Every word extension is
//! non-empty and proper. Lexical relations constrain the aligned words of the
//! two sentences (first noun against second noun, first predicate against
//! second predicate); a word repeated anywhere in the pair denotes one set.
//!
//! Labels depend only on which of the four truth combinations of the two
//! sentences occur somewhere in the universe, so each structure (slot pattern
//! plus constraints) is enumerated once and yields the labels of all
//! 40 × 40 quantifier/negation frames at the same time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPair;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::relation::{Relation, SetCounts};
use crate::rng;
use crate::worlds::{deductive_closure, RelationalStatement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseQuantifier {
    Some,
    Most,
    All,
    Two,
    Three,
}

impl BaseQuantifier {
    pub const ALL: [BaseQuantifier; 5] = [
        BaseQuantifier::Some,
        BaseQuantifier::Most,
        BaseQuantifier::All,
        BaseQuantifier::Two,
        BaseQuantifier::Three,
    ];

    /// Truth given `|A ∩ B|` and `|A \ B|`. "most" is a strict majority.
    pub fn holds(self, inter: u32, diff: u32) -> bool {
        match self {
            BaseQuantifier::Some => inter > 0,
            BaseQuantifier::Most => inter > diff,
            BaseQuantifier::All => diff == 0,
            BaseQuantifier::Two => inter >= 2,
            BaseQuantifier::Three => inter >= 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quantifier {
    pub base: BaseQuantifier,
    pub negated: bool,
}

impl Quantifier {
    pub const COUNT: usize = 10;

    pub fn all() -> impl Iterator<Item = Quantifier> {
        [false, true].into_iter().flat_map(|negated| {
            BaseQuantifier::ALL
                .into_iter()
                .map(move |base| Quantifier { base, negated })
        })
    }

    pub fn index(self) -> usize {
        self.base as usize + if self.negated { 5 } else { 0 }
    }

    /// Dataset token; negated quantifiers are single tokens.
    pub fn token(self) -> &'static str {
        match (self.base, self.negated) {
            (BaseQuantifier::Some, false) => "some",
            (BaseQuantifier::Most, false) => "most",
            (BaseQuantifier::All, false) => "all",
            (BaseQuantifier::Two, false) => "two",
            (BaseQuantifier::Three, false) => "three",
            (BaseQuantifier::Some, true) => "no",
            (BaseQuantifier::Most, true) => "not_most",
            (BaseQuantifier::All, true) => "not_all",
            (BaseQuantifier::Two, true) => "less_than_two",
            (BaseQuantifier::Three, true) => "less_than_three",
        }
    }

    pub fn holds(self, inter: u32, diff: u32) -> bool {
        self.base.holds(inter, diff) != self.negated
    }

    pub fn negate(self) -> Quantifier {
        Quantifier {
            negated: !self.negated,
            ..self
        }
    }
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Quantifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quantifier::all()
            .find(|q| q.token() == s)
            .ok_or_else(|| Error::Parse(format!("unknown quantifier {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantSentence {
    pub quantifier: Quantifier,
    pub noun: String,
    pub noun_negated: bool,
    pub predicate: String,
    pub predicate_negated: bool,
}

impl QuantSentence {
    pub fn new(
        quantifier: Quantifier,
        noun: &str,
        noun_negated: bool,
        predicate: &str,
        predicate_negated: bool,
    ) -> Self {
        QuantSentence {
            quantifier,
            noun: noun.to_string(),
            noun_negated,
            predicate: predicate.to_string(),
            predicate_negated,
        }
    }

    /// `( ( q n ) p )`, with `( not w )` for a negated noun or predicate.
    pub fn to_expression(&self) -> Expression {
        let word = |w: &str, neg: bool| {
            if neg {
                Expression::branch(Expression::leaf("not"), Expression::leaf(w))
            } else {
                Expression::leaf(w)
            }
        };
        Expression::branch(
            Expression::branch(
                Expression::leaf(self.quantifier.token()),
                word(&self.noun, self.noun_negated),
            ),
            word(&self.predicate, self.predicate_negated),
        )
    }

    pub fn from_expression(e: &Expression) -> Result<QuantSentence> {
        fn word(e: &Expression) -> Result<(String, bool)> {
            match e {
                Expression::Leaf(w) => Ok((w.clone(), false)),
                Expression::Branch(l, r) => match (l.as_ref(), r.as_ref()) {
                    (Expression::Leaf(n), Expression::Leaf(w)) if n == "not" => {
                        Ok((w.clone(), true))
                    }
                    _ => Err(Error::Parse(format!(
                        "expected a word or ( not word ): {e}"
                    ))),
                },
            }
        }
        let Expression::Branch(np, pred) = e else {
            return Err(Error::Parse(format!("not a sentence: {e}")));
        };
        let Expression::Branch(q, noun) = np.as_ref() else {
            return Err(Error::Parse(format!("not a quantified noun phrase: {np}")));
        };
        let Expression::Leaf(q) = q.as_ref() else {
            return Err(Error::Parse(format!("expected a quantifier: {q}")));
        };
        let (noun, noun_negated) = word(noun)?;
        let (predicate, predicate_negated) = word(pred)?;
        Ok(QuantSentence {
            quantifier: q.parse()?,
            noun,
            noun_negated,
            predicate,
            predicate_negated,
        })
    }

    fn frame(&self) -> usize {
        frame_index(self.quantifier, self.noun_negated, self.predicate_negated)
    }
}

impl fmt::Display for QuantSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_expression())
    }
}

const FRAMES: usize = Quantifier::COUNT * 4;

fn frame_index(q: Quantifier, noun_negated: bool, predicate_negated: bool) -> usize {
    q.index() * 4 + usize::from(noun_negated) * 2 + usize::from(predicate_negated)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Noun,
    Verb,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexItem {
    pub word: String,
    pub category: Category,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexRelation {
    pub left: String,
    pub relation: Relation,
    pub right: String,
}

/// JSON form of a lexicon.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub items: Vec<LexItem>,
    pub relations: Vec<LexRelation>,
    /// Whether nouns may fill the predicate slot.
    #[serde(default = "default_true")]
    pub nouns_as_predicates: bool,
}

fn default_true() -> bool {
    true
}

impl LexiconSpec {
    pub fn default_spec() -> LexiconSpec {
        use Category::*;
        use Relation::*;
        let item = |w: &str, category| LexItem {
            word: w.to_string(),
            category,
        };
        let rel = |l: &str, relation, r: &str| LexRelation {
            left: l.to_string(),
            relation,
            right: r.to_string(),
        };
        LexiconSpec {
            items: vec![
                item("warthog", Noun),
                item("turtle", Noun),
                item("lizard", Noun),
                item("reptile", Noun),
                item("animal", Noun),
                item("swim", Verb),
                item("move", Verb),
                item("growl", Verb),
                item("bark", Verb),
            ],
            relations: vec![
                rel("turtle", ForwardEntailment, "reptile"),
                rel("lizard", ForwardEntailment, "reptile"),
                rel("reptile", ForwardEntailment, "animal"),
                rel("warthog", ForwardEntailment, "animal"),
                rel("warthog", Alternation, "reptile"),
                rel("turtle", Alternation, "lizard"),
                rel("swim", ForwardEntailment, "move"),
                rel("growl", Alternation, "swim"),
                rel("bark", Alternation, "swim"),
            ],
            nouns_as_predicates: true,
        }
    }
}

/// Content words with their pairwise relations closed under converse and join.
#[derive(Clone, Debug)]
pub struct Lexicon {
    spec: LexiconSpec,
    relations: HashMap<(String, String), Relation>,
}

impl Lexicon {
    pub fn from_spec(spec: LexiconSpec) -> Result<Lexicon> {
        let mut words = HashSet::new();
        for item in &spec.items {
            if item.word.is_empty() || item.word.contains(char::is_whitespace) || item.word == "not"
            {
                return Err(Error::InvalidArgument(format!("bad word {:?}", item.word)));
            }
            if Quantifier::from_str(&item.word).is_ok() || !words.insert(item.word.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate or reserved word {:?}",
                    item.word
                )));
            }
        }
        let facts: Vec<RelationalStatement> = spec
            .relations
            .iter()
            .map(|r| {
                if !words.contains(&r.left) || !words.contains(&r.right) {
                    Err(Error::InvalidArgument(format!(
                        "relation mentions unknown word: {} {}",
                        r.left, r.right
                    )))
                } else {
                    Ok(RelationalStatement::new(
                        r.left.clone(),
                        r.relation,
                        r.right.clone(),
                    ))
                }
            })
            .collect::<Result<_>>()?;
        let terms: Vec<String> = spec.items.iter().map(|i| i.word.clone()).collect();
        let closure = deductive_closure(&facts, &terms)?;
        let relations = closure
            .iter()
            .filter(|s| s.left != s.right)
            .map(|s| ((s.left, s.right), s.relation))
            .collect();
        Ok(Lexicon { spec, relations })
    }

    pub fn default_lexicon() -> Lexicon {
        Lexicon::from_spec(LexiconSpec::default_spec()).expect("default lexicon is consistent")
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        let spec: LexiconSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Lexicon::from_spec(spec)
    }

    pub fn spec(&self) -> &LexiconSpec {
        &self.spec
    }

    pub fn nouns(&self) -> Vec<&str> {
        self.words(Category::Noun)
    }

    pub fn verbs(&self) -> Vec<&str> {
        self.words(Category::Verb)
    }

    fn words(&self, category: Category) -> Vec<&str> {
        self.spec
            .items
            .iter()
            .filter(|i| i.category == category)
            .map(|i| i.word.as_str())
            .collect()
    }

    /// Words allowed in predicate position.
    pub fn predicates(&self) -> Vec<&str> {
        let mut out = self.verbs();
        if self.spec.nouns_as_predicates {
            out.extend(self.nouns());
        }
        out
    }

    /// Stipulated or derived relation between two distinct words.
    pub fn relation(&self, left: &str, right: &str) -> Option<Relation> {
        if left == right {
            return Some(Relation::Equivalence);
        }
        self.relations
            .get(&(left.to_string(), right.to_string()))
            .copied()
    }
}

/// Entity-type assignment of one finite model: `counts[t]` entities belong to
/// exactly the word extensions whose bits are set in `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniWorld {
    pub counts: Vec<u32>,
}

impl MiniWorld {
    /// Builds a world over `words` from each entity's membership list.
    pub fn from_entities(words: &[&str], entities: &[&[&str]]) -> MiniWorld {
        let mut counts = vec![0; 1 << words.len()];
        for memberships in entities {
            let t = words
                .iter()
                .enumerate()
                .filter(|(_, w)| memberships.contains(w))
                .fold(0usize, |t, (i, _)| t | 1 << i);
            counts[t] += 1;
        }
        MiniWorld { counts }
    }

    pub fn entity_count(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// `|A ∩ B|` and `|A \ B|` where A and B are the (possibly complemented)
    /// extensions of variables `a` and `b`.
    fn inter_diff(&self, a: usize, a_neg: bool, b: usize, b_neg: bool) -> (u32, u32) {
        let (mut inter, mut diff) = (0, 0);
        for (t, &c) in self.counts.iter().enumerate() {
            let in_a = (t >> a & 1 == 1) != a_neg;
            if in_a {
                if (t >> b & 1 == 1) != b_neg {
                    inter += c;
                } else {
                    diff += c;
                }
            }
        }
        (inter, diff)
    }
}

/// Truth of `s` in `w`, where `words[i]` names bit `i` of the entity types.
pub fn eval_sentence(s: &QuantSentence, words: &[&str], w: &MiniWorld) -> Result<bool> {
    let find = |word: &str| {
        words
            .iter()
            .position(|x| *x == word)
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    };
    let (a, b) = (find(&s.noun)?, find(&s.predicate)?);
    let (inter, diff) = w.inter_diff(a, s.noun_negated, b, s.predicate_negated);
    Ok(s.quantifier.holds(inter, diff))
}

/// Slot variables and constraints shared by every pair with the same word
/// pattern; the unit of model enumeration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Structure {
    /// Variables of first noun, first predicate, second noun, second predicate.
    slots: [u8; 4],
    vars: u8,
    constraints: Vec<(u8, u8, Relation)>,
}

/// Occurrence flags of the four truth combinations, bit 0: both true,
/// bit 1: only first, bit 2: only second, bit 3: neither.
type Cells = u8;

fn cells_to_label(cells: Cells) -> Option<Relation> {
    let bit = |i: u8| u64::from(cells >> i & 1);
    let (both, first, second, neither) = (bit(0), bit(1), bit(2), bit(3));
    SetCounts {
        x: both + first,
        y: both + second,
        both,
        domain: both + first + second + neither,
    }
    .classify()
}

struct LabelTable {
    cells: Vec<Cells>,
}

impl LabelTable {
    fn label(&self, f1: usize, f2: usize) -> Option<Relation> {
        cells_to_label(self.cells[f1 * FRAMES + f2])
    }
}

/// Frame truth bitmasks of both sentences for every model of a structure.
fn enumerate_models(structure: &Structure, max_entities: u32) -> HashSet<(u64, u64)> {
    let vars = structure.vars as usize;
    let types = 1usize << vars;
    let mut allowed: Vec<usize> = (0..types).collect();
    for &(a, b, r) in &structure.constraints {
        allowed.retain(|&t| type_allowed(t >> a & 1 == 1, t >> b & 1 == 1, r));
    }

    let mut seen = HashSet::new();
    let mut counts = vec![0u32; types];
    let mut world = MiniWorld { counts: Vec::new() };
    for n in 1..=max_entities {
        fill(&allowed, 0, n, &mut counts, &mut |counts| {
            if !valid_world(counts, n, vars, &structure.constraints) {
                return;
            }
            world.counts.clear();
            world.counts.extend_from_slice(counts);
            let s = &structure.slots;
            let m1 = frame_truths(&world, s[0] as usize, s[1] as usize);
            let m2 = frame_truths(&world, s[2] as usize, s[3] as usize);
            seen.insert((m1, m2));
        });
    }
    seen
}

fn type_allowed(a: bool, b: bool, r: Relation) -> bool {
    match r {
        Relation::Equivalence => a == b,
        Relation::ForwardEntailment => !a || b,
        Relation::ReverseEntailment => !b || a,
        Relation::Negation => a != b,
        Relation::Alternation => !(a && b),
        Relation::Cover => a || b,
        Relation::Independence => true,
    }
}

/// Calls `visit` with every way of placing `remaining` entities on
/// `allowed[from..]`.
fn fill(
    allowed: &[usize],
    from: usize,
    remaining: u32,
    counts: &mut [u32],
    visit: &mut impl FnMut(&[u32]),
) {
    if remaining == 0 {
        visit(counts);
        return;
    }
    if from == allowed.len() {
        return;
    }
    let t = allowed[from];
    if from + 1 == allowed.len() {
        counts[t] = remaining;
        visit(counts);
        counts[t] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        counts[t] = k;
        fill(allowed, from + 1, remaining - k, counts, visit);
    }
    counts[t] = 0;
}

fn valid_world(counts: &[u32], n: u32, vars: usize, constraints: &[(u8, u8, Relation)]) -> bool {
    let ext = |v: usize| -> u32 {
        counts
            .iter()
            .enumerate()
            .filter(|(t, _)| t >> v & 1 == 1)
            .map(|(_, c)| c)
            .sum()
    };
    for v in 0..vars {
        let size = ext(v);
        if size == 0 || size == n {
            return false;
        }
    }
    constraints.iter().all(|&(a, b, r)| {
        let both: u32 = counts
            .iter()
            .enumerate()
            .filter(|(t, _)| t >> a & 1 == 1 && t >> b & 1 == 1)
            .map(|(_, c)| c)
            .sum();
        let counts = SetCounts {
            x: u64::from(ext(a as usize)),
            y: u64::from(ext(b as usize)),
            both: u64::from(both),
            domain: u64::from(n),
        };
        counts.classify() == Some(r)
    })
}

/// Bit `frame_index(q, nn, pn)` set iff `(q N) P` holds with the given negations.
fn frame_truths(world: &MiniWorld, noun: usize, pred: usize) -> u64 {
    let mut mask = 0u64;
    for nn in [false, true] {
        for pn in [false, true] {
            let (inter, diff) = world.inter_diff(noun, nn, pred, pn);
            for q in Quantifier::all() {
                if q.holds(inter, diff) {
                    mask |= 1 << frame_index(q, nn, pn);
                }
            }
        }
    }
    mask
}

fn build_table(structure: &Structure, max_entities: u32) -> LabelTable {
    let models = enumerate_models(structure, max_entities);
    let mut cells = vec![0u8; FRAMES * FRAMES];
    for (m1, m2) in models {
        for f1 in 0..FRAMES {
            let t1 = m1 >> f1 & 1 == 1;
            for f2 in 0..FRAMES {
                let t2 = m2 >> f2 & 1 == 1;
                let cell = match (t1, t2) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                cells[f1 * FRAMES + f2] |= 1 << cell;
            }
        }
    }
    LabelTable { cells }
}

/// Gold labeler with per-structure caching.
pub struct QuantLabeler {
    lexicon: Lexicon,
    max_entities: u32,
    tables: HashMap<Structure, Arc<LabelTable>>,
}

/// Entity bound used for gold labels unless overridden. Smaller bounds miss
/// witnesses: `(three N) N` against `(three (not N)) (not N)` alone needs six
/// entities, and chains of `most` with counting quantifiers need up to ten.
/// With the default lexicon every label is unchanged from 11 through 15.
pub const DEFAULT_MAX_ENTITIES: u32 = 11;

impl QuantLabeler {
    pub fn new(lexicon: Lexicon, max_entities: u32) -> Result<Self> {
        if max_entities < 4 {
            return Err(Error::InvalidArgument(format!(
                "max_entities {max_entities} below 4"
            )));
        }
        Ok(QuantLabeler {
            lexicon,
            max_entities,
            tables: HashMap::new(),
        })
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn max_entities(&self) -> u32 {
        self.max_entities
    }

    /// Number of distinct structures enumerated so far.
    pub fn cached_structures(&self) -> usize {
        self.tables.len()
    }

    fn structure(&self, s1: &QuantSentence, s2: &QuantSentence) -> Structure {
        let words = [&s1.noun, &s1.predicate, &s2.noun, &s2.predicate];
        let mut distinct: Vec<&String> = Vec::new();
        let mut slots = [0u8; 4];
        for (slot, w) in words.iter().enumerate() {
            let var = match distinct.iter().position(|d| d == w) {
                Some(v) => v,
                None => {
                    distinct.push(w);
                    distinct.len() - 1
                }
            };
            slots[slot] = var as u8;
        }
        let mut constraints = Vec::new();
        for (a, b) in [(0, 2), (1, 3)] {
            let (va, vb) = (slots[a], slots[b]);
            if va != vb {
                if let Some(r) = self.lexicon.relation(words[a], words[b]) {
                    let (lo, hi, r) = if va < vb {
                        (va, vb, r)
                    } else {
                        (vb, va, r.converse())
                    };
                    if !constraints.contains(&(lo, hi, r)) {
                        constraints.push((lo, hi, r));
                    }
                }
            }
        }
        constraints.sort();
        Structure {
            slots,
            vars: distinct.len() as u8,
            constraints,
        }
    }

    fn table(&mut self, structure: Structure) -> Arc<LabelTable> {
        let max = self.max_entities;
        self.tables
            .entry(structure)
            .or_insert_with_key(|s| Arc::new(build_table(s, max)))
            .clone()
    }

    /// Relation between the sets of models satisfying each sentence; `None`
    /// when either sentence holds in all or none of them.
    pub fn label(&mut self, s1: &QuantSentence, s2: &QuantSentence) -> Option<Relation> {
        let structure = self.structure(s1, s2);
        self.table(structure).label(s1.frame(), s2.frame())
    }

    /// Whether a sentence is true in some but not all models of its own words.
    pub fn is_degenerate(&mut self, s: &QuantSentence) -> bool {
        self.label(s, s).is_none()
    }

    /// Re-enumerates every cached structure with one more entity and fails if
    /// any label changes.
    pub fn verify_stability(&self) -> Result<()> {
        let mut structures: Vec<&Structure> = self.tables.keys().collect();
        structures.sort();
        for s in structures {
            compare_tables(
                s,
                &self.tables[s],
                &build_table(s, self.max_entities + 1),
                self.max_entities,
            )?;
        }
        Ok(())
    }

    /// Enumerates the structures of every sentence pair the lexicon allows.
    pub fn warm_all_structures(&mut self) {
        let nouns: Vec<String> = self.lexicon.nouns().into_iter().map(String::from).collect();
        let preds: Vec<String> = self
            .lexicon
            .predicates()
            .into_iter()
            .map(String::from)
            .collect();
        let some = Quantifier {
            base: BaseQuantifier::Some,
            negated: false,
        };
        for n1 in &nouns {
            for p1 in &preds {
                for n2 in &nouns {
                    for p2 in &preds {
                        let s1 = QuantSentence::new(some, n1, false, p1, false);
                        let s2 = QuantSentence::new(some, n2, false, p2, false);
                        let st = self.structure(&s1, &s2);
                        self.table(st);
                    }
                }
            }
        }
    }
}

fn compare_tables(s: &Structure, a: &LabelTable, b: &LabelTable, max: u32) -> Result<()> {
    for f1 in 0..FRAMES {
        for f2 in 0..FRAMES {
            let (la, lb) = (a.label(f1, f2), b.label(f1, f2));
            if la != lb {
                let show = |l: Option<Relation>| {
                    l.map_or("undefined".to_string(), |r| r.glyph().to_string())
                };
                return Err(Error::UnstableLabels(format!(
                    "slots {:?} constraints {:?} frames ({f1}, {f2}): {} at {max} entities, {} at {}",
                    s.slots,
                    s.constraints,
                    show(la),
                    show(lb),
                    max + 1
                )));
            }
        }
    }
    Ok(())
}

/// Labels a pair with a fresh labeler; prefer [`QuantLabeler`] for many pairs.
pub fn label_quant_pair(
    s1: &QuantSentence,
    s2: &QuantSentence,
    lexicon: &Lexicon,
    max_entities: u32,
) -> Result<Option<Relation>> {
    Ok(QuantLabeler::new(lexicon.clone(), max_entities)?.label(s1, s2))
}

/// Every non-degenerate sentence, in quantifier / noun / predicate order.
pub fn enumerate_sentences(labeler: &mut QuantLabeler) -> Vec<QuantSentence> {
    raw_sentences(labeler.lexicon())
        .into_iter()
        .filter(|s| !labeler.is_degenerate(s))
        .collect()
}

/// The full cross product before degeneracy filtering.
pub fn raw_sentences(lexicon: &Lexicon) -> Vec<QuantSentence> {
    let mut out = Vec::new();
    for q in Quantifier::all() {
        for noun in lexicon.nouns() {
            for nn in [false, true] {
                for pred in lexicon.predicates() {
                    for pn in [false, true] {
                        out.push(QuantSentence::new(q, noun, nn, pred, pn));
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub train_sentence_fraction: f64,
    pub target_train: usize,
    pub target_test: usize,
    pub max_entities: u32,
    pub seed: u64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            train_sentence_fraction: 0.8,
            target_train: 27_000,
            target_test: 7_000,
            max_entities: DEFAULT_MAX_ENTITIES,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantDataset {
    pub train: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
    pub train_sentences: Vec<QuantSentence>,
    pub test_sentences: Vec<QuantSentence>,
    pub label_counts: BTreeMap<String, usize>,
}

/// Partitions the valid sentences into train and test sides and samples
/// labeled ordered pairs within each side without replacement.
pub fn build_quant_dataset(lexicon: &Lexicon, config: &QuantConfig) -> Result<QuantDataset> {
    let f = config.train_sentence_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train sentence fraction {f} outside (0, 1]"
        )));
    }
    let mut labeler = QuantLabeler::new(lexicon.clone(), config.max_entities)?;
    let mut sentences = enumerate_sentences(&mut labeler);
    sentences.shuffle(&mut rng::sub_rng(config.seed, "quant-sentences"));
    let n_train = (sentences.len() as f64 * f).round() as usize;
    let test_sentences = sentences.split_off(n_train);
    let train_sentences = sentences;

    let train = sample_pairs(
        &mut labeler,
        &train_sentences,
        config.target_train,
        config.seed,
        "train",
    )?;
    let test = sample_pairs(
        &mut labeler,
        &test_sentences,
        config.target_test,
        config.seed,
        "test",
    )?;
    labeler.verify_stability()?;

    let mut label_counts = BTreeMap::new();
    for p in train.iter().chain(&test) {
        *label_counts
            .entry(p.relation.code().to_string())
            .or_insert(0) += 1;
    }
    Ok(QuantDataset {
        train,
        test,
        train_sentences,
        test_sentences,
        label_counts,
    })
}

fn sample_pairs(
    labeler: &mut QuantLabeler,
    sentences: &[QuantSentence],
    target: usize,
    seed: u64,
    side: &str,
) -> Result<Vec<LabeledPair>> {
    let n = sentences.len();
    if target > 0 && n == 0 {
        return Err(Error::InsufficientPairs(format!(
            "{side} side has no sentences"
        )));
    }
    let mut rng = rng::sub_rng(seed, &format!("quant-pairs-{side}"));
    let mut tried = HashSet::new();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        if tried.len() == n * n {
            return Err(Error::InsufficientPairs(format!(
                "{side} side: only {} labeled pairs among {n} sentences, need {target}",
                out.len()
            )));
        }
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if !tried.insert((i, j)) {
            continue;
        }
        if let Some(r) = labeler.label(&sentences[i], &sentences[j]) {
            out.push(LabeledPair::new(
                r,
                sentences[i].to_expression(),
                sentences[j].to_expression(),
            ));
        }
    }
    Ok(out)
}
