//! Random boolean structures of named sets, the relational statements they
//! induce, and train/test splitting with provability pruning.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPair;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::relation::{classify_masks, full_mask, join, Relation, MAX_DOMAIN_SIZE};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub id: String,
    /// Bitmask over the domain; never empty, never the whole domain.
    pub extension: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldModel {
    pub domain_size: u32,
    pub terms: Vec<Term>,
}

impl WorldModel {
    /// Builds a world from explicit extensions, naming terms `p1..pN`.
    pub fn from_extensions(domain_size: u32, extensions: &[u64]) -> Result<WorldModel> {
        if !(2..=MAX_DOMAIN_SIZE).contains(&domain_size) {
            return Err(Error::InvalidArgument(format!("domain size {domain_size}")));
        }
        let full = full_mask(domain_size);
        let terms = extensions
            .iter()
            .enumerate()
            .map(|(i, &ext)| {
                if ext == 0 || ext & full == full || ext & !full != 0 {
                    Err(Error::DegenerateSet)
                } else {
                    Ok(Term {
                        id: term_name(i),
                        extension: ext,
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(WorldModel { domain_size, terms })
    }

    pub fn term_ids(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.id.clone()).collect()
    }

    pub fn extension(&self, id: &str) -> Option<u64> {
        self.terms.iter().find(|t| t.id == id).map(|t| t.extension)
    }
}

fn term_name(i: usize) -> String {
    format!("p{}", i + 1)
}

/// Draws `num_terms` extensions uniformly, with replacement, from the
/// non-degenerate subsets of a `domain_size`-element domain.
pub fn generate_world(num_terms: usize, domain_size: u32, seed: u64) -> Result<WorldModel> {
    if num_terms == 0 {
        return Err(Error::InvalidArgument(
            "num_terms must be at least 1".into(),
        ));
    }
    if !(2..=MAX_DOMAIN_SIZE).contains(&domain_size) {
        return Err(Error::InvalidArgument(format!(
            "domain size {domain_size} outside 2..={MAX_DOMAIN_SIZE}"
        )));
    }
    let full = full_mask(domain_size);
    let mut rng = rng::sub_rng(seed, "world");
    let extensions: Vec<u64> = (0..num_terms).map(|_| rng.gen_range(1..full)).collect();
    WorldModel::from_extensions(domain_size, &extensions)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationalStatement {
    pub left: String,
    pub right: String,
    pub relation: Relation,
}

impl RelationalStatement {
    pub fn new(left: impl Into<String>, relation: Relation, right: impl Into<String>) -> Self {
        RelationalStatement {
            left: left.into(),
            right: right.into(),
            relation,
        }
    }

    pub fn to_pair(&self) -> LabeledPair {
        LabeledPair::new(
            self.relation,
            Expression::leaf(&self.left),
            Expression::leaf(&self.right),
        )
    }
}

/// One statement per ordered pair of terms, self-pairs included.
pub fn all_statements(world: &WorldModel) -> Vec<RelationalStatement> {
    let mut out = Vec::with_capacity(world.terms.len() * world.terms.len());
    for a in &world.terms {
        for b in &world.terms {
            let relation = classify_masks(a.extension, b.extension, world.domain_size)
                .expect("terms are non-degenerate");
            out.push(RelationalStatement::new(
                a.id.clone(),
                relation,
                b.id.clone(),
            ));
        }
    }
    out
}

/// Relations known between ordered pairs of terms after closing a fact set
/// under reflexivity, converse and join.
#[derive(Clone, Debug)]
pub struct ClosureState {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    known: Vec<Option<Relation>>,
}

impl ClosureState {
    fn new(terms: &[String]) -> Self {
        let mut index = HashMap::new();
        let mut ordered = Vec::new();
        for t in terms {
            if !index.contains_key(t) {
                index.insert(t.clone(), ordered.len());
                ordered.push(t.clone());
            }
        }
        let n = ordered.len();
        ClosureState {
            terms: ordered,
            index,
            known: vec![None; n * n],
        }
    }

    pub fn get(&self, left: &str, right: &str) -> Option<Relation> {
        let (&a, &b) = (self.index.get(left)?, self.index.get(right)?);
        self.known[a * self.terms.len() + b]
    }

    pub fn len(&self) -> usize {
        self.known.iter().filter(|k| k.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn iter(&self) -> impl Iterator<Item = RelationalStatement> + '_ {
        let n = self.terms.len();
        self.known.iter().enumerate().filter_map(move |(k, r)| {
            r.map(|r| {
                RelationalStatement::new(self.terms[k / n].clone(), r, self.terms[k % n].clone())
            })
        })
    }
}

/// Smallest fact set containing `facts`, `t ≡ t` for every term, the converse
/// of every fact, and every determinate join of chained facts.
///
/// Terms mentioned by `facts` but missing from `terms` are added.
pub fn deductive_closure(facts: &[RelationalStatement], terms: &[String]) -> Result<ClosureState> {
    let mut all_terms = terms.to_vec();
    for f in facts {
        all_terms.push(f.left.clone());
        all_terms.push(f.right.clone());
    }
    let mut state = ClosureState::new(&all_terms);
    let n = state.terms.len();
    let mut queue: Vec<(usize, usize, Relation)> = Vec::new();
    for t in 0..n {
        queue.push((t, t, Relation::Equivalence));
    }
    for f in facts {
        queue.push((state.index[&f.left], state.index[&f.right], f.relation));
    }

    while let Some((a, b, r)) = queue.pop() {
        match state.known[a * n + b] {
            Some(existing) if existing == r => continue,
            Some(existing) => {
                return Err(Error::Inconsistent(format!(
                    "{} {} {} conflicts with derived {}",
                    state.terms[a],
                    existing.glyph(),
                    state.terms[b],
                    r.glyph()
                )))
            }
            None => {}
        }
        state.known[a * n + b] = Some(r);
        queue.push((b, a, r.converse()));
        for c in 0..n {
            // a r b, b r2 c  =>  a (r ⋈ r2) c
            if let Some(r2) = state.known[b * n + c] {
                if let Some(j) = join(r, r2).relation() {
                    queue.push((a, c, j));
                }
            }
            // c r0 a, a r b  =>  c (r0 ⋈ r) b
            if let Some(r0) = state.known[c * n + a] {
                if let Some(j) = join(r0, r).relation() {
                    queue.push((c, b, j));
                }
            }
        }
    }
    Ok(state)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<RelationalStatement>,
    pub test: Vec<RelationalStatement>,
    pub dropped: Vec<RelationalStatement>,
}

/// Keeps the test statements whose labels follow from `train` by closure.
pub fn prune_test(
    train: Vec<RelationalStatement>,
    test: Vec<RelationalStatement>,
) -> Result<Split> {
    let closure = deductive_closure(&train, &[])?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for s in test {
        match closure.get(&s.left, &s.right) {
            Some(r) if r == s.relation => kept.push(s),
            Some(r) => {
                return Err(Error::Inconsistent(format!(
                    "closure derives {} {} {} but the world says {}",
                    s.left,
                    r.glyph(),
                    s.right,
                    s.relation.glyph()
                )))
            }
            None => dropped.push(s),
        }
    }
    Ok(Split {
        train,
        test: kept,
        dropped,
    })
}

/// Shuffles, splits evenly (train gets the extra item when odd), and prunes
/// unprovable test items.
pub fn split_and_prune(statements: &[RelationalStatement], seed: u64) -> Result<Split> {
    let mut shuffled = statements.to_vec();
    shuffled.shuffle(&mut rng::sub_rng(seed, "split"));
    let test = shuffled.split_off(shuffled.len().div_ceil(2));
    prune_test(shuffled, test)
}
