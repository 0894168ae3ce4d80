//! The seven natural-logic relations between sets, their converses, and the
//! join table derived by exhaustive enumeration over small finite domains.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A natural-logic relation between two non-degenerate sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Relation {
    /// `x = y`
    Equivalence,
    /// `x ⊂ y`
    ForwardEntailment,
    /// `x ⊃ y`
    ReverseEntailment,
    /// disjoint and exhaustive
    Negation,
    /// disjoint, not exhaustive
    Alternation,
    /// exhaustive, not disjoint
    Cover,
    /// everything else
    Independence,
}

impl Relation {
    pub const COUNT: usize = 7;

    /// All relations in canonical order; the position is the class index used by
    /// classifiers and metrics.
    pub const ALL: [Relation; 7] = [
        Relation::Equivalence,
        Relation::ForwardEntailment,
        Relation::ReverseEntailment,
        Relation::Negation,
        Relation::Alternation,
        Relation::Cover,
        Relation::Independence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Relation> {
        Self::ALL.get(index).copied()
    }

    /// ASCII code used in every file format.
    pub fn code(self) -> char {
        match self {
            Relation::Equivalence => '=',
            Relation::ForwardEntailment => '<',
            Relation::ReverseEntailment => '>',
            Relation::Negation => '^',
            Relation::Alternation => '|',
            Relation::Cover => 'v',
            Relation::Independence => '#',
        }
    }

    pub fn from_code(c: char) -> Option<Relation> {
        Self::ALL.iter().copied().find(|r| r.code() == c)
    }

    /// Mathematical glyph, for human-facing tables.
    pub fn glyph(self) -> char {
        match self {
            Relation::Equivalence => '≡',
            Relation::ForwardEntailment => '⊏',
            Relation::ReverseEntailment => '⊐',
            Relation::Negation => '^',
            Relation::Alternation => '|',
            Relation::Cover => '⌣',
            Relation::Independence => '#',
        }
    }

    /// The relation that holds from `y` to `x` when `self` holds from `x` to `y`.
    pub fn converse(self) -> Relation {
        match self {
            Relation::ForwardEntailment => Relation::ReverseEntailment,
            Relation::ReverseEntailment => Relation::ForwardEntailment,
            other => other,
        }
    }

    /// Join looked up in the derived table.
    pub fn join(self, other: Relation) -> RelationOutcome {
        join(self, other)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Relation::from_code(c)
                .ok_or_else(|| Error::Parse(format!("unknown relation code {s:?}"))),
            _ => Err(Error::Parse(format!("unknown relation code {s:?}"))),
        }
    }
}

impl From<Relation> for String {
    fn from(r: Relation) -> String {
        r.code().to_string()
    }
}

impl TryFrom<String> for Relation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A join table cell: a single relation, or no valid inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelationOutcome {
    Determinate(Relation),
    Indeterminate,
}

impl RelationOutcome {
    pub fn relation(self) -> Option<Relation> {
        match self {
            RelationOutcome::Determinate(r) => Some(r),
            RelationOutcome::Indeterminate => None,
        }
    }

    pub fn code(self) -> char {
        match self {
            RelationOutcome::Determinate(r) => r.code(),
            RelationOutcome::Indeterminate => '.',
        }
    }

    pub fn from_code(c: char) -> Option<RelationOutcome> {
        if c == '.' {
            Some(RelationOutcome::Indeterminate)
        } else {
            Relation::from_code(c).map(RelationOutcome::Determinate)
        }
    }
}

impl fmt::Display for RelationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Largest domain representable by the `u64` subset encoding.
pub const MAX_DOMAIN_SIZE: u32 = 63;

/// Two subsets of a finite domain `{0, .., domain_size - 1}` encoded as bitmasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FiniteSetPair {
    x: u64,
    y: u64,
    domain_size: u32,
}

impl FiniteSetPair {
    /// Builds a pair, rejecting empty or universal sets and out-of-domain bits.
    pub fn new(x: u64, y: u64, domain_size: u32) -> Result<Self> {
        if domain_size == 0 || domain_size > MAX_DOMAIN_SIZE {
            return Err(Error::InvalidArgument(format!(
                "domain size {domain_size} outside 1..={MAX_DOMAIN_SIZE}"
            )));
        }
        let full = full_mask(domain_size);
        for (name, s) in [("x", x), ("y", y)] {
            if s & !full != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} has bits outside the domain"
                )));
            }
            if s == 0 || s == full {
                return Err(Error::DegenerateSet);
            }
        }
        Ok(FiniteSetPair { x, y, domain_size })
    }

    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn y(&self) -> u64 {
        self.y
    }

    pub fn domain_size(&self) -> u32 {
        self.domain_size
    }
}

pub(crate) fn full_mask(domain_size: u32) -> u64 {
    if domain_size >= 64 {
        u64::MAX
    } else {
        (1u64 << domain_size) - 1
    }
}

/// Cardinalities that fully determine the relation between two sets.
///
/// Works for arbitrary-size domains, which is how the propositional and
/// quantifier labelers reuse the classifier over their own universes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SetCounts {
    pub x: u64,
    pub y: u64,
    pub both: u64,
    pub domain: u64,
}

impl SetCounts {
    /// Classifies, or returns `None` when either set is empty or universal.
    pub fn classify(self) -> Option<Relation> {
        let SetCounts { x, y, both, domain } = self;
        debug_assert!(both <= x.min(y) && x <= domain && y <= domain);
        if x == 0 || y == 0 || x == domain || y == domain {
            return None;
        }
        let union = x + y - both;
        let x_in_y = both == x;
        let y_in_x = both == y;
        let disjoint = both == 0;
        let exhaustive = union == domain;
        Some(match (x_in_y, y_in_x, disjoint, exhaustive) {
            (true, true, _, _) => Relation::Equivalence,
            (true, false, _, _) => Relation::ForwardEntailment,
            (false, true, _, _) => Relation::ReverseEntailment,
            (_, _, true, true) => Relation::Negation,
            (_, _, true, false) => Relation::Alternation,
            (_, _, false, true) => Relation::Cover,
            _ => Relation::Independence,
        })
    }
}

/// Classifies two subsets given as `u64` masks over a domain of `domain_size`
/// elements. Returns `None` for degenerate sets.
pub fn classify_masks(x: u64, y: u64, domain_size: u32) -> Option<Relation> {
    SetCounts {
        x: u64::from(x.count_ones()),
        y: u64::from(y.count_ones()),
        both: u64::from((x & y).count_ones()),
        domain: u64::from(domain_size),
    }
    .classify()
}

/// The unique relation satisfied by a validated set pair.
pub fn classify_set_pair(pair: FiniteSetPair) -> Relation {
    classify_masks(pair.x, pair.y, pair.domain_size).expect("FiniteSetPair is non-degenerate")
}

/// Row-major 7×7 join table indexed by `Relation::index`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinTable {
    cells: [[RelationOutcome; 7]; 7],
}

impl JoinTable {
    pub fn get(&self, r1: Relation, r2: Relation) -> RelationOutcome {
        self.cells[r1.index()][r2.index()]
    }

    pub fn rows(&self) -> &[[RelationOutcome; 7]; 7] {
        &self.cells
    }

    /// Seven lines of seven space-separated cell codes, rows in canonical order.
    pub fn to_codes(&self) -> String {
        let mut out = String::new();
        for row in &self.cells {
            let line: Vec<String> = row.iter().map(|c| c.code().to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`JoinTable::to_codes`].
    pub fn from_codes(text: &str) -> Result<JoinTable> {
        let mut cells = [[RelationOutcome::Indeterminate; 7]; 7];
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != 7 {
            return Err(Error::Parse(format!(
                "expected 7 rows, found {}",
                rows.len()
            )));
        }
        for (i, line) in rows.iter().enumerate() {
            let codes: Vec<&str> = line.split_whitespace().collect();
            if codes.len() != 7 {
                return Err(Error::Parse(format!("row {i}: expected 7 cells")));
            }
            for (j, code) in codes.iter().enumerate() {
                let mut chars = code.chars();
                cells[i][j] = match (chars.next(), chars.next()) {
                    (Some(c), None) => RelationOutcome::from_code(c),
                    _ => None,
                }
                .ok_or_else(|| Error::Parse(format!("bad cell {code:?}")))?;
            }
        }
        Ok(JoinTable { cells })
    }

    /// Human-readable table with glyph headers.
    pub fn render(&self) -> String {
        let mut out = String::from("   ");
        for r in Relation::ALL {
            out.push_str(&format!(" {}", r.glyph()));
        }
        out.push('\n');
        for r1 in Relation::ALL {
            out.push_str(&format!(" {} ", r1.glyph()));
            for r2 in Relation::ALL {
                let cell = match self.get(r1, r2) {
                    RelationOutcome::Determinate(r) => r.glyph(),
                    RelationOutcome::Indeterminate => '·',
                };
                out.push_str(&format!(" {cell}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Result of the enumeration, including cells with no witnessing triple.
#[derive(Clone, Debug)]
pub struct JoinDerivation {
    /// Distinct x–z relations observed per (r1, r2) cell, as bitmasks over
    /// `Relation::index`.
    pub observed: [[u8; 7]; 7],
    pub unwitnessed: Vec<(Relation, Relation)>,
}

impl JoinDerivation {
    pub fn table(&self) -> Result<JoinTable> {
        if let Some(&(r1, r2)) = self.unwitnessed.first() {
            return Err(Error::DomainTooSmall(format!(
                "no triple witnesses ({}, {}); {} cells unwitnessed",
                r1.glyph(),
                r2.glyph(),
                self.unwitnessed.len()
            )));
        }
        let mut cells = [[RelationOutcome::Indeterminate; 7]; 7];
        for (i, row) in self.observed.iter().enumerate() {
            for (j, &seen) in row.iter().enumerate() {
                if seen.count_ones() == 1 {
                    cells[i][j] =
                        RelationOutcome::Determinate(Relation::ALL[seen.trailing_zeros() as usize]);
                }
            }
        }
        Ok(JoinTable { cells })
    }
}

/// Enumerates every triple of non-degenerate subsets over domains of size
/// 2..=`max_domain_size` and records which x–z relations follow from each
/// (x–y, y–z) pair of relations.
pub fn enumerate_joins(max_domain_size: u32) -> Result<JoinDerivation> {
    if !(2..=8).contains(&max_domain_size) {
        return Err(Error::InvalidArgument(format!(
            "max domain size {max_domain_size} outside 2..=8"
        )));
    }
    let mut observed = [[0u8; 7]; 7];
    for size in 2..=max_domain_size {
        let full = full_mask(size);
        let sets: Vec<u64> = (1..full).collect();
        // relation of every ordered pair, indexed [a][b] over `sets`
        let rel: Vec<Vec<usize>> = sets
            .iter()
            .map(|&a| {
                sets.iter()
                    .map(|&b| classify_masks(a, b, size).expect("non-degenerate").index())
                    .collect()
            })
            .collect();
        for xy in &rel {
            for (y, &r1) in xy.iter().enumerate() {
                for (z, &r3) in xy.iter().enumerate() {
                    let r2 = rel[y][z];
                    observed[r1][r2] |= 1 << r3;
                }
            }
        }
    }
    let mut unwitnessed = Vec::new();
    for r1 in Relation::ALL {
        for r2 in Relation::ALL {
            if observed[r1.index()][r2.index()] == 0 {
                unwitnessed.push((r1, r2));
            }
        }
    }
    Ok(JoinDerivation {
        observed,
        unwitnessed,
    })
}

/// Derives the join table from the set-theoretic definitions.
///
/// Fails with [`Error::DomainTooSmall`] when some pair of relations has no
/// witnessing triple at this domain size.
pub fn derive_join_table(max_domain_size: u32) -> Result<JoinTable> {
    enumerate_joins(max_domain_size)?.table()
}

/// Domain size used for the process-wide table.
pub const DEFAULT_JOIN_DOMAIN: u32 = 5;

fn shared_table() -> &'static JoinTable {
    static TABLE: std::sync::OnceLock<JoinTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        derive_join_table(DEFAULT_JOIN_DOMAIN).expect("domain of 5 witnesses every cell")
    })
}

/// Join of two relations, from the derived table.
pub fn join(r1: Relation, r2: Relation) -> RelationOutcome {
    shared_table().get(r1, r2)
}
