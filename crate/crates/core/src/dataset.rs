//! The shared dataset record and its tab-separated line format:
//! `REL<TAB>left<TAB>right`, with both sides as s-expressions.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::expr::{parse_sexpr, Expression};
use crate::relation::Relation;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub relation: Relation,
    pub left: Expression,
    pub right: Expression,
}

impl LabeledPair {
    pub fn new(relation: Relation, left: Expression, right: Expression) -> Self {
        LabeledPair {
            relation,
            left,
            right,
        }
    }

    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.relation.code(), self.left, self.right)
    }

    pub fn parse_line(line: &str) -> Result<LabeledPair> {
        let mut fields = line.split('\t');
        let (Some(rel), Some(left), Some(right), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse(format!(
                "expected 3 tab-separated fields: {line:?}"
            )));
        };
        Ok(LabeledPair {
            relation: rel.trim().parse()?,
            left: parse_sexpr(left)?,
            right: parse_sexpr(right)?,
        })
    }
}

pub fn write_pairs(path: &Path, pairs: &[LabeledPair]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for pair in pairs {
        writeln!(out, "{}", pair.to_line())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset file, skipping blank lines.
pub fn read_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = LabeledPair::parse_line(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let line = "|\t( ( most turtle ) swim )\t( ( no turtle ) move )";
        let pair = LabeledPair::parse_line(line).unwrap();
        assert_eq!(pair.relation, Relation::Alternation);
        assert_eq!(pair.to_line(), line);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(LabeledPair::parse_line("=\tp1").is_err());
        assert!(LabeledPair::parse_line("?\tp1\tp2").is_err());
        assert!(LabeledPair::parse_line("=\tp1\tp2\tp3").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        let pairs = vec![
            LabeledPair::new(
                Relation::Equivalence,
                Expression::leaf("p1"),
                Expression::leaf("p2"),
            ),
            LabeledPair::new(
                Relation::Cover,
                Expression::branch(Expression::leaf("not"), Expression::leaf("p1")),
                Expression::leaf("p2"),
            ),
        ];
        write_pairs(&path, &pairs).unwrap();
        assert_eq!(read_pairs(&path).unwrap(), pairs);
    }
}
