//! Binary expression trees and their s-expression text form.
//!
//! Every dataset line stores its two sides as whitespace-tokenized
//! parenthesized trees, e.g. `( ( most turtle ) swim )`. A bare symbol is a
//! leaf; every parenthesized group has exactly two children.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expression {
    Leaf(String),
    Branch(Box<Expression>, Box<Expression>),
}

impl Expression {
    pub fn leaf(token: impl Into<String>) -> Expression {
        Expression::Leaf(token.into())
    }

    pub fn branch(left: Expression, right: Expression) -> Expression {
        Expression::Branch(Box::new(left), Box::new(right))
    }

    /// Leaf tokens in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expression::Leaf(t) => out.push(t),
            Expression::Branch(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    /// Number of branch nodes.
    pub fn branch_count(&self) -> usize {
        match self {
            Expression::Leaf(_) => 0,
            Expression::Branch(l, r) => 1 + l.branch_count() + r.branch_count(),
        }
    }

    pub fn to_sexpr(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Leaf(t) => f.write_str(t),
            Expression::Branch(l, r) => write!(f, "( {l} {r} )"),
        }
    }
}

impl FromStr for Expression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_sexpr(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SExprToken<'a> {
    Open,
    Close,
    Symbol(&'a str),
}

/// Splits on whitespace and parentheses; parentheses need not be
/// space-separated.
pub fn tokenize(text: &str) -> Vec<SExprToken<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(SExprToken::Symbol(&text[s..i]));
            }
            match c {
                '(' => tokens.push(SExprToken::Open),
                ')' => tokens.push(SExprToken::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(SExprToken::Symbol(&text[s..]));
    }
    tokens
}

/// Parses a strictly binary s-expression.
pub fn parse_sexpr(text: &str) -> Result<Expression> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Parse("empty expression".into()));
    }
    let mut pos = 0;
    let expr = parse_node(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::Parse(format!(
            "trailing input after expression in {text:?}"
        )));
    }
    Ok(expr)
}

fn parse_node(tokens: &[SExprToken<'_>], pos: &mut usize) -> Result<Expression> {
    match tokens.get(*pos) {
        None => Err(Error::Parse(
            "unbalanced parentheses: unexpected end of input".into(),
        )),
        Some(SExprToken::Close) => Err(Error::Parse(
            "unbalanced parentheses: unexpected ')'".into(),
        )),
        Some(SExprToken::Symbol(s)) => {
            *pos += 1;
            Ok(Expression::leaf(*s))
        }
        Some(SExprToken::Open) => {
            *pos += 1;
            let mut children = Vec::with_capacity(2);
            loop {
                match tokens.get(*pos) {
                    None => return Err(Error::Parse("unbalanced parentheses: missing ')'".into())),
                    Some(SExprToken::Close) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_node(tokens, pos)?),
                }
            }
            if children.len() != 2 {
                return Err(Error::Parse(format!(
                    "non-binary branch with {} children",
                    children.len()
                )));
            }
            let right = children.pop().expect("two children");
            let left = children.pop().expect("two children");
            Ok(Expression::branch(left, right))
        }
    }
}
