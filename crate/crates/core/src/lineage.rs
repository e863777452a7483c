//! Expression trees recording how every feature column was derived from the
//! original dataset columns.
//!
//! Canonical rendering (also used as the column name):
//!
//! ```text
//! expr  := IDENT | UNOP "(" expr ")" | "(" expr " " BINOP " " expr ")"
//! UNOP  := square | sqrt | log
//! BINOP := + | - | * | /
//! ```
//!
//! Identifiers are original header names with spaces replaced by `_`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude bound applied to every generated value. Saturating here keeps
/// repeated squaring finite and leaves room for second moments downstream.
pub const VALUE_BOUND: f64 = 1e150;

/// Denominators smaller than this in magnitude produce a zero quotient.
pub const DIVISION_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Square,
    Sqrt,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

fn saturate(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-VALUE_BOUND, VALUE_BOUND)
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 3] = [UnaryOp::Square, UnaryOp::Sqrt, UnaryOp::Log];

    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Square => "square",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Log => "log",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Safe scalar semantics: `x²`, `√|x|`, `ln(|x| + 1)`.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        let v = match self {
            UnaryOp::Square => x * x,
            UnaryOp::Sqrt => x.abs().sqrt(),
            UnaryOp::Log => x.abs().ln_1p(),
        };
        saturate(v)
    }

    pub fn apply_column(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.symbol() == s)
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        let v = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b.abs() < DIVISION_EPSILON {
                    0.0
                } else {
                    a / b
                }
            }
        };
        saturate(v)
    }

    pub fn apply_columns(self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| self.apply(x, y)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LineageExpr {
    Ident {
        name: String,
    },
    Unary {
        op: UnaryOp,
        arg: Box<LineageExpr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<LineageExpr>,
        right: Box<LineageExpr>,
    },
}

impl LineageExpr {
    pub fn ident(name: impl Into<String>) -> Self {
        LineageExpr::Ident { name: name.into() }
    }

    pub fn unary(op: UnaryOp, arg: LineageExpr) -> Self {
        LineageExpr::Unary {
            op,
            arg: Box::new(arg),
        }
    }

    pub fn binary(op: BinaryOp, left: LineageExpr, right: LineageExpr) -> Self {
        LineageExpr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn is_ident(&self) -> bool {
        matches!(self, LineageExpr::Ident { .. })
    }

    /// Identifiers have depth 0; every operation adds one level.
    pub fn depth(&self) -> usize {
        match self {
            LineageExpr::Ident { .. } => 0,
            LineageExpr::Unary { arg, .. } => 1 + arg.depth(),
            LineageExpr::Binary { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Original column names referenced by the tree, in first-seen order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            LineageExpr::Ident { name } => {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
            LineageExpr::Unary { arg, .. } => arg.collect_leaves(out),
            LineageExpr::Binary { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Re-evaluate the expression over the original columns.
    pub fn evaluate(&self, originals: &HashMap<&str, &[f64]>) -> Result<Vec<f64>> {
        match self {
            LineageExpr::Ident { name } => originals
                .get(name.as_str())
                .map(|col| col.to_vec())
                .ok_or_else(|| Error::UnknownColumn(name.clone())),
            LineageExpr::Unary { op, arg } => Ok(op.apply_column(&arg.evaluate(originals)?)),
            LineageExpr::Binary { op, left, right } => {
                let a = left.evaluate(originals)?;
                let b = right.evaluate(originals)?;
                if a.len() != b.len() {
                    return Err(Error::LengthMismatch {
                        left: a.len(),
                        right: b.len(),
                    });
                }
                Ok(op.apply_columns(&a, &b))
            }
        }
    }

    pub fn parse(input: &str) -> Result<Self> {
        let mut p = Parser { src: input, pos: 0 };
        let expr = p.expr()?;
        if p.pos != input.len() {
            return Err(p.err("trailing input"));
        }
        Ok(expr)
    }
}

impl fmt::Display for LineageExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineageExpr::Ident { name } => f.write_str(name),
            LineageExpr::Unary { op, arg } => write!(f, "{}({})", op.symbol(), arg),
            LineageExpr::Binary { op, left, right } => {
                write!(f, "({} {} {})", left, op.symbol(), right)
            }
        }
    }
}

/// Characters that may not appear inside an identifier.
fn is_reserved(c: char) -> bool {
    c == '(' || c == ')' || c.is_whitespace()
}

/// Turn a raw header into an identifier: spaces become `_`. Returns `None`
/// when the result still contains characters the grammar reserves.
pub fn sanitize_ident(header: &str) -> Option<String> {
    let s = header.replace(' ', "_");
    if s.is_empty() || s.chars().any(is_reserved) {
        None
    } else {
        Some(s)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::LineageParse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, s: &str) -> Result<()> {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            Err(self.err(&format!("expected `{s}`")))
        }
    }

    fn expr(&mut self) -> Result<LineageExpr> {
        if self.rest().starts_with('(') {
            self.pos += 1;
            let left = self.expr()?;
            self.eat(" ")?;
            let sym = self.rest().chars().next().ok_or_else(|| self.err("expected operator"))?;
            let op = BinaryOp::from_symbol(&sym.to_string())
                .ok_or_else(|| self.err("unknown binary operator"))?;
            self.pos += sym.len_utf8();
            self.eat(" ")?;
            let right = self.expr()?;
            self.eat(")")?;
            return Ok(LineageExpr::binary(op, left, right));
        }
        let start = self.pos;
        let len: usize = self
            .rest()
            .chars()
            .take_while(|&c| !is_reserved(c))
            .map(char::len_utf8)
            .sum();
        if len == 0 {
            return Err(self.err("expected identifier"));
        }
        self.pos += len;
        let word = &self.src[start..self.pos];
        if self.rest().starts_with('(') {
            let op = UnaryOp::from_symbol(word).ok_or_else(|| Error::LineageParse {
                pos: start,
                msg: format!("unknown unary operator `{word}`"),
            })?;
            self.pos += 1;
            let arg = self.expr()?;
            self.eat(")")?;
            return Ok(LineageExpr::unary(op, arg));
        }
        Ok(LineageExpr::ident(word))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_grammar_examples() {
        let e = LineageExpr::binary(
            BinaryOp::Sub,
            LineageExpr::ident("alcohol"),
            LineageExpr::ident("residual_sugar"),
        );
        assert_eq!(e.to_string(), "(alcohol - residual_sugar)");
        let s = LineageExpr::unary(UnaryOp::Sqrt, LineageExpr::ident("f3"));
        assert_eq!(s.to_string(), "sqrt(f3)");
    }

    #[test]
    fn parses_traceability_name() {
        let e = LineageExpr::parse("(alcohol - residual_sugar)").unwrap();
        assert_eq!(
            e,
            LineageExpr::binary(
                BinaryOp::Sub,
                LineageExpr::ident("alcohol"),
                LineageExpr::ident("residual_sugar")
            )
        );
    }

    #[test]
    fn parses_nested() {
        let src = "log((square(a) / (b * sqrt(c))))";
        let e = LineageExpr::parse(src).unwrap();
        assert_eq!(e.to_string(), src);
        assert_eq!(e.depth(), 4);
        assert_eq!(e.leaves(), vec!["a", "b", "c"]);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "(a + b", "(a ^ b)", "cube(a)", "(a  + b)", "a b", "(a + b))"] {
            assert!(LineageExpr::parse(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn operator_words_are_identifiers_without_parens() {
        assert_eq!(LineageExpr::parse("log").unwrap(), LineageExpr::ident("log"));
    }

    #[test]
    fn safe_semantics() {
        assert_eq!(UnaryOp::Sqrt.apply_column(&[-4.0, 9.0]), vec![2.0, 3.0]);
        let l = UnaryOp::Log.apply_column(&[0.0, std::f64::consts::E - 1.0]);
        assert_eq!(l[0], 0.0);
        assert!((l[1] - 1.0).abs() < 1e-15);
        assert_eq!(BinaryOp::Div.apply(3.0, 0.0), 0.0);
        assert_eq!(BinaryOp::Div.apply(3.0, 1e-13), 0.0);
        assert_eq!(UnaryOp::Square.apply(1e200), VALUE_BOUND);
        assert_eq!(BinaryOp::Sub.apply(-1e150, 1e150), -VALUE_BOUND);
    }

    #[test]
    fn sanitize() {
        assert_eq!(sanitize_ident("residual sugar").as_deref(), Some("residual_sugar"));
        assert_eq!(sanitize_ident("a(b)"), None);
        assert_eq!(sanitize_ident(""), None);
    }

    fn arb_expr() -> impl Strategy<Value = LineageExpr> {
        let leaf = "[a-z][a-z0-9_\\-\\.]{0,6}".prop_map(LineageExpr::ident);
        leaf.prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                (0usize..3, inner.clone()).prop_map(|(i, a)| LineageExpr::unary(UnaryOp::ALL[i], a)),
                (0usize..4, inner.clone(), inner)
                    .prop_map(|(i, a, b)| LineageExpr::binary(BinaryOp::ALL[i], a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(e in arb_expr()) {
            let s = e.to_string();
            prop_assert_eq!(LineageExpr::parse(&s).unwrap(), e);
        }

        #[test]
        fn safe_ops_stay_finite(a in prop::num::f64::NORMAL | prop::num::f64::ZERO,
                                b in prop::num::f64::NORMAL | prop::num::f64::ZERO) {
            for op in UnaryOp::ALL {
                prop_assert!(op.apply(a).is_finite());
            }
            for op in BinaryOp::ALL {
                prop_assert!(op.apply(a, b).is_finite());
            }
        }
    }
}
