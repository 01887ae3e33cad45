//! Column expressions over factor names.
//!
//! Grammar: linear combinations of factors and constants, optionally wrapped
//! in `abs(...)`. Products are allowed only when one side is constant.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := number | ident | 'abs' '(' expr ')' | '(' expr ')'
//! ```

use std::fmt;

use super::ScenarioPanel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Factor(usize),
    Abs(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Scale(f64, Box<Node>),
}

impl Node {
    fn constant(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn eval(&self, row: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Factor(k) => row[*k],
            Node::Abs(inner) => inner.eval(row).abs(),
            Node::Add(a, b) => a.eval(row) + b.eval(row),
            Node::Scale(c, inner) => c * inner.eval(row),
        }
    }
}

/// A parsed column expression bound to the factor order of one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnExpression {
    source: String,
    root: Node,
}

impl ColumnExpression {
    pub fn parse(source: &str, factor_names: &[String]) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            source,
            factors: factor_names,
        };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(parser.error("trailing input"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn evaluate_row(&self, row: &[f64]) -> f64 {
        self.root.eval(row)
    }

    pub fn evaluate_panel(&self, panel: &ScenarioPanel) -> Vec<f64> {
        panel.rows().map(|r| self.root.eval(r)).collect()
    }
}

impl fmt::Display for ColumnExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let malformed = |reason: String| Error::MalformedExpression {
        expr: src.to_string(),
        reason,
    };
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            // U+2212 MINUS SIGN is accepted alongside ASCII '-'
            '-' | '\u{2212}' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut k = i + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        i = k;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse()
                    .map_err(|_| malformed(format!("bad number `{text}`")))?;
                out.push(Token::Num(v));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(malformed(format!("unexpected character `{other}`"))),
        }
    }
    if out.is_empty() {
        return Err(malformed("empty expression".into()));
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    source: &'a str,
    factors: &'a [String],
}

impl Parser<'_> {
    fn error(&self, reason: &str) -> Error {
        Error::MalformedExpression {
            expr: self.source.to_string(),
            reason: reason.to_string(),
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek() {
            let negate = match op {
                Token::Plus => false,
                Token::Minus => true,
                _ => break,
            };
            self.pos += 1;
            let mut rhs = self.term()?;
            if negate {
                rhs = scale(-1.0, rhs);
            }
            lhs = match (lhs.constant(), rhs.constant()) {
                (Some(a), Some(b)) => Node::Const(a + b),
                _ => Node::Add(Box::new(lhs), Box::new(rhs)),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek() {
            let divide = match op {
                Token::Star => false,
                Token::Slash => true,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if divide {
                match rhs.constant() {
                    Some(0.0) => return Err(self.error("division by zero")),
                    Some(c) => scale(1.0 / c, lhs),
                    None => return Err(self.error("division by a factor is not linear")),
                }
            } else {
                match (lhs.constant(), rhs.constant()) {
                    (Some(c), _) => scale(c, rhs),
                    (_, Some(c)) => scale(c, lhs),
                    _ => return Err(self.error("product of two factors is not linear")),
                }
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.pos += 1;
            return Ok(scale(-1.0, self.unary()?));
        }
        if matches!(self.peek(), Some(Token::Plus)) {
            self.pos += 1;
            return self.unary();
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Const(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if name == "abs" && matches!(self.peek(), Some(Token::LParen)) {
                    self.pos += 1;
                    let inner = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(match inner.constant() {
                        Some(c) => Node::Const(c.abs()),
                        None => Node::Abs(Box::new(inner)),
                    });
                }
                self.factors
                    .iter()
                    .position(|f| *f == name)
                    .map(Node::Factor)
                    .ok_or(Error::UnknownFactor(name))
            }
            Some(_) => Err(self.error("expected a number, factor or `(`")),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.next() {
            Some(Token::RParen) => Ok(()),
            _ => Err(self.error("missing `)`")),
        }
    }
}

fn scale(c: f64, node: Node) -> Node {
    match node {
        Node::Const(v) => Node::Const(c * v),
        Node::Scale(d, inner) => Node::Scale(c * d, inner),
        other => Node::Scale(c, Box::new(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, names: &[&str], row: &[f64]) -> Result<f64> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        Ok(ColumnExpression::parse(src, &names)?.evaluate_row(row))
    }

    #[test]
    fn difference_of_factors() {
        assert_eq!(eval("a−b", &["a", "b"], &[3.0, 1.0]).unwrap(), 2.0);
        assert_eq!(eval("a-b", &["a", "b"], &[3.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn absolute_value_column() {
        assert_eq!(eval("abs(a)", &["a"], &[-0.02]).unwrap(), 0.02);
    }

    #[test]
    fn curve_slope_column() {
        let v = eval("X10y-X2y", &["X2y", "X10y"], &[0.0025, 0.0030]).unwrap();
        assert!((v - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn constants_scaling_and_grouping() {
        let names = &["a", "b"];
        assert_eq!(eval("2*(a - b) + 1", names, &[3.0, 1.0]).unwrap(), 5.0);
        assert_eq!(eval("a/2 - -b", names, &[3.0, 1.0]).unwrap(), 2.5);
        assert_eq!(eval("abs(a - 3*b) * 0.5", names, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(eval("1e-2 * a", names, &[3.0, 0.0]).unwrap(), 0.03);
        assert_eq!(eval("-abs(-4)", names, &[0.0, 0.0]).unwrap(), -4.0);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(
            eval("c", &["a"], &[1.0]),
            Err(Error::UnknownFactor(_))
        ));
        for bad in ["a*a", "a/a", "a +", "(a", "a $ 2", "", "a/0", "abs(a"] {
            assert!(
                matches!(
                    eval(bad, &["a"], &[1.0]),
                    Err(Error::MalformedExpression { .. })
                ),
                "{bad}"
            );
        }
    }
}
