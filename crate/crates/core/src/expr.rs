//! Scenario expression language: a small arithmetic grammar over declared
//! variables with smooth primitives, evaluated either plainly or with
//! forward-mode dual numbers for exact first derivatives.

use crate::error::{Error, Result};

const DIV_FLOOR: f64 = 1e-12;
/// Quadratic smoothing width of the `smin` primitive.
const SMIN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tanh(Box<Expr>),
    SMin(Box<Expr>, Box<Expr>),
}

/// Parsed expression together with its declared variable environment.
#[derive(Debug, Clone)]
pub struct ExpressionAst {
    expr: Expr,
    vars: Vec<String>,
    source: String,
}

impl ExpressionAst {
    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.vars.len() {
            return Err(Error::invalid(format!(
                "expression expects {} variables, got {}",
                self.vars.len(),
                point.len()
            )));
        }
        eval_value(&self.expr, point)
    }

    /// Value plus the full gradient with respect to every declared variable,
    /// by dual-number propagation through the tree.
    pub fn eval_with_derivatives(&self, point: &[f64]) -> Result<(f64, Vec<f64>)> {
        if point.len() != self.vars.len() {
            return Err(Error::invalid(format!(
                "expression expects {} variables, got {}",
                self.vars.len(),
                point.len()
            )));
        }
        let d = eval_dual(&self.expr, point)?;
        Ok((d.v, d.g))
    }
}

pub fn parse_expression(text: &str, vars: &[&str]) -> Result<ExpressionAst> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        vars,
        end: text.len(),
    };
    let expr = p.parse_expr()?;
    if p.pos < p.tokens.len() {
        return Err(Error::Parse {
            offset: p.tokens[p.pos].offset,
            message: format!("unexpected `{}`", p.tokens[p.pos].text),
        });
    }
    Ok(ExpressionAst {
        expr,
        vars: vars.iter().map(|s| s.to_string()).collect(),
        source: text.to_string(),
    })
}

// ---------------------------------------------------------------------------
// evaluation

pub(crate) fn eval_value(e: &Expr, x: &[f64]) -> Result<f64> {
    Ok(match e {
        Expr::Const(c) => *c,
        Expr::Var(i) => x[*i],
        Expr::Add(a, b) => eval_value(a, x)? + eval_value(b, x)?,
        Expr::Sub(a, b) => eval_value(a, x)? - eval_value(b, x)?,
        Expr::Mul(a, b) => eval_value(a, x)? * eval_value(b, x)?,
        Expr::Div(a, b) => {
            let den = eval_value(b, x)?;
            if den.abs() < DIV_FLOOR {
                return Err(Error::domain(format!("division by {den}")));
            }
            eval_value(a, x)? / den
        }
        Expr::Pow(a, b) => {
            let base = eval_value(a, x)?;
            let exp = eval_value(b, x)?;
            pow_value(base, exp)?
        }
        Expr::Neg(a) => -eval_value(a, x)?,
        Expr::Exp(a) => eval_value(a, x)?.exp(),
        Expr::Sin(a) => eval_value(a, x)?.sin(),
        Expr::Cos(a) => eval_value(a, x)?.cos(),
        Expr::Tanh(a) => eval_value(a, x)?.tanh(),
        Expr::SMin(a, b) => {
            let (u, v) = (eval_value(a, x)?, eval_value(b, x)?);
            smin_value(u, v)
        }
    })
}

fn pow_value(base: f64, exp: f64) -> Result<f64> {
    if exp.fract() == 0.0 && exp.abs() <= 64.0 {
        let p = base.powi(exp as i32);
        if exp < 0.0 && base.abs() < DIV_FLOOR {
            return Err(Error::domain("negative power of value near zero"));
        }
        return Ok(p);
    }
    if base <= 0.0 {
        return Err(Error::domain(format!(
            "non-integer power of non-positive base {base}"
        )));
    }
    Ok(base.powf(exp))
}

fn smin_value(a: f64, b: f64) -> f64 {
    0.5 * (a + b - ((a - b) * (a - b) + SMIN_EPS * SMIN_EPS).sqrt())
}

struct Dual {
    v: f64,
    g: Vec<f64>,
}

impl Dual {
    fn constant(v: f64, n: usize) -> Self {
        Dual { v, g: vec![0.0; n] }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Dual {
            v,
            g: self.g.iter().map(|gi| dv * gi).collect(),
        }
    }
}

fn eval_dual(e: &Expr, x: &[f64]) -> Result<Dual> {
    let n = x.len();
    Ok(match e {
        Expr::Const(c) => Dual::constant(*c, n),
        Expr::Var(i) => {
            let mut g = vec![0.0; n];
            g[*i] = 1.0;
            Dual { v: x[*i], g }
        }
        Expr::Add(a, b) => {
            let (da, db) = (eval_dual(a, x)?, eval_dual(b, x)?);
            Dual {
                v: da.v + db.v,
                g: da.g.iter().zip(&db.g).map(|(p, q)| p + q).collect(),
            }
        }
        Expr::Sub(a, b) => {
            let (da, db) = (eval_dual(a, x)?, eval_dual(b, x)?);
            Dual {
                v: da.v - db.v,
                g: da.g.iter().zip(&db.g).map(|(p, q)| p - q).collect(),
            }
        }
        Expr::Mul(a, b) => {
            let (da, db) = (eval_dual(a, x)?, eval_dual(b, x)?);
            Dual {
                v: da.v * db.v,
                g: da
                    .g
                    .iter()
                    .zip(&db.g)
                    .map(|(p, q)| p * db.v + q * da.v)
                    .collect(),
            }
        }
        Expr::Div(a, b) => {
            let (da, db) = (eval_dual(a, x)?, eval_dual(b, x)?);
            if db.v.abs() < DIV_FLOOR {
                return Err(Error::domain(format!("division by {}", db.v)));
            }
            let inv = 1.0 / db.v;
            Dual {
                v: da.v * inv,
                g: da
                    .g
                    .iter()
                    .zip(&db.g)
                    .map(|(p, q)| (p - q * da.v * inv) * inv)
                    .collect(),
            }
        }
        Expr::Pow(a, b) => {
            let da = eval_dual(a, x)?;
            let db = eval_dual(b, x)?;
            let v = pow_value(da.v, db.v)?;
            // d(a^b) = a^b (b' ln a + b a'/a); integer-constant exponents with
            // possibly non-positive base use the direct b*a^(b-1) rule
            if db.g.iter().all(|&q| q == 0.0) && db.v.fract() == 0.0 && db.v.abs() <= 64.0 {
                let k = db.v;
                let dv = if k == 0.0 {
                    0.0
                } else {
                    if k < 1.0 && k > 0.0 {
                        unreachable!()
                    } else if (k - 1.0).abs() < f64::EPSILON {
                        1.0
                    } else {
                        if k < 0.0 && da.v.abs() < DIV_FLOOR {
                            return Err(Error::domain("negative power of value near zero"));
                        }
                        k * da.v.powi(k as i32 - 1)
                    }
                };
                da.chain(v, dv)
            } else {
                if da.v <= 0.0 {
                    return Err(Error::domain(
                        "non-integer power of non-positive base",
                    ));
                }
                let ln = da.v.ln();
                Dual {
                    v,
                    g: da
                        .g
                        .iter()
                        .zip(&db.g)
                        .map(|(p, q)| v * (q * ln + db.v * p / da.v))
                        .collect(),
                }
            }
        }
        Expr::Neg(a) => {
            let da = eval_dual(a, x)?;
            Dual {
                v: -da.v,
                g: da.g.iter().map(|p| -p).collect(),
            }
        }
        Expr::Exp(a) => {
            let da = eval_dual(a, x)?;
            let v = da.v.exp();
            da.chain(v, v)
        }
        Expr::Sin(a) => {
            let da = eval_dual(a, x)?;
            let (v, dv) = (da.v.sin(), da.v.cos());
            da.chain(v, dv)
        }
        Expr::Cos(a) => {
            let da = eval_dual(a, x)?;
            let (v, dv) = (da.v.cos(), -da.v.sin());
            da.chain(v, dv)
        }
        Expr::Tanh(a) => {
            let da = eval_dual(a, x)?;
            let v = da.v.tanh();
            da.chain(v, 1.0 - v * v)
        }
        Expr::SMin(a, b) => {
            let (da, db) = (eval_dual(a, x)?, eval_dual(b, x)?);
            let root = ((da.v - db.v) * (da.v - db.v) + SMIN_EPS * SMIN_EPS).sqrt();
            let v = 0.5 * (da.v + db.v - root);
            let w = (da.v - db.v) / root;
            Dual {
                v,
                g: da
                    .g
                    .iter()
                    .zip(&db.g)
                    .map(|(p, q)| 0.5 * ((1.0 - w) * p + (1.0 + w) * q))
                    .collect(),
            }
        }
    })
}

// ---------------------------------------------------------------------------
// tokenizer and recursive-descent parser

#[derive(Debug, Clone)]
struct Token {
    text: String,
    offset: usize,
    kind: TokKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TokKind {
    Number(f64),
    Ident,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            '+' => TokKind::Plus,
            '-' => TokKind::Minus,
            '*' => TokKind::Star,
            '/' => TokKind::Slash,
            '^' => TokKind::Caret,
            '(' => TokKind::LParen,
            ')' => TokKind::RParen,
            ',' => TokKind::Comma,
            _ if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_digit()
                        || bytes[i] == b'.'
                        || bytes[i] == b'e'
                        || bytes[i] == b'E'
                        || ((bytes[i] == b'+' || bytes[i] == b'-')
                            && i > start
                            && (bytes[i - 1] == b'e' || bytes[i - 1] == b'E')))
                {
                    i += 1;
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    offset: start,
                    message: format!("bad number literal `{s}`"),
                })?;
                out.push(Token {
                    text: s.to_string(),
                    offset: start,
                    kind: TokKind::Number(v),
                });
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token {
                    text: text[start..i].to_string(),
                    offset: start,
                    kind: TokKind::Ident,
                });
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    offset: i,
                    message: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push(Token {
            text: c.to_string(),
            offset: start,
            kind,
        });
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn eat(&mut self, kind: TokKind) -> Result<()> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::Parse {
                offset: self.here(),
                message: format!("expected {kind:?}"),
            }),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut e = self.parse_term()?;
        while let Some(t) = self.peek() {
            match t.kind {
                TokKind::Plus => {
                    self.pos += 1;
                    e = Expr::Add(Box::new(e), Box::new(self.parse_term()?));
                }
                TokKind::Minus => {
                    self.pos += 1;
                    e = Expr::Sub(Box::new(e), Box::new(self.parse_term()?));
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut e = self.parse_factor()?;
        while let Some(t) = self.peek() {
            match t.kind {
                TokKind::Star => {
                    self.pos += 1;
                    e = Expr::Mul(Box::new(e), Box::new(self.parse_factor()?));
                }
                TokKind::Slash => {
                    self.pos += 1;
                    e = Expr::Div(Box::new(e), Box::new(self.parse_factor()?));
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn parse_factor(&mut self) -> Result<Expr> {
        if let Some(t) = self.peek() {
            if t.kind == TokKind::Minus {
                self.pos += 1;
                return Ok(Expr::Neg(Box::new(self.parse_factor()?)));
            }
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr> {
        let base = self.parse_atom()?;
        if let Some(t) = self.peek() {
            if t.kind == TokKind::Caret {
                self.pos += 1;
                let exp = self.parse_factor()?; // right associative, allows -2
                return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
            }
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        let Some(t) = self.peek().cloned() else {
            return Err(Error::Parse {
                offset: self.end,
                message: "unexpected end of input".into(),
            });
        };
        match t.kind {
            TokKind::Number(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            TokKind::LParen => {
                self.pos += 1;
                let e = self.parse_expr()?;
                self.eat(TokKind::RParen)?;
                Ok(e)
            }
            TokKind::Ident => {
                self.pos += 1;
                let is_call = matches!(self.peek(), Some(n) if n.kind == TokKind::LParen);
                if is_call {
                    self.eat(TokKind::LParen)?;
                    let name = t.text.as_str();
                    let e = match name {
                        "exp" | "sin" | "cos" | "tanh" => {
                            let a = self.parse_expr()?;
                            match name {
                                "exp" => Expr::Exp(Box::new(a)),
                                "sin" => Expr::Sin(Box::new(a)),
                                "cos" => Expr::Cos(Box::new(a)),
                                _ => Expr::Tanh(Box::new(a)),
                            }
                        }
                        "smin" => {
                            let a = self.parse_expr()?;
                            self.eat(TokKind::Comma)?;
                            let b = self.parse_expr()?;
                            Expr::SMin(Box::new(a), Box::new(b))
                        }
                        _ => {
                            return Err(Error::Parse {
                                offset: t.offset,
                                message: format!("unknown function `{}`", t.text),
                            })
                        }
                    };
                    self.eat(TokKind::RParen)?;
                    Ok(e)
                } else {
                    match self.vars.iter().position(|v| *v == t.text) {
                        Some(i) => Ok(Expr::Var(i)),
                        None => Err(Error::UnknownIdentifier {
                            name: t.text.clone(),
                            offset: t.offset,
                        }),
                    }
                }
            }
            _ => Err(Error::Parse {
                offset: t.offset,
                message: format!("unexpected `{}`", t.text),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_forms() {
        let ast = parse_expression("x0 - x1", &["t", "x0", "x1"]).unwrap();
        assert_eq!(ast.eval(&[0.0, 5.0, 3.0]).unwrap(), 2.0);
        let ast = parse_expression("sin(t)*x0^2", &["t", "x0"]).unwrap();
        let v = ast.eval(&[std::f64::consts::FRAC_PI_2, 3.0]).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_input_offset() {
        let err = parse_expression("x0 -", &["x0"]).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 4),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        let err = parse_expression("x0 + bogus", &["x0"]).unwrap_err();
        match err {
            Error::UnknownIdentifier { name, offset } => {
                assert_eq!(name, "bogus");
                assert_eq!(offset, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn power_precedence_over_unary_minus() {
        let ast = parse_expression("-x0^2", &["x0"]).unwrap();
        assert_eq!(ast.eval(&[3.0]).unwrap(), -9.0);
    }

    #[test]
    fn simple_derivatives() {
        let ast = parse_expression("x0^2", &["x0"]).unwrap();
        let (v, g) = ast.eval_with_derivatives(&[3.0]).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g, vec![6.0]);
        let ast = parse_expression("sin(t)", &["t"]).unwrap();
        let (v, g) = ast.eval_with_derivatives(&[0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn division_floor_is_a_domain_error() {
        let ast = parse_expression("1/x0", &["x0"]).unwrap();
        assert!(matches!(ast.eval(&[1e-13]), Err(Error::Domain(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vars = ["t", "x0", "x1"];
        let sources = [
            "sin(t)*x0 + cos(x1)",
            "tanh(x0*x1) - t^3 + exp(0.3*x0)",
            "x0/(1 + x1^2) + smin(x0, x1)",
            "(x0 + 2*x1)^2 - 0.5*t",
        ];
        for src in sources {
            let ast = parse_expression(src, &vars).unwrap();
            for _ in 0..50 {
                let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let Ok((_, g)) = ast.eval_with_derivatives(&p) else {
                    continue;
                };
                for k in 0..3 {
                    let h = 1e-6;
                    let mut pp = p.clone();
                    pp[k] += h;
                    let mut pm = p.clone();
                    pm[k] -= h;
                    let (Ok(fp), Ok(fm)) = (ast.eval(&pp), ast.eval(&pm)) else {
                        continue;
                    };
                    let fd = (fp - fm) / (2.0 * h);
                    let scale = 1.0_f64.max(fd.abs());
                    assert!(
                        (g[k] - fd).abs() / scale < 1e-6,
                        "{src}: grad[{k}]={} fd={fd}",
                        g[k]
                    );
                }
            }
        }
    }
}
