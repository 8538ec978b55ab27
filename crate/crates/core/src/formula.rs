//! Density formulas such as `D ~ s(depth, k = 6, fx = TRUE) + distance_to_coast`.
//!
//! Grammar: `D ~ term (+ term)*` where a term is `1`, a covariate name, a
//! power `name2` / `name3`, a log `logname`, a fixed-df smooth
//! `s(name, k = int, fx = TRUE)`, or an interaction `a:b`. Names are resolved
//! against the covariates available on the mesh.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

pub const MIN_SMOOTH_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Linear(String),
    Power(String, u8),
    Log(String),
    Smooth { covariate: String, k: usize },
    Interaction(String, String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Linear(n) => write!(f, "{n}"),
            Term::Power(n, p) => write!(f, "{n}{p}"),
            Term::Log(n) => write!(f, "log{n}"),
            Term::Smooth { covariate, k } => write!(f, "s({covariate}, k = {k}, fx = TRUE)"),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

/// A parsed density formula. The first term is always the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFormula {
    terms: Vec<Term>,
}

impl ModelFormula {
    pub fn intercept_only() -> Self {
        Self { terms: vec![Term::Intercept] }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_intercept_only(&self) -> bool {
        self.terms.len() == 1
    }

    /// Covariates referenced by any term.
    pub fn covariates(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for t in &self.terms {
            match t {
                Term::Intercept => {}
                Term::Linear(n) | Term::Power(n, _) | Term::Log(n) => out.push(n.as_str()),
                Term::Smooth { covariate, .. } => out.push(covariate.as_str()),
                Term::Interaction(a, b) => {
                    out.push(a.as_str());
                    out.push(b.as_str());
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_intercept_only() {
            return write!(f, "D ~ 1");
        }
        write!(f, "D ~ ")?;
        for (i, t) in self.terms[1..].iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Sym(char),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_' || chars[i].1 == '.') {
                i += 1;
            }
            out.push((pos, Tok::Ident(chars[start..i].iter().map(|c| c.1).collect())));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].1.is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().map(|c| c.1).collect();
            let v = s.parse().map_err(|_| Error::Formula { position: pos, message: format!("bad integer `{s}`") })?;
            out.push((pos, Tok::Int(v)));
        } else if "~+:(),=".contains(c) {
            out.push((pos, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(Error::Formula { position: pos, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    covariates: &'a [String],
}

impl Parser<'_> {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Formula { position: self.pos(), message: message.into() })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|t| t.1.clone());
        self.at += 1;
        t
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Some(Tok::Sym(s)) if *s == c => {
                self.at += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{c}`")),
        }
    }

    fn expect_ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.err("expected a name"),
        }
    }

    fn known(&self, name: &str) -> bool {
        self.covariates.iter().any(|c| c == name)
    }

    fn covariate(&mut self) -> Result<String> {
        let pos = self.pos();
        let name = self.expect_ident()?;
        if self.known(&name) {
            Ok(name)
        } else {
            Err(Error::Formula { position: pos, message: format!("unknown covariate `{name}`") })
        }
    }

    fn term(&mut self) -> Result<Term> {
        let pos = self.pos();
        match self.next() {
            Some(Tok::Int(1)) => Ok(Term::Intercept),
            Some(Tok::Ident(name)) if name == "s" && self.peek() == Some(&Tok::Sym('(')) => {
                self.expect_sym('(')?;
                let covariate = self.covariate()?;
                let mut k = None;
                while self.peek() == Some(&Tok::Sym(',')) {
                    self.at += 1;
                    let key_pos = self.pos();
                    let key = self.expect_ident()?;
                    self.expect_sym('=')?;
                    match key.as_str() {
                        "k" => match self.next() {
                            Some(Tok::Int(v)) => k = Some(v),
                            _ => {
                                self.at -= 1;
                                return self.err("expected an integer for k");
                            }
                        },
                        "fx" => match self.next() {
                            Some(Tok::Ident(v)) if v == "TRUE" || v == "T" => {}
                            _ => {
                                return Err(Error::Formula {
                                    position: key_pos,
                                    message: "only fixed-df smooths (fx = TRUE) are supported".into(),
                                })
                            }
                        },
                        other => {
                            return Err(Error::Formula {
                                position: key_pos,
                                message: format!("unknown smooth argument `{other}`"),
                            })
                        }
                    }
                }
                self.expect_sym(')')?;
                let k = k.ok_or(Error::Formula { position: pos, message: "smooth needs k".into() })?;
                if k < MIN_SMOOTH_K {
                    return Err(Error::Formula {
                        position: pos,
                        message: format!("smooth basis dimension k = {k} is below {MIN_SMOOTH_K}"),
                    });
                }
                Ok(Term::Smooth { covariate, k })
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::Sym(':')) {
                    if !self.known(&name) {
                        return Err(Error::Formula { position: pos, message: format!("unknown covariate `{name}`") });
                    }
                    self.at += 1;
                    let other = self.covariate()?;
                    return Ok(Term::Interaction(name, other));
                }
                if self.known(&name) {
                    return Ok(Term::Linear(name));
                }
                if let Some(base) = name.strip_suffix('2').filter(|b| self.known(b)) {
                    return Ok(Term::Power(base.to_string(), 2));
                }
                if let Some(base) = name.strip_suffix('3').filter(|b| self.known(b)) {
                    return Ok(Term::Power(base.to_string(), 3));
                }
                if let Some(base) = name.strip_prefix("log").filter(|b| self.known(b)) {
                    return Ok(Term::Log(base.to_string()));
                }
                Err(Error::Formula { position: pos, message: format!("unknown covariate `{name}`") })
            }
            _ => Err(Error::Formula { position: pos, message: "expected a term".into() }),
        }
    }
}

/// Parses a density formula, resolving names against `covariates`.
pub fn parse_formula(text: &str, covariates: &[String]) -> Result<ModelFormula> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, end: text.len(), covariates };
    match p.next() {
        Some(Tok::Ident(d)) if d == "D" => {}
        _ => return Err(Error::Formula { position: 0, message: "formula must start with `D ~`".into() }),
    }
    p.expect_sym('~')?;
    let mut terms = vec![p.term()?];
    while p.peek() == Some(&Tok::Sym('+')) {
        p.at += 1;
        terms.push(p.term()?);
    }
    if p.at < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    let intercepts = terms.iter().filter(|t| **t == Term::Intercept).count();
    if intercepts > 1 {
        return Err(Error::Formula { position: 0, message: "intercept given more than once".into() });
    }
    let mut out = vec![Term::Intercept];
    for t in terms.into_iter().filter(|t| *t != Term::Intercept) {
        if out.contains(&t) {
            return Err(Error::Formula { position: 0, message: format!("term `{t}` repeated") });
        }
        out.push(t);
    }
    Ok(ModelFormula { terms: out })
}

/// Convenience for the usual case-study covariates.
pub fn default_covariates() -> Vec<String> {
    vec!["depth".to_string(), "distance_to_coast".to_string()]
}

/// The 35 candidate density formulas for the bowhead case study, in their
/// original numbering (index 0 is model 1).
pub const CANDIDATE_FORMULAS: [&str; 35] = [
    "D ~ 1",
    "D ~ distance_to_coast + distance_to_coast2",
    "D ~ distance_to_coast + distance_to_coast2 + distance_to_coast3",
    "D ~ depth",
    "D ~ depth + depth2",
    "D ~ logdepth",
    "D ~ logdepth + depth + depth2",
    "D ~ logdepth + distance_to_coast + distance_to_coast2 + distance_to_coast3",
    "D ~ logdepth + depth + distance_to_coast + distance_to_coast2",
    "D ~ logdepth + depth + depth2 + distance_to_coast",
    "D ~ depth + distance_to_coast",
    "D ~ depth + distance_to_coast + distance_to_coast2",
    "D ~ depth + depth2 + distance_to_coast",
    "D ~ depth + depth2 + distance_to_coast + distance_to_coast2",
    "D ~ depth + depth2 + distance_to_coast + distance_to_coast2 + distance_to_coast3",
    "D ~ s(depth, k = 3, fx = TRUE)",
    "D ~ s(depth, k = 4, fx = TRUE)",
    "D ~ s(depth, k = 5, fx = TRUE)",
    "D ~ s(depth, k = 6, fx = TRUE)",
    "D ~ s(depth, k = 7, fx = TRUE)",
    "D ~ s(depth, k = 8, fx = TRUE)",
    "D ~ s(depth, k = 6, fx = TRUE) + distance_to_coast",
    "D ~ s(depth, k = 6, fx = TRUE) + distance_to_coast + distance_to_coast2",
    "D ~ s(distance_to_coast, k = 3, fx = TRUE)",
    "D ~ s(distance_to_coast, k = 4, fx = TRUE)",
    "D ~ s(distance_to_coast, k = 5, fx = TRUE)",
    "D ~ s(distance_to_coast, k = 6, fx = TRUE)",
    "D ~ s(distance_to_coast, k = 7, fx = TRUE)",
    "D ~ s(distance_to_coast, k = 8, fx = TRUE)",
    "D ~ s(distance_to_coast, k = 6, fx = TRUE) + depth",
    "D ~ s(distance_to_coast, k = 6, fx = TRUE) + depth + depth2",
    "D ~ s(depth, k = 4, fx = TRUE) + s(distance_to_coast, k = 4, fx = TRUE)",
    "D ~ s(depth, k = 6, fx = TRUE) + s(distance_to_coast, k = 6, fx = TRUE)",
    "D ~ distance_to_coast + depth + depth:distance_to_coast",
    "D ~ distance_to_coast + distance_to_coast2 + depth + depth2 + depth:distance_to_coast",
];
