//! Model formulas: `response ~ terms [+ (1|group)]`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! formula := ident '~' sum
//! sum     := prod ('+' prod)*
//! prod    := inter ('*' inter)*
//! inter   := atom (':' atom)*
//! atom    := ident | '1' | '(' sum ')' | '(' '1' '|' ident ')'
//! ```
//!
//! `a*b` expands to `a + b + a:b`, and `:` distributes over sums. The random
//! intercept may only appear as a top-level summand.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown operator {op:?} at {pos}")]
    UnknownOperator { pos: usize, op: char },
    #[error("only one random intercept supported (second one at {pos})")]
    MultipleRandom { pos: usize },
}

/// A fixed-effect term: one variable, or the product of several.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Term(Vec<String>);

impl Term {
    pub fn factors(&self) -> &[String] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    fn same_set(&self, other: &Term) -> bool {
        self.0.len() == other.0.len() && self.0.iter().all(|f| other.0.contains(f))
    }

    fn product(&self, other: &Term) -> Term {
        let mut f = self.0.clone();
        for g in &other.0 {
            if !f.contains(g) {
                f.push(g.clone());
            }
        }
        Term(f)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(":"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub response: String,
    /// Non-intercept terms; the intercept is always included.
    pub fixed_terms: Vec<Term>,
    pub random_intercept: Option<String>,
}

impl ModelSpec {
    /// Every variable the model reads, response first, without duplicates.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = vec![self.response.as_str()];
        for t in &self.fixed_terms {
            for f in &t.0 {
                if !out.contains(&f.as_str()) {
                    out.push(f);
                }
            }
        }
        out
    }

    /// Main-effect variables in first-use order (excluding the response).
    pub fn predictors(&self) -> Vec<&str> {
        self.variables().into_iter().skip(1).collect()
    }

    /// Same fixed terms, no random intercept.
    pub fn without_random(&self) -> ModelSpec {
        ModelSpec {
            random_intercept: None,
            ..self.clone()
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self.fixed_terms.iter().map(Term::to_string).collect();
        if let Some(g) = &self.random_intercept {
            parts.push(format!("(1|{g})"));
        }
        if self.fixed_terms.is_empty() {
            parts.insert(0, "1".to_string());
        }
        write!(f, "{} ~ {}", self.response, parts.join(" + "))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                    s.push(c);
                    chars.next();
                } else {
                    break;
                }
            }
            out.push((i, Tok::Ident(s)));
        } else if "~+*:()|".contains(c) {
            out.push((i, Tok::Op(c)));
            chars.next();
        } else {
            return Err(FormulaError::UnknownOperator { pos: i, op: c });
        }
    }
    Ok(out)
}

enum Atom {
    Terms(Vec<Term>),
    Random(String),
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    randoms: Vec<(usize, String)>,
}

impl Parser {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, FormulaError> {
        Err(FormulaError::Syntax {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<(), FormulaError> {
        if self.eat(op) {
            Ok(())
        } else {
            self.err(format!("expected '{op}'"))
        }
    }

    fn ident(&mut self) -> Result<String, FormulaError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn sum(&mut self, top: bool) -> Result<Vec<Term>, FormulaError> {
        let mut terms = self.prod(top)?;
        while self.eat('+') {
            terms.extend(self.prod(top)?);
        }
        Ok(terms)
    }

    fn prod(&mut self, top: bool) -> Result<Vec<Term>, FormulaError> {
        let start = self.at;
        let first = self.inter()?;
        let mut acc = match first {
            Atom::Random(g) => {
                if !top || matches!(self.peek(), Some(Tok::Op('*' | ':'))) {
                    self.at = start;
                    return self.err("random intercept must be a top-level term");
                }
                self.randoms.push((self.toks[start].0, g));
                return Ok(Vec::new());
            }
            Atom::Terms(t) => t,
        };
        while self.eat('*') {
            let rhs = match self.inter()? {
                Atom::Terms(t) => t,
                Atom::Random(_) => return self.err("random intercept must be a top-level term"),
            };
            let mut next = acc.clone();
            next.extend(rhs.iter().cloned());
            next.extend(cross(&acc, &rhs));
            acc = next;
        }
        Ok(acc)
    }

    fn inter(&mut self) -> Result<Atom, FormulaError> {
        let first = self.atom()?;
        if self.peek() != Some(&Tok::Op(':')) {
            return Ok(first);
        }
        let Atom::Terms(mut acc) = first else {
            return self.err("random intercept must be a top-level term");
        };
        while self.eat(':') {
            match self.atom()? {
                Atom::Terms(rhs) => acc = cross(&acc, &rhs),
                Atom::Random(_) => return self.err("random intercept must be a top-level term"),
            }
        }
        Ok(Atom::Terms(acc))
    }

    fn atom(&mut self) -> Result<Atom, FormulaError> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.at += 1;
                if s == "1" {
                    Ok(Atom::Terms(vec![Term(Vec::new())]))
                } else if s.chars().all(|c| c.is_ascii_digit() || c == '.') {
                    self.at -= 1;
                    self.err(format!("numeric literal {s:?} is not a variable"))
                } else {
                    Ok(Atom::Terms(vec![Term(vec![s])]))
                }
            }
            Some(Tok::Op('(')) => {
                self.at += 1;
                let is_random = matches!(
                    (self.toks.get(self.at), self.toks.get(self.at + 1)),
                    (Some((_, Tok::Ident(one))), Some((_, Tok::Op('|')))) if one == "1"
                );
                if is_random {
                    self.at += 2;
                    let g = self.ident()?;
                    self.expect(')')?;
                    return Ok(Atom::Random(g));
                }
                let inner = self.sum(false)?;
                self.expect(')')?;
                Ok(Atom::Terms(inner))
            }
            Some(Tok::Op(c)) => self.err(format!("unexpected '{c}'")),
            None => self.err("unexpected end of formula"),
        }
    }
}

fn cross(a: &[Term], b: &[Term]) -> Vec<Term> {
    a.iter().flat_map(|x| b.iter().map(move |y| x.product(y))).collect()
}

pub fn parse_formula(src: &str) -> Result<ModelSpec, FormulaError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        at: 0,
        end: src.len(),
        randoms: Vec::new(),
    };
    let response = p.ident()?;
    if response.chars().all(|c| c.is_ascii_digit() || c == '.') {
        p.at = 0;
        return p.err("response must be a variable");
    }
    p.expect('~')?;
    let raw = p.sum(true)?;
    if p.at < p.toks.len() {
        return match p.peek() {
            Some(Tok::Op('|')) => Err(FormulaError::UnknownOperator { pos: p.pos(), op: '|' }),
            _ => p.err("unexpected trailing input"),
        };
    }
    if let Some((pos, _)) = p.randoms.get(1) {
        return Err(FormulaError::MultipleRandom { pos: *pos });
    }

    let mut fixed: Vec<Term> = Vec::new();
    for t in raw {
        if t.degree() > 0 && !fixed.iter().any(|f| f.same_set(&t)) {
            fixed.push(t);
        }
    }
    fixed.sort_by_key(Term::degree);
    Ok(ModelSpec {
        response,
        fixed_terms: fixed,
        random_intercept: p.randoms.pop().map(|r| r.1),
    })
}
