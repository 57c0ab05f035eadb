//! Recursive-descent LTL parser.
//!
//! Precedence, loosest first: `->` (right assoc), `xor`/`^`, `|`, `&`,
//! `U`/`R` (right assoc), then the unary operators `!`, `X`, `F`, `G`.

use super::{Atom, Ltl, LtlError, StateVar};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String, Option<String>),
    Not,
    And,
    Or,
    Xor,
    Implies,
    LParen,
    RParen,
    Eof,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl<'a> Lexer<'a> {
    fn next_tok(&mut self) -> Result<(usize, Tok), LtlError> {
        let rest = &self.src[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
        let start = self.pos;
        let mut chars = trimmed.chars();
        let c = match chars.next() {
            None => return Ok((start, Tok::Eof)),
            Some(c) => c,
        };
        let two = trimmed.get(..2).unwrap_or("");
        let (len, tok) = match c {
            '(' => (1, Tok::LParen),
            ')' => (1, Tok::RParen),
            '!' | '~' => (1, Tok::Not),
            '^' => (1, Tok::Xor),
            '&' => (if two == "&&" { 2 } else { 1 }, Tok::And),
            '|' => (if two == "||" { 2 } else { 1 }, Tok::Or),
            '-' | '=' if two == "->" || two == "=>" => (2, Tok::Implies),
            c if c.is_ascii_alphabetic() || c == '_' => {
                let name_len = trimmed.find(|c| !is_ident_char(c)).unwrap_or(trimmed.len());
                let name = &trimmed[..name_len];
                if trimmed[name_len..].starts_with('@') {
                    let tag_src = &trimmed[name_len + 1..];
                    let tag_len = tag_src.find(|c| !is_ident_char(c)).unwrap_or(tag_src.len());
                    if tag_len == 0 {
                        return Err(LtlError::Syntax {
                            pos: start + name_len + 1,
                            msg: "expected state variable after `@`".into(),
                        });
                    }
                    let tag = tag_src[..tag_len].to_string();
                    (name_len + 1 + tag_len, Tok::Ident(name.to_string(), Some(tag)))
                } else if name == "xor" {
                    (name_len, Tok::Xor)
                } else {
                    (name_len, Tok::Ident(name.to_string(), None))
                }
            }
            other => {
                return Err(LtlError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        self.pos += len;
        Ok((start, tok))
    }
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    i: usize,
    aps: Option<&'a [&'a str]>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].1
    }

    fn pos(&self) -> usize {
        self.toks[self.i].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].1.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, LtlError> {
        Err(LtlError::Syntax { pos: self.pos(), msg: msg.into() })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(n, None) if n == kw)
    }

    fn implies(&mut self) -> Result<Ltl, LtlError> {
        let lhs = self.xor()?;
        if *self.peek() == Tok::Implies {
            self.bump();
            let rhs = self.implies()?;
            return Ok(Ltl::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn xor(&mut self) -> Result<Ltl, LtlError> {
        let mut lhs = self.or()?;
        while *self.peek() == Tok::Xor {
            self.bump();
            lhs = Ltl::xor(lhs, self.or()?);
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Ltl, LtlError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Ltl::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Ltl, LtlError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Ltl::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Ltl, LtlError> {
        let lhs = self.unary()?;
        if self.is_kw("U") {
            self.bump();
            return Ok(Ltl::until(lhs, self.until()?));
        }
        if self.is_kw("R") {
            self.bump();
            return Ok(Ltl::release(lhs, self.until()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ltl, LtlError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Ltl::not(self.unary()?));
        }
        for (kw, mk) in [
            ("X", Ltl::next as fn(Ltl) -> Ltl),
            ("F", Ltl::eventually),
            ("G", Ltl::globally),
        ] {
            if self.is_kw(kw) {
                self.bump();
                return Ok(mk(self.unary()?));
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Ltl, LtlError> {
        let pos = self.pos();
        match self.bump() {
            Tok::LParen => {
                let f = self.implies()?;
                if *self.peek() != Tok::RParen {
                    return self.syntax("expected `)`");
                }
                self.bump();
                Ok(f)
            }
            Tok::Ident(name, None) if name == "true" => Ok(Ltl::True),
            Tok::Ident(name, None) if name == "false" => Ok(Ltl::False),
            Tok::Ident(name, None) => Err(LtlError::Syntax {
                pos,
                msg: format!("atom `{name}` lacks a state-variable tag (`{name}@1`)"),
            }),
            Tok::Ident(name, Some(tag)) => {
                if let Some(aps) = self.aps {
                    if !aps.contains(&name.as_str()) {
                        return Err(LtlError::UnknownAp(name));
                    }
                }
                let var = if tag.chars().all(|c| c.is_ascii_digit()) {
                    match tag.parse::<usize>() {
                        Ok(k) if k >= 1 => StateVar::Index(k - 1),
                        _ => {
                            return Err(LtlError::Syntax {
                                pos,
                                msg: format!("agent index `{tag}` must be at least 1"),
                            })
                        }
                    }
                } else {
                    StateVar::Name(tag)
                };
                Ok(Ltl::Atom(Atom { ap: name, var }))
            }
            Tok::Eof => Err(LtlError::Syntax { pos, msg: "unexpected end of formula".into() }),
            t => Err(LtlError::Syntax { pos, msg: format!("unexpected token {t:?}") }),
        }
    }
}

fn parse(text: &str, aps: Option<&[&str]>) -> Result<Ltl, LtlError> {
    let mut lex = Lexer { src: text, pos: 0 };
    let mut toks = Vec::new();
    loop {
        let t = lex.next_tok()?;
        let eof = t.1 == Tok::Eof;
        toks.push(t);
        if eof {
            break;
        }
    }
    let mut p = Parser { toks, i: 0, aps };
    let f = p.implies()?;
    if *p.peek() != Tok::Eof {
        return p.syntax("trailing input");
    }
    Ok(f)
}

pub fn parse_ltl(text: &str) -> Result<Ltl, LtlError> {
    parse(text, None)
}

/// Parses and checks every atom against a declared proposition set.
pub fn parse_ltl_with_aps(text: &str, aps: &[&str]) -> Result<Ltl, LtlError> {
    parse(text, Some(aps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: usize) -> Ltl {
        Ltl::atom("T", i)
    }

    #[test]
    fn eventually_conjunction() {
        let f = parse_ltl("F (T@1 & T@2)").unwrap();
        assert_eq!(f, Ltl::eventually(Ltl::and(t(0), t(1))));
    }

    #[test]
    fn until_with_negation() {
        let f = parse_ltl("(!T@1) U T@2").unwrap();
        assert_eq!(f, Ltl::until(Ltl::not(t(0)), t(1)));
    }

    #[test]
    fn globally_implies() {
        let f = parse_ltl("G (T@1 -> T@2)").unwrap();
        assert_eq!(f, Ltl::globally(Ltl::implies(t(0), t(1))));
    }

    #[test]
    fn precedence() {
        let f = parse_ltl("a@1 | b@1 & c@1 U d@1 -> e@1 xor f@1").unwrap();
        let a = |n: &str| Ltl::atom(n, 0);
        let expected = Ltl::implies(
            Ltl::or(a("a"), Ltl::and(a("b"), Ltl::until(a("c"), a("d")))),
            Ltl::xor(a("e"), a("f")),
        );
        assert_eq!(f, expected);
        let g = parse_ltl("!a@1 U b@1").unwrap();
        assert_eq!(g, Ltl::until(Ltl::not(a("a")), a("b")));
    }

    #[test]
    fn named_tags() {
        let f = parse_ltl("T@x1 & S@s").unwrap();
        assert_eq!(f.to_string(), "T@x1 & S@s");
    }

    #[test]
    fn errors_carry_position() {
        assert_eq!(
            parse_ltl("F (T@1 & )").unwrap_err(),
            LtlError::Syntax { pos: 9, msg: "unexpected token RParen".into() }
        );
        assert!(matches!(parse_ltl("T@0"), Err(LtlError::Syntax { pos: 0, .. })));
        assert!(matches!(parse_ltl("T"), Err(LtlError::Syntax { .. })));
        assert!(matches!(parse_ltl("T@1 T@2"), Err(LtlError::Syntax { pos: 4, .. })));
        assert_eq!(
            parse_ltl_with_aps("F goal@1", &["T"]).unwrap_err(),
            LtlError::UnknownAp("goal".into())
        );
    }
}
