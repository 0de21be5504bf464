//! The theory DSL: parser with line/column diagnostics and a printer whose
//! output re-parses to the same value.
//!
//! Grammar:
//!
//! ```text
//! theory NAME [: PARENT] {
//!   sort S;
//!   rel R(S, ...) [symmetric] [irreflexive];
//!   forbid v:S, w:S : lit & lit & ... ;     # lit = R(v,w) | !R(v,w) | v != w
//!   gamma NAME { x: S; formulas: R(x,y), x = y; }
//! }
//! ```
//!
//! `symmetric` and `irreflexive` are sugar expanded to forbidden configs at
//! parse time; the internal representation is sugar-free. `#` starts a
//! comment to end of line.

use serde::{Deserialize, Serialize};

use crate::sig::{ForbiddenConfig, Literal, RelDecl, Signature, SortId, UniversalTheory};
use crate::PcError;

/// Argument slot of a gamma atom: a distinguished variable or a local
/// parameter variable of the formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GArg {
    X(usize),
    Y(usize),
}

/// One atomic formula of a gamma catalog declaration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GammaAtom {
    /// `None` encodes equality between a distinguished variable and the
    /// single parameter slot.
    pub rel: Option<usize>,
    pub args: Vec<GArg>,
    pub param_sorts: Vec<SortId>,
}

/// A named gamma declaration: distinguished variables and atomic formulas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub name: String,
    pub x_sorts: Vec<SortId>,
    pub atoms: Vec<GammaAtom>,
}

/// A parsed theory together with its gamma declarations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTheory {
    pub theory: UniversalTheory,
    pub gammas: Vec<GammaSpec>,
    pub line: usize,
}

/// A parsed document: one or more theories, later ones may extend earlier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoryDoc {
    pub theories: Vec<ParsedTheory>,
}

impl TheoryDoc {
    /// The theory a command acts on by default: the last one declared.
    pub fn primary(&self) -> &ParsedTheory {
        self.theories.last().expect("parser rejects empty documents")
    }

    pub fn get(&self, name: &str) -> Option<&ParsedTheory> {
        self.theories.iter().find(|t| t.theory.name == name)
    }

    pub fn gamma(&self, theory: &str, gamma: &str) -> Option<&GammaSpec> {
        self.get(theory)?.gammas.iter().find(|g| g.name == gamma)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Colon,
    Semi,
    Comma,
    Amp,
    Bang,
    NotEq,
    Eq,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(text: &str) -> Result<Vec<Spanned>, PcError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (l, co) = (line, col);
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                chars.next();
                col += 1;
            }
            '#' => {
                while let Some(&c2) = chars.peek() {
                    if c2 == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '(' | ')' | '{' | '}' | ':' | ';' | ',' | '&' => {
                chars.next();
                col += 1;
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    ':' => Tok::Colon,
                    ';' => Tok::Semi,
                    ',' => Tok::Comma,
                    _ => Tok::Amp,
                };
                out.push(Spanned { tok, line: l, col: co });
            }
            '!' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'=') {
                    chars.next();
                    col += 1;
                    out.push(Spanned { tok: Tok::NotEq, line: l, col: co });
                } else {
                    out.push(Spanned { tok: Tok::Bang, line: l, col: co });
                }
            }
            '=' => {
                chars.next();
                col += 1;
                out.push(Spanned { tok: Tok::Eq, line: l, col: co });
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut s = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2.is_alphanumeric() || c2 == '_' {
                        s.push(c2);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Tok::Ident(s), line: l, col: co });
            }
            other => {
                return Err(PcError::Parse {
                    line,
                    col,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((0, 0))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PcError> {
        let (line, col) = self.here();
        Err(PcError::Parse {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn eat(&mut self, t: &Tok) -> Result<(), PcError> {
        if self.peek() == Some(t) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {t:?}, found {:?}", self.peek()))
        }
    }

    fn ident(&mut self) -> Result<String, PcError> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {other:?}")),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if self.peek() == Some(&Tok::Ident(kw.to_string())) {
            self.pos += 1;
            true
        } else {
            false
        }
    }
}

/// Parse a `.thy` document.
pub fn parse_theory(text: &str) -> Result<TheoryDoc, PcError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0 };
    let mut doc = TheoryDoc { theories: Vec::new() };
    while p.peek().is_some() {
        let t = parse_one_theory(&mut p, &doc)?;
        doc.theories.push(t);
    }
    if doc.theories.is_empty() {
        return Err(PcError::Parse {
            line: 1,
            col: 1,
            msg: "empty document: expected at least one `theory` block".into(),
        });
    }
    Ok(doc)
}

fn parse_one_theory(p: &mut Parser, doc: &TheoryDoc) -> Result<ParsedTheory, PcError> {
    let (line, _) = p.here();
    if !p.keyword("theory") {
        return p.err("expected `theory`");
    }
    let name = p.ident()?;
    let mut sorts: Vec<String> = Vec::new();
    let mut rels: Vec<RelDecl> = Vec::new();
    let mut forbidden: Vec<ForbiddenConfig> = Vec::new();
    let mut gammas: Vec<GammaSpec> = Vec::new();
    if p.peek() == Some(&Tok::Colon) {
        p.eat(&Tok::Colon)?;
        let parent = p.ident()?;
        let parent_t = match doc.get(&parent) {
            Some(t) => t,
            None => return p.err(format!("unknown parent theory `{parent}`")),
        };
        sorts = parent_t.theory.signature.sorts.clone();
        rels = parent_t.theory.signature.relations.clone();
        forbidden = parent_t.theory.forbidden.clone();
        gammas = parent_t.gammas.clone();
    }
    p.eat(&Tok::LBrace)?;
    // two passes are avoided by building the signature incrementally; configs
    // may only use relations declared above them.
    while p.peek() != Some(&Tok::RBrace) {
        if p.keyword("sort") {
            let s = p.ident()?;
            if sorts.contains(&s) {
                return p.err(format!("duplicate sort `{s}`"));
            }
            sorts.push(s);
            p.eat(&Tok::Semi)?;
        } else if p.keyword("rel") {
            let rname = p.ident()?;
            p.eat(&Tok::LParen)?;
            let mut profile = Vec::new();
            loop {
                let s = p.ident()?;
                match sorts.iter().position(|x| *x == s) {
                    Some(id) => profile.push(id),
                    None => return p.err(format!("unknown sort `{s}`")),
                }
                if p.peek() == Some(&Tok::Comma) {
                    p.eat(&Tok::Comma)?;
                } else {
                    break;
                }
            }
            p.eat(&Tok::RParen)?;
            let rid = rels.len();
            rels.push(RelDecl {
                name: rname.clone(),
                profile: profile.clone(),
            });
            let mut symmetric = false;
            let mut irreflexive = false;
            loop {
                if p.keyword("symmetric") {
                    symmetric = true;
                } else if p.keyword("irreflexive") {
                    irreflexive = true;
                } else {
                    break;
                }
            }
            p.eat(&Tok::Semi)?;
            if symmetric || irreflexive {
                if profile.len() != 2 || profile[0] != profile[1] {
                    return p.err(format!(
                        "`symmetric`/`irreflexive` need a binary homogeneous relation, `{rname}` is not"
                    ));
                }
                let sig = Signature::new(sorts.clone(), rels.clone())
                    .map_err(|e| to_parse(p, e))?;
                if irreflexive {
                    forbidden.push(
                        ForbiddenConfig::new(
                            vec![profile[0]],
                            vec![Literal { rel: rid, args: vec![0, 0], positive: true }],
                            vec![],
                            &sig,
                        )
                        .map_err(|e| to_parse(p, e))?,
                    );
                }
                if symmetric {
                    forbidden.push(
                        ForbiddenConfig::new(
                            vec![profile[0], profile[0]],
                            vec![
                                Literal { rel: rid, args: vec![0, 1], positive: true },
                                Literal { rel: rid, args: vec![1, 0], positive: false },
                            ],
                            vec![],
                            &sig,
                        )
                        .map_err(|e| to_parse(p, e))?,
                    );
                }
            }
        } else if p.keyword("forbid") {
            let sig = Signature::new(sorts.clone(), rels.clone()).map_err(|e| to_parse(p, e))?;
            let cfg = parse_forbid(p, &sig)?;
            forbidden.push(cfg);
        } else if p.keyword("gamma") {
            let sig = Signature::new(sorts.clone(), rels.clone()).map_err(|e| to_parse(p, e))?;
            let g = parse_gamma(p, &sig)?;
            if gammas.iter().any(|x| x.name == g.name) {
                return p.err(format!("duplicate gamma `{}`", g.name));
            }
            gammas.push(g);
        } else {
            return p.err("expected `sort`, `rel`, `forbid`, `gamma`, or `}`");
        }
    }
    p.eat(&Tok::RBrace)?;
    let signature = Signature::new(sorts, rels).map_err(|e| to_parse(p, e))?;
    let theory = UniversalTheory {
        name,
        signature,
        forbidden,
    };
    Ok(ParsedTheory {
        theory,
        gammas,
        line,
    })
}

fn to_parse(p: &Parser, e: PcError) -> PcError {
    let (line, col) = p.here();
    PcError::Parse {
        line,
        col,
        msg: format!("{e}"),
    }
}

fn parse_forbid(p: &mut Parser, sig: &Signature) -> Result<ForbiddenConfig, PcError> {
    // variable declarations: v:S, w:S, ... up to `:`
    let mut names: Vec<String> = Vec::new();
    let mut var_sorts: Vec<SortId> = Vec::new();
    loop {
        let v = p.ident()?;
        p.eat(&Tok::Colon)?;
        let s = p.ident()?;
        let sid = match sig.sort_id(&s) {
            Some(id) => id,
            None => return p.err(format!("unknown sort `{s}`")),
        };
        if names.contains(&v) {
            return p.err(format!("duplicate variable `{v}`"));
        }
        names.push(v);
        var_sorts.push(sid);
        if p.peek() == Some(&Tok::Comma) {
            p.eat(&Tok::Comma)?;
        } else {
            break;
        }
    }
    p.eat(&Tok::Colon)?;
    let mut literals = Vec::new();
    let mut distinct = Vec::new();
    loop {
        let negated = if p.peek() == Some(&Tok::Bang) {
            p.eat(&Tok::Bang)?;
            true
        } else {
            false
        };
        let head = p.ident()?;
        if !negated && p.peek() == Some(&Tok::NotEq) {
            p.eat(&Tok::NotEq)?;
            let rhs = p.ident()?;
            let a = var_index(p, &names, &head)?;
            let b = var_index(p, &names, &rhs)?;
            distinct.push((a, b));
        } else {
            let rid = match sig.rel_id(&head) {
                Some(id) => id,
                None => return p.err(format!("unknown relation `{head}`")),
            };
            p.eat(&Tok::LParen)?;
            let mut args = Vec::new();
            loop {
                let v = p.ident()?;
                args.push(var_index(p, &names, &v)?);
                if p.peek() == Some(&Tok::Comma) {
                    p.eat(&Tok::Comma)?;
                } else {
                    break;
                }
            }
            p.eat(&Tok::RParen)?;
            if args.len() != sig.relations[rid].arity() {
                return p.err(format!(
                    "`{head}` expects {} arguments, got {}",
                    sig.relations[rid].arity(),
                    args.len()
                ));
            }
            literals.push(Literal {
                rel: rid,
                args,
                positive: !negated,
            });
        }
        if p.peek() == Some(&Tok::Amp) {
            p.eat(&Tok::Amp)?;
        } else {
            break;
        }
    }
    p.eat(&Tok::Semi)?;
    ForbiddenConfig::new(var_sorts, literals, distinct, sig).map_err(|e| to_parse(p, e))
}

fn var_index(p: &Parser, names: &[String], v: &str) -> Result<usize, PcError> {
    names
        .iter()
        .position(|n| n == v)
        .ok_or_else(|| {
            let (line, col) = p.here();
            PcError::Parse {
                line,
                col,
                msg: format!("undeclared variable `{v}`"),
            }
        })
}

fn parse_gamma(p: &mut Parser, sig: &Signature) -> Result<GammaSpec, PcError> {
    let name = p.ident()?;
    p.eat(&Tok::LBrace)?;
    // x declarations: `x: S;` possibly `x: S, S` for a tuple
    let mut x_names: Vec<String> = Vec::new();
    let mut x_sorts: Vec<SortId> = Vec::new();
    loop {
        let v = p.ident()?;
        p.eat(&Tok::Colon)?;
        let s = p.ident()?;
        let sid = match sig.sort_id(&s) {
            Some(id) => id,
            None => return p.err(format!("unknown sort `{s}`")),
        };
        x_names.push(v);
        x_sorts.push(sid);
        if p.peek() == Some(&Tok::Comma) {
            p.eat(&Tok::Comma)?;
        } else {
            break;
        }
    }
    p.eat(&Tok::Semi)?;
    if !p.keyword("formulas") {
        return p.err("expected `formulas`");
    }
    p.eat(&Tok::Colon)?;
    let mut atoms = Vec::new();
    loop {
        let head = p.ident()?;
        if p.peek() == Some(&Tok::Eq) {
            // equality atom x = y
            p.eat(&Tok::Eq)?;
            let rhs = p.ident()?;
            let xi = match x_names.iter().position(|n| *n == head) {
                Some(i) => i,
                None => return p.err(format!("equality must start from a distinguished variable, `{head}` is not one")),
            };
            if x_names.contains(&rhs) {
                return p.err("equality between two distinguished variables is not a catalog atom");
            }
            atoms.push(GammaAtom {
                rel: None,
                args: vec![GArg::X(xi), GArg::Y(0)],
                param_sorts: vec![x_sorts[xi]],
            });
        } else {
            let rid = match sig.rel_id(&head) {
                Some(id) => id,
                None => return p.err(format!("unknown relation `{head}`")),
            };
            p.eat(&Tok::LParen)?;
            let mut args: Vec<GArg> = Vec::new();
            let mut local: Vec<String> = Vec::new();
            let mut param_sorts: Vec<SortId> = Vec::new();
            let profile = sig.relations[rid].profile.clone();
            let mut pos = 0usize;
            loop {
                let v = p.ident()?;
                if pos >= profile.len() {
                    return p.err(format!("too many arguments for `{head}`"));
                }
                if let Some(xi) = x_names.iter().position(|n| *n == v) {
                    if x_sorts[xi] != profile[pos] {
                        return p.err(format!("sort mismatch at `{head}` argument {pos}"));
                    }
                    args.push(GArg::X(xi));
                } else {
                    let yi = match local.iter().position(|n| *n == v) {
                        Some(i) => {
                            if param_sorts[i] != profile[pos] {
                                return p.err(format!("parameter `{v}` used at two sorts"));
                            }
                            i
                        }
                        None => {
                            local.push(v.clone());
                            param_sorts.push(profile[pos]);
                            local.len() - 1
                        }
                    };
                    args.push(GArg::Y(yi));
                }
                pos += 1;
                if p.peek() == Some(&Tok::Comma) {
                    p.eat(&Tok::Comma)?;
                } else {
                    break;
                }
            }
            p.eat(&Tok::RParen)?;
            if args.len() != profile.len() {
                return p.err(format!(
                    "`{head}` expects {} arguments, got {}",
                    profile.len(),
                    args.len()
                ));
            }
            atoms.push(GammaAtom {
                rel: Some(rid),
                args,
                param_sorts,
            });
        }
        if p.peek() == Some(&Tok::Comma) {
            p.eat(&Tok::Comma)?;
        } else {
            break;
        }
    }
    p.eat(&Tok::Semi)?;
    p.eat(&Tok::RBrace)?;
    Ok(GammaSpec {
        name,
        x_sorts,
        atoms,
    })
}

/// Print a parsed theory back to DSL text. The output is sugar-free and
/// re-parses to an equal value.
pub fn print_theory(t: &ParsedTheory) -> String {
    let mut out = String::new();
    let sig = &t.theory.signature;
    out.push_str(&format!("theory {} {{\n", t.theory.name));
    for s in &sig.sorts {
        out.push_str(&format!("  sort {s};\n"));
    }
    for r in &sig.relations {
        let profile: Vec<&str> = r.profile.iter().map(|&s| sig.sorts[s].as_str()).collect();
        out.push_str(&format!("  rel {}({});\n", r.name, profile.join(", ")));
    }
    for cfg in &t.theory.forbidden {
        let vars: Vec<String> = cfg
            .var_sorts
            .iter()
            .enumerate()
            .map(|(i, &s)| format!("v{}:{}", i, sig.sorts[s]))
            .collect();
        let mut parts: Vec<String> = cfg
            .literals
            .iter()
            .map(|l| {
                let args: Vec<String> = l.args.iter().map(|&v| format!("v{v}")).collect();
                format!(
                    "{}{}({})",
                    if l.positive { "" } else { "!" },
                    sig.relations[l.rel].name,
                    args.join(", ")
                )
            })
            .collect();
        for &(a, b) in &cfg.distinct {
            parts.push(format!("v{a} != v{b}"));
        }
        out.push_str(&format!("  forbid {} : {};\n", vars.join(", "), parts.join(" & ")));
    }
    for g in &t.gammas {
        let xs: Vec<String> = g
            .x_sorts
            .iter()
            .enumerate()
            .map(|(i, &s)| format!("x{}: {}", i, sig.sorts[s]))
            .collect();
        let formulas: Vec<String> = g
            .atoms
            .iter()
            .map(|a| match a.rel {
                None => {
                    let xi = match a.args[0] {
                        GArg::X(i) => i,
                        GArg::Y(_) => 0,
                    };
                    format!("x{xi} = y0")
                }
                Some(rid) => {
                    let args: Vec<String> = a
                        .args
                        .iter()
                        .map(|g| match g {
                            GArg::X(i) => format!("x{i}"),
                            GArg::Y(i) => format!("y{i}"),
                        })
                        .collect();
                    format!("{}({})", sig.relations[rid].name, args.join(", "))
                }
            })
            .collect();
        out.push_str(&format!(
            "  gamma {} {{ {}; formulas: {}; }}\n",
            g.name,
            xs.join(", "),
            formulas.join(", ")
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const RANDOM_GRAPH: &str = "theory random_graph {\n  sort V;\n  rel E(V,V) symmetric irreflexive;\n  gamma adj { x: V; formulas: E(x,y), x = y; }\n}\n";

    #[test]
    fn parses_random_graph() {
        let doc = parse_theory(RANDOM_GRAPH).unwrap();
        let t = doc.primary();
        assert_eq!(t.theory.signature.sorts, vec!["V"]);
        assert_eq!(t.theory.signature.relations.len(), 1);
        assert_eq!(t.theory.forbidden.len(), 2); // loop + asymmetry sugar
        assert_eq!(t.gammas.len(), 1);
        assert_eq!(t.gammas[0].atoms.len(), 2);
    }

    #[test]
    fn extension_inherits_parent_configs() {
        let src = format!(
            "{RANDOM_GRAPH}theory triangle_free : random_graph {{\n  forbid x:V, y:V, z:V : E(x,y) & E(y,z) & E(x,z);\n}}\n"
        );
        let doc = parse_theory(&src).unwrap();
        let t = doc.get("triangle_free").unwrap();
        assert_eq!(t.theory.forbidden.len(), 3);
        assert_eq!(t.gammas.len(), 1); // inherited
    }

    #[test]
    fn arity_mismatch_is_located() {
        let src = "theory bad { sort V; rel E(V,V); forbid x:V : E(x); }";
        match parse_theory(src) {
            Err(PcError::Parse { line, col, msg }) => {
                assert_eq!(line, 1);
                assert!(col > 0);
                assert!(msg.contains("arguments"), "msg: {msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_parse_print_parse() {
        let src = format!(
            "{RANDOM_GRAPH}theory triangle_free : random_graph {{\n  forbid x:V, y:V, z:V : E(x,y) & E(y,z) & E(x,z);\n}}\n"
        );
        let doc = parse_theory(&src).unwrap();
        for t in &doc.theories {
            let printed = print_theory(t);
            let dup = parse_theory(&printed).unwrap();
            let t2 = dup.primary();
            assert_eq!(t2.theory.signature, t.theory.signature);
            assert_eq!(t2.theory.forbidden, t.theory.forbidden);
            assert_eq!(t2.gammas, t.gammas);
        }
    }

    #[test]
    fn both_signs_rejected() {
        let src = "theory bad { sort V; rel P(V); forbid x:V : P(x) & !P(x); }";
        assert!(parse_theory(src).is_err());
    }
}
