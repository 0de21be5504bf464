//! Finite many-sorted relational signatures, finite structures, and
//! forbidden-configuration theories.
//!
//! A [`UniversalTheory`] is a set of [`ForbiddenConfig`]s over a
//! [`Signature`]; a structure models the theory iff no forbidden
//! configuration has a satisfying assignment. Satisfaction is hereditary:
//! every substructure of a model is a model.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::PcError;

/// Index of a sort in its signature.
pub type SortId = usize;
/// Index of a relation in its signature.
pub type RelId = usize;
/// An element of a carrier; elements are dense small integers scoped per sort.
pub type Elem = usize;

/// A relation declaration: name plus the sort of each argument position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelDecl {
    pub name: String,
    pub profile: Vec<SortId>,
}

impl RelDecl {
    pub fn arity(&self) -> usize {
        self.profile.len()
    }
}

/// A finite many-sorted relational signature.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub sorts: Vec<String>,
    pub relations: Vec<RelDecl>,
}

impl Signature {
    pub fn new(sorts: Vec<String>, relations: Vec<RelDecl>) -> Result<Self, PcError> {
        let sig = Signature { sorts, relations };
        sig.validate()?;
        Ok(sig)
    }

    fn validate(&self) -> Result<(), PcError> {
        let mut names = BTreeSet::new();
        for s in &self.sorts {
            if !names.insert(s.clone()) {
                return Err(PcError::Signature(format!("duplicate identifier `{s}`")));
            }
        }
        for r in &self.relations {
            if !names.insert(r.name.clone()) {
                return Err(PcError::Signature(format!(
                    "duplicate identifier `{}`",
                    r.name
                )));
            }
            for &s in &r.profile {
                if s >= self.sorts.len() {
                    return Err(PcError::Signature(format!(
                        "relation `{}` refers to unknown sort #{s}",
                        r.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sort_id(&self, name: &str) -> Option<SortId> {
        self.sorts.iter().position(|s| s == name)
    }

    pub fn rel_id(&self, name: &str) -> Option<RelId> {
        self.relations.iter().position(|r| r.name == name)
    }

    /// Unary relations on the given sort, used for alpha catalogs and class isolators.
    pub fn unary_rels_on(&self, sort: SortId) -> Vec<RelId> {
        self.relations
            .iter()
            .enumerate()
            .filter(|(_, r)| r.profile.len() == 1 && r.profile[0] == sort)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A finite structure: per-sort carrier sizes plus one tuple table per relation.
///
/// Carriers are `0..carriers[sort]`. Tables are kept sorted for cheap equality
/// and deterministic iteration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FinStructure {
    pub signature: Signature,
    pub carriers: Vec<usize>,
    pub tables: Vec<Vec<Vec<Elem>>>,
}

impl FinStructure {
    pub fn empty(signature: Signature) -> Self {
        let carriers = vec![0; signature.sorts.len()];
        let tables = vec![Vec::new(); signature.relations.len()];
        FinStructure {
            signature,
            carriers,
            tables,
        }
    }

    pub fn new(
        signature: Signature,
        carriers: Vec<usize>,
        mut tables: Vec<Vec<Vec<Elem>>>,
    ) -> Result<Self, PcError> {
        if carriers.len() != signature.sorts.len() || tables.len() != signature.relations.len() {
            return Err(PcError::Signature(
                "carrier/table count does not match signature".into(),
            ));
        }
        for (rid, table) in tables.iter().enumerate() {
            let decl = &signature.relations[rid];
            for tup in table {
                if tup.len() != decl.arity() {
                    return Err(PcError::Signature(format!(
                        "tuple arity mismatch in `{}`",
                        decl.name
                    )));
                }
                for (pos, &e) in tup.iter().enumerate() {
                    if e >= carriers[decl.profile[pos]] {
                        return Err(PcError::Signature(format!(
                            "tuple element out of carrier in `{}`",
                            decl.name
                        )));
                    }
                }
            }
        }
        for t in &mut tables {
            t.sort();
            t.dedup();
        }
        Ok(FinStructure {
            signature,
            carriers,
            tables,
        })
    }

    pub fn total_size(&self) -> usize {
        self.carriers.iter().sum()
    }

    pub fn holds(&self, rel: RelId, args: &[Elem]) -> bool {
        self.tables[rel].binary_search_by(|t| t.as_slice().cmp(args)).is_ok()
    }

    pub fn add_tuple(&mut self, rel: RelId, args: Vec<Elem>) {
        if let Err(pos) = self.tables[rel].binary_search(&args) {
            self.tables[rel].insert(pos, args);
        }
    }

    /// Add a fresh element to `sort`, returning its index.
    pub fn add_elem(&mut self, sort: SortId) -> Elem {
        self.carriers[sort] += 1;
        self.carriers[sort] - 1
    }

    /// The induced substructure on the given per-sort element lists.
    /// Elements are renumbered densely in list order.
    pub fn substructure(&self, keep: &[Vec<Elem>]) -> FinStructure {
        let sig = self.signature.clone();
        let mut index = vec![vec![usize::MAX; 0]; sig.sorts.len()];
        for (s, elems) in keep.iter().enumerate() {
            let mut map = vec![usize::MAX; self.carriers[s]];
            for (new, &old) in elems.iter().enumerate() {
                map[old] = new;
            }
            index[s] = map;
        }
        let carriers: Vec<usize> = keep.iter().map(|v| v.len()).collect();
        let mut tables = Vec::with_capacity(sig.relations.len());
        for (rid, table) in self.tables.iter().enumerate() {
            let profile = &sig.relations[rid].profile;
            let mut out = Vec::new();
            'tup: for tup in table {
                let mut mapped = Vec::with_capacity(tup.len());
                for (pos, &e) in tup.iter().enumerate() {
                    let m = index[profile[pos]][e];
                    if m == usize::MAX {
                        continue 'tup;
                    }
                    mapped.push(m);
                }
                out.push(mapped);
            }
            out.sort();
            out.dedup();
            tables.push(out);
        }
        FinStructure {
            signature: sig,
            carriers,
            tables,
        }
    }

    /// Disjoint union; the second structure's elements are shifted per sort.
    pub fn disjoint_union(&self, other: &FinStructure) -> FinStructure {
        assert_eq!(self.signature, other.signature);
        let mut out = self.clone();
        let offsets: Vec<usize> = self.carriers.clone();
        for (s, &c) in other.carriers.iter().enumerate() {
            out.carriers[s] += c;
        }
        for (rid, table) in other.tables.iter().enumerate() {
            let profile = &self.signature.relations[rid].profile;
            for tup in table {
                let shifted: Vec<Elem> = tup
                    .iter()
                    .enumerate()
                    .map(|(pos, &e)| e + offsets[profile[pos]])
                    .collect();
                out.add_tuple(rid, shifted);
            }
        }
        out
    }

    /// All per-sort element subsets of total size ≤ `max`, as substructure carriers.
    pub fn subsets_up_to(&self, max: usize) -> Vec<Vec<Vec<Elem>>> {
        let mut out = Vec::new();
        let mut current: Vec<Vec<Elem>> = vec![Vec::new(); self.carriers.len()];
        fn rec(
            st: &FinStructure,
            sort: usize,
            start: Elem,
            left: usize,
            current: &mut Vec<Vec<Elem>>,
            out: &mut Vec<Vec<Vec<Elem>>>,
        ) {
            out.push(current.clone());
            if left == 0 {
                return;
            }
            for s in sort..st.carriers.len() {
                let from = if s == sort { start } else { 0 };
                for e in from..st.carriers[s] {
                    current[s].push(e);
                    rec(st, s, e + 1, left - 1, current, out);
                    current[s].pop();
                }
            }
        }
        rec(self, 0, 0, max, &mut current, &mut out);
        out.sort();
        out.dedup();
        out
    }
}

impl fmt::Display for FinStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, name) in self.signature.sorts.iter().enumerate() {
            write!(f, "{name}:{} ", self.carriers[s])?;
        }
        for (rid, table) in self.tables.iter().enumerate() {
            write!(f, "{}={:?} ", self.signature.relations[rid].name, table)?;
        }
        Ok(())
    }
}

/// A signed atom over config variables: `sign · rel(args)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub rel: RelId,
    pub args: Vec<usize>,
    pub positive: bool,
}

/// One primitive-universal axiom: a conjunction of literals over typed
/// variables, with optional distinctness constraints, whose satisfying
/// assignments are forbidden.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForbiddenConfig {
    /// Sort of each variable.
    pub var_sorts: Vec<SortId>,
    pub literals: Vec<Literal>,
    /// Unordered variable pairs required distinct (stored as (min,max)).
    pub distinct: Vec<(usize, usize)>,
}

impl ForbiddenConfig {
    pub fn new(
        var_sorts: Vec<SortId>,
        mut literals: Vec<Literal>,
        mut distinct: Vec<(usize, usize)>,
        sig: &Signature,
    ) -> Result<Self, PcError> {
        for lit in &literals {
            let decl = sig
                .relations
                .get(lit.rel)
                .ok_or_else(|| PcError::Signature("unknown relation in config".into()))?;
            if lit.args.len() != decl.arity() {
                return Err(PcError::Signature(format!(
                    "arity mismatch for `{}` in config",
                    decl.name
                )));
            }
            for (pos, &v) in lit.args.iter().enumerate() {
                if v >= var_sorts.len() {
                    return Err(PcError::Signature("undeclared variable in config".into()));
                }
                if var_sorts[v] != decl.profile[pos] {
                    return Err(PcError::Signature(format!(
                        "sort mismatch for `{}` argument {pos}",
                        decl.name
                    )));
                }
            }
        }
        literals.sort();
        literals.dedup();
        for l in &literals {
            let flipped = Literal {
                positive: !l.positive,
                ..l.clone()
            };
            if literals.contains(&flipped) {
                return Err(PcError::Signature(
                    "config contains a literal with both signs".into(),
                ));
            }
        }
        for d in &mut distinct {
            if d.0 > d.1 {
                *d = (d.1, d.0);
            }
            if d.0 == d.1 {
                return Err(PcError::Signature(
                    "distinctness pair with identical variables".into(),
                ));
            }
        }
        distinct.sort();
        distinct.dedup();
        Ok(ForbiddenConfig {
            var_sorts,
            literals,
            distinct,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.var_sorts.len()
    }

    /// True iff some assignment of the variables into `m` satisfies all
    /// literals and distinctness pairs.
    pub fn satisfiable_in(&self, m: &FinStructure) -> bool {
        let mut assign = vec![0usize; self.num_vars()];
        self.search(m, 0, &mut assign)
    }

    fn search(&self, m: &FinStructure, var: usize, assign: &mut Vec<Elem>) -> bool {
        if var == self.num_vars() {
            return true;
        }
        'next: for e in 0..m.carriers[self.var_sorts[var]] {
            assign[var] = e;
            for &(a, b) in &self.distinct {
                if a.max(b) <= var && assign[a] == assign[b] && self.var_sorts[a] == self.var_sorts[b]
                {
                    continue 'next;
                }
            }
            for lit in &self.literals {
                if lit.args.iter().all(|&v| v <= var) {
                    let args: Vec<Elem> = lit.args.iter().map(|&v| assign[v]).collect();
                    if m.holds(lit.rel, &args) != lit.positive {
                        continue 'next;
                    }
                }
            }
            if self.search(m, var + 1, assign) {
                return true;
            }
        }
        false
    }
}

/// A universal relational theory: forbidden configurations over a signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniversalTheory {
    pub name: String,
    pub signature: Signature,
    pub forbidden: Vec<ForbiddenConfig>,
}

impl UniversalTheory {
    pub fn new(name: impl Into<String>, signature: Signature) -> Self {
        UniversalTheory {
            name: name.into(),
            signature,
            forbidden: Vec::new(),
        }
    }

    /// Largest variable count among forbidden configs (0 when none).
    pub fn max_config_vars(&self) -> usize {
        self.forbidden.iter().map(|c| c.num_vars()).max().unwrap_or(0)
    }
}

/// Decide `M ⊨ T`: no forbidden configuration is satisfiable in `M`.
pub fn check_model(theory: &UniversalTheory, m: &FinStructure) -> Result<bool, PcError> {
    if theory.signature != m.signature {
        let detail = first_signature_mismatch(&theory.signature, &m.signature);
        return Err(PcError::Signature(format!(
            "signature mismatch between theory `{}` and structure: {detail}",
            theory.name
        )));
    }
    Ok(theory.forbidden.iter().all(|c| !c.satisfiable_in(m)))
}

fn first_signature_mismatch(a: &Signature, b: &Signature) -> String {
    for (x, y) in a.sorts.iter().zip(&b.sorts) {
        if x != y {
            return format!("sort `{x}` vs `{y}`");
        }
    }
    if a.sorts.len() != b.sorts.len() {
        return "sort count differs".into();
    }
    for (x, y) in a.relations.iter().zip(&b.relations) {
        if x != y {
            return format!("relation `{}` vs `{}`", x.name, y.name);
        }
    }
    "relation count differs".into()
}

/// All injective sort-respecting maps `A → B` that preserve and reflect every
/// relation (embeddings onto induced substructures).
///
/// A map is represented per sort: `map[s][a]` is the image of element `a` of
/// sort `s` in `A`.
pub fn embeddings(a: &FinStructure, b: &FinStructure) -> Vec<Vec<Vec<Elem>>> {
    assert_eq!(a.signature, b.signature, "embeddings: signature mismatch");
    let sorts = a.signature.sorts.len();
    // Flatten A's elements into a fixed assignment order.
    let mut order: Vec<(SortId, Elem)> = Vec::new();
    for s in 0..sorts {
        for e in 0..a.carriers[s] {
            order.push((s, e));
        }
    }
    let mut map: Vec<Vec<Elem>> = (0..sorts).map(|s| vec![usize::MAX; a.carriers[s]]).collect();
    let mut used: Vec<Vec<bool>> = (0..sorts).map(|s| vec![false; b.carriers[s]]).collect();
    let mut out = Vec::new();
    embed_rec(a, b, &order, 0, &mut map, &mut used, &mut out);
    out
}

fn embed_rec(
    a: &FinStructure,
    b: &FinStructure,
    order: &[(SortId, Elem)],
    i: usize,
    map: &mut Vec<Vec<Elem>>,
    used: &mut Vec<Vec<bool>>,
    out: &mut Vec<Vec<Vec<Elem>>>,
) {
    if i == order.len() {
        out.push(map.clone());
        return;
    }
    let (s, e) = order[i];
    'cand: for img in 0..b.carriers[s] {
        if used[s][img] {
            continue;
        }
        map[s][e] = img;
        // Every relation tuple over already-assigned elements must hold in A
        // iff its image holds in B.
        for (rid, decl) in a.signature.relations.iter().enumerate() {
            let mut args = vec![0usize; decl.arity()];
            if !rel_consistent(a, b, rid, &decl.profile, &mut args, 0, map) {
                map[s][e] = usize::MAX;
                continue 'cand;
            }
        }
        used[s][img] = true;
        embed_rec(a, b, order, i + 1, map, used, out);
        used[s][img] = false;
        map[s][e] = usize::MAX;
    }
}

fn rel_consistent(
    a: &FinStructure,
    b: &FinStructure,
    rid: RelId,
    prof: &[SortId],
    args: &mut Vec<Elem>,
    pos: usize,
    map: &[Vec<Elem>],
) -> bool {
    if pos == prof.len() {
        let img: Vec<Elem> = args
            .iter()
            .enumerate()
            .map(|(p, &e)| map[prof[p]][e])
            .collect();
        return a.holds(rid, args) == b.holds(rid, &img);
    }
    for e in 0..a.carriers[prof[pos]] {
        if map[prof[pos]][e] == usize::MAX {
            continue;
        }
        args[pos] = e;
        if !rel_consistent(a, b, rid, prof, args, pos + 1, map) {
            return false;
        }
    }
    true
}

/// Convenience: the one-sorted graph signature used by many fixtures.
pub fn graph_signature() -> Signature {
    Signature::new(
        vec!["V".into()],
        vec![RelDecl {
            name: "E".into(),
            profile: vec![0, 0],
        }],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn graph_theory() -> UniversalTheory {
        let sig = graph_signature();
        let mut t = UniversalTheory::new("graphs", sig.clone());
        // irreflexive
        t.forbidden.push(
            ForbiddenConfig::new(
                vec![0],
                vec![Literal {
                    rel: 0,
                    args: vec![0, 0],
                    positive: true,
                }],
                vec![],
                &sig,
            )
            .unwrap(),
        );
        // symmetric
        t.forbidden.push(
            ForbiddenConfig::new(
                vec![0, 0],
                vec![
                    Literal {
                        rel: 0,
                        args: vec![0, 1],
                        positive: true,
                    },
                    Literal {
                        rel: 0,
                        args: vec![1, 0],
                        positive: false,
                    },
                ],
                vec![],
                &sig,
            )
            .unwrap(),
        );
        t
    }

    pub fn triangle_free() -> UniversalTheory {
        let mut t = graph_theory();
        t.name = "triangle_free".into();
        let sig = t.signature.clone();
        t.forbidden.push(
            ForbiddenConfig::new(
                vec![0, 0, 0],
                vec![
                    Literal {
                        rel: 0,
                        args: vec![0, 1],
                        positive: true,
                    },
                    Literal {
                        rel: 0,
                        args: vec![1, 2],
                        positive: true,
                    },
                    Literal {
                        rel: 0,
                        args: vec![0, 2],
                        positive: true,
                    },
                ],
                vec![],
                &sig,
            )
            .unwrap(),
        );
        t
    }

    pub fn graph_on(n: usize, edges: &[(usize, usize)]) -> FinStructure {
        let sig = graph_signature();
        let mut m = FinStructure::empty(sig);
        m.carriers[0] = n;
        for &(u, v) in edges {
            m.add_tuple(0, vec![u, v]);
            m.add_tuple(0, vec![v, u]);
        }
        m
    }

    #[test]
    fn check_model_triangle_free_on_path_and_k3() {
        let t = triangle_free();
        let path = graph_on(3, &[(0, 1), (1, 2)]);
        let k3 = graph_on(3, &[(0, 1), (1, 2), (0, 2)]);
        assert!(check_model(&t, &path).unwrap());
        assert!(!check_model(&t, &k3).unwrap());
    }

    #[test]
    fn check_model_rejects_loop() {
        let t = graph_theory();
        let sig = t.signature.clone();
        let mut m = FinStructure::empty(sig);
        m.carriers[0] = 1;
        m.add_tuple(0, vec![0, 0]);
        assert!(!check_model(&t, &m).unwrap());
    }

    #[test]
    fn check_model_signature_mismatch_is_diagnosed() {
        let t = graph_theory();
        let other = Signature::new(vec!["W".into()], vec![]).unwrap();
        let m = FinStructure::empty(other);
        let err = check_model(&t, &m).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("mismatch"), "got: {msg}");
    }

    #[test]
    fn embeddings_edge_into_k3() {
        let edge = graph_on(2, &[(0, 1)]);
        let k3 = graph_on(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(embeddings(&edge, &k3).len(), 6);
    }

    #[test]
    fn embeddings_empty_source_is_unique() {
        let sig = graph_signature();
        let empty = FinStructure::empty(sig);
        let k3 = graph_on(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(embeddings(&empty, &k3).len(), 1);
    }

    #[test]
    fn embeddings_nonedge_into_k3_is_empty() {
        let nonedge = graph_on(2, &[]);
        let k3 = graph_on(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(embeddings(&nonedge, &k3).len(), 0);
    }

    #[test]
    fn hereditarity_of_substructures() {
        let t = triangle_free();
        let m = graph_on(4, &[(0, 1), (1, 2), (2, 3)]);
        assert!(check_model(&t, &m).unwrap());
        for keep in m.subsets_up_to(4) {
            let sub = m.substructure(&keep);
            assert!(check_model(&t, &sub).unwrap());
        }
    }
}
