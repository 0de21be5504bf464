//! Finite model enumeration with forbidden substructures, one isomorphism
//! class per canonical code, and the joint-embedding check.
//!
//! Enumeration is orderly: models of a universal theory are closed under
//! substructure, so every model of size k+1 extends a model of size k by one
//! point. Extensions are searched by DFS over the undecided tuples touching
//! the new point, pruning as soon as a forbidden configuration is fully
//! decided and satisfied.

use std::collections::BTreeSet;

use crate::canon::canonical_code;
use crate::sig::{check_model, Elem, FinStructure, RelId, SortId, UniversalTheory};
use crate::{Budget, PcError};

/// An undecided relation slot during completion search.
pub type Slot = (RelId, Vec<Elem>);

/// Three-valued truth of a tuple during completion.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Tv {
    True,
    False,
    Undecided,
}

/// Backtracking completion of `base` over `undecided` slots, honoring the
/// theory's forbidden configs. Calls `on_complete` for every completion;
/// stops early when it returns `false`.
pub struct Completer<'a> {
    pub theory: &'a UniversalTheory,
    pub base: FinStructure,
    pub slots: Vec<Slot>,
    pub nodes: u64,
    pub budget: u64,
    /// Per-slot value order: try `true` first when set. Seeded callers use
    /// this for controlled variation; enumeration keeps it false-first.
    pub true_first: Vec<bool>,
}

impl<'a> Completer<'a> {
    pub fn new(theory: &'a UniversalTheory, base: FinStructure, slots: Vec<Slot>, budget: Budget) -> Self {
        let n = slots.len();
        Completer {
            theory,
            base,
            slots,
            nodes: 0,
            budget: budget.nodes,
            true_first: vec![false; n],
        }
    }

    fn tv(&self, decided: usize, rel: RelId, args: &[Elem]) -> Tv {
        for (i, (r, a)) in self.slots.iter().enumerate() {
            if *r == rel && a.as_slice() == args {
                if i < decided {
                    return if self.base.holds(rel, args) { Tv::True } else { Tv::False };
                }
                return Tv::Undecided;
            }
        }
        if self.base.holds(rel, args) {
            Tv::True
        } else {
            Tv::False
        }
    }

    /// A forbidden config is violated when some assignment makes every
    /// literal decidedly true; undecided literals block the violation.
    fn violated(&self, decided: usize) -> bool {
        let m = &self.base;
        for cfg in &self.theory.forbidden {
            let mut assign = vec![0usize; cfg.num_vars()];
            if self.cfg_search(decided, cfg, m, 0, &mut assign) {
                return true;
            }
        }
        false
    }

    fn cfg_search(
        &self,
        decided: usize,
        cfg: &crate::sig::ForbiddenConfig,
        m: &FinStructure,
        var: usize,
        assign: &mut Vec<Elem>,
    ) -> bool {
        if var == cfg.num_vars() {
            return true;
        }
        'next: for e in 0..m.carriers[cfg.var_sorts[var]] {
            assign[var] = e;
            for &(a, b) in &cfg.distinct {
                if a.max(b) <= var
                    && cfg.var_sorts[a] == cfg.var_sorts[b]
                    && assign[a] == assign[b]
                {
                    continue 'next;
                }
            }
            for lit in &cfg.literals {
                if lit.args.iter().all(|&v| v <= var) {
                    let args: Vec<Elem> = lit.args.iter().map(|&v| assign[v]).collect();
                    let ok = match self.tv(decided, lit.rel, &args) {
                        Tv::True => lit.positive,
                        Tv::False => !lit.positive,
                        Tv::Undecided => false,
                    };
                    if !ok {
                        continue 'next;
                    }
                }
            }
            if self.cfg_search(decided, cfg, m, var + 1, assign) {
                return true;
            }
        }
        false
    }

    /// Run the search. Returns Err(Budget) when the node budget ran out.
    pub fn run(&mut self, on_complete: &mut dyn FnMut(&FinStructure) -> bool) -> Result<(), PcError> {
        self.dfs(0, on_complete).map(|_| ())
    }

    fn dfs(&mut self, i: usize, on_complete: &mut dyn FnMut(&FinStructure) -> bool) -> Result<bool, PcError> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(PcError::Budget("completion search".into()));
        }
        if self.violated(i) {
            return Ok(true);
        }
        if i == self.slots.len() {
            return Ok(on_complete(&self.base));
        }
        let (rel, args) = self.slots[i].clone();
        let order = if self.true_first[i] { [true, false] } else { [false, true] };
        for val in order {
            if val {
                self.base.add_tuple(rel, args.clone());
            }
            let cont = self.dfs(i + 1, on_complete)?;
            if val {
                let pos = self.base.tables[rel].binary_search(&args).unwrap();
                self.base.tables[rel].remove(pos);
            }
            if !cont {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// All relation slots that involve the element `e` of sort `s` in `m` and are
/// not already present, in deterministic order.
pub fn slots_touching(m: &FinStructure, s: SortId, e: Elem) -> Vec<Slot> {
    let mut out = Vec::new();
    for (rid, decl) in m.signature.relations.iter().enumerate() {
        let arity = decl.arity();
        let mut tup = vec![0usize; arity];
        collect_slots(m, rid, &decl.profile.clone(), 0, &mut tup, s, e, &mut out);
        let _ = arity;
    }
    out
}

fn collect_slots(
    m: &FinStructure,
    rid: RelId,
    profile: &[SortId],
    pos: usize,
    tup: &mut Vec<Elem>,
    s: SortId,
    e: Elem,
    out: &mut Vec<Slot>,
) {
    if pos == profile.len() {
        let touches = profile
            .iter()
            .zip(tup.iter())
            .any(|(&ps, &pe)| ps == s && pe == e);
        if touches && !m.holds(rid, tup) {
            out.push((rid, tup.clone()));
        }
        return;
    }
    for cand in 0..m.carriers[profile[pos]] {
        tup[pos] = cand;
        collect_slots(m, rid, profile, pos + 1, tup, s, e, out);
    }
}

/// Result of model enumeration.
#[derive(Clone, Debug)]
pub struct ModelEnumeration {
    /// One representative per isomorphism class, with its canonical code,
    /// sorted by code.
    pub models: Vec<(FinStructure, Vec<u8>)>,
    /// False when the combinatorial budget was exceeded; then `reached` is
    /// the largest total size fully enumerated.
    pub complete: bool,
    pub reached: usize,
}

/// All models of `theory` with every carrier of size ≤ `n`, up to isomorphism.
pub fn enumerate_models(
    theory: &UniversalTheory,
    n: usize,
    budget: Budget,
) -> Result<ModelEnumeration, PcError> {
    let empty = FinStructure::empty(theory.signature.clone());
    if !check_model(theory, &empty)? {
        // a theory with a 0-variable forbidden config has no models at all
        return Ok(ModelEnumeration {
            models: vec![],
            complete: true,
            reached: 0,
        });
    }
    let mut seen: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut all: Vec<(FinStructure, Vec<u8>)> = Vec::new();
    let code0 = canonical_code(&empty);
    seen.insert(code0.clone());
    all.push((empty.clone(), code0));
    let mut frontier = vec![empty];
    let mut complete = true;
    let mut reached = 0;
    let max_total = n * theory.signature.sorts.len();
    'grow: for size in 0..max_total {
        let mut next = Vec::new();
        for m in &frontier {
            for s in 0..theory.signature.sorts.len() {
                if m.carriers[s] >= n {
                    continue;
                }
                let mut ext = m.clone();
                let e = ext.add_elem(s);
                let slots = slots_touching(&ext, s, e);
                let mut completer = Completer::new(theory, ext, slots, budget);
                let mut found: Vec<FinStructure> = Vec::new();
                let res = completer.run(&mut |cand| {
                    found.push(cand.clone());
                    true
                });
                if res.is_err() {
                    complete = false;
                    break 'grow;
                }
                for cand in found {
                    let code = canonical_code(&cand);
                    if seen.insert(code.clone()) {
                        all.push((cand.clone(), code));
                        next.push(cand);
                    }
                }
            }
        }
        reached = size + 1;
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    all.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(ModelEnumeration {
        models: all,
        complete,
        reached,
    })
}

/// Verdict of the bounded joint-embedding check.
#[derive(Clone, Debug)]
pub enum JepVerdict {
    HoldsAtBound,
    /// A concrete pair of models of size ≤ n that no model of size ≤ 2n
    /// jointly embeds.
    Fails(Box<(FinStructure, FinStructure)>),
    Inconclusive,
}

/// Bounded joint embedding: every pair of models of size ≤ n embeds into a
/// common model of size ≤ 2n.
///
/// Exactness note: since models are substructure-closed, a joint witness can
/// be restricted to the union of the two images, so it suffices to search
/// gluings of A and B along partial isomorphisms, completing the undecided
/// cross tuples.
pub fn jep_check(theory: &UniversalTheory, n: usize, budget: Budget) -> Result<JepVerdict, PcError> {
    let enumeration = enumerate_models(theory, n, budget)?;
    if !enumeration.complete {
        return Ok(JepVerdict::Inconclusive);
    }
    let models: Vec<&FinStructure> = enumeration.models.iter().map(|(m, _)| m).collect();
    for (i, a) in models.iter().enumerate() {
        for b in models.iter().skip(i) {
            match joint_embeddable(theory, a, b, budget) {
                Ok(true) => {}
                Ok(false) => {
                    return Ok(JepVerdict::Fails(Box::new(((*a).clone(), (*b).clone()))))
                }
                Err(PcError::Budget(_)) => return Ok(JepVerdict::Inconclusive),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(JepVerdict::HoldsAtBound)
}

/// Does some model of `theory` jointly embed `a` and `b`?
pub fn joint_embeddable(
    theory: &UniversalTheory,
    a: &FinStructure,
    b: &FinStructure,
    budget: Budget,
) -> Result<bool, PcError> {
    // quick: one embeds into the other
    if !crate::sig::embeddings(a, b).is_empty() || !crate::sig::embeddings(b, a).is_empty() {
        return Ok(true);
    }
    // enumerate partial injective maps dom ⊆ A -> B, most-identified first is
    // not necessary; empty map (disjoint union) is tried first for speed.
    let sorts = a.signature.sorts.len();
    let mut partial: Vec<Vec<Option<Elem>>> = (0..sorts).map(|s| vec![None; a.carriers[s]]).collect();
    try_gluings(theory, a, b, 0, 0, &mut partial, budget)
}

fn try_gluings(
    theory: &UniversalTheory,
    a: &FinStructure,
    b: &FinStructure,
    sort: usize,
    idx: usize,
    partial: &mut Vec<Vec<Option<Elem>>>,
    budget: Budget,
) -> Result<bool, PcError> {
    if sort == a.signature.sorts.len() {
        return glue_and_complete(theory, a, b, partial, budget);
    }
    if idx == a.carriers[sort] {
        return try_gluings(theory, a, b, sort + 1, 0, partial, budget);
    }
    // unmatched first (disjoint union is explored first overall)
    if try_gluings(theory, a, b, sort, idx + 1, partial, budget)? {
        return Ok(true);
    }
    for img in 0..b.carriers[sort] {
        if partial[sort].iter().any(|&m| m == Some(img)) {
            continue;
        }
        partial[sort][idx] = Some(img);
        let ok = try_gluings(theory, a, b, sort, idx + 1, partial, budget)?;
        partial[sort][idx] = None;
        if ok {
            return Ok(true);
        }
    }
    Ok(false)
}

fn glue_and_complete(
    theory: &UniversalTheory,
    a: &FinStructure,
    b: &FinStructure,
    partial: &mut Vec<Vec<Option<Elem>>>,
    budget: Budget,
) -> Result<bool, PcError> {
    let sorts = a.signature.sorts.len();
    // glued carrier: all of A, then B minus images
    let mut b_map: Vec<Vec<Option<Elem>>> = (0..sorts).map(|s| vec![None; b.carriers[s]]).collect();
    for s in 0..sorts {
        for (ae, img) in partial[s].iter().enumerate() {
            if let Some(be) = img {
                b_map[s][*be] = Some(ae);
            }
        }
    }
    let mut glued = a.clone();
    for s in 0..sorts {
        for be in 0..b.carriers[s] {
            if b_map[s][be].is_none() {
                let g = glued.add_elem(s);
                b_map[s][be] = Some(g);
            }
        }
    }
    // B's tuples, remapped; partial-iso consistency on the overlap
    for (rid, decl) in b.signature.relations.iter().enumerate() {
        for tup in &b.tables[rid] {
            let mapped: Vec<Elem> = tup
                .iter()
                .enumerate()
                .map(|(pos, &e)| b_map[decl.profile[pos]][e].unwrap())
                .collect();
            let within_a = mapped
                .iter()
                .enumerate()
                .all(|(pos, &g)| g < a.carriers[decl.profile[pos]]);
            if within_a {
                if !a.holds(rid, &mapped) {
                    return Ok(false); // not a partial isomorphism
                }
            } else {
                glued.add_tuple(rid, mapped);
            }
        }
    }
    // reflection on the overlap: A-tuples fully inside dom must hold in B
    for (rid, decl) in a.signature.relations.iter().enumerate() {
        let arity = decl.arity();
        let mut args = vec![0usize; arity];
        if !reflect_check(a, b, rid, &decl.profile.clone(), 0, &mut args, partial) {
            return Ok(false);
        }
    }
    // undecided: tuples mixing strict-A and strict-B parts
    let mut slots = Vec::new();
    for (rid, decl) in glued.signature.relations.iter().enumerate() {
        let mut tup = vec![0usize; decl.arity()];
        collect_mixed(&glued, a, &b_map, rid, &decl.profile.clone(), 0, &mut tup, partial, &mut slots);
    }
    let mut found = false;
    let mut completer = Completer::new(theory, glued, slots, budget);
    completer.run(&mut |cand| {
        // completion already honors configs; double check for safety
        found = check_model(theory, cand).unwrap_or(false);
        !found
    })?;
    Ok(found)
}

fn reflect_check(
    a: &FinStructure,
    b: &FinStructure,
    rid: RelId,
    profile: &[SortId],
    pos: usize,
    args: &mut Vec<Elem>,
    partial: &[Vec<Option<Elem>>],
) -> bool {
    if pos == profile.len() {
        let img: Option<Vec<Elem>> = args
            .iter()
            .enumerate()
            .map(|(p, &e)| partial[profile[p]][e])
            .collect();
        return match img {
            Some(bi) => a.holds(rid, args) == b.holds(rid, &bi),
            None => true,
        };
    }
    for e in 0..a.carriers[profile[pos]] {
        args[pos] = e;
        if !reflect_check(a, b, rid, profile, pos + 1, args, partial) {
            return false;
        }
    }
    true
}

#[allow(clippy::too_many_arguments)]
fn collect_mixed(
    glued: &FinStructure,
    a: &FinStructure,
    b_map: &[Vec<Option<Elem>>],
    rid: RelId,
    profile: &[SortId],
    pos: usize,
    tup: &mut Vec<Elem>,
    partial: &[Vec<Option<Elem>>],
    out: &mut Vec<Slot>,
) {
    if pos == profile.len() {
        // strict-A: an A element with no image; strict-B: a glued element ≥ |A| carrier
        let strict_a = profile
            .iter()
            .zip(tup.iter())
            .any(|(&s, &e)| e < a.carriers[s] && partial[s][e].is_none());
        let strict_b = profile
            .iter()
            .zip(tup.iter())
            .any(|(&s, &e)| e >= a.carriers[s]);
        let _ = b_map;
        if strict_a && strict_b && !glued.holds(rid, tup) {
            out.push((rid, tup.clone()));
        }
        return;
    }
    for e in 0..glued.carriers[profile[pos]] {
        tup[pos] = e;
        collect_mixed(glued, a, b_map, rid, profile, pos + 1, tup, partial, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl;

    fn theory(src: &str) -> UniversalTheory {
        dsl::parse_theory(src).unwrap().primary().theory.clone()
    }

    #[test]
    fn pure_equality_models_by_size() {
        let t = theory("theory eq { sort V; }");
        let e = enumerate_models(&t, 3, Budget::default()).unwrap();
        assert!(e.complete);
        assert_eq!(e.models.len(), 4); // sizes 0..3
    }

    #[test]
    fn graphs_on_three_vertices() {
        let t = theory("theory graphs { sort V; rel E(V,V) symmetric irreflexive; }");
        let e = enumerate_models(&t, 3, Budget::default()).unwrap();
        assert!(e.complete);
        // ∅; 1 vertex; 2 vertices ± edge; 4 graphs on 3 vertices
        assert_eq!(e.models.len(), 8);
    }

    #[test]
    fn triangle_free_graphs_on_three_vertices() {
        let t = theory(
            "theory tf { sort V; rel E(V,V) symmetric irreflexive; forbid x:V,y:V,z:V : E(x,y) & E(y,z) & E(x,z); }",
        );
        let e = enumerate_models(&t, 3, Budget::default()).unwrap();
        assert_eq!(e.models.len(), 7); // the graphs minus K3
    }

    #[test]
    fn codes_are_unique_in_enumeration() {
        let t = theory("theory graphs { sort V; rel E(V,V) symmetric irreflexive; }");
        let e = enumerate_models(&t, 4, Budget::default()).unwrap();
        let mut codes: Vec<_> = e.models.iter().map(|(_, c)| c.clone()).collect();
        let before = codes.len();
        codes.dedup();
        assert_eq!(before, codes.len());
        assert_eq!(before, 19); // unlabeled graphs by size: 1+1+2+4+11
    }

    #[test]
    fn jep_graphs_holds() {
        let t = theory("theory graphs { sort V; rel E(V,V) symmetric irreflexive; }");
        match jep_check(&t, 3, Budget::default()).unwrap() {
            JepVerdict::HoldsAtBound => {}
            v => panic!("expected HOLDS, got {v:?}"),
        }
    }

    #[test]
    fn jep_at_most_one_element_degenerate() {
        let t = theory("theory tiny { sort V; forbid x:V,y:V : x != y; }");
        match jep_check(&t, 2, Budget::default()).unwrap() {
            JepVerdict::HoldsAtBound => {}
            v => panic!("expected HOLDS, got {v:?}"),
        }
    }

    #[test]
    fn jep_all_or_nothing_fails() {
        let t = theory("theory aon { sort V; rel P(V); forbid x:V,y:V : P(x) & !P(y); }");
        match jep_check(&t, 1, Budget::default()).unwrap() {
            JepVerdict::Fails(pair) => {
                let (a, b) = *pair;
                assert_eq!(a.total_size() + b.total_size(), 2);
            }
            v => panic!("expected FAILS, got {v:?}"),
        }
    }
}
