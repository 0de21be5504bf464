//! Core extraction: the finite core as a minimal retract of a type space
//! under relation-preserving endomorphisms, its automorphism group, rigidity,
//! separating families, the infinitesimal subgroup, and the duality count.
//!
//! Two routes feed the retraction. Tiny models enumerate the space
//! explicitly. Production models mine maximal omission patterns over the
//! implicit space, curate a finite subspace (realized types, maximal-pattern
//! witnesses, and realizers found by a bounded pattern-EC audit over core
//! tuples), and retract that; stability badges across seeds, sizes, and
//! levels are the evidence that the truncation is faithful.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::canon::{canonical, CanonMode, CanonOutcome, LabeledStructure};
use crate::dsl::GammaSpec;
use crate::patspace::{
    build_catalog, AlphaGrammar, Diagram, GammaCatalog, GammaType, Level, SpaceCtx, TupleCatalog,
    TypeSpace,
};
use crate::search::{
    compile_entry, eval_entry, held_bit, mine_maximal, maximal_unary_patterns, realized_types,
    AuditEntry, EntryConstraints, TypeSearcher,
};
use crate::sig::{FinStructure, UniversalTheory};
use crate::{Budget, PcError};

/// A finite structure over the materialized catalog relations: points plus
/// one table per catalog tuple.
#[derive(Clone, Debug)]
pub struct PatStruct {
    pub n_points: usize,
    /// tables[i] aligns with catalog tuple i; sorted point tuples.
    pub tables: Vec<Vec<Vec<u8>>>,
}

impl PatStruct {
    pub fn holds(&self, tuple: usize, args: &[u8]) -> bool {
        self.tables[tuple]
            .binary_search_by(|t| t.as_slice().cmp(args))
            .is_ok()
    }

    /// The induced structure on a subset of points (renumbered in order).
    pub fn induced(&self, keep: &[usize]) -> PatStruct {
        let mut index = vec![usize::MAX; self.n_points];
        for (new, &old) in keep.iter().enumerate() {
            index[old] = new;
        }
        let tables = self
            .tables
            .iter()
            .map(|t| {
                let mut out: Vec<Vec<u8>> = t
                    .iter()
                    .filter(|tup| tup.iter().all(|&p| index[p as usize] != usize::MAX))
                    .map(|tup| tup.iter().map(|&p| index[p as usize] as u8).collect())
                    .collect();
                out.sort();
                out
            })
            .collect();
        PatStruct {
            n_points: keep.len(),
            tables,
        }
    }
}

/// Materialize every catalog relation on a list of types.
pub fn materialize(ctx: &SpaceCtx, points: &[GammaType]) -> PatStruct {
    let k = points.len();
    let tables: Vec<Vec<Vec<u8>>> = crate::par::indexed_map(ctx.catalog.tuples.len(), |tid| {
        let n = ctx.catalog.tuples[tid].arity();
        let mut out = Vec::new();
        let mut assign = vec![0u8; n];
        if k == 0 {
            return out;
        }
        loop {
            let sel: Vec<&Diagram> = assign.iter().map(|&i| &points[i as usize].diagram).collect();
            if ctx.eval_tuple(tid, &sel) {
                out.push(assign.clone());
            }
            let mut pos = 0;
            loop {
                if pos == n {
                    break;
                }
                assign[pos] += 1;
                if (assign[pos] as usize) < k {
                    break;
                }
                assign[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }
        out
    });
    PatStruct {
        n_points: k,
        tables,
    }
}

/// Search one relation-preserving map a → b extending `partial`
/// (preservation only: held tuples map to held tuples). Backtracking with
/// forward pruning on unary containment and assigned-tuple checks.
pub fn find_hom(
    a: &PatStruct,
    b: &PatStruct,
    partial: &[Option<u8>],
    budget: Budget,
) -> Result<Option<Vec<u8>>, PcError> {
    let mut out = None;
    enumerate_homs(a, b, partial, budget, &mut |h| {
        out = Some(h.to_vec());
        false
    })?;
    Ok(out)
}

/// Enumerate all relation-preserving maps a → b extending `partial`.
pub fn enumerate_homs(
    a: &PatStruct,
    b: &PatStruct,
    partial: &[Option<u8>],
    budget: Budget,
    f: &mut dyn FnMut(&[u8]) -> bool,
) -> Result<(), PcError> {
    // domains from unary containment
    let mut domains: Vec<Vec<u8>> = Vec::with_capacity(a.n_points);
    let unary: Vec<usize> = a
        .tables
        .iter()
        .enumerate()
        .filter(|(_, t)| t.first().map(|x| x.len()) == Some(1))
        .map(|(i, _)| i)
        .collect();
    for p in 0..a.n_points {
        match partial.get(p).and_then(|x| *x) {
            Some(img) => domains.push(vec![img]),
            None => {
                let dom: Vec<u8> = (0..b.n_points as u8)
                    .filter(|&q| {
                        unary
                            .iter()
                            .all(|&t| !a.holds(t, &[p as u8]) || b.holds(t, &[q]))
                    })
                    .collect();
                domains.push(dom);
            }
        }
    }
    let mut map = vec![u8::MAX; a.n_points];
    let mut nodes = 0u64;
    hom_rec(a, b, &domains, 0, &mut map, &mut nodes, budget.nodes, f)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn hom_rec(
    a: &PatStruct,
    b: &PatStruct,
    domains: &[Vec<u8>],
    p: usize,
    map: &mut Vec<u8>,
    nodes: &mut u64,
    budget: u64,
    f: &mut dyn FnMut(&[u8]) -> bool,
) -> Result<bool, PcError> {
    *nodes += 1;
    if *nodes > budget {
        return Err(PcError::Budget("hom search".into()));
    }
    if p == a.n_points {
        return Ok(f(map));
    }
    'cand: for &q in &domains[p] {
        map[p] = q;
        // every held tuple of a fully within assigned points must map to held
        for (tid, table) in a.tables.iter().enumerate() {
            for tup in table {
                if tup.iter().any(|&x| (x as usize) > p) {
                    continue;
                }
                if !tup.contains(&(p as u8)) {
                    continue;
                }
                let img: Vec<u8> = tup.iter().map(|&x| map[x as usize]).collect();
                if !b.holds(tid, &img) {
                    map[p] = u8::MAX;
                    continue 'cand;
                }
            }
        }
        let cont = hom_rec(a, b, domains, p + 1, map, nodes, budget, f)?;
        if !cont {
            return Ok(false);
        }
        map[p] = u8::MAX;
    }
    Ok(true)
}

/// Repeatedly find a non-surjective relation-preserving endomorphism and
/// replace the structure by its image; returns the surviving point indices
/// (into the original list) and the retraction map original → survivor index.
pub fn minimal_retract_indices(
    s: &PatStruct,
    budget: Budget,
) -> Result<(Vec<usize>, Vec<usize>, bool), PcError> {
    let mut alive: Vec<usize> = (0..s.n_points).collect();
    // retraction as a map original -> original (composition of found endos)
    let mut retract: Vec<usize> = (0..s.n_points).collect();
    let mut certain = true;
    'descend: loop {
        let cur = s.induced(&alive);
        // try to collapse each point in canonical order: find an endo of cur
        // avoiding it
        for skip in 0..cur.n_points {
            let mut partial: Vec<Option<u8>> = vec![None; cur.n_points];
            let mut domains_fit = true;
            let _ = &mut domains_fit;
            let _ = &mut partial;
            // forbid `skip` as an image by searching into the sub-structure
            // without it: build target = cur minus `skip`
            let keep: Vec<usize> = (0..cur.n_points).filter(|&p| p != skip).collect();
            let target = cur.induced(&keep);
            let res = find_hom_into_subset(&cur, &target, &keep, budget);
            match res {
                Ok(Some(endo)) => {
                    // endo: cur-index -> cur-index (already through keep)
                    let mut new_alive = Vec::new();
                    let mut img_of = vec![usize::MAX; cur.n_points];
                    for (p, &q) in endo.iter().enumerate() {
                        img_of[p] = q as usize;
                    }
                    let image: BTreeSet<usize> = img_of.iter().cloned().collect();
                    for &i in &image {
                        new_alive.push(alive[i]);
                    }
                    // compose the retraction
                    for r in retract.iter_mut() {
                        let cur_idx = alive.iter().position(|&x| x == *r);
                        if let Some(ci) = cur_idx {
                            *r = alive[img_of[ci]];
                        }
                    }
                    alive = new_alive;
                    continue 'descend;
                }
                Ok(None) => {}
                Err(PcError::Budget(_)) => {
                    certain = false;
                }
                Err(e) => return Err(e),
            }
        }
        break;
    }
    // normalize the retraction to be idempotent: the composition restricted
    // to the survivors is a bijection among them; invert it
    let surv_index = |x: usize| alive.iter().position(|&a| a == x).unwrap();
    let perm: Vec<usize> = alive.iter().map(|&a| surv_index(retract[a])).collect();
    let mut inv = vec![0usize; alive.len()];
    for (i, &pi) in perm.iter().enumerate() {
        inv[pi] = i;
    }
    let retraction: Vec<usize> = retract.iter().map(|&r| inv[surv_index(r)]).collect();
    Ok((alive, retraction, certain))
}

fn find_hom_into_subset(
    cur: &PatStruct,
    target: &PatStruct,
    keep: &[usize],
    budget: Budget,
) -> Result<Option<Vec<u8>>, PcError> {
    let partial = vec![None; cur.n_points];
    // hom cur -> target, then re-index into cur points
    let h = find_hom(cur, target, &partial, budget)?;
    Ok(h.map(|m| m.into_iter().map(|q| keep[q as usize] as u8).collect()))
}

/// A permutation group on core points: generators, exact order, and the
/// orbit-stabilizer verification of that order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PermGroup {
    pub degree: usize,
    pub generators: Vec<Vec<u8>>,
    pub order: u64,
}

fn compose(a: &[u8], b: &[u8]) -> Vec<u8> {
    // (a ∘ b)(x) = a[b[x]]
    b.iter().map(|&x| a[x as usize]).collect()
}

/// Order by closure enumeration (groups here are tiny).
pub fn group_elements(degree: usize, generators: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let id: Vec<u8> = (0..degree as u8).collect();
    let mut elems: BTreeSet<Vec<u8>> = BTreeSet::new();
    elems.insert(id.clone());
    let mut frontier = vec![id];
    while let Some(g) = frontier.pop() {
        for gen in generators {
            let h = compose(gen, &g);
            if elems.insert(h.clone()) {
                frontier.push(h);
            }
        }
    }
    elems.into_iter().collect()
}

/// Orbit-stabilizer order computation over the generator set, recursive on
/// the first moved point.
pub fn orbit_stabilizer_order(degree: usize, generators: &[Vec<u8>]) -> u64 {
    if degree == 0 || generators.is_empty() {
        return 1;
    }
    let base = 0u8;
    // orbit of base with transversal
    let mut orbit: Vec<u8> = vec![base];
    let id: Vec<u8> = (0..degree as u8).collect();
    let mut transversal: Vec<Option<Vec<u8>>> = vec![None; degree];
    transversal[base as usize] = Some(id);
    let mut i = 0;
    while i < orbit.len() {
        let p = orbit[i];
        for g in generators {
            let q = g[p as usize];
            if transversal[q as usize].is_none() {
                let t = compose(g, transversal[p as usize].as_ref().unwrap());
                transversal[q as usize] = Some(t);
                orbit.push(q);
            }
        }
        i += 1;
    }
    // Schreier generators for the stabilizer of base
    let mut stab_gens: BTreeSet<Vec<u8>> = BTreeSet::new();
    for &p in &orbit {
        for g in generators {
            let t_p = transversal[p as usize].as_ref().unwrap();
            let gp = g[p as usize];
            let t_gp = transversal[gp as usize].as_ref().unwrap();
            // t_gp^{-1} ∘ g ∘ t_p
            let mut inv = vec![0u8; degree];
            for (x, &y) in t_gp.iter().enumerate() {
                inv[y as usize] = x as u8;
            }
            let s = compose(&inv, &compose(g, t_p));
            let id: Vec<u8> = (0..degree as u8).collect();
            if s != id {
                stab_gens.insert(s);
            }
        }
    }
    // recurse on the stabilizer acting on the remaining points: drop the
    // fixed base by keeping the permutation but treat the degree the same
    let stab: Vec<Vec<u8>> = stab_gens.into_iter().collect();
    let sub = if stab.is_empty() {
        1
    } else {
        // restrict to points other than base: all stab gens fix base
        orbit_stabilizer_order_fixing(degree, &stab, 1)
    };
    orbit.len() as u64 * sub
}

fn orbit_stabilizer_order_fixing(degree: usize, generators: &[Vec<u8>], fixed_below: usize) -> u64 {
    if fixed_below >= degree || generators.is_empty() {
        return 1;
    }
    let base = fixed_below as u8;
    let mut orbit: Vec<u8> = vec![base];
    let id: Vec<u8> = (0..degree as u8).collect();
    let mut transversal: Vec<Option<Vec<u8>>> = vec![None; degree];
    transversal[base as usize] = Some(id);
    let mut i = 0;
    while i < orbit.len() {
        let p = orbit[i];
        for g in generators {
            let q = g[p as usize];
            if transversal[q as usize].is_none() {
                let t = compose(g, transversal[p as usize].as_ref().unwrap());
                transversal[q as usize] = Some(t);
                orbit.push(q);
            }
        }
        i += 1;
    }
    let mut stab_gens: BTreeSet<Vec<u8>> = BTreeSet::new();
    for &p in &orbit {
        for g in generators {
            let t_p = transversal[p as usize].as_ref().unwrap();
            let gp = g[p as usize];
            let t_gp = transversal[gp as usize].as_ref().unwrap();
            let mut inv = vec![0u8; degree];
            for (x, &y) in t_gp.iter().enumerate() {
                inv[y as usize] = x as u8;
            }
            let s = compose(&inv, &compose(g, t_p));
            let id: Vec<u8> = (0..degree as u8).collect();
            if s != id {
                stab_gens.insert(s);
            }
        }
    }
    let stab: Vec<Vec<u8>> = stab_gens.into_iter().collect();
    orbit.len() as u64 * orbit_stabilizer_order_fixing(degree, &stab, fixed_below + 1)
}

/// All relation-preserving bijections of the core (automorphisms), as a
/// verified permutation group.
pub fn automorphism_group(s: &PatStruct, budget: Budget) -> Result<PermGroup, PcError> {
    let mut autos: Vec<Vec<u8>> = Vec::new();
    let partial = vec![None; s.n_points];
    enumerate_homs(s, s, &partial, budget, &mut |h| {
        let mut seen = vec![false; s.n_points];
        let mut bij = true;
        for &q in h {
            if seen[q as usize] {
                bij = false;
                break;
            }
            seen[q as usize] = true;
        }
        if bij {
            autos.push(h.to_vec());
        }
        true
    })?;
    let id: Vec<u8> = (0..s.n_points as u8).collect();
    let generators: Vec<Vec<u8>> = autos.iter().filter(|a| **a != id).cloned().collect();
    let order = group_elements(s.n_points, &generators).len() as u64;
    let os = orbit_stabilizer_order(s.n_points, &generators);
    debug_assert_eq!(order, os, "orbit-stabilizer disagrees with closure");
    if order != os {
        return Err(PcError::Precondition(
            "group order verification failed".into(),
        ));
    }
    Ok(PermGroup {
        degree: s.n_points,
        generators,
        order,
    })
}

/// True iff every relation-preserving endomorphism of the core is bijective.
pub fn rigidity_check(s: &PatStruct, budget: Budget) -> Result<bool, PcError> {
    let partial = vec![None; s.n_points];
    let mut rigid = true;
    enumerate_homs(s, s, &partial, budget, &mut |h| {
        let mut seen = vec![false; s.n_points];
        for &q in h {
            if seen[q as usize] {
                rigid = false;
                return false;
            }
            seen[q as usize] = true;
        }
        true
    })?;
    Ok(rigid)
}

/// The finite core: representative types, materialized tables, provenance,
/// and the retraction from the curated subspace.
pub struct Core {
    pub points: Vec<GammaType>,
    pub structure: PatStruct,
    pub code: Vec<u8>,
    /// retraction: index into `subspace` -> index into `points`
    pub retraction: Vec<usize>,
    pub subspace: Vec<GammaType>,
    pub minimal_certain: bool,
    pub mining_complete: bool,
    pub level: Level,
    pub seed: u64,
}

/// Canonical code of a core: canonical form of its points under the set of
/// distinct nontrivial materialized tables (so the code is comparable across
/// catalog levels that separate nothing new).
pub fn core_code(s: &PatStruct) -> Vec<u8> {
    let k = s.n_points;
    let mut distinct: BTreeSet<Vec<Vec<usize>>> = BTreeSet::new();
    for t in &s.tables {
        if t.is_empty() {
            continue;
        }
        let arity = t[0].len();
        let full = k.pow(arity as u32);
        if t.len() == full {
            continue;
        }
        distinct.insert(
            t.iter()
                .map(|tup| tup.iter().map(|&x| x as usize).collect())
                .collect(),
        );
    }
    let ls = LabeledStructure {
        colors: vec![0; k],
        tables: distinct.into_iter().collect(),
    };
    canonical(&ls, CanonMode::CodeOnly).code
}

/// Automorphisms straight from the canonical engine (used to cross-check the
/// CSP-based group on small cores).
pub fn core_code_with_autos(s: &PatStruct) -> CanonOutcome {
    let k = s.n_points;
    let mut distinct: BTreeSet<Vec<Vec<usize>>> = BTreeSet::new();
    for t in &s.tables {
        if t.is_empty() {
            continue;
        }
        let arity = t[0].len();
        if t.len() == k.pow(arity as u32) {
            continue;
        }
        distinct.insert(
            t.iter()
                .map(|tup| tup.iter().map(|&x| x as usize).collect())
                .collect(),
        );
    }
    let ls = LabeledStructure {
        colors: vec![0; k],
        tables: distinct.into_iter().collect(),
    };
    canonical(&ls, CanonMode::WithAutomorphisms)
}

/// Options for core extraction.
#[derive(Clone, Debug)]
pub struct ExtractOpts {
    pub level: Level,
    pub grammar: AlphaGrammar,
    /// Audit extensions over pairs of core points as well as single points.
    pub audit_pairs: bool,
    /// Literal budget of the audited binary tuples.
    pub audit_lit_cap: usize,
    pub max_rounds: usize,
    pub seed: u64,
}

impl ExtractOpts {
    pub fn new(level: Level) -> Self {
        ExtractOpts {
            level,
            grammar: AlphaGrammar::UnaryDistinct,
            audit_pairs: true,
            audit_lit_cap: 2,
            max_rounds: 6,
            seed: 0,
        }
    }
}

/// Extraction result: the core plus the evaluation context it lives in.
pub struct CoreExtraction {
    pub ctx: SpaceCtx,
    pub core: Core,
}

/// Extract the core of a model's type space at the given gamma and level.
pub fn extract_core(
    model: &FinStructure,
    theory: &UniversalTheory,
    gamma: &GammaSpec,
    opts: &ExtractOpts,
    budget: Budget,
) -> Result<CoreExtraction, PcError> {
    let gcat = GammaCatalog::from_spec(&theory.signature, gamma);
    let catalog = Arc::new(build_catalog(
        &theory.signature,
        &gcat,
        opts.level,
        opts.grammar,
    ));
    let ctx = SpaceCtx::new(model.clone(), catalog);
    extract_core_in(ctx, theory, opts, budget)
}

/// Extraction over a prebuilt context.
pub fn extract_core_in(
    ctx: SpaceCtx,
    theory: &UniversalTheory,
    opts: &ExtractOpts,
    budget: Budget,
) -> Result<CoreExtraction, PcError> {
    let mined = maximal_unary_patterns(&ctx, theory, budget)?;
    let mut mining_complete = mined.complete;
    let mut subspace: Vec<GammaType> = realized_types(&ctx);
    for p in &mined.patterns {
        if !subspace.iter().any(|q| q.diagram == p.witness.diagram) {
            subspace.push(p.witness.clone());
        }
    }
    let mut minimal_certain = true;
    let mut final_alive: Vec<usize> = Vec::new();
    let mut final_retraction: Vec<usize> = Vec::new();
    for _round in 0..opts.max_rounds {
        let tables = materialize(&ctx, &subspace);
        let (alive, retraction, certain) = minimal_retract_indices(&tables, budget)?;
        minimal_certain = certain;
        final_alive = alive.clone();
        final_retraction = retraction.clone();
        let core_pts: Vec<GammaType> = alive.iter().map(|&i| subspace[i].clone()).collect();
        let grew = audit_extensions(
            &ctx,
            theory,
            &core_pts,
            opts,
            &mut subspace,
            &mut mining_complete,
            budget,
        )?;
        if !grew {
            break;
        }
    }
    let core_pts: Vec<GammaType> = final_alive.iter().map(|&i| subspace[i].clone()).collect();
    let structure = materialize(&ctx, &core_pts);
    let code = core_code(&structure);
    let core = Core {
        points: core_pts,
        structure,
        code,
        retraction: final_retraction,
        subspace,
        minimal_certain,
        mining_complete,
        level: ctx.catalog.level,
        seed: opts.seed,
    };
    Ok(CoreExtraction { ctx, core })
}

/// Bounded pattern-EC audit: over every core tuple ā (length 1, and pairs
/// when enabled), mine the maximal extension patterns of a fresh point z and
/// check each is realized by a core point; unrealized patterns contribute
/// their witness to the subspace. Returns true when the subspace grew.
#[allow(clippy::too_many_arguments)]
fn audit_extensions(
    ctx: &SpaceCtx,
    theory: &UniversalTheory,
    core: &[GammaType],
    opts: &ExtractOpts,
    subspace: &mut Vec<GammaType>,
    mining_complete: &mut bool,
    budget: Budget,
) -> Result<bool, PcError> {
    let mut grew = false;
    let mut tuples: Vec<Vec<usize>> = (0..core.len()).map(|i| vec![i]).collect();
    if opts.audit_pairs && core.len() >= 2 && ctx.catalog.level.n_max >= 2 {
        for i in 0..core.len() {
            for j in 0..core.len() {
                if i != j {
                    tuples.push(vec![i, j]);
                }
            }
        }
    }
    for bar in tuples {
        let fixed: Vec<&Diagram> = bar.iter().map(|&i| &core[i].diagram).collect();
        // entries: unary on z, z-z pairs, and mixed (z, a_i) in both orders
        let mut entries: Vec<AuditEntry> = ctx
            .catalog
            .unary
            .iter()
            .map(|&t| AuditEntry::unary(t))
            .collect();
        for (tid, t) in ctx.catalog.tuples.iter().enumerate() {
            if t.arity() != 2 {
                continue;
            }
            let lits: usize = t.phis.iter().map(|p| p.len()).sum();
            if lits > opts.audit_lit_cap {
                continue;
            }
            entries.push(AuditEntry {
                tuple: tid,
                binds: vec![None, None],
            });
            for k in 0..fixed.len() {
                entries.push(AuditEntry {
                    tuple: tid,
                    binds: vec![None, Some(k)],
                });
                entries.push(AuditEntry {
                    tuple: tid,
                    binds: vec![Some(k), None],
                });
            }
        }
        let pool: Vec<GammaType> = subspace.clone();
        let mining = mine_maximal(ctx, theory, &entries, &fixed, &pool, budget)?;
        if !mining.complete {
            *mining_complete = false;
        }
        for pat in &mining.patterns {
            let realized = core.iter().any(|c| {
                entries.iter().enumerate().all(|(ei, e)| {
                    !held_bit(&pat.held, ei) || eval_entry(ctx, e, &fixed, &c.diagram)
                })
            });
            if !realized && !subspace.iter().any(|q| q.diagram == pat.witness.diagram) {
                subspace.push(pat.witness.clone());
                grew = true;
            }
        }
    }
    Ok(grew)
}

/// Retraction soundness: every held tuple maps to a held tuple under the
/// retraction (checked exhaustively over the subspace tables).
pub fn retraction_sound(sub: &PatStruct, retraction: &[usize], core_of_sub: &[usize]) -> bool {
    for (tid, table) in sub.tables.iter().enumerate() {
        for tup in table {
            let img: Vec<u8> = tup
                .iter()
                .map(|&p| core_of_sub[retraction[p as usize]] as u8)
                .collect();
            if !sub.holds(tid, &img) {
                return false;
            }
        }
    }
    true
}

/// The infinitesimal subgroup: elements g of G with gU ⊆ cl(U) for every
/// open U of the relational topology generated by the closed sections
/// {x : R_t(x, c̄)}. On a T1 core this is trivial and the report says so.
pub struct InfinitesimalReport {
    pub subgroup: PermGroup,
    pub t1: bool,
}

pub fn infinitesimal_subgroup(s: &PatStruct, g: &PermGroup) -> InfinitesimalReport {
    let k = s.n_points;
    // basic closed sets: sections of tables with one free slot
    let mut closed: BTreeSet<Vec<bool>> = BTreeSet::new();
    closed.insert(vec![false; k]); // ∅
    closed.insert(vec![true; k]); // full
    for (tid, table) in s.tables.iter().enumerate() {
        if table.is_empty() {
            continue;
        }
        let arity = table[0].len();
        for free in 0..arity {
            // fix the other slots
            let mut others = vec![0u8; arity];
            loop {
                let mut section = vec![false; k];
                for x in 0..k {
                    let mut args = others.clone();
                    args[free] = x as u8;
                    if s.holds(tid, &args) {
                        section[x] = true;
                    }
                }
                closed.insert(section);
                // bump others, skipping the free slot
                let mut pos = 0;
                loop {
                    if pos == arity {
                        break;
                    }
                    if pos == free {
                        pos += 1;
                        continue;
                    }
                    others[pos] += 1;
                    if (others[pos] as usize) < k {
                        break;
                    }
                    others[pos] = 0;
                    pos += 1;
                }
                if pos == arity {
                    break;
                }
            }
        }
    }
    // close under union and intersection
    loop {
        let snapshot: Vec<Vec<bool>> = closed.iter().cloned().collect();
        let before = closed.len();
        for i in 0..snapshot.len() {
            for j in (i + 1)..snapshot.len() {
                let a = &snapshot[i];
                let b = &snapshot[j];
                let union: Vec<bool> = a.iter().zip(b).map(|(x, y)| *x || *y).collect();
                let inter: Vec<bool> = a.iter().zip(b).map(|(x, y)| *x && *y).collect();
                closed.insert(union);
                closed.insert(inter);
            }
        }
        if closed.len() == before {
            break;
        }
    }
    let closed: Vec<Vec<bool>> = closed.into_iter().collect();
    let t1 = (0..k).all(|x| {
        closed
            .iter()
            .any(|c| c.iter().enumerate().all(|(y, &v)| v == (y == x)))
    });
    let cl = |u: &[bool]| -> Vec<bool> {
        let mut best: Option<Vec<bool>> = None;
        for c in &closed {
            if u.iter().zip(c.iter()).all(|(x, y)| !*x || *y) {
                best = match best {
                    None => Some(c.clone()),
                    Some(b) => Some(b.iter().zip(c.iter()).map(|(x, y)| *x && *y).collect()),
                };
            }
        }
        best.unwrap_or_else(|| vec![true; k])
    };
    // opens = complements of closed sets
    let opens: Vec<Vec<bool>> = closed
        .iter()
        .map(|c| c.iter().map(|&v| !v).collect())
        .collect();
    let elems = group_elements(s.n_points, &g.generators);
    let mut members: Vec<Vec<u8>> = Vec::new();
    for perm in &elems {
        let infinitesimal = opens.iter().all(|u| {
            if u.iter().all(|&v| !v) {
                return true;
            }
            let gu: Vec<bool> = {
                let mut out = vec![false; k];
                for (x, &v) in u.iter().enumerate() {
                    if v {
                        out[perm[x] as usize] = true;
                    }
                }
                out
            };
            let closure = cl(u);
            gu.iter().zip(closure.iter()).all(|(x, y)| !*x || *y)
        });
        if infinitesimal {
            members.push(perm.clone());
        }
    }
    let id: Vec<u8> = (0..k as u8).collect();
    let generators: Vec<Vec<u8>> = members.iter().filter(|m| **m != id).cloned().collect();
    let order = group_elements(k, &generators).len() as u64;
    InfinitesimalReport {
        subgroup: PermGroup {
            degree: k,
            generators,
            order,
        },
        t1,
    }
}

/// A separating family for a pair of distinct core points: a conjunction Ξ
/// of 2-ary catalog relations holding of (p, p′) with an empty diagonal,
/// plus the derived 2-partition family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparatingFamily {
    /// Tuple ids, evaluated at slot assignment (p, p′).
    pub xi: Vec<usize>,
    /// Partition size of the derived definable family.
    pub m: usize,
    pub diagonal_empty: bool,
    pub family_separates: bool,
}

/// Find a separating family, or None when the pair is level-indistinguishable.
pub fn separating_family(
    ctx: &SpaceCtx,
    theory: &UniversalTheory,
    p: &GammaType,
    p2: &GammaType,
    budget: Budget,
) -> Result<Option<SeparatingFamily>, PcError> {
    if p.diagram == p2.diagram {
        return Err(PcError::Precondition("separating_family needs p ≠ p′".into()));
    }
    // all 2-ary tuples holding of (p, p′)
    let mut xi: Vec<usize> = Vec::new();
    for (tid, t) in ctx.catalog.tuples.iter().enumerate() {
        if t.arity() == 2 && ctx.eval_tuple(tid, &[&p.diagram, &p2.diagram]) {
            xi.push(tid);
        }
    }
    let searcher = TypeSearcher::new(ctx, theory);
    let diagonal_unsat = |set: &[usize]| -> Result<bool, PcError> {
        let entries: Vec<AuditEntry> = set
            .iter()
            .map(|&t| AuditEntry {
                tuple: t,
                binds: vec![None, None],
            })
            .collect();
        let compiled: Vec<EntryConstraints> = entries
            .iter()
            .map(|e| compile_entry(ctx, e, &[]))
            .collect();
        let refs: Vec<&EntryConstraints> = compiled.iter().collect();
        Ok(searcher.solve(&refs, &[], budget)?.is_none())
    };
    if !diagonal_unsat(&xi)? {
        return Ok(None);
    }
    // greedy minimization
    let mut minimized = xi.clone();
    let mut i = 0;
    while i < minimized.len() {
        let mut trial = minimized.clone();
        trial.remove(i);
        if !trial.is_empty() && diagonal_unsat(&trial)? {
            minimized = trial;
        } else {
            i += 1;
        }
    }
    // derived family: some member whose first φ disagrees between p and p′ at
    // every α parameter gives the 2-partition E_d = agreement on φ(·, d)
    let mut family_separates = false;
    for &tid in &minimized {
        let t = &ctx.catalog.tuples[tid];
        let phi = &t.phis[0];
        let all_disagree = ctx.alpha_sets[tid].iter().all(|b| {
            ctx.phi_holds(&p.diagram, phi, b) != ctx.phi_holds(&p2.diagram, phi, b)
        });
        if all_disagree && !ctx.alpha_sets[tid].is_empty() {
            family_separates = true;
            break;
        }
    }
    Ok(Some(SeparatingFamily {
        xi: minimized,
        m: 2,
        diagonal_empty: true,
        family_separates,
    }))
}

/// Duality check on tiny parameter structures: the number of catalog
/// homomorphisms S(A) → S(B) must equal the number of global types over a
/// generic ambient extending tp(b̄/∅) that are finitely satisfiable in A.
/// Over a finite A, finite satisfiability collapses to "the type is tp(ā/M)
/// for a tuple ā from A", which makes the right side exactly countable.
pub fn duality_count(
    a: &FinStructure,
    b: &FinStructure,
    theory: &UniversalTheory,
    gamma: &GammaSpec,
    level: Level,
    ambient: &FinStructure,
    budget: Budget,
) -> Result<(usize, usize), PcError> {
    if a.total_size() > 3 || b.total_size() > 3 {
        return Err(PcError::Precondition(
            "duality_count caps |A|, |B| at 3".into(),
        ));
    }
    // hom side: α=⊤ catalog over both spaces
    let gcat = GammaCatalog::from_spec(&theory.signature, gamma);
    let full = build_catalog(&theory.signature, &gcat, level, AlphaGrammar::UnaryDistinct);
    let mut tuples: Vec<crate::patspace::PatternTuple> = full
        .tuples
        .iter()
        .filter(|t| t.alpha.is_empty())
        .cloned()
        .collect();
    tuples.sort();
    let unary = tuples
        .iter()
        .enumerate()
        .filter(|(_, t)| t.arity() == 1)
        .map(|(i, _)| i)
        .collect();
    let catalog = Arc::new(TupleCatalog {
        signature: theory.signature.clone(),
        gamma: gcat,
        level,
        grammar: AlphaGrammar::UnaryDistinct,
        tuples,
        unary,
    });
    let sa = crate::patspace::enumerate_types(a, theory, catalog.clone(), budget)?;
    let sb = crate::patspace::enumerate_types(b, theory, catalog.clone(), budget)?;
    let ta = materialize(&sa.ctx, &sa.points);
    let tb = materialize(&sb.ctx, &sb.points);
    let mut hom_count = 0usize;
    enumerate_homs(&ta, &tb, &vec![None; ta.n_points], budget, &mut |_| {
        hom_count += 1;
        true
    })?;
    // type side: global multi-types over the ambient realized by A-tuples
    // whose ∅-diagram matches b̄ (an enumeration of B)
    let b_elems: Vec<(usize, usize)> = {
        let mut v = Vec::new();
        for (s, &c) in b.carriers.iter().enumerate() {
            for e in 0..c {
                v.push((s, e));
            }
        }
        v
    };
    // multi-x gamma: one distinguished variable per element of B
    let multi = multi_gamma(gamma, &b_elems);
    let mgcat = GammaCatalog::from_spec(&theory.signature, &multi);
    let mcat = Arc::new(build_catalog(
        &theory.signature,
        &mgcat,
        level,
        AlphaGrammar::UnaryDistinct,
    ));
    let mctx = SpaceCtx::new(ambient.clone(), mcat);
    // embed B into the ambient: by construction of the caller, the ambient
    // starts with A ⊔ B, so B's element (s, e) is at offset carriers_A[s] + e
    let b_in_ambient: Vec<usize> = b_elems
        .iter()
        .map(|&(s, e)| a.carriers[s] + e)
        .collect();
    let target = mctx.realized_diagram(&b_in_ambient);
    let empty_diagram_atoms: Vec<usize> = mgcat
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, at)| at.param_sorts.is_empty())
        .map(|(i, _)| i)
        .collect();
    let mut seen: BTreeSet<Diagram> = BTreeSet::new();
    let mut tuple = vec![0usize; b_elems.len()];
    count_a_tuples(
        &mctx,
        a,
        &b_elems,
        0,
        &mut tuple,
        &empty_diagram_atoms,
        &target,
        &mut seen,
    );
    Ok((hom_count, seen.len()))
}

fn multi_gamma(gamma: &GammaSpec, b_elems: &[(usize, usize)]) -> GammaSpec {
    use crate::dsl::{GArg, GammaAtom};
    let mut atoms: Vec<GammaAtom> = Vec::new();
    for (xi, &(s, _)) in b_elems.iter().enumerate() {
        for atom in &gamma.atoms {
            // only instantiate single-x atoms whose x sort matches
            if gamma.x_sorts.len() != 1 || gamma.x_sorts[0] != s {
                continue;
            }
            let args = atom
                .args
                .iter()
                .map(|g| match g {
                    GArg::X(_) => GArg::X(xi),
                    GArg::Y(j) => GArg::Y(*j),
                })
                .collect();
            let na = GammaAtom {
                rel: atom.rel,
                args,
                param_sorts: atom.param_sorts.clone(),
            };
            if !atoms.contains(&na) {
                atoms.push(na);
            }
        }
    }
    GammaSpec {
        name: format!("{}_multi", gamma.name),
        x_sorts: b_elems.iter().map(|&(s, _)| s).collect(),
        atoms,
    }
}

#[allow(clippy::too_many_arguments)]
fn count_a_tuples(
    mctx: &SpaceCtx,
    a: &FinStructure,
    b_elems: &[(usize, usize)],
    pos: usize,
    tuple: &mut Vec<usize>,
    empty_atoms: &[usize],
    target: &GammaType,
    seen: &mut BTreeSet<Diagram>,
) {
    if pos == b_elems.len() {
        let d = mctx.realized_diagram(tuple);
        // ∅-restriction: the x-only atoms must match the target diagram
        for &atom in empty_atoms {
            let inst = mctx.instance(atom, &[]);
            if d.diagram.get(inst) != target.diagram.get(inst) {
                return;
            }
        }
        // coordinate equality pattern must match b̄ (all-distinct there)
        for i in 0..tuple.len() {
            for j in (i + 1)..tuple.len() {
                let bi = b_elems[i];
                let bj = b_elems[j];
                let same_b = bi == bj;
                let same_a = b_elems[i].0 == b_elems[j].0 && tuple[i] == tuple[j];
                if same_b != same_a {
                    return;
                }
            }
        }
        seen.insert(d.diagram);
        return;
    }
    // A's element (s, e) sits at offset e in the ambient (A ⊔ B order)
    let s = b_elems[pos].0;
    for e in 0..a.carriers[s] {
        tuple[pos] = e;
        count_a_tuples(mctx, a, b_elems, pos + 1, tuple, empty_atoms, target, seen);
    }
}

/// Stability badge over seeds, sizes, and the escalated level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Badge {
    Stable,
    Unstable,
    Inconclusive,
}

pub struct StabilityRun {
    pub label: String,
    pub code: Vec<u8>,
    pub size: usize,
    pub aut_order: u64,
}

pub struct StabilityReport {
    pub badge: Badge,
    pub runs: Vec<StabilityRun>,
}

/// Extract cores across ≥3 seeds at size n, once at size n2, and once at the
/// escalated level; STABLE iff all canonical codes agree.
#[allow(clippy::too_many_arguments)]
pub fn stability_harness(
    theory: &UniversalTheory,
    gamma: &GammaSpec,
    level: Level,
    seeds: &[u64],
    models: &dyn Fn(usize, u64) -> Result<FinStructure, PcError>,
    n: usize,
    n2: usize,
    budget: Budget,
) -> Result<(StabilityReport, Option<CoreExtraction>), PcError> {
    let mut runs: Vec<StabilityRun> = Vec::new();
    let mut first: Option<CoreExtraction> = None;
    let mut incomplete = false;
    let mut jobs: Vec<(String, usize, u64, Level)> = Vec::new();
    for &seed in seeds {
        jobs.push((format!("n={n} seed={seed}"), n, seed, level));
    }
    jobs.push((format!("n={n2} seed={}", seeds[0]), n2, seeds[0], level));
    jobs.push((
        format!("n={n} seed={} level+1", seeds[0]),
        n,
        seeds[0],
        level.escalate(),
    ));
    for (label, size, seed, lvl) in jobs {
        let model = models(size, seed)?;
        let mut opts = ExtractOpts::new(lvl);
        opts.seed = seed;
        let ex = extract_core(&model, theory, gamma, &opts, budget)?;
        if !ex.core.mining_complete || !ex.core.minimal_certain {
            incomplete = true;
        }
        let aut = automorphism_group(&ex.core.structure, budget)?;
        runs.push(StabilityRun {
            label,
            code: ex.core.code.clone(),
            size: ex.core.points.len(),
            aut_order: aut.order,
        });
        if first.is_none() {
            first = Some(ex);
        }
    }
    let all_equal = runs.windows(2).all(|w| w[0].code == w[1].code);
    let badge = if incomplete {
        Badge::Inconclusive
    } else if all_equal {
        Badge::Stable
    } else {
        Badge::Unstable
    };
    Ok((StabilityReport { badge, runs }, first))
}

/// Explicit-space convenience: the minimal retract of a fully enumerated
/// space, as a Core.
pub fn minimal_retract_explicit(space: &TypeSpace, budget: Budget) -> Result<Core, PcError> {
    let tables = materialize(&space.ctx, &space.points);
    let (alive, retraction, certain) = minimal_retract_indices(&tables, budget)?;
    let points: Vec<GammaType> = alive.iter().map(|&i| space.points[i].clone()).collect();
    let structure = materialize(&space.ctx, &points);
    let code = core_code(&structure);
    Ok(Core {
        points,
        structure,
        code,
        retraction,
        subspace: space.points.clone(),
        minimal_certain: certain,
        mining_complete: space.complete,
        level: space.ctx.catalog.level,
        seed: 0,
    })
}
