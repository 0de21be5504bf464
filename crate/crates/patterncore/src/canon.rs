//! Canonical labeling of finite relational structures by iterative partition
//! refinement over relation-incidence descriptors, followed by backtracking
//! over the coarsest stable partition. Ties are broken by the lexicographic
//! minimal table encoding, so the code is a deterministic byte string, stable
//! across runs and platforms.
//!
//! The engine works on a color/table view so it can serve both plain
//! [`FinStructure`]s and core structures whose relations are an unordered set
//! of materialized tables.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::sig::FinStructure;

/// A structure presented as colored points plus unordered tuple tables.
#[derive(Clone, Debug)]
pub struct LabeledStructure {
    /// Initial color of each point (sorts, or any iso-invariant precoloring).
    pub colors: Vec<u32>,
    /// Tuple tables; tuples index points. Table order must not matter, and it
    /// does not: tables are grouped by (arity, size) for refinement and the
    /// final encoding sorts relabeled tables by content.
    pub tables: Vec<Vec<Vec<usize>>>,
}

/// Result of canonicalization.
#[derive(Clone, Debug)]
pub struct CanonOutcome {
    pub code: Vec<u8>,
    /// One labeling achieving the code: `labeling[p]` = canonical index of p.
    pub labeling: Vec<usize>,
    /// Automorphisms as point permutations (only in `WithAutomorphisms` mode;
    /// the full group, not just generators, since these structures are tiny).
    pub automorphisms: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CanonMode {
    CodeOnly,
    WithAutomorphisms,
}

struct Ctx<'a> {
    ls: &'a LabeledStructure,
    n: usize,
    /// tables grouped into classes with equal (arity, len); class order is
    /// by that invariant, so it is labeling-independent.
    table_classes: Vec<Vec<usize>>,
    /// per point, tuples containing it: (table, tuple index)
    incidence: Vec<Vec<(usize, usize)>>,
    mode: CanonMode,
    best: Option<Vec<u32>>,
    best_labelings: Vec<Vec<usize>>,
}

/// Canonicalize a labeled structure.
pub fn canonical(ls: &LabeledStructure, mode: CanonMode) -> CanonOutcome {
    let n = ls.colors.len();
    let mut class_keys: Vec<(usize, usize, usize)> = ls
        .tables
        .iter()
        .enumerate()
        .map(|(i, t)| (t.first().map(|x| x.len()).unwrap_or(0), t.len(), i))
        .collect();
    class_keys.sort();
    let mut table_classes: Vec<Vec<usize>> = Vec::new();
    for (a, l, i) in class_keys {
        match table_classes.last_mut() {
            Some(c)
                if {
                    let j = c[0];
                    let t = &ls.tables[j];
                    (t.first().map(|x| x.len()).unwrap_or(0), t.len()) == (a, l)
                } =>
            {
                c.push(i)
            }
            _ => table_classes.push(vec![i]),
        }
    }
    let mut incidence = vec![Vec::new(); n];
    for (ti, t) in ls.tables.iter().enumerate() {
        for (tj, tup) in t.iter().enumerate() {
            for &p in tup {
                if incidence[p].last() != Some(&(ti, tj)) {
                    incidence[p].push((ti, tj));
                }
            }
        }
    }
    let mut ctx = Ctx {
        ls,
        n,
        table_classes,
        incidence,
        mode,
        best: None,
        best_labelings: Vec::new(),
    };
    let cells = initial_partition(ls);
    search(&mut ctx, cells);
    let best = ctx.best.expect("canonical search always reaches a leaf");
    let code = encode_bytes(&best);
    let labeling = ctx.best_labelings[0].clone();
    let automorphisms = if mode == CanonMode::WithAutomorphisms {
        let l0 = &ctx.best_labelings[0];
        let mut inv0 = vec![0usize; n];
        for (p, &c) in l0.iter().enumerate() {
            inv0[c] = p;
        }
        let mut autos = Vec::new();
        for l in &ctx.best_labelings {
            // sigma = inv0 ∘ l : p -> inv0[l[p]]
            let sigma: Vec<usize> = (0..n).map(|p| inv0[l[p]]).collect();
            autos.push(sigma);
        }
        autos.sort();
        autos.dedup();
        autos
    } else {
        Vec::new()
    };
    CanonOutcome {
        code,
        labeling,
        automorphisms,
    }
}

fn initial_partition(ls: &LabeledStructure) -> Vec<Vec<usize>> {
    let mut by_color: Vec<(u32, usize)> = ls.colors.iter().cloned().zip(0..).collect();
    by_color.sort();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for (c, p) in by_color {
        match cells.last_mut() {
            Some(cell) if ls.colors[cell[0]] == c => cell.push(p),
            _ => cells.push(vec![p]),
        }
    }
    cells
}

fn refine(ctx: &Ctx, mut cells: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let n = ctx.n;
    loop {
        let mut cell_of = vec![0usize; n];
        for (ci, cell) in cells.iter().enumerate() {
            for &p in cell {
                cell_of[p] = ci;
            }
        }
        // signature per point: hash of per-class multiset of incidence descriptors
        let sigs: Vec<u64> = (0..n)
            .map(|p| {
                let mut h = DefaultHasher::new();
                for class in &ctx.table_classes {
                    let mut descs: Vec<Vec<u64>> = Vec::new();
                    for &ti in class {
                        let mut d: Vec<u64> = Vec::new();
                        for &(t2, tj) in &ctx.incidence[p] {
                            if t2 != ti {
                                continue;
                            }
                            let tup = &ctx.ls.tables[ti][tj];
                            let mut h2 = DefaultHasher::new();
                            for (pos, &q) in tup.iter().enumerate() {
                                (pos as u64, cell_of[q] as u64, (q == p) as u64).hash(&mut h2);
                            }
                            d.push(h2.finish());
                        }
                        d.sort();
                        descs.push(d);
                    }
                    descs.sort();
                    descs.hash(&mut h);
                }
                h.finish()
            })
            .collect();
        let mut next: Vec<Vec<usize>> = Vec::new();
        let mut changed = false;
        for cell in &cells {
            if cell.len() == 1 {
                next.push(cell.clone());
                continue;
            }
            let mut keyed: Vec<(u64, usize)> = cell.iter().map(|&p| (sigs[p], p)).collect();
            keyed.sort();
            let mut start = 0;
            for i in 1..=keyed.len() {
                if i == keyed.len() || keyed[i].0 != keyed[start].0 {
                    next.push(keyed[start..i].iter().map(|&(_, p)| p).collect());
                    if i - start != cell.len() {
                        changed = true;
                    }
                    start = i;
                }
            }
        }
        cells = next;
        if !changed {
            return cells;
        }
    }
}

fn search(ctx: &mut Ctx, cells: Vec<Vec<usize>>) {
    let cells = refine(ctx, cells);
    if let Some(target) = cells.iter().position(|c| c.len() > 1) {
        let members = cells[target].clone();
        for &m in &members {
            let mut split = Vec::with_capacity(cells.len() + 1);
            for (ci, cell) in cells.iter().enumerate() {
                if ci == target {
                    split.push(vec![m]);
                    split.push(cell.iter().cloned().filter(|&p| p != m).collect());
                } else {
                    split.push(cell.clone());
                }
            }
            search(ctx, split);
        }
        return;
    }
    // discrete partition: a labeling
    let mut labeling = vec![0usize; ctx.n];
    for (idx, cell) in cells.iter().enumerate() {
        labeling[cell[0]] = idx;
    }
    let enc = encode(ctx.ls, &labeling);
    match &ctx.best {
        Some(best) if enc > *best => {}
        Some(best) if enc == *best => {
            if ctx.mode == CanonMode::WithAutomorphisms {
                ctx.best_labelings.push(labeling);
            }
        }
        _ => {
            ctx.best = Some(enc);
            ctx.best_labelings = vec![labeling];
        }
    }
}

/// Encoding of the structure under a labeling: color spectrum, then the
/// relabeled tables sorted by content. Lexicographic order on this is the
/// tie-breaker defining the canonical form.
fn encode(ls: &LabeledStructure, labeling: &[usize]) -> Vec<u32> {
    let n = labeling.len();
    let mut out: Vec<u32> = Vec::new();
    out.push(n as u32);
    let mut color_at = vec![0u32; n];
    for (p, &c) in labeling.iter().enumerate() {
        color_at[c] = ls.colors[p];
    }
    out.extend(color_at.iter());
    let mut relabeled: Vec<Vec<u32>> = ls
        .tables
        .iter()
        .map(|t| {
            let mut enc_t: Vec<Vec<u32>> = t
                .iter()
                .map(|tup| tup.iter().map(|&p| labeling[p] as u32).collect())
                .collect();
            enc_t.sort();
            let mut flat = vec![t.first().map(|x| x.len()).unwrap_or(0) as u32, t.len() as u32];
            for tup in enc_t {
                flat.extend(tup);
            }
            flat
        })
        .collect();
    relabeled.sort();
    out.push(relabeled.len() as u32);
    for t in relabeled {
        out.extend(t);
    }
    out
}

fn encode_bytes(enc: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(enc.len() * 4);
    for &x in enc {
        out.extend_from_slice(&x.to_be_bytes());
    }
    out
}

fn flatten(m: &FinStructure) -> (LabeledStructure, Vec<usize>) {
    let mut offsets = vec![0usize; m.carriers.len()];
    let mut acc = 0;
    for (s, &c) in m.carriers.iter().enumerate() {
        offsets[s] = acc;
        acc += c;
    }
    let mut colors = Vec::with_capacity(acc);
    for (s, &c) in m.carriers.iter().enumerate() {
        colors.extend(std::iter::repeat(s as u32).take(c));
    }
    let tables: Vec<Vec<Vec<usize>>> = m
        .signature
        .relations
        .iter()
        .enumerate()
        .map(|(rid, decl)| {
            m.tables[rid]
                .iter()
                .map(|tup| {
                    tup.iter()
                        .enumerate()
                        .map(|(pos, &e)| offsets[decl.profile[pos]] + e)
                        .collect()
                })
                .collect()
        })
        .collect();
    (LabeledStructure { colors, tables }, offsets)
}

/// Canonical code of a finite structure. Two structures over the same
/// signature share a code iff they are isomorphic (isomorphism-complete on
/// the scales this engine enumerates).
///
/// Note the code groups relation tables by (arity, cardinality): distinct
/// relations with those invariants equal are interchangeable in the code, so
/// pass structures whose signature order is fixed (always the case here —
/// signatures come from one parsed theory).
pub fn canonical_code(m: &FinStructure) -> Vec<u8> {
    let (mut ls, _) = flatten(m);
    tag_relations(&mut ls);
    canonical(&ls, CanonMode::CodeOnly).code
}

/// Automorphisms of a finite structure, as permutations of the flattened
/// element index (per-sort offsets in carrier order).
pub fn structure_automorphisms(m: &FinStructure) -> Vec<Vec<usize>> {
    let (mut ls, _) = flatten(m);
    let n = m.total_size();
    tag_relations(&mut ls);
    canonical(&ls, CanonMode::WithAutomorphisms)
        .automorphisms
        .into_iter()
        .map(|p| p[..n].to_vec())
        .collect()
}

/// Relation identity matters for plain structures (the grouped refinement and
/// the sorted-table encoding would otherwise treat equal-shape tables as
/// interchangeable). Appending one synthetic point per nonempty relation, in
/// a relation-specific color, pins identity.
fn tag_relations(ls: &mut LabeledStructure) {
    let base_color = 1_000_000u32;
    for ti in 0..ls.tables.len() {
        if ls.tables[ti].is_empty() {
            continue;
        }
        let p = ls.colors.len();
        ls.colors.push(base_color + ti as u32);
        for tup in &mut ls.tables[ti] {
            tup.push(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sig::{graph_signature, FinStructure};

    fn graph_on(n: usize, edges: &[(usize, usize)]) -> FinStructure {
        let mut m = FinStructure::empty(graph_signature());
        m.carriers[0] = n;
        for &(u, v) in edges {
            m.add_tuple(0, vec![u, v]);
            m.add_tuple(0, vec![v, u]);
        }
        m
    }

    #[test]
    fn isomorphic_c5_share_code() {
        let a = graph_on(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let b = graph_on(5, &[(0, 2), (2, 4), (4, 1), (1, 3), (3, 0)]);
        assert_eq!(canonical_code(&a), canonical_code(&b));
    }

    #[test]
    fn path_and_cycle_differ() {
        let p5 = graph_on(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let c5 = graph_on(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        assert_ne!(canonical_code(&p5), canonical_code(&c5));
    }

    #[test]
    fn c5_has_dihedral_automorphisms() {
        let c5 = graph_on(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        assert_eq!(structure_automorphisms(&c5).len(), 10);
    }

    #[test]
    fn relation_identity_matters() {
        // one point with P; vs one point with Q; two unary relations
        let sig = crate::sig::Signature::new(
            vec!["V".into()],
            vec![
                crate::sig::RelDecl {
                    name: "P".into(),
                    profile: vec![0],
                },
                crate::sig::RelDecl {
                    name: "Q".into(),
                    profile: vec![0],
                },
            ],
        )
        .unwrap();
        let mut a = FinStructure::empty(sig.clone());
        a.carriers[0] = 1;
        a.add_tuple(0, vec![0]);
        let mut b = FinStructure::empty(sig);
        b.carriers[0] = 1;
        b.add_tuple(1, vec![0]);
        assert_ne!(canonical_code(&a), canonical_code(&b));
    }
}
