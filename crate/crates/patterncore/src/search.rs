//! Constraint search over type diagrams: a small clause-propagating DFS
//! solver for queries of the form "is there a consistent γ-type omitting
//! these pattern tuples and representing those", plus the mining loop that
//! enumerates maximal omission patterns without materializing the space.
//!
//! Soundness contract: clause pruning is an over-approximation argument (a
//! fully matched forbidden clause admits no consistent completion below the
//! node), and every leaf is verified exactly by the one-point-extension
//! completion check, so answers are exact up to the node budget.

use std::collections::BTreeSet;

use crate::patspace::{
    check_realization, Diagram, GammaType, RCoord, SpaceCtx,
};
use crate::sig::{Elem, UniversalTheory};
use crate::{Budget, PcError};

/// A tuple-with-bindings to audit: `binds[i] = None` means slot i is the
/// searched diagram, `Some(k)` binds slot i to the k-th fixed diagram.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct AuditEntry {
    pub tuple: usize,
    pub binds: Vec<Option<usize>>,
}

impl AuditEntry {
    pub fn unary(tuple: usize) -> Self {
        AuditEntry {
            tuple,
            binds: vec![None],
        }
    }
}

/// Evaluate an entry with the Var slots bound to `d`.
pub fn eval_entry(ctx: &SpaceCtx, entry: &AuditEntry, fixed: &[&Diagram], d: &Diagram) -> bool {
    let sel: Vec<&Diagram> = entry
        .binds
        .iter()
        .map(|b| match b {
            None => d,
            Some(k) => fixed[*k],
        })
        .collect();
    ctx.eval_tuple(entry.tuple, &sel)
}

/// A forbidden partial assignment: conflict when every (instance, wanted)
/// pair is matched.
#[derive(Clone, Debug)]
pub struct Clause {
    pub lits: Vec<(u32, bool)>,
}

/// One representation requirement: at least one option must be fully matched.
#[derive(Clone, Debug)]
pub struct RepCon {
    pub options: Vec<Vec<(u32, bool)>>,
}

/// Precompiled constraint forms of one audit entry.
#[derive(Clone, Debug, Default)]
pub struct EntryConstraints {
    /// Omission form: all these clauses (one per witness tuple).
    pub clauses: Vec<Clause>,
    /// Representation form: one of these options.
    pub rep: Vec<Vec<(u32, bool)>>,
}

/// Compile the omission/representation constraints of an entry: for each
/// parameter tuple b in α(M) whose fixed slots hold, the Var-slot literals.
pub fn compile_entry(
    ctx: &SpaceCtx,
    entry: &AuditEntry,
    fixed: &[&Diagram],
) -> EntryConstraints {
    let t = &ctx.catalog.tuples[entry.tuple];
    let mut out = EntryConstraints::default();
    'outer: for b in ctx.alpha_sets[entry.tuple].iter() {
        let mut lits: Vec<(u32, bool)> = Vec::new();
        for (slot, bind) in entry.binds.iter().enumerate() {
            match bind {
                Some(k) => {
                    if !ctx.phi_holds(fixed[*k], &t.phis[slot], b) {
                        continue 'outer; // this b can never witness the tuple
                    }
                }
                None => {
                    let mut scratch: Vec<Elem> = Vec::new();
                    for lit in &t.phis[slot] {
                        scratch.clear();
                        for &s in &lit.slot_map {
                            scratch.push(b[s as usize]);
                        }
                        let inst = ctx.instance(lit.atom, &scratch) as u32;
                        let want = lit.positive;
                        if lits.contains(&(inst, !want)) {
                            continue 'outer; // internally contradictory at this b
                        }
                        if !lits.contains(&(inst, want)) {
                            lits.push((inst, want));
                        }
                    }
                }
            }
        }
        lits.sort();
        out.rep.push(lits.clone());
        out.clauses.push(Clause { lits });
    }
    out
}

/// All realization shapes of the distinguished tuple, canonical order:
/// all-fresh-distinct first, then shapes reusing groups or old elements.
pub fn realization_shapes(ctx: &SpaceCtx) -> Vec<Vec<RCoord>> {
    let k = ctx.catalog.gamma.x_sorts.len();
    let mut out = Vec::new();
    let mut cur: Vec<RCoord> = Vec::new();
    fn rec(ctx: &SpaceCtx, k: usize, cur: &mut Vec<RCoord>, out: &mut Vec<Vec<RCoord>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        let coord = cur.len();
        let groups = cur
            .iter()
            .filter_map(|c| match c {
                RCoord::Fresh(g) => Some(*g + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        for g in 0..groups {
            let same_sort = cur.iter().enumerate().any(|(i, c)| {
                *c == RCoord::Fresh(g)
                    && ctx.catalog.gamma.x_sorts[i] == ctx.catalog.gamma.x_sorts[coord]
            });
            if same_sort {
                cur.push(RCoord::Fresh(g));
                rec(ctx, k, cur, out);
                cur.pop();
            }
        }
        cur.push(RCoord::Fresh(groups));
        rec(ctx, k, cur, out);
        cur.pop();
        for b in 0..ctx.model.carriers[ctx.catalog.gamma.x_sorts[coord]] {
            cur.push(RCoord::Old(b));
            rec(ctx, k, cur, out);
            cur.pop();
        }
    }
    rec(ctx, k, &mut cur, &mut out);
    // all-distinct-fresh first: it is the generic shape
    out.sort_by_key(|shape| {
        let olds = shape.iter().filter(|c| matches!(c, RCoord::Old(_))).count();
        let shared = {
            let mut seen = BTreeSet::new();
            shape
                .iter()
                .filter(|c| match c {
                    RCoord::Fresh(g) => !seen.insert(*g),
                    _ => false,
                })
                .count()
        };
        (olds, shared)
    });
    out
}

/// The type searcher: clause-compiled theory consistency per realization
/// shape, DFS with unit propagation, exact leaf verification.
pub struct TypeSearcher<'a> {
    pub ctx: &'a SpaceCtx,
    pub theory: &'a UniversalTheory,
    shapes: Vec<Vec<RCoord>>,
}

impl<'a> TypeSearcher<'a> {
    pub fn new(ctx: &'a SpaceCtx, theory: &'a UniversalTheory) -> Self {
        let shapes = realization_shapes(ctx);
        TypeSearcher { ctx, theory, shapes }
    }

    /// Pinned instance values under a realization shape: equality instances
    /// and instances whose distinguished arguments are all old elements.
    fn pins(&self, shape: &[RCoord]) -> Vec<Option<bool>> {
        use crate::dsl::GArg;
        let ctx = self.ctx;
        let mut pins: Vec<Option<bool>> = vec![None; ctx.n_instances];
        for (atom_id, atom) in ctx.catalog.gamma.atoms.iter().enumerate() {
            let all_old = atom.args.iter().all(|g| match g {
                GArg::X(i) => matches!(shape[*i], RCoord::Old(_)),
                GArg::Y(_) => true,
            });
            let mut params = vec![0usize; atom.param_sorts.len()];
            walk(ctx, atom_id, 0, &mut params, &mut |inst, params| {
                match atom.rel {
                    None => {
                        let xi = match atom.args[0] {
                            GArg::X(i) => i,
                            GArg::Y(_) => unreachable!(),
                        };
                        let truth = match shape[xi] {
                            RCoord::Old(b) => b == params[0],
                            RCoord::Fresh(_) => false,
                        };
                        pins[inst] = Some(truth);
                    }
                    Some(rid) => {
                        if all_old {
                            let args: Vec<Elem> = atom
                                .args
                                .iter()
                                .map(|g| match g {
                                    GArg::X(i) => match shape[*i] {
                                        RCoord::Old(b) => b,
                                        RCoord::Fresh(_) => unreachable!(),
                                    },
                                    GArg::Y(j) => params[*j],
                                })
                                .collect();
                            pins[inst] = Some(ctx.model.holds(rid, &args));
                        }
                    }
                }
            });
        }
        pins
    }

    /// Config-derived clauses under a shape: forbidden configs instantiated
    /// with at least one variable at a fresh point, literals translated to
    /// instance bits where γ denotes them; undenotable instantiations are
    /// left to the exact leaf check.
    fn config_clauses(&self, shape: &[RCoord]) -> Vec<Clause> {
        use crate::dsl::GArg;
        let ctx = self.ctx;
        let groups: usize = shape
            .iter()
            .filter_map(|c| match c {
                RCoord::Fresh(g) => Some(*g + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        if groups == 0 {
            return Vec::new();
        }
        // group -> a representative coordinate (for sort and denotation)
        let mut group_coord = vec![usize::MAX; groups];
        for (i, c) in shape.iter().enumerate() {
            if let RCoord::Fresh(g) = c {
                if group_coord[*g] == usize::MAX {
                    group_coord[*g] = i;
                }
            }
        }
        #[derive(Clone, Copy, PartialEq)]
        enum Target {
            Old(Elem),
            Grp(usize),
        }
        let mut clauses = Vec::new();
        for cfg in &self.theory.forbidden {
            let nv = cfg.num_vars();
            let mut targets: Vec<Target> = vec![Target::Old(0); nv];
            let mut stack = vec![0usize];
            // enumerate |M|+groups choices per variable
            let mut counters = vec![0usize; nv];
            let _ = &mut stack;
            loop {
                // decode counters into targets; counter = old elems then groups
                let mut ok = true;
                let mut any_fresh = false;
                for v in 0..nv {
                    let sort = cfg.var_sorts[v];
                    let m = ctx.model.carriers[sort];
                    let c = counters[v];
                    if c < m {
                        targets[v] = Target::Old(c);
                    } else {
                        let g = c - m;
                        let coord = group_coord[g];
                        if ctx.catalog.gamma.x_sorts[coord] != sort {
                            ok = false;
                            break;
                        }
                        targets[v] = Target::Grp(g);
                        any_fresh = true;
                    }
                }
                'body: {
                    if !ok || !any_fresh {
                        break 'body;
                    }
                    for &(a, b) in &cfg.distinct {
                        if cfg.var_sorts[a] == cfg.var_sorts[b] && targets[a] == targets[b] {
                            break 'body;
                        }
                    }
                    let mut lits: Vec<(u32, bool)> = Vec::new();
                    let mut encodable = true;
                    for lit in &cfg.literals {
                        let ts: Vec<Target> = lit.args.iter().map(|&v| targets[v]).collect();
                        if ts.iter().all(|t| matches!(t, Target::Old(_))) {
                            let args: Vec<Elem> = ts
                                .iter()
                                .map(|t| match t {
                                    Target::Old(e) => *e,
                                    _ => unreachable!(),
                                })
                                .collect();
                            if ctx.model.holds(lit.rel, &args) != lit.positive {
                                break 'body; // constant-false literal: cannot violate
                            }
                            continue; // constant-true: drop
                        }
                        // find a γ-atom denoting this ground tuple
                        match denote(ctx, shape, &group_coord, lit.rel, &ts) {
                            Some(inst) => {
                                let want = lit.positive;
                                if lits.contains(&(inst, !want)) {
                                    break 'body; // contradictory instantiation
                                }
                                if !lits.contains(&(inst, want)) {
                                    lits.push((inst, want));
                                }
                            }
                            None => {
                                encodable = false;
                                break;
                            }
                        }
                    }
                    if encodable && !lits.is_empty() {
                        lits.sort();
                        clauses.push(Clause { lits });
                    }
                }
                // bump counters
                let mut v = 0;
                loop {
                    if v == nv {
                        break;
                    }
                    counters[v] += 1;
                    if counters[v] < ctx.model.carriers[cfg.var_sorts[v]] + groups {
                        break;
                    }
                    counters[v] = 0;
                    v += 1;
                }
                if v == nv {
                    break;
                }
            }
        }
        // helper uses GArg
        fn denote(
            ctx: &SpaceCtx,
            shape: &[RCoord],
            group_coord: &[usize],
            rel: usize,
            ts: &[Target],
        ) -> Option<u32> {
            let _ = group_coord;
            'atoms: for (atom_id, atom) in ctx.catalog.gamma.atoms.iter().enumerate() {
                if atom.rel != Some(rel) {
                    continue;
                }
                let mut params: Vec<Option<Elem>> = vec![None; atom.param_sorts.len()];
                for (pos, g) in atom.args.iter().enumerate() {
                    match (g, &ts[pos]) {
                        (GArg::X(i), Target::Grp(g2)) => {
                            if shape[*i] != RCoord::Fresh(*g2) {
                                continue 'atoms;
                            }
                        }
                        (GArg::X(i), Target::Old(e)) => {
                            if shape[*i] != RCoord::Old(*e) {
                                continue 'atoms;
                            }
                        }
                        (GArg::Y(j), Target::Old(e)) => match params[*j] {
                            None => params[*j] = Some(*e),
                            Some(prev) if prev == *e => {}
                            _ => continue 'atoms,
                        },
                        (GArg::Y(_), Target::Grp(_)) => continue 'atoms,
                    }
                }
                let ps: Option<Vec<Elem>> = params.into_iter().collect();
                if let Some(ps) = ps {
                    return Some(ctx.instance(atom_id, &ps) as u32);
                }
            }
            None
        }
        clauses
    }

    /// Find one consistent type satisfying all constraints, trying every
    /// realization shape.
    pub fn solve(
        &self,
        omit: &[&EntryConstraints],
        represent: &[&EntryConstraints],
        budget: Budget,
    ) -> Result<Option<GammaType>, PcError> {
        for shape in &self.shapes {
            let mut found = None;
            self.dfs_shape(shape, omit, represent, budget, &mut |t| {
                found = Some(t);
                false
            })?;
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }

    /// Enumerate every consistent type (all shapes, deduplicated diagrams).
    pub fn enumerate_all(
        &self,
        budget: Budget,
        f: &mut dyn FnMut(GammaType),
    ) -> Result<(), PcError> {
        let mut seen: BTreeSet<Diagram> = BTreeSet::new();
        for shape in &self.shapes {
            self.dfs_shape(shape, &[], &[], budget, &mut |t| {
                if seen.insert(t.diagram.clone()) {
                    f(t);
                }
                true
            })?;
        }
        Ok(())
    }

    fn dfs_shape(
        &self,
        shape: &[RCoord],
        omit: &[&EntryConstraints],
        represent: &[&EntryConstraints],
        budget: Budget,
        on_solution: &mut dyn FnMut(GammaType) -> bool,
    ) -> Result<(), PcError> {
        let ctx = self.ctx;
        let pins = self.pins(shape);
        let mut clauses: Vec<&Clause> = Vec::new();
        let config = self.config_clauses(shape);
        for c in &config {
            clauses.push(c);
        }
        for e in omit {
            for c in &e.clauses {
                clauses.push(c);
            }
        }
        let reps: Vec<&Vec<Vec<(u32, bool)>>> = represent.iter().map(|e| &e.rep).collect();
        let mut engine = Engine::new(ctx.n_instances, clauses, reps, budget);
        for (i, p) in pins.iter().enumerate() {
            if let Some(v) = p {
                if !engine.assume(i as u32, *v) {
                    return Ok(()); // pinned values already conflict
                }
            }
        }
        let mut cont = true;
        engine.search(&mut |assign| {
            let mut d = Diagram::new(ctx.n_instances);
            for (i, v) in assign.iter().enumerate() {
                d.set(i, *v == 1);
            }
            match check_realization(ctx, self.theory, &d, shape, budget) {
                Ok(Some(t)) => {
                    cont = on_solution(t);
                    cont
                }
                Ok(None) => true,
                Err(_) => false,
            }
        })?;
        Ok(())
    }
}

fn walk(
    ctx: &SpaceCtx,
    atom_id: usize,
    pos: usize,
    params: &mut Vec<Elem>,
    f: &mut dyn FnMut(usize, &[Elem]),
) {
    let atom = &ctx.catalog.gamma.atoms[atom_id];
    if pos == atom.param_sorts.len() {
        f(ctx.instance(atom_id, params), params);
        return;
    }
    for e in 0..ctx.model.carriers[atom.param_sorts[pos]] {
        params[pos] = e;
        walk(ctx, atom_id, pos + 1, params, f);
    }
}

/// The DFS engine: assignment trail, clause counters, unit propagation,
/// representation-option liveness.
struct Engine<'c> {
    assign: Vec<i8>, // -1 free, 0 false, 1 true
    clauses: Vec<&'c Clause>,
    matched: Vec<u32>,
    unassigned: Vec<u32>,
    by_inst: Vec<Vec<u32>>,
    reps: Vec<&'c Vec<Vec<(u32, bool)>>>,
    rep_alive: Vec<u32>,
    opt_dead: Vec<Vec<u32>>, // mismatch counters per option
    rep_by_inst: Vec<Vec<(u32, u32)>>,
    trail: Vec<u32>,
    nodes: u64,
    budget: u64,
}

impl<'c> Engine<'c> {
    fn new(
        n: usize,
        clauses: Vec<&'c Clause>,
        reps: Vec<&'c Vec<Vec<(u32, bool)>>>,
        budget: Budget,
    ) -> Self {
        let mut by_inst = vec![Vec::new(); n];
        let mut matched = Vec::with_capacity(clauses.len());
        let mut unassigned = Vec::with_capacity(clauses.len());
        for (ci, c) in clauses.iter().enumerate() {
            matched.push(0);
            unassigned.push(c.lits.len() as u32);
            for &(i, _) in &c.lits {
                by_inst[i as usize].push(ci as u32);
            }
        }
        let mut rep_by_inst = vec![Vec::new(); n];
        let mut rep_alive = Vec::with_capacity(reps.len());
        let mut opt_dead = Vec::with_capacity(reps.len());
        for (ri, r) in reps.iter().enumerate() {
            rep_alive.push(r.len() as u32);
            opt_dead.push(vec![0u32; r.len()]);
            for (oi, opt) in r.iter().enumerate() {
                for &(i, _) in opt {
                    rep_by_inst[i as usize].push((ri as u32, oi as u32));
                }
            }
        }
        Engine {
            assign: vec![-1; n],
            clauses,
            matched,
            unassigned,
            by_inst,
            reps,
            rep_alive,
            opt_dead,
            rep_by_inst,
            trail: Vec::new(),
            nodes: 0,
            budget: budget.nodes,
        }
    }

    /// Assign with propagation bookkeeping; false on conflict.
    fn assume(&mut self, inst: u32, v: bool) -> bool {
        if self.assign[inst as usize] != -1 {
            return self.assign[inst as usize] == v as i8;
        }
        self.assign[inst as usize] = v as i8;
        self.trail.push(inst);
        let mut conflict = false;
        for k in 0..self.by_inst[inst as usize].len() {
            let ci = self.by_inst[inst as usize][k] as usize;
            let want = self.clauses[ci]
                .lits
                .iter()
                .find(|(i, _)| *i == inst)
                .unwrap()
                .1;
            self.unassigned[ci] -= 1;
            if want == v {
                self.matched[ci] += 1;
                if self.matched[ci] as usize == self.clauses[ci].lits.len() {
                    conflict = true;
                }
            }
        }
        for k in 0..self.rep_by_inst[inst as usize].len() {
            let (ri, oi) = self.rep_by_inst[inst as usize][k];
            let want = self.reps[ri as usize][oi as usize]
                .iter()
                .find(|(i, _)| *i == inst)
                .unwrap()
                .1;
            if want != v {
                self.opt_dead[ri as usize][oi as usize] += 1;
                if self.opt_dead[ri as usize][oi as usize] == 1 {
                    self.rep_alive[ri as usize] -= 1;
                    if self.rep_alive[ri as usize] == 0 {
                        conflict = true;
                    }
                }
            }
        }
        !conflict
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let inst = self.trail.pop().unwrap();
            let v = self.assign[inst as usize] == 1;
            self.assign[inst as usize] = -1;
            for k in 0..self.by_inst[inst as usize].len() {
                let ci = self.by_inst[inst as usize][k] as usize;
                let want = self.clauses[ci]
                    .lits
                    .iter()
                    .find(|(i, _)| *i == inst)
                    .unwrap()
                    .1;
                self.unassigned[ci] += 1;
                if want == v {
                    self.matched[ci] -= 1;
                }
            }
            for k in 0..self.rep_by_inst[inst as usize].len() {
                let (ri, oi) = self.rep_by_inst[inst as usize][k];
                let want = self.reps[ri as usize][oi as usize]
                    .iter()
                    .find(|(i, _)| *i == inst)
                    .unwrap()
                    .1;
                if want != v {
                    self.opt_dead[ri as usize][oi as usize] -= 1;
                    if self.opt_dead[ri as usize][oi as usize] == 0 {
                        self.rep_alive[ri as usize] += 1;
                    }
                }
            }
        }
    }

    /// Unit propagation over clauses: a clause with one unassigned literal
    /// and everything else matched forces that literal negated.
    fn propagate(&mut self) -> bool {
        loop {
            let mut forced: Option<(u32, bool)> = None;
            for ci in 0..self.clauses.len() {
                if self.unassigned[ci] == 1
                    && self.matched[ci] as usize == self.clauses[ci].lits.len() - 1
                {
                    for &(i, w) in &self.clauses[ci].lits {
                        if self.assign[i as usize] == -1 {
                            forced = Some((i, !w));
                            break;
                        }
                    }
                    if forced.is_some() {
                        break;
                    }
                }
            }
            match forced {
                Some((i, v)) => {
                    if !self.assume(i, v) {
                        return false;
                    }
                }
                None => return true,
            }
        }
    }

    fn search(&mut self, on_full: &mut dyn FnMut(&[i8]) -> bool) -> Result<bool, PcError> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(PcError::Budget("type search".into()));
        }
        let mark = self.trail.len();
        if !self.propagate() {
            self.undo_to(mark);
            return Ok(true);
        }
        let next = self.assign.iter().position(|&a| a == -1);
        match next {
            None => {
                let cont = on_full(&self.assign);
                self.undo_to(mark);
                Ok(cont)
            }
            Some(i) => {
                for v in [false, true] {
                    let m2 = self.trail.len();
                    if self.assume(i as u32, v) {
                        let cont = self.search(on_full)?;
                        if !cont {
                            self.undo_to(mark);
                            return Ok(false);
                        }
                    }
                    self.undo_to(m2);
                }
                self.undo_to(mark);
                Ok(true)
            }
        }
    }
}

/// A mined maximal pattern: the held entries (bitset over the entry list)
/// and a witness type realizing it.
#[derive(Clone, Debug)]
pub struct MinedPattern {
    pub held: Vec<u64>,
    pub witness: GammaType,
}

/// Mining outcome; `complete` is false when a budget or cap was hit.
#[derive(Debug, Default)]
pub struct Mining {
    pub patterns: Vec<MinedPattern>,
    pub complete: bool,
}

pub fn held_bit(bits: &[u64], i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

/// Enumerate the ⊆-maximal held-entry patterns over all consistent types.
///
/// Strategy: reduce entries to representatives of identical columns over a
/// witness pool, branch-enumerate maximal patterns over the representatives
/// with SAT checks, then grow the pool with every witness and iterate until
/// the pattern set stabilizes. Maximality is certified on the class
/// representatives; downstream audits re-verify pattern facts exactly.
pub fn mine_maximal(
    ctx: &SpaceCtx,
    theory: &UniversalTheory,
    entries: &[AuditEntry],
    fixed: &[&Diagram],
    pool_seed: &[GammaType],
    budget: Budget,
) -> Result<Mining, PcError> {
    let searcher = TypeSearcher::new(ctx, theory);
    let compiled: Vec<EntryConstraints> = crate::par::indexed_map(entries.len(), |i| {
        compile_entry(ctx, &entries[i], fixed)
    });
    let compiled: Vec<EntryConstraints> = compiled;
    let mut pool: Vec<GammaType> = pool_seed.to_vec();
    if pool.is_empty() {
        match searcher.solve(&[], &[], budget)? {
            Some(t) => pool.push(t),
            None => {
                return Ok(Mining {
                    patterns: vec![],
                    complete: true,
                })
            }
        }
    }
    let full_eval = |t: &GammaType| -> Vec<u64> {
        let cols: Vec<bool> = crate::par::indexed_map(entries.len(), |i| {
            eval_entry(ctx, &entries[i], fixed, &t.diagram)
        });
        let mut bits = vec![0u64; entries.len().div_ceil(64)];
        for (i, c) in cols.iter().enumerate() {
            if *c {
                set_bit(&mut bits, i);
            }
        }
        bits
    };
    let mut complete = true;
    let mut patterns: Vec<MinedPattern> = Vec::new();
    let max_rounds = 5;
    for _round in 0..max_rounds {
        // column classes over the pool
        let pool_cols: Vec<Vec<u64>> = pool.iter().map(&full_eval).collect();
        let mut reps: Vec<usize> = Vec::new();
        let mut seen_cols: Vec<Vec<bool>> = Vec::new();
        for e in 0..entries.len() {
            let col: Vec<bool> = pool_cols.iter().map(|c| held_bit(c, e)).collect();
            if !seen_cols.contains(&col) {
                seen_cols.push(col);
                reps.push(e);
            }
        }
        // branch enumeration over representatives
        let mut found_witnesses: Vec<GammaType> = Vec::new();
        let mut stack: Vec<(Vec<usize>, Vec<usize>, usize)> = vec![(vec![], vec![], 0)];
        let cap = 4096usize;
        let mut pops = 0usize;
        while let Some((mut omit, mut rep, start)) = stack.pop() {
            pops += 1;
            if pops > cap {
                complete = false;
                break;
            }
            let oc: Vec<&EntryConstraints> = omit.iter().map(|&e| &compiled[e]).collect();
            let rc: Vec<&EntryConstraints> = rep.iter().map(|&e| &compiled[e]).collect();
            let mut w = match searcher.solve(&oc, &rc, budget) {
                Ok(Some(w)) => w,
                Ok(None) => continue,
                Err(PcError::Budget(b)) => {
                    complete = false;
                    let _ = b;
                    break;
                }
                Err(e) => return Err(e),
            };
            for idx in start..reps.len() {
                let e = reps[idx];
                let w_holds = eval_entry(ctx, &entries[e], fixed, &w.diagram);
                if w_holds {
                    stack.push((omit.clone(), [rep.clone(), vec![e]].concat(), idx + 1));
                    omit.push(e);
                    continue;
                }
                let mut oc2: Vec<&EntryConstraints> =
                    omit.iter().map(|&x| &compiled[x]).collect();
                oc2.push(&compiled[e]);
                let rc2: Vec<&EntryConstraints> = rep.iter().map(|&x| &compiled[x]).collect();
                match searcher.solve(&oc2, &rc2, budget) {
                    Ok(Some(w2)) => {
                        stack.push((omit.clone(), [rep.clone(), vec![e]].concat(), idx + 1));
                        omit.push(e);
                        w = w2;
                    }
                    Ok(None) => rep.push(e),
                    Err(PcError::Budget(_)) => {
                        complete = false;
                        rep.push(e);
                    }
                    Err(err) => return Err(err),
                }
            }
            found_witnesses.push(w);
        }
        // record full patterns of every witness, maximized over the reps
        let mut new_patterns: Vec<MinedPattern> = Vec::new();
        for w in &found_witnesses {
            new_patterns.push(MinedPattern {
                held: full_eval(w),
                witness: w.clone(),
            });
        }
        // keep only ⊆-maximal, dedup
        let mut keep: Vec<MinedPattern> = Vec::new();
        'outer: for p in new_patterns.into_iter().chain(patterns.clone()) {
            for q in keep.iter() {
                if crate::patspace::subset_bits(&p.held, &q.held) {
                    continue 'outer;
                }
            }
            keep.retain(|q| !crate::patspace::subset_bits(&q.held, &p.held));
            keep.push(p);
        }
        keep.sort_by(|a, b| a.held.cmp(&b.held));
        let stable = keep.len() == patterns.len()
            && keep
                .iter()
                .zip(patterns.iter())
                .all(|(a, b)| a.held == b.held);
        patterns = keep;
        for w in found_witnesses {
            if !pool.iter().any(|p| p.diagram == w.diagram) {
                pool.push(w);
            }
        }
        if stable {
            break;
        }
    }
    Ok(Mining { patterns, complete })
}

/// Maximal 1-point omission patterns over the implicit space: entries are
/// the unary catalog tuples, the pool is seeded with every realized type.
pub fn maximal_unary_patterns(
    ctx: &SpaceCtx,
    theory: &UniversalTheory,
    budget: Budget,
) -> Result<Mining, PcError> {
    let entries: Vec<AuditEntry> = ctx
        .catalog
        .unary
        .iter()
        .map(|&t| AuditEntry::unary(t))
        .collect();
    let pool = realized_types(ctx);
    mine_maximal(ctx, theory, &entries, &[], &pool, budget)
}

/// All realized types tp(a/M), a over the distinguished sorts.
pub fn realized_types(ctx: &SpaceCtx) -> Vec<GammaType> {
    let k = ctx.catalog.gamma.x_sorts.len();
    let mut out = Vec::new();
    let mut a = vec![0usize; k];
    fn rec(ctx: &SpaceCtx, pos: usize, a: &mut Vec<Elem>, out: &mut Vec<GammaType>) {
        if pos == a.len() {
            out.push(ctx.realized_diagram(a));
            return;
        }
        for e in 0..ctx.model.carriers[ctx.catalog.gamma.x_sorts[pos]] {
            a[pos] = e;
            rec(ctx, pos + 1, a, out);
        }
    }
    if k > 0 {
        rec(ctx, 0, &mut a, &mut out);
    }
    out
}
