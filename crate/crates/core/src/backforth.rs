//! The level-by-level equivalence engine: back-and-forth levels between
//! tuples, Scott ranks of finite structures, finite bases, constant and
//! sorted expansions, and quotients.
//!
//! Levels are computed by color refinement over pools of duplicate-free
//! tuples. Level 0 colors a tuple by its quantifier-free type; level k+1
//! refines level k by the set of level-k colors of one-point extensions by
//! *new* elements. Extending a tuple by an element it already contains never
//! separates anything the equality pattern has not separated already, so
//! duplicate-free pools lose nothing; tuples with repeats are handled by
//! collapsing them and comparing repeat patterns.
//!
//! On a pool closed under extensions the refinement stabilizes, and the
//! stable coloring is a back-and-forth system: equal stable colors certify
//! equivalence at every level. On a finite structure that stable relation is
//! exactly automorphic equivalence, which is what the orbit oracle
//! cross-checks.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{invalid, Result};
use crate::ordinal::Ordinal;
use crate::structures::{
    iso_with_pinning, nontrivial_fixing_automorphism, qftp, FiniteStructure, QfType, RelDecl,
    Signature,
};
use crate::{Caps, Error};

// ---------------------------------------------------------------------------
// Tuple pools
// ---------------------------------------------------------------------------

/// Collapse duplicates: returns the duplicate-free tuple and, per position,
/// the index of the position's value inside it.
pub fn dedup_pattern(t: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut seen: Vec<usize> = Vec::new();
    let mut pattern = Vec::with_capacity(t.len());
    for &x in t {
        match seen.iter().position(|&y| y == x) {
            Some(i) => pattern.push(i),
            None => {
                pattern.push(seen.len());
                seen.push(x);
            }
        }
    }
    (seen, pattern)
}

/// A pool of duplicate-free tuples from one or two structures, each tuple an
/// extension of its side's root, together with the one-point-extension graph.
struct Pool {
    sides: usize,
    owner: Vec<u8>,
    tuples: Vec<Vec<usize>>,
    index: HashMap<(u8, Vec<usize>), u32>,
    exts: Vec<Vec<u32>>,
    depth: Vec<u32>,
    roots: Vec<u32>,
}

fn extension_pool_size(free: usize, maxd: usize) -> u64 {
    // sum over l <= maxd of free!/(free-l)! with saturation
    let mut total: u64 = 1;
    let mut term: u64 = 1;
    for l in 0..maxd.min(free) {
        term = term.saturating_mul((free - l) as u64);
        total = total.saturating_add(term);
    }
    total
}

fn build_pool(
    structs: &[&FiniteStructure],
    roots: &[Vec<usize>],
    maxd: usize,
    caps: &Caps,
) -> Result<Pool> {
    assert!(matches!(structs.len(), 1 | 2) && structs.len() == roots.len());
    if structs.len() == 2 && structs[0].signature() != structs[1].signature() {
        return Err(Error::SignatureMismatch(
            "pool over structures with different signatures".into(),
        ));
    }
    let mut need: u64 = 0;
    for (s, r) in structs.iter().zip(roots) {
        need = need.saturating_add(extension_pool_size(s.universe() - r.len(), maxd));
    }
    if need > caps.pool_limit as u64 {
        return Err(Error::CapExceeded {
            what: "tuple pool",
            need,
            limit: caps.pool_limit as u64,
        });
    }

    let mut pool = Pool {
        sides: structs.len(),
        owner: Vec::new(),
        tuples: Vec::new(),
        index: HashMap::new(),
        exts: Vec::new(),
        depth: Vec::new(),
        roots: Vec::new(),
    };
    for (side, root) in roots.iter().enumerate() {
        let mut sorted = root.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != root.len() {
            return invalid("pool root contains duplicates");
        }
        if root.iter().any(|&x| x >= structs[side].universe()) {
            return invalid("pool root element out of range");
        }
        let id = pool.tuples.len() as u32;
        pool.index.insert((side as u8, root.clone()), id);
        pool.owner.push(side as u8);
        pool.tuples.push(root.clone());
        pool.exts.push(Vec::new());
        pool.depth.push(0);
        pool.roots.push(id);
    }
    let mut level_start = 0;
    for d in 1..=maxd {
        let level_end = pool.tuples.len();
        if level_start == level_end {
            break;
        }
        for i in level_start..level_end {
            let side = pool.owner[i] as usize;
            let n = structs[side].universe();
            let base = pool.tuples[i].clone();
            for x in 0..n {
                if base.contains(&x) {
                    continue;
                }
                let mut t = base.clone();
                t.push(x);
                let id = pool.tuples.len() as u32;
                pool.index.insert((side as u8, t.clone()), id);
                pool.owner.push(side as u8);
                pool.tuples.push(t);
                pool.exts.push(Vec::new());
                pool.depth.push(d as u32);
                pool.exts[i].push(id);
            }
        }
        level_start = level_end;
    }
    Ok(pool)
}

// ---------------------------------------------------------------------------
// Color refinement
// ---------------------------------------------------------------------------

const NOT_COLORED: u32 = u32::MAX;

/// Per-level colorings of a pool. Two tuples are equivalent at level k iff
/// their level-k colors are equal (colors are canonical across both sides).
pub struct BfTable {
    pool: Pool,
    /// levels[k][tuple] = color at level k, or `NOT_COLORED` past the tuple's
    /// validity horizon in a depth-bounded pool.
    levels: Vec<Vec<u32>>,
    /// First level whose partition equals the next one (closed pools only).
    fixpoint: Option<usize>,
}

fn refine(structs: &[&FiniteStructure], pool: Pool, maxd: Option<usize>) -> Result<BfTable> {
    // level 0: canonical quantifier-free types
    let mut type_ids: BTreeMap<QfType, u32> = BTreeMap::new();
    let mut colors = vec![NOT_COLORED; pool.tuples.len()];
    for i in 0..pool.tuples.len() {
        let tp = qftp(structs[pool.owner[i] as usize], &pool.tuples[i])?;
        let next = type_ids.len() as u32;
        colors[i] = *type_ids.entry(tp).or_insert(next);
    }
    let mut counts = vec![type_ids.len()];
    let mut levels = vec![colors];
    let mut fixpoint = None;

    let max_level = match maxd {
        Some(d) => d,
        None => pool.tuples.len() + 1,
    };
    for level in 1..=max_level {
        let prev = levels.last().unwrap();
        let mut keys: Vec<Option<(u32, Vec<u32>)>> = vec![None; pool.tuples.len()];
        for i in 0..pool.tuples.len() {
            let in_horizon = match maxd {
                None => true,
                Some(d) => pool.depth[i] as usize + level <= d,
            };
            if !in_horizon || prev[i] == NOT_COLORED {
                continue;
            }
            let mut ext: Vec<u32> = pool.exts[i].iter().map(|&j| prev[j as usize]).collect();
            debug_assert!(ext.iter().all(|&c| c != NOT_COLORED));
            ext.sort_unstable();
            ext.dedup();
            keys[i] = Some((prev[i], ext));
        }
        let key_set: BTreeSet<&(u32, Vec<u32>)> = keys.iter().flatten().collect();
        let key_ids: HashMap<&(u32, Vec<u32>), u32> = key_set
            .iter()
            .enumerate()
            .map(|(rank, &k)| (k, rank as u32))
            .collect();
        let new_colors: Vec<u32> = keys
            .iter()
            .map(|k| k.as_ref().map_or(NOT_COLORED, |k| key_ids[k]))
            .collect();
        let count = key_set.len();
        levels.push(new_colors);
        if maxd.is_none() {
            debug_assert!(count >= counts[level - 1]);
            if count == counts[level - 1] {
                fixpoint = Some(level - 1);
                break;
            }
        }
        counts.push(count);
    }
    if maxd.is_none() && fixpoint.is_none() {
        unreachable!("refinement on a closed pool must stabilize within pool-size steps");
    }
    Ok(BfTable {
        pool,
        levels,
        fixpoint,
    })
}

impl BfTable {
    /// Full table between two structures: pools of all duplicate-free tuples.
    pub fn between(m: &FiniteStructure, n: &FiniteStructure, caps: &Caps) -> Result<BfTable> {
        let maxd = m.universe().max(n.universe());
        let pool = build_pool(&[m, n], &[vec![], vec![]], maxd, caps)?;
        refine(&[m, n], pool, None)
    }

    /// Full table of a single structure against itself.
    pub fn single(m: &FiniteStructure, caps: &Caps) -> Result<BfTable> {
        let pool = build_pool(&[m], &[vec![]], m.universe(), caps)?;
        refine(&[m], pool, None)
    }

    /// The first level whose partition is already stable.
    pub fn fixpoint_level(&self) -> usize {
        self.fixpoint.expect("full tables always stabilize")
    }

    /// Number of computed levels (fixpoint + a stability-certifying repeat).
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    fn color(&self, level: usize, side: u8, t: &[usize]) -> Result<(Vec<usize>, u32)> {
        if side as usize >= self.pool.sides {
            return invalid("no such side in this table");
        }
        let (ded, pattern) = dedup_pattern(t);
        let idx = self
            .pool
            .index
            .get(&(side, ded))
            .copied()
            .ok_or_else(|| Error::Invalid("tuple not in pool".into()))?;
        let level = level.min(self.levels.len() - 1);
        let c = self.levels[level][idx as usize];
        if c == NOT_COLORED {
            return invalid("tuple past its validity horizon at this level");
        }
        Ok((pattern, c))
    }

    /// Are the tuples equivalent at the given level? Repeat patterns are
    /// compared first; the collapsed tuples are then looked up in the pool.
    pub fn equivalent_at(
        &self,
        level: usize,
        side_a: u8,
        a: &[usize],
        side_b: u8,
        b: &[usize],
    ) -> Result<bool> {
        if a.len() != b.len() {
            return Ok(false);
        }
        let (pa, ca) = self.color(level, side_a, a)?;
        let (pb, cb) = self.color(level, side_b, b)?;
        Ok(pa == pb && ca == cb)
    }

    /// Equivalence at the stable level, i.e. at every level.
    pub fn stable_equivalent(&self, side_a: u8, a: &[usize], side_b: u8, b: &[usize]) -> Result<bool> {
        self.equivalent_at(self.fixpoint_level(), side_a, a, side_b, b)
    }

    /// The back-and-forth level of a pair in this table: largest k with the
    /// pair equivalent at k, `Some(Infty)` if stable, `None` if they differ
    /// at level 0.
    pub fn level_of_pair(
        &self,
        side_a: u8,
        a: &[usize],
        side_b: u8,
        b: &[usize],
    ) -> Result<Option<Ordinal>> {
        for level in 0..=self.fixpoint_level() {
            if !self.equivalent_at(level, side_a, a, side_b, b)? {
                return Ok(if level == 0 {
                    None
                } else {
                    Some(Ordinal::Fin(level as u32 - 1))
                });
            }
        }
        Ok(Some(Ordinal::Infty))
    }

    /// The classes at a level among pool tuples of length at most `max_len`,
    /// each class sorted, classes ordered by their least member.
    pub fn classes_at(&self, level: usize, max_len: usize) -> Vec<Vec<(u8, Vec<usize>)>> {
        let level = level.min(self.levels.len() - 1);
        let mut by_color: BTreeMap<u32, Vec<(u8, Vec<usize>)>> = BTreeMap::new();
        for i in 0..self.pool.tuples.len() {
            if self.pool.tuples[i].len() > max_len || self.levels[level][i] == NOT_COLORED {
                continue;
            }
            by_color
                .entry(self.levels[level][i])
                .or_default()
                .push((self.pool.owner[i], self.pool.tuples[i].clone()));
        }
        let mut classes: Vec<Vec<(u8, Vec<usize>)>> = by_color.into_values().collect();
        for c in &mut classes {
            c.sort();
        }
        classes.sort();
        classes
    }

    /// Class counts per level, for reporting.
    pub fn class_counts(&self) -> Vec<usize> {
        self.levels
            .iter()
            .map(|colors| {
                colors
                    .iter()
                    .filter(|&&c| c != NOT_COLORED)
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Back-and-forth level of a tuple pair
// ---------------------------------------------------------------------------

fn roots_qf_equal(
    m: &FiniteStructure,
    a: &[usize],
    n: &FiniteStructure,
    b: &[usize],
) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
    if m.signature() != n.signature() {
        return Err(Error::SignatureMismatch(
            "back-and-forth level between different signatures".into(),
        ));
    }
    if a.len() != b.len() {
        return Ok(None);
    }
    let (da, pa) = dedup_pattern(a);
    let (db, pb) = dedup_pattern(b);
    if pa != pb || qftp(m, &da)? != qftp(n, &db)? {
        return Ok(None);
    }
    Ok(Some((da, db)))
}

/// The largest k with (M,ā) ≡ₖ (N,b̄), as `Some(Fin(k))`; `Some(Infty)` when
/// the pair survives every level; `None` when the quantifier-free types
/// already differ.
///
/// Small instances are decided exactly by refining extension-closed pools
/// rooted at the tuples. When those pools exceed the cap, equivalence at all
/// levels is certified by an isomorphism search pinning ā to b̄, and finite
/// levels are found by iterative deepening on depth-bounded pools.
pub fn bf_level(
    m: &FiniteStructure,
    a: &[usize],
    n: &FiniteStructure,
    b: &[usize],
    caps: &Caps,
) -> Result<Option<Ordinal>> {
    let (da, db) = match roots_qf_equal(m, a, n, b)? {
        None => return Ok(None),
        Some(r) => r,
    };
    let full_need = extension_pool_size(m.universe() - da.len(), usize::MAX)
        .saturating_add(extension_pool_size(n.universe() - db.len(), usize::MAX));
    if full_need <= caps.pool_limit as u64 {
        let maxd = (m.universe() - da.len()).max(n.universe() - db.len());
        let pool = build_pool(&[m, n], &[da, db], maxd, caps)?;
        let table = refine(&[m, n], pool, None)?;
        for level in 0..=table.fixpoint_level() {
            let ca = table.levels[level][table.pool.roots[0] as usize];
            let cb = table.levels[level][table.pool.roots[1] as usize];
            if ca != cb {
                debug_assert!(level > 0, "roots were checked qf-equal");
                return Ok(Some(Ordinal::Fin(level as u32 - 1)));
            }
        }
        return Ok(Some(Ordinal::Infty));
    }

    if iso_with_pinning(m, &da, n, &db, caps)?.is_some() {
        return Ok(Some(Ordinal::Infty));
    }
    let mut d = 1usize;
    loop {
        let pool = build_pool(&[m, n], &[da.clone(), db.clone()], d, caps)?;
        let table = refine(&[m, n], pool, Some(d))?;
        for level in 1..=d {
            let ca = table.levels[level][table.pool.roots[0] as usize];
            let cb = table.levels[level][table.pool.roots[1] as usize];
            if ca != cb {
                return Ok(Some(Ordinal::Fin(level as u32 - 1)));
            }
        }
        d *= 2;
    }
}

/// Does (M,ā) ≡ₖ (N,b̄)? Depth-bounded pools only: cheaper than `bf_level`
/// on large structures when only a small k matters.
pub fn bf_survives(
    m: &FiniteStructure,
    a: &[usize],
    n: &FiniteStructure,
    b: &[usize],
    k: usize,
    caps: &Caps,
) -> Result<bool> {
    let (da, db) = match roots_qf_equal(m, a, n, b)? {
        None => return Ok(false),
        Some(r) => r,
    };
    if k == 0 {
        return Ok(true);
    }
    let pool = build_pool(&[m, n], &[da, db], k, caps)?;
    let table = refine(&[m, n], pool, Some(k))?;
    for level in 1..=k {
        let ca = table.levels[level][table.pool.roots[0] as usize];
        let cb = table.levels[level][table.pool.roots[1] as usize];
        if ca != cb {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Scott rank
// ---------------------------------------------------------------------------

/// The least k such that tuples equivalent at level k are equivalent at every
/// level. Always finite on finite structures: the number of strict
/// refinement steps of the full table.
pub fn scott_rank(m: &FiniteStructure, caps: &Caps) -> Result<Ordinal> {
    Ok(Ordinal::Fin(BfTable::single(m, caps)?.fixpoint_level() as u32))
}

// ---------------------------------------------------------------------------
// Finite bases
// ---------------------------------------------------------------------------

/// Is `base` a base for M: do distinct elements lie in distinct automorphism
/// orbits over `base`? Equivalently, is the pointwise stabilizer of `base`
/// trivial?
pub fn is_base(m: &FiniteStructure, base: &[usize], caps: &Caps) -> Result<bool> {
    Ok(!nontrivial_fixing_automorphism(m, base, caps)?)
}

/// The minimum-size base, lexicographically least among minimum-size ones,
/// or `None` if no subset of size ≤ `max_size` is a base.
pub fn find_finite_base(
    m: &FiniteStructure,
    max_size: usize,
    caps: &Caps,
) -> Result<Option<Vec<usize>>> {
    let n = m.universe();
    for size in 0..=max_size.min(n) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if is_base(m, &subset, caps)? {
                return Ok(Some(subset));
            }
            if !next_combination(&mut subset, n) {
                break;
            }
        }
    }
    Ok(None)
}

/// Advance to the next size-|s| combination of 0..n in lexicographic order.
fn next_combination(s: &mut [usize], n: usize) -> bool {
    let size = s.len();
    let mut i = size;
    while i > 0 {
        i -= 1;
        if s[i] < n - (size - i) {
            s[i] += 1;
            for j in i + 1..size {
                s[j] = s[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Expansions and quotients
// ---------------------------------------------------------------------------

fn fresh_name(taken: &BTreeSet<String>, base: String) -> String {
    let mut name = base;
    while taken.contains(&name) {
        name.push('_');
    }
    name
}

/// The same structure with the elements of `cs` named by fresh constant
/// symbols (`t0`, `t1`, ..., underscored past collisions).
pub fn expand_constants(m: &FiniteStructure, cs: &[usize]) -> Result<FiniteStructure> {
    if let Some(&bad) = cs.iter().find(|&&x| x >= m.universe()) {
        return invalid(format!("constant target {bad} out of range"));
    }
    let mut sig = m.signature().clone();
    let mut taken: BTreeSet<String> = sig.constants.iter().cloned().collect();
    let mut constants = m.constants().to_vec();
    for (i, &c) in cs.iter().enumerate() {
        let name = fresh_name(&taken, format!("t{i}"));
        taken.insert(name.clone());
        sig.constants.push(name);
        constants.push(c);
    }
    let interp = (0..sig.relations.len()).map(|r| m.interp(r).clone()).collect();
    FiniteStructure::new(sig, m.universe(), interp, constants)
}

fn equivalence_classes(m: &FiniteStructure, rel: usize) -> Result<Vec<Vec<usize>>> {
    let decl = &m.signature().relations[rel];
    if decl.arity != 2 {
        return invalid(format!("{} is not binary", decl.name));
    }
    let e = m.interp(rel);
    for x in 0..m.universe() {
        if !e.contains(&vec![x, x]) {
            return invalid(format!("{} is not reflexive", decl.name));
        }
    }
    for t in e {
        if !e.contains(&vec![t[1], t[0]]) {
            return invalid(format!("{} is not symmetric", decl.name));
        }
        for u in e {
            if u[0] == t[1] && !e.contains(&vec![t[0], u[1]]) {
                return invalid(format!("{} is not transitive", decl.name));
            }
        }
    }
    let mut class_of = vec![usize::MAX; m.universe()];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for x in 0..m.universe() {
        if class_of[x] != usize::MAX {
            continue;
        }
        let id = classes.len();
        let mut class = Vec::new();
        for y in x..m.universe() {
            if e.contains(&vec![x, y]) {
                class_of[y] = id;
                class.push(y);
            }
        }
        classes.push(class);
    }
    Ok(classes)
}

/// A structure extended by one sort per declared equivalence relation: the
/// sort's elements are the relation's classes, attached to the home sort by
/// a projection relation.
pub struct SortedExpansion {
    pub structure: FiniteStructure,
    /// Elements `0..home_size` are the original universe.
    pub home_size: usize,
    /// For each declared relation, the new element representing each class
    /// (classes ordered by least member).
    pub class_elems: Vec<Vec<usize>>,
    /// For each declared relation, the class element of each home element.
    pub class_of: Vec<Vec<usize>>,
}

/// Expands `m` by sorts for the named equivalence relations. An empty family
/// returns `m` unchanged.
pub fn expand_sorts(m: &FiniteStructure, family: &[&str]) -> Result<SortedExpansion> {
    if family.is_empty() {
        return Ok(SortedExpansion {
            structure: m.clone(),
            home_size: m.universe(),
            class_elems: vec![],
            class_of: vec![],
        });
    }
    let n = m.universe();
    let mut rels: Vec<usize> = Vec::new();
    for name in family {
        match m.signature().relation_index(name) {
            Some(r) => rels.push(r),
            None => return invalid(format!("no relation named {name}")),
        }
    }
    let mut classes_per = Vec::with_capacity(rels.len());
    for &r in &rels {
        classes_per.push(equivalence_classes(m, r)?);
    }

    let mut sig = m.signature().clone();
    let mut taken: BTreeSet<String> = sig.relations.iter().map(|r| r.name.clone()).collect();
    let home_name = fresh_name(&taken, "home".into());
    taken.insert(home_name.clone());
    sig.relations.push(RelDecl::new(home_name, 1));
    let mut sort_rel = Vec::new();
    let mut proj_rel = Vec::new();
    for name in family {
        let sort = fresh_name(&taken, format!("U_{name}"));
        taken.insert(sort.clone());
        sig.relations.push(RelDecl::new(sort.clone(), 1));
        sort_rel.push(sig.relations.len() - 1);
        let proj = fresh_name(&taken, format!("pi_{name}"));
        taken.insert(proj.clone());
        sig.relations.push(RelDecl::new(proj.clone(), 2));
        proj_rel.push(sig.relations.len() - 1);
    }

    let mut universe = n;
    let mut class_elems: Vec<Vec<usize>> = Vec::new();
    let mut class_of: Vec<Vec<usize>> = Vec::new();
    for classes in &classes_per {
        let elems: Vec<usize> = (0..classes.len()).map(|i| universe + i).collect();
        universe += classes.len();
        let mut of = vec![0usize; n];
        for (ci, class) in classes.iter().enumerate() {
            for &x in class {
                of[x] = elems[ci];
            }
        }
        class_elems.push(elems);
        class_of.push(of);
    }

    let mut interp: Vec<BTreeSet<Vec<usize>>> = (0..m.signature().relations.len())
        .map(|r| m.interp(r).clone())
        .collect();
    interp.push((0..n).map(|x| vec![x]).collect()); // home
    for i in 0..rels.len() {
        interp.push(class_elems[i].iter().map(|&c| vec![c]).collect());
        interp.push((0..n).map(|x| vec![x, class_of[i][x]]).collect());
    }
    debug_assert_eq!(interp.len(), sig.relations.len());
    debug_assert_eq!(sort_rel.len() + proj_rel.len() + 1 + m.signature().relations.len(), sig.relations.len());

    let structure = FiniteStructure::new(sig, universe, interp, m.constants().to_vec())?;
    Ok(SortedExpansion {
        structure,
        home_size: n,
        class_elems,
        class_of,
    })
}

/// The quotient of `m` by the named equivalence relation, pushing down the
/// named relations (each must be invariant under the relation coordinatewise)
/// and constants. Returns the quotient and the class-size coloring
/// `|class| + 1` (the value 0 is reserved for classes too big to count, which
/// cannot arise here).
pub fn quotient(
    m: &FiniteStructure,
    by: &str,
    push: &[&str],
) -> Result<(FiniteStructure, Vec<u32>)> {
    let e = match m.signature().relation_index(by) {
        Some(r) => r,
        None => return invalid(format!("no relation named {by}")),
    };
    let classes = equivalence_classes(m, e)?;
    let mut class_of = vec![0usize; m.universe()];
    for (ci, class) in classes.iter().enumerate() {
        for &x in class {
            class_of[x] = ci;
        }
    }

    let mut decls = Vec::new();
    let mut interp = Vec::new();
    for name in push {
        let r = match m.signature().relation_index(name) {
            Some(r) => r,
            None => return invalid(format!("no relation named {name}")),
        };
        let decl = m.signature().relations[r].clone();
        // invariance: replacing any coordinate by a class-mate stays inside
        for t in m.interp(r) {
            let mut choice = vec![0usize; t.len()];
            loop {
                let variant: Vec<usize> =
                    t.iter().zip(&choice).map(|(&x, &i)| classes[class_of[x]][i]).collect();
                if !m.holds(r, &variant) {
                    return Err(Error::Violation(format!(
                        "relation {name} is not invariant under {by}"
                    )));
                }
                let mut pos = t.len();
                loop {
                    if pos == 0 {
                        pos = usize::MAX;
                        break;
                    }
                    pos -= 1;
                    choice[pos] += 1;
                    if choice[pos] < classes[class_of[t[pos]]].len() {
                        break;
                    }
                    choice[pos] = 0;
                }
                if pos == usize::MAX {
                    break;
                }
            }
        }
        let tuples: BTreeSet<Vec<usize>> = m
            .interp(r)
            .iter()
            .map(|t| t.iter().map(|&x| class_of[x]).collect())
            .collect();
        decls.push(decl);
        interp.push(tuples);
    }
    let sig = Signature::new(decls, m.signature().constants.clone())?;
    let constants = m.constants().iter().map(|&c| class_of[c]).collect();
    let q = FiniteStructure::new(sig, classes.len(), interp, constants)?;
    let coloring = classes.iter().map(|c| c.len() as u32 + 1).collect();
    Ok((q, coloring))
}
