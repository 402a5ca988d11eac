//! Down-finite poset presentations with class-count labels, the canonical
//! equivalence-relation structures on their finite truncations, the axioms
//! those structures satisfy, and the classification of presentations into
//! nearly-binary-crosscutting ones versus the four benchmark shapes.
//!
//! A presentation is a finite poset plus finitely many infinite tail blocks,
//! each an antichain, an ω-chain, or a ladder, sitting above a declared
//! subset of the finite part. These block shapes are exactly what the
//! benchmark analysis extracts, so block inspection stands in for the Ramsey
//! argument that handles arbitrary presentations.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{invalid, Result};
use crate::structures::{
    mixed_radix_digits, FiniteStructure, RelDecl, Signature,
};
use crate::{Caps, Error};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum LadderKind {
    /// Rungs p_n < q_n and nothing else.
    DisjointPairs,
    /// p_n < q_m whenever n ≤ m.
    Increasing,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum TailKind {
    Antichain,
    Chain,
    Ladder(LadderKind),
}

/// An infinite schema block of tail elements, every one of them above the
/// declared finite-part elements.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TailBlock {
    pub kind: TailKind,
    pub delta: u32,
    pub above: Vec<usize>,
}

/// An element of a presented poset: a finite-part element or the `pos`-th
/// element of a tail block (`upper` selects the upper rung of a ladder).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum PElem {
    Fin(usize),
    Tail { block: usize, pos: usize, upper: bool },
}

/// A countable down-finite poset with class counts, presented as a finite
/// part plus tail blocks.
#[derive(Clone, Debug)]
pub struct PosetPresentation {
    finite_names: Vec<String>,
    finite_delta: Vec<u32>,
    /// Reflexive-transitive closure of the declared finite-part order.
    le_fin: Vec<Vec<bool>>,
    tails: Vec<TailBlock>,
    /// Per block, the downward closure (in the finite part) of `above`.
    below_block: Vec<BTreeSet<usize>>,
}

/// Diagnostics for a raw presentation; empty means valid.
pub fn validate_presentation(
    names: &[String],
    le_pairs: &[(usize, usize)],
    delta: &[u32],
    tails: &[TailBlock],
) -> Vec<String> {
    let n = names.len();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() {
            out.push(format!("element {i} has an empty name"));
        }
        if !seen.insert(name) {
            out.push(format!("duplicate element name {name}"));
        }
    }
    if delta.len() != n {
        out.push(format!("{} delta values for {n} elements", delta.len()));
    }
    for (i, &d) in delta.iter().enumerate() {
        if d < 2 {
            out.push(format!(
                "delta must be at least 2, but element {} has {d}",
                names.get(i).map_or("?", |s| s.as_str())
            ));
        }
    }
    for &(a, b) in le_pairs {
        if a >= n || b >= n {
            out.push(format!("order pair ({a},{b}) out of range"));
        }
    }
    // antisymmetry after closure
    let le = reflexive_transitive_closure(n, le_pairs);
    for a in 0..n {
        for b in a + 1..n {
            if le[a][b] && le[b][a] {
                out.push(format!(
                    "order cycle between {} and {}",
                    names[a], names[b]
                ));
            }
        }
    }
    for (bi, block) in tails.iter().enumerate() {
        if block.delta < 2 {
            out.push(format!("tail block {bi} has delta {}", block.delta));
        }
        for &a in &block.above {
            if a >= n {
                out.push(format!("tail block {bi} sits above unknown element {a}"));
            }
        }
    }
    out
}

fn reflexive_transitive_closure(n: usize, pairs: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut le = vec![vec![false; n]; n];
    for i in 0..n {
        le[i][i] = true;
    }
    for &(a, b) in pairs {
        if a < n && b < n {
            le[a][b] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if le[i][k] {
                for j in 0..n {
                    if le[k][j] {
                        le[i][j] = true;
                    }
                }
            }
        }
    }
    le
}

impl PosetPresentation {
    pub fn new(
        names: Vec<String>,
        le_pairs: Vec<(usize, usize)>,
        delta: Vec<u32>,
        tails: Vec<TailBlock>,
    ) -> Result<PosetPresentation> {
        let diags = validate_presentation(&names, &le_pairs, &delta, &tails);
        if !diags.is_empty() {
            return invalid(diags.join("; "));
        }
        let le_fin = reflexive_transitive_closure(names.len(), &le_pairs);
        let below_block = tails
            .iter()
            .map(|b| {
                let mut below = BTreeSet::new();
                for &a in &b.above {
                    for f in 0..names.len() {
                        if le_fin[f][a] {
                            below.insert(f);
                        }
                    }
                }
                below
            })
            .collect();
        Ok(PosetPresentation {
            finite_names: names,
            finite_delta: delta,
            le_fin,
            tails,
            below_block,
        })
    }

    /// A purely finite presentation.
    pub fn finite(
        names: Vec<String>,
        le_pairs: Vec<(usize, usize)>,
        delta: Vec<u32>,
    ) -> Result<PosetPresentation> {
        PosetPresentation::new(names, le_pairs, delta, vec![])
    }

    pub fn finite_len(&self) -> usize {
        self.finite_names.len()
    }

    pub fn tails(&self) -> &[TailBlock] {
        &self.tails
    }

    pub fn delta(&self, x: PElem) -> u32 {
        match x {
            PElem::Fin(i) => self.finite_delta[i],
            PElem::Tail { block, .. } => self.tails[block].delta,
        }
    }

    pub fn elem_name(&self, x: PElem) -> String {
        match x {
            PElem::Fin(i) => self.finite_names[i].clone(),
            PElem::Tail { block, pos, upper } => {
                let tag = match self.tails[block].kind {
                    TailKind::Antichain => "a",
                    TailKind::Chain => "c",
                    TailKind::Ladder(_) => {
                        if upper {
                            "q"
                        } else {
                            "p"
                        }
                    }
                };
                format!("b{block}{tag}{pos}")
            }
        }
    }

    fn elem_ok(&self, x: PElem) -> bool {
        match x {
            PElem::Fin(i) => i < self.finite_names.len(),
            PElem::Tail { block, upper, .. } => {
                block < self.tails.len()
                    && (matches!(self.tails[block].kind, TailKind::Ladder(_)) || !upper)
            }
        }
    }

    /// The partial order of the presented poset.
    pub fn le(&self, x: PElem, y: PElem) -> bool {
        debug_assert!(self.elem_ok(x) && self.elem_ok(y));
        match (x, y) {
            (PElem::Fin(a), PElem::Fin(b)) => self.le_fin[a][b],
            (PElem::Fin(a), PElem::Tail { block, .. }) => self.below_block[block].contains(&a),
            (PElem::Tail { .. }, PElem::Fin(_)) => false,
            (
                PElem::Tail { block: b1, pos: n1, upper: u1 },
                PElem::Tail { block: b2, pos: n2, upper: u2 },
            ) => {
                if b1 != b2 {
                    return false;
                }
                match self.tails[b1].kind {
                    TailKind::Antichain => n1 == n2,
                    TailKind::Chain => n1 <= n2,
                    TailKind::Ladder(LadderKind::DisjointPairs) => {
                        n1 == n2 && (u1 == u2 || (!u1 && u2))
                    }
                    TailKind::Ladder(LadderKind::Increasing) => {
                        (n1 == n2 && u1 == u2) || (!u1 && u2 && n1 <= n2)
                    }
                }
            }
        }
    }

    /// Everything at or below `x`; finite by down-finiteness.
    pub fn downset(&self, x: PElem) -> Vec<PElem> {
        let mut out: Vec<PElem> = (0..self.finite_names.len())
            .map(PElem::Fin)
            .filter(|&f| self.le(f, x))
            .collect();
        if let PElem::Tail { block, pos, upper } = x {
            match self.tails[block].kind {
                TailKind::Antichain => out.push(x),
                TailKind::Chain => {
                    out.extend((0..=pos).map(|p| PElem::Tail { block, pos: p, upper: false }))
                }
                TailKind::Ladder(kind) => {
                    if upper {
                        let lo = match kind {
                            LadderKind::DisjointPairs => pos,
                            LadderKind::Increasing => 0,
                        };
                        out.extend(
                            (lo..=pos).map(|p| PElem::Tail { block, pos: p, upper: false }),
                        );
                    }
                    out.push(x);
                }
            }
        }
        out.sort();
        out
    }

    /// Is a finite-part element maximal in the whole presented poset?
    pub fn is_fin_maximal(&self, a: usize) -> bool {
        let above_fin = (0..self.finite_names.len())
            .any(|b| b != a && self.le_fin[a][b]);
        let below_tail = self.below_block.iter().any(|below| below.contains(&a));
        !above_fin && !below_tail
    }

    /// Decides near-binary-crosscuttingness: all but finitely many elements
    /// maximal with class count 2.
    pub fn nbc_witness(&self) -> NbcVerdict {
        for (bi, block) in self.tails.iter().enumerate() {
            if block.delta != 2 {
                return NbcVerdict::NotNbc {
                    block: bi,
                    reason: format!(
                        "tail block {bi} has class count {} on infinitely many elements",
                        block.delta
                    ),
                };
            }
            match block.kind {
                TailKind::Antichain => {}
                TailKind::Chain => {
                    return NbcVerdict::NotNbc {
                        block: bi,
                        reason: format!("tail block {bi} is a chain of non-maximal elements"),
                    }
                }
                TailKind::Ladder(_) => {
                    return NbcVerdict::NotNbc {
                        block: bi,
                        reason: format!(
                            "tail block {bi} is a ladder whose lower rungs are non-maximal"
                        ),
                    }
                }
            }
        }
        // everything infinite is a maximal binary antichain; gather the finite
        // exceptions and close downward
        let mut q: BTreeSet<usize> = BTreeSet::new();
        for a in 0..self.finite_names.len() {
            if self.finite_delta[a] != 2 || !self.is_fin_maximal(a) {
                for f in 0..self.finite_names.len() {
                    if self.le_fin[f][a] {
                        q.insert(f);
                    }
                }
            }
        }
        NbcVerdict::Nbc {
            q: q.into_iter().map(PElem::Fin).collect(),
        }
    }

    pub fn is_nbc(&self) -> bool {
        matches!(self.nbc_witness(), NbcVerdict::Nbc { .. })
    }

    /// For a presentation that is not nearly binary crosscutting, the least
    /// benchmark index whose shape embeds, with the block and label bound
    /// realizing it.
    pub fn benchmark_witness(&self) -> Result<BenchmarkWitness> {
        if let Some(block) = self
            .tails
            .iter()
            .position(|b| b.kind == TailKind::Chain)
        {
            return Ok(BenchmarkWitness {
                index: 0,
                block,
                delta_prime: 2,
                subposet: format!("the chain elements of block {block}, labels lowered to 2"),
            });
        }
        if let Some(block) = self.tails.iter().position(|b| b.delta >= 3) {
            let part = match self.tails[block].kind {
                TailKind::Antichain => "elements",
                TailKind::Chain => unreachable!("chains were handled above"),
                TailKind::Ladder(_) => "lower rungs",
            };
            return Ok(BenchmarkWitness {
                index: 1,
                block,
                delta_prime: 3,
                subposet: format!(
                    "the {part} of block {block} form an infinite antichain, labels lowered to 3"
                ),
            });
        }
        if let Some(block) = self
            .tails
            .iter()
            .position(|b| b.kind == TailKind::Ladder(LadderKind::DisjointPairs))
        {
            return Ok(BenchmarkWitness {
                index: 2,
                block,
                delta_prime: 2,
                subposet: format!("the rung pairs of block {block}"),
            });
        }
        if let Some(block) = self
            .tails
            .iter()
            .position(|b| b.kind == TailKind::Ladder(LadderKind::Increasing))
        {
            return Ok(BenchmarkWitness {
                index: 3,
                block,
                delta_prime: 2,
                subposet: format!("the increasing ladder of block {block}"),
            });
        }
        invalid("presentation is nearly binary crosscutting; no benchmark applies")
    }
}

/// Outcome of the nearly-binary-crosscutting test.
#[derive(Clone, Debug)]
pub enum NbcVerdict {
    /// Everything outside the finite downward-closed `q` is a maximal
    /// element with class count 2.
    Nbc { q: Vec<PElem> },
    NotNbc { block: usize, reason: String },
}

/// One of the four benchmark shapes found inside a presentation.
#[derive(Clone, Debug)]
pub struct BenchmarkWitness {
    pub index: u8,
    pub block: usize,
    pub delta_prime: u32,
    pub subposet: String,
}

impl fmt::Display for BenchmarkWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "benchmark {}: {}", self.index, self.subposet)
    }
}

/// The four benchmark presentations: the ω-chain, the ternary antichain,
/// the disjoint-pairs ladder, and the increasing ladder.
pub fn benchmark_presentation(i: usize) -> PosetPresentation {
    let block = match i {
        0 => TailBlock { kind: TailKind::Chain, delta: 2, above: vec![] },
        1 => TailBlock { kind: TailKind::Antichain, delta: 3, above: vec![] },
        2 => TailBlock {
            kind: TailKind::Ladder(LadderKind::DisjointPairs),
            delta: 2,
            above: vec![],
        },
        3 => TailBlock {
            kind: TailKind::Ladder(LadderKind::Increasing),
            delta: 2,
            above: vec![],
        },
        _ => panic!("benchmark index must be below 4"),
    };
    PosetPresentation::new(vec![], vec![], vec![], vec![block]).unwrap()
}

// ---------------------------------------------------------------------------
// Truncations and their canonical models
// ---------------------------------------------------------------------------

/// A finite poset with class counts: the truncation a canonical model is
/// built over.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FinitePoset {
    pub names: Vec<String>,
    /// Reflexive order matrix.
    pub le: Vec<Vec<bool>>,
    pub delta: Vec<u32>,
}

impl FinitePoset {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// All downward-closed subsets, as sorted index lists.
    pub fn downward_closed_subsets(&self) -> Vec<Vec<usize>> {
        let n = self.names.len();
        let mut out = Vec::new();
        'subsets: for mask in 0..(1u32 << n) {
            for i in 0..n {
                if mask & (1 << i) == 0 {
                    continue;
                }
                for j in 0..n {
                    if self.le[j][i] && mask & (1 << j) == 0 {
                        continue 'subsets;
                    }
                }
            }
            out.push((0..n).filter(|&i| mask & (1 << i) != 0).collect());
        }
        out
    }
}

/// The canonical structure on a finite truncation: universe ∏ δ(q), one
/// equivalence relation per element of the truncation.
#[derive(Clone, Debug)]
pub struct TruncatedModel {
    pub structure: FiniteStructure,
    /// The truncation's elements in canonical order; coordinate i of an
    /// element id is the value at `elems[i]` (most significant first).
    pub elems: Vec<PElem>,
    pub poset: FinitePoset,
}

/// Builds the canonical model over a finite downward-closed selection of
/// presentation elements. Element f of the model is the mixed-radix encoding
/// of (f(q) : q ∈ Q) with Q in canonical order.
pub fn build_truncated_model(
    p: &PosetPresentation,
    q: &[PElem],
    caps: &Caps,
) -> Result<TruncatedModel> {
    let mut elems = q.to_vec();
    elems.sort();
    elems.dedup();
    if elems.len() != q.len() {
        return invalid("truncation selection repeats elements");
    }
    for &x in &elems {
        match x {
            PElem::Fin(i) if i >= p.finite_len() => {
                return invalid(format!("no finite element {i}"))
            }
            PElem::Tail { block, upper, .. } => {
                if block >= p.tails().len() {
                    return invalid(format!("no tail block {block}"));
                }
                if upper && !matches!(p.tails()[block].kind, TailKind::Ladder(_)) {
                    return invalid("upper rungs exist only in ladder blocks");
                }
            }
            _ => {}
        }
        for below in p.downset(x) {
            if elems.binary_search(&below).is_err() {
                return Err(Error::Invalid(format!(
                    "selection is not downward closed: {} is missing below {}",
                    p.elem_name(below),
                    p.elem_name(x)
                )));
            }
        }
    }

    let names: Vec<String> = elems.iter().map(|&x| p.elem_name(x)).collect();
    let le: Vec<Vec<bool>> = elems
        .iter()
        .map(|&a| elems.iter().map(|&b| p.le(a, b)).collect())
        .collect();
    let delta: Vec<u32> = elems.iter().map(|&x| p.delta(x)).collect();
    box_model(FinitePoset { names, le, delta }, elems, caps)
}

/// The canonical structure over an explicit finite poset window: universe
/// ∏ δ(q) in mixed radix over `elems` (most significant first), one
/// equivalence relation per element relating functions that agree on its
/// whole downset.
pub fn box_model(poset: FinitePoset, elems: Vec<PElem>, caps: &Caps) -> Result<TruncatedModel> {
    if poset.len() != elems.len() {
        return invalid(format!(
            "poset has {} elements but the window names {}",
            poset.len(),
            elems.len()
        ));
    }
    let radii: Vec<usize> = poset.delta.iter().map(|&d| d as usize).collect();
    let mut universe: u64 = 1;
    for &r in &radii {
        universe = universe.saturating_mul(r as u64);
    }
    if universe > caps.cap_tuple as u64 || universe.saturating_mul(universe) > caps.cap_tuple as u64
    {
        return Err(Error::CapExceeded {
            what: "truncated model universe",
            need: universe,
            limit: caps.cap_tuple as u64,
        });
    }
    let universe = universe as usize;

    let rels: Vec<RelDecl> = poset
        .names
        .iter()
        .map(|n| RelDecl::new(format!("E_{n}"), 2))
        .collect();
    let sig = Signature::new(rels, vec![])?;
    let mut m = FiniteStructure::empty(sig, universe, vec![])?;
    let digits: Vec<Vec<usize>> = (0..universe)
        .map(|x| mixed_radix_digits(x, &radii))
        .collect();
    for qi in 0..poset.len() {
        let coords: Vec<usize> = (0..poset.len()).filter(|&i| poset.le[i][qi]).collect();
        for x in 0..universe {
            for y in 0..universe {
                if coords.iter().all(|&i| digits[x][i] == digits[y][i]) {
                    m.insert_tuple(qi, vec![x, y])?;
                }
            }
        }
    }
    Ok(TruncatedModel { structure: m, elems, poset })
}

// ---------------------------------------------------------------------------
// Axioms
// ---------------------------------------------------------------------------

/// Checks the three axiom groups of the canonical theory on a finite
/// structure interpreting `E_{name}` for every element of the truncation:
/// each relation is an equivalence; each refines its predecessors and splits
/// every predecessor class into exactly δ classes; and every compatible
/// system over a downward-closed subset has an amalgam.
pub fn check_tp_axioms(m: &FiniteStructure, q: &FinitePoset, caps: &Caps) -> Result<()> {
    let n = m.universe();
    let mut rel = Vec::with_capacity(q.len());
    for name in &q.names {
        match m.signature().relation_index(&format!("E_{name}")) {
            Some(r) => rel.push(r),
            None => return invalid(format!("structure does not interpret E_{name}")),
        }
    }

    // (i) equivalences
    for (qi, &r) in rel.iter().enumerate() {
        let e = m.interp(r);
        for x in 0..n {
            if !e.contains(&vec![x, x]) {
                return Err(Error::Violation(format!(
                    "E_{} is not reflexive at {x}",
                    q.names[qi]
                )));
            }
        }
        for t in e {
            if !e.contains(&vec![t[1], t[0]]) {
                return Err(Error::Violation(format!(
                    "E_{} is not symmetric at ({},{})",
                    q.names[qi], t[0], t[1]
                )));
            }
            for u in e {
                if u[0] == t[1] && !e.contains(&vec![t[0], u[1]]) {
                    return Err(Error::Violation(format!(
                        "E_{} is not transitive through {}",
                        q.names[qi], t[1]
                    )));
                }
            }
        }
    }

    // (ii) refinement and exact splitting
    for qi in 0..q.len() {
        for qj in 0..q.len() {
            if qi == qj || !q.le[qj][qi] {
                continue;
            }
            for t in m.interp(rel[qi]) {
                if !m.holds(rel[qj], t) {
                    return Err(Error::Violation(format!(
                        "E_{} does not refine E_{}: ({},{})",
                        q.names[qi], q.names[qj], t[0], t[1]
                    )));
                }
            }
        }
        // classes of the strictly-below conjunction
        let below: Vec<usize> = (0..q.len())
            .filter(|&qj| qj != qi && q.le[qj][qi])
            .map(|qj| rel[qj])
            .collect();
        let mut seen = vec![false; n];
        for x in 0..n {
            if seen[x] {
                continue;
            }
            let class: Vec<usize> = (0..n)
                .filter(|&y| below.iter().all(|&r| m.holds(r, &[x, y])))
                .collect();
            for &y in &class {
                seen[y] = true;
            }
            let mut subclasses: Vec<usize> = Vec::new();
            for &y in &class {
                if !subclasses.iter().any(|&z| m.holds(rel[qi], &[z, y])) {
                    subclasses.push(y);
                }
            }
            if subclasses.len() != q.delta[qi] as usize {
                return Err(Error::Violation(format!(
                    "E_{} splits a predecessor class into {} parts, not {}",
                    q.names[qi],
                    subclasses.len(),
                    q.delta[qi]
                )));
            }
        }
    }

    // (iii) amalgamation over every downward-closed subset
    for sub in q.downward_closed_subsets() {
        let mut work: u64 = 1;
        for _ in &sub {
            work = work.saturating_mul(n as u64);
        }
        if work > caps.state_limit as u64 {
            return Err(Error::CapExceeded {
                what: "amalgamation systems",
                need: work,
                limit: caps.state_limit as u64,
            });
        }
        let mut assign = vec![0usize; sub.len()];
        'systems: loop {
            // compatibility: related positions agree on the lower relation
            let mut compatible = true;
            'compat: for (i, &qi) in sub.iter().enumerate() {
                for (j, &qj) in sub.iter().enumerate() {
                    if q.le[qj][qi] && !m.holds(rel[qj], &[assign[j], assign[i]]) {
                        compatible = false;
                        break 'compat;
                    }
                }
            }
            if compatible {
                let found = (0..n).any(|a| {
                    sub.iter()
                        .enumerate()
                        .all(|(i, &qi)| m.holds(rel[qi], &[a, assign[i]]))
                });
                if !found {
                    return Err(Error::Violation(format!(
                        "no amalgam for the system ({:?}) over subset {:?}",
                        assign
                            .iter()
                            .zip(&sub)
                            .map(|(&a, &qi)| format!("E_{}:{a}", q.names[qi]))
                            .collect::<Vec<_>>(),
                        sub.iter().map(|&qi| q.names[qi].clone()).collect::<Vec<_>>()
                    )));
                }
            }
            if n == 0 {
                break;
            }
            let mut pos = sub.len();
            loop {
                if pos == 0 {
                    break 'systems;
                }
                pos -= 1;
                assign[pos] += 1;
                if assign[pos] < n {
                    break;
                }
                assign[pos] = 0;
            }
            if sub.is_empty() {
                break;
            }
        }
    }
    Ok(())
}
