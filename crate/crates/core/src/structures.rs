//! Finite relational structures with constants, their quantifier-free types,
//! and brute-force permutation-group oracles: automorphism enumeration, orbit
//! partitions, and deterministic isomorphism search.
//!
//! Elements of a structure are the dense ids `0..universe`. Relation
//! interpretations are explicit tuple sets. These oracles are the ground truth
//! the rest of the crate is validated against, so they favour transparency
//! over cleverness.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::{Caps, Error};

/// A relation symbol. `owner` tags the factor a symbol was lifted from when
/// several languages are kept disjoint inside one signature.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct RelDecl {
    pub name: String,
    pub arity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<u32>,
}

impl RelDecl {
    pub fn new(name: impl Into<String>, arity: usize) -> RelDecl {
        RelDecl {
            name: name.into(),
            arity,
            owner: None,
        }
    }

    pub fn owned(name: impl Into<String>, arity: usize, owner: u32) -> RelDecl {
        RelDecl {
            name: name.into(),
            arity,
            owner: Some(owner),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Signature {
    pub relations: Vec<RelDecl>,
    pub constants: Vec<String>,
}

impl Signature {
    pub fn new(relations: Vec<RelDecl>, constants: Vec<String>) -> Result<Signature> {
        let sig = Signature {
            relations,
            constants,
        };
        sig.validate()?;
        Ok(sig)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for r in &self.relations {
            if r.name.is_empty() {
                return invalid("relation with empty name");
            }
            if r.arity == 0 {
                return invalid(format!("relation {} has arity 0", r.name));
            }
            if !names.insert(&r.name) {
                return invalid(format!("duplicate relation name {}", r.name));
            }
        }
        let mut cnames = BTreeSet::new();
        for c in &self.constants {
            if c.is_empty() {
                return invalid("constant with empty name");
            }
            if !cnames.insert(c) {
                return invalid(format!("duplicate constant name {c}"));
            }
        }
        Ok(())
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }
}

/// A finite relational structure with distinguished constants.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct FiniteStructure {
    signature: Signature,
    universe: usize,
    interp: Vec<BTreeSet<Vec<usize>>>,
    constants: Vec<usize>,
}

impl FiniteStructure {
    pub fn new(
        signature: Signature,
        universe: usize,
        interp: Vec<BTreeSet<Vec<usize>>>,
        constants: Vec<usize>,
    ) -> Result<FiniteStructure> {
        signature.validate()?;
        if interp.len() != signature.relations.len() {
            return invalid(format!(
                "{} interpretations for {} relations",
                interp.len(),
                signature.relations.len()
            ));
        }
        if constants.len() != signature.constants.len() {
            return invalid(format!(
                "{} constant values for {} constant symbols",
                constants.len(),
                signature.constants.len()
            ));
        }
        for (decl, tuples) in signature.relations.iter().zip(&interp) {
            for t in tuples {
                if t.len() != decl.arity {
                    return invalid(format!(
                        "tuple of length {} in relation {} of arity {}",
                        t.len(),
                        decl.name,
                        decl.arity
                    ));
                }
                if let Some(&bad) = t.iter().find(|&&x| x >= universe) {
                    return invalid(format!(
                        "element {bad} out of range in relation {}",
                        decl.name
                    ));
                }
            }
        }
        if let Some(&bad) = constants.iter().find(|&&x| x >= universe) {
            return invalid(format!("constant value {bad} out of range"));
        }
        Ok(FiniteStructure {
            signature,
            universe,
            interp,
            constants,
        })
    }

    /// A structure over `universe` with every relation empty.
    pub fn empty(signature: Signature, universe: usize, constants: Vec<usize>) -> Result<Self> {
        let interp = vec![BTreeSet::new(); signature.relations.len()];
        FiniteStructure::new(signature, universe, interp, constants)
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn interp(&self, rel: usize) -> &BTreeSet<Vec<usize>> {
        &self.interp[rel]
    }

    pub fn constants(&self) -> &[usize] {
        &self.constants
    }

    pub fn holds(&self, rel: usize, tuple: &[usize]) -> bool {
        self.interp[rel].contains(tuple)
    }

    pub fn insert_tuple(&mut self, rel: usize, tuple: Vec<usize>) -> Result<()> {
        let decl = &self.signature.relations[rel];
        if tuple.len() != decl.arity {
            return invalid(format!("arity mismatch inserting into {}", decl.name));
        }
        if tuple.iter().any(|&x| x >= self.universe) {
            return invalid(format!("element out of range inserting into {}", decl.name));
        }
        self.interp[rel].insert(tuple);
        Ok(())
    }

    /// Same universe and interpretations under a renamed signature.
    pub fn with_renamed_relations(&self, rename: &BTreeMap<String, String>) -> Result<Self> {
        let mut sig = self.signature.clone();
        for r in &mut sig.relations {
            if let Some(new) = rename.get(&r.name) {
                r.name = new.clone();
            }
        }
        FiniteStructure::new(sig, self.universe, self.interp.clone(), self.constants.clone())
    }

    /// Replace the relation declarations wholesale (same count and arities,
    /// new names or owner tags), keeping the interpretations. Lets two
    /// structures built by different constructions be compared under one
    /// signature.
    pub fn with_relation_decls(&self, decls: Vec<RelDecl>) -> Result<Self> {
        if decls.len() != self.signature.relations.len() {
            return invalid("replacement declarations must match the relation count");
        }
        for (new, old) in decls.iter().zip(&self.signature.relations) {
            if new.arity != old.arity {
                return invalid(format!(
                    "replacement declaration {} changes the arity of {}",
                    new.name, old.name
                ));
            }
        }
        let sig = Signature::new(decls, self.signature.constants.clone())?;
        FiniteStructure::new(sig, self.universe, self.interp.clone(), self.constants.clone())
    }

    /// The induced substructure on `keep` (in the given order), relations
    /// restricted, constants required to survive.
    pub fn restrict_to(&self, keep: &[usize]) -> Result<FiniteStructure> {
        let mut of_old: HashMap<usize, usize> = HashMap::new();
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.universe {
                return invalid(format!("element {old} out of range in restriction"));
            }
            if of_old.insert(old, new).is_some() {
                return invalid(format!("element {old} repeated in restriction"));
            }
        }
        let mut interp = Vec::with_capacity(self.interp.len());
        for tuples in &self.interp {
            let mut set = BTreeSet::new();
            for t in tuples {
                if let Some(mapped) = t
                    .iter()
                    .map(|x| of_old.get(x).copied())
                    .collect::<Option<Vec<usize>>>()
                {
                    set.insert(mapped);
                }
            }
            interp.push(set);
        }
        let mut constants = Vec::with_capacity(self.constants.len());
        for (name, &c) in self.signature.constants.iter().zip(&self.constants) {
            match of_old.get(&c) {
                Some(&new) => constants.push(new),
                None => return invalid(format!("constant {name} not in restriction")),
            }
        }
        FiniteStructure::new(self.signature.clone(), keep.len(), interp, constants)
    }
}

// ---------------------------------------------------------------------------
// Quantifier-free types
// ---------------------------------------------------------------------------

/// A term over a tuple: a tuple position or a constant symbol.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Term {
    Var(u16),
    Const(u16),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Atom {
    /// Equality between two distinct terms, stored with the smaller term first.
    Eq(Term, Term),
    /// A relation applied to terms.
    Rel(u16, Vec<Term>),
}

/// The atomic diagram of a tuple: every positive atomic fact over the tuple
/// and the structure's constants, equality pattern included.
///
/// Two tuples (in structures with equal signatures) satisfy the same
/// quantifier-free formulas iff their `QfType`s are equal.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct QfType {
    pub len: usize,
    pub atoms: Vec<Atom>,
}

impl fmt::Display for QfType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "qftp(len {}, {} atoms)", self.len, self.atoms.len())
    }
}

fn eval_term(m: &FiniteStructure, tuple: &[usize], t: Term) -> usize {
    match t {
        Term::Var(i) => tuple[i as usize],
        Term::Const(j) => m.constants()[j as usize],
    }
}

/// The quantifier-free type of `tuple` in `m`.
pub fn qftp(m: &FiniteStructure, tuple: &[usize]) -> Result<QfType> {
    if let Some(&bad) = tuple.iter().find(|&&x| x >= m.universe()) {
        return invalid(format!("tuple element {bad} out of range"));
    }
    let mut terms: Vec<Term> = (0..tuple.len()).map(|i| Term::Var(i as u16)).collect();
    terms.extend((0..m.constants().len()).map(|j| Term::Const(j as u16)));

    let mut atoms = Vec::new();
    for (i, &s) in terms.iter().enumerate() {
        for &t in &terms[i + 1..] {
            if eval_term(m, tuple, s) == eval_term(m, tuple, t) {
                atoms.push(Atom::Eq(s, t));
            }
        }
    }
    for (r, decl) in m.signature().relations.iter().enumerate() {
        let k = decl.arity;
        let mut args = vec![0usize; k];
        let nt = terms.len();
        if nt == 0 {
            continue;
        }
        if (nt as u64).pow(k as u32) > 10_000_000 {
            return Err(Error::CapExceeded {
                what: "qftp term tuples",
                need: (nt as u64).pow(k as u32),
                limit: 10_000_000,
            });
        }
        loop {
            let term_args: Vec<Term> = args.iter().map(|&i| terms[i]).collect();
            let vals: Vec<usize> = term_args.iter().map(|&t| eval_term(m, tuple, t)).collect();
            if m.holds(r, &vals) {
                atoms.push(Atom::Rel(r as u16, term_args));
            }
            let mut pos = k;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                args[pos] += 1;
                if args[pos] < nt {
                    break;
                }
                args[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
    }
    atoms.sort();
    atoms.dedup();
    Ok(QfType {
        len: tuple.len(),
        atoms,
    })
}

// ---------------------------------------------------------------------------
// Permutations and automorphism groups
// ---------------------------------------------------------------------------

/// A permutation of `0..degree`, stored by images.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Perm(pub Vec<usize>);

impl Perm {
    pub fn identity(degree: usize) -> Perm {
        Perm((0..degree).collect())
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn apply(&self, x: usize) -> usize {
        self.0[x]
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &y)| i == y)
    }

    /// `self` after `other`: `(self * other)(x) = self(other(x))`.
    pub fn compose(&self, other: &Perm) -> Perm {
        Perm(other.0.iter().map(|&x| self.0[x]).collect())
    }

    pub fn inverse(&self) -> Perm {
        let mut inv = vec![0; self.0.len()];
        for (i, &y) in self.0.iter().enumerate() {
            inv[y] = i;
        }
        Perm(inv)
    }

    pub fn apply_tuple(&self, t: &[usize]) -> Vec<usize> {
        t.iter().map(|&x| self.0[x]).collect()
    }
}

/// A permutation group given by its full element list plus a small
/// generating set recovered greedily from it.
#[derive(Clone, Debug)]
pub struct PermGroup {
    degree: usize,
    elements: Vec<Perm>,
    generators: Vec<Perm>,
}

impl PermGroup {
    /// Builds a group from an explicit element list; checks closure.
    pub fn from_elements(degree: usize, mut elements: Vec<Perm>) -> Result<PermGroup> {
        elements.sort();
        elements.dedup();
        if elements.iter().any(|p| p.degree() != degree) {
            return invalid("permutation degree mismatch");
        }
        if !elements.contains(&Perm::identity(degree)) {
            return invalid("group without identity");
        }
        for a in &elements {
            for b in &elements {
                if elements.binary_search(&a.compose(b)).is_err() {
                    return invalid("element list not closed under composition");
                }
            }
        }
        let generators = greedy_generators(degree, &elements);
        Ok(PermGroup {
            degree,
            elements,
            generators,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Perm] {
        &self.elements
    }

    pub fn generators(&self) -> &[Perm] {
        &self.generators
    }

    pub fn contains(&self, p: &Perm) -> bool {
        self.elements.binary_search(p).is_ok()
    }

    /// The subgroup fixing every element of `points`.
    pub fn pointwise_stabilizer(&self, points: &[usize]) -> PermGroup {
        let elements: Vec<Perm> = self
            .elements
            .iter()
            .filter(|p| points.iter().all(|&x| p.apply(x) == x))
            .cloned()
            .collect();
        let generators = greedy_generators(self.degree, &elements);
        PermGroup {
            degree: self.degree,
            elements,
            generators,
        }
    }

    /// Orbits of the natural action on points, sorted by least member.
    pub fn point_orbits(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.degree];
        let mut orbits = Vec::new();
        for x in 0..self.degree {
            if seen[x] {
                continue;
            }
            let mut orbit: BTreeSet<usize> = BTreeSet::new();
            for p in &self.elements {
                orbit.insert(p.apply(x));
            }
            for &y in &orbit {
                seen[y] = true;
            }
            orbits.push(orbit.into_iter().collect());
        }
        orbits
    }
}

fn greedy_generators(degree: usize, elements: &[Perm]) -> Vec<Perm> {
    let mut gens: Vec<Perm> = Vec::new();
    let mut generated: BTreeSet<Perm> = BTreeSet::new();
    generated.insert(Perm::identity(degree));
    for e in elements {
        if generated.contains(e) {
            continue;
        }
        gens.push(e.clone());
        // close under composition with the new generator set
        let mut frontier: Vec<Perm> = generated.iter().cloned().collect();
        while let Some(p) = frontier.pop() {
            for g in &gens {
                for q in [g.compose(&p), p.compose(g)] {
                    if generated.insert(q.clone()) {
                        frontier.push(q);
                    }
                }
            }
        }
        if generated.len() == elements.len() {
            break;
        }
    }
    gens
}

/// Full automorphism group of `m` by exhausting all `|M|!` permutations.
pub fn automorphism_group(m: &FiniteStructure, caps: &Caps) -> Result<PermGroup> {
    let n = m.universe();
    if n > caps.cap_universe {
        return Err(Error::CapExceeded {
            what: "automorphism enumeration universe",
            need: n as u64,
            limit: caps.cap_universe as u64,
        });
    }
    let mut elements = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        let p = Perm(perm.clone());
        if preserves(m, &p) {
            elements.push(p);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    PermGroup::from_elements(n, elements)
}

/// Is `p` an automorphism of `m`? Forward preservation of every relation
/// suffices for a bijection on a finite structure, since the image of each
/// relation set then has the same cardinality and is contained in it.
pub fn is_automorphism(m: &FiniteStructure, p: &Perm) -> bool {
    p.degree() == m.universe() && preserves(m, p)
}

fn preserves(m: &FiniteStructure, p: &Perm) -> bool {
    for &c in m.constants() {
        if p.apply(c) != c {
            return false;
        }
    }
    for r in 0..m.signature().relations.len() {
        for t in m.interp(r) {
            if !m.holds(r, &p.apply_tuple(t)) {
                return false;
            }
        }
    }
    true
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Does `g` act freely: no non-identity element fixes a point?
pub fn is_free_action(g: &PermGroup) -> bool {
    g.elements()
        .iter()
        .filter(|p| !p.is_identity())
        .all(|p| (0..g.degree()).all(|x| p.apply(x) != x))
}

// ---------------------------------------------------------------------------
// Orbit partitions of tuple spaces
// ---------------------------------------------------------------------------

pub fn tuple_to_index(t: &[usize], n: usize) -> usize {
    t.iter().fold(0, |acc, &x| acc * n + x)
}

pub fn index_to_tuple(mut idx: usize, n: usize, k: usize) -> Vec<usize> {
    let mut t = vec![0usize; k];
    for i in (0..k).rev() {
        t[i] = idx % n;
        idx /= n;
    }
    t
}

pub fn mixed_radix_index(digits: &[usize], radii: &[usize]) -> usize {
    digits
        .iter()
        .zip(radii)
        .fold(0, |acc, (&d, &r)| acc * r + d)
}

pub fn mixed_radix_digits(mut idx: usize, radii: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize; radii.len()];
    for i in (0..radii.len()).rev() {
        out[i] = idx % radii[i];
        idx /= radii[i];
    }
    out
}

/// The partition of `M^k` into `Aut(M)`-orbits.
#[derive(Clone, Debug)]
pub struct OrbitPartition {
    pub k: usize,
    pub universe: usize,
    /// Class id for each tuple, indexed by `tuple_to_index`.
    pub class_of: Vec<u32>,
    /// Lexicographically least tuple of each class, in class-id order.
    pub representatives: Vec<Vec<usize>>,
}

impl OrbitPartition {
    pub fn same_orbit(&self, a: &[usize], b: &[usize]) -> bool {
        self.class_of[tuple_to_index(a, self.universe)]
            == self.class_of[tuple_to_index(b, self.universe)]
    }
}

/// Orbits of `Aut(M)` acting coordinatewise on `M^k`.
pub fn orbit_partition(m: &FiniteStructure, k: usize, caps: &Caps) -> Result<OrbitPartition> {
    let n = m.universe();
    let total = (n as u64).checked_pow(k as u32).unwrap_or(u64::MAX);
    if total > caps.cap_tuple as u64 {
        return Err(Error::CapExceeded {
            what: "orbit partition tuple space",
            need: total,
            limit: caps.cap_tuple as u64,
        });
    }
    let aut = automorphism_group(m, caps)?;
    let total = total as usize;
    let mut class_of = vec![u32::MAX; total.max(1)];
    let mut representatives = Vec::new();
    for idx in 0..total {
        if class_of[idx] != u32::MAX {
            continue;
        }
        let class = representatives.len() as u32;
        let t = index_to_tuple(idx, n, k);
        for p in aut.elements() {
            class_of[tuple_to_index(&p.apply_tuple(&t), n)] = class;
        }
        representatives.push(t);
    }
    if total == 0 {
        // k = 0 on a nonempty universe yields the single empty tuple
        class_of.clear();
    }
    Ok(OrbitPartition {
        k,
        universe: n,
        class_of,
        representatives,
    })
}

// ---------------------------------------------------------------------------
// Isomorphism search
// ---------------------------------------------------------------------------

struct IsoSearch<'a> {
    m: &'a FiniteStructure,
    n: &'a FiniteStructure,
    occ_m: Vec<Vec<Vec<Vec<usize>>>>,
    occ_n: Vec<Vec<Vec<Vec<usize>>>>,
    fwd: Vec<Option<usize>>,
    bwd: Vec<Option<usize>>,
    nodes: u64,
    budget: u64,
}

fn occurrences(m: &FiniteStructure) -> Vec<Vec<Vec<Vec<usize>>>> {
    let mut occ = vec![vec![Vec::new(); m.universe()]; m.signature().relations.len()];
    for r in 0..m.signature().relations.len() {
        for t in m.interp(r) {
            let mut seen = BTreeSet::new();
            for &x in t {
                if seen.insert(x) {
                    occ[r][x].push(t.clone());
                }
            }
        }
    }
    occ
}

impl<'a> IsoSearch<'a> {
    fn new(m: &'a FiniteStructure, n: &'a FiniteStructure, budget: u64) -> Result<IsoSearch<'a>> {
        if m.signature() != n.signature() {
            return Err(Error::SignatureMismatch(
                "isomorphism between different signatures".into(),
            ));
        }
        Ok(IsoSearch {
            m,
            n,
            occ_m: occurrences(m),
            occ_n: occurrences(n),
            fwd: vec![None; m.universe()],
            bwd: vec![None; n.universe()],
            nodes: 0,
            budget,
        })
    }

    fn consistent(&self, x: usize, y: usize) -> bool {
        for r in 0..self.m.signature().relations.len() {
            for t in &self.occ_m[r][x] {
                let image: Option<Vec<usize>> = t
                    .iter()
                    .map(|&a| if a == x { Some(y) } else { self.fwd[a] })
                    .collect();
                if let Some(img) = image {
                    if !self.n.holds(r, &img) {
                        return false;
                    }
                }
            }
            for t in &self.occ_n[r][y] {
                let pre: Option<Vec<usize>> = t
                    .iter()
                    .map(|&a| if a == y { Some(x) } else { self.bwd[a] })
                    .collect();
                if let Some(p) = pre {
                    if !self.m.holds(r, &p) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn assign(&mut self, x: usize, y: usize) -> bool {
        if let Some(cur) = self.fwd[x] {
            return cur == y;
        }
        if self.bwd[y].is_some() {
            return false;
        }
        if !self.consistent(x, y) {
            return false;
        }
        self.fwd[x] = Some(y);
        self.bwd[y] = Some(x);
        true
    }

    fn unassign(&mut self, x: usize, y: usize) {
        self.fwd[x] = None;
        self.bwd[y] = None;
    }

    /// Depth-first search for the lexicographically least completion.
    /// `skip_identity` rejects the identity map (only sensible when m == n).
    fn search(&mut self, x: usize, skip_identity: bool) -> Result<bool> {
        if x == self.fwd.len() {
            if skip_identity && self.fwd.iter().enumerate().all(|(i, &y)| y == Some(i)) {
                return Ok(false);
            }
            return Ok(true);
        }
        if self.fwd[x].is_some() {
            return self.search(x + 1, skip_identity);
        }
        for y in 0..self.bwd.len() {
            self.nodes += 1;
            if self.nodes > self.budget {
                return Err(Error::CapExceeded {
                    what: "isomorphism search nodes",
                    need: self.nodes,
                    limit: self.budget,
                });
            }
            if self.bwd[y].is_some() {
                continue;
            }
            if self.assign(x, y) {
                if self.search(x + 1, skip_identity)? {
                    return Ok(true);
                }
                self.unassign(x, y);
            }
        }
        Ok(false)
    }

    fn witness(&self) -> Vec<usize> {
        self.fwd.iter().map(|y| y.unwrap()).collect()
    }
}

/// Deterministic isomorphism test; on success the lexicographically least
/// witness (as an image sequence) is returned.
pub fn isomorphic(
    m: &FiniteStructure,
    n: &FiniteStructure,
    caps: &Caps,
) -> Result<Option<Vec<usize>>> {
    iso_with_pinning(m, &[], n, &[], caps)
}

/// Isomorphism search with `a -> b` forced pointwise.
pub fn iso_with_pinning(
    m: &FiniteStructure,
    a: &[usize],
    n: &FiniteStructure,
    b: &[usize],
    caps: &Caps,
) -> Result<Option<Vec<usize>>> {
    if a.len() != b.len() {
        return invalid("pinned tuples of different length");
    }
    let mut search = IsoSearch::new(m, n, caps.iso_nodes)?;
    if m.universe() != n.universe() {
        return Ok(None);
    }
    for (&cm, &cn) in m.constants().iter().zip(n.constants()) {
        if !search.assign(cm, cn) {
            return Ok(None);
        }
    }
    for (&x, &y) in a.iter().zip(b) {
        if x >= m.universe() || y >= n.universe() {
            return invalid("pinned element out of range");
        }
        if !search.assign(x, y) {
            return Ok(None);
        }
    }
    Ok(if search.search(0, false)? {
        Some(search.witness())
    } else {
        None
    })
}

/// Is there a non-identity automorphism of `m` fixing `pinned` pointwise?
///
/// This is the negation of the base property for `pinned`, computed without
/// enumerating the full automorphism group.
pub fn nontrivial_fixing_automorphism(
    m: &FiniteStructure,
    pinned: &[usize],
    caps: &Caps,
) -> Result<bool> {
    let mut search = IsoSearch::new(m, m, caps.iso_nodes)?;
    for &c in m.constants() {
        if !search.assign(c, c) {
            return invalid("structure does not fix its own constants");
        }
    }
    for &x in pinned {
        if x >= m.universe() {
            return invalid("pinned element out of range");
        }
        if !search.assign(x, x) {
            unreachable!("pinning an element to itself is always consistent");
        }
    }
    search.search(0, true)
}

// ---------------------------------------------------------------------------
// Common small builders used across the crate and its tests
// ---------------------------------------------------------------------------

/// A structure with one binary relation interpreted as the equivalence
/// relation with the given class sizes.
pub fn equivalence_structure(rel: &str, class_sizes: &[usize]) -> FiniteStructure {
    let n: usize = class_sizes.iter().sum();
    let sig = Signature::new(vec![RelDecl::new(rel, 2)], vec![]).unwrap();
    let mut m = FiniteStructure::empty(sig, n, vec![]).unwrap();
    let mut start = 0;
    for &s in class_sizes {
        for x in start..start + s {
            for y in start..start + s {
                m.insert_tuple(0, vec![x, y]).unwrap();
            }
        }
        start += s;
    }
    m
}

/// A pure set of size `n`: empty signature.
pub fn pure_set(n: usize) -> FiniteStructure {
    FiniteStructure::empty(Signature::default(), n, vec![]).unwrap()
}

/// A directed cycle 0 -> 1 -> ... -> n-1 -> 0 with one binary relation.
pub fn directed_cycle(n: usize) -> FiniteStructure {
    let sig = Signature::new(vec![RelDecl::new("S", 2)], vec![]).unwrap();
    let mut m = FiniteStructure::empty(sig, n, vec![]).unwrap();
    for x in 0..n {
        m.insert_tuple(0, vec![x, (x + 1) % n]).unwrap();
    }
    m
}

/// A strict linear order 0 < 1 < ... < n-1.
pub fn linear_order(n: usize) -> FiniteStructure {
    let sig = Signature::new(vec![RelDecl::new("lt", 2)], vec![]).unwrap();
    let mut m = FiniteStructure::empty(sig, n, vec![]).unwrap();
    for x in 0..n {
        for y in x + 1..n {
            m.insert_tuple(0, vec![x, y]).unwrap();
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps() -> Caps {
        Caps::default()
    }

    #[test]
    fn qftp_separates_by_equality_pattern_and_relations() {
        let m = equivalence_structure("E", &[2, 1]);
        let t_aa = qftp(&m, &[0, 0]).unwrap();
        let t_ab = qftp(&m, &[0, 1]).unwrap();
        let t_ac = qftp(&m, &[0, 2]).unwrap();
        assert_ne!(t_aa, t_ab);
        assert_ne!(t_ab, t_ac);
        assert_eq!(qftp(&m, &[1, 0]).unwrap(), t_ab);
    }

    #[test]
    fn qftp_sees_constants() {
        let sig = Signature::new(vec![], vec!["c".into()]).unwrap();
        let m = FiniteStructure::new(sig, 2, vec![], vec![0]).unwrap();
        let t0 = qftp(&m, &[0]).unwrap();
        let t1 = qftp(&m, &[1]).unwrap();
        assert_ne!(t0, t1);
        assert!(t0.atoms.contains(&Atom::Eq(Term::Var(0), Term::Const(0))));
    }

    #[test]
    fn automorphisms_of_equivalence_classes() {
        let m = equivalence_structure("E", &[2, 2]);
        let g = automorphism_group(&m, &caps()).unwrap();
        // swap within each class, swap the classes: 2 * 2 * 2 = 8
        assert_eq!(g.order(), 8);
        assert!(!is_free_action(&g));

        let m = equivalence_structure("E", &[2]);
        let g = automorphism_group(&m, &caps()).unwrap();
        assert_eq!(g.order(), 2);
        assert!(is_free_action(&g));
    }

    #[test]
    fn cycle_automorphisms_are_rotations() {
        for n in [3, 4, 5] {
            let g = automorphism_group(&directed_cycle(n), &caps()).unwrap();
            assert_eq!(g.order(), n);
            assert!(is_free_action(&g));
        }
        let g = automorphism_group(&linear_order(4), &caps()).unwrap();
        assert_eq!(g.order(), 1);
    }

    #[test]
    fn symmetric_group_is_not_free_from_three_points() {
        let g = automorphism_group(&pure_set(3), &caps()).unwrap();
        assert_eq!(g.order(), 6);
        assert!(!is_free_action(&g));
        let g2 = automorphism_group(&pure_set(2), &caps()).unwrap();
        assert!(is_free_action(&g2));
    }

    #[test]
    fn orbit_partition_of_pairs() {
        let m = equivalence_structure("E", &[2, 1]);
        let p = orbit_partition(&m, 2, &caps()).unwrap();
        // orbits of pairs: (a,a)-type in big class, (c,c), (a,b), (a,c), (c,a)
        assert_eq!(p.representatives.len(), 5);
        assert!(p.same_orbit(&[0, 1], &[1, 0]));
        assert!(!p.same_orbit(&[0, 0], &[2, 2]));
        assert!(p.same_orbit(&[0, 2], &[1, 2]));
    }

    #[test]
    fn isomorphic_finds_lex_least_witness() {
        let m = equivalence_structure("E", &[1, 2]);
        let n = equivalence_structure("E", &[2, 1]);
        let w = isomorphic(&m, &n, &caps()).unwrap().unwrap();
        // 0 (singleton) must land on 2; 1,2 (pair) on 0,1; least such map
        assert_eq!(w, vec![2, 0, 1]);
        assert!(isomorphic(&m, &equivalence_structure("E", &[3]), &caps())
            .unwrap()
            .is_none());
    }

    #[test]
    fn iso_respects_pinning() {
        let m = equivalence_structure("E", &[2, 1]);
        assert!(iso_with_pinning(&m, &[0], &m, &[1], &caps())
            .unwrap()
            .is_some());
        assert!(iso_with_pinning(&m, &[0], &m, &[2], &caps())
            .unwrap()
            .is_none());
    }

    #[test]
    fn fixing_automorphism_search_matches_group_oracle() {
        let m = equivalence_structure("E", &[2, 2]);
        let g = automorphism_group(&m, &caps()).unwrap();
        for pinned in [vec![], vec![0], vec![0, 2], vec![0, 1, 2]] {
            let brute = g
                .pointwise_stabilizer(&pinned)
                .elements()
                .iter()
                .any(|p| !p.is_identity());
            let fast = nontrivial_fixing_automorphism(&m, &pinned, &caps()).unwrap();
            assert_eq!(brute, fast, "pinned {pinned:?}");
        }
    }

    #[test]
    fn signature_validation_rejects_duplicates() {
        assert!(Signature::new(
            vec![RelDecl::new("R", 1), RelDecl::new("R", 2)],
            vec![]
        )
        .is_err());
        assert!(Signature::new(vec![RelDecl::new("R", 0)], vec![]).is_err());
    }
}
