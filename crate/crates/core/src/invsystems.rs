//! Inverse systems of finite abelian groups and their rank analysis.
//!
//! A system lives over a finite directed index poset. Each index carries a
//! subgroup of a fixed ambient product of cyclic groups, and each comparable
//! pair carries a homomorphism (given as an integer matrix) from the higher
//! group to the lower one; the matrices must commute along chains. The rank
//! of an element measures how far it extends backwards through the system,
//! computed here as a layered greatest fixpoint.
//!
//! Because a finite directed poset has a maximum index, ranks collapse to a
//! dichotomy: an element has rank `Infty` exactly when it lifts all the way
//! to the maximal group, and rank `Fin(0)` otherwise. The layered fixpoint
//! does not assume this; it is what the recursion converges to.
//!
//! The second half of the module builds the tree-shaped systems used by the
//! composition theorem: elements are additive labelings of a finite rooted
//! tree whose local sums vanish, restriction forgets labels outside a
//! downward-closed node set, and "alpha-strong" labelings are those whose
//! support sits above nodes of foundation rank at least alpha.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{invalid, violation, Error, Result};
use crate::ordinal::Ordinal;
use crate::Caps;

/// A finite product of cyclic groups, given by component moduli.
///
/// A modulus of `0` stands for the integers; rank computations replace it by
/// the configurable stand-in modulus (`Caps::z_standin`) before any
/// arithmetic happens, and callers can re-run with a larger stand-in to
/// check that results have stabilized.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AbGroup {
    pub moduli: Vec<u32>,
}

impl AbGroup {
    pub fn new(moduli: Vec<u32>) -> Self {
        AbGroup { moduli }
    }

    /// Component moduli with every `0` replaced by the stand-in.
    pub fn resolved(&self, z_standin: u32) -> Vec<u32> {
        self.moduli
            .iter()
            .map(|&m| if m == 0 { z_standin } else { m })
            .collect()
    }
}

fn reduce_mod(v: &[u32], moduli: &[u32]) -> Vec<u32> {
    v.iter().zip(moduli).map(|(&x, &m)| x % m).collect()
}

fn add_mod(a: &[u32], b: &[u32], moduli: &[u32]) -> Vec<u32> {
    a.iter()
        .zip(b)
        .zip(moduli)
        .map(|((&x, &y), &m)| (x + y) % m)
        .collect()
}

/// Enumerate the subgroup generated by `gens` inside the product of cyclic
/// groups with the given moduli. Fails with `CapExceeded` if the closure
/// grows past `limit`.
fn subgroup_elements(gens: &[Vec<u32>], moduli: &[u32], limit: u64) -> Result<Vec<Vec<u32>>> {
    let zero = vec![0u32; moduli.len()];
    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
    seen.insert(zero.clone());
    let mut frontier = vec![zero];
    while let Some(x) = frontier.pop() {
        for g in gens {
            let y = add_mod(&x, g, moduli);
            if seen.insert(y.clone()) {
                if seen.len() as u64 > limit {
                    return Err(Error::CapExceeded {
                        what: "subgroup enumeration",
                        need: seen.len() as u64,
                        limit,
                    });
                }
                frontier.push(y);
            }
        }
    }
    Ok(seen.into_iter().collect())
}

fn lcm_u64(a: u64, b: u64) -> u64 {
    fn gcd(mut a: u64, mut b: u64) -> u64 {
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a
    }
    if a == 0 || b == 0 {
        0
    } else {
        a / gcd(a, b) * b
    }
}

/// An inverse system of abelian groups over a finite directed poset.
///
/// All groups live inside one ambient product of cyclic groups (`moduli`,
/// already resolved: every entry is at least 1). `le` is the full order
/// relation on indices; `maps` holds one matrix per strictly comparable
/// pair `(p, q)` with `p < q`, mapping the group at `q` into the group at
/// `p`. Row `i` of a matrix gives the coefficients producing output
/// coordinate `i`, taken modulo `moduli[i]`.
#[derive(Debug, Clone)]
pub struct InvSystem {
    names: Vec<String>,
    le: Vec<Vec<bool>>,
    moduli: Vec<u32>,
    gens: Vec<Vec<Vec<u32>>>,
    maps: BTreeMap<(usize, usize), Vec<Vec<u32>>>,
    elements: Vec<Vec<Vec<u32>>>,
}

impl InvSystem {
    pub fn new(
        names: Vec<String>,
        le: Vec<Vec<bool>>,
        ambient: &AbGroup,
        gens: Vec<Vec<Vec<u32>>>,
        maps: BTreeMap<(usize, usize), Vec<Vec<u32>>>,
        caps: &Caps,
    ) -> Result<Self> {
        let k = names.len();
        let dim = ambient.moduli.len();
        let moduli = ambient.resolved(caps.z_standin);
        if moduli.iter().any(|&m| m == 0) {
            return invalid("ambient modulus resolved to 0; z_standin must be positive");
        }
        {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != k {
                return invalid("duplicate index names");
            }
        }
        if le.len() != k || le.iter().any(|row| row.len() != k) {
            return invalid("order relation must be a square matrix over the indices");
        }
        for p in 0..k {
            if !le[p][p] {
                return invalid("order relation must be reflexive");
            }
            for q in 0..k {
                if p != q && le[p][q] && le[q][p] {
                    return invalid("order relation must be antisymmetric");
                }
                for r in 0..k {
                    if le[p][q] && le[q][r] && !le[p][r] {
                        return invalid("order relation must be transitive");
                    }
                }
            }
        }
        for p in 0..k {
            for q in 0..k {
                if !(0..k).any(|r| le[p][r] && le[q][r]) {
                    return invalid(format!(
                        "index poset is not directed: {} and {} have no upper bound",
                        names[p], names[q]
                    ));
                }
            }
        }
        if gens.len() != k {
            return invalid("need one generator list per index");
        }
        let gens: Vec<Vec<Vec<u32>>> = gens
            .into_iter()
            .map(|gs| {
                gs.into_iter()
                    .map(|g| {
                        if g.len() != dim {
                            invalid("generator has wrong length")
                        } else {
                            Ok(reduce_mod(&g, &moduli))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut elements = Vec::with_capacity(k);
        for gs in &gens {
            elements.push(subgroup_elements(gs, &moduli, caps.group_limit as u64)?);
        }
        // Every strictly comparable pair must carry a map, and nothing else.
        for (&(p, q), m) in &maps {
            if p >= k || q >= k || p == q || !le[p][q] {
                return invalid("map given for a pair that is not strictly comparable");
            }
            if m.len() != dim || m.iter().any(|row| row.len() != dim) {
                return invalid("map matrix has wrong shape");
            }
            for (i, row) in m.iter().enumerate() {
                for (j, &c) in row.iter().enumerate() {
                    if (c as u64 * moduli[j] as u64) % moduli[i] as u64 != 0 {
                        return invalid(format!(
                            "matrix entry ({i},{j}) does not define a homomorphism between the cyclic components"
                        ));
                    }
                }
            }
        }
        for p in 0..k {
            for q in 0..k {
                if p != q && le[p][q] && !maps.contains_key(&(p, q)) {
                    return invalid(format!(
                        "missing map for comparable pair {} <= {}",
                        names[p], names[q]
                    ));
                }
            }
        }
        let sys = InvSystem {
            names,
            le,
            moduli,
            gens,
            maps,
            elements,
        };
        // Maps must land in the declared subgroups and commute along chains.
        for (&(p, q), _) in &sys.maps {
            for b in &sys.elements[q] {
                let a = sys.apply(p, q, b);
                if !sys.contains(p, &a) {
                    return invalid(format!(
                        "map image of an element of {} is not in the group at {}",
                        sys.names[q], sys.names[p]
                    ));
                }
            }
        }
        for p in 0..k {
            for q in 0..k {
                for r in 0..k {
                    if p != q && q != r && p != r && sys.le[p][q] && sys.le[q][r] {
                        for c in &sys.elements[r] {
                            let via = sys.apply(p, q, &sys.apply(q, r, c));
                            let direct = sys.apply(p, r, c);
                            if via != direct {
                                return invalid(format!(
                                    "maps do not commute along {} <= {} <= {}",
                                    sys.names[p], sys.names[q], sys.names[r]
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(sys)
    }

    /// Build a system whose maps are coordinate restrictions: each index has
    /// a support set of ambient coordinates, the order is support inclusion
    /// (also supplied explicitly via `le`), and the map for `p < q` zeroes
    /// every coordinate outside the support of `p`.
    pub fn from_supports(
        names: Vec<String>,
        le: Vec<Vec<bool>>,
        supports: &[BTreeSet<usize>],
        ambient: &AbGroup,
        gens: Vec<Vec<Vec<u32>>>,
        caps: &Caps,
    ) -> Result<Self> {
        let dim = ambient.moduli.len();
        if supports.len() != names.len() {
            return invalid("need one support per index");
        }
        for (p, s) in supports.iter().enumerate() {
            if s.iter().any(|&c| c >= dim) {
                return invalid("support coordinate out of range");
            }
            for q in 0..supports.len() {
                if p != q && le[p][q] && !supports[p].is_subset(&supports[q]) {
                    return invalid("comparable indices must have nested supports");
                }
            }
        }
        let mut maps = BTreeMap::new();
        for p in 0..names.len() {
            for q in 0..names.len() {
                if p != q && le.get(p).and_then(|r| r.get(q)).copied().unwrap_or(false) {
                    let mut m = vec![vec![0u32; dim]; dim];
                    for (i, row) in m.iter_mut().enumerate() {
                        if supports[p].contains(&i) {
                            row[i] = 1;
                        }
                    }
                    maps.insert((p, q), m);
                }
            }
        }
        InvSystem::new(names, le, ambient, gens, maps, caps)
    }

    pub fn index_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, p: usize) -> &str {
        &self.names[p]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn le(&self, p: usize, q: usize) -> bool {
        self.le[p][q]
    }

    pub fn moduli(&self) -> &[u32] {
        &self.moduli
    }

    pub fn generators(&self, p: usize) -> &[Vec<u32>] {
        &self.gens[p]
    }

    /// All elements of the group at index `p`, sorted.
    pub fn elements(&self, p: usize) -> &[Vec<u32>] {
        &self.elements[p]
    }

    pub fn contains(&self, p: usize, v: &[u32]) -> bool {
        self.elements[p].binary_search_by(|e| e.as_slice().cmp(v)).is_ok()
    }

    /// Apply the map of the comparable pair `p < q` to a vector.
    pub fn apply(&self, p: usize, q: usize, v: &[u32]) -> Vec<u32> {
        let m = &self.maps[&(p, q)];
        (0..self.moduli.len())
            .map(|i| {
                let mut acc = 0u64;
                for (j, &x) in v.iter().enumerate() {
                    acc += m[i][j] as u64 * x as u64;
                }
                (acc % self.moduli[i] as u64) as u32
            })
            .collect()
    }

    fn element_index(&self, p: usize, v: &[u32]) -> Option<usize> {
        self.elements[p].binary_search_by(|e| e.as_slice().cmp(v)).ok()
    }

    /// Ranks of every element at every index, by layered fixpoint: an
    /// element survives to layer k+1 if, at every strictly higher index, it
    /// has a preimage surviving at layer k. Survivors of the fixpoint have
    /// rank `Infty`; an element dropped when passing to layer k+1 has rank
    /// `Fin(k)`.
    pub fn all_ranks(&self) -> Vec<Vec<Ordinal>> {
        let k = self.names.len();
        let mut alive: Vec<Vec<bool>> = self.elements.iter().map(|es| vec![true; es.len()]).collect();
        let mut rank: Vec<Vec<Ordinal>> =
            self.elements.iter().map(|es| vec![Ordinal::Infty; es.len()]).collect();
        let mut layer = 0u32;
        loop {
            let mut next = alive.clone();
            let mut changed = false;
            for p in 0..k {
                'elem: for (ai, a) in self.elements[p].iter().enumerate() {
                    if !alive[p][ai] {
                        continue;
                    }
                    for q in 0..k {
                        if q == p || !self.le[p][q] {
                            continue;
                        }
                        let mut has = false;
                        for (bi, b) in self.elements[q].iter().enumerate() {
                            if alive[q][bi] && self.apply(p, q, b) == *a {
                                has = true;
                                break;
                            }
                        }
                        if !has {
                            next[p][ai] = false;
                            rank[p][ai] = Ordinal::Fin(layer);
                            changed = true;
                            continue 'elem;
                        }
                    }
                }
            }
            if !changed {
                return rank;
            }
            alive = next;
            layer += 1;
        }
    }

    /// Rank of one element. Errors if `a` is not in the group at `p`.
    pub fn rank(&self, p: usize, a: &[u32]) -> Result<Ordinal> {
        let a = reduce_mod(a, &self.moduli);
        let ai = match self.element_index(p, &a) {
            Some(i) => i,
            None => return invalid(format!("element is not in the group at {}", self.names[p])),
        };
        Ok(self.all_ranks()[p][ai])
    }

    /// Least ordinal strictly above every finite rank in the system: 0 when
    /// every element has rank `Infty`, otherwise max finite rank plus one.
    pub fn rank_bound(&self) -> Ordinal {
        let mut bound = Ordinal::Fin(0);
        for ranks in self.all_ranks() {
            for r in ranks {
                if let Ordinal::Fin(n) = r {
                    bound = bound.max(Ordinal::Fin(n + 1));
                }
            }
        }
        bound
    }

    /// Rank of a set of elements at index `p`: a set survives to layer k+1
    /// if at every strictly higher index some subset maps onto it with
    /// survival at layer k. Runs the layered fixpoint over all nonempty
    /// subsets of every group, so it is only feasible for small systems;
    /// guarded by `Caps::state_limit`.
    pub fn rank_set(&self, p: usize, set: &[Vec<u32>], caps: &Caps) -> Result<Ordinal> {
        let k = self.names.len();
        let mut total: u64 = 0;
        for es in &self.elements {
            if es.len() >= 40 {
                return Err(Error::CapExceeded {
                    what: "set-rank subset enumeration",
                    need: u64::MAX,
                    limit: caps.state_limit as u64,
                });
            }
            total = total.saturating_add((1u64 << es.len()) - 1);
            if total > caps.state_limit as u64 {
                return Err(Error::CapExceeded {
                    what: "set-rank subset enumeration",
                    need: total,
                    limit: caps.state_limit as u64,
                });
            }
        }
        let mut target_mask = 0u64;
        for a in set {
            let a = reduce_mod(a, &self.moduli);
            match self.element_index(p, &a) {
                Some(i) => target_mask |= 1 << i,
                None => {
                    return invalid(format!("element is not in the group at {}", self.names[p]))
                }
            }
        }
        if target_mask == 0 {
            return invalid("set rank needs a nonempty set");
        }
        // image_mask[(p,q)][subset of A_q] is precomputed lazily per pair as
        // element-image masks; a subset's image is the union of them.
        let mut elem_image: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
        for q in 0..k {
            for p2 in 0..k {
                if p2 != q && self.le[p2][q] {
                    let imgs = self.elements[q]
                        .iter()
                        .map(|b| 1u64 << self.element_index(p2, &self.apply(p2, q, b)).unwrap())
                        .collect();
                    elem_image.insert((p2, q), imgs);
                }
            }
        }
        // alive[p] maps each nonempty subset mask to whether it survives.
        let mut alive: Vec<Vec<bool>> = self
            .elements
            .iter()
            .map(|es| vec![true; 1usize << es.len()])
            .collect();
        let mut layer = 0u32;
        loop {
            let mut next = alive.clone();
            let mut changed = false;
            for p2 in 0..k {
                'mask: for mask in 1..(1usize << self.elements[p2].len()) {
                    if !alive[p2][mask] {
                        continue;
                    }
                    for q in 0..k {
                        if q == p2 || !self.le[p2][q] {
                            continue;
                        }
                        let imgs = &elem_image[&(p2, q)];
                        let mut has = false;
                        for bmask in 1..(1usize << self.elements[q].len()) {
                            if !alive[q][bmask] {
                                continue;
                            }
                            let mut image = 0u64;
                            for (bi, im) in imgs.iter().enumerate() {
                                if bmask & (1 << bi) != 0 {
                                    image |= im;
                                }
                            }
                            if image == mask as u64 {
                                has = true;
                                break;
                            }
                        }
                        if !has {
                            next[p2][mask] = false;
                            changed = true;
                            if p2 == p && mask as u64 == target_mask {
                                return Ok(Ordinal::Fin(layer));
                            }
                            continue 'mask;
                        }
                    }
                }
            }
            if !changed {
                return Ok(Ordinal::Infty);
            }
            alive = next;
            layer += 1;
        }
    }
}

/// A finite rooted tree given by parent pointers, with foundation ranks.
#[derive(Debug, Clone)]
pub struct RootedTree {
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<u32>,
    rank: Vec<u32>,
    root: usize,
}

impl RootedTree {
    pub fn new(parents: Vec<Option<usize>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return invalid("tree must have at least a root");
        }
        let mut root = None;
        let mut children = vec![Vec::new(); n];
        for (i, p) in parents.iter().enumerate() {
            match p {
                None => {
                    if root.replace(i).is_some() {
                        return invalid("tree must have exactly one root");
                    }
                }
                Some(p) => {
                    if *p >= n {
                        return invalid("parent index out of range");
                    }
                    children[*p].push(i);
                }
            }
        }
        let root = match root {
            Some(r) => r,
            None => return invalid("tree must have exactly one root"),
        };
        // Depths double as a cycle check: every node must reach the root.
        let mut depth = vec![u32::MAX; n];
        depth[root] = 0;
        let mut queue = vec![root];
        let mut seen = 1;
        while let Some(t) = queue.pop() {
            for &c in &children[t] {
                depth[c] = depth[t] + 1;
                seen += 1;
                queue.push(c);
            }
        }
        if seen != n {
            return invalid("parent pointers contain a cycle or unreachable node");
        }
        let mut rank = vec![0u32; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&t| std::cmp::Reverse(depth[t]));
        for &t in &order {
            rank[t] = children[t].iter().map(|&c| rank[c] + 1).max().unwrap_or(0);
        }
        Ok(RootedTree {
            parents,
            children,
            depth,
            rank,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, t: usize) -> Option<usize> {
        self.parents[t]
    }

    pub fn children(&self, t: usize) -> &[usize] {
        &self.children[t]
    }

    pub fn depth(&self, t: usize) -> u32 {
        self.depth[t]
    }

    /// Foundation rank: 0 at leaves, else one more than the largest child rank.
    pub fn foundation_rank(&self, t: usize) -> u32 {
        self.rank[t]
    }
}

/// Additive labelings of a rooted tree with values in a cyclic group of the
/// given order, subject to vanishing local sums.
#[derive(Debug, Clone)]
pub struct TreeSystem {
    pub tree: RootedTree,
    pub order: u32,
}

/// An element of the tree system at a downward-closed node set `u`: a value
/// for each node of `u` and each child of a node of `u`, summing to zero
/// around every node of `u` (the node plus its children).
///
/// `exceptions` carries bookkeeping for the finitely many positions where a
/// concretely realized sequence would deviate from its eventual value; it
/// rides along through restriction but plays no role in ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeElement {
    pub u: Vec<usize>,
    pub sigma: BTreeMap<usize, u32>,
    pub exceptions: BTreeMap<usize, Vec<u32>>,
}

impl TreeSystem {
    pub fn new(tree: RootedTree, order: u32) -> Result<Self> {
        if order < 2 {
            return invalid("value group must have order at least 2");
        }
        Ok(TreeSystem { tree, order })
    }

    /// Nodes of `u` together with all their children, sorted.
    pub fn succ_plus(&self, u: &[usize]) -> Vec<usize> {
        let mut out: BTreeSet<usize> = u.iter().copied().collect();
        for &t in u {
            out.extend(self.tree.children(t).iter().copied());
        }
        out.into_iter().collect()
    }

    fn check_index(&self, u: &[usize]) -> Result<()> {
        if u.is_empty() {
            return invalid("index set must be nonempty");
        }
        let set: BTreeSet<usize> = u.iter().copied().collect();
        if set.len() != u.len() || u.iter().any(|&t| t >= self.tree.len()) {
            return invalid("index set must be a set of tree nodes");
        }
        for &t in u {
            if let Some(p) = self.tree.parent(t) {
                if !set.contains(&p) {
                    return invalid("index set must be downward closed in the tree");
                }
            }
        }
        Ok(())
    }

    /// Build the element of `A_u` with the given values at the free
    /// positions (children of `u`-nodes outside `u`); the values on `u`
    /// itself are forced bottom-up by the vanishing sums.
    pub fn element(&self, u: &[usize], free: &BTreeMap<usize, u32>) -> Result<TreeElement> {
        self.check_index(u)?;
        let mut u = u.to_vec();
        u.sort_unstable();
        let uset: BTreeSet<usize> = u.iter().copied().collect();
        let sp = self.succ_plus(&u);
        let mut sigma: BTreeMap<usize, u32> = BTreeMap::new();
        for &s in &sp {
            if !uset.contains(&s) {
                let v = free.get(&s).copied().unwrap_or(0);
                sigma.insert(s, v % self.order);
            }
        }
        if free.keys().any(|s| uset.contains(s) || !sigma.contains_key(s)) {
            return invalid("free values must be keyed by children outside the index set");
        }
        let mut order: Vec<usize> = u.clone();
        order.sort_by_key(|&t| std::cmp::Reverse(self.tree.depth(t)));
        for &t in &order {
            let mut sum = 0u64;
            for &c in self.tree.children(t) {
                sum += sigma[&c] as u64;
            }
            let v = ((self.order as u64 - sum % self.order as u64) % self.order as u64) as u32;
            sigma.insert(t, v);
        }
        Ok(TreeElement {
            u,
            sigma,
            exceptions: BTreeMap::new(),
        })
    }

    /// All elements of `A_u`, one per assignment of free values.
    pub fn enumerate(&self, u: &[usize], caps: &Caps) -> Result<Vec<TreeElement>> {
        self.check_index(u)?;
        let uset: BTreeSet<usize> = u.iter().copied().collect();
        let free: Vec<usize> = self
            .succ_plus(u)
            .into_iter()
            .filter(|s| !uset.contains(s))
            .collect();
        let count = (self.order as u64).checked_pow(free.len() as u32);
        match count {
            Some(c) if c <= caps.group_limit as u64 => {}
            _ => {
                return Err(Error::CapExceeded {
                    what: "tree system enumeration",
                    need: count.unwrap_or(u64::MAX),
                    limit: caps.group_limit as u64,
                })
            }
        }
        let mut out = Vec::new();
        let mut digits = vec![0u32; free.len()];
        loop {
            let assign: BTreeMap<usize, u32> =
                free.iter().copied().zip(digits.iter().copied()).collect();
            out.push(self.element(u, &assign)?);
            let mut i = free.len();
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < self.order {
                    break;
                }
                digits[i] = 0;
            }
        }
    }

    /// Restrict an element to a smaller downward-closed node set: keep the
    /// values on the smaller set's nodes and children, and the bookkeeping
    /// entries that still refer to surviving positions.
    pub fn restrict(&self, f: &TreeElement, u2: &[usize]) -> Result<TreeElement> {
        self.check_index(u2)?;
        let fset: BTreeSet<usize> = f.u.iter().copied().collect();
        if !u2.iter().all(|t| fset.contains(t)) {
            return invalid("restriction target must be a subset of the element's index set");
        }
        let mut u2 = u2.to_vec();
        u2.sort_unstable();
        let keep: BTreeSet<usize> = self.succ_plus(&u2).into_iter().collect();
        Ok(TreeElement {
            u: u2,
            sigma: f
                .sigma
                .iter()
                .filter(|(s, _)| keep.contains(s))
                .map(|(&s, &v)| (s, v))
                .collect(),
            exceptions: f
                .exceptions
                .iter()
                .filter(|(s, _)| keep.contains(s))
                .map(|(&s, v)| (s, v.clone()))
                .collect(),
        })
    }

    /// An element is alpha-strong when every position carrying a nonzero
    /// value has foundation rank at least alpha in the tree.
    pub fn is_alpha_strong(&self, f: &TreeElement, alpha: Ordinal) -> bool {
        f.sigma
            .iter()
            .all(|(&s, &v)| v == 0 || Ordinal::Fin(self.tree.foundation_rank(s)) >= alpha)
    }

    /// Largest alpha for which the element is alpha-strong: `Infty` for the
    /// zero labeling, else the least foundation rank over its support.
    pub fn max_strongness(&self, f: &TreeElement) -> Ordinal {
        f.sigma
            .iter()
            .filter(|(_, &v)| v != 0)
            .map(|(&s, _)| Ordinal::Fin(self.tree.foundation_rank(s)))
            .min()
            .unwrap_or(Ordinal::Infty)
    }

    /// Extend an (alpha+1)-strong element of `A_u` to an alpha-strong
    /// element of `A_{u + {s}}`, where `s` is a node outside `u` whose
    /// parent lies in `u`. If the value at `s` is zero the extension is by
    /// zeros; otherwise the debt `-sigma(s)` is parked on the least child of
    /// `s` with foundation rank at least alpha, erroring if none exists.
    pub fn extend_strong(&self, f: &TreeElement, s: usize, alpha: u32) -> Result<TreeElement> {
        let uset: BTreeSet<usize> = f.u.iter().copied().collect();
        if uset.contains(&s) {
            return invalid("extension node already lies in the index set");
        }
        if s >= self.tree.len() || self.tree.parent(s).map_or(true, |p| !uset.contains(&p)) {
            return invalid("extension node must be a child of the index set");
        }
        let vs = f.sigma.get(&s).copied().unwrap_or(0);
        let mut v = f.u.clone();
        v.push(s);
        v.sort_unstable();
        let mut free: BTreeMap<usize, u32> = f
            .sigma
            .iter()
            .filter(|(t, _)| !uset.contains(t) && **t != s)
            .map(|(&t, &val)| (t, val))
            .collect();
        if vs != 0 {
            let carrier = self
                .tree
                .children(s)
                .iter()
                .copied()
                .find(|&c| self.tree.foundation_rank(c) >= alpha);
            match carrier {
                Some(c) => {
                    free.insert(c, (self.order - vs) % self.order);
                }
                None => {
                    return violation(format!(
                        "no child of node {s} has foundation rank at least {alpha} to absorb a nonzero value"
                    ))
                }
            }
        }
        let mut g = self.element(&v, &free)?;
        if g.sigma.get(&s) != Some(&vs) {
            return violation("extension failed to reproduce the value at the new node");
        }
        for (&t, &val) in &f.sigma {
            if g.sigma.get(&t) != Some(&val) {
                return violation("extension failed to restrict back to the original element");
            }
        }
        g.exceptions = f.exceptions.clone();
        Ok(g)
    }

    /// All nonempty downward-closed node sets, sorted by size then
    /// lexicographically. Guarded by `Caps::state_limit` on the number of
    /// candidate masks.
    pub fn downward_closed_sets(&self, caps: &Caps) -> Result<Vec<Vec<usize>>> {
        let n = self.tree.len();
        if n >= 63 || (1u64 << n) > caps.state_limit as u64 {
            return Err(Error::CapExceeded {
                what: "downward-closed subset enumeration",
                need: if n >= 63 { u64::MAX } else { 1u64 << n },
                limit: caps.state_limit as u64,
            });
        }
        let mut out = Vec::new();
        'mask: for mask in 1u64..(1 << n) {
            for t in 0..n {
                if mask & (1 << t) != 0 {
                    if let Some(p) = self.tree.parent(t) {
                        if mask & (1 << p) == 0 {
                            continue 'mask;
                        }
                    }
                }
            }
            out.push((0..n).filter(|&t| mask & (1 << t) != 0).collect::<Vec<_>>());
        }
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        Ok(out)
    }

    /// Materialize the tree system as an inverse system over the lattice of
    /// nonempty downward-closed node sets, with one ambient coordinate per
    /// tree node and coordinate-restriction maps.
    pub fn materialize(&self, caps: &Caps) -> Result<MaterializedTree> {
        let subsets = self.downward_closed_sets(caps)?;
        let k = subsets.len();
        let sets: Vec<BTreeSet<usize>> = subsets
            .iter()
            .map(|u| u.iter().copied().collect())
            .collect();
        let mut le = vec![vec![false; k]; k];
        for p in 0..k {
            for q in 0..k {
                le[p][q] = sets[p].is_subset(&sets[q]);
            }
        }
        let supports: Vec<BTreeSet<usize>> = subsets
            .iter()
            .map(|u| self.succ_plus(u).into_iter().collect())
            .collect();
        let ambient = AbGroup::new(vec![self.order; self.tree.len()]);
        let mut gens = Vec::with_capacity(k);
        for u in &subsets {
            let uset: BTreeSet<usize> = u.iter().copied().collect();
            let free: Vec<usize> = self
                .succ_plus(u)
                .into_iter()
                .filter(|s| !uset.contains(s))
                .collect();
            let mut gs = Vec::new();
            for &s in &free {
                let mut assign = BTreeMap::new();
                assign.insert(s, 1u32);
                let e = self.element(u, &assign)?;
                gs.push(self.vector_of(&e));
            }
            gens.push(gs);
        }
        let system = InvSystem::from_supports(
            subsets.iter().map(index_name).collect(),
            le,
            &supports,
            &ambient,
            gens,
            caps,
        )?;
        Ok(MaterializedTree {
            system,
            subsets,
        })
    }

    /// Full-length coordinate vector of an element: its values on the
    /// positions it labels, zero elsewhere.
    pub fn vector_of(&self, f: &TreeElement) -> Vec<u32> {
        let mut v = vec![0u32; self.tree.len()];
        for (&s, &val) in &f.sigma {
            v[s] = val % self.order;
        }
        v
    }
}

fn index_name(u: &Vec<usize>) -> String {
    let parts: Vec<String> = u.iter().map(|t| t.to_string()).collect();
    format!("u{{{}}}", parts.join(","))
}

/// A tree system realized as a concrete inverse system, with the index
/// order shared between the two views.
#[derive(Debug)]
pub struct MaterializedTree {
    pub system: InvSystem,
    pub subsets: Vec<Vec<usize>>,
}

impl MaterializedTree {
    pub fn index_of(&self, u: &[usize]) -> Option<usize> {
        let mut u = u.to_vec();
        u.sort_unstable();
        self.subsets.iter().position(|s| *s == u)
    }
}

/// Compare the syntactic strength of an element with its rank in the
/// materialized system: returns `(max strongness, rank)`. The rank never
/// exceeds the strongness.
pub fn tree_rank_correspondence(
    ts: &TreeSystem,
    f: &TreeElement,
    caps: &Caps,
) -> Result<(Ordinal, Ordinal)> {
    let mat = ts.materialize(caps)?;
    let p = match mat.index_of(&f.u) {
        Some(p) => p,
        None => return invalid("element index set is not a downward-closed node set"),
    };
    let rank = mat.system.rank(p, &ts.vector_of(f))?;
    Ok((ts.max_strongness(f), rank))
}

/// A tree system blown up block-by-block into a product of cyclic groups:
/// each tree node owns a block of ambient coordinates, the node's value
/// group embeds diagonally into its block, and elements are the blow-ups of
/// tree-system elements.
#[derive(Debug)]
pub struct CyclicComposition {
    pub system: InvSystem,
    pub subsets: Vec<Vec<usize>>,
    blocks: Vec<Vec<usize>>,
    moduli: Vec<u32>,
    order: u32,
}

impl CyclicComposition {
    pub fn index_of(&self, u: &[usize]) -> Option<usize> {
        let mut u = u.to_vec();
        u.sort_unstable();
        self.subsets.iter().position(|s| *s == u)
    }

    /// Blow a per-node vector up to the ambient coordinates: each block
    /// carries the node's value times the diagonal generator.
    pub fn blow_up(&self, node_vec: &[u32]) -> Vec<u32> {
        let mut out = vec![0u32; self.moduli.len()];
        for (t, block) in self.blocks.iter().enumerate() {
            let w = node_vec[t] % self.order;
            for &i in block {
                out[i] = (w % self.moduli[i]) as u32;
            }
        }
        out
    }
}

/// Compose cyclic groups along a tree system: `c_moduli` lists the ambient
/// cyclic components (0 meaning the integers, replaced by the stand-in),
/// `blocks[t]` gives the components owned by tree node `t`, and every
/// block's diagonal subgroup must be cyclic of exactly the tree system's
/// order. The resulting inverse system is isomorphic to the materialized
/// tree system via `blow_up`, so ranks transport across unchanged.
pub fn cyclic_composition(
    c_moduli: &[u32],
    blocks: &[Vec<usize>],
    ts: &TreeSystem,
    caps: &Caps,
) -> Result<CyclicComposition> {
    if blocks.len() != ts.tree.len() {
        return invalid("need exactly one block of components per tree node");
    }
    let moduli: Vec<u32> = c_moduli
        .iter()
        .map(|&m| if m == 0 { caps.z_standin } else { m })
        .collect();
    let mut owned = vec![false; moduli.len()];
    for block in blocks {
        if block.is_empty() {
            return invalid("every block must own at least one component");
        }
        let mut order = 1u64;
        for &i in block {
            if i >= moduli.len() || owned[i] {
                return invalid("blocks must partition the components");
            }
            owned[i] = true;
            order = lcm_u64(order, moduli[i] as u64);
        }
        if order != ts.order as u64 {
            return invalid(format!(
                "block diagonal generates a cyclic group of order {order}, not the declared {}",
                ts.order
            ));
        }
    }
    if !owned.iter().all(|&b| b) {
        return invalid("blocks must partition the components");
    }
    let mat = ts.materialize(caps)?;
    let composition = CyclicComposition {
        system: mat.system.clone(),
        subsets: mat.subsets.clone(),
        blocks: blocks.to_vec(),
        moduli: moduli.clone(),
        order: ts.order,
    };
    let k = mat.subsets.len();
    let mut le = vec![vec![false; k]; k];
    for p in 0..k {
        for q in 0..k {
            le[p][q] = mat.system.le(p, q);
        }
    }
    let supports: Vec<BTreeSet<usize>> = mat
        .subsets
        .iter()
        .map(|u| {
            ts.succ_plus(u)
                .into_iter()
                .flat_map(|t| blocks[t].iter().copied())
                .collect()
        })
        .collect();
    let gens: Vec<Vec<Vec<u32>>> = (0..k)
        .map(|p| {
            mat.system
                .generators(p)
                .iter()
                .map(|g| composition.blow_up(g))
                .collect()
        })
        .collect();
    let system = InvSystem::from_supports(
        mat.subsets.iter().map(index_name).collect(),
        le,
        &supports,
        &AbGroup::new(moduli),
        gens,
        caps,
    )?;
    Ok(CyclicComposition {
        system,
        ..composition
    })
}
