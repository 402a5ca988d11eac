//! Crosscutting products of finite structures: truncated product models,
//! the free-action Borelness classifier, base construction in the free
//! case, and the coset gadget whose back-and-forth behaviour is governed by
//! inverse-system ranks.
//!
//! A product spec lists finitely many prefix factors and a nonempty tail
//! block repeated periodically, so "all but finitely many coordinates" is
//! decidable by inspecting the prefix and a single tail period. A truncated
//! model keeps the first `n` coordinates: its elements are coordinate
//! tuples, `E_n` holds between elements agreeing at coordinate `n`, and
//! each factor relation is lifted coordinatewise.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{invalid, Error, Result};
use crate::invsystems::{AbGroup, InvSystem};
use crate::structures::{
    automorphism_group, is_automorphism, is_free_action, mixed_radix_digits, mixed_radix_index,
    FiniteStructure, Perm, RelDecl, Signature,
};
use crate::Caps;

/// Factors of a crosscutting product: an explicit finite prefix followed by
/// a periodically repeated tail.
#[derive(Debug, Clone)]
pub struct ProductSpec {
    prefix: Vec<FiniteStructure>,
    tail: Vec<FiniteStructure>,
}

impl ProductSpec {
    pub fn new(prefix: Vec<FiniteStructure>, tail: Vec<FiniteStructure>) -> Result<ProductSpec> {
        if tail.is_empty() {
            return invalid("tail must contain at least one factor");
        }
        for m in prefix.iter().chain(&tail) {
            if m.universe() < 2 {
                return invalid("every factor must have at least two elements");
            }
            if !m.signature().constants.is_empty() {
                return invalid("factors must be constant-free");
            }
        }
        Ok(ProductSpec { prefix, tail })
    }

    /// The factor at coordinate `n`: prefix entry or periodic tail entry.
    pub fn factor(&self, n: usize) -> &FiniteStructure {
        if n < self.prefix.len() {
            &self.prefix[n]
        } else {
            &self.tail[(n - self.prefix.len()) % self.tail.len()]
        }
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix.len()
    }

    pub fn tail_len(&self) -> usize {
        self.tail.len()
    }

    fn radii(&self, n_coords: usize) -> Vec<usize> {
        (0..n_coords).map(|n| self.factor(n).universe()).collect()
    }
}

fn checked_volume(radii: &[usize], caps: &Caps) -> Result<usize> {
    let mut vol: usize = 1;
    for &r in radii {
        vol = match vol.checked_mul(r) {
            Some(v) if v <= caps.cap_tuple => v,
            _ => {
                return Err(Error::CapExceeded {
                    what: "product universe",
                    need: u64::MAX,
                    limit: caps.cap_tuple as u64,
                })
            }
        };
    }
    Ok(vol)
}

/// Assemble a product structure over the given coordinate tuples (all of
/// the truncated product when `keep` is `None`). Relation order per
/// coordinate: the factor's lifted relations first, then the coordinate
/// equality `E_n`.
fn assemble_product(
    spec: &ProductSpec,
    n_coords: usize,
    keep: Option<&BTreeSet<Vec<usize>>>,
    constants: Vec<(String, Vec<usize>)>,
    caps: &Caps,
) -> Result<(FiniteStructure, Vec<Vec<usize>>)> {
    let radii = spec.radii(n_coords);
    let volume = checked_volume(&radii, caps)?;
    let mut elements: Vec<Vec<usize>> = Vec::new();
    for idx in 0..volume {
        let t = mixed_radix_digits(idx, &radii);
        if keep.map_or(true, |k| k.contains(&t)) {
            elements.push(t);
        }
    }
    let index_of: HashMap<Vec<usize>, usize> = elements
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    if elements
        .len()
        .checked_mul(elements.len())
        .map_or(true, |sq| sq > caps.cap_tuple)
    {
        return Err(Error::CapExceeded {
            what: "product relation table",
            need: u64::MAX,
            limit: caps.cap_tuple as u64,
        });
    }
    let mut decls: Vec<RelDecl> = Vec::new();
    for n in 0..n_coords {
        for r in &spec.factor(n).signature().relations {
            decls.push(RelDecl::owned(format!("{}@{n}", r.name), r.arity, n as u32));
        }
        decls.push(RelDecl::new(format!("E_{n}"), 2));
    }
    let const_names: Vec<String> = constants.iter().map(|(n, _)| n.clone()).collect();
    let sig = Signature::new(decls, const_names)?;
    let const_vals: Vec<usize> = {
        let mut vals = Vec::new();
        for (name, t) in &constants {
            match index_of.get(t) {
                Some(&i) => vals.push(i),
                None => return invalid(format!("constant {name} is not in the universe")),
            }
        }
        vals
    };
    let mut m = FiniteStructure::empty(sig, elements.len(), const_vals)?;
    // Per-coordinate buckets of elements by their value there.
    let mut by_value: Vec<Vec<Vec<usize>>> = (0..n_coords)
        .map(|n| vec![Vec::new(); radii[n]])
        .collect();
    for (i, t) in elements.iter().enumerate() {
        for n in 0..n_coords {
            by_value[n][t[n]].push(i);
        }
    }
    let mut rel = 0;
    for n in 0..n_coords {
        let factor = spec.factor(n);
        for r in 0..factor.signature().relations.len() {
            let arity = factor.signature().relations[r].arity;
            for ft in factor.interp(r) {
                // All element tuples whose n-th coordinates spell out `ft`.
                let pools: Vec<&Vec<usize>> = ft.iter().map(|&v| &by_value[n][v]).collect();
                let mut pick = vec![0usize; arity];
                'fill: loop {
                    let tuple: Vec<usize> =
                        pick.iter().zip(&pools).map(|(&i, p)| p[i]).collect();
                    m.insert_tuple(rel, tuple)?;
                    let mut i = arity;
                    loop {
                        if i == 0 {
                            break 'fill;
                        }
                        i -= 1;
                        pick[i] += 1;
                        if pick[i] < pools[i].len() {
                            break;
                        }
                        pick[i] = 0;
                    }
                }
            }
        }
        rel += factor.signature().relations.len();
        for bucket in &by_value[n] {
            for &a in bucket {
                for &b in bucket {
                    m.insert_tuple(rel, vec![a, b])?;
                }
            }
        }
        rel += 1;
    }
    Ok((m, elements))
}

/// The truncated product on the first `n_coords` coordinates.
pub fn build_truncated_product(
    spec: &ProductSpec,
    n_coords: usize,
    caps: &Caps,
) -> Result<FiniteStructure> {
    assemble_product(spec, n_coords, None, Vec::new(), caps).map(|(m, _)| m)
}

/// Where the factor automorphism groups fail to act freely: exact indices
/// within the prefix, and a single verdict for the periodic tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IStar {
    pub prefix_nonfree: Vec<usize>,
    pub tail_free: bool,
}

impl IStar {
    /// Is the full non-free index set finite?
    pub fn is_finite(&self) -> bool {
        self.tail_free
    }
}

pub fn istar(spec: &ProductSpec, caps: &Caps) -> Result<IStar> {
    let mut prefix_nonfree = Vec::new();
    for (n, m) in spec.prefix.iter().enumerate() {
        if !is_free_action(&automorphism_group(m, caps)?) {
            prefix_nonfree.push(n);
        }
    }
    let mut tail_free = true;
    for m in &spec.tail {
        if !is_free_action(&automorphism_group(m, caps)?) {
            tail_free = false;
        }
    }
    Ok(IStar {
        prefix_nonfree,
        tail_free,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BorelVerdict {
    Borel,
    NonBorel,
}

/// Isomorphism of countable models of the product theory is Borel exactly
/// when the non-free index set is finite, i.e. when the tail acts freely.
pub fn borel_verdict(spec: &ProductSpec, caps: &Caps) -> Result<BorelVerdict> {
    Ok(if istar(spec, caps)?.is_finite() {
        BorelVerdict::Borel
    } else {
        BorelVerdict::NonBorel
    })
}

/// A tuple of truncated-product elements whose projections cover every
/// non-free factor, returned as element indices of the truncated product.
/// Such a tuple pins every non-free coordinate pointwise and leaves only
/// free actions elsewhere, so it is a base.
pub fn construct_base(spec: &ProductSpec, n_coords: usize, caps: &Caps) -> Result<Vec<usize>> {
    let verdict = istar(spec, caps)?;
    if !verdict.tail_free {
        return invalid("tail factors act non-freely; no finite base construction applies");
    }
    let radii = spec.radii(n_coords);
    checked_volume(&radii, caps)?;
    let mut nonfree: Vec<usize> = verdict
        .prefix_nonfree
        .iter()
        .copied()
        .filter(|&n| n < n_coords)
        .collect();
    nonfree.sort_unstable();
    let count = nonfree.iter().map(|&n| radii[n]).max().unwrap_or(1);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let digits: Vec<usize> = (0..n_coords)
            .map(|n| if nonfree.contains(&n) { i % radii[n] } else { 0 })
            .collect();
        out.push(mixed_radix_index(&digits, &radii));
    }
    Ok(out)
}

/// One selected coordinate of a gadget: a basepoint, a prime-order
/// automorphism fixing it, and a point displaced by the whole cyclic group.
#[derive(Debug, Clone)]
pub struct GadgetFactor {
    pub coord: usize,
    pub basepoint: usize,
    pub g: Perm,
    pub displaced: usize,
}

/// A subgroup of the product of the selected cyclic groups over a support
/// set, given by generator exponent vectors (indexed by the sorted support).
#[derive(Debug, Clone)]
pub struct GadgetGroup {
    pub support: Vec<usize>,
    pub generators: Vec<Vec<u32>>,
}

/// Full gadget data: selected coordinates with their cyclic actions, and a
/// directed family of supported subgroups.
#[derive(Debug, Clone)]
pub struct GadgetSpec {
    pub factors: Vec<GadgetFactor>,
    pub families: Vec<GadgetGroup>,
}

struct ValidatedGadget {
    /// Selected coordinates, sorted.
    selected: Vec<usize>,
    /// Basepoint per coordinate of the truncation (0 off the selection).
    basepoints: Vec<usize>,
    /// Per selected coordinate (parallel to `selected`): automorphism,
    /// displaced point, prime order.
    g: Vec<Perm>,
    displaced: Vec<usize>,
    orders: Vec<u32>,
    /// Per family: sorted support (as positions into `selected`) and the
    /// enumerated subgroup elements (exponent vectors over the support).
    supports: Vec<Vec<usize>>,
    groups: Vec<Vec<Vec<u32>>>,
}

fn perm_order(p: &Perm) -> u32 {
    let mut q = p.clone();
    let mut k = 1u32;
    while !q.is_identity() {
        q = q.compose(p);
        k += 1;
    }
    k
}

fn is_prime(n: u32) -> bool {
    n >= 2 && (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

fn close_group(gens: &[Vec<u32>], moduli: &[u32], limit: usize) -> Result<Vec<Vec<u32>>> {
    let zero = vec![0u32; moduli.len()];
    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
    seen.insert(zero.clone());
    let mut frontier = vec![zero];
    while let Some(x) = frontier.pop() {
        for g in gens {
            let y: Vec<u32> = x
                .iter()
                .zip(g)
                .zip(moduli)
                .map(|((&a, &b), &m)| (a + b % m) % m)
                .collect();
            if seen.insert(y.clone()) {
                if seen.len() > limit {
                    return Err(Error::CapExceeded {
                        what: "gadget subgroup enumeration",
                        need: seen.len() as u64,
                        limit: limit as u64,
                    });
                }
                frontier.push(y);
            }
        }
    }
    Ok(seen.into_iter().collect())
}

fn validate_gadget(
    spec: &ProductSpec,
    gadget: &GadgetSpec,
    n_coords: usize,
    caps: &Caps,
) -> Result<ValidatedGadget> {
    let mut by_coord: BTreeMap<usize, &GadgetFactor> = BTreeMap::new();
    for f in &gadget.factors {
        if f.coord >= n_coords {
            return invalid(format!("gadget coordinate {} outside the truncation", f.coord));
        }
        if by_coord.insert(f.coord, f).is_some() {
            return invalid(format!("duplicate gadget data for coordinate {}", f.coord));
        }
    }
    let selected: Vec<usize> = by_coord.keys().copied().collect();
    let mut basepoints = vec![0usize; n_coords];
    let mut g = Vec::new();
    let mut displaced = Vec::new();
    let mut orders = Vec::new();
    for (&n, f) in &by_coord {
        let m = spec.factor(n);
        let size = m.universe();
        if f.basepoint >= size || f.displaced >= size {
            return invalid(format!("gadget points out of range at coordinate {n}"));
        }
        if !is_automorphism(m, &f.g) {
            return invalid(format!(
                "gadget map at coordinate {n} is not an automorphism of the factor"
            ));
        }
        if f.g.is_identity() {
            return invalid(format!("gadget map at coordinate {n} is the identity"));
        }
        if f.g.apply(f.basepoint) != f.basepoint {
            return invalid(format!(
                "gadget map at coordinate {n} does not fix its basepoint"
            ));
        }
        let p = perm_order(&f.g);
        if !is_prime(p) {
            return invalid(format!(
                "gadget map at coordinate {n} has composite order {p}"
            ));
        }
        if f.g.apply(f.displaced) == f.displaced {
            return invalid(format!(
                "gadget displaced point at coordinate {n} is fixed by the map"
            ));
        }
        // With prime order, displacement once means displacement by every
        // nonzero power; assert the full property anyway.
        let mut moved = f.displaced;
        for _ in 1..p {
            moved = f.g.apply(moved);
            if moved == f.displaced {
                return invalid(format!(
                    "gadget displaced point at coordinate {n} returns early under the map"
                ));
            }
        }
        basepoints[n] = f.basepoint;
        g.push(f.g.clone());
        displaced.push(f.displaced);
        orders.push(p);
    }
    let mut supports: Vec<Vec<usize>> = Vec::new();
    let mut groups: Vec<Vec<Vec<u32>>> = Vec::new();
    for fam in &gadget.families {
        let mut sup = fam.support.clone();
        sup.sort_unstable();
        sup.dedup();
        if sup.len() != fam.support.len() || sup.is_empty() {
            return invalid("family support must be a nonempty set of coordinates");
        }
        let positions: Vec<usize> = sup
            .iter()
            .map(|c| {
                selected
                    .binary_search(c)
                    .map_err(|_| Error::Invalid(format!("family support coordinate {c} is not selected")))
            })
            .collect::<Result<Vec<_>>>()?;
        let moduli: Vec<u32> = positions.iter().map(|&i| orders[i]).collect();
        for gen in &fam.generators {
            if gen.len() != sup.len() {
                return invalid("family generator length must match its support size");
            }
        }
        if supports.contains(&positions) {
            return invalid("two families share one support set");
        }
        supports.push(positions);
        groups.push(close_group(&fam.generators, &moduli, caps.group_limit)?);
    }
    let as_sets: Vec<BTreeSet<usize>> = supports
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    for (i, a) in as_sets.iter().enumerate() {
        for b in &as_sets[i + 1..] {
            if !as_sets.iter().any(|c| a.is_subset(c) && b.is_subset(c)) {
                return invalid("family is not directed: two supports have no common superset");
            }
        }
    }
    if !as_sets.is_empty() {
        let union: BTreeSet<usize> = as_sets.iter().flatten().copied().collect();
        if union.len() != selected.len() {
            return invalid("family supports must cover every selected coordinate");
        }
    }
    // Restriction closure: a group restricted to a smaller support within
    // the family must land in the smaller group.
    for (i, si) in supports.iter().enumerate() {
        for (j, sj) in supports.iter().enumerate() {
            if i == j || !as_sets[i].is_subset(&as_sets[j]) {
                continue;
            }
            let cols: Vec<usize> = si
                .iter()
                .map(|c| sj.iter().position(|d| d == c).unwrap())
                .collect();
            for b in &groups[j] {
                let restricted: Vec<u32> = cols.iter().map(|&c| b[c]).collect();
                if !groups[i].contains(&restricted) {
                    return invalid(
                        "family is not restriction-closed: a larger group restricts outside a smaller one",
                    );
                }
            }
        }
    }
    let validated = ValidatedGadget {
        selected,
        basepoints,
        g,
        displaced,
        orders,
        supports,
        groups,
    };
    // Regularity: exponent vectors map injectively onto the coset.
    for fam in 0..validated.supports.len() {
        let coset: BTreeSet<Vec<usize>> = validated.groups[fam]
            .iter()
            .map(|a| validated.coset_tuple(fam, a))
            .collect();
        if coset.len() != validated.groups[fam].len() {
            return invalid("group does not act regularly on its coset");
        }
    }
    Ok(validated)
}

impl ValidatedGadget {
    /// The coordinate tuple of `a + f_I`: powers of the cyclic maps applied
    /// to the displaced points on the support, basepoints everywhere else.
    fn coset_tuple(&self, fam: usize, a: &[u32]) -> Vec<usize> {
        let mut t = self.basepoints.clone();
        for (k, &pos) in self.supports[fam].iter().enumerate() {
            let mut x = self.displaced[pos];
            for _ in 0..(a[k] % self.orders[pos]) {
                x = self.g[pos].apply(x);
            }
            t[self.selected[pos]] = x;
        }
        t
    }
}

/// The gadget model with its universe bookkeeping: the structure (with the
/// all-basepoints constant), the coordinate tuple of every element, and the
/// validated family data for coset lookups.
#[derive(Debug)]
pub struct RankGadget {
    pub structure: FiniteStructure,
    pub elements: Vec<Vec<usize>>,
    selected: Vec<usize>,
    basepoints: Vec<usize>,
    supports: Vec<Vec<usize>>,
    groups: Vec<Vec<Vec<u32>>>,
    orders: Vec<u32>,
    g: Vec<Perm>,
    displaced: Vec<usize>,
    n_coords: usize,
}

impl RankGadget {
    pub fn element_index(&self, coords: &[usize]) -> Option<usize> {
        self.elements.iter().position(|t| t == coords)
    }

    /// Index of the constant (the all-basepoints element).
    pub fn obar(&self) -> usize {
        self.structure.constants()[0]
    }

    pub fn family_count(&self) -> usize {
        self.supports.len()
    }

    /// Support of a family as coordinate numbers.
    pub fn family_support(&self, fam: usize) -> Vec<usize> {
        self.supports[fam].iter().map(|&p| self.selected[p]).collect()
    }

    /// Elements of the family's group, as exponent vectors over its support.
    pub fn family_group(&self, fam: usize) -> &[Vec<u32>] {
        &self.groups[fam]
    }

    /// The element `a + f_I` for an exponent vector `a` in family `fam`.
    pub fn coset_element(&self, fam: usize, a: &[u32]) -> Result<usize> {
        if fam >= self.supports.len() {
            return invalid("no such family");
        }
        let reduced: Vec<u32> = a
            .iter()
            .zip(self.supports[fam].iter().map(|&p| self.orders[p]))
            .map(|(&x, m)| x % m)
            .collect();
        if reduced.len() != self.supports[fam].len() {
            return invalid("exponent vector length must match the family support");
        }
        if !self.groups[fam].contains(&reduced) {
            return invalid("exponent vector is not in the family group");
        }
        let mut t = self.basepoints.clone();
        for (k, &pos) in self.supports[fam].iter().enumerate() {
            let mut x = self.displaced[pos];
            for _ in 0..reduced[k] {
                x = self.g[pos].apply(x);
            }
            t[self.selected[pos]] = x;
        }
        self.element_index(&t)
            .ok_or_else(|| Error::Invalid("coset element missing from the universe".into()))
    }

    /// The distinguished coset representative `f_I` of a family.
    pub fn f_element(&self, fam: usize) -> Result<usize> {
        let zeros = vec![0u32; self.supports.get(fam).map_or(0, |s| s.len())];
        self.coset_element(fam, &zeros)
    }

    /// Support of an element among the selected coordinates.
    pub fn support_of(&self, elem: usize) -> Vec<usize> {
        self.selected
            .iter()
            .copied()
            .filter(|&n| self.elements[elem][n] != self.basepoints[n])
            .collect()
    }

    pub fn coords(&self) -> usize {
        self.n_coords
    }
}

/// Build the gadget model: all truncation elements whose support pattern on
/// the selected coordinates is not one of the family supports, together
/// with the cosets `A_I + f_I`, plus the all-basepoints constant.
///
/// Elements whose selected support equals a family support but which do not
/// lie in the corresponding coset are excluded: at full scale those would
/// need infinite support without being coset members, so they do not exist
/// in the model this emulates.
pub fn build_rank_gadget(
    spec: &ProductSpec,
    gadget: &GadgetSpec,
    n_coords: usize,
    caps: &Caps,
) -> Result<RankGadget> {
    let v = validate_gadget(spec, gadget, n_coords, caps)?;
    let radii = spec.radii(n_coords);
    let volume = checked_volume(&radii, caps)?;
    let support_sets: Vec<BTreeSet<usize>> = v
        .supports
        .iter()
        .map(|s| s.iter().map(|&p| v.selected[p]).collect())
        .collect();
    let mut keep: BTreeSet<Vec<usize>> = BTreeSet::new();
    for idx in 0..volume {
        let t = mixed_radix_digits(idx, &radii);
        let supp: BTreeSet<usize> = v
            .selected
            .iter()
            .copied()
            .filter(|&n| t[n] != v.basepoints[n])
            .collect();
        if !support_sets.contains(&supp) {
            keep.insert(t);
        }
    }
    for fam in 0..v.supports.len() {
        for a in &v.groups[fam] {
            keep.insert(v.coset_tuple(fam, a));
        }
    }
    let (structure, elements) = assemble_product(
        spec,
        n_coords,
        Some(&keep),
        vec![("obar".to_string(), v.basepoints.clone())],
        caps,
    )?;
    Ok(RankGadget {
        structure,
        elements,
        selected: v.selected,
        basepoints: v.basepoints,
        supports: v.supports,
        groups: v.groups,
        orders: v.orders,
        g: v.g,
        displaced: v.displaced,
        n_coords,
    })
}

/// The inverse system carried by a gadget's family: indices are the family
/// members ordered by support inclusion, the ambient group is the product
/// of the selected cyclic groups, and maps are coordinate restrictions.
pub fn gadget_inverse_system(
    spec: &ProductSpec,
    gadget: &GadgetSpec,
    n_coords: usize,
    caps: &Caps,
) -> Result<InvSystem> {
    let v = validate_gadget(spec, gadget, n_coords, caps)?;
    if v.supports.is_empty() {
        return invalid("gadget has no families to rank");
    }
    let dim = v.selected.len();
    let ambient = AbGroup::new(v.orders.clone());
    let mut names = Vec::new();
    let mut supports = Vec::new();
    let mut gens = Vec::new();
    for fam in 0..v.supports.len() {
        let coords: Vec<String> = v.supports[fam]
            .iter()
            .map(|&p| v.selected[p].to_string())
            .collect();
        names.push(format!("I{{{}}}", coords.join(",")));
        supports.push(v.supports[fam].iter().copied().collect::<BTreeSet<usize>>());
        // Embed the family generators into the full selected coordinates.
        let mut embedded = Vec::new();
        for a in &v.groups[fam] {
            let mut g = vec![0u32; dim];
            for (k, &pos) in v.supports[fam].iter().enumerate() {
                g[pos] = a[k];
            }
            embedded.push(g);
        }
        gens.push(embedded);
    }
    let k = names.len();
    let mut le = vec![vec![false; k]; k];
    for p in 0..k {
        for q in 0..k {
            le[p][q] = supports[p].is_subset(&supports[q]);
        }
    }
    InvSystem::from_supports(names, le, &supports, &ambient, gens, caps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backforth::{bf_level, is_base, scott_rank};
    use crate::ordinal::Ordinal;
    use crate::posets::{build_truncated_model, benchmark_presentation, PElem, PosetPresentation};
    use crate::structures::{
        directed_cycle, equivalence_structure, isomorphic, orbit_partition, pure_set, qftp,
    };

    fn caps() -> Caps {
        Caps::default()
    }

    fn two_sets(n: usize) -> ProductSpec {
        ProductSpec::new(vec![], vec![pure_set(n)]).unwrap()
    }

    #[test]
    fn spec_validation_rejects_degenerate_factors() {
        assert!(ProductSpec::new(vec![pure_set(2)], vec![]).is_err());
        assert!(ProductSpec::new(vec![pure_set(1)], vec![pure_set(2)]).is_err());
        let with_const = FiniteStructure::new(
            Signature::new(vec![], vec!["c".into()]).unwrap(),
            2,
            vec![],
            vec![0],
        )
        .unwrap();
        assert!(ProductSpec::new(vec![], vec![with_const]).is_err());
    }

    #[test]
    fn two_pure_factors_match_the_antichain_box_model() {
        let product = build_truncated_product(&two_sets(2), 2, &caps()).unwrap();
        assert_eq!(product.universe(), 4);
        let poset = PosetPresentation::finite(
            vec!["a".into(), "b".into()],
            vec![],
            vec![2, 2],
        )
        .unwrap();
        let model = build_truncated_model(&poset, &[PElem::Fin(0), PElem::Fin(1)], &caps())
            .unwrap()
            .structure;
        let renamed = product
            .with_relation_decls(model.signature().relations.clone())
            .unwrap();
        assert!(isomorphic(&renamed, &model, &caps()).unwrap().is_some());
    }

    #[test]
    fn factor_relations_lift_coordinatewise() {
        let spec = ProductSpec::new(vec![directed_cycle(3)], vec![pure_set(2)]).unwrap();
        let m = build_truncated_product(&spec, 2, &caps()).unwrap();
        assert_eq!(m.universe(), 6);
        let s_at_0 = m.signature().relation_index("S@0").unwrap();
        let e0 = m.signature().relation_index("E_0").unwrap();
        let e1 = m.signature().relation_index("E_1").unwrap();
        let radii = [3usize, 2];
        for a in 0..6 {
            let ta = mixed_radix_digits(a, &radii);
            for b in 0..6 {
                let tb = mixed_radix_digits(b, &radii);
                assert_eq!(
                    m.holds(s_at_0, &[a, b]),
                    (ta[0] + 1) % 3 == tb[0],
                    "cycle lift at ({a},{b})"
                );
                assert_eq!(m.holds(e0, &[a, b]), ta[0] == tb[0]);
                assert_eq!(m.holds(e1, &[a, b]), ta[1] == tb[1]);
            }
        }
    }

    #[test]
    fn ladder_pair_factors_match_the_ladder_box_model() {
        let factor = equivalence_structure("R", &[2, 2]);
        let spec = ProductSpec::new(vec![], vec![factor]).unwrap();
        let product = build_truncated_product(&spec, 2, &caps()).unwrap();
        let ladder = benchmark_presentation(2);
        let q: Vec<PElem> = (0..2)
            .flat_map(|pos| {
                [
                    PElem::Tail { block: 0, pos, upper: false },
                    PElem::Tail { block: 0, pos, upper: true },
                ]
            })
            .collect();
        let model = build_truncated_model(&ladder, &q, &caps()).unwrap().structure;
        assert_eq!(product.universe(), model.universe());
        let renamed = product
            .with_relation_decls(model.signature().relations.clone())
            .unwrap();
        assert!(isomorphic(&renamed, &model, &caps()).unwrap().is_some());
    }

    #[test]
    fn istar_flags_nonfree_coordinates() {
        let free = istar(&two_sets(2), &caps()).unwrap();
        assert_eq!(free, IStar { prefix_nonfree: vec![], tail_free: true });
        let ternary = istar(&two_sets(3), &caps()).unwrap();
        assert!(!ternary.tail_free);
        let cycles = ProductSpec::new(
            vec![directed_cycle(3)],
            vec![directed_cycle(4)],
        )
        .unwrap();
        let c = istar(&cycles, &caps()).unwrap();
        assert_eq!(c, IStar { prefix_nonfree: vec![], tail_free: true });
        let mixed = ProductSpec::new(vec![pure_set(3)], vec![pure_set(2)]).unwrap();
        let m = istar(&mixed, &caps()).unwrap();
        assert_eq!(m, IStar { prefix_nonfree: vec![0], tail_free: true });
    }

    #[test]
    fn borel_verdict_follows_the_tail() {
        assert_eq!(borel_verdict(&two_sets(2), &caps()).unwrap(), BorelVerdict::Borel);
        assert_eq!(borel_verdict(&two_sets(3), &caps()).unwrap(), BorelVerdict::NonBorel);
        let cycles = ProductSpec::new(vec![], vec![directed_cycle(5)]).unwrap();
        assert_eq!(borel_verdict(&cycles, &caps()).unwrap(), BorelVerdict::Borel);
        let pairs = ProductSpec::new(vec![], vec![equivalence_structure("R", &[2, 2])]).unwrap();
        assert_eq!(borel_verdict(&pairs, &caps()).unwrap(), BorelVerdict::NonBorel);
    }

    #[test]
    fn constructed_base_covers_nonfree_coordinates_and_is_a_base() {
        let mixed = ProductSpec::new(vec![pure_set(3)], vec![pure_set(2)]).unwrap();
        let base = construct_base(&mixed, 2, &caps()).unwrap();
        assert_eq!(base.len(), 3);
        let m = build_truncated_product(&mixed, 2, &caps()).unwrap();
        let radii = [3usize, 2];
        let covered: BTreeSet<usize> =
            base.iter().map(|&e| mixed_radix_digits(e, &radii)[0]).collect();
        assert_eq!(covered.len(), 3);
        assert!(is_base(&m, &base, &caps()).unwrap());
        // Free everywhere: a single element is a base.
        let free = two_sets(2);
        let b = construct_base(&free, 2, &caps()).unwrap();
        assert_eq!(b.len(), 1);
        let mf = build_truncated_product(&free, 2, &caps()).unwrap();
        assert!(is_base(&mf, &b, &caps()).unwrap());
        // The empty tuple is not a base whenever a nontrivial automorphism exists.
        assert!(!is_base(&mf, &[], &caps()).unwrap());
    }

    #[test]
    fn nonfree_tail_admits_no_base_construction() {
        let err = construct_base(&two_sets(3), 2, &caps()).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    fn three_set_factor_gadget(families: Vec<GadgetGroup>) -> (ProductSpec, GadgetSpec) {
        let spec = two_sets(3);
        // In each 3-element factor: basepoint 0, swap (1 2), displaced 1.
        let factors = (0..2)
            .map(|coord| GadgetFactor {
                coord,
                basepoint: 0,
                g: Perm(vec![0, 2, 1]),
                displaced: 1,
            })
            .collect();
        (spec, GadgetSpec { factors, families })
    }

    #[test]
    fn gadget_validation_rejects_bad_actions() {
        let spec = two_sets(5);
        let base = |g: Perm, basepoint: usize, displaced: usize| GadgetSpec {
            factors: vec![GadgetFactor { coord: 0, basepoint, g, displaced }],
            families: vec![],
        };
        // Identity map.
        let id = base(Perm::identity(5), 0, 1);
        assert!(build_rank_gadget(&spec, &id, 1, &caps()).is_err());
        // Map not fixing the basepoint.
        let moving = base(Perm(vec![1, 0, 2, 3, 4]), 0, 2);
        assert!(build_rank_gadget(&spec, &moving, 1, &caps()).is_err());
        // Composite order: a 4-cycle fixing the basepoint.
        let four_cycle = base(Perm(vec![0, 2, 3, 4, 1]), 0, 1);
        assert!(build_rank_gadget(&spec, &four_cycle, 1, &caps()).is_err());
        // Displaced point fixed by the map.
        let fixed_d = base(Perm(vec![0, 1, 2, 4, 3]), 0, 1);
        assert!(build_rank_gadget(&spec, &fixed_d, 1, &caps()).is_err());
    }

    #[test]
    fn gadget_family_validation_rejects_undirected_or_uncovering_families() {
        // Two singleton supports with no common superset: not directed.
        let (spec, gadget) = three_set_factor_gadget(vec![
            GadgetGroup { support: vec![0], generators: vec![vec![1]] },
            GadgetGroup { support: vec![1], generators: vec![vec![1]] },
        ]);
        assert!(build_rank_gadget(&spec, &gadget, 2, &caps()).is_err());
        // A single support not covering both selected coordinates.
        let (spec, gadget) = three_set_factor_gadget(vec![GadgetGroup {
            support: vec![0],
            generators: vec![vec![1]],
        }]);
        assert!(build_rank_gadget(&spec, &gadget, 2, &caps()).is_err());
        // Restriction closure: the big group restricts outside the small one.
        let (spec, gadget) = three_set_factor_gadget(vec![
            GadgetGroup { support: vec![0], generators: vec![] },
            GadgetGroup { support: vec![0, 1], generators: vec![vec![1, 0]] },
        ]);
        assert!(build_rank_gadget(&spec, &gadget, 2, &caps()).is_err());
    }

    #[test]
    fn empty_family_gadget_is_the_full_truncation_with_qf_determined_orbits() {
        let (spec, gadget) = three_set_factor_gadget(vec![]);
        let g = build_rank_gadget(&spec, &gadget, 2, &caps()).unwrap();
        assert_eq!(g.structure.universe(), 9);
        assert_eq!(g.elements[g.obar()], vec![0, 0]);
        // Orbit analysis on a smaller instance: one selected ternary
        // coordinate next to a binary one. Orbits over the constant
        // coincide with quantifier-free types, and the refinement is
        // already stable at the start.
        let spec = ProductSpec::new(vec![pure_set(3)], vec![pure_set(2)]).unwrap();
        let gadget = GadgetSpec {
            factors: vec![GadgetFactor {
                coord: 0,
                basepoint: 0,
                g: Perm(vec![0, 2, 1]),
                displaced: 1,
            }],
            families: vec![],
        };
        let g = build_rank_gadget(&spec, &gadget, 2, &caps()).unwrap();
        assert_eq!(g.structure.universe(), 6);
        let orbits = orbit_partition(&g.structure, 1, &caps()).unwrap();
        let mut by_type: BTreeMap<_, BTreeSet<u32>> = BTreeMap::new();
        for x in 0..6usize {
            let t = qftp(&g.structure, &[x]).unwrap();
            by_type.entry(t).or_default().insert(orbits.class_of[x]);
        }
        for (_, classes) in by_type {
            assert_eq!(classes.len(), 1);
        }
        assert_eq!(scott_rank(&g.structure, &caps()).unwrap(), Ordinal::Fin(0));
    }

    #[test]
    fn gadget_universe_excludes_unrealized_support_patterns() {
        let (spec, gadget) = three_set_factor_gadget(vec![
            GadgetGroup { support: vec![0], generators: vec![vec![1]] },
            GadgetGroup { support: vec![0, 1], generators: vec![vec![1, 1]] },
        ]);
        let g = build_rank_gadget(&spec, &gadget, 2, &caps()).unwrap();
        // Plain part: supports {} and {1} survive (1 + 2 elements); the
        // full singleton coset realizes both support-{0} elements; the
        // diagonal coset keeps 2 of the 4 support-{0,1} elements.
        assert_eq!(g.structure.universe(), 7);
        assert!(g.element_index(&[1, 2]).is_none(), "anti-diagonal excluded");
        assert!(g.element_index(&[1, 1]).is_some());
        assert!(g.element_index(&[2, 2]).is_some());
        let f01 = g.f_element(1).unwrap();
        assert_eq!(g.elements[f01], vec![1, 1]);
        assert_eq!(g.support_of(f01), vec![0, 1]);
        // Exponent vectors outside the group are rejected.
        assert!(g.coset_element(1, &[1, 0]).is_err());
    }

    #[test]
    fn gadget_inverse_system_ranks_extendable_exponents_infinite() {
        let (spec, gadget) = three_set_factor_gadget(vec![
            GadgetGroup { support: vec![0], generators: vec![vec![1]] },
            GadgetGroup { support: vec![0, 1], generators: vec![vec![1, 1]] },
        ]);
        let sys = gadget_inverse_system(&spec, &gadget, 2, &caps()).unwrap();
        let p = sys.index_of("I{0}").unwrap();
        assert_eq!(sys.rank(p, &[1, 0]).unwrap(), Ordinal::Infty);
        assert_eq!(sys.rank(p, &[0, 0]).unwrap(), Ordinal::Infty);

        let (spec, gadget) = three_set_factor_gadget(vec![
            GadgetGroup { support: vec![0], generators: vec![vec![1]] },
            GadgetGroup { support: vec![0, 1], generators: vec![] },
        ]);
        let sys = gadget_inverse_system(&spec, &gadget, 2, &caps()).unwrap();
        let p = sys.index_of("I{0}").unwrap();
        assert_eq!(sys.rank(p, &[1, 0]).unwrap(), Ordinal::Fin(0));
        assert_eq!(sys.rank(p, &[0, 0]).unwrap(), Ordinal::Infty);
    }

    #[test]
    fn infinite_rank_exponents_give_back_and_forth_equivalence() {
        let (spec, gadget) = three_set_factor_gadget(vec![
            GadgetGroup { support: vec![0], generators: vec![vec![1]] },
            GadgetGroup { support: vec![0, 1], generators: vec![vec![1, 1]] },
        ]);
        let g = build_rank_gadget(&spec, &gadget, 2, &caps()).unwrap();
        let f0 = g.f_element(0).unwrap();
        let shifted = g.coset_element(0, &[1]).unwrap();
        // The exponent 1 extends diagonally, so the shifted coset element
        // is automorphic to the representative over the constant.
        let level = bf_level(&g.structure, &[f0], &g.structure, &[shifted], &caps()).unwrap();
        assert_eq!(level, Some(Ordinal::Infty));
    }

    #[test]
    fn finite_rank_exponents_are_separated_at_a_finite_level() {
        let (spec, gadget) = three_set_factor_gadget(vec![
            GadgetGroup { support: vec![0], generators: vec![vec![1]] },
            GadgetGroup { support: vec![0, 1], generators: vec![] },
        ]);
        let g = build_rank_gadget(&spec, &gadget, 2, &caps()).unwrap();
        let f0 = g.f_element(0).unwrap();
        let shifted = g.coset_element(0, &[1]).unwrap();
        let level = bf_level(&g.structure, &[f0], &g.structure, &[shifted], &caps()).unwrap();
        match level {
            Some(Ordinal::Fin(_)) | None => {}
            other => panic!("expected finite separation, got {other:?}"),
        }
    }
}
