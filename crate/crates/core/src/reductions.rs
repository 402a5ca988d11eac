//! Class-reduction maps between colored equivalence-relation models: the
//! sub-selection map (absorb extra coordinates, marking alien elements with
//! color zero), the class-count map (embed a small-count model into a
//! larger-count one), their decoders, and a harness that checks the maps
//! preserve and reflect isomorphism on finite windows.
//!
//! Models at this scale are full canonical box models over a finite window
//! of the poset, so the degrees of freedom live entirely in the coloring.
//! The "nonzero finitely often" side conditions of the infinite maps are
//! vacuous on a finite window; symbolic elements (finite exceptions over
//! eventually-constant tail templates) carry them honestly and tie the
//! window verdicts to the intended infinite ones.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{invalid, violation, Result};
use crate::posets::{box_model, build_truncated_model, FinitePoset, PElem, PosetPresentation, TailKind, TruncatedModel};
use crate::structures::{
    isomorphic, mixed_radix_digits, mixed_radix_index, FiniteStructure, RelDecl, Signature,
};
use crate::Caps;

/// A canonical box model together with a total coloring of its universe.
#[derive(Debug, Clone)]
pub struct ColoredModel {
    model: TruncatedModel,
    colors: Vec<u32>,
}

impl ColoredModel {
    pub fn new(model: TruncatedModel, colors: Vec<u32>) -> Result<ColoredModel> {
        if colors.len() != model.structure.universe() {
            return invalid(format!(
                "{} colors for a universe of {}",
                colors.len(),
                model.structure.universe()
            ));
        }
        Ok(ColoredModel { model, colors })
    }

    pub fn model(&self) -> &TruncatedModel {
        &self.model
    }

    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    pub fn max_color(&self) -> u32 {
        self.colors.iter().copied().max().unwrap_or(0)
    }

    /// The model with its coloring materialized as unary relations
    /// `c0..=c{max}`, so that plain isomorphism of the results is exactly
    /// color-preserving isomorphism.
    pub fn as_structure_with(&self, max_color: u32) -> Result<FiniteStructure> {
        if max_color < self.max_color() {
            return invalid("color bound below the model's largest color");
        }
        let mut decls = self.model.structure.signature().relations.clone();
        for k in 0..=max_color {
            decls.push(RelDecl::new(format!("c{k}"), 1));
        }
        let base_rels = self.model.structure.signature().relations.len();
        let sig = Signature::new(decls, vec![])?;
        let mut interp: Vec<BTreeSet<Vec<usize>>> = (0..base_rels)
            .map(|r| self.model.structure.interp(r).clone())
            .collect();
        interp.extend((0..=max_color).map(|k| {
            self.colors
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c == k)
                .map(|(x, _)| vec![x])
                .collect()
        }));
        FiniteStructure::new(sig, self.model.structure.universe(), interp, vec![])
    }
}

/// Color-preserving isomorphism of two colored models, decided by the
/// exhaustive structure-isomorphism search on the color-expanded models.
pub fn colored_isomorphic(a: &ColoredModel, b: &ColoredModel, caps: &Caps) -> Result<bool> {
    let k = a.max_color().max(b.max_color());
    let sa = a.as_structure_with(k)?;
    let sb = b.as_structure_with(k)?;
    Ok(isomorphic(&sa, &sb, caps)?.is_some())
}

/// Extends the downward closure of `q_sel` to a window with at least
/// `margin` complement coordinates: closure elements outside `q_sel` count
/// first, then remaining finite-part elements, then tail positions in
/// canonical order, each pulled in with its downward closure (which may
/// overshoot the requested count).
pub fn margin_selection(
    p: &PosetPresentation,
    q_sel: &[PElem],
    margin: usize,
) -> Result<Vec<PElem>> {
    let q_set: BTreeSet<PElem> = q_sel.iter().copied().collect();
    let mut sel: BTreeSet<PElem> = BTreeSet::new();
    for &x in &q_set {
        sel.extend(p.downset(x));
    }
    let mut fresh = sel.len() - q_set.len();
    let add = |sel: &mut BTreeSet<PElem>, x: PElem, fresh: &mut usize| {
        for below in p.downset(x) {
            if sel.insert(below) {
                *fresh += 1;
            }
        }
    };
    for i in 0..p.finite_len() {
        if fresh >= margin {
            break;
        }
        add(&mut sel, PElem::Fin(i), &mut fresh);
    }
    let ladder = |b: usize| matches!(p.tails()[b].kind, TailKind::Ladder(_));
    let mut pos = 0usize;
    while fresh < margin {
        let mut progressed = false;
        for b in 0..p.tails().len() {
            for upper in [false, true] {
                if upper && !ladder(b) {
                    continue;
                }
                if fresh >= margin {
                    break;
                }
                add(&mut sel, PElem::Tail { block: b, pos, upper }, &mut fresh);
                progressed = true;
            }
        }
        if !progressed {
            return invalid(format!(
                "cannot find {margin} complement coordinates: the poset has no tail blocks left"
            ));
        }
        pos += 1;
    }
    Ok(sel.into_iter().collect())
}

fn radii_of(poset: &FinitePoset) -> Vec<usize> {
    poset.delta.iter().map(|&d| d as usize).collect()
}

/// The sub-selection reduction: a colored model over the coordinates
/// `q_sel` becomes one over the larger window `p_sel`, with an element
/// colored zero exactly when it is nonzero somewhere outside `q_sel`, and
/// otherwise inheriting its restriction's color plus one.
///
/// `q_sel` need not be downward closed in the ambient poset; `p_sel` must
/// be, and must contain it. The input model's poset must match the order
/// and class counts induced on `q_sel` (taken in canonical element order);
/// its names may differ, and the output follows the ambient names.
pub fn reduce_subposet(
    cm: &ColoredModel,
    p: &PosetPresentation,
    q_sel: &[PElem],
    p_sel: &[PElem],
    caps: &Caps,
) -> Result<ColoredModel> {
    let target = build_truncated_model(p, p_sel, caps)?;
    let mut q_sorted = q_sel.to_vec();
    q_sorted.sort();
    q_sorted.dedup();
    if q_sorted.len() != q_sel.len() {
        return invalid("sub-selection repeats elements");
    }
    let q_pos: Vec<usize> = q_sorted
        .iter()
        .map(|x| {
            target
                .elems
                .iter()
                .position(|y| y == x)
                .ok_or_else(|| {
                    crate::Error::Invalid(format!(
                        "sub-selection element {} is not in the window",
                        p.elem_name(*x)
                    ))
                })
        })
        .collect::<Result<_>>()?;
    let qp = &cm.model.poset;
    if qp.len() != q_pos.len() {
        return invalid(format!(
            "input model has {} coordinates but the sub-selection has {}",
            qp.len(),
            q_pos.len()
        ));
    }
    for i in 0..q_pos.len() {
        if qp.delta[i] != target.poset.delta[q_pos[i]] {
            return invalid(format!(
                "class count mismatch at sub-selection coordinate {i}"
            ));
        }
        for j in 0..q_pos.len() {
            if qp.le[i][j] != target.poset.le[q_pos[i]][q_pos[j]] {
                return invalid(format!(
                    "order mismatch between sub-selection coordinates {i} and {j}"
                ));
            }
        }
    }
    let radii = radii_of(&target.poset);
    let q_radii = radii_of(qp);
    let universe = target.structure.universe();
    let in_q = {
        let mut mask = vec![false; target.elems.len()];
        for &i in &q_pos {
            mask[i] = true;
        }
        mask
    };
    let mut colors = Vec::with_capacity(universe);
    for x in 0..universe {
        let digits = mixed_radix_digits(x, &radii);
        let outside_zero = (0..digits.len()).all(|i| in_q[i] || digits[i] == 0);
        if outside_zero {
            let q_digits: Vec<usize> = q_pos.iter().map(|&i| digits[i]).collect();
            colors.push(cm.colors[mixed_radix_index(&q_digits, &q_radii)] + 1);
        } else {
            colors.push(0);
        }
    }
    ColoredModel::new(target, colors)
}

/// Inverts `reduce_subposet` from the image alone: the nonzero-colored
/// elements, with one subtracted from their colors, restricted to the
/// coordinates on which they are not all zero.
pub fn decode_subposet(cm: &ColoredModel, caps: &Caps) -> Result<ColoredModel> {
    let universe = cm.model.structure.universe();
    let radii = radii_of(&cm.model.poset);
    let members: Vec<usize> = (0..universe).filter(|&x| cm.colors[x] != 0).collect();
    if members.is_empty() {
        return invalid("nothing to decode: no element has a nonzero color");
    }
    let digits: Vec<Vec<usize>> = (0..universe)
        .map(|x| mixed_radix_digits(x, &radii))
        .collect();
    let n = radii.len();
    let q_pos: Vec<usize> = (0..n)
        .filter(|&i| members.iter().any(|&x| digits[x][i] != 0))
        .collect();
    // Image-shapedness: the nonzero-colored elements must be exactly the
    // ones vanishing outside the recovered coordinates.
    for x in 0..universe {
        let outside_zero = (0..n).all(|i| q_pos.contains(&i) || digits[x][i] == 0);
        if outside_zero != (cm.colors[x] != 0) {
            return violation(format!(
                "colors are not image-shaped: element {x} breaks the zero-outside rule"
            ));
        }
    }
    let poset = FinitePoset {
        names: q_pos.iter().map(|&i| cm.model.poset.names[i].clone()).collect(),
        le: q_pos
            .iter()
            .map(|&i| q_pos.iter().map(|&j| cm.model.poset.le[i][j]).collect())
            .collect(),
        delta: q_pos.iter().map(|&i| cm.model.poset.delta[i]).collect(),
    };
    let elems: Vec<PElem> = q_pos.iter().map(|&i| cm.model.elems[i]).collect();
    let q_radii = radii_of(&poset);
    let decoded = box_model(poset, elems, caps)?;
    let mut colors = vec![0u32; decoded.structure.universe()];
    for &x in &members {
        let q_digits: Vec<usize> = q_pos.iter().map(|&i| digits[x][i]).collect();
        colors[mixed_radix_index(&q_digits, &q_radii)] = cm.colors[x] - 1;
    }
    ColoredModel::new(decoded, colors)
}

/// All finite intersections of complements of principal up-sets, with the
/// whole poset as the empty intersection. On a finite poset this family is
/// exactly the downward-closed sets; it is materialized from the
/// generators anyway so the map below can do its case analysis honestly.
pub fn intersection_family(poset: &FinitePoset) -> BTreeSet<Vec<usize>> {
    let n = poset.len();
    let mut fam: BTreeSet<Vec<usize>> = BTreeSet::new();
    fam.insert((0..n).collect());
    let gens: Vec<Vec<usize>> = (0..n)
        .map(|p| (0..n).filter(|&x| !poset.le[p][x]).collect())
        .collect();
    fam.extend(gens.iter().cloned());
    loop {
        let mut fresh: Vec<Vec<usize>> = Vec::new();
        for a in &fam {
            for g in &gens {
                let meet: Vec<usize> = a.iter().copied().filter(|x| g.contains(x)).collect();
                if !fam.contains(&meet) {
                    fresh.push(meet);
                }
            }
        }
        if fresh.is_empty() {
            return fam;
        }
        fam.extend(fresh);
    }
}

/// The class-count reduction: a colored model with counts δ′ becomes one
/// over the same window with pointwise larger counts δ. An element whose
/// below-δ′ region is the whole window keeps its color plus one; every
/// other element is colored zero, after the honest case analysis on the
/// intersection family.
pub fn reduce_delta(
    cm: &ColoredModel,
    p: &PosetPresentation,
    p_sel: &[PElem],
    caps: &Caps,
) -> Result<ColoredModel> {
    let target = build_truncated_model(p, p_sel, caps)?;
    let small = &cm.model.poset;
    let n = target.poset.len();
    if small.len() != n {
        return invalid(format!(
            "input model has {} coordinates but the window has {n}",
            small.len()
        ));
    }
    for i in 0..n {
        if small.delta[i] > target.poset.delta[i] {
            return invalid(format!(
                "class count at coordinate {i} exceeds the target's"
            ));
        }
        if small.le[i] != target.poset.le[i] {
            return invalid(format!("order mismatch at coordinate {i}"));
        }
    }
    let fam = intersection_family(&target.poset);
    let radii = radii_of(&target.poset);
    let small_radii = radii_of(small);
    let universe = target.structure.universe();
    let mut colors = Vec::with_capacity(universe);
    for x in 0..universe {
        let digits = mixed_radix_digits(x, &radii);
        // The region where the function stays below the smaller counts,
        // hereditarily: every coordinate at or below which it does.
        let region: Vec<usize> = (0..n)
            .filter(|&i| {
                (0..n).all(|j| !target.poset.le[j][i] || digits[j] < small_radii[j])
            })
            .collect();
        if !fam.contains(&region) {
            return violation(format!(
                "below-count region of element {x} escapes the intersection family"
            ));
        }
        // Membership: the region is in the family, the restriction to it
        // extends to the (full-box) input model, and the rest is finitely
        // supported — the latter two are automatic on a finite window.
        debug_assert!(region.iter().all(|&i| digits[i] < small_radii[i]));
        if region.len() == n {
            colors.push(cm.colors[mixed_radix_index(&digits, &small_radii)] + 1);
        } else {
            colors.push(0);
        }
    }
    ColoredModel::new(target, colors)
}

/// Inverts `reduce_delta` from the image alone: the nonzero-colored
/// elements, with one subtracted from their colors, under the class counts
/// they actually attain.
pub fn decode_delta(cm: &ColoredModel, caps: &Caps) -> Result<ColoredModel> {
    let universe = cm.model.structure.universe();
    let radii = radii_of(&cm.model.poset);
    let members: Vec<usize> = (0..universe).filter(|&x| cm.colors[x] != 0).collect();
    if members.is_empty() {
        return invalid("nothing to decode: no element has a nonzero color");
    }
    let digits: Vec<Vec<usize>> = (0..universe)
        .map(|x| mixed_radix_digits(x, &radii))
        .collect();
    let n = radii.len();
    let small_radii: Vec<usize> = (0..n)
        .map(|i| members.iter().map(|&x| digits[x][i]).max().unwrap() + 1)
        .collect();
    if small_radii.iter().any(|&r| r < 2) {
        return violation("decoded class count below two");
    }
    let expected: usize = small_radii.iter().product();
    let in_box = |x: usize| (0..n).all(|i| digits[x][i] < small_radii[i]);
    if members.len() != expected || !members.iter().all(|&x| in_box(x)) {
        return violation("colors are not image-shaped: nonzero colors do not fill a box");
    }
    let poset = FinitePoset {
        names: cm.model.poset.names.clone(),
        le: cm.model.poset.le.clone(),
        delta: small_radii.iter().map(|&r| r as u32).collect(),
    };
    let decoded = box_model(poset, cm.model.elems.clone(), caps)?;
    let mut colors = vec![0u32; decoded.structure.universe()];
    for &x in &members {
        colors[mixed_radix_index(&digits[x], &small_radii)] = cm.colors[x] - 1;
    }
    ColoredModel::new(decoded, colors)
}

/// One disagreement found by the harness: the isomorphism verdicts before
/// and after applying the map differ on this input pair.
#[derive(Debug, Clone, Serialize)]
pub struct HarnessCounterexample {
    pub index: usize,
    pub before: bool,
    pub after: bool,
}

/// Outcome of an isomorphism-preservation sweep.
#[derive(Debug, Clone, Serialize)]
pub struct HarnessReport {
    pub pairs: usize,
    /// Pairs on which isomorphic inputs stayed isomorphic (vacuously
    /// counting non-isomorphic inputs).
    pub preserved: usize,
    /// Pairs on which isomorphic outputs came from isomorphic inputs
    /// (vacuously counting non-isomorphic outputs).
    pub reflected: usize,
    pub counterexamples: Vec<HarnessCounterexample>,
}

impl HarnessReport {
    pub fn clean(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Checks, pair by pair, that a reduction map preserves and reflects
/// color-preserving isomorphism, by brute-force isomorphism search on both
/// sides.
pub fn iso_harness<F>(
    op: F,
    pairs: &[(ColoredModel, ColoredModel)],
    caps: &Caps,
) -> Result<HarnessReport>
where
    F: Fn(&ColoredModel) -> Result<ColoredModel>,
{
    let mut report = HarnessReport {
        pairs: pairs.len(),
        preserved: 0,
        reflected: 0,
        counterexamples: Vec::new(),
    };
    for (index, (a, b)) in pairs.iter().enumerate() {
        let before = colored_isomorphic(a, b, caps)?;
        let after = colored_isomorphic(&op(a)?, &op(b)?, caps)?;
        if !before || after {
            report.preserved += 1;
        }
        if !after || before {
            report.reflected += 1;
        }
        if before != after {
            report.counterexamples.push(HarnessCounterexample { index, before, after });
        }
    }
    Ok(report)
}

/// An element of the full infinite model over a presentation, stored as
/// finite-part values, one template value per tail block, and finitely
/// many tail exceptions. Exceptions equal to their template are dropped,
/// so equality of representations is equality of functions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolicElement {
    finite_values: Vec<u32>,
    templates: Vec<u32>,
    exceptions: BTreeMap<PElem, u32>,
}

impl SymbolicElement {
    pub fn new(
        p: &PosetPresentation,
        finite_values: Vec<u32>,
        templates: Vec<u32>,
        exceptions: BTreeMap<PElem, u32>,
    ) -> Result<SymbolicElement> {
        if finite_values.len() != p.finite_len() {
            return invalid(format!(
                "{} finite values for {} finite elements",
                finite_values.len(),
                p.finite_len()
            ));
        }
        if templates.len() != p.tails().len() {
            return invalid(format!(
                "{} templates for {} tail blocks",
                templates.len(),
                p.tails().len()
            ));
        }
        for (i, &v) in finite_values.iter().enumerate() {
            if v >= p.delta(PElem::Fin(i)) {
                return invalid(format!("finite value {v} at element {i} exceeds its class count"));
            }
        }
        for (b, &t) in templates.iter().enumerate() {
            if t >= p.tails()[b].delta {
                return invalid(format!("template {t} at block {b} exceeds its class count"));
            }
        }
        let mut kept = BTreeMap::new();
        for (&key, &v) in &exceptions {
            let PElem::Tail { block, upper, .. } = key else {
                return invalid("exceptions may only sit on tail positions");
            };
            if block >= p.tails().len() {
                return invalid(format!("exception on unknown block {block}"));
            }
            if upper && !matches!(p.tails()[block].kind, TailKind::Ladder(_)) {
                return invalid("upper rungs exist only in ladder blocks");
            }
            if v >= p.tails()[block].delta {
                return invalid(format!("exception value {v} exceeds block {block}'s class count"));
            }
            if v != templates[block] {
                kept.insert(key, v);
            }
        }
        Ok(SymbolicElement { finite_values, templates, exceptions: kept })
    }

    /// The constant-template element, zero everywhere by default.
    pub fn constant(p: &PosetPresentation, finite: u32, template: u32) -> Result<SymbolicElement> {
        SymbolicElement::new(
            p,
            vec![finite; p.finite_len()],
            vec![template; p.tails().len()],
            BTreeMap::new(),
        )
    }

    pub fn value(&self, x: PElem) -> u32 {
        match x {
            PElem::Fin(i) => self.finite_values[i],
            PElem::Tail { block, .. } => {
                self.exceptions.get(&x).copied().unwrap_or(self.templates[block])
            }
        }
    }

    pub fn exceptions(&self) -> &BTreeMap<PElem, u32> {
        &self.exceptions
    }

    pub fn templates(&self) -> &[u32] {
        &self.templates
    }

    /// Is the element nonzero at only finitely many positions? Each tail
    /// block has infinitely many, so this is exactly "every template is
    /// zero".
    pub fn nonzero_finitely_often(&self) -> bool {
        self.templates.iter().all(|&t| t == 0)
    }

    /// Does the element vanish everywhere outside the given coordinates?
    /// (The stronger condition that makes a reduced element keep a nonzero
    /// color.)
    pub fn is_zero_outside(&self, q_sel: &[PElem]) -> bool {
        self.templates.iter().all(|&t| t == 0)
            && self
                .finite_values
                .iter()
                .enumerate()
                .all(|(i, &v)| v == 0 || q_sel.contains(&PElem::Fin(i)))
            && self
                .exceptions
                .iter()
                .all(|(x, &v)| v == 0 || q_sel.contains(x))
    }

    /// The element over the sub-presentation keeping the listed finite
    /// elements and tail blocks, reindexed accordingly. Exceptions on
    /// dropped blocks are discarded.
    pub fn restrict(&self, keep_finite: &[usize], keep_blocks: &[usize]) -> Result<SymbolicElement> {
        let finite_values = keep_finite
            .iter()
            .map(|&i| {
                self.finite_values
                    .get(i)
                    .copied()
                    .ok_or_else(|| crate::Error::Invalid(format!("no finite element {i}")))
            })
            .collect::<Result<_>>()?;
        let templates = keep_blocks
            .iter()
            .map(|&b| {
                self.templates
                    .get(b)
                    .copied()
                    .ok_or_else(|| crate::Error::Invalid(format!("no tail block {b}")))
            })
            .collect::<Result<Vec<u32>>>()?;
        let mut exceptions = BTreeMap::new();
        for (&key, &v) in &self.exceptions {
            let PElem::Tail { block, pos, upper } = key else { unreachable!() };
            if let Some(nb) = keep_blocks.iter().position(|&b| b == block) {
                exceptions.insert(PElem::Tail { block: nb, pos, upper }, v);
            }
        }
        Ok(SymbolicElement { finite_values, templates, exceptions })
    }

    /// The element's index in a finite window's box model: its values at
    /// the window coordinates, mixed-radix encoded most significant first.
    pub fn truncated_index(&self, tm: &TruncatedModel) -> Result<usize> {
        let radii = radii_of(&tm.poset);
        let digits: Vec<usize> = tm
            .elems
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let v = self.value(x) as usize;
                if v >= radii[i] {
                    return invalid(format!(
                        "value {v} at {} exceeds the window's class count",
                        tm.poset.names[i]
                    ));
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;
        Ok(mixed_radix_index(&digits, &radii))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posets::TailBlock;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn caps() -> Caps {
        Caps::default()
    }

    /// One finite point "q" with two classes, plus an antichain of binary
    /// points above nothing.
    fn point_plus_antichain() -> PosetPresentation {
        PosetPresentation::new(
            vec!["q".into()],
            vec![],
            vec![2],
            vec![TailBlock { kind: TailKind::Antichain, delta: 2, above: vec![] }],
        )
        .unwrap()
    }

    fn colored(p: &PosetPresentation, sel: &[PElem], colors: Vec<u32>) -> ColoredModel {
        let tm = build_truncated_model(p, sel, &caps()).unwrap();
        ColoredModel::new(tm, colors).unwrap()
    }

    #[test]
    fn whole_poset_reduction_just_bumps_colors() {
        let p = PosetPresentation::new(
            vec!["a".into(), "b".into()],
            vec![(0, 1)],
            vec![2, 2],
            vec![],
        )
        .unwrap();
        let sel = vec![PElem::Fin(0), PElem::Fin(1)];
        let cm = colored(&p, &sel, vec![0, 3, 1, 2]);
        let out = reduce_subposet(&cm, &p, &sel, &sel, &caps()).unwrap();
        assert_eq!(out.colors(), &[1, 4, 2, 3]);
        assert_eq!(out.model().structure, cm.model().structure);
        // And decoding gives back exactly the input.
        let back = decode_subposet(&out, &caps()).unwrap();
        assert_eq!(back.colors(), cm.colors());
        assert_eq!(back.model().structure, cm.model().structure);
    }

    #[test]
    fn one_extra_antichain_point_doubles_the_model() {
        let p = point_plus_antichain();
        let q_sel = vec![PElem::Fin(0)];
        let p_sel = margin_selection(&p, &q_sel, 1).unwrap();
        assert_eq!(
            p_sel,
            vec![PElem::Fin(0), PElem::Tail { block: 0, pos: 0, upper: false }]
        );
        let cm = colored(&p, &q_sel, vec![5, 7]);
        let out = reduce_subposet(&cm, &p, &q_sel, &p_sel, &caps()).unwrap();
        assert_eq!(out.model().structure.universe(), 4);
        // Elements vanishing on the complement keep their color plus one;
        // the rest are marked zero — exactly half here.
        assert_eq!(out.colors(), &[6, 0, 8, 0]);
        let zeros = out.colors().iter().filter(|&&c| c == 0).count();
        assert_eq!(zeros * 2, out.colors().len());
    }

    #[test]
    fn color_zero_marks_exactly_the_nonzero_complement_part() {
        let p = point_plus_antichain();
        let q_sel = vec![PElem::Fin(0)];
        let p_sel = margin_selection(&p, &q_sel, 2).unwrap();
        let cm = colored(&p, &q_sel, vec![0, 2]);
        let out = reduce_subposet(&cm, &p, &q_sel, &p_sel, &caps()).unwrap();
        let radii = vec![2usize, 2, 2];
        for x in 0..out.model().structure.universe() {
            let digits = mixed_radix_digits(x, &radii);
            let complement_zero = digits[1] == 0 && digits[2] == 0;
            assert_eq!(out.colors()[x] != 0, complement_zero, "element {x}");
        }
    }

    #[test]
    fn non_downward_closed_subselection_round_trips() {
        // Q is the top of a two-chain: not downward closed in P, so the
        // window must pull in the bottom as a complement coordinate.
        let p = PosetPresentation::new(
            vec!["a".into(), "b".into()],
            vec![(0, 1)],
            vec![2, 2],
            vec![],
        )
        .unwrap();
        let q_sel = vec![PElem::Fin(1)];
        let p_sel = margin_selection(&p, &q_sel, 1).unwrap();
        assert_eq!(p_sel, vec![PElem::Fin(0), PElem::Fin(1)]);
        // The input model lives over a standalone one-point poset that
        // matches the induced order; reusing the name lines the
        // signatures up for the oracle.
        let q = PosetPresentation::new(vec!["b".into()], vec![], vec![2], vec![]).unwrap();
        let cm = colored(&q, &[PElem::Fin(0)], vec![4, 9]);
        let out = reduce_subposet(&cm, &p, &q_sel, &p_sel, &caps()).unwrap();
        // Digit order is (a, b); color survives only where a = 0.
        assert_eq!(out.colors(), &[5, 10, 0, 0]);
        let back = decode_subposet(&out, &caps()).unwrap();
        assert_eq!(back.colors(), cm.colors());
        assert!(colored_isomorphic(&back, &cm, &caps()).unwrap());
    }

    #[test]
    fn decode_recovers_random_colorings_up_to_isomorphism() {
        let p = point_plus_antichain();
        let q_sel = vec![PElem::Fin(0)];
        let p_sel = margin_selection(&p, &q_sel, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..10 {
            let colors: Vec<u32> = (0..2).map(|_| rng.random_range(0..4u32)).collect();
            let cm = colored(&p, &q_sel, colors);
            let out = reduce_subposet(&cm, &p, &q_sel, &p_sel, &caps()).unwrap();
            let back = decode_subposet(&out, &caps()).unwrap();
            assert_eq!(back.colors(), cm.colors());
            assert!(colored_isomorphic(&back, &cm, &caps()).unwrap());
        }
    }

    #[test]
    fn subposet_reduction_preserves_and_reflects_isomorphism_exhaustively() {
        let p = point_plus_antichain();
        let q_sel = vec![PElem::Fin(0)];
        let p_sel = margin_selection(&p, &q_sel, 2).unwrap();
        // Every coloring of the two-element input model with colors < 2.
        let models: Vec<ColoredModel> = (0..4u32)
            .map(|bits| colored(&p, &q_sel, vec![bits & 1, (bits >> 1) & 1]))
            .collect();
        let mut pairs = Vec::new();
        for i in 0..models.len() {
            for j in i..models.len() {
                pairs.push((models[i].clone(), models[j].clone()));
            }
        }
        let report = iso_harness(
            |cm| reduce_subposet(cm, &p, &q_sel, &p_sel, &caps()),
            &pairs,
            &caps(),
        )
        .unwrap();
        assert!(report.clean(), "{:?}", report.counterexamples);
        assert_eq!(report.pairs, 10);
        assert_eq!(report.preserved, 10);
        assert_eq!(report.reflected, 10);
        // The report serializes for the command-line front end.
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"counterexamples\":[]"));
    }

    #[test]
    fn margin_growth_keeps_isomorphism_verdicts_stable() {
        let p = point_plus_antichain();
        let q_sel = vec![PElem::Fin(0)];
        let iso_pair = (colored(&p, &q_sel, vec![0, 1]), colored(&p, &q_sel, vec![1, 0]));
        let non_iso_pair = (colored(&p, &q_sel, vec![0, 0]), colored(&p, &q_sel, vec![0, 1]));
        for margin in 1..=3 {
            let p_sel = margin_selection(&p, &q_sel, margin).unwrap();
            let f = |cm: &ColoredModel| reduce_subposet(cm, &p, &q_sel, &p_sel, &caps());
            assert!(
                colored_isomorphic(&f(&iso_pair.0).unwrap(), &f(&iso_pair.1).unwrap(), &caps())
                    .unwrap(),
                "margin {margin}"
            );
            assert!(
                !colored_isomorphic(
                    &f(&non_iso_pair.0).unwrap(),
                    &f(&non_iso_pair.1).unwrap(),
                    &caps()
                )
                .unwrap(),
                "margin {margin}"
            );
        }
    }

    #[test]
    fn equal_counts_reduction_is_the_color_bump() {
        let p = PosetPresentation::new(vec!["x".into()], vec![], vec![3], vec![]).unwrap();
        let sel = vec![PElem::Fin(0)];
        let cm = colored(&p, &sel, vec![2, 0, 1]);
        let out = reduce_delta(&cm, &p, &sel, &caps()).unwrap();
        assert_eq!(out.colors(), &[3, 1, 2]);
        assert_eq!(out.model().structure, cm.model().structure);
    }

    #[test]
    fn growing_one_count_adds_a_zero_colored_class() {
        let big = PosetPresentation::new(vec!["x".into()], vec![], vec![3], vec![]).unwrap();
        let small = PosetPresentation::new(vec!["x".into()], vec![], vec![2], vec![]).unwrap();
        let sel = vec![PElem::Fin(0)];
        let cm = colored(&small, &sel, vec![0, 4]);
        let out = reduce_delta(&cm, &big, &sel, &caps()).unwrap();
        assert_eq!(out.model().structure.universe(), 3);
        assert_eq!(out.colors(), &[1, 5, 0]);
        let back = decode_delta(&out, &caps()).unwrap();
        assert_eq!(back.colors(), cm.colors());
        assert_eq!(back.model().structure, cm.model().structure);
    }

    #[test]
    fn count_reduction_preserves_and_reflects_isomorphism_exhaustively() {
        let big = PosetPresentation::new(vec!["x".into()], vec![], vec![3], vec![]).unwrap();
        let small = PosetPresentation::new(vec!["x".into()], vec![], vec![2], vec![]).unwrap();
        let sel = vec![PElem::Fin(0)];
        let models: Vec<ColoredModel> = (0..9u32)
            .map(|k| colored(&small, &sel, vec![k % 3, k / 3]))
            .collect();
        let mut pairs = Vec::new();
        for i in 0..models.len() {
            for j in i..models.len() {
                pairs.push((models[i].clone(), models[j].clone()));
            }
        }
        let report = iso_harness(
            |cm| reduce_delta(cm, &big, &sel, &caps()),
            &pairs,
            &caps(),
        )
        .unwrap();
        assert!(report.clean(), "{:?}", report.counterexamples);
        assert_eq!(report.pairs, 45);
    }

    #[test]
    fn intersection_family_is_exactly_the_downward_closed_sets() {
        for (names, le_pairs, delta) in [
            (vec!["a", "b", "c"], vec![(0usize, 1usize)], vec![2u32, 2, 3]),
            (vec!["a", "b", "c"], vec![(0, 1), (0, 2)], vec![2, 2, 2]),
            (vec!["a", "b"], vec![], vec![2, 3]),
        ] {
            let p = PosetPresentation::new(
                names.iter().map(|s| s.to_string()).collect(),
                le_pairs,
                delta,
                vec![],
            )
            .unwrap();
            let sel: Vec<PElem> = (0..names.len()).map(PElem::Fin).collect();
            let tm = build_truncated_model(&p, &sel, &caps()).unwrap();
            let fam = intersection_family(&tm.poset);
            let down: BTreeSet<Vec<usize>> =
                tm.poset.downward_closed_subsets().into_iter().collect();
            assert_eq!(fam, down);
        }
    }

    #[test]
    fn validation_rejects_malformed_inputs() {
        let p = point_plus_antichain();
        let q_sel = vec![PElem::Fin(0)];
        let p_sel = margin_selection(&p, &q_sel, 1).unwrap();
        let cm = colored(&p, &q_sel, vec![0, 1]);
        // Sub-selection element outside the window.
        let stray = vec![PElem::Tail { block: 0, pos: 5, upper: false }];
        assert!(reduce_subposet(&cm, &p, &stray, &p_sel, &caps()).is_err());
        // Wrong color count.
        let tm = build_truncated_model(&p, &q_sel, &caps()).unwrap();
        assert!(ColoredModel::new(tm, vec![0]).is_err());
        // Input poset shape that does not match the induced order.
        let chain = PosetPresentation::new(
            vec!["a".into(), "b".into()],
            vec![(0, 1)],
            vec![2, 2],
            vec![],
        )
        .unwrap();
        let chain_sel = vec![PElem::Fin(0), PElem::Fin(1)];
        let chain_cm = colored(&chain, &chain_sel, vec![0; 4]);
        let two = margin_selection(&p, &q_sel, 1).unwrap();
        assert!(reduce_subposet(&chain_cm, &p, &two, &two, &caps()).is_err());
        // Nothing to decode.
        let dead = colored(&p, &q_sel, vec![0, 0]);
        assert!(decode_subposet(&dead, &caps()).is_err());
        assert!(decode_delta(&dead, &caps()).is_err());
        // Class counts running the wrong way.
        let big = PosetPresentation::new(vec!["q".into()], vec![], vec![4], vec![]).unwrap();
        let big_cm = colored(&big, &q_sel, vec![0, 1, 2, 3]);
        assert!(reduce_delta(&big_cm, &p, &q_sel, &caps()).is_err());
        // No room for a margin without tail blocks.
        let bare = PosetPresentation::new(vec!["x".into()], vec![], vec![2], vec![]).unwrap();
        assert!(margin_selection(&bare, &[PElem::Fin(0)], 1).is_err());
    }

    fn exception_presentation() -> PosetPresentation {
        PosetPresentation::new(
            vec!["a".into()],
            vec![],
            vec![3],
            vec![
                TailBlock { kind: TailKind::Antichain, delta: 2, above: vec![0] },
                TailBlock { kind: TailKind::Chain, delta: 2, above: vec![] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn symbolic_elements_normalize_and_evaluate() {
        let p = exception_presentation();
        let t = |block, pos| PElem::Tail { block, pos, upper: false };
        let mut exc = BTreeMap::new();
        exc.insert(t(0, 3), 1); // differs from template 0: kept
        exc.insert(t(1, 0), 1); // equals template 1: dropped
        exc.insert(t(1, 1), 0); // differs from template 1: kept
        let f = SymbolicElement::new(&p, vec![2], vec![0, 1], exc).unwrap();
        assert_eq!(f.exceptions().len(), 2);
        assert_eq!(f.value(PElem::Fin(0)), 2);
        assert_eq!(f.value(t(0, 3)), 1);
        assert_eq!(f.value(t(0, 4)), 0);
        assert_eq!(f.value(t(1, 0)), 1);
        assert_eq!(f.value(t(1, 1)), 0);
        // A nonzero template means infinitely many nonzero positions.
        assert!(!f.nonzero_finitely_often());
        let g = SymbolicElement::new(&p, vec![1], vec![0, 0], BTreeMap::new()).unwrap();
        assert!(g.nonzero_finitely_often());
        assert!(!g.is_zero_outside(&[]));
        assert!(g.is_zero_outside(&[PElem::Fin(0)]));
        // Window evaluation agrees with the mixed-radix encoding.
        let window = build_truncated_model(&p, &[PElem::Fin(0), t(0, 0), t(0, 3)], &caps()).unwrap();
        assert_eq!(f.truncated_index(&window).unwrap(), (2 * 2 + 0) * 2 + 1);
        // Restriction drops the chain block and reindexes nothing else.
        let r = f.restrict(&[0], &[0]).unwrap();
        assert_eq!(r.templates(), &[0]);
        assert_eq!(r.exceptions().len(), 1);
        assert_eq!(r.value(t(0, 3)), 1);
        // Restriction onto the chain block reindexes it to block zero.
        let c = f.restrict(&[], &[1]).unwrap();
        assert_eq!(c.templates(), &[1]);
        assert_eq!(c.value(t(0, 1)), 0);
        // Bounds and shape violations are refused.
        assert!(SymbolicElement::new(&p, vec![3], vec![0, 0], BTreeMap::new()).is_err());
        assert!(SymbolicElement::new(&p, vec![0], vec![2, 0], BTreeMap::new()).is_err());
        let mut bad = BTreeMap::new();
        bad.insert(PElem::Fin(0), 1);
        assert!(SymbolicElement::new(&p, vec![0], vec![0, 0], bad).is_err());
        let mut rung = BTreeMap::new();
        rung.insert(PElem::Tail { block: 0, pos: 0, upper: true }, 1);
        assert!(SymbolicElement::new(&p, vec![0], vec![0, 0], rung).is_err());
    }

    #[test]
    fn symbolic_membership_matches_window_colors() {
        // The window color of a symbolic element is nonzero exactly when
        // the element vanishes outside the sub-selection — tying the
        // finite-window map to the intended infinite one.
        let p = point_plus_antichain();
        let q_sel = vec![PElem::Fin(0)];
        let p_sel = margin_selection(&p, &q_sel, 2).unwrap();
        let cm = colored(&p, &q_sel, vec![0, 1]);
        let out = reduce_subposet(&cm, &p, &q_sel, &p_sel, &caps()).unwrap();
        let window = out.model();
        let t = |pos| PElem::Tail { block: 0, pos, upper: false };
        let mut candidates = Vec::new();
        for fin in 0..2u32 {
            for exc0 in 0..2u32 {
                for exc1 in 0..2u32 {
                    let mut exc = BTreeMap::new();
                    exc.insert(t(0), exc0);
                    exc.insert(t(1), exc1);
                    candidates.push(
                        SymbolicElement::new(&p, vec![fin], vec![0], exc).unwrap(),
                    );
                }
            }
        }
        // Also one with a nonzero template: nonzero infinitely often, so
        // it is not even a member of the reduced model; its window
        // restriction nonetheless lands on a zero-colored element.
        candidates.push(SymbolicElement::constant(&p, 0, 1).unwrap());
        for f in &candidates {
            let idx = f.truncated_index(window).unwrap();
            let member = f.nonzero_finitely_often();
            let keeps_color = member && f.is_zero_outside(&q_sel);
            assert_eq!(
                out.colors()[idx] != 0,
                keeps_color,
                "element {f:?} at window index {idx}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reduction_verdicts_match_input_verdicts(
            ca in proptest::collection::vec(0u32..3, 4),
            cb in proptest::collection::vec(0u32..3, 4),
        ) {
            // Two-antichain inputs, one extra antichain point appended.
            let p = PosetPresentation::new(
                vec!["q0".into(), "q1".into()],
                vec![],
                vec![2, 2],
                vec![TailBlock { kind: TailKind::Antichain, delta: 2, above: vec![] }],
            )
            .unwrap();
            let q_sel = vec![PElem::Fin(0), PElem::Fin(1)];
            let p_sel = margin_selection(&p, &q_sel, 1).unwrap();
            let a = colored(&p, &q_sel, ca);
            let b = colored(&p, &q_sel, cb);
            let before = colored_isomorphic(&a, &b, &caps()).unwrap();
            let fa = reduce_subposet(&a, &p, &q_sel, &p_sel, &caps()).unwrap();
            let fb = reduce_subposet(&b, &p, &q_sel, &p_sel, &caps()).unwrap();
            let after = colored_isomorphic(&fa, &fb, &caps()).unwrap();
            prop_assert_eq!(before, after);
            // Decoding is exact on images, not just up to isomorphism.
            let back = decode_subposet(&fa, &caps()).unwrap();
            prop_assert_eq!(back.colors(), a.colors());
        }
    }
}
