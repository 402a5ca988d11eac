//! Cross-module consistency suite: one fast, seeded pass over every
//! engine's core invariants.
//!
//! Each check either passes with a one-line summary or fails with the
//! message of the violated property. A failed check is an answer, not a
//! crash: it lands in the report with `passed: false`. Infrastructure
//! problems (malformed inputs, blown caps, I/O) abort the whole run
//! instead, since the remaining checks could not be trusted anyway.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backforth::{is_base, scott_rank, BfTable};
use crate::cosetsystems::{base_system, rnk_coset, rnk_coset_direct, successor, CoherentSet};
use crate::error::violation;
use crate::invsystems::{
    tree_rank_correspondence, AbGroup, InvSystem, RootedTree, TreeSystem,
};
use crate::io::{parse_coset_system, parse_structure, render_coset_system, render_structure};
use crate::ordinal::Ordinal;
use crate::posets::{
    benchmark_presentation, build_truncated_model, check_tp_axioms, FinitePoset, NbcVerdict,
    PElem, PosetPresentation, TailBlock, TailKind,
};
use crate::products::{
    borel_verdict, build_truncated_product, construct_base, istar, BorelVerdict, ProductSpec,
};
use crate::reductions::{
    intersection_family, iso_harness, margin_selection, reduce_delta, reduce_subposet,
    ColoredModel,
};
use crate::structures::{
    directed_cycle, equivalence_structure, linear_order, mixed_radix_digits, orbit_partition,
    pure_set, FiniteStructure, RelDecl, Signature,
};
use crate::{Caps, Error, Result};

/// One named check: passed or not, with a one-line account either way.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// The full suite outcome, echoing the seed that drove the random sweeps.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn record(checks: &mut Vec<CheckOutcome>, name: &str, outcome: Result<String>) -> Result<()> {
    match outcome {
        Ok(detail) => {
            checks.push(CheckOutcome {
                name: name.to_string(),
                passed: true,
                detail,
            });
            Ok(())
        }
        Err(Error::Violation(detail)) => {
            checks.push(CheckOutcome {
                name: name.to_string(),
                passed: false,
                detail,
            });
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Runs every check and collects the outcomes. `seed` drives the random
/// sweeps; everything else is deterministic.
pub fn run_all(caps: &Caps, seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    record(
        &mut checks,
        "scott ranks of known structures",
        scott_anchors(caps),
    )?;
    record(
        &mut checks,
        "back-and-forth fixpoint matches automorphism orbits",
        bf_matches_orbits(caps, seed),
    )?;
    record(
        &mut checks,
        "benchmark posets fail the crosscutting test at their own index",
        benchmark_diagnostics(),
    )?;
    record(
        &mut checks,
        "truncated box models satisfy the theory axioms",
        box_model_axioms(caps),
    )?;
    record(
        &mut checks,
        "product verdicts, non-free indices, and a constructed base",
        product_verdicts(caps),
    )?;
    record(
        &mut checks,
        "coset empty-set rank ladder, both computation routes",
        coset_rank_ladder(caps),
    )?;
    record(
        &mut checks,
        "coset ranks stable under extra free dimensions",
        coset_stability(caps),
    )?;
    record(
        &mut checks,
        "tree labeling ranks bounded by strongness",
        tree_rank_bound(caps),
    )?;
    record(
        &mut checks,
        "strong tree labelings extend one node at a time",
        tree_strong_extension(caps),
    )?;
    record(
        &mut checks,
        "inverse-system ranks stable under the integer stand-in",
        standin_stability(caps),
    )?;
    record(
        &mut checks,
        "reduction maps preserve and reflect isomorphism",
        reduction_harness(caps),
    )?;
    record(
        &mut checks,
        "intersection family equals the downward-closed sets",
        family_matches_downward_closed(),
    )?;
    record(
        &mut checks,
        "file formats round trip byte-identically",
        io_round_trips(),
    )?;
    Ok(VerifyReport { seed, checks })
}

/// A random structure from a seeded generator: universe size in
/// `1..=max_universe`, one or two relations of arity one or two, each
/// possible tuple present with probability one half.
pub fn random_structure<R: Rng>(rng: &mut R, max_universe: usize) -> FiniteStructure {
    let n = rng.random_range(1..=max_universe);
    let rel_count = rng.random_range(1..=2usize);
    let decls: Vec<RelDecl> = (0..rel_count)
        .map(|i| RelDecl::new(format!("R{i}"), rng.random_range(1..=2usize)))
        .collect();
    let arities: Vec<usize> = decls.iter().map(|d| d.arity).collect();
    let sig = Signature::new(decls, vec![]).expect("fresh relation names are distinct");
    let mut m = FiniteStructure::empty(sig, n, vec![]).expect("an empty interpretation is valid");
    for (r, &arity) in arities.iter().enumerate() {
        let radii = vec![n; arity];
        for idx in 0..n.pow(arity as u32) {
            if rng.random_bool(0.5) {
                m.insert_tuple(r, mixed_radix_digits(idx, &radii))
                    .expect("tuples are drawn from the universe");
            }
        }
    }
    m
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn expect_ord(what: &str, got: Ordinal, want: Ordinal) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        violation(format!("{what}: rank {got} instead of {want}"))
    }
}

fn scott_anchors(caps: &Caps) -> Result<String> {
    for n in 1..=4 {
        expect_ord(
            "a pure set",
            scott_rank(&pure_set(n), caps)?,
            Ordinal::Fin(0),
        )?;
    }
    expect_ord(
        "a three-element linear order",
        scott_rank(&linear_order(3), caps)?,
        Ordinal::Fin(1),
    )?;
    expect_ord(
        "classes of sizes 2 and 1",
        scott_rank(&equivalence_structure("E", &[2, 1]), caps)?,
        Ordinal::Fin(1),
    )?;
    Ok("6 structures sit at their known ranks".to_string())
}

fn bf_matches_orbits(caps: &Caps, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let structures = 30;
    let mut comparisons: u64 = 0;
    for _ in 0..structures {
        let m = random_structure(&mut rng, 4);
        let table = BfTable::single(&m, caps)?;
        let n = m.universe();
        for k in 1..=2usize {
            let orbits = orbit_partition(&m, k, caps)?;
            let radii = vec![n; k];
            let tuples: Vec<Vec<usize>> = (0..n.pow(k as u32))
                .map(|i| mixed_radix_digits(i, &radii))
                .collect();
            for a in &tuples {
                for b in &tuples {
                    let stable = table.stable_equivalent(0, a, 0, b)?;
                    let orbit = orbits.same_orbit(a, b);
                    comparisons += 1;
                    if stable != orbit {
                        return violation(format!(
                            "tuples {a:?} and {b:?} disagree: stable-equivalent {stable}, same-orbit {orbit}"
                        ));
                    }
                }
            }
        }
    }
    Ok(format!(
        "{structures} random structures, {comparisons} tuple comparisons agree"
    ))
}

fn benchmark_diagnostics() -> Result<String> {
    for i in 0..4 {
        let p = benchmark_presentation(i);
        if p.is_nbc() {
            return violation(format!("benchmark presentation {i} passed the crosscutting test"));
        }
        let w = p.benchmark_witness()?;
        if w.index as usize != i {
            return violation(format!(
                "benchmark presentation {i} matched witness {}",
                w.index
            ));
        }
    }
    let nbc = PosetPresentation::new(
        names(&["a", "b"]),
        vec![(0, 1)],
        vec![2, 3],
        vec![TailBlock {
            kind: TailKind::Antichain,
            delta: 2,
            above: vec![],
        }],
    )?;
    match nbc.nbc_witness() {
        NbcVerdict::Nbc { q } if q.len() == 2 => {}
        other => {
            return violation(format!(
                "expected a two-element finite core, got {other:?}"
            ))
        }
    }
    Ok("4 benchmark shapes matched their own index; the crosscutting example produced its finite core".to_string())
}

fn box_model_axioms(caps: &Caps) -> Result<String> {
    let ternary = benchmark_presentation(1);
    let tm = build_truncated_model(
        &ternary,
        &[PElem::Tail {
            block: 0,
            pos: 0,
            upper: false,
        }],
        caps,
    )?;
    check_tp_axioms(&tm.structure, &tm.poset, caps)?;
    let chain = PosetPresentation::finite(names(&["a", "b"]), vec![(0, 1)], vec![2, 2])?;
    let tm2 = build_truncated_model(&chain, &[PElem::Fin(0), PElem::Fin(1)], caps)?;
    check_tp_axioms(&tm2.structure, &tm2.poset, caps)?;
    Ok("2 truncated box models satisfy every axiom group".to_string())
}

fn product_verdicts(caps: &Caps) -> Result<String> {
    let cases = [
        ("two-point factors", pure_set(2), BorelVerdict::Borel),
        ("three-point factors", pure_set(3), BorelVerdict::NonBorel),
        ("five-cycle factors", directed_cycle(5), BorelVerdict::Borel),
        (
            "paired-classes factors",
            equivalence_structure("R", &[2, 2]),
            BorelVerdict::NonBorel,
        ),
    ];
    for (what, factor, want) in cases {
        let spec = ProductSpec::new(vec![], vec![factor])?;
        let got = borel_verdict(&spec, caps)?;
        if got != want {
            return violation(format!("{what}: verdict {got:?} instead of {want:?}"));
        }
    }
    let mixed = ProductSpec::new(vec![pure_set(3)], vec![pure_set(2)])?;
    let flags = istar(&mixed, caps)?;
    if flags.prefix_nonfree != vec![0] || !flags.tail_free {
        return violation(format!("mixed product flagged {flags:?}"));
    }
    let base = construct_base(&mixed, 2, caps)?;
    let window = build_truncated_product(&mixed, 2, caps)?;
    if !is_base(&window, &base, caps)? {
        return violation("the constructed tuple is not a base for the truncated product");
    }
    Ok(format!(
        "4 verdicts, the non-free index set, and a {}-element base all check out",
        base.len()
    ))
}

fn coset_rank_ladder(caps: &Caps) -> Result<String> {
    let c0 = base_system(2, 1)?;
    let e0 = CoherentSet::empty(2, 1)?;
    expect_ord(
        "the base system",
        rnk_coset(&c0, &e0, caps)?,
        Ordinal::Fin(1),
    )?;
    let c1 = successor(&c0)?;
    let e1 = CoherentSet::empty(c1.f_dim(), c1.g_dim())?;
    expect_ord(
        "the successor system",
        rnk_coset(&c1, &e1, caps)?,
        Ordinal::Fin(2),
    )?;
    let c22 = base_system(2, 2)?;
    let e22 = CoherentSet::empty(2, 2)?;
    for (what, c, e) in [("the base system", &c0, &e0), ("a two-group base system", &c22, &e22)] {
        let table = rnk_coset(c, e, caps)?;
        let direct = rnk_coset_direct(c, e, caps)?;
        if table != direct {
            return violation(format!(
                "{what}: the layered route found {table}, the direct recursion {direct}"
            ));
        }
    }
    Ok("empty-set ranks Fin 1 and Fin 2 on the ladder, both routes agreeing".to_string())
}

fn coset_stability(caps: &Caps) -> Result<String> {
    for (n, m) in [(2, 1), (2, 2)] {
        let small = rnk_coset(&base_system(n, m)?, &CoherentSet::empty(n, m)?, caps)?;
        let large = rnk_coset(&base_system(n + 1, m)?, &CoherentSet::empty(n + 1, m)?, caps)?;
        if small != large {
            return violation(format!(
                "base system ({n},{m}): empty-set rank moved from {small} to {large} with one more free dimension"
            ));
        }
    }
    Ok("empty-set ranks unchanged when the free dimension grows".to_string())
}

fn tree_cases() -> Vec<(Vec<Option<usize>>, u32)> {
    vec![
        // a three-node path, orders 2 and 3
        (vec![None, Some(0), Some(1)], 2),
        (vec![None, Some(0), Some(1)], 3),
        // a root with three leaves
        (vec![None, Some(0), Some(0), Some(0)], 2),
    ]
}

fn tree_rank_bound(caps: &Caps) -> Result<String> {
    let mut labelings: u64 = 0;
    for (parents, order) in tree_cases() {
        let ts = TreeSystem::new(RootedTree::new(parents)?, order)?;
        let mat = ts.materialize(caps)?;
        for u in &mat.subsets {
            for f in ts.enumerate(u, caps)? {
                let (strong, rank) = tree_rank_correspondence(&ts, &f, caps)?;
                labelings += 1;
                if rank > strong {
                    return violation(format!(
                        "a labeling of {u:?} has rank {rank} above its strongness {strong}"
                    ));
                }
            }
        }
    }
    Ok(format!("{labelings} labelings stay within their strongness bound"))
}

fn tree_strong_extension(caps: &Caps) -> Result<String> {
    let mut extensions: u64 = 0;
    for (parents, order) in tree_cases() {
        let ts = TreeSystem::new(RootedTree::new(parents)?, order)?;
        let mat = ts.materialize(caps)?;
        for u in &mat.subsets {
            let uset: BTreeSet<usize> = u.iter().copied().collect();
            let children: Vec<usize> = (0..ts.tree.len())
                .filter(|&s| {
                    !uset.contains(&s)
                        && ts.tree.parent(s).is_some_and(|p| uset.contains(&p))
                })
                .collect();
            for f in ts.enumerate(u, caps)? {
                let alpha = match ts.max_strongness(&f) {
                    Ordinal::Fin(0) => continue,
                    Ordinal::Fin(k) => k - 1,
                    _ => 2,
                };
                for &s in &children {
                    let g = ts.extend_strong(&f, s, alpha)?;
                    if !ts.is_alpha_strong(&g, Ordinal::Fin(alpha)) {
                        return violation(format!(
                            "the extension by node {s} is not {alpha}-strong"
                        ));
                    }
                    if ts.restrict(&g, u)? != f {
                        return violation(format!(
                            "the extension by node {s} does not restrict back"
                        ));
                    }
                    extensions += 1;
                }
            }
        }
    }
    Ok(format!("{extensions} strong one-node extensions verified"))
}

fn standin_stability(caps: &Caps) -> Result<String> {
    let build = |standin: u32| -> Result<InvSystem> {
        let caps = Caps {
            z_standin: standin,
            ..caps.clone()
        };
        InvSystem::new(
            names(&["p", "q"]),
            vec![vec![true, true], vec![false, true]],
            &AbGroup::new(vec![0]),
            vec![vec![vec![2]], vec![vec![1]]],
            BTreeMap::from([((0, 1), vec![vec![2]])]),
            &caps,
        )
    };
    let small = build(caps.z_standin)?;
    let large = build(caps.z_standin * 2)?;
    let probes: [(usize, &[u32]); 3] = [(0, &[0]), (0, &[2]), (1, &[1])];
    for (p, v) in probes {
        let a = small.rank(p, v)?;
        let b = large.rank(p, v)?;
        if a != b {
            return violation(format!(
                "rank of {v:?} at index {p} moved from {a} to {b} when the stand-in doubled"
            ));
        }
    }
    Ok(format!(
        "3 probe ranks unchanged between stand-ins {} and {}",
        caps.z_standin,
        caps.z_standin * 2
    ))
}

fn colorings_of(window: &crate::posets::TruncatedModel, max_color: u32) -> Vec<ColoredModel> {
    let n = window.structure.universe();
    let radii = vec![max_color as usize + 1; n];
    (0..(max_color as usize + 1).pow(n as u32))
        .map(|i| {
            let colors = mixed_radix_digits(i, &radii)
                .into_iter()
                .map(|c| c as u32)
                .collect();
            ColoredModel::new(window.clone(), colors).expect("colors match the universe")
        })
        .collect()
}

fn all_pairs(models: &[ColoredModel]) -> Vec<(ColoredModel, ColoredModel)> {
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i..models.len() {
            pairs.push((models[i].clone(), models[j].clone()));
        }
    }
    pairs
}

fn reduction_harness(caps: &Caps) -> Result<String> {
    // Sub-selection map: one finite element inside a presentation with an
    // infinite antichain, margin one.
    let ambient = PosetPresentation::new(
        names(&["a"]),
        vec![],
        vec![2],
        vec![TailBlock {
            kind: TailKind::Antichain,
            delta: 2,
            above: vec![],
        }],
    )?;
    let q_sel = [PElem::Fin(0)];
    let p_sel = margin_selection(&ambient, &q_sel, 1)?;
    let q_window = build_truncated_model(
        &PosetPresentation::finite(names(&["a"]), vec![], vec![2])?,
        &[PElem::Fin(0)],
        caps,
    )?;
    let pairs = all_pairs(&colorings_of(&q_window, 1));
    let sub_pairs = pairs.len();
    let report = iso_harness(
        |cm| reduce_subposet(cm, &ambient, &q_sel, &p_sel, caps),
        &pairs,
        caps,
    )?;
    if !report.clean() {
        return violation(format!(
            "the sub-selection map broke {} colored pair(s)",
            report.counterexamples.len()
        ));
    }
    // Class-count map: two classes collapsing into a three-class window.
    let big = PosetPresentation::finite(names(&["a"]), vec![], vec![3])?;
    let small_window = build_truncated_model(
        &PosetPresentation::finite(names(&["a"]), vec![], vec![2])?,
        &[PElem::Fin(0)],
        caps,
    )?;
    let pairs = all_pairs(&colorings_of(&small_window, 1));
    let delta_pairs = pairs.len();
    let report = iso_harness(
        |cm| reduce_delta(cm, &big, &[PElem::Fin(0)], caps),
        &pairs,
        caps,
    )?;
    if !report.clean() {
        return violation(format!(
            "the class-count map broke {} colored pair(s)",
            report.counterexamples.len()
        ));
    }
    Ok(format!(
        "both maps preserve and reflect over {sub_pairs} and {delta_pairs} colored pairs"
    ))
}

fn family_matches_downward_closed() -> Result<String> {
    let poset = FinitePoset {
        names: names(&["a", "b", "c"]),
        le: vec![
            vec![true, true, false],
            vec![false, true, false],
            vec![false, false, true],
        ],
        delta: vec![2, 2, 2],
    };
    let fam = intersection_family(&poset);
    let down: BTreeSet<Vec<usize>> = poset.downward_closed_subsets().into_iter().collect();
    if fam != down {
        return violation(format!(
            "the intersection family has {} member sets, the downward-closed count is {}",
            fam.len(),
            down.len()
        ));
    }
    Ok(format!("{} member sets agree", fam.len()))
}

fn io_round_trips() -> Result<String> {
    let m = equivalence_structure("E", &[2, 2]);
    let text = render_structure(&m)?;
    let back = parse_structure(&text)?;
    if back != m {
        return violation("a structure changed across a file round trip");
    }
    if render_structure(&back)? != text {
        return violation("structure rendering is not byte-deterministic");
    }
    let c = base_system(2, 1)?;
    let text = render_coset_system(&c)?;
    let back = parse_coset_system(&text)?;
    if back != c {
        return violation("a coset system changed across a file round trip");
    }
    if render_coset_system(&back)? != text {
        return violation("coset system rendering is not byte-deterministic");
    }
    Ok("structure and coset files round trip byte-identically".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps() -> Caps {
        Caps::default()
    }

    #[test]
    fn every_check_passes_with_default_caps() {
        let report = run_all(&caps(), 0xABCD_1234).unwrap();
        assert_eq!(report.seed, 0xABCD_1234);
        assert_eq!(report.checks.len(), 13);
        for c in &report.checks {
            assert!(c.passed, "{} failed: {}", c.name, c.detail);
        }
        assert!(report.all_passed());
    }

    #[test]
    fn reports_are_deterministic_for_a_fixed_seed() {
        let a = serde_json::to_string(&run_all(&caps(), 7).unwrap()).unwrap();
        let b = serde_json::to_string(&run_all(&caps(), 7).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_structures_respect_the_requested_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            let m = random_structure(&mut rng, 3);
            assert!((1..=3).contains(&m.universe()));
            let rels = &m.signature().relations;
            assert!((1..=2).contains(&rels.len()));
            for d in rels {
                assert!((1..=2).contains(&d.arity));
            }
        }
    }

    #[test]
    fn violations_become_failed_checks_and_other_errors_abort() {
        let mut checks = Vec::new();
        record(&mut checks, "boom", violation("it broke")).unwrap();
        assert_eq!(checks.len(), 1);
        assert!(!checks[0].passed);
        assert_eq!(checks[0].detail, "it broke");

        let err = record(
            &mut checks,
            "bad input",
            Err(Error::Invalid("nonsense".to_string())),
        );
        assert!(matches!(err, Err(Error::Invalid(_))));
        assert_eq!(checks.len(), 1);
    }
}
