//! Batch front end for the workbench: classifiers, rank engines, builders,
//! reduction maps, and the cross-module verification suite.
//!
//! Every command reads files, writes files, and prints one report — text by
//! default, JSON with `--format json`. Reports are deterministic given the
//! same inputs and flags; the seed driving any randomized sweep is echoed.
//! Exit status: 0 on success, 1 when a checked property is violated, 2 on
//! unreadable input or a blown cap.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crosscut_core::backforth::{bf_level, find_finite_base, is_base, scott_rank};
use crosscut_core::cosetsystems::{base_system, limit, rnk_coset, successor, CoherentSet};
use crosscut_core::io;
use crosscut_core::posets::{NbcVerdict, PElem, PosetPresentation};
use crosscut_core::products::{
    borel_verdict, build_truncated_product, construct_base, istar, BorelVerdict,
};
use crosscut_core::reductions::{margin_selection, reduce_delta, reduce_subposet};
use crosscut_core::verify::run_all;
use crosscut_core::{Caps, Error, Ordinal, Result};

#[derive(Parser)]
#[command(
    name = "crosscut",
    version,
    about = "Back-and-forth equivalence, Borel classifiers, rank engines, and reduction maps on finite structures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Largest universe for full automorphism enumeration.
    #[arg(long, global = true)]
    cap_universe: Option<usize>,
    /// Largest tuple space any one table may hold.
    #[arg(long, global = true)]
    cap_tuple: Option<usize>,
    /// Coordinates to materialize when a product window is needed.
    #[arg(long, global = true, default_value_t = 2)]
    truncate: usize,
    /// Extra coordinates a sub-selection window keeps beyond the selection.
    #[arg(long, global = true, default_value_t = 1)]
    margin: usize,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Seed for randomized sweeps, echoed in every report.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether isomorphism of countable models of a product theory
    /// is Borel.
    ClassifyProduct { input: PathBuf },
    /// Test a poset presentation for near-binary crosscuttingness.
    ClassifyPoset { input: PathBuf },
    /// Scott rank of a finite structure.
    ScottRank { input: PathBuf },
    /// Largest back-and-forth level at which two tuples agree.
    Bf {
        input_a: PathBuf,
        /// Second structure; the first again when omitted.
        input_b: Option<PathBuf>,
        /// Comma-separated element indices, e.g. `0,2`; empty tuple when omitted.
        #[arg(long, default_value = "")]
        tuple_a: String,
        #[arg(long, default_value = "")]
        tuple_b: String,
    },
    /// Find a finite base of a structure, or construct one for a product window.
    Base {
        input: PathBuf,
        /// Treat the input as a product specification.
        #[arg(long)]
        product: bool,
        /// Largest base size tried on plain structures.
        #[arg(long, default_value_t = 4)]
        max_size: usize,
    },
    /// Inverse systems of abelian groups.
    #[command(subcommand)]
    Invsys(InvsysCommand),
    /// Coset systems over binary words.
    #[command(subcommand)]
    Cosets(CosetsCommand),
    /// Reduction maps on colored box models.
    #[command(subcommand)]
    Reduce(ReduceCommand),
    /// Run the cross-module invariant suite.
    Verify,
}

#[derive(Subcommand)]
enum InvsysCommand {
    /// Rank every element at every index.
    Rank { input: PathBuf },
    /// Strongness and rank of every labeling of a tree system.
    Tree { input: PathBuf },
}

#[derive(Subcommand)]
enum CosetsCommand {
    /// Write the base system with the given dimensions.
    Build {
        #[arg(long)]
        f_dim: usize,
        #[arg(long)]
        g_dim: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Rank of the empty set, or of one (f, g) pair.
    Rank {
        input: PathBuf,
        #[arg(long, requires = "g")]
        f: Option<u32>,
        #[arg(long, requires = "f")]
        g: Option<u32>,
    },
    /// Apply the successor construction and write the result.
    Successor {
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        times: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Assemble a limit system from component files.
    Limit {
        input: PathBuf,
        /// Also write the assembled system here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReduceCommand {
    /// Map a colored model of a sub-selection into a larger window.
    Subposet {
        input: PathBuf,
        /// The ambient poset presentation.
        #[arg(long)]
        poset: PathBuf,
        /// Comma-separated finite-part names selecting the sub-poset.
        #[arg(long)]
        q: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Map a colored model into a window with larger class counts.
    Delta {
        input: PathBuf,
        /// The poset presentation carrying the larger class counts.
        #[arg(long)]
        poset: PathBuf,
        /// Comma-separated finite-part names selecting the window; the
        /// whole finite part when omitted.
        #[arg(long)]
        select: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

struct Report {
    lines: Vec<String>,
    payload: Value,
    failed: bool,
}

impl Report {
    fn ok(lines: Vec<String>, payload: Value) -> Report {
        Report {
            lines,
            payload,
            failed: false,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let defaults = Caps::default();
    let caps = Caps {
        cap_universe: cli.common.cap_universe.unwrap_or(defaults.cap_universe),
        cap_tuple: cli.common.cap_tuple.unwrap_or(defaults.cap_tuple),
        ..defaults
    };
    match dispatch(&cli.command, &cli.common, &caps) {
        Ok(report) => {
            emit(&cli.common, command_name(&cli.command), &report);
            if report.failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Violation(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::ClassifyProduct { .. } => "classify-product",
        Command::ClassifyPoset { .. } => "classify-poset",
        Command::ScottRank { .. } => "scott-rank",
        Command::Bf { .. } => "bf",
        Command::Base { .. } => "base",
        Command::Invsys(InvsysCommand::Rank { .. }) => "invsys rank",
        Command::Invsys(InvsysCommand::Tree { .. }) => "invsys tree",
        Command::Cosets(CosetsCommand::Build { .. }) => "cosets build",
        Command::Cosets(CosetsCommand::Rank { .. }) => "cosets rank",
        Command::Cosets(CosetsCommand::Successor { .. }) => "cosets successor",
        Command::Cosets(CosetsCommand::Limit { .. }) => "cosets limit",
        Command::Reduce(ReduceCommand::Subposet { .. }) => "reduce subposet",
        Command::Reduce(ReduceCommand::Delta { .. }) => "reduce delta",
        Command::Verify => "verify",
    }
}

fn emit(common: &Common, command: &str, report: &Report) {
    match common.format {
        Format::Text => {
            for line in &report.lines {
                println!("{line}");
            }
            println!("seed: {}", common.seed);
        }
        Format::Json => {
            let mut map = Map::new();
            map.insert("schema".to_string(), json!(1));
            map.insert("command".to_string(), json!(command));
            map.insert("seed".to_string(), json!(common.seed));
            if let Value::Object(fields) = &report.payload {
                for (k, v) in fields {
                    map.insert(k.clone(), v.clone());
                }
            }
            let text = serde_json::to_string_pretty(&Value::Object(map))
                .expect("reports serialize");
            println!("{text}");
        }
    }
}

/// Finite ordinals print as bare numbers (so empty-set ranks read
/// `rnk(∅)=3`); everything else keeps its standard spelling.
fn ord(o: Ordinal) -> String {
    match o {
        Ordinal::Fin(n) => n.to_string(),
        other => other.to_string(),
    }
}

fn parse_tuple(text: &str) -> Result<Vec<usize>> {
    if text.is_empty() {
        return Ok(vec![]);
    }
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Invalid(format!("tuple entry {part:?} is not an index")))
        })
        .collect()
}

fn parse_finite_names(p: &PosetPresentation, text: &str) -> Result<Vec<PElem>> {
    text.split(',')
        .map(|part| {
            let name = part.trim();
            (0..p.finite_len())
                .map(PElem::Fin)
                .find(|&x| p.elem_name(x) == name)
                .ok_or_else(|| {
                    Error::Invalid(format!("{name:?} is not a finite element of the poset"))
                })
        })
        .collect()
}

fn dispatch(command: &Command, common: &Common, caps: &Caps) -> Result<Report> {
    match command {
        Command::ClassifyProduct { input } => classify_product(input, caps),
        Command::ClassifyPoset { input } => classify_poset(input),
        Command::ScottRank { input } => scott_rank_cmd(input, caps),
        Command::Bf {
            input_a,
            input_b,
            tuple_a,
            tuple_b,
        } => bf_cmd(input_a, input_b.as_deref(), tuple_a, tuple_b, caps),
        Command::Base {
            input,
            product,
            max_size,
        } => base_cmd(input, *product, *max_size, common.truncate, caps),
        Command::Invsys(InvsysCommand::Rank { input }) => invsys_rank(input, caps),
        Command::Invsys(InvsysCommand::Tree { input }) => invsys_tree(input, caps),
        Command::Cosets(CosetsCommand::Build { f_dim, g_dim, out }) => {
            cosets_build(*f_dim, *g_dim, out)
        }
        Command::Cosets(CosetsCommand::Rank { input, f, g }) => cosets_rank(input, *f, *g, caps),
        Command::Cosets(CosetsCommand::Successor { input, times, out }) => {
            cosets_successor(input, *times, out)
        }
        Command::Cosets(CosetsCommand::Limit { input, out }) => cosets_limit(input, out.as_deref(), caps),
        Command::Reduce(ReduceCommand::Subposet {
            input,
            poset,
            q,
            out,
        }) => reduce_subposet_cmd(input, poset, q, out, common.margin, caps),
        Command::Reduce(ReduceCommand::Delta {
            input,
            poset,
            select,
            out,
        }) => reduce_delta_cmd(input, poset, select.as_deref(), out, caps),
        Command::Verify => verify_cmd(caps, common.seed),
    }
}

fn classify_product(input: &Path, caps: &Caps) -> Result<Report> {
    let spec = io::read_product(input)?;
    let flags = istar(&spec, caps)?;
    let verdict = borel_verdict(&spec, caps)?;
    let line = match verdict {
        BorelVerdict::NonBorel => "NonBorel, I_* infinite (tail non-free)".to_string(),
        BorelVerdict::Borel => format!(
            "Borel, I_* finite (non-free prefix coordinates: {:?})",
            flags.prefix_nonfree
        ),
    };
    Ok(Report::ok(
        vec![line],
        json!({
            "verdict": format!("{verdict:?}"),
            "prefix_nonfree": flags.prefix_nonfree,
            "tail_free": flags.tail_free,
        }),
    ))
}

fn classify_poset(input: &Path) -> Result<Report> {
    let p = io::read_poset(input)?;
    match p.nbc_witness() {
        NbcVerdict::Nbc { q } => {
            let core: Vec<String> = q.iter().map(|&x| p.elem_name(x)).collect();
            Ok(Report::ok(
                vec![format!(
                    "nearly binary crosscutting; finite core: [{}]",
                    core.join(", ")
                )],
                json!({ "nbc": true, "core": core }),
            ))
        }
        NbcVerdict::NotNbc { reason, .. } => {
            let w = p.benchmark_witness()?;
            Ok(Report::ok(
                vec![
                    format!("not nearly binary crosscutting; benchmark i={}", w.index),
                    reason.clone(),
                    w.subposet.clone(),
                ],
                json!({
                    "nbc": false,
                    "benchmark": w.index,
                    "block": w.block,
                    "delta_prime": w.delta_prime,
                    "reason": reason,
                    "subposet": w.subposet,
                }),
            ))
        }
    }
}

fn scott_rank_cmd(input: &Path, caps: &Caps) -> Result<Report> {
    let m = io::read_structure(input)?;
    let r = scott_rank(&m, caps)?;
    Ok(Report::ok(
        vec![format!("scott rank = {}", ord(r))],
        json!({ "rank": ord(r), "universe": m.universe() }),
    ))
}

fn bf_cmd(
    input_a: &Path,
    input_b: Option<&Path>,
    tuple_a: &str,
    tuple_b: &str,
    caps: &Caps,
) -> Result<Report> {
    let m = io::read_structure(input_a)?;
    let n = match input_b {
        Some(p) => io::read_structure(p)?,
        None => m.clone(),
    };
    let a = parse_tuple(tuple_a)?;
    let b = parse_tuple(tuple_b)?;
    match bf_level(&m, &a, &n, &b, caps)? {
        None => Ok(Report::ok(
            vec!["quantifier-free types differ: no agreement at any level".to_string()],
            json!({ "level": Value::Null }),
        )),
        Some(o) => Ok(Report::ok(
            vec![format!("back-and-forth level = {}", ord(o))],
            json!({ "level": ord(o) }),
        )),
    }
}

fn base_cmd(
    input: &Path,
    product: bool,
    max_size: usize,
    truncate: usize,
    caps: &Caps,
) -> Result<Report> {
    if product {
        let spec = io::read_product(input)?;
        let base = construct_base(&spec, truncate, caps)?;
        let window = build_truncated_product(&spec, truncate, caps)?;
        if !is_base(&window, &base, caps)? {
            return Err(Error::Violation(
                "the constructed tuple is not a base for the truncated product".to_string(),
            ));
        }
        Ok(Report::ok(
            vec![format!(
                "base: {base:?} over a {truncate}-coordinate window of {} elements",
                window.universe()
            )],
            json!({ "base": base, "coords": truncate, "universe": window.universe() }),
        ))
    } else {
        let m = io::read_structure(input)?;
        match find_finite_base(&m, max_size, caps)? {
            Some(base) => Ok(Report::ok(
                vec![format!("base: {base:?}")],
                json!({ "base": base }),
            )),
            None => Ok(Report::ok(
                vec![format!("no base of size at most {max_size}")],
                json!({ "base": Value::Null, "max_size": max_size }),
            )),
        }
    }
}

fn invsys_rank(input: &Path, caps: &Caps) -> Result<Report> {
    let sys = io::read_invsystem(input, caps)?;
    let ranks = sys.all_ranks();
    let mut lines = vec![format!("rank bound: {}", ord(sys.rank_bound()))];
    let mut indices = Vec::new();
    for p in 0..sys.index_count() {
        let mut entries = Vec::new();
        for (e, &r) in sys.elements(p).iter().zip(&ranks[p]) {
            lines.push(format!("rnk({}, {e:?}) = {}", sys.name(p), ord(r)));
            entries.push(json!({ "element": e, "rank": ord(r) }));
        }
        indices.push(json!({ "index": sys.name(p), "ranks": entries }));
    }
    Ok(Report::ok(
        lines,
        json!({ "rank_bound": ord(sys.rank_bound()), "indices": indices }),
    ))
}

fn invsys_tree(input: &Path, caps: &Caps) -> Result<Report> {
    let ts = io::read_tree(input)?;
    let mat = ts.materialize(caps)?;
    let mut lines = Vec::new();
    let mut entries = Vec::new();
    let mut worst: Option<String> = None;
    for (p, u) in mat.subsets.iter().enumerate() {
        for f in ts.enumerate(u, caps)? {
            let strong = ts.max_strongness(&f);
            let rank = mat.system.rank(p, &ts.vector_of(&f))?;
            if rank > strong && worst.is_none() {
                worst = Some(format!(
                    "labeling {:?} of {u:?} has rank {} above its strongness {}",
                    ts.vector_of(&f),
                    ord(rank),
                    ord(strong)
                ));
            }
            lines.push(format!(
                "u={u:?} sigma={:?} strongness={} rank={}",
                ts.vector_of(&f),
                ord(strong),
                ord(rank)
            ));
            entries.push(json!({
                "subset": u,
                "sigma": ts.vector_of(&f),
                "strongness": ord(strong),
                "rank": ord(rank),
            }));
        }
    }
    if let Some(msg) = worst {
        return Err(Error::Violation(msg));
    }
    lines.push(format!(
        "{} labelings over {} index sets, every rank within its strongness bound",
        entries.len(),
        mat.subsets.len()
    ));
    Ok(Report::ok(lines, json!({ "labelings": entries })))
}

fn cosets_build(f_dim: usize, g_dim: usize, out: &Path) -> Result<Report> {
    let c = base_system(f_dim, g_dim)?;
    io::write_coset_system(out, &c)?;
    Ok(Report::ok(
        vec![format!(
            "wrote the base system with f-dim {f_dim}, g-dim {g_dim} to {}",
            out.display()
        )],
        json!({ "f_dim": f_dim, "g_dim": g_dim, "out": out.display().to_string() }),
    ))
}

fn cosets_rank(input: &Path, f: Option<u32>, g: Option<u32>, caps: &Caps) -> Result<Report> {
    let c = io::read_coset_system(input)?;
    let (set, label) = match (f, g) {
        (Some(f), Some(g)) => (
            CoherentSet::singleton(c.f_dim(), c.g_dim(), f, g)?,
            format!("rnk(f={f},g={g})"),
        ),
        _ => (
            CoherentSet::empty(c.f_dim(), c.g_dim())?,
            "rnk(∅)".to_string(),
        ),
    };
    let r = rnk_coset(&c, &set, caps)?;
    Ok(Report::ok(
        vec![format!("{label}={}", ord(r))],
        json!({
            "rank": ord(r),
            "query": match (f, g) {
                (Some(f), Some(g)) => json!({ "f": f, "g": g }),
                _ => json!("empty"),
            },
            "f_dim": c.f_dim(),
            "g_dim": c.g_dim(),
        }),
    ))
}

fn cosets_successor(input: &Path, times: usize, out: &Path) -> Result<Report> {
    let mut c = io::read_coset_system(input)?;
    for _ in 0..times {
        c = successor(&c)?;
    }
    io::write_coset_system(out, &c)?;
    Ok(Report::ok(
        vec![format!(
            "wrote the {times}-fold successor with f-dim {}, g-dim {} to {}",
            c.f_dim(),
            c.g_dim(),
            out.display()
        )],
        json!({
            "times": times,
            "f_dim": c.f_dim(),
            "g_dim": c.g_dim(),
            "out": out.display().to_string(),
        }),
    ))
}

fn cosets_limit(input: &Path, out: Option<&Path>, caps: &Caps) -> Result<Report> {
    let (components, layout) = io::read_limit_spec(input)?;
    let ls = limit(&components, &layout, caps)?;
    let sys = ls.system();
    let empty = CoherentSet::empty(sys.f_dim(), sys.g_dim())?;
    let r = rnk_coset(sys, &empty, caps)?;
    let zero = ls.zero_side();
    let r0 = rnk_coset(zero, &CoherentSet::empty(zero.f_dim(), zero.g_dim())?, caps)?;
    let mut lines = vec![
        format!("rnk(∅)={}", ord(r)),
        format!("zero side rnk(∅)={}", ord(r0)),
        format!(
            "{} components, total dimension {}",
            components.len(),
            layout.total_dim()
        ),
    ];
    if let Some(path) = out {
        io::write_coset_system(path, sys)?;
        lines.push(format!("wrote the limit system to {}", path.display()));
    }
    Ok(Report::ok(
        lines,
        json!({
            "rank": ord(r),
            "zero_side_rank": ord(r0),
            "components": components.len(),
            "total_dim": layout.total_dim(),
            "out": out.map(|p| p.display().to_string()),
        }),
    ))
}

fn reduce_subposet_cmd(
    input: &Path,
    poset: &Path,
    q: &str,
    out: &Path,
    margin: usize,
    caps: &Caps,
) -> Result<Report> {
    let p = io::read_poset(poset)?;
    let q_sel = parse_finite_names(&p, q)?;
    let p_sel = margin_selection(&p, &q_sel, margin)?;
    let cm = io::read_colored_model(input, caps)?;
    let mapped = reduce_subposet(&cm, &p, &q_sel, &p_sel, caps)?;
    io::write_colored_model(out, &mapped)?;
    let window: Vec<String> = p_sel.iter().map(|&x| p.elem_name(x)).collect();
    Ok(Report::ok(
        vec![format!(
            "wrote the enlarged model over window [{}]: {} -> {} elements",
            window.join(", "),
            cm.model().structure.universe(),
            mapped.model().structure.universe()
        )],
        json!({
            "window": window,
            "universe_before": cm.model().structure.universe(),
            "universe_after": mapped.model().structure.universe(),
            "out": out.display().to_string(),
        }),
    ))
}

fn reduce_delta_cmd(
    input: &Path,
    poset: &Path,
    select: Option<&str>,
    out: &Path,
    caps: &Caps,
) -> Result<Report> {
    let p = io::read_poset(poset)?;
    let p_sel = match select {
        Some(text) => parse_finite_names(&p, text)?,
        None => (0..p.finite_len()).map(PElem::Fin).collect(),
    };
    let cm = io::read_colored_model(input, caps)?;
    let mapped = reduce_delta(&cm, &p, &p_sel, caps)?;
    io::write_colored_model(out, &mapped)?;
    let window: Vec<String> = p_sel.iter().map(|&x| p.elem_name(x)).collect();
    Ok(Report::ok(
        vec![format!(
            "wrote the class-count enlarged model over window [{}]: {} -> {} elements",
            window.join(", "),
            cm.model().structure.universe(),
            mapped.model().structure.universe()
        )],
        json!({
            "window": window,
            "universe_before": cm.model().structure.universe(),
            "universe_after": mapped.model().structure.universe(),
            "out": out.display().to_string(),
        }),
    ))
}

fn verify_cmd(caps: &Caps, seed: u64) -> Result<Report> {
    let report = run_all(caps, seed)?;
    let mut lines = Vec::new();
    for c in &report.checks {
        lines.push(format!(
            "{} — {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    lines.push(format!("{} checks, {failed} failed", report.checks.len()));
    let payload = serde_json::to_value(&report)?;
    let payload = match payload {
        Value::Object(mut map) => {
            map.remove("seed");
            Value::Object(map)
        }
        other => other,
    };
    Ok(Report {
        lines,
        payload,
        failed: failed > 0,
    })
}
