//! Desk-scale workbench for back-and-forth equivalence on finite relational
//! structures and the rank machinery that goes with it: Scott ranks, Borel-style
//! verdicts for crosscutting products and poset presentations, rank engines for
//! inverse systems of abelian groups and for coset systems over F2, and the
//! explicit reduction maps between colored models.
//!
//! Everything here is exact and deterministic. Operations that enumerate
//! (automorphism groups, tuple tables, subgroup closures) take a [`Caps`] and
//! fail loudly instead of silently truncating.

pub mod backforth;
pub mod cosetsystems;
pub mod error;
pub mod invsystems;
pub mod io;
pub mod ordinal;
pub mod posets;
pub mod products;
pub mod reductions;
pub mod structures;
pub mod verify;

pub use error::{Error, Result};
pub use ordinal::Ordinal;

/// Enumeration budgets shared by every exhaustive operation.
#[derive(Clone, Debug)]
pub struct Caps {
    /// Largest universe for full automorphism/permutation enumeration.
    pub cap_universe: usize,
    /// Largest tuple space (|M|^k and friends) any single table may hold.
    pub cap_tuple: usize,
    /// Node budget for backtracking isomorphism searches.
    pub iso_nodes: u64,
    /// Largest joint tuple pool a back-and-forth table may grow to.
    pub pool_limit: usize,
    /// Largest subgroup a generator closure may enumerate.
    pub group_limit: usize,
    /// Largest memo table for the direct coset-rank recursion.
    pub state_limit: usize,
    /// Finite stand-in modulus for blocks declared as Z (modulus 0).
    pub z_standin: u32,
    /// Extra truncation coordinates kept by the reduction maps.
    pub margin: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            cap_universe: 8,
            cap_tuple: 1_000_000,
            iso_nodes: 10_000_000,
            pool_limit: 1_000_000,
            group_limit: 4096,
            state_limit: 2_000_000,
            z_standin: 64,
            margin: 2,
        }
    }
}
