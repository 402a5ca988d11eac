//! Rank values: finite levels, omega-scale levels `w*a+b`, and infinity.
//!
//! The workbench only ever produces ordinals of this shape. Finite tables
//! stabilise at finite levels or get promoted to [`Ordinal::Infty`]; the
//! omega terms exist so that statements about `w + k` bookkeeping can be
//! written down and compared.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Ordinal {
    Fin(u32),
    /// `w*a + b` with `a >= 1`.
    Omega { a: u32, b: u32 },
    Infty,
}

use Ordinal::*;

impl Ordinal {
    pub fn omega() -> Ordinal {
        Omega { a: 1, b: 0 }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Fin(_))
    }

    pub fn successor(self) -> Ordinal {
        match self {
            Fin(n) => Fin(n + 1),
            Omega { a, b } => Omega { a, b: b + 1 },
            Infty => Infty,
        }
    }

    /// Ordinal addition by a finite amount on the right.
    pub fn add_fin(self, n: u32) -> Ordinal {
        match self {
            Fin(k) => Fin(k + n),
            Omega { a, b } => Omega { a, b: b + n },
            Infty => Infty,
        }
    }

    /// The predecessor of a successor ordinal; `None` at 0, at limits, and at infinity.
    pub fn predecessor(self) -> Option<Ordinal> {
        match self {
            Fin(0) => None,
            Fin(n) => Some(Fin(n - 1)),
            Omega { b: 0, .. } => None,
            Omega { a, b } => Some(Omega { a, b: b - 1 }),
            Infty => None,
        }
    }
}

impl PartialOrd for Ordinal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordinal {
    fn cmp(&self, other: &Self) -> Ordering {
        fn key(o: &Ordinal) -> (u32, u32, u32) {
            match *o {
                Fin(n) => (0, 0, n),
                Omega { a, b } => (1, a, b),
                Infty => (2, 0, 0),
            }
        }
        key(self).cmp(&key(other))
    }
}

impl fmt::Display for Ordinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Fin(n) => write!(f, "Fin {n}"),
            Omega { a, b } => write!(f, "w*{a}+{b}"),
            Infty => write!(f, "infty"),
        }
    }
}

impl FromStr for Ordinal {
    type Err = String;

    /// Accepts `infty`, `w`, `w*A`, `w*A+B`, `w+B`, `Fin N`, or a bare number.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("infty") {
            return Ok(Infty);
        }
        if let Some(rest) = s.strip_prefix("Fin") {
            return rest
                .trim()
                .parse::<u32>()
                .map(Fin)
                .map_err(|e| e.to_string());
        }
        if let Some(rest) = s.strip_prefix('w') {
            let rest = rest.trim();
            if rest.is_empty() {
                return Ok(Ordinal::omega());
            }
            let (a, tail) = if let Some(r) = rest.strip_prefix('*') {
                match r.find('+') {
                    Some(i) => (
                        r[..i].trim().parse::<u32>().map_err(|e| e.to_string())?,
                        Some(r[i + 1..].trim()),
                    ),
                    None => (r.trim().parse::<u32>().map_err(|e| e.to_string())?, None),
                }
            } else if let Some(r) = rest.strip_prefix('+') {
                (1, Some(r.trim()))
            } else {
                return Err(format!("cannot parse ordinal {s:?}"));
            };
            if a == 0 {
                return Err("omega coefficient must be >= 1".into());
            }
            let b = match tail {
                Some(t) => t.parse::<u32>().map_err(|e| e.to_string())?,
                None => 0,
            };
            return Ok(Omega { a, b });
        }
        s.parse::<u32>().map(Fin).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_is_total_and_expected() {
        let seq = [
            Fin(0),
            Fin(3),
            Omega { a: 1, b: 0 },
            Omega { a: 1, b: 2 },
            Omega { a: 2, b: 0 },
            Infty,
        ];
        for w in seq.windows(2) {
            assert!(w[0] < w[1], "{} < {}", w[0], w[1]);
        }
    }

    #[test]
    fn successor_and_addition() {
        assert_eq!(Fin(4).successor(), Fin(5));
        assert_eq!(Ordinal::omega().successor(), Omega { a: 1, b: 1 });
        assert_eq!(Infty.successor(), Infty);
        assert_eq!(Omega { a: 2, b: 1 }.add_fin(3), Omega { a: 2, b: 4 });
        assert_eq!(Fin(1).add_fin(0), Fin(1));
    }

    #[test]
    fn parse_round_trip() {
        for s in ["Fin 7", "w*1+0", "w*3+5", "infty"] {
            let o: Ordinal = s.parse().unwrap();
            assert_eq!(o.to_string(), s);
        }
        assert_eq!("4".parse::<Ordinal>().unwrap(), Fin(4));
        assert_eq!("w".parse::<Ordinal>().unwrap(), Ordinal::omega());
        assert_eq!("w+2".parse::<Ordinal>().unwrap(), Omega { a: 1, b: 2 });
        assert!("w*0+1".parse::<Ordinal>().is_err());
    }

    proptest! {
        #[test]
        fn successor_strictly_increases_below_infty(n in 0u32..10_000, a in 1u32..100, b in 0u32..10_000) {
            prop_assert!(Fin(n) < Fin(n).successor());
            let o = Omega { a, b };
            prop_assert!(o < o.successor());
        }

        #[test]
        fn add_fin_is_monotone(a in 1u32..50, b in 0u32..1000, n in 0u32..1000, m in 0u32..1000) {
            let o = Omega { a, b };
            let (lo, hi) = (n.min(m), n.max(m));
            prop_assert!(o.add_fin(lo) <= o.add_fin(hi));
            prop_assert!(Fin(b).add_fin(lo) <= Fin(b).add_fin(hi));
        }
    }
}
