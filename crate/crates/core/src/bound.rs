//! Extended-real bound values for GBD bookkeeping.
//!
//! Lower/upper bounds start at -inf/+inf and candidate master costs use a
//! tagged -inf sentinel when no optimality cut exists yet. The sentinel is a
//! variant, not a float infinity, so serialized traces cannot silently pass a
//! cost-consistency check through float arithmetic; only comparison and an
//! explicit gap are defined.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// A bound value: finite, or one of the infinite sentinels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Finite(f64),
    Tagged(Sentinel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sentinel {
    #[serde(rename = "-inf")]
    NegInf,
    #[serde(rename = "+inf")]
    PosInf,
}

impl Bound {
    pub const NEG_INF: Bound = Bound::Tagged(Sentinel::NegInf);
    pub const POS_INF: Bound = Bound::Tagged(Sentinel::PosInf);

    pub fn finite(v: f64) -> Bound {
        debug_assert!(v.is_finite(), "finite bound from non-finite float");
        Bound::Finite(v)
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    pub fn as_finite(self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(v),
            Bound::Tagged(_) => None,
        }
    }

    /// Gap `self - other`, used for convergence tests `ubd - lbd <= eps`.
    /// Any infinite operand yields +inf except the degenerate pairs
    /// (-inf, -inf) and (+inf, +inf), which yield 0 so that a run that never
    /// produced a finite bound does not report a spurious open gap.
    pub fn gap(self, other: Bound) -> f64 {
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => a - b,
            (Bound::Tagged(a), Bound::Tagged(b)) if a == b => 0.0,
            _ => f64::INFINITY,
        }
    }

    pub fn min(self, other: Bound) -> Bound {
        if other < self { other } else { self }
    }

    pub fn max(self, other: Bound) -> Bound {
        if other > self { other } else { self }
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Bound) -> Option<Ordering> {
        use Sentinel::*;
        let rank = |b: &Bound| match b {
            Bound::Tagged(NegInf) => -1,
            Bound::Finite(_) => 0,
            Bound::Tagged(PosInf) => 1,
        };
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => a.partial_cmp(b),
            _ => rank(self).partial_cmp(&rank(other)),
        }
    }
}

impl From<f64> for Bound {
    fn from(v: f64) -> Bound {
        if v == f64::INFINITY {
            Bound::POS_INF
        } else if v == f64::NEG_INFINITY {
            Bound::NEG_INF
        } else {
            Bound::Finite(v)
        }
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::Finite(v) => write!(f, "{v}"),
            Bound::Tagged(Sentinel::NegInf) => write!(f, "-inf"),
            Bound::Tagged(Sentinel::PosInf) => write!(f, "+inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering() {
        assert!(Bound::NEG_INF < Bound::finite(-1e300));
        assert!(Bound::finite(1e300) < Bound::POS_INF);
        assert!(Bound::finite(1.0) < Bound::finite(2.0));
        assert!(Bound::NEG_INF < Bound::POS_INF);
        assert!(Bound::NEG_INF <= Bound::NEG_INF);
    }

    #[test]
    fn gap_rules() {
        assert_eq!(Bound::finite(5.0).gap(Bound::finite(3.0)), 2.0);
        assert_eq!(Bound::POS_INF.gap(Bound::finite(3.0)), f64::INFINITY);
        assert_eq!(Bound::POS_INF.gap(Bound::NEG_INF), f64::INFINITY);
        assert_eq!(Bound::NEG_INF.gap(Bound::NEG_INF), 0.0);
    }

    #[test]
    fn max_fold_is_nondecreasing() {
        let seq = [
            Bound::NEG_INF,
            Bound::finite(-3.0),
            Bound::finite(-5.0),
            Bound::finite(2.0),
            Bound::NEG_INF,
        ];
        let mut cur = Bound::NEG_INF;
        let mut prev = cur;
        for s in seq {
            cur = cur.max(s);
            assert!(cur >= prev);
            prev = cur;
        }
        assert_eq!(cur, Bound::finite(2.0));
    }

    #[test]
    fn serde_sentinels_round_trip() {
        let vals = [Bound::NEG_INF, Bound::finite(1.5), Bound::POS_INF];
        let s = serde_json::to_string(&vals).unwrap();
        assert_eq!(s, r#"["-inf",1.5,"+inf"]"#);
        let back: Vec<Bound> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vals);
    }
}
