//! Abstract gas metering.
//!
//! Contract code runs its group arithmetic through [`Metered`], which tallies
//! operations into an [`OpCounts`]. A [`CostModel`] turns the counts of one
//! transaction into gas units:
//!
//! ```text
//! cost = T + E*exps + M*mults + I*inversions + R*reads + S*writes
//!          + H*hashed_elements + Q*peak_transient^2
//! ```
//!
//! The quadratic transient term stands in for memory expansion: a batch that
//! keeps `w` intermediate values alive pays `Q*w^2`, which is what makes very
//! large MPC batches expensive.

use serde::{Deserialize, Serialize};

use crate::group::{GroupElement, GroupParams, Scalar};

/// Operation counts for one transaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub exps: u64,
    pub mults: u64,
    pub inversions: u64,
    pub reads: u64,
    pub writes: u64,
    pub hashed_elements: u64,
    pub peak_transient: u64,
}

impl OpCounts {
    pub fn read(&mut self, n: u64) {
        self.reads += n;
    }

    pub fn write(&mut self, n: u64) {
        self.writes += n;
    }

    pub fn hash(&mut self, elements: u64) {
        self.hashed_elements += elements;
    }

    pub fn transient(&mut self, live: u64) {
        self.peak_transient = self.peak_transient.max(live);
    }

    /// Component-wise sum; the peak is the max of both peaks.
    pub fn merge(&mut self, other: &OpCounts) {
        self.exps += other.exps;
        self.mults += other.mults;
        self.inversions += other.inversions;
        self.reads += other.reads;
        self.writes += other.writes;
        self.hashed_elements += other.hashed_elements;
        self.peak_transient = self.peak_transient.max(other.peak_transient);
    }
}

/// Unit prices of the abstract machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub tx_overhead: u64,
    pub exponentiation: u64,
    pub multiplication: u64,
    pub inversion: u64,
    pub storage_read: u64,
    pub storage_write: u64,
    pub hash_element: u64,
    pub transient_quadratic: u64,
}

impl Default for CostModel {
    /// Harmony-calibrated constants; see [`crate::ledger::calibrate`].
    fn default() -> Self {
        CostModel::harmony_like()
    }
}

impl CostModel {
    /// Fixed unit prices that the calibration does not solve for.
    pub const BASE: CostModel = CostModel {
        tx_overhead: 21_000,
        exponentiation: 500_000,
        multiplication: 6_000,
        inversion: 6_000,
        storage_read: 2_100,
        storage_write: 20_000,
        hash_element: 60,
        transient_quadratic: 150,
    };

    /// Output of `calibrate(&PlatformProfile::harmony_like(), &CostModel::BASE,
    /// HARMONY_ANCHORS[1], HARMONY_ANCHORS[2])`, frozen.
    pub fn harmony_like() -> Self {
        CostModel {
            tx_overhead: HARMONY_TX_OVERHEAD,
            exponentiation: HARMONY_EXPONENTIATION,
            ..CostModel::BASE
        }
    }

    pub fn units(&self, c: &OpCounts) -> u64 {
        self.tx_overhead
            + self.exponentiation * c.exps
            + self.multiplication * c.mults
            + self.inversion * c.inversions
            + self.storage_read * c.reads
            + self.storage_write * c.writes
            + self.hash_element * c.hashed_elements
            + self.transient_quadratic * c.peak_transient * c.peak_transient
    }

    /// Everything except the exponentiation and overhead terms.
    pub(crate) fn units_without(&self, c: &OpCounts) -> u64 {
        let mut m = *self;
        m.tx_overhead = 0;
        m.exponentiation = 0;
        m.units(c)
    }
}

pub(crate) const HARMONY_TX_OVERHEAD: u64 = 328_955;
pub(crate) const HARMONY_EXPONENTIATION: u64 = 517_406;

/// Group arithmetic that records what it does.
pub struct Metered<'a> {
    pub params: &'a GroupParams,
    pub counts: &'a mut OpCounts,
}

impl<'a> Metered<'a> {
    pub fn new(params: &'a GroupParams, counts: &'a mut OpCounts) -> Self {
        Metered { params, counts }
    }

    pub fn pow(&mut self, base: &GroupElement, e: &Scalar) -> GroupElement {
        self.counts.exps += 1;
        self.params.pow(base, e)
    }

    pub fn mul(&mut self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.counts.mults += 1;
        self.params.mul(a, b)
    }

    pub fn div(&mut self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.counts.inversions += 1;
        self.counts.mults += 1;
        self.params.div(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_formula() {
        let m = CostModel {
            tx_overhead: 10,
            exponentiation: 1,
            multiplication: 2,
            inversion: 3,
            storage_read: 4,
            storage_write: 5,
            hash_element: 6,
            transient_quadratic: 7,
        };
        let c = OpCounts {
            exps: 1,
            mults: 1,
            inversions: 1,
            reads: 1,
            writes: 1,
            hashed_elements: 1,
            peak_transient: 3,
        };
        assert_eq!(m.units(&c), 10 + 1 + 2 + 3 + 4 + 5 + 6 + 7 * 9);
        assert_eq!(m.units_without(&c), 2 + 3 + 4 + 5 + 6 + 7 * 9);
        assert_eq!(m.units(&OpCounts::default()), 10);
    }

    #[test]
    fn merge_keeps_peak() {
        let mut a = OpCounts {
            exps: 2,
            peak_transient: 5,
            ..Default::default()
        };
        let b = OpCounts {
            exps: 3,
            peak_transient: 4,
            ..Default::default()
        };
        a.merge(&b);
        assert_eq!(a.exps, 5);
        assert_eq!(a.peak_transient, 5);
    }
}
