//! Off-chain tally search.
//!
//! Finds the count vector `(ct_1..ct_k)` with `prod f_l^ct_l` equal to the
//! product of the counted votes by walking all compositions of `n` votes into
//! `k` parts. Neighbouring compositions differ by moving one vote between two
//! candidates, so each step costs a single multiplication by a precomputed
//! ratio `f_{l+1} / f_l`. Because counts pack into disjoint `m`-bit fields of
//! the exponent, at most one composition can match.

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::booth::{BoothState, Phase, Tally};
use crate::group::{GroupElement, GroupParams, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TallyError {
    #[error("no composition of {n_votes} votes matches the vote product")]
    NoSolution { n_votes: u64 },
    #[error("booth is in phase {0:?}; tally needs repaired votes")]
    NotReady(Phase),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyProblem {
    pub params: GroupParams,
    pub product: GroupElement,
    pub n_votes: u64,
}

impl TallyProblem {
    /// Builds the problem from a booth snapshot in `Tally` or `Closed` phase.
    pub fn from_booth(booth: &BoothState) -> Result<Self, TallyError> {
        match booth.phase() {
            Phase::Tally | Phase::Closed if !booth.is_voided() => Ok(TallyProblem {
                params: booth.params().clone(),
                product: booth.vote_product(),
                n_votes: booth.repaired().len() as u64,
            }),
            other => Err(TallyError::NotReady(other)),
        }
    }
}

/// Number of compositions of `n` into `k` non-negative parts: C(n+k-1, k-1).
pub fn search_space_size(n: u64, k: u64) -> BigUint {
    assert!(k >= 1, "at least one candidate");
    let r = k - 1;
    let mut acc = BigUint::one();
    // C(n+r, r) = prod_{i=1..r} (n+i)/i, exact at every step
    for i in 1..=r {
        acc = acc * BigUint::from(n + i) / BigUint::from(i);
    }
    acc
}

/// Outcome of a search, with the number of candidate vectors inspected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveStats {
    pub tally: Option<Tally>,
    pub visited: u64,
}

struct Walker<'a> {
    params: &'a GroupParams,
    ratios: Vec<GroupElement>,
    ratio_invs: Vec<GroupElement>,
    target: &'a GroupElement,
    counts: Vec<u64>,
    current: GroupElement,
    visited: u64,
    exhaustive: bool,
    found: Option<Vec<u64>>,
}

impl Walker<'_> {
    // Invariant on entry: counts[l] = rem and counts[l+1..] = 0.
    // Restores that state before returning.
    fn walk(&mut self, l: usize, rem: u64) -> bool {
        self.visited += 1;
        if &self.current == self.target {
            if self.found.is_none() {
                self.found = Some(self.counts.clone());
            }
            if !self.exhaustive {
                return true;
            }
        }
        if l + 1 == self.counts.len() || rem == 0 {
            return false;
        }
        for t in 1..=rem {
            self.counts[l] -= 1;
            self.counts[l + 1] += 1;
            self.current = self.params.mul(&self.current, &self.ratios[l]);
            if self.walk(l + 1, t) {
                return true;
            }
        }
        // move all rem units back from l+1 to l
        self.counts[l] += rem;
        self.counts[l + 1] -= rem;
        let back = self.params.pow(&self.ratio_invs[l], &Scalar::from_raw(rem.into()));
        self.current = self.params.mul(&self.current, &back);
        false
    }
}

fn run(problem: &TallyProblem, exhaustive: bool) -> SolveStats {
    let params = &problem.params;
    let f = params.candidates();
    let k = f.len();
    let ratios: Vec<GroupElement> = (0..k.saturating_sub(1)).map(|l| params.div(&f[l + 1], &f[l])).collect();
    let ratio_invs = ratios.iter().map(|r| params.inv(r)).collect();
    let mut counts = vec![0u64; k];
    counts[0] = problem.n_votes;
    let current = params.pow(&f[0], &Scalar::from_raw(problem.n_votes.into()));
    let mut w = Walker {
        params,
        ratios,
        ratio_invs,
        target: &problem.product,
        counts,
        current,
        visited: 0,
        exhaustive,
        found: None,
    };
    w.walk(0, problem.n_votes);
    SolveStats {
        tally: w.found.map(Tally::new),
        visited: w.visited,
    }
}

/// Searches with early exit on the first match.
pub fn solve(problem: &TallyProblem) -> Result<Tally, TallyError> {
    solve_with_stats(problem).tally.ok_or(TallyError::NoSolution {
        n_votes: problem.n_votes,
    })
}

pub fn solve_with_stats(problem: &TallyProblem) -> SolveStats {
    run(problem, false)
}

/// Visits the whole composition space (no early exit).
pub fn solve_exhaustive(problem: &TallyProblem) -> SolveStats {
    run(problem, true)
}
