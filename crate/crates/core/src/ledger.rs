//! Simulated bulletin board and the capacity model built on top of it.
//!
//! Transactions are packed into blocks in submission order. A block holds
//! transactions until the next one would push it over the platform's block
//! gas limit; a transaction that could never fit is refused outright.
//! Rejected operations are still included and still pay for their work.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::booth::{BoothConfig, BoothId, BoothState, Eligibility, Tally};
use crate::cost::{CostModel, OpCounts};
use crate::group::{fixtures, GroupElement, GroupParams};
use crate::keys::{keygen, BlindedVote};
use crate::main_contract::Address;
use crate::zkp::{prove_membership, DhProof, MembershipProof, ProofContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformProfile {
    pub name: String,
    pub block_gas_limit: u64,
    pub block_interval_secs: u64,
}

impl PlatformProfile {
    pub fn harmony_like() -> Self {
        PlatformProfile {
            name: "harmony-like".into(),
            block_gas_limit: 80_000_000,
            block_interval_secs: 2,
        }
    }

    pub fn gnosis_like() -> Self {
        PlatformProfile {
            name: "gnosis-like".into(),
            block_gas_limit: 30_000_000,
            block_interval_secs: 5,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "harmony-like" | "harmony" => Some(Self::harmony_like()),
            "gnosis-like" | "gnosis" => Some(Self::gnosis_like()),
            _ => None,
        }
    }

    pub fn blocks_in(&self, seconds: u64) -> u64 {
        seconds / self.block_interval_secs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Main,
    Booth(BoothId),
}

/// Contract call with its canonical payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "snake_case")]
pub enum Operation {
    EnrollBatch {
        addresses: Vec<Address>,
    },
    AssignGroups {
        group_size: usize,
        seed: String,
    },
    SignUp {
        pk: GroupElement,
        deposit: u64,
    },
    PrecomputeRightMarkers {
        mpc_batch: usize,
    },
    ComputeMpcBatch {
        batch_index: usize,
    },
    CastVote {
        index: usize,
        vote: BlindedVote,
        proof: MembershipProof,
    },
    OpenFaultRecovery,
    TopUpDeposit {
        index: usize,
        amount: u64,
    },
    SubmitShares {
        active: usize,
        shares: Vec<(usize, DhProof)>,
    },
    RepairVotes,
    VerifyBoothTally {
        tally: Tally,
    },
    SubmitBoothTally {
        booth: BoothId,
        tally: Tally,
    },
    MarkVoided {
        booth: BoothId,
    },
    SettleDeposits {
        booth: BoothId,
        correct: Vec<Address>,
        forfeiting: Vec<Address>,
    },
}

impl Operation {
    pub fn name(&self) -> &'static str {
        match self {
            Operation::EnrollBatch { .. } => "enroll_batch",
            Operation::AssignGroups { .. } => "assign_groups",
            Operation::SignUp { .. } => "sign_up",
            Operation::PrecomputeRightMarkers { .. } => "precompute_right_markers",
            Operation::ComputeMpcBatch { .. } => "compute_mpc_batch",
            Operation::CastVote { .. } => "cast_vote",
            Operation::OpenFaultRecovery => "open_fault_recovery",
            Operation::TopUpDeposit { .. } => "top_up_deposit",
            Operation::SubmitShares { .. } => "submit_shares",
            Operation::RepairVotes => "repair_votes",
            Operation::VerifyBoothTally { .. } => "verify_booth_tally",
            Operation::SubmitBoothTally { .. } => "submit_booth_tally",
            Operation::MarkVoided { .. } => "mark_voided",
            Operation::SettleDeposits { .. } => "settle_deposits",
        }
    }

    /// Protocol phase the operation belongs to, used to group costs.
    pub fn phase(&self) -> &'static str {
        match self {
            Operation::EnrollBatch { .. } | Operation::AssignGroups { .. } => "registration",
            Operation::SignUp { .. } => "sign-up",
            Operation::PrecomputeRightMarkers { .. } | Operation::ComputeMpcBatch { .. } => "pre-voting",
            Operation::CastVote { .. } => "voting",
            Operation::OpenFaultRecovery
            | Operation::TopUpDeposit { .. }
            | Operation::SubmitShares { .. }
            | Operation::RepairVotes => "fault-recovery",
            Operation::VerifyBoothTally { .. } => "tally",
            Operation::SubmitBoothTally { .. } | Operation::MarkVoided { .. } | Operation::SettleDeposits { .. } => {
                "final-tally"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub target: Target,
    pub operation: Operation,
    pub cost: u64,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected(String),
}

impl Outcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Outcome::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub block: u64,
    pub cost: u64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub tx: Transaction,
    pub receipt: Receipt,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("transaction cost {cost} exceeds the block gas limit {limit}")]
    ExceedsBlockLimit { cost: u64, limit: u64 },
    #[error("transaction cost must be positive")]
    ZeroCost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    profile: PlatformProfile,
    model: CostModel,
    height: u64,
    block_used: u64,
    nonces: BTreeMap<Address, u64>,
    entries: Vec<Entry>,
}

impl Ledger {
    pub fn new(profile: PlatformProfile, model: CostModel) -> Self {
        Ledger {
            profile,
            model,
            height: 0,
            block_used: 0,
            nonces: BTreeMap::new(),
            entries: Vec::new(),
        }
    }

    pub fn profile(&self) -> &PlatformProfile {
        &self.profile
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    /// Height of the block currently being filled.
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn now_secs(&self) -> u64 {
        self.height * self.profile.block_interval_secs
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn next_nonce(&self, sender: &Address) -> u64 {
        self.nonces.get(sender).copied().unwrap_or(0)
    }

    pub fn check_cost(&self, cost: u64) -> Result<(), LedgerError> {
        if cost == 0 {
            return Err(LedgerError::ZeroCost);
        }
        if cost > self.profile.block_gas_limit {
            return Err(LedgerError::ExceedsBlockLimit {
                cost,
                limit: self.profile.block_gas_limit,
            });
        }
        Ok(())
    }

    /// Includes a transaction whose execution outcome is already known.
    /// The ledger assigns the sender's next nonce.
    pub fn submit(&mut self, mut tx: Transaction, outcome: Outcome) -> Result<Receipt, LedgerError> {
        self.check_cost(tx.cost)?;
        if self.block_used + tx.cost > self.profile.block_gas_limit {
            self.height += 1;
            self.block_used = 0;
        }
        self.block_used += tx.cost;
        let nonce = self.nonces.entry(tx.sender.clone()).or_insert(0);
        tx.nonce = *nonce;
        *nonce += 1;
        let receipt = Receipt {
            block: self.height,
            cost: tx.cost,
            outcome,
        };
        self.entries.push(Entry {
            tx,
            receipt: receipt.clone(),
        });
        Ok(receipt)
    }

    /// Seals the current block and skips ahead by at least `seconds`.
    pub fn advance_time(&mut self, seconds: u64) {
        let blocks = seconds.div_ceil(self.profile.block_interval_secs).max(1);
        self.height += blocks;
        self.block_used = 0;
    }

    /// Seals the current block and moves to `height` if that is later.
    pub fn advance_to(&mut self, height: u64) {
        if height > self.height {
            self.height = height;
            self.block_used = 0;
        }
    }

    pub fn total_units(&self) -> u64 {
        self.entries.iter().map(|e| e.receipt.cost).sum()
    }

    /// Blocks spanned from genesis to the last inclusion.
    pub fn blocks_used(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.receipt.block + 1)
    }

    pub fn write_transcript<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn transcript(&self) -> String {
        let mut buf = Vec::new();
        self.write_transcript(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// `(phase, op) -> (count, units)` in first-seen order of phases.
    pub fn cost_breakdown(&self) -> Vec<CostLine> {
        let mut lines: Vec<CostLine> = Vec::new();
        for e in &self.entries {
            let op = &e.tx.operation;
            match lines.iter_mut().find(|l| l.op == op.name()) {
                Some(l) => {
                    l.count += 1;
                    l.units += e.receipt.cost;
                }
                None => lines.push(CostLine {
                    phase: op.phase().into(),
                    op: op.name().into(),
                    count: 1,
                    units: e.receipt.cost,
                }),
            }
        }
        lines
    }

    pub fn write_cost_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for line in self.cost_breakdown() {
            w.serialize(line)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLine {
    pub phase: String,
    pub op: String,
    pub count: u64,
    pub units: u64,
}

struct AnyVoter;

impl Eligibility for AnyVoter {
    fn is_eligible(&self, _: BoothId, _: &Address) -> bool {
        true
    }
}

fn params_for_candidates(k: usize) -> GroupParams {
    // three voters need m = 2 bits per candidate
    if 2 * k < 128 {
        fixtures::p128(3, k).expect("fits the 128-bit prime")
    } else {
        let bits = u32::try_from(2 * k + 2).expect("k fits in u32");
        GroupParams::generate(bits, 3, k, b"sbvote/meter").expect("bits sized for k")
    }
}

/// Operation counts of one honest `cast_vote` with `k` candidates, taken
/// from an instrumented run on a three-voter booth.
pub fn vote_op_counts(k: usize) -> OpCounts {
    assert!(k >= 1, "at least one candidate");
    let params = params_for_candidates(k);
    let eid = "meter";
    let mut booth = BoothState::new(BoothId(0), eid, params.clone(), BoothConfig::default());
    let mut scratch = OpCounts::default();
    let keys: Vec<_> = (0..3u8).map(|i| keygen(&params, eid, &[b'v', i])).collect();
    for (i, kp) in keys.iter().enumerate() {
        let addr = Address::from(format!("v{i}"));
        booth
            .sign_up(&AnyVoter, &addr, kp.public().clone(), 1, &mut scratch)
            .expect("fresh booth");
    }
    booth.precompute_right_markers(3, &mut scratch).expect("sign-up phase");
    booth.compute_mpc_batch(0, &mut scratch).expect("single batch");
    let h = booth.mpc_key(0).expect("computed").clone();
    let ctx = ProofContext::new(&params, eid);
    let (vote, proof) = prove_membership(&ctx, &keys[0], &h, k, b"meter").expect("valid choice");
    let mut counts = OpCounts::default();
    booth
        .cast_vote(&Address::from("v0"), 0, vote, &proof, &mut counts)
        .expect("honest vote");
    counts
}

pub fn meter_vote_cost(model: &CostModel, k: usize) -> u64 {
    model.units(&vote_op_counts(k))
}

/// Total cost of closing sign-up plus every MPC batch transaction for a
/// booth of `n` voters, divided by `n`.
pub fn meter_mpc_cost_per_voter(model: &CostModel, n: usize, batch: usize) -> f64 {
    assert!(n >= 3 && (1..=n).contains(&batch), "need 3 <= n and 1 <= batch <= n");
    let params = fixtures::p64(n as u64, 1).expect("n fits the 64-bit prime");
    let mut booth = BoothState::new(BoothId(0), "meter", params.clone(), BoothConfig::default());
    let mut scratch = OpCounts::default();
    for i in 0..n {
        let pk = params.g_pow(&params.scalar_from_u64(i as u64 + 1));
        booth
            .sign_up(&AnyVoter, &Address::from(format!("v{i}")), pk, 1, &mut scratch)
            .expect("fresh booth");
    }
    let mut total = 0u64;
    let mut counts = OpCounts::default();
    booth
        .precompute_right_markers(batch, &mut counts)
        .expect("sign-up phase");
    total += model.units(&counts);
    for b in 0..booth.batch_count() {
        let mut counts = OpCounts::default();
        booth.compute_mpc_batch(b, &mut counts).expect("in order");
        total += model.units(&counts);
    }
    total as f64 / n as f64
}

/// Voting-phase capacity: blocks in the period times votes per block.
pub fn capacity(profile: &PlatformProfile, model: &CostModel, k: usize, period_secs: u64) -> u64 {
    let per_block = profile.block_gas_limit / meter_vote_cost(model, k);
    profile.blocks_in(period_secs) * per_block
}

/// Largest `k` whose vote transaction fits in one block (0 if none does).
pub fn max_candidates(profile: &PlatformProfile, model: &CostModel) -> usize {
    const CAP: usize = 512;
    let mut best = 0;
    for k in 1..=CAP {
        if meter_vote_cost(model, k) > profile.block_gas_limit {
            break;
        }
        best = k;
    }
    best
}

/// A quoted throughput figure: `voters` votes with `k` candidates fit into
/// `period_secs` of blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityAnchor {
    pub k: usize,
    pub period_secs: u64,
    pub voters: u64,
}

const DAY: u64 = 24 * 60 * 60;

/// Harmony figures: two candidates over two and five days, and 38
/// candidates over five days.
pub const HARMONY_ANCHORS: [CapacityAnchor; 3] = [
    CapacityAnchor {
        k: 2,
        period_secs: 2 * DAY,
        voters: 1_500_000,
    },
    CapacityAnchor {
        k: 2,
        period_secs: 5 * DAY,
        voters: 3_800_000,
    },
    CapacityAnchor {
        k: 38,
        period_secs: 5 * DAY,
        voters: 216_000,
    },
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("anchors use the same candidate count, so they cannot separate overhead from per-candidate cost")]
    Degenerate,
    #[error("anchors imply a non-positive {0}")]
    Infeasible(&'static str),
}

/// Solves the transaction overhead and the exponentiation price so that the
/// vote cost at both anchors equals the per-vote block budget they imply.
/// Every other price is taken from `base`. Results are rounded down so the
/// anchors' votes-per-block figures are met, never missed.
pub fn calibrate(
    profile: &PlatformProfile,
    base: &CostModel,
    a: CapacityAnchor,
    b: CapacityAnchor,
) -> Result<CostModel, CalibrationError> {
    let budget =
        |x: &CapacityAnchor| profile.block_gas_limit as f64 * profile.blocks_in(x.period_secs) as f64 / x.voters as f64;
    let (ca, cb) = (vote_op_counts(a.k), vote_op_counts(b.k));
    if ca.exps == cb.exps {
        return Err(CalibrationError::Degenerate);
    }
    let ra = budget(&a) - base.units_without(&ca) as f64;
    let rb = budget(&b) - base.units_without(&cb) as f64;
    let e = (rb - ra) / (cb.exps as f64 - ca.exps as f64);
    let t = ra - e * ca.exps as f64;
    if e < 0.0 {
        return Err(CalibrationError::Infeasible("exponentiation price"));
    }
    if t < 1.0 {
        return Err(CalibrationError::Infeasible("transaction overhead"));
    }
    Ok(CostModel {
        tx_overhead: t.floor() as u64,
        exponentiation: e.floor() as u64,
        ..*base
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(cost: u64) -> Transaction {
        Transaction {
            sender: Address::from("a"),
            target: Target::Main,
            operation: Operation::RepairVotes,
            cost,
            nonce: 0,
        }
    }

    fn small_ledger() -> Ledger {
        let profile = PlatformProfile {
            name: "test".into(),
            block_gas_limit: 100,
            block_interval_secs: 5,
        };
        Ledger::new(profile, CostModel::default())
    }

    #[test]
    fn block_packing() {
        let mut l = small_ledger();
        assert_eq!(l.submit(tx(60), Outcome::Accepted).unwrap().block, 0);
        assert_eq!(l.submit(tx(40), Outcome::Accepted).unwrap().block, 0);
        assert_eq!(l.submit(tx(1), Outcome::Accepted).unwrap().block, 1);
        let r = l.submit(tx(100), Outcome::Rejected("no".into())).unwrap();
        assert_eq!(r.block, 2);
        assert_eq!(l.entries()[3].tx.nonce, 3);
        assert_eq!(
            l.submit(tx(101), Outcome::Accepted),
            Err(LedgerError::ExceedsBlockLimit { cost: 101, limit: 100 })
        );
        assert_eq!(l.entries().len(), 4);
        assert_eq!(l.total_units(), 201);
    }

    #[test]
    fn time_advances_whole_blocks() {
        let mut l = small_ledger();
        l.submit(tx(10), Outcome::Accepted).unwrap();
        l.advance_time(11);
        assert_eq!(l.height(), 3);
        assert_eq!(l.now_secs(), 15);
        assert_eq!(l.submit(tx(10), Outcome::Accepted).unwrap().block, 3);
        l.advance_to(2);
        assert_eq!(l.height(), 3);
    }

    #[test]
    fn transcript_is_json_lines() {
        let mut l = small_ledger();
        l.submit(tx(10), Outcome::Accepted).unwrap();
        l.submit(tx(20), Outcome::Rejected("bad".into())).unwrap();
        let text = l.transcript();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let e: Entry = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(e.receipt.outcome, Outcome::Rejected("bad".into()));
        assert!(lines[0].contains(r#""op":"repair_votes""#));
    }

    #[test]
    fn cost_csv_columns() {
        let mut l = small_ledger();
        l.submit(tx(10), Outcome::Accepted).unwrap();
        l.submit(tx(20), Outcome::Accepted).unwrap();
        let mut out = Vec::new();
        l.write_cost_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "phase,op,count,units\nfault-recovery,repair_votes,2,30\n");
    }

    #[test]
    fn vote_counts_grow_with_k() {
        let c1 = vote_op_counts(1);
        let c2 = vote_op_counts(2);
        assert_eq!(c1.exps, 4);
        assert_eq!(c2.exps, 8);
        assert_eq!(c2.inversions, 2);
        assert_eq!(c2.writes, 1);
    }

    #[test]
    fn mpc_cost_extremes() {
        let m = CostModel::default();
        let n = 12;
        let one = meter_mpc_cost_per_voter(&m, n, 1);
        let all = meter_mpc_cost_per_voter(&m, n, n);
        let mid = meter_mpc_cost_per_voter(&m, n, 4);
        assert!(one > mid, "{one} {mid}");
        // one transaction per voter at least
        assert!(one >= m.tx_overhead as f64);
        assert!(all < one);
    }

    #[test]
    fn calibration_reproduces_frozen_constants() {
        let m = calibrate(
            &PlatformProfile::harmony_like(),
            &CostModel::BASE,
            HARMONY_ANCHORS[1],
            HARMONY_ANCHORS[2],
        )
        .unwrap();
        assert_eq!(m, CostModel::harmony_like());
    }

    #[test]
    fn calibration_rejects_same_k() {
        let r = calibrate(
            &PlatformProfile::harmony_like(),
            &CostModel::BASE,
            HARMONY_ANCHORS[0],
            HARMONY_ANCHORS[1],
        );
        assert_eq!(r, Err(CalibrationError::Degenerate));
    }

    #[test]
    fn candidate_limits() {
        let m = CostModel::default();
        assert_eq!(max_candidates(&PlatformProfile::harmony_like(), &m), 38);
        assert_eq!(max_candidates(&PlatformProfile::gnosis_like(), &m), 14);
    }

    #[test]
    fn capacity_scales_with_period_and_limit() {
        let m = CostModel::default();
        let h = PlatformProfile::harmony_like();
        let two = capacity(&h, &m, 2, 2 * DAY);
        let five = capacity(&h, &m, 2, 5 * DAY);
        assert_eq!(five * 2, two * 5);
        let mut big = h.clone();
        big.block_gas_limit *= 2;
        let doubled = capacity(&big, &m, 2, 2 * DAY);
        assert!(doubled >= 2 * two && doubled <= 2 * two + h.blocks_in(2 * DAY));
    }
}
