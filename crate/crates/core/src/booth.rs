//! Booth contract: one self-tallying election over a group of voters.
//!
//! Life cycle: `SignUp -> PreVoting -> Voting -> (FaultRecovery)* -> Tally ->
//! Closed`. Every mutating operation either succeeds or leaves the state
//! untouched, and records the work it performed into an [`OpCounts`] so the
//! ledger can charge for it (rejected calls are charged too).
//!
//! MPC keys follow `h_i = prod_{j<i} pk_j / prod_{j>i} pk_j`, computed in
//! batches: a single backward pass stores one "right marker" per batch (the
//! product of every key after the batch), and each batch then rebuilds its
//! right-hand products from its marker while carrying the running left-hand
//! product (`act_left`) from batch to batch.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{Metered, OpCounts};
use crate::group::{GroupElement, GroupParams, Scalar};
use crate::keys::BlindedVote;
use crate::main_contract::Address;
use crate::zkp::{verify_dh_metered, verify_membership_metered, DhProof, MembershipProof, ProofContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoothId(pub u32);

impl std::fmt::Display for BoothId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "booth-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    SignUp,
    PreVoting,
    Voting,
    FaultRecovery,
    Tally,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoothError {
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(Phase),
    #[error("{0} is not assigned to this booth")]
    NotEligible(Address),
    #[error("{0} already signed up")]
    Duplicate(Address),
    #[error("deposit of {got} does not match the required {expected}")]
    BadDeposit { expected: u64, got: u64 },
    #[error("public key is not a group element")]
    InvalidKey,
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("expected batch {expected}, got {got}")]
    OutOfOrderBatch { expected: usize, got: usize },
    #[error("no signed-up voter with index {0}")]
    UnknownVoter(usize),
    #[error("sender {sender} does not own voter index {index}")]
    NotVoter { sender: Address, index: usize },
    #[error("voter {0} already voted")]
    AlreadyVoted(usize),
    #[error("proof rejected")]
    InvalidProof,
    #[error("malformed proof")]
    MalformedProof,
    #[error("voting deadline at block {deadline} not reached (now {now})")]
    DeadlineNotReached { deadline: u64, now: u64 },
    #[error("every active voter delivered all shares; nothing new to exclude")]
    NoNewStallers,
    #[error("share ({active}, {stalled}) does not pair an active voter with a stalled one")]
    WrongPair { active: usize, stalled: usize },
    #[error("share ({active}, {stalled}) already submitted")]
    DuplicateShare { active: usize, stalled: usize },
    #[error("voter {index} owes a recovery deposit of {amount}")]
    DepositRequired { index: usize, amount: u64 },
    #[error("missing shares {0:?}")]
    MissingShares(Vec<(usize, usize)>),
    #[error("tally must have {k} counts summing to {votes}")]
    MalformedTally { k: usize, votes: u64 },
    #[error("claimed tally does not match the product of votes")]
    TallyMismatch,
}

/// Answers "is this address assigned to this booth?"; implemented by the main
/// contract, which is the only holder of voter addresses.
pub trait Eligibility {
    fn is_eligible(&self, booth: BoothId, address: &Address) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoothConfig {
    pub deposit: u64,
    /// Extra deposit demanded from every active voter in recovery round `r`
    /// is `r * recovery_deposit_step`; zero disables top-ups.
    pub recovery_deposit_step: u64,
    /// Block height after which missing votes may be declared stalled.
    pub voting_deadline: Option<u64>,
}

impl Default for BoothConfig {
    fn default() -> Self {
        BoothConfig {
            deposit: 1,
            recovery_deposit_step: 0,
            voting_deadline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub counts: Vec<u64>,
}

impl Tally {
    pub fn new(counts: Vec<u64>) -> Self {
        Tally { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub address: Address,
    pub pk: GroupElement,
}

/// Settlement outcome of a finished booth: who gets the deposit back.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Settlement {
    pub correct: Vec<(Address, u64)>,
    pub forfeiting: Vec<(Address, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoothState {
    booth_id: BoothId,
    election_id: String,
    params: GroupParams,
    config: BoothConfig,
    phase: Phase,
    voided: bool,
    signed_up: Vec<Registration>,
    escrow: Vec<u64>,
    mpc_batch: usize,
    right_markers: Vec<GroupElement>,
    act_left: GroupElement,
    next_batch: usize,
    mpc_keys: Vec<GroupElement>,
    votes: BTreeMap<usize, BlindedVote>,
    repaired: BTreeMap<usize, GroupElement>,
    stalled: BTreeSet<usize>,
    /// active index -> stalled index -> g^(x_i x_j)
    shares: BTreeMap<usize, BTreeMap<usize, GroupElement>>,
    recovery_round: u32,
    topped_up: BTreeSet<usize>,
    tally: Option<Tally>,
}

impl BoothState {
    pub fn new(booth_id: BoothId, election_id: &str, params: GroupParams, config: BoothConfig) -> Self {
        BoothState {
            booth_id,
            election_id: election_id.to_string(),
            params,
            config,
            phase: Phase::SignUp,
            voided: false,
            signed_up: Vec::new(),
            escrow: Vec::new(),
            mpc_batch: 0,
            right_markers: Vec::new(),
            act_left: GroupElement::one(),
            next_batch: 0,
            mpc_keys: Vec::new(),
            votes: BTreeMap::new(),
            repaired: BTreeMap::new(),
            stalled: BTreeSet::new(),
            shares: BTreeMap::new(),
            recovery_round: 0,
            topped_up: BTreeSet::new(),
            tally: None,
        }
    }

    pub fn booth_id(&self) -> BoothId {
        self.booth_id
    }

    pub fn election_id(&self) -> &str {
        &self.election_id
    }

    pub fn params(&self) -> &GroupParams {
        &self.params
    }

    pub fn config(&self) -> &BoothConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_voided(&self) -> bool {
        self.voided
    }

    pub fn voter_count(&self) -> usize {
        self.signed_up.len()
    }

    pub fn registrations(&self) -> &[Registration] {
        &self.signed_up
    }

    pub fn index_of(&self, address: &Address) -> Option<usize> {
        self.signed_up.iter().position(|r| &r.address == address)
    }

    pub fn right_markers(&self) -> &[GroupElement] {
        &self.right_markers
    }

    pub fn mpc_keys(&self) -> &[GroupElement] {
        &self.mpc_keys
    }

    pub fn mpc_key(&self, index: usize) -> Option<&GroupElement> {
        self.mpc_keys.get(index)
    }

    pub fn batch_count(&self) -> usize {
        if self.mpc_batch == 0 {
            0
        } else {
            self.signed_up.len().div_ceil(self.mpc_batch)
        }
    }

    pub fn votes(&self) -> &BTreeMap<usize, BlindedVote> {
        &self.votes
    }

    pub fn repaired(&self) -> &BTreeMap<usize, GroupElement> {
        &self.repaired
    }

    pub fn stalled(&self) -> &BTreeSet<usize> {
        &self.stalled
    }

    pub fn recovery_round(&self) -> u32 {
        self.recovery_round
    }

    pub fn tally(&self) -> Option<&Tally> {
        self.tally.as_ref()
    }

    pub fn escrowed(&self, index: usize) -> u64 {
        self.escrow.get(index).copied().unwrap_or(0)
    }

    pub fn share(&self, active: usize, stalled: usize) -> Option<&GroupElement> {
        self.shares.get(&active).and_then(|m| m.get(&stalled))
    }

    /// Voters whose vote is counted: voted and never excluded.
    pub fn active(&self) -> Vec<usize> {
        self.votes
            .keys()
            .copied()
            .filter(|i| !self.stalled.contains(i))
            .collect()
    }

    /// Shares still owed in the current recovery round.
    pub fn missing_shares(&self) -> Vec<(usize, usize)> {
        let mut missing = Vec::new();
        for i in self.active() {
            for &j in &self.stalled {
                if self.share(i, j).is_none() {
                    missing.push((i, j));
                }
            }
        }
        missing
    }

    pub fn recovery_deposit_due(&self) -> u64 {
        self.config.recovery_deposit_step * u64::from(self.recovery_round)
    }

    fn ctx(&self) -> ProofContext<'_> {
        ProofContext::new(&self.params, &self.election_id)
    }

    fn require(&self, phase: Phase) -> Result<(), BoothError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(BoothError::WrongPhase(self.phase))
        }
    }

    fn require_owner(&self, sender: &Address, index: usize) -> Result<(), BoothError> {
        let reg = self.signed_up.get(index).ok_or(BoothError::UnknownVoter(index))?;
        if &reg.address == sender {
            Ok(())
        } else {
            Err(BoothError::NotVoter {
                sender: sender.clone(),
                index,
            })
        }
    }

    /// Registers an ephemeral public key together with the deposit.
    /// Returns the voter's index.
    pub fn sign_up(
        &mut self,
        mc: &impl Eligibility,
        address: &Address,
        pk: GroupElement,
        deposit: u64,
        counts: &mut OpCounts,
    ) -> Result<usize, BoothError> {
        self.require(Phase::SignUp)?;
        counts.read(2);
        if !mc.is_eligible(self.booth_id, address) {
            return Err(BoothError::NotEligible(address.clone()));
        }
        if self.index_of(address).is_some() {
            return Err(BoothError::Duplicate(address.clone()));
        }
        if deposit != self.config.deposit {
            return Err(BoothError::BadDeposit {
                expected: self.config.deposit,
                got: deposit,
            });
        }
        if !self.params.contains(&pk) || pk.is_one() {
            return Err(BoothError::InvalidKey);
        }
        counts.write(2);
        self.signed_up.push(Registration {
            address: address.clone(),
            pk,
        });
        self.escrow.push(deposit);
        Ok(self.signed_up.len() - 1)
    }

    /// Closes sign-up and stores one right marker per MPC batch. A booth with
    /// fewer than three voters is voided instead (phase `Closed`).
    pub fn precompute_right_markers(&mut self, mpc_batch: usize, counts: &mut OpCounts) -> Result<(), BoothError> {
        self.require(Phase::SignUp)?;
        if mpc_batch == 0 {
            return Err(BoothError::InvalidBatchSize);
        }
        let n = self.signed_up.len();
        counts.read(1);
        if n < 3 {
            counts.write(1);
            self.voided = true;
            self.phase = Phase::Closed;
            return Ok(());
        }
        let pks: Vec<&GroupElement> = self.signed_up.iter().map(|r| &r.pk).collect();
        let batches = n.div_ceil(mpc_batch);
        let mut markers = vec![GroupElement::one(); batches];
        let mut m = Metered::new(&self.params, counts);
        let mut acc = GroupElement::one();
        for b in (0..batches).rev() {
            markers[b] = acc.clone();
            if b == 0 {
                break;
            }
            let start = b * mpc_batch;
            let end = ((b + 1) * mpc_batch).min(n);
            for pk in &pks[start..end] {
                m.counts.read(1);
                acc = m.mul(&acc, pk);
            }
        }
        counts.write(batches as u64 + 2);
        self.mpc_batch = mpc_batch;
        self.right_markers = markers;
        self.act_left = GroupElement::one();
        self.next_batch = 0;
        self.mpc_keys.clear();
        self.phase = Phase::PreVoting;
        Ok(())
    }

    /// Computes the MPC keys of batch `batch_index`; batches must run in order.
    pub fn compute_mpc_batch(&mut self, batch_index: usize, counts: &mut OpCounts) -> Result<(), BoothError> {
        self.require(Phase::PreVoting)?;
        if batch_index != self.next_batch {
            return Err(BoothError::OutOfOrderBatch {
                expected: self.next_batch,
                got: batch_index,
            });
        }
        let n = self.signed_up.len();
        let start = batch_index * self.mpc_batch;
        let end = ((batch_index + 1) * self.mpc_batch).min(n);
        let len = end - start;
        let pks: Vec<&GroupElement> = self.signed_up[start..end].iter().map(|r| &r.pk).collect();
        counts.read(2 + len as u64);
        counts.transient(2 * len as u64);

        let mut m = Metered::new(&self.params, counts);
        // right_tab[t] = prod of pk_j for j > start + t
        let mut right_tab = vec![GroupElement::one(); len];
        right_tab[len - 1] = self.right_markers[batch_index].clone();
        for t in (0..len - 1).rev() {
            right_tab[t] = m.mul(&right_tab[t + 1], pks[t + 1]);
        }
        let mut act_left = self.act_left.clone();
        let mut keys = Vec::with_capacity(len);
        for t in 0..len {
            keys.push(m.div(&act_left, &right_tab[t]));
            act_left = m.mul(&act_left, pks[t]);
        }
        counts.write(len as u64 + 1);

        self.mpc_keys.extend(keys);
        self.act_left = act_left;
        self.next_batch += 1;
        if self.next_batch == self.batch_count() {
            self.phase = Phase::Voting;
        }
        Ok(())
    }

    /// Stores a blinded vote if its membership proof verifies.
    pub fn cast_vote(
        &mut self,
        sender: &Address,
        index: usize,
        vote: BlindedVote,
        proof: &MembershipProof,
        counts: &mut OpCounts,
    ) -> Result<(), BoothError> {
        self.require(Phase::Voting)?;
        self.require_owner(sender, index)?;
        counts.read(3 + self.params.k() as u64);
        if self.votes.contains_key(&index) {
            return Err(BoothError::AlreadyVoted(index));
        }
        let pk = &self.signed_up[index].pk;
        let h = &self.mpc_keys[index];
        match verify_membership_metered(&self.ctx(), pk, h, &vote, proof, counts) {
            Ok(true) => {}
            Ok(false) => return Err(BoothError::InvalidProof),
            Err(_) => return Err(BoothError::MalformedProof),
        }
        counts.write(1);
        self.votes.insert(index, vote);
        Ok(())
    }

    /// Declares stalled voters and (re)starts fault recovery.
    ///
    /// From `Voting`: every signed-up voter without a vote is stalled; if
    /// there is none the booth moves straight to `Tally`. From
    /// `FaultRecovery`: every active voter that has not delivered all of its
    /// shares joins the stalled set and a new round begins.
    pub fn open_fault_recovery(&mut self, now: u64, counts: &mut OpCounts) -> Result<(), BoothError> {
        let newly: BTreeSet<usize> = match self.phase {
            Phase::Voting => {
                if let Some(deadline) = self.config.voting_deadline {
                    if now < deadline {
                        return Err(BoothError::DeadlineNotReached { deadline, now });
                    }
                }
                counts.read(self.signed_up.len() as u64);
                (0..self.signed_up.len())
                    .filter(|i| !self.votes.contains_key(i))
                    .collect()
            }
            Phase::FaultRecovery => {
                counts.read((self.active().len() * self.stalled.len()) as u64);
                let newly: BTreeSet<usize> = self.missing_shares().into_iter().map(|(i, _)| i).collect();
                if newly.is_empty() {
                    return Err(BoothError::NoNewStallers);
                }
                newly
            }
            other => return Err(BoothError::WrongPhase(other)),
        };
        counts.write(newly.len() as u64 + 1);
        if newly.is_empty() {
            // nobody stalled: votes are already final
            self.repaired = self.votes.iter().map(|(&i, v)| (i, v.0.clone())).collect();
            self.phase = Phase::Tally;
            return Ok(());
        }
        self.stalled.extend(newly);
        self.recovery_round += 1;
        self.topped_up.clear();
        self.phase = Phase::FaultRecovery;
        Ok(())
    }

    /// Pays the escalating per-round recovery deposit.
    pub fn top_up_deposit(
        &mut self,
        sender: &Address,
        index: usize,
        amount: u64,
        counts: &mut OpCounts,
    ) -> Result<(), BoothError> {
        self.require(Phase::FaultRecovery)?;
        self.require_owner(sender, index)?;
        counts.read(1);
        let due = self.recovery_deposit_due();
        if !self.active().contains(&index) {
            return Err(BoothError::UnknownVoter(index));
        }
        if due == 0 || self.topped_up.contains(&index) || amount != due {
            return Err(BoothError::BadDeposit {
                expected: if self.topped_up.contains(&index) { 0 } else { due },
                got: amount,
            });
        }
        counts.write(1);
        self.escrow[index] += amount;
        self.topped_up.insert(index);
        Ok(())
    }

    /// Submits the key material `g^(x_i x_j)` of active voter `i` for one or
    /// more stalled voters `j`. All shares in the call are accepted or none.
    pub fn submit_shares(
        &mut self,
        sender: &Address,
        active: usize,
        shares: &[(usize, DhProof)],
        counts: &mut OpCounts,
    ) -> Result<(), BoothError> {
        self.require(Phase::FaultRecovery)?;
        self.require_owner(sender, active)?;
        let is_active = self.votes.contains_key(&active) && !self.stalled.contains(&active);
        let due = self.recovery_deposit_due();
        if is_active && due > 0 && !self.topped_up.contains(&active) {
            return Err(BoothError::DepositRequired {
                index: active,
                amount: due,
            });
        }
        let mut seen = BTreeSet::new();
        for (j, proof) in shares {
            let j = *j;
            counts.read(3);
            if !is_active || !self.stalled.contains(&j) {
                return Err(BoothError::WrongPair { active, stalled: j });
            }
            if self.share(active, j).is_some() || !seen.insert(j) {
                return Err(BoothError::DuplicateShare { active, stalled: j });
            }
            let pk_i = &self.signed_up[active].pk;
            let pk_j = &self.signed_up[j].pk;
            if !verify_dh_metered(&self.ctx(), pk_i, pk_j, proof, counts) {
                return Err(BoothError::InvalidProof);
            }
        }
        counts.write(shares.len() as u64);
        let entry = self.shares.entry(active).or_default();
        for (j, proof) in shares {
            entry.insert(*j, proof.shared.clone());
        }
        Ok(())
    }

    /// Single-share convenience wrapper; the share must equal `proof.C`.
    pub fn submit_share(
        &mut self,
        sender: &Address,
        active: usize,
        stalled: usize,
        share: &GroupElement,
        proof: &DhProof,
        counts: &mut OpCounts,
    ) -> Result<(), BoothError> {
        if &proof.shared != share {
            self.require(Phase::FaultRecovery)?;
            return Err(BoothError::InvalidProof);
        }
        self.submit_shares(sender, active, &[(stalled, proof.clone())], counts)
    }

    /// Removes every stalled voter's key material from the active votes:
    /// `B'_i = B_i * prod_{j in S, j > i} C_ij / prod_{j in S, j < i} C_ij`.
    pub fn repair_votes(&mut self, counts: &mut OpCounts) -> Result<(), BoothError> {
        self.require(Phase::FaultRecovery)?;
        let missing = self.missing_shares();
        if !missing.is_empty() {
            return Err(BoothError::MissingShares(missing));
        }
        let active = self.active();
        let mut repaired = BTreeMap::new();
        let mut m = Metered::new(&self.params, counts);
        for &i in &active {
            m.counts.read(1 + self.stalled.len() as u64);
            let mut b = self.votes[&i].0.clone();
            for &j in &self.stalled {
                let c = &self.shares[&i][&j];
                b = if j > i { m.mul(&b, c) } else { m.div(&b, c) };
            }
            repaired.insert(i, b);
        }
        counts.write(active.len() as u64 + 1);
        self.repaired = repaired;
        self.phase = Phase::Tally;
        Ok(())
    }

    /// Product of all counted (repaired) votes.
    pub fn vote_product(&self) -> GroupElement {
        self.params.product(self.repaired.values())
    }

    /// Checks `prod B_i == prod f_l^ct_l` and closes the booth on success.
    pub fn verify_booth_tally(&mut self, claimed: &Tally, counts: &mut OpCounts) -> Result<(), BoothError> {
        self.require(Phase::Tally)?;
        let k = self.params.k();
        let votes = self.repaired.len() as u64;
        if claimed.counts.len() != k || claimed.total() != votes {
            return Err(BoothError::MalformedTally { k, votes });
        }
        counts.read(votes + k as u64);
        let mut m = Metered::new(&self.params, counts);
        let mut lhs = GroupElement::one();
        for b in self.repaired.values() {
            lhs = m.mul(&lhs, b);
        }
        let mut rhs = GroupElement::one();
        for (f, &ct) in self.params.candidates().iter().zip(&claimed.counts) {
            let fc = m.pow(f, &Scalar::from_raw(ct.into()));
            rhs = m.mul(&rhs, &fc);
        }
        if lhs != rhs {
            return Err(BoothError::TallyMismatch);
        }
        counts.write(k as u64 + 1);
        self.tally = Some(claimed.clone());
        self.phase = Phase::Closed;
        Ok(())
    }

    /// Deposit outcome once the booth is closed: stalled voters forfeit,
    /// everyone else (or everyone, in a voided booth) is refunded.
    pub fn settlement(&self) -> Option<Settlement> {
        if self.phase != Phase::Closed {
            return None;
        }
        let mut s = Settlement::default();
        for (i, reg) in self.signed_up.iter().enumerate() {
            let entry = (reg.address.clone(), self.escrow[i]);
            if !self.voided && self.stalled.contains(&i) {
                s.forfeiting.push(entry);
            } else {
                s.correct.push(entry);
            }
        }
        Some(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::fixtures::{p23, p64};
    use crate::keys::{keygen, VoterKeypair};
    use crate::zkp::{prove_dh, prove_membership};
    use num_bigint::BigUint;

    struct Everyone;
    impl Eligibility for Everyone {
        fn is_eligible(&self, _: BoothId, _: &Address) -> bool {
            true
        }
    }

    struct Nobody;
    impl Eligibility for Nobody {
        fn is_eligible(&self, _: BoothId, _: &Address) -> bool {
            false
        }
    }

    fn addr(i: usize) -> Address {
        Address::from(format!("v{i}"))
    }

    fn el(v: u32) -> GroupElement {
        GroupElement::from_raw(BigUint::from(v))
    }

    fn c() -> OpCounts {
        OpCounts::default()
    }

    fn signed_up(params: &GroupParams, keys: &[VoterKeypair]) -> BoothState {
        let mut booth = BoothState::new(BoothId(0), "e", params.clone(), BoothConfig::default());
        for (i, k) in keys.iter().enumerate() {
            booth
                .sign_up(&Everyone, &addr(i), k.public().clone(), 1, &mut c())
                .unwrap();
        }
        booth
    }

    fn small_keys(params: &GroupParams, xs: &[u64]) -> Vec<VoterKeypair> {
        xs.iter()
            .map(|&x| VoterKeypair::from_secret(params, "e", params.scalar_from_u64(x)).unwrap())
            .collect()
    }

    fn run_mpc(booth: &mut BoothState, batch: usize) {
        booth.precompute_right_markers(batch, &mut c()).unwrap();
        for b in 0..booth.batch_count() {
            booth.compute_mpc_batch(b, &mut c()).unwrap();
        }
    }

    #[test]
    fn sign_up_rules() {
        let params = p23(3, 2).unwrap();
        let mut booth = BoothState::new(BoothId(1), "e", params.clone(), BoothConfig::default());
        assert_eq!(booth.sign_up(&Everyone, &addr(0), el(5), 1, &mut c()), Ok(0));
        assert_eq!(booth.sign_up(&Everyone, &addr(1), el(2), 1, &mut c()), Ok(1));
        let before = booth.clone();
        assert_eq!(
            booth.sign_up(&Everyone, &addr(0), el(3), 1, &mut c()),
            Err(BoothError::Duplicate(addr(0)))
        );
        assert_eq!(
            booth.sign_up(&Nobody, &addr(7), el(3), 1, &mut c()),
            Err(BoothError::NotEligible(addr(7)))
        );
        assert_eq!(
            booth.sign_up(&Everyone, &addr(7), el(3), 2, &mut c()),
            Err(BoothError::BadDeposit { expected: 1, got: 2 })
        );
        assert_eq!(
            booth.sign_up(&Everyone, &addr(7), el(23), 1, &mut c()),
            Err(BoothError::InvalidKey)
        );
        assert_eq!(booth, before);
    }

    #[test]
    fn right_markers_small() {
        let params = p23(5, 1).unwrap();
        let keys = small_keys(&params, &[1, 2, 3, 4]);
        let mut booth = signed_up(&params, &keys);
        booth.precompute_right_markers(2, &mut c()).unwrap();
        let pk = |i: usize| keys[i].public().clone();
        assert_eq!(
            booth.right_markers(),
            &[params.mul(&pk(2), &pk(3)), GroupElement::one()]
        );

        let mut booth = signed_up(&params, &keys[..3]);
        booth.precompute_right_markers(2, &mut c()).unwrap();
        assert_eq!(booth.right_markers(), &[pk(2), GroupElement::one()]);

        let mut booth = signed_up(&params, &keys);
        booth.precompute_right_markers(10, &mut c()).unwrap();
        assert_eq!(booth.right_markers(), &[GroupElement::one()]);
        assert_eq!(
            booth.precompute_right_markers(1, &mut c()),
            Err(BoothError::WrongPhase(Phase::PreVoting))
        );
    }

    #[test]
    fn mpc_keys_three_voters() {
        let params = p23(3, 2).unwrap();
        let keys = small_keys(&params, &[1, 2, 3]);
        for batch in 1..=4 {
            let mut booth = signed_up(&params, &keys);
            run_mpc(&mut booth, batch);
            assert_eq!(booth.mpc_keys(), &[el(15), el(12), el(10)], "batch {batch}");
            assert_eq!(booth.phase(), Phase::Voting);
        }
    }

    #[test]
    fn batches_must_run_in_order() {
        let params = p23(5, 1).unwrap();
        let keys = small_keys(&params, &[1, 2, 3, 4, 5]);
        let mut booth = signed_up(&params, &keys);
        booth.precompute_right_markers(2, &mut c()).unwrap();
        let before = booth.clone();
        assert_eq!(
            booth.compute_mpc_batch(1, &mut c()),
            Err(BoothError::OutOfOrderBatch { expected: 0, got: 1 })
        );
        assert_eq!(booth, before);
        assert_eq!(
            booth.precompute_right_markers(0, &mut c()),
            Err(BoothError::WrongPhase(Phase::PreVoting))
        );
    }

    #[test]
    fn under_filled_booth_is_voided() {
        let params = p23(3, 2).unwrap();
        let keys = small_keys(&params, &[1, 2]);
        let mut booth = signed_up(&params, &keys);
        booth.precompute_right_markers(2, &mut c()).unwrap();
        assert!(booth.is_voided());
        assert_eq!(booth.phase(), Phase::Closed);
        let s = booth.settlement().unwrap();
        assert_eq!(s.correct.len(), 2);
        assert!(s.forfeiting.is_empty());
    }

    fn voting_booth(n: usize, k: usize) -> (BoothState, Vec<VoterKeypair>) {
        let params = p64(16, k).unwrap();
        let keys: Vec<_> = (0..n).map(|i| keygen(&params, "e", &[i as u8])).collect();
        let mut booth = signed_up(&params, &keys);
        run_mpc(&mut booth, 2);
        (booth, keys)
    }

    fn cast(booth: &mut BoothState, keys: &[VoterKeypair], i: usize, choice: usize) {
        let ctx = ProofContext::new(booth.params(), "e");
        let h = booth.mpc_key(i).unwrap().clone();
        let (vote, proof) = prove_membership(&ctx, &keys[i], &h, choice, &[i as u8, 9]).unwrap();
        booth.cast_vote(&addr(i), i, vote, &proof, &mut c()).unwrap();
    }

    #[test]
    fn cast_vote_rules() {
        let (mut booth, keys) = voting_booth(3, 2);
        cast(&mut booth, &keys, 0, 1);
        let before = booth.clone();
        let params = booth.params().clone();
        let ctx = ProofContext::new(&params, "e");
        let h0 = booth.mpc_key(0).unwrap().clone();
        let (vote, proof) = prove_membership(&ctx, &keys[0], &h0, 2, b"x").unwrap();
        assert_eq!(
            booth.cast_vote(&addr(0), 0, vote.clone(), &proof, &mut c()),
            Err(BoothError::AlreadyVoted(0))
        );
        assert_eq!(
            booth.cast_vote(&addr(0), 1, vote.clone(), &proof, &mut c()),
            Err(BoothError::NotVoter {
                sender: addr(0),
                index: 1
            })
        );
        let h1 = booth.mpc_key(1).unwrap().clone();
        let (_, proof1) = prove_membership(&ctx, &keys[1], &h1, 1, b"y").unwrap();
        let (vote1b, _) = prove_membership(&ctx, &keys[1], &h1, 2, b"y").unwrap();
        assert_eq!(
            booth.cast_vote(&addr(1), 1, vote1b, &proof1, &mut c()),
            Err(BoothError::InvalidProof)
        );
        assert_eq!(booth, before);
    }

    #[test]
    fn all_voted_skips_recovery() {
        let (mut booth, keys) = voting_booth(3, 2);
        for i in 0..3 {
            cast(&mut booth, &keys, i, 1);
        }
        booth.open_fault_recovery(0, &mut c()).unwrap();
        assert_eq!(booth.phase(), Phase::Tally);
        assert!(booth.stalled().is_empty());
        let f1 = booth.params().candidates()[0].clone();
        assert_eq!(
            booth.vote_product(),
            booth.params().pow(&f1, &booth.params().scalar_from_u64(3))
        );
        let before = booth.clone();
        assert_eq!(
            booth.verify_booth_tally(&Tally::new(vec![2, 1]), &mut c()),
            Err(BoothError::TallyMismatch)
        );
        assert!(matches!(
            booth.verify_booth_tally(&Tally::new(vec![2, 0]), &mut c()),
            Err(BoothError::MalformedTally { .. })
        ));
        assert_eq!(booth, before);
        booth.verify_booth_tally(&Tally::new(vec![3, 0]), &mut c()).unwrap();
        assert_eq!(booth.phase(), Phase::Closed);
        assert_eq!(booth.settlement().unwrap().correct.len(), 3);
    }

    #[test]
    fn deadline_enforced() {
        let params = p64(16, 2).unwrap();
        let keys: Vec<_> = (0..3).map(|i| keygen(&params, "e", &[i as u8])).collect();
        let config = BoothConfig {
            voting_deadline: Some(10),
            ..BoothConfig::default()
        };
        let mut booth = BoothState::new(BoothId(0), "e", params, config);
        for (i, k) in keys.iter().enumerate() {
            booth
                .sign_up(&Everyone, &addr(i), k.public().clone(), 1, &mut c())
                .unwrap();
        }
        run_mpc(&mut booth, 3);
        assert_eq!(
            booth.open_fault_recovery(9, &mut c()),
            Err(BoothError::DeadlineNotReached { deadline: 10, now: 9 })
        );
        booth.open_fault_recovery(10, &mut c()).unwrap();
        assert_eq!(booth.stalled().len(), 3);
    }

    fn share_for(booth: &BoothState, keys: &[VoterKeypair], i: usize, j: usize) -> DhProof {
        let ctx = ProofContext::new(booth.params(), "e");
        let pk_j = booth.registrations()[j].pk.clone();
        prove_dh(&ctx, &keys[i], &pk_j, &[i as u8, j as u8]).unwrap()
    }

    #[test]
    fn recovery_with_one_staller() {
        let (mut booth, keys) = voting_booth(3, 2);
        cast(&mut booth, &keys, 0, 1);
        cast(&mut booth, &keys, 2, 2);
        booth.open_fault_recovery(0, &mut c()).unwrap();
        assert_eq!(booth.stalled(), &BTreeSet::from([1]));
        assert_eq!(booth.missing_shares(), vec![(0, 1), (2, 1)]);

        let p01 = share_for(&booth, &keys, 0, 1);
        booth
            .submit_share(&addr(0), 0, 1, &p01.shared.clone(), &p01, &mut c())
            .unwrap();
        let before = booth.clone();
        assert_eq!(
            booth.repair_votes(&mut c()),
            Err(BoothError::MissingShares(vec![(2, 1)]))
        );
        assert_eq!(
            booth.submit_share(&addr(0), 0, 1, &p01.shared.clone(), &p01, &mut c()),
            Err(BoothError::DuplicateShare { active: 0, stalled: 1 })
        );
        assert_eq!(
            booth.submit_share(&addr(0), 0, 2, &p01.shared.clone(), &p01, &mut c()),
            Err(BoothError::WrongPair { active: 0, stalled: 2 })
        );
        let mut forged = share_for(&booth, &keys, 2, 1);
        forged.shared = booth.params().mul(&forged.shared, booth.params().g());
        assert_eq!(
            booth.submit_share(&addr(2), 2, 1, &forged.shared.clone(), &forged, &mut c()),
            Err(BoothError::InvalidProof)
        );
        assert_eq!(booth, before);

        let p21 = share_for(&booth, &keys, 2, 1);
        booth
            .submit_share(&addr(2), 2, 1, &p21.shared.clone(), &p21, &mut c())
            .unwrap();
        booth.repair_votes(&mut c()).unwrap();
        assert_eq!(booth.phase(), Phase::Tally);
        booth.verify_booth_tally(&Tally::new(vec![1, 1]), &mut c()).unwrap();
        let s = booth.settlement().unwrap();
        assert_eq!(s.forfeiting, vec![(addr(1), 1)]);
    }

    #[test]
    fn second_round_excludes_share_withholder() {
        let (mut booth, keys) = voting_booth(5, 2);
        for i in 0..4 {
            cast(&mut booth, &keys, i, 1 + i % 2);
        }
        booth.open_fault_recovery(0, &mut c()).unwrap();
        // voter 1 withholds its share
        for i in [0, 2, 3] {
            let p = share_for(&booth, &keys, i, 4);
            booth.submit_shares(&addr(i), i, &[(4, p)], &mut c()).unwrap();
        }
        booth.open_fault_recovery(0, &mut c()).unwrap();
        assert_eq!(booth.recovery_round(), 2);
        assert_eq!(booth.stalled(), &BTreeSet::from([1, 4]));
        assert_eq!(booth.missing_shares(), vec![(0, 1), (2, 1), (3, 1)]);
        for i in [0, 2, 3] {
            let p = share_for(&booth, &keys, i, 1);
            booth.submit_shares(&addr(i), i, &[(1, p)], &mut c()).unwrap();
        }
        assert_eq!(booth.open_fault_recovery(0, &mut c()), Err(BoothError::NoNewStallers));
        booth.repair_votes(&mut c()).unwrap();
        // voters 0, 2 chose 1; voter 3 chose 2
        booth.verify_booth_tally(&Tally::new(vec![2, 1]), &mut c()).unwrap();
    }

    #[test]
    fn escalating_recovery_deposit() {
        let params = p64(16, 2).unwrap();
        let keys: Vec<_> = (0..3).map(|i| keygen(&params, "e", &[i as u8])).collect();
        let config = BoothConfig {
            deposit: 10,
            recovery_deposit_step: 5,
            voting_deadline: None,
        };
        let mut booth = BoothState::new(BoothId(0), "e", params, config);
        for (i, k) in keys.iter().enumerate() {
            booth
                .sign_up(&Everyone, &addr(i), k.public().clone(), 10, &mut c())
                .unwrap();
        }
        run_mpc(&mut booth, 3);
        cast(&mut booth, &keys, 0, 1);
        cast(&mut booth, &keys, 1, 1);
        booth.open_fault_recovery(0, &mut c()).unwrap();
        let p = share_for(&booth, &keys, 0, 2);
        assert_eq!(
            booth.submit_shares(&addr(0), 0, &[(2, p.clone())], &mut c()),
            Err(BoothError::DepositRequired { index: 0, amount: 5 })
        );
        assert!(booth.top_up_deposit(&addr(0), 0, 4, &mut c()).is_err());
        booth.top_up_deposit(&addr(0), 0, 5, &mut c()).unwrap();
        booth.submit_shares(&addr(0), 0, &[(2, p)], &mut c()).unwrap();
        assert_eq!(booth.escrowed(0), 15);
    }

    #[test]
    fn empty_tally_accepted() {
        let (mut booth, _) = voting_booth(3, 2);
        booth.open_fault_recovery(0, &mut c()).unwrap();
        assert_eq!(booth.phase(), Phase::FaultRecovery);
        assert!(booth.missing_shares().is_empty());
        booth.repair_votes(&mut c()).unwrap();
        booth.verify_booth_tally(&Tally::new(vec![0, 0]), &mut c()).unwrap();
    }

    #[test]
    fn operations_outside_phase_rejected() {
        let (mut booth, keys) = voting_booth(3, 2);
        assert_eq!(
            booth.sign_up(&Everyone, &addr(9), keys[0].public().clone(), 1, &mut c()),
            Err(BoothError::WrongPhase(Phase::Voting))
        );
        assert_eq!(booth.repair_votes(&mut c()), Err(BoothError::WrongPhase(Phase::Voting)));
        assert_eq!(
            booth.verify_booth_tally(&Tally::new(vec![0, 0]), &mut c()),
            Err(BoothError::WrongPhase(Phase::Voting))
        );
        assert_eq!(
            booth.compute_mpc_batch(0, &mut c()),
            Err(BoothError::WrongPhase(Phase::Voting))
        );
    }
}
