//! Whole-election driver.
//!
//! A [`World`] holds the main contract, one booth contract per group, the
//! ledger and the simulated voters' private keys. Every contract call is
//! executed on a copy of the target state, charged on the ledger, and
//! committed only if it succeeded. All randomness flows from the config
//! seed through labelled sub-seeds, so equal configs give equal transcripts.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::booth::{BoothConfig, BoothError, BoothId, BoothState, Phase, Tally};
use crate::cost::{CostModel, OpCounts};
use crate::group::{count_bits, GroupError, GroupParams};
use crate::keys::{keygen, VoterKeypair};
use crate::ledger::{
    capacity, meter_mpc_cost_per_voter, meter_vote_cost, Ledger, LedgerError, Operation, Outcome, PlatformProfile,
    Receipt, Target, Transaction,
};
use crate::main_contract::{group_sizes, Address, BoothStatus, DepositTotals, MainError, MainState};
use crate::rng::{seeded_rng, sub_seed};
use crate::tally::{search_space_size, solve, TallyError, TallyProblem};
use crate::zkp::{prove_dh, prove_membership, ProofContext, ZkpError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteDistribution {
    /// Relative weight per candidate; each voter draws independently.
    Weights(Vec<f64>),
    /// 1-based candidate per voter, in enrollment order.
    Choices(Vec<usize>),
}

fn default_election_id() -> String {
    "election".into()
}
fn default_deposit() -> u64 {
    1_000
}
fn default_profile() -> String {
    "harmony-like".into()
}
fn default_period() -> u64 {
    2 * 24 * 60 * 60
}
fn default_bits() -> u32 {
    64
}
fn default_enroll_batch() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_election_id")]
    pub election_id: String,
    pub n_voters: usize,
    pub k_candidates: usize,
    pub group_size: usize,
    pub mpc_batch: usize,
    #[serde(default = "default_deposit")]
    pub deposit_amount: u64,
    #[serde(default)]
    pub recovery_deposit_step: u64,
    #[serde(default = "default_profile")]
    pub platform_profile: String,
    #[serde(default = "default_period")]
    pub voting_period_seconds: u64,
    pub seed: String,
    #[serde(default = "default_bits")]
    pub prime_bits: u32,
    /// Entry 0 lists voters (enrollment index) that never cast a vote.
    /// Entry `r` lists voters that withhold their shares in recovery round `r`.
    #[serde(default)]
    pub stall_plan: Vec<Vec<usize>>,
    pub vote_distribution: VoteDistribution,
    /// Shares per recovery transaction; 0 sends all of a voter's shares at once.
    #[serde(default)]
    pub share_batch: usize,
    #[serde(default = "default_enroll_batch")]
    pub enroll_batch: usize,
}

impl ScenarioConfig {
    /// Honest election with every voter picking candidate 1.
    pub fn simple(n_voters: usize, k_candidates: usize, group_size: usize, seed: &str) -> Self {
        ScenarioConfig {
            election_id: default_election_id(),
            n_voters,
            k_candidates,
            group_size,
            mpc_batch: group_size,
            deposit_amount: default_deposit(),
            recovery_deposit_step: 0,
            platform_profile: default_profile(),
            voting_period_seconds: default_period(),
            seed: seed.into(),
            prime_bits: default_bits(),
            stall_plan: Vec::new(),
            vote_distribution: VoteDistribution::Choices(vec![1; n_voters]),
            share_batch: 0,
            enroll_batch: default_enroll_batch(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.n_voters < 3 {
            return bad(format!("need at least 3 voters, got {}", self.n_voters));
        }
        if self.k_candidates == 0 {
            return bad("need at least one candidate".into());
        }
        if self.group_size < 3 {
            return bad(format!("group_size must be at least 3, got {}", self.group_size));
        }
        if self.mpc_batch == 0 {
            return bad("mpc_batch must be at least 1".into());
        }
        if self.enroll_batch == 0 {
            return bad("enroll_batch must be at least 1".into());
        }
        if PlatformProfile::by_name(&self.platform_profile).is_none() {
            return bad(format!("unknown platform profile {:?}", self.platform_profile));
        }
        for (r, round) in self.stall_plan.iter().enumerate() {
            if let Some(&i) = round.iter().find(|&&i| i >= self.n_voters) {
                return bad(format!("stall_plan[{r}] names voter {i} of {}", self.n_voters));
            }
        }
        match &self.vote_distribution {
            VoteDistribution::Weights(w) => {
                if w.len() != self.k_candidates {
                    return bad(format!("{} weights for {} candidates", w.len(), self.k_candidates));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
                    return bad("weights must be non-negative and not all zero".into());
                }
            }
            VoteDistribution::Choices(c) => {
                if c.len() != self.n_voters {
                    return bad(format!("{} choices for {} voters", c.len(), self.n_voters));
                }
                if let Some(x) = c.iter().find(|&&x| x == 0 || x > self.k_candidates) {
                    return bad(format!("choice {x} outside 1..={}", self.k_candidates));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self) -> PlatformProfile {
        PlatformProfile::by_name(&self.platform_profile).expect("validated")
    }

    /// Largest booth the assignment will produce.
    pub fn n_max(&self) -> u64 {
        group_sizes(self.n_voters, self.group_size)
            .into_iter()
            .max()
            .unwrap_or(3)
            .max(3) as u64
    }

    /// Prime size actually used: raised when `k * m` would not fit.
    pub fn effective_bits(&self) -> u32 {
        let need = self.k_candidates as u64 * u64::from(count_bits(self.n_max())) + 2;
        self.prime_bits.max(16).max(need as u32)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Proof(#[from] ZkpError),
    #[error("{op} rejected in block {}: {reason}", receipt.block)]
    Rejected {
        op: &'static str,
        reason: String,
        receipt: Receipt,
    },
    #[error("{booth}: {source}")]
    Tally { booth: BoothId, source: TallyError },
}

pub fn voter_address(i: usize) -> Address {
    Address::from(format!("voter-{i:06}"))
}

pub fn authority_address() -> Address {
    Address::from("authority")
}

fn booth_address(id: BoothId) -> Address {
    Address::from(id.to_string())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    config: ScenarioConfig,
    params: GroupParams,
    model: CostModel,
    main: MainState,
    booths: BTreeMap<BoothId, BoothState>,
    ledger: Ledger,
    voters: Vec<VoterKeypair>,
    choices: Vec<usize>,
    index: BTreeMap<Address, usize>,
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let seed = sub_seed(config.seed.as_bytes(), "params", 0);
        let params = GroupParams::generate(config.effective_bits(), config.n_max(), config.k_candidates, &seed)?;
        Self::with_params(config, params)
    }

    /// Uses caller-supplied parameters instead of generating a prime.
    pub fn with_params(config: ScenarioConfig, params: GroupParams) -> Result<Self, ScenarioError> {
        config.validate()?;
        if params.k() != config.k_candidates || params.n_max() < config.n_max() {
            return Err(ScenarioError::Config(format!(
                "params have k = {} and n_max = {}, scenario needs k = {} and n_max >= {}",
                params.k(),
                params.n_max(),
                config.k_candidates,
                config.n_max()
            )));
        }
        let root = config.seed.as_bytes();
        let eid = config.election_id.as_str();
        let voters: Vec<VoterKeypair> = (0..config.n_voters)
            .map(|i| keygen(&params, eid, &sub_seed(root, "voter-key", i as u64)))
            .collect();
        let choices = match &config.vote_distribution {
            VoteDistribution::Choices(c) => c.clone(),
            VoteDistribution::Weights(w) => {
                let dist = WeightedIndex::new(w).map_err(|e| ScenarioError::Config(e.to_string()))?;
                (0..config.n_voters)
                    .map(|i| dist.sample(&mut seeded_rng(&sub_seed(root, "choice", i as u64))) + 1)
                    .collect()
            }
        };
        let index = (0..config.n_voters).map(|i| (voter_address(i), i)).collect();
        let model = CostModel::default();
        Ok(World {
            main: MainState::new(eid, authority_address(), params.clone()),
            ledger: Ledger::new(config.profile(), model),
            booths: BTreeMap::new(),
            config,
            params,
            model,
            voters,
            choices,
            index,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn params(&self) -> &GroupParams {
        &self.params
    }

    pub fn main(&self) -> &MainState {
        &self.main
    }

    pub fn booths(&self) -> &BTreeMap<BoothId, BoothState> {
        &self.booths
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Configured 1-based choice of every voter, in enrollment order.
    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn voter_index(&self, address: &Address) -> Option<usize> {
        self.index.get(address).copied()
    }

    fn record(
        &mut self,
        sender: &Address,
        target: Target,
        operation: Operation,
        counts: &OpCounts,
        error: Option<String>,
    ) -> Result<(), ScenarioError> {
        let op = operation.name();
        let tx = Transaction {
            sender: sender.clone(),
            target,
            operation,
            cost: self.model.units(counts),
            nonce: self.ledger.next_nonce(sender),
        };
        let outcome = match &error {
            None => Outcome::Accepted,
            Some(e) => Outcome::Rejected(e.clone()),
        };
        let receipt = self.ledger.submit(tx, outcome)?;
        match error {
            None => Ok(()),
            Some(reason) => Err(ScenarioError::Rejected { op, reason, receipt }),
        }
    }

    fn exec_booth<T>(
        &mut self,
        booth: BoothId,
        sender: &Address,
        op: Operation,
        f: impl FnOnce(&mut BoothState, &MainState, &mut OpCounts) -> Result<T, BoothError>,
    ) -> Result<T, ScenarioError> {
        let mut next = self.booths[&booth].clone();
        let mut counts = OpCounts::default();
        let res = f(&mut next, &self.main, &mut counts);
        let error = res.as_ref().err().map(ToString::to_string);
        self.ledger.check_cost(self.model.units(&counts))?;
        self.record(sender, Target::Booth(booth), op, &counts, error)?;
        self.booths.insert(booth, next);
        Ok(res.expect("errors returned above"))
    }

    fn exec_main<T>(
        &mut self,
        sender: &Address,
        op: Operation,
        f: impl FnOnce(&mut MainState, &mut OpCounts) -> Result<T, MainError>,
    ) -> Result<T, ScenarioError> {
        let mut next = self.main.clone();
        let mut counts = OpCounts::default();
        let res = f(&mut next, &mut counts);
        let error = res.as_ref().err().map(ToString::to_string);
        self.ledger.check_cost(self.model.units(&counts))?;
        self.record(sender, Target::Main, op, &counts, error)?;
        self.main = next;
        Ok(res.expect("errors returned above"))
    }

    fn stall_round(&self, round: usize) -> BTreeSet<usize> {
        self.config
            .stall_plan
            .get(round)
            .map(|r| r.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Authority enrolls every voter, `enroll_batch` addresses per transaction.
    pub fn enroll(&mut self) -> Result<(), ScenarioError> {
        let auth = authority_address();
        let all: Vec<Address> = (0..self.config.n_voters).map(voter_address).collect();
        for chunk in all.chunks(self.config.enroll_batch) {
            let op = Operation::EnrollBatch {
                addresses: chunk.to_vec(),
            };
            self.exec_main(&auth, op, |mc, c| {
                c.read(chunk.len() as u64);
                let r = mc.enroll_batch(&auth, chunk)?;
                c.write(r.accepted as u64);
                Ok(r)
            })?;
        }
        Ok(())
    }

    /// Shuffles voters into booths and deploys one booth contract per group.
    pub fn assign(&mut self) -> Result<(), ScenarioError> {
        let auth = authority_address();
        let seed = sub_seed(self.config.seed.as_bytes(), "assign", 0);
        let group_size = self.config.group_size;
        let op = Operation::AssignGroups {
            group_size,
            seed: hex(&seed),
        };
        let ids = self.exec_main(&auth, op, |mc, c| {
            let ids = mc.assign_groups(&auth, group_size, &seed)?;
            let n = mc.enrolled().len() as u64;
            c.read(n);
            c.hash(n);
            c.write(n + ids.len() as u64);
            Ok(ids)
        })?;
        let deadline = self.ledger.height() + self.config.profile().blocks_in(self.config.voting_period_seconds);
        let cfg = BoothConfig {
            deposit: self.config.deposit_amount,
            recovery_deposit_step: self.config.recovery_deposit_step,
            voting_deadline: Some(deadline),
        };
        for id in ids {
            let booth = BoothState::new(id, &self.config.election_id, self.params.clone(), cfg);
            self.booths.insert(id, booth);
        }
        Ok(())
    }

    /// Every assigned voter registers an ephemeral key with its booth.
    pub fn signup(&mut self) -> Result<(), ScenarioError> {
        let deposit = self.config.deposit_amount;
        let groups: Vec<(BoothId, Vec<Address>)> = self
            .main
            .booths()
            .iter()
            .map(|(id, d)| (*id, d.voters.clone()))
            .collect();
        for (id, voters) in groups {
            for a in voters {
                let pk = self.voters[self.index[&a]].public().clone();
                let op = Operation::SignUp {
                    pk: pk.clone(),
                    deposit,
                };
                self.exec_booth(id, &a, op, |b, mc, c| b.sign_up(mc, &a, pk, deposit, c))?;
                self.main.escrow_deposit(id, &a, deposit).expect("eligible voter");
            }
        }
        Ok(())
    }

    /// Closes sign-up and computes all MPC keys batch by batch. Under-filled
    /// booths are voided and refunded.
    pub fn mpc(&mut self) -> Result<(), ScenarioError> {
        let auth = authority_address();
        let batch = self.config.mpc_batch;
        let ids: Vec<BoothId> = self.booths.keys().copied().collect();
        for id in ids {
            let op = Operation::PrecomputeRightMarkers { mpc_batch: batch };
            self.exec_booth(id, &auth, op, |b, _, c| b.precompute_right_markers(batch, c))?;
            if self.booths[&id].is_voided() {
                self.void_booth(id)?;
                continue;
            }
            for i in 0..self.booths[&id].batch_count() {
                let op = Operation::ComputeMpcBatch { batch_index: i };
                self.exec_booth(id, &auth, op, |b, _, c| b.compute_mpc_batch(i, c))?;
            }
        }
        Ok(())
    }

    fn void_booth(&mut self, id: BoothId) -> Result<(), ScenarioError> {
        let addr = booth_address(id);
        self.exec_main(&addr, Operation::MarkVoided { booth: id }, |mc, c| {
            c.write(1);
            mc.mark_voided(id)
        })?;
        self.settle(id)
    }

    /// Every signed-up voter not listed in `stall_plan[0]` casts a vote.
    pub fn vote(&mut self) -> Result<(), ScenarioError> {
        let abstain = self.stall_round(0);
        let ids: Vec<BoothId> = self.booths.keys().copied().collect();
        for id in ids {
            if self.booths[&id].phase() != Phase::Voting {
                continue;
            }
            let regs = self.booths[&id].registrations().to_vec();
            for (i, reg) in regs.iter().enumerate() {
                let g = self.index[&reg.address];
                if abstain.contains(&g) {
                    continue;
                }
                let h = self.booths[&id].mpc_key(i).expect("keys computed").clone();
                let seed = sub_seed(self.config.seed.as_bytes(), "cast", g as u64);
                let ctx = ProofContext::new(&self.params, &self.config.election_id);
                let (vote, proof) = prove_membership(&ctx, &self.voters[g], &h, self.choices[g], &seed)?;
                let op = Operation::CastVote {
                    index: i,
                    vote: vote.clone(),
                    proof: proof.clone(),
                };
                let addr = reg.address.clone();
                self.exec_booth(id, &addr, op, |b, _, c| b.cast_vote(&addr, i, vote, &proof, c))?;
            }
        }
        Ok(())
    }

    /// Waits for the voting deadline and closes voting in every booth.
    pub fn close_voting(&mut self) -> Result<(), ScenarioError> {
        let auth = authority_address();
        let deadline = self
            .booths
            .values()
            .filter_map(|b| b.config().voting_deadline)
            .max()
            .unwrap_or(0);
        self.ledger.advance_to(deadline);
        let now = self.ledger.height();
        let ids: Vec<BoothId> = self.booths.keys().copied().collect();
        for id in ids {
            if self.booths[&id].phase() == Phase::Voting {
                self.exec_booth(id, &auth, Operation::OpenFaultRecovery, |b, _, c| {
                    b.open_fault_recovery(now, c)
                })?;
            }
        }
        Ok(())
    }

    /// Runs recovery rounds until every booth reaches `Tally`. In round `r`
    /// the voters listed in `stall_plan[r]` withhold their shares.
    pub fn recover(&mut self) -> Result<(), ScenarioError> {
        let ids: Vec<BoothId> = self.booths.keys().copied().collect();
        for id in ids {
            while self.booths[&id].phase() == Phase::FaultRecovery {
                self.recovery_round(id)?;
            }
        }
        Ok(())
    }

    fn recovery_round(&mut self, id: BoothId) -> Result<(), ScenarioError> {
        let auth = authority_address();
        let round = self.booths[&id].recovery_round() as usize;
        let withhold = self.stall_round(round);
        let root = self.config.seed.as_bytes().to_vec();
        for i in self.booths[&id].active() {
            let booth = &self.booths[&id];
            let addr = booth.registrations()[i].address.clone();
            let g = self.index[&addr];
            if withhold.contains(&g) {
                continue;
            }
            let due = booth.recovery_deposit_due();
            if due > 0 {
                let op = Operation::TopUpDeposit { index: i, amount: due };
                self.exec_booth(id, &addr, op, |b, _, c| b.top_up_deposit(&addr, i, due, c))?;
                self.main.escrow_deposit(id, &addr, due).expect("eligible voter");
            }
            let booth = &self.booths[&id];
            let owed: Vec<usize> = booth
                .stalled()
                .iter()
                .copied()
                .filter(|&j| booth.share(i, j).is_none())
                .collect();
            let ctx = ProofContext::new(&self.params, &self.config.election_id);
            let mut shares = Vec::with_capacity(owed.len());
            for j in owed {
                let pk_j = &booth.registrations()[j].pk;
                let gj = self.index[&booth.registrations()[j].address];
                let seed = sub_seed(&sub_seed(&root, "share", g as u64), "stalled", gj as u64);
                shares.push((j, prove_dh(&ctx, &self.voters[g], pk_j, &seed)?));
            }
            let per_tx = if self.config.share_batch == 0 {
                shares.len().max(1)
            } else {
                self.config.share_batch
            };
            for chunk in shares.chunks(per_tx) {
                let op = Operation::SubmitShares {
                    active: i,
                    shares: chunk.to_vec(),
                };
                self.exec_booth(id, &addr, op, |b, _, c| b.submit_shares(&addr, i, chunk, c))?;
            }
        }
        if self.booths[&id].missing_shares().is_empty() {
            self.exec_booth(id, &auth, Operation::RepairVotes, |b, _, c| b.repair_votes(c))
        } else {
            let now = self.ledger.height();
            self.exec_booth(id, &auth, Operation::OpenFaultRecovery, |b, _, c| {
                b.open_fault_recovery(now, c)
            })
        }
    }

    /// Solves every booth's tally off-chain, has the booth verify it and
    /// reports it to the main contract, then settles deposits.
    pub fn tally(&mut self) -> Result<(), ScenarioError> {
        let auth = authority_address();
        let ids: Vec<BoothId> = self.booths.keys().copied().collect();
        for id in ids {
            if self.booths[&id].phase() != Phase::Tally {
                continue;
            }
            let problem = TallyProblem::from_booth(&self.booths[&id])
                .map_err(|source| ScenarioError::Tally { booth: id, source })?;
            let tally = solve(&problem).map_err(|source| ScenarioError::Tally { booth: id, source })?;
            let op = Operation::VerifyBoothTally { tally: tally.clone() };
            self.exec_booth(id, &auth, op, |b, _, c| b.verify_booth_tally(&tally, c))?;
            self.aggregate_booth(id)?;
        }
        Ok(())
    }

    fn aggregate_booth(&mut self, id: BoothId) -> Result<(), ScenarioError> {
        let tally = self.booths[&id].tally().expect("booth closed").clone();
        let addr = booth_address(id);
        let k = tally.counts.len() as u64;
        let op = Operation::SubmitBoothTally {
            booth: id,
            tally: tally.clone(),
        };
        self.exec_main(&addr, op, |mc, c| {
            c.read(1 + k);
            c.write(1 + k);
            mc.submit_booth_tally(id, tally)
        })?;
        self.settle(id)
    }

    fn settle(&mut self, id: BoothId) -> Result<(), ScenarioError> {
        let s = self.booths[&id].settlement().expect("booth closed");
        let correct: Vec<Address> = s.correct.into_iter().map(|(a, _)| a).collect();
        let forfeiting: Vec<Address> = s.forfeiting.into_iter().map(|(a, _)| a).collect();
        let n = (correct.len() + forfeiting.len()) as u64;
        let op = Operation::SettleDeposits {
            booth: id,
            correct: correct.clone(),
            forfeiting: forfeiting.clone(),
        };
        let addr = booth_address(id);
        self.exec_main(&addr, op, |mc, c| {
            c.read(n);
            c.write(n);
            mc.settle_deposits(id, &correct, &forfeiting)
        })
    }

    /// Final tally, available once every non-voided booth has reported.
    pub fn aggregate(&self) -> Option<&Tally> {
        self.main.final_tally()
    }

    /// Runs all phases in order.
    pub fn run_all(&mut self) -> Result<(), ScenarioError> {
        self.enroll()?;
        self.assign()?;
        self.signup()?;
        self.mpc()?;
        self.vote()?;
        self.close_voting()?;
        self.recover()?;
        self.tally()
    }

    /// Configured choices of every voter whose vote ended up counted.
    pub fn expected_tally(&self) -> Tally {
        let mut counts = vec![0u64; self.config.k_candidates];
        for booth in self.booths.values() {
            if booth.is_voided() {
                continue;
            }
            let counted: Vec<usize> = if booth.phase() >= Phase::Tally {
                booth.repaired().keys().copied().collect()
            } else {
                booth.active()
            };
            for i in counted {
                let g = self.index[&booth.registrations()[i].address];
                counts[self.choices[g] - 1] += 1;
            }
        }
        Tally::new(counts)
    }

    pub fn report(&self) -> ElectionReport {
        let ledger = &self.ledger;
        let mut phase_costs: Vec<PhaseCost> = Vec::new();
        for e in ledger.entries() {
            let phase = e.tx.operation.phase();
            match phase_costs.iter_mut().find(|p| p.phase == phase) {
                Some(p) => {
                    p.transactions += 1;
                    p.units += e.receipt.cost;
                }
                None => phase_costs.push(PhaseCost {
                    phase: phase.into(),
                    transactions: 1,
                    units: e.receipt.cost,
                }),
            }
        }
        let booths = self
            .booths
            .values()
            .map(|b| {
                let id = b.booth_id();
                let units = ledger
                    .entries()
                    .iter()
                    .filter(|e| e.tx.target == Target::Booth(id))
                    .map(|e| e.receipt.cost)
                    .sum();
                BoothReport {
                    booth_id: id,
                    voters: b.voter_count(),
                    status: self.main.booths()[&id].status,
                    recovery_rounds: b.recovery_round(),
                    stalled: b
                        .stalled()
                        .iter()
                        .map(|&i| b.registrations()[i].address.clone())
                        .collect(),
                    tally: b.tally().cloned(),
                    units,
                }
            })
            .collect();
        let forfeited = self
            .main
            .deposits()
            .values()
            .filter(|r| r.status == crate::main_contract::DepositStatus::Forfeit)
            .map(|r| r.voter.clone())
            .collect();
        let profile = ledger.profile();
        let blocks = ledger.blocks_used();
        let vote_cost = meter_vote_cost(&self.model, self.config.k_candidates);
        let voting_capacity = capacity(
            profile,
            &self.model,
            self.config.k_candidates,
            self.config.voting_period_seconds,
        );
        ElectionReport {
            election_id: self.config.election_id.clone(),
            platform: profile.name.clone(),
            n_voters: self.config.n_voters,
            k_candidates: self.config.k_candidates,
            group_size: self.config.group_size,
            mpc_batch: self.config.mpc_batch,
            prime_bits: self.params.bits(),
            phase_costs,
            booths,
            final_tally: self.main.final_tally().cloned(),
            expected_tally: self.expected_tally(),
            deposits: DepositSummary {
                totals: self.main.deposit_totals(),
                forfeited,
            },
            capacity: CapacityReport {
                transactions: ledger.entries().len() as u64,
                blocks_used: blocks,
                units_used: ledger.total_units(),
                units_available: blocks * profile.block_gas_limit,
                vote_cost,
                voting_capacity,
                headroom: voting_capacity as i64 - self.config.n_voters as i64,
            },
            transcript_sha256: hex(&Sha256::digest(ledger.transcript().as_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub phase: String,
    pub transactions: u64,
    pub units: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoothReport {
    pub booth_id: BoothId,
    pub voters: usize,
    pub status: BoothStatus,
    pub recovery_rounds: u32,
    pub stalled: Vec<Address>,
    pub tally: Option<Tally>,
    pub units: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositSummary {
    pub totals: DepositTotals,
    pub forfeited: Vec<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub transactions: u64,
    pub blocks_used: u64,
    pub units_used: u64,
    pub units_available: u64,
    pub vote_cost: u64,
    /// Votes that fit into the voting period at this `k`.
    pub voting_capacity: u64,
    pub headroom: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionReport {
    pub election_id: String,
    pub platform: String,
    pub n_voters: usize,
    pub k_candidates: usize,
    pub group_size: usize,
    pub mpc_batch: usize,
    pub prime_bits: u64,
    pub phase_costs: Vec<PhaseCost>,
    pub booths: Vec<BoothReport>,
    pub final_tally: Option<Tally>,
    pub expected_tally: Tally,
    pub deposits: DepositSummary,
    pub capacity: CapacityReport,
    pub transcript_sha256: String,
}

impl ElectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ElectionReport, ScenarioError> {
    let mut world = World::new(config.clone())?;
    world.run_all()?;
    Ok(world.report())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    MpcBatch,
    K,
    N,
    Period,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mpc_batch" | "mpc-batch" => Ok(SweepAxis::MpcBatch),
            "k" => Ok(SweepAxis::K),
            "n" => Ok(SweepAxis::N),
            "period" => Ok(SweepAxis::Period),
            other => Err(format!("unknown axis {other:?}; use mpc_batch, k, n or period")),
        }
    }
}

/// Meters one point per value along `axis` and returns CSV.
///
/// * `mpc_batch`: per-voter MPC cost for a booth of `group_size` voters.
/// * `k`: vote cost and voting-period capacity.
/// * `n`: per-voter MPC cost at the configured batch size and tally search
///   space, for a booth of `n` voters.
/// * `period`: capacity at the configured `k`, in seconds.
pub fn sweep(config: &ScenarioConfig, axis: SweepAxis, values: &[u64]) -> Result<String, ScenarioError> {
    let profile = PlatformProfile::by_name(&config.platform_profile)
        .ok_or_else(|| ScenarioError::Config(format!("unknown platform profile {:?}", config.platform_profile)))?;
    let model = CostModel::default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ScenarioError::Config(e.to_string());
    match axis {
        SweepAxis::MpcBatch => {
            let n = config.group_size;
            w.write_record(["mpc_batch", "cost_per_voter"]).map_err(csv_err)?;
            for &v in values {
                let batch = v as usize;
                if batch == 0 || batch > n || n < 3 {
                    return Err(ScenarioError::Config(format!("batch {batch} outside 1..={n}")));
                }
                let cost = meter_mpc_cost_per_voter(&model, n, batch);
                w.write_record([v.to_string(), format!("{cost:.2}")]).map_err(csv_err)?;
            }
        }
        SweepAxis::K => {
            w.write_record(["k", "vote_cost", "max_voters"]).map_err(csv_err)?;
            for &k in values {
                if k == 0 {
                    return Err(ScenarioError::Config("k must be at least 1".into()));
                }
                let cost = meter_vote_cost(&model, k as usize);
                let cap = if cost > profile.block_gas_limit {
                    0
                } else {
                    capacity(&profile, &model, k as usize, config.voting_period_seconds)
                };
                w.write_record([k.to_string(), cost.to_string(), cap.to_string()])
                    .map_err(csv_err)?;
            }
        }
        SweepAxis::N => {
            w.write_record(["n", "mpc_cost_per_voter", "tally_search_space"])
                .map_err(csv_err)?;
            for &n in values {
                if n < 3 {
                    return Err(ScenarioError::Config(format!("booth size {n} below 3")));
                }
                let batch = config.mpc_batch.min(n as usize);
                let cost = meter_mpc_cost_per_voter(&model, n as usize, batch);
                let space = search_space_size(n, config.k_candidates as u64);
                w.write_record([n.to_string(), format!("{cost:.2}"), space.to_string()])
                    .map_err(csv_err)?;
            }
        }
        SweepAxis::Period => {
            w.write_record(["period_seconds", "max_voters"]).map_err(csv_err)?;
            for &p in values {
                let cap = capacity(&profile, &model, config.k_candidates, p);
                w.write_record([p.to_string(), cap.to_string()]).map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| ScenarioError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
