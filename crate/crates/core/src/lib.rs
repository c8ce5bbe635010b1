//! Scalable self-tallying voting.
//!
//! Voters are partitioned into booths. Every booth runs its own
//! self-tallying election (ephemeral keys, pairwise-cancelling MPC keys,
//! blinded votes with 1-out-of-k membership proofs, fault recovery and a
//! publicly checkable tally), and a main contract aggregates the booth
//! results. All contracts are modelled as deterministic state machines
//! that execute on a simulated ledger with abstract gas metering.

pub mod booth;
pub mod cost;
pub mod group;
pub mod keys;
pub mod ledger;
pub mod main_contract;
pub mod rng;
pub mod scenario;
pub mod tally;
pub mod zkp;

pub use booth::{BoothConfig, BoothError, BoothId, BoothState, Phase, Tally};
pub use cost::{CostModel, OpCounts};
pub use group::{GroupElement, GroupError, GroupParams, Scalar};
pub use keys::{derive_blinding_key, keygen, BlindedVote, BlindingKey, VoterKeypair};
pub use ledger::{
    capacity, meter_mpc_cost_per_voter, meter_vote_cost, Ledger, Operation, Outcome, PlatformProfile, Receipt, Target,
    Transaction,
};
pub use main_contract::{Address, DepositRecord, DepositStatus, MainError, MainState};
pub use scenario::{
    run_scenario, sweep, ElectionReport, ScenarioConfig, ScenarioError, SweepAxis, VoteDistribution, World,
};
pub use tally::{search_space_size, solve, TallyError, TallyProblem};
pub use zkp::{DhProof, MembershipProof, ProofContext};
