//! Main contract: enrollment, pseudo-random group assignment, booth
//! directory, eligibility queries, tally aggregation and deposit settlement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::booth::{BoothId, Eligibility, Tally};
use crate::group::GroupParams;

/// A wallet address on the simulated ledger.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(String);

impl Address {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for Address {
    fn from(s: String) -> Self {
        Address(s)
    }
}

impl From<&str> for Address {
    fn from(s: &str) -> Self {
        Address(s.to_string())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MainError {
    #[error("{0} is not the voting authority")]
    NotAuthority(Address),
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(MainPhase),
    #[error("need at least 3 enrolled voters, have {0}")]
    TooFewVoters(usize),
    #[error("group size must be at least 3, got {0}")]
    BadGroupSize(usize),
    #[error("groups of up to {needed} voters exceed the parameter bound n_max = {n_max}")]
    ParamsTooSmall { needed: usize, n_max: u64 },
    #[error("unknown booth {0}")]
    UnknownBooth(BoothId),
    #[error("booth {0} already reported a tally")]
    DuplicateBooth(BoothId),
    #[error("booth {0} is not finished")]
    BoothOpen(BoothId),
    #[error("tally has {got} counts, expected {expected}")]
    MalformedTally { expected: usize, got: usize },
    #[error("inconsistent settlement lists: {0}")]
    InconsistentLists(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MainPhase {
    Enrollment,
    Assigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoothStatus {
    Open,
    Closed,
    Voided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoothDescriptor {
    pub booth_id: BoothId,
    pub voters: Vec<Address>,
    pub params: GroupParams,
    pub status: BoothStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepositStatus {
    Escrowed,
    Refundable,
    Forfeit,
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositRecord {
    pub voter: Address,
    pub amount: u64,
    pub status: DepositStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollReport {
    pub accepted: usize,
    pub rejected: Vec<Address>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositTotals {
    pub escrowed: u64,
    pub refunded: u64,
    pub forfeit: u64,
    pub outstanding: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainState {
    election_id: String,
    authority: Address,
    phase: MainPhase,
    params: GroupParams,
    enrolled: Vec<Address>,
    enrolled_set: BTreeSet<Address>,
    assignment: BTreeMap<Address, BoothId>,
    booths: BTreeMap<BoothId, BoothDescriptor>,
    booth_tallies: BTreeMap<BoothId, Tally>,
    final_tally: Option<Tally>,
    deposits: BTreeMap<Address, DepositRecord>,
    escrowed_total: u64,
    group_size: usize,
    seed: Vec<u8>,
}

impl Eligibility for MainState {
    fn is_eligible(&self, booth: BoothId, address: &Address) -> bool {
        self.is_eligible(booth, address).unwrap_or(false)
    }
}

/// Uniform index in `0..bound` from `SHA-256(seed || counter)`, with rejection
/// sampling against modulo bias.
fn hash_index(seed: &[u8], counter: &mut u64, bound: u64) -> u64 {
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let mut h = Sha256::new();
        h.update(b"sbvote/assign");
        h.update(seed);
        h.update(counter.to_be_bytes());
        *counter += 1;
        let digest = h.finalize();
        let v = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        if v < zone {
            return v % bound;
        }
    }
}

/// Chunk sizes for `n` voters. Chunks of `group_size`; a trailing chunk of
/// `r < 3` voters takes one voter from each of the last `3 - r` groups when
/// `group_size > 3`, otherwise its members are added one per group to the
/// last groups.
pub fn group_sizes(n: usize, group_size: usize) -> Vec<usize> {
    let full = n / group_size;
    let rem = n % group_size;
    let mut sizes = vec![group_size; full];
    if rem == 0 {
        return sizes;
    }
    if rem >= 3 || full == 0 {
        sizes.push(rem);
        return sizes;
    }
    let need = 3 - rem;
    if group_size > 3 && full >= need {
        for s in sizes.iter_mut().rev().take(need) {
            *s -= 1;
        }
        sizes.push(3);
    } else {
        let len = sizes.len();
        for t in 0..rem {
            sizes[len - 1 - (t % len)] += 1;
        }
    }
    sizes
}

impl MainState {
    pub fn new(election_id: &str, authority: Address, params: GroupParams) -> Self {
        MainState {
            election_id: election_id.to_string(),
            authority,
            phase: MainPhase::Enrollment,
            params,
            enrolled: Vec::new(),
            enrolled_set: BTreeSet::new(),
            assignment: BTreeMap::new(),
            booths: BTreeMap::new(),
            booth_tallies: BTreeMap::new(),
            final_tally: None,
            deposits: BTreeMap::new(),
            escrowed_total: 0,
            group_size: 0,
            seed: Vec::new(),
        }
    }

    pub fn election_id(&self) -> &str {
        &self.election_id
    }

    pub fn authority(&self) -> &Address {
        &self.authority
    }

    pub fn phase(&self) -> MainPhase {
        self.phase
    }

    pub fn params(&self) -> &GroupParams {
        &self.params
    }

    pub fn enrolled(&self) -> &[Address] {
        &self.enrolled
    }

    pub fn booths(&self) -> &BTreeMap<BoothId, BoothDescriptor> {
        &self.booths
    }

    pub fn booth_of(&self, address: &Address) -> Option<BoothId> {
        self.assignment.get(address).copied()
    }

    pub fn booth_tallies(&self) -> &BTreeMap<BoothId, Tally> {
        &self.booth_tallies
    }

    pub fn final_tally(&self) -> Option<&Tally> {
        self.final_tally.as_ref()
    }

    pub fn deposit(&self, address: &Address) -> Option<&DepositRecord> {
        self.deposits.get(address)
    }

    pub fn deposits(&self) -> &BTreeMap<Address, DepositRecord> {
        &self.deposits
    }

    fn require_authority(&self, caller: &Address) -> Result<(), MainError> {
        if caller == &self.authority {
            Ok(())
        } else {
            Err(MainError::NotAuthority(caller.clone()))
        }
    }

    fn require_phase(&self, phase: MainPhase) -> Result<(), MainError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(MainError::WrongPhase(self.phase))
        }
    }

    /// Appends addresses in order; duplicates are reported, not fatal.
    pub fn enroll_batch(&mut self, caller: &Address, addresses: &[Address]) -> Result<EnrollReport, MainError> {
        self.require_authority(caller)?;
        self.require_phase(MainPhase::Enrollment)?;
        let mut report = EnrollReport::default();
        for a in addresses {
            if self.enrolled_set.insert(a.clone()) {
                self.enrolled.push(a.clone());
                report.accepted += 1;
            } else {
                report.rejected.push(a.clone());
            }
        }
        Ok(report)
    }

    /// Shuffles the enrolled voters with a seeded Fisher-Yates permutation and
    /// cuts them into booths. Returns the new booth ids.
    pub fn assign_groups(
        &mut self,
        caller: &Address,
        group_size: usize,
        seed: &[u8],
    ) -> Result<Vec<BoothId>, MainError> {
        self.require_authority(caller)?;
        self.require_phase(MainPhase::Enrollment)?;
        if group_size < 3 {
            return Err(MainError::BadGroupSize(group_size));
        }
        let n = self.enrolled.len();
        if n < 3 {
            return Err(MainError::TooFewVoters(n));
        }
        let sizes = group_sizes(n, group_size);
        let largest = sizes.iter().copied().max().unwrap_or(0);
        if largest as u64 > self.params.n_max() {
            return Err(MainError::ParamsTooSmall {
                needed: largest,
                n_max: self.params.n_max(),
            });
        }

        let mut order = self.enrolled.clone();
        let mut counter = 0u64;
        for i in (1..n).rev() {
            let j = hash_index(seed, &mut counter, i as u64 + 1) as usize;
            order.swap(i, j);
        }

        let mut ids = Vec::with_capacity(sizes.len());
        let mut rest = order.as_slice();
        for (b, size) in sizes.into_iter().enumerate() {
            let (group, tail) = rest.split_at(size);
            rest = tail;
            let id = BoothId(b as u32);
            for a in group {
                self.assignment.insert(a.clone(), id);
            }
            self.booths.insert(
                id,
                BoothDescriptor {
                    booth_id: id,
                    voters: group.to_vec(),
                    params: self.params.clone(),
                    status: BoothStatus::Open,
                },
            );
            ids.push(id);
        }
        self.group_size = group_size;
        self.seed = seed.to_vec();
        self.phase = MainPhase::Assigned;
        Ok(ids)
    }

    pub fn is_eligible(&self, booth: BoothId, address: &Address) -> Result<bool, MainError> {
        if !self.booths.contains_key(&booth) {
            return Err(MainError::UnknownBooth(booth));
        }
        Ok(self.assignment.get(address) == Some(&booth))
    }

    /// Records a deposit (or a recovery top-up) received by a booth.
    pub fn escrow_deposit(&mut self, booth: BoothId, voter: &Address, amount: u64) -> Result<(), MainError> {
        if !self.is_eligible(booth, voter)? {
            return Err(MainError::InconsistentLists(format!("{voter} is not in {booth}")));
        }
        let rec = self.deposits.entry(voter.clone()).or_insert_with(|| DepositRecord {
            voter: voter.clone(),
            amount: 0,
            status: DepositStatus::Escrowed,
        });
        rec.amount += amount;
        self.escrowed_total += amount;
        Ok(())
    }

    pub fn mark_voided(&mut self, booth: BoothId) -> Result<(), MainError> {
        let desc = self.booths.get_mut(&booth).ok_or(MainError::UnknownBooth(booth))?;
        if desc.status != BoothStatus::Open {
            return Err(MainError::DuplicateBooth(booth));
        }
        desc.status = BoothStatus::Voided;
        self.refresh_final();
        Ok(())
    }

    /// Records a verified booth tally. The final tally appears once every
    /// non-voided booth has reported.
    pub fn submit_booth_tally(&mut self, booth: BoothId, tally: Tally) -> Result<(), MainError> {
        let k = self.params.k();
        let desc = self.booths.get(&booth).ok_or(MainError::UnknownBooth(booth))?;
        if desc.status != BoothStatus::Open || self.booth_tallies.contains_key(&booth) {
            return Err(MainError::DuplicateBooth(booth));
        }
        if tally.counts.len() != k {
            return Err(MainError::MalformedTally {
                expected: k,
                got: tally.counts.len(),
            });
        }
        self.booth_tallies.insert(booth, tally);
        if let Some(d) = self.booths.get_mut(&booth) {
            d.status = BoothStatus::Closed;
        }
        self.refresh_final();
        Ok(())
    }

    /// Component-wise sum of the booth tallies reported so far.
    pub fn partial_tally(&self) -> Tally {
        let mut counts = vec![0u64; self.params.k()];
        for t in self.booth_tallies.values() {
            for (acc, c) in counts.iter_mut().zip(&t.counts) {
                *acc += c;
            }
        }
        Tally::new(counts)
    }

    fn refresh_final(&mut self) {
        let pending = self.booths.values().any(|d| d.status == BoothStatus::Open);
        if !pending && !self.booths.is_empty() {
            self.final_tally = Some(self.partial_tally());
        }
    }

    /// Refunds correct voters and confiscates the deposits of stallers.
    pub fn settle_deposits(
        &mut self,
        booth: BoothId,
        correct: &[Address],
        forfeiting: &[Address],
    ) -> Result<(), MainError> {
        let desc = self.booths.get(&booth).ok_or(MainError::UnknownBooth(booth))?;
        if desc.status == BoothStatus::Open {
            return Err(MainError::BoothOpen(booth));
        }
        let correct_set: BTreeSet<&Address> = correct.iter().collect();
        let forfeit_set: BTreeSet<&Address> = forfeiting.iter().collect();
        if correct_set.len() != correct.len() || forfeit_set.len() != forfeiting.len() {
            return Err(MainError::InconsistentLists("repeated voter".into()));
        }
        if let Some(a) = correct_set.intersection(&forfeit_set).next() {
            return Err(MainError::InconsistentLists(format!("{a} in both lists")));
        }
        for a in correct.iter().chain(forfeiting) {
            if self.assignment.get(a) != Some(&booth) {
                return Err(MainError::InconsistentLists(format!("{a} is not in {booth}")));
            }
            match self.deposits.get(a) {
                Some(r) if r.status == DepositStatus::Escrowed => {}
                Some(_) => return Err(MainError::InconsistentLists(format!("{a} already settled"))),
                None => return Err(MainError::InconsistentLists(format!("{a} has no deposit"))),
            }
        }
        for a in correct {
            let rec = self.deposits.get_mut(a).expect("checked");
            rec.status = DepositStatus::Refundable;
            // the simulated ledger pays out immediately
            rec.status = DepositStatus::Refunded;
        }
        for a in forfeiting {
            self.deposits.get_mut(a).expect("checked").status = DepositStatus::Forfeit;
        }
        Ok(())
    }

    pub fn deposit_totals(&self) -> DepositTotals {
        let mut t = DepositTotals {
            escrowed: self.escrowed_total,
            ..Default::default()
        };
        for r in self.deposits.values() {
            match r.status {
                DepositStatus::Refunded => t.refunded += r.amount,
                DepositStatus::Forfeit => t.forfeit += r.amount,
                DepositStatus::Escrowed | DepositStatus::Refundable => t.outstanding += r.amount,
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::fixtures::p64;

    fn auth() -> Address {
        Address::from("authority")
    }

    fn voters(range: std::ops::Range<usize>) -> Vec<Address> {
        range.map(|i| Address::from(format!("v{i}"))).collect()
    }

    fn mc() -> MainState {
        MainState::new("e", auth(), p64(200, 2).unwrap())
    }

    #[test]
    fn enrollment_batches() {
        let mut s = mc();
        s.enroll_batch(&auth(), &voters(0..3)).unwrap();
        s.enroll_batch(&auth(), &voters(3..6)).unwrap();
        assert_eq!(s.enrolled(), voters(0..6).as_slice());
        let mut batch = voters(6..8);
        batch.push(Address::from("v2"));
        let r = s.enroll_batch(&auth(), &batch).unwrap();
        assert_eq!(r.accepted, 2);
        assert_eq!(r.rejected, vec![Address::from("v2")]);
        assert_eq!(
            s.enroll_batch(&Address::from("mallory"), &voters(9..10)),
            Err(MainError::NotAuthority(Address::from("mallory")))
        );
    }

    #[test]
    fn rebalancing_rule() {
        assert_eq!(group_sizes(10, 4), vec![4, 3, 3]);
        assert_eq!(group_sizes(3, 100), vec![3]);
        assert_eq!(group_sizes(12, 4), vec![4, 4, 4]);
        assert_eq!(group_sizes(9, 4), vec![3, 3, 3]);
        assert_eq!(group_sizes(10, 3), vec![3, 3, 4]);
        assert_eq!(group_sizes(5, 4), vec![5]);
        assert_eq!(group_sizes(7, 5), vec![4, 3]);
    }

    #[test]
    fn assignment_partitions_and_is_deterministic() {
        let mut a = mc();
        a.enroll_batch(&auth(), &voters(0..10)).unwrap();
        let mut b = a.clone();
        let ids = a.assign_groups(&auth(), 4, b"block-hash").unwrap();
        b.assign_groups(&auth(), 4, b"block-hash").unwrap();
        assert_eq!(a, b);
        let mut sizes: Vec<usize> = a.booths().values().map(|d| d.voters.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert_eq!(ids.len(), 3);
        let mut seen = BTreeSet::new();
        for d in a.booths().values() {
            for v in &d.voters {
                assert!(seen.insert(v.clone()));
                assert!(a.is_eligible(d.booth_id, v).unwrap());
            }
        }
        assert_eq!(seen.len(), 10);

        let mut c = mc();
        c.enroll_batch(&auth(), &voters(0..10)).unwrap();
        c.assign_groups(&auth(), 4, b"other").unwrap();
        assert_ne!(a.booths(), c.booths());
    }

    #[test]
    fn assignment_errors() {
        let mut s = mc();
        s.enroll_batch(&auth(), &voters(0..2)).unwrap();
        assert_eq!(s.assign_groups(&auth(), 3, b"s"), Err(MainError::TooFewVoters(2)));
        assert_eq!(s.assign_groups(&auth(), 2, b"s"), Err(MainError::BadGroupSize(2)));
        s.enroll_batch(&auth(), &voters(2..3)).unwrap();
        s.assign_groups(&auth(), 100, b"s").unwrap();
        assert_eq!(s.booths().len(), 1);
        assert_eq!(
            s.assign_groups(&auth(), 3, b"s"),
            Err(MainError::WrongPhase(MainPhase::Assigned))
        );
        assert_eq!(
            s.enroll_batch(&auth(), &voters(5..6)),
            Err(MainError::WrongPhase(MainPhase::Assigned))
        );
    }

    #[test]
    fn eligibility() {
        let mut s = mc();
        s.enroll_batch(&auth(), &voters(0..6)).unwrap();
        s.assign_groups(&auth(), 3, b"s").unwrap();
        let v = Address::from("v0");
        let mine = s.booth_of(&v).unwrap();
        let other = BoothId(1 - mine.0);
        assert!(s.is_eligible(mine, &v).unwrap());
        assert!(!s.is_eligible(other, &v).unwrap());
        assert!(!s.is_eligible(mine, &Address::from("stranger")).unwrap());
        assert_eq!(s.is_eligible(BoothId(7), &v), Err(MainError::UnknownBooth(BoothId(7))));
    }

    #[test]
    fn aggregation() {
        let mut s = mc();
        s.enroll_batch(&auth(), &voters(0..6)).unwrap();
        s.assign_groups(&auth(), 3, b"s").unwrap();
        s.submit_booth_tally(BoothId(0), Tally::new(vec![2, 1])).unwrap();
        assert!(s.final_tally().is_none());
        assert_eq!(s.partial_tally(), Tally::new(vec![2, 1]));
        assert_eq!(
            s.submit_booth_tally(BoothId(0), Tally::new(vec![2, 1])),
            Err(MainError::DuplicateBooth(BoothId(0)))
        );
        assert_eq!(
            s.submit_booth_tally(BoothId(9), Tally::new(vec![2, 1])),
            Err(MainError::UnknownBooth(BoothId(9)))
        );
        s.submit_booth_tally(BoothId(1), Tally::new(vec![0, 3])).unwrap();
        assert_eq!(s.final_tally(), Some(&Tally::new(vec![2, 4])));
    }

    #[test]
    fn voided_booth_does_not_block_final() {
        let mut s = mc();
        s.enroll_batch(&auth(), &voters(0..6)).unwrap();
        s.assign_groups(&auth(), 3, b"s").unwrap();
        s.mark_voided(BoothId(1)).unwrap();
        s.submit_booth_tally(BoothId(0), Tally::new(vec![1, 2])).unwrap();
        assert_eq!(s.final_tally(), Some(&Tally::new(vec![1, 2])));
    }

    #[test]
    fn deposits_settle_and_conserve() {
        let mut s = mc();
        s.enroll_batch(&auth(), &voters(0..3)).unwrap();
        s.assign_groups(&auth(), 3, b"s").unwrap();
        let b = BoothId(0);
        for v in voters(0..3) {
            s.escrow_deposit(b, &v, 10).unwrap();
        }
        let vs = voters(0..3);
        assert_eq!(s.settle_deposits(b, &vs[..2], &vs[2..]), Err(MainError::BoothOpen(b)));
        s.submit_booth_tally(b, Tally::new(vec![1, 1])).unwrap();
        assert!(matches!(
            s.settle_deposits(b, &vs[..2], &vs[1..]),
            Err(MainError::InconsistentLists(_))
        ));
        assert!(matches!(
            s.settle_deposits(b, &[Address::from("zz")], &[]),
            Err(MainError::InconsistentLists(_))
        ));
        s.settle_deposits(b, &vs[..2], &vs[2..]).unwrap();
        assert_eq!(s.deposit(&vs[0]).unwrap().status, DepositStatus::Refunded);
        assert_eq!(s.deposit(&vs[2]).unwrap().status, DepositStatus::Forfeit);
        let t = s.deposit_totals();
        assert_eq!((t.escrowed, t.refunded, t.forfeit, t.outstanding), (30, 20, 10, 0));
    }
}
