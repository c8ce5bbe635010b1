//! Non-interactive proofs used by the booth contract.
//!
//! * [`MembershipProof`]: a disjunctive Chaum-Pedersen proof that a blinded
//!   vote `B = h^x * f_l` hides one of the `k` candidate generators, without
//!   revealing which.
//! * [`DhProof`]: proof that `C = g^(x_i x_j)` was formed from the published
//!   keys `A = g^(x_i)` and `B = g^(x_j)`.
//!
//! Challenges are derived with Fiat-Shamir over a [`ChallengeTranscript`]
//! that binds a domain tag (election id and protocol phase), the full public
//! statement, and the prover's commitments. Scalars live modulo `p - 1`.

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cost::{Metered, OpCounts};
use crate::group::{GroupElement, GroupParams, Scalar};
use crate::keys::{BlindedVote, KeyError, VoterKeypair};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZkpError {
    #[error("choice {choice} outside 1..={k}")]
    ChoiceOutOfRange { choice: usize, k: usize },
    #[error("proof vectors must have length {expected}, got a={a} b={b} r={r} d={d}")]
    Malformed {
        expected: usize,
        a: usize,
        b: usize,
        r: usize,
        d: usize,
    },
    #[error(transparent)]
    Key(#[from] KeyError),
}

/// Which statement a proof belongs to; feeds the domain tag.
#[derive(Debug, Clone, Copy)]
pub struct ProofContext<'a> {
    pub params: &'a GroupParams,
    pub election_id: &'a str,
}

impl<'a> ProofContext<'a> {
    pub fn new(params: &'a GroupParams, election_id: &'a str) -> Self {
        ProofContext { params, election_id }
    }

    fn tag(&self, phase: &str) -> Vec<u8> {
        format!("sbvote/v1/{phase}/{}", self.election_id).into_bytes()
    }
}

const MEMBERSHIP_PHASE: &str = "cast";
const DH_PHASE: &str = "fault-recovery";

/// Canonical byte encoding of a Fiat-Shamir transcript.
///
/// Each item is `u8 label length || label || u32 big-endian value length ||
/// minimal big-endian value`. Statement and commitment items accumulate in
/// separate buffers so that the hash input is
/// `"sbvote-zk-v1" || len(tag) || tag || len(statement) || statement ||
/// len(commitments) || commitments` with `u32` big-endian lengths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChallengeTranscript {
    pub domain_tag: Vec<u8>,
    pub statement: Vec<u8>,
    pub commitments: Vec<u8>,
    items: u64,
}

fn put_item(buf: &mut Vec<u8>, label: &str, v: &BigUint) {
    let bytes = v.to_bytes_be();
    buf.push(label.len() as u8);
    buf.extend_from_slice(label.as_bytes());
    buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    buf.extend_from_slice(&bytes);
}

impl ChallengeTranscript {
    pub fn new(domain_tag: impl Into<Vec<u8>>) -> Self {
        ChallengeTranscript {
            domain_tag: domain_tag.into(),
            ..Default::default()
        }
    }

    pub fn statement(&mut self, label: &str, v: &BigUint) -> &mut Self {
        put_item(&mut self.statement, label, v);
        self.items += 1;
        self
    }

    pub fn commit(&mut self, label: &str, v: &BigUint) -> &mut Self {
        put_item(&mut self.commitments, label, v);
        self.items += 1;
        self
    }

    /// Number of absorbed items, used for metering.
    pub fn len(&self) -> u64 {
        self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"sbvote-zk-v1".to_vec();
        for part in [&self.domain_tag, &self.statement, &self.commitments] {
            out.extend_from_slice(&(part.len() as u32).to_be_bytes());
            out.extend_from_slice(part);
        }
        out
    }
}

/// SHA-256 of the canonical transcript, read big-endian and reduced mod `p - 1`.
pub fn hash_challenge(t: &ChallengeTranscript, params: &GroupParams) -> Scalar {
    let digest = Sha256::digest(t.to_bytes());
    params.scalar(BigUint::from_bytes_be(&digest))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipProof {
    pub a: Vec<GroupElement>,
    pub b: Vec<GroupElement>,
    pub r: Vec<Scalar>,
    pub d: Vec<Scalar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DhProof {
    #[serde(rename = "C")]
    pub shared: GroupElement,
    pub r: Scalar,
    pub m1: GroupElement,
    pub m2: GroupElement,
}

fn membership_statement(
    ctx: &ProofContext<'_>,
    pk: &GroupElement,
    h: &GroupElement,
    vote: &GroupElement,
) -> ChallengeTranscript {
    let params = ctx.params;
    let mut t = ChallengeTranscript::new(ctx.tag(MEMBERSHIP_PHASE));
    t.statement("p", params.p()).statement("g", params.g().value());
    for f in params.candidates() {
        t.statement("f", f.value());
    }
    t.statement("pk", pk.value())
        .statement("h", h.value())
        .statement("B", vote.value());
    t
}

fn membership_challenge(
    ctx: &ProofContext<'_>,
    pk: &GroupElement,
    h: &GroupElement,
    vote: &GroupElement,
    a: &[GroupElement],
    b: &[GroupElement],
) -> (Scalar, u64) {
    let mut t = membership_statement(ctx, pk, h, vote);
    for (al, bl) in a.iter().zip(b) {
        t.commit("a", al.value()).commit("b", bl.value());
    }
    (hash_challenge(&t, ctx.params), t.len())
}

/// Randomness consumed by one membership proof: `w` for the real branch and
/// `(r_l, d_l)` for every simulated branch, in candidate order.
#[derive(Debug, Clone)]
pub struct MembershipNonces {
    pub w: Scalar,
    pub simulated: Vec<(Scalar, Scalar)>,
}

impl MembershipNonces {
    pub fn draw<R: Rng + ?Sized>(params: &GroupParams, rng: &mut R) -> Self {
        let w = params.random_scalar(rng);
        let simulated = (1..params.k())
            .map(|_| (params.random_scalar(rng), params.random_scalar(rng)))
            .collect();
        MembershipNonces { w, simulated }
    }
}

/// Blinds `f_choice` with `h^x` and proves the result is a candidate.
pub fn prove_membership(
    ctx: &ProofContext<'_>,
    kp: &VoterKeypair,
    h: &GroupElement,
    choice: usize,
    seed: &[u8],
) -> Result<(BlindedVote, MembershipProof), ZkpError> {
    let mut rng = seeded_rng(seed);
    let nonces = MembershipNonces::draw(ctx.params, &mut rng);
    prove_membership_with(ctx, kp, h, choice, &nonces)
}

/// [`prove_membership`] with caller-supplied nonces.
pub fn prove_membership_with(
    ctx: &ProofContext<'_>,
    kp: &VoterKeypair,
    h: &GroupElement,
    choice: usize,
    nonces: &MembershipNonces,
) -> Result<(BlindedVote, MembershipProof), ZkpError> {
    let params = ctx.params;
    let k = params.k();
    kp.ensure_election(ctx.election_id)?;
    let f_choice = params
        .candidate(choice)
        .ok_or(ZkpError::ChoiceOutOfRange { choice, k })?;
    assert_eq!(nonces.simulated.len(), k - 1, "one nonce pair per simulated branch");

    let x = kp.secret();
    let pk = kp.public();
    let vote = params.mul(&params.pow(h, x), f_choice);

    let real = choice - 1;
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    let mut r = Vec::with_capacity(k);
    let mut d = Vec::with_capacity(k);
    let mut sims = nonces.simulated.iter();
    for (l, f) in params.candidates().iter().enumerate() {
        if l == real {
            a.push(params.g_pow(&nonces.w));
            b.push(params.pow(h, &nonces.w));
            r.push(Scalar::zero());
            d.push(Scalar::zero());
            continue;
        }
        let (rl, dl) = sims.next().expect("length checked");
        let neg_d = params.scalar_sub(&Scalar::zero(), dl);
        a.push(params.mul(&params.pow(pk, &neg_d), &params.g_pow(rl)));
        let ratio = params.div(&vote, f);
        b.push(params.mul(&params.pow(h, rl), &params.pow(&ratio, &neg_d)));
        r.push(rl.clone());
        d.push(dl.clone());
    }

    let (c, _) = membership_challenge(ctx, pk, h, &vote, &a, &b);
    let others = d
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != real)
        .fold(Scalar::zero(), |acc, (_, dl)| params.scalar_add(&acc, dl));
    d[real] = params.scalar_sub(&c, &others);
    r[real] = params.scalar_add(&nonces.w, &params.scalar_mul(x, &d[real]));

    Ok((BlindedVote(vote), MembershipProof { a, b, r, d }))
}

pub fn verify_membership(
    ctx: &ProofContext<'_>,
    pk: &GroupElement,
    h: &GroupElement,
    vote: &BlindedVote,
    proof: &MembershipProof,
) -> Result<bool, ZkpError> {
    verify_membership_metered(ctx, pk, h, vote, proof, &mut OpCounts::default())
}

/// Verifier with every group operation and hashed item recorded in `counts`.
/// `Err` only for structurally malformed proofs; a failed check is `Ok(false)`.
pub fn verify_membership_metered(
    ctx: &ProofContext<'_>,
    pk: &GroupElement,
    h: &GroupElement,
    vote: &BlindedVote,
    proof: &MembershipProof,
    counts: &mut OpCounts,
) -> Result<bool, ZkpError> {
    let params = ctx.params;
    let k = params.k();
    let MembershipProof { a, b, r, d } = proof;
    if a.len() != k || b.len() != k || r.len() != k || d.len() != k {
        return Err(ZkpError::Malformed {
            expected: k,
            a: a.len(),
            b: b.len(),
            r: r.len(),
            d: d.len(),
        });
    }
    let vote = &vote.0;
    let elements_ok = [pk, h, vote].into_iter().chain(a).chain(b).all(|e| params.contains(e));
    let scalars_ok = r.iter().chain(d).all(|s| s.value() < params.exp_mod());
    if !elements_ok || !scalars_ok {
        return Ok(false);
    }

    let (c, hashed) = membership_challenge(ctx, pk, h, vote, a, b);
    counts.hash(hashed);
    let sum_d = d.iter().fold(Scalar::zero(), |acc, dl| params.scalar_add(&acc, dl));
    if sum_d != c {
        return Ok(false);
    }

    let mut m = Metered::new(params, counts);
    for l in 0..k {
        let lhs = m.pow(params.g(), &r[l]);
        let pk_d = m.pow(pk, &d[l]);
        let rhs = m.mul(&a[l], &pk_d);
        if lhs != rhs {
            return Ok(false);
        }
        let lhs = m.pow(h, &r[l]);
        let ratio = m.div(vote, &params.candidates()[l]);
        let ratio_d = m.pow(&ratio, &d[l]);
        let rhs = m.mul(&b[l], &ratio_d);
        if lhs != rhs {
            return Ok(false);
        }
    }
    Ok(true)
}

fn dh_challenge(
    ctx: &ProofContext<'_>,
    pk_i: &GroupElement,
    pk_j: &GroupElement,
    shared: &GroupElement,
    m1: &GroupElement,
    m2: &GroupElement,
) -> (Scalar, u64) {
    let params = ctx.params;
    let mut t = ChallengeTranscript::new(ctx.tag(DH_PHASE));
    t.statement("p", params.p())
        .statement("g", params.g().value())
        .statement("A", pk_i.value())
        .statement("B", pk_j.value())
        .statement("C", shared.value())
        .commit("m1", m1.value())
        .commit("m2", m2.value());
    (hash_challenge(&t, params), t.len())
}

/// Proves `C = pk_j^(x_i)` for the prover's key pair `(x_i, pk_i)`.
pub fn prove_dh(
    ctx: &ProofContext<'_>,
    kp_i: &VoterKeypair,
    pk_j: &GroupElement,
    seed: &[u8],
) -> Result<DhProof, ZkpError> {
    let mut rng = seeded_rng(seed);
    let w = ctx.params.random_scalar(&mut rng);
    prove_dh_with(ctx, kp_i, pk_j, &w)
}

pub fn prove_dh_with(
    ctx: &ProofContext<'_>,
    kp_i: &VoterKeypair,
    pk_j: &GroupElement,
    w: &Scalar,
) -> Result<DhProof, ZkpError> {
    kp_i.ensure_election(ctx.election_id)?;
    let params = ctx.params;
    let x = kp_i.secret();
    let shared = params.pow(pk_j, x);
    let m1 = params.g_pow(w);
    let m2 = params.pow(pk_j, w);
    let (c, _) = dh_challenge(ctx, kp_i.public(), pk_j, &shared, &m1, &m2);
    let r = params.scalar_add(w, &params.scalar_mul(&c, x));
    Ok(DhProof { shared, r, m1, m2 })
}

pub fn verify_dh(ctx: &ProofContext<'_>, pk_i: &GroupElement, pk_j: &GroupElement, proof: &DhProof) -> bool {
    verify_dh_metered(ctx, pk_i, pk_j, proof, &mut OpCounts::default())
}

pub fn verify_dh_metered(
    ctx: &ProofContext<'_>,
    pk_i: &GroupElement,
    pk_j: &GroupElement,
    proof: &DhProof,
    counts: &mut OpCounts,
) -> bool {
    let params = ctx.params;
    let DhProof { shared, r, m1, m2 } = proof;
    if ![pk_i, pk_j, shared, m1, m2].into_iter().all(|e| params.contains(e)) || r.value() >= params.exp_mod() {
        return false;
    }
    let (c, hashed) = dh_challenge(ctx, pk_i, pk_j, shared, m1, m2);
    counts.hash(hashed);
    let mut m = Metered::new(params, counts);
    let lhs = m.pow(params.g(), r);
    let a_c = m.pow(pk_i, &c);
    if lhs != m.mul(m1, &a_c) {
        return false;
    }
    let lhs = m.pow(pk_j, r);
    let c_c = m.pow(shared, &c);
    lhs == m.mul(m2, &c_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::fixtures::{p23, p64};
    use crate::keys::keygen;

    fn kp(params: &GroupParams, x: u64) -> VoterKeypair {
        VoterKeypair::from_secret(params, "e", params.scalar_from_u64(x)).unwrap()
    }

    fn el(params: &GroupParams, v: u64) -> GroupElement {
        params.element(BigUint::from(v)).unwrap()
    }

    #[test]
    fn transcript_hash_is_deterministic_and_sensitive() {
        let params = p64(10, 2).unwrap();
        let mut t = ChallengeTranscript::new(b"tag".to_vec());
        t.statement("x", &BigUint::from(7u8)).commit("y", &BigUint::from(9u8));
        assert_eq!(hash_challenge(&t, &params), hash_challenge(&t.clone(), &params));
        let mut t2 = ChallengeTranscript::new(b"tag".to_vec());
        t2.statement("x", &BigUint::from(7u8)).commit("y", &BigUint::from(8u8));
        assert_ne!(hash_challenge(&t, &params), hash_challenge(&t2, &params));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn blinded_vote_on_small_fixture() {
        let params = p23(3, 2).unwrap();
        let ctx = ProofContext::new(&params, "e");
        let (vote, proof) = prove_membership(&ctx, &kp(&params, 3), &el(&params, 10), 1, b"s").unwrap();
        assert_eq!(vote.0, el(&params, 9));
        assert!(verify_membership(&ctx, &el(&params, 10), &el(&params, 10), &vote, &proof).unwrap());
    }

    #[test]
    fn single_candidate_degenerates_to_one_branch() {
        let params = p64(10, 1).unwrap();
        let ctx = ProofContext::new(&params, "e");
        let voter = keygen(&params, "e", b"v");
        let h = params.g_pow(&params.scalar_from_u64(1234));
        let (vote, proof) = prove_membership(&ctx, &voter, &h, 1, b"n").unwrap();
        assert_eq!(proof.d.len(), 1);
        let (c, _) = membership_challenge(&ctx, voter.public(), &h, &vote.0, &proof.a, &proof.b);
        assert_eq!(proof.d[0], c);
        assert!(verify_membership(&ctx, voter.public(), &h, &vote, &proof).unwrap());
    }

    #[test]
    fn errors() {
        let params = p64(10, 3).unwrap();
        let ctx = ProofContext::new(&params, "e");
        let voter = keygen(&params, "e", b"v");
        let h = params.g().clone();
        assert_eq!(
            prove_membership(&ctx, &voter, &h, 0, b"n").unwrap_err(),
            ZkpError::ChoiceOutOfRange { choice: 0, k: 3 }
        );
        assert!(prove_membership(&ctx, &voter, &h, 4, b"n").is_err());
        let other = ProofContext::new(&params, "other");
        assert!(matches!(
            prove_membership(&other, &voter, &h, 1, b"n"),
            Err(ZkpError::Key(_))
        ));
        let (vote, mut proof) = prove_membership(&ctx, &voter, &h, 2, b"n").unwrap();
        proof.r.pop();
        assert!(matches!(
            verify_membership(&ctx, voter.public(), &h, &vote, &proof),
            Err(ZkpError::Malformed { expected: 3, r: 2, .. })
        ));
    }

    #[test]
    fn proof_for_other_vote_rejected() {
        let params = p64(10, 3).unwrap();
        let ctx = ProofContext::new(&params, "e");
        let voter = keygen(&params, "e", b"v");
        let h = params.g_pow(&params.scalar_from_u64(99));
        let (_, proof) = prove_membership(&ctx, &voter, &h, 2, b"n").unwrap();
        let (vote3, _) = prove_membership(&ctx, &voter, &h, 3, b"n").unwrap();
        assert!(!verify_membership(&ctx, voter.public(), &h, &vote3, &proof).unwrap());
    }

    #[test]
    fn dh_small_fixture_symmetry() {
        let params = p23(3, 2).unwrap();
        let ctx = ProofContext::new(&params, "e");
        let (i, j) = (kp(&params, 2), kp(&params, 3));
        let proof = prove_dh(&ctx, &i, j.public(), b"w").unwrap();
        assert_eq!(proof.shared, el(&params, 8));
        assert_eq!(params.pow(i.public(), j.secret()), el(&params, 8));
        assert!(verify_dh(&ctx, i.public(), j.public(), &proof));
        let mut bad = proof.clone();
        bad.shared = params.mul(&bad.shared, params.g());
        assert!(!verify_dh(&ctx, i.public(), j.public(), &bad));
    }

    #[test]
    fn dh_tamper_on_large_group() {
        let params = p64(10, 2).unwrap();
        let ctx = ProofContext::new(&params, "e");
        let i = keygen(&params, "e", b"i");
        let j = keygen(&params, "e", b"j");
        let proof = prove_dh(&ctx, &i, j.public(), b"w").unwrap();
        assert!(verify_dh(&ctx, i.public(), j.public(), &proof));
        assert!(!verify_dh(&ctx, j.public(), i.public(), &proof));
        let foreign = ProofContext::new(&params, "other");
        assert!(!verify_dh(&foreign, i.public(), j.public(), &proof));
    }
}
