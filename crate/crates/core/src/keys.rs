//! Voter-side ephemeral keys.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{GroupElement, GroupParams, Scalar};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("key was generated for election {key:?}, not {requested:?}")]
    ForeignElection { key: String, requested: String },
    #[error("private key must be nonzero")]
    ZeroKey,
}

/// One-time key pair `(x, g^x)` bound to a single election.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterKeypair {
    election_id: String,
    x: Scalar,
    pk: GroupElement,
}

impl VoterKeypair {
    pub fn from_secret(params: &GroupParams, election_id: &str, x: Scalar) -> Result<Self, KeyError> {
        let x = params.scalar(x.value().clone());
        if x.is_zero() {
            return Err(KeyError::ZeroKey);
        }
        let pk = params.g_pow(&x);
        Ok(VoterKeypair {
            election_id: election_id.to_string(),
            x,
            pk,
        })
    }

    pub fn secret(&self) -> &Scalar {
        &self.x
    }

    pub fn public(&self) -> &GroupElement {
        &self.pk
    }

    pub fn election_id(&self) -> &str {
        &self.election_id
    }

    /// Ephemeral keys must never be reused in another election.
    pub fn ensure_election(&self, election_id: &str) -> Result<(), KeyError> {
        if self.election_id == election_id {
            Ok(())
        } else {
            Err(KeyError::ForeignElection {
                key: self.election_id.clone(),
                requested: election_id.to_string(),
            })
        }
    }
}

/// Draws `x` uniformly from `[1, p - 1)`.
pub fn keygen(params: &GroupParams, election_id: &str, seed: &[u8]) -> VoterKeypair {
    let mut rng = seeded_rng(seed);
    let x = params.random_nonzero_scalar(&mut rng);
    VoterKeypair::from_secret(params, election_id, x).expect("nonzero by construction")
}

/// `g^(x_i y_i)`: the voter's MPC key raised to the private key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlindingKey(pub GroupElement);

/// `B_i = g^(x_i y_i) * f_choice`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlindedVote(pub GroupElement);

pub fn derive_blinding_key(params: &GroupParams, kp: &VoterKeypair, mpc_key: &GroupElement) -> BlindingKey {
    BlindingKey(params.pow(mpc_key, &kp.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::fixtures::p23;
    use num_bigint::BigUint;

    fn kp(params: &GroupParams, x: u64) -> VoterKeypair {
        VoterKeypair::from_secret(params, "e", params.scalar_from_u64(x)).unwrap()
    }

    #[test]
    fn small_keypair() {
        let params = p23(3, 2).unwrap();
        assert_eq!(kp(&params, 3).public().value(), &BigUint::from(10u8));
        assert_eq!(
            VoterKeypair::from_secret(&params, "e", params.scalar_from_u64(22)),
            Err(KeyError::ZeroKey)
        );
    }

    #[test]
    fn keygen_consistent_and_seeded() {
        let params = p23(3, 2).unwrap();
        for i in 0..50u32 {
            let k = keygen(&params, "e", &i.to_be_bytes());
            assert!(!k.secret().is_zero());
            assert_eq!(&params.g_pow(k.secret()), k.public());
        }
        let big = crate::group::fixtures::p64(10, 2).unwrap();
        assert_ne!(keygen(&big, "e", b"a").secret(), keygen(&big, "e", b"b").secret());
        assert_eq!(keygen(&big, "e", b"a"), keygen(&big, "e", b"a"));
    }

    #[test]
    fn blinding_key_three_voters() {
        let params = p23(3, 2).unwrap();
        let keys: Vec<_> = [1, 2, 3].iter().map(|&x| kp(&params, x)).collect();
        // y_1 = -(2+3), y_2 = 1-3, y_3 = 1+2
        let h: Vec<GroupElement> = [15u32, 12, 10]
            .iter()
            .map(|&v| params.element(BigUint::from(v)).unwrap())
            .collect();
        let bk3 = derive_blinding_key(&params, &keys[2], &h[2]);
        assert_eq!(bk3.0.value(), &BigUint::from(11u8));
        let prod = keys
            .iter()
            .zip(&h)
            .map(|(k, h)| derive_blinding_key(&params, k, h).0)
            .fold(GroupElement::one(), |acc, b| params.mul(&acc, &b));
        assert!(prod.is_one());
        assert!(derive_blinding_key(&params, &keys[0], &GroupElement::one()).0.is_one());
    }

    #[test]
    fn refuses_other_election() {
        let params = p23(3, 2).unwrap();
        let k = kp(&params, 4);
        assert!(k.ensure_election("e").is_ok());
        assert!(matches!(k.ensure_election("f"), Err(KeyError::ForeignElection { .. })));
    }
}
