#![allow(dead_code)]

use num_bigint::BigUint;
use sbvote_core::group::fixtures::p64;
use sbvote_core::{GroupElement, GroupParams, ScenarioConfig, World};

/// Every vector of `k` non-negative counts summing to `n`.
pub fn compositions(n: u64, k: usize) -> Vec<Vec<u64>> {
    if k == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// `h_i = prod_{j<i} pk_j / prod_{j>i} pk_j`, one voter at a time.
pub fn direct_mpc_keys(params: &GroupParams, pks: &[GroupElement]) -> Vec<GroupElement> {
    (0..pks.len())
        .map(|i| {
            let left = params.product(pks[..i].iter());
            let right = params.product(pks[i + 1..].iter());
            params.div(&left, &right)
        })
        .collect()
}

pub fn el(params: &GroupParams, v: u64) -> GroupElement {
    params.element(BigUint::from(v)).unwrap()
}

pub fn world(config: ScenarioConfig) -> World {
    let params = p64(config.n_max(), config.k_candidates).unwrap();
    World::with_params(config, params).unwrap()
}
