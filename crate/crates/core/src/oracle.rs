//! Benchmark association policies: exhaustive-search optimum and a uniform
//! random baseline.
//!
//! The optimal policy reads the true instantaneous link gains, deliberately
//! bypassing the observation history: it is the information-unconstrained
//! upper bound the learning agents are measured against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{evaluate_frame, Association, LinkGains, SystemParams};
use crate::error::{Result, SrnError};

/// Default ceiling on how many associations an exhaustive search may visit.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// An association together with the sum rate it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub assoc: Association,
    pub achieved_sum_rate: f64,
}

/// Number of valid associations, `M^N`, or `None` on overflow.
pub fn association_count(num_users: usize, num_devices: usize) -> Option<u128> {
    (num_users as u128).checked_pow(num_devices as u32)
}

/// Iterator over all `M^N` associations in lexicographic order of the
/// per-device user tuple (last device least significant).
#[derive(Debug)]
pub struct AssociationEnumerator {
    num_users: usize,
    num_devices: usize,
    next: u64,
    total: u64,
}

impl Iterator for AssociationEnumerator {
    type Item = Association;

    fn next(&mut self) -> Option<Association> {
        if self.next >= self.total {
            return None;
        }
        let assoc = Association::from_index(self.next, self.num_users, self.num_devices)
            .expect("index below M^N is always decodable");
        self.next += 1;
        Some(assoc)
    }
}

/// Enumerates every association satisfying the one-user-per-device
/// constraint, refusing when `M^N` exceeds `cap`.
pub fn enumerate_associations(
    num_users: usize,
    num_devices: usize,
    cap: u64,
) -> Result<AssociationEnumerator> {
    if num_users == 0 || num_devices == 0 {
        return Err(SrnError::Domain(
            "enumeration requires at least one user and one device".into(),
        ));
    }
    let count = association_count(num_users, num_devices)
        .ok_or(SrnError::Intractable { count: u128::MAX, cap })?;
    if count > u128::from(cap) {
        return Err(SrnError::Intractable { count, cap });
    }
    Ok(AssociationEnumerator {
        num_users,
        num_devices,
        next: 0,
        total: count as u64,
    })
}

/// Exhaustive-search optimum: evaluates every association on the true gains
/// and keeps the best sum rate, first-enumerated on ties.
pub fn optimal_policy(gains: &LinkGains, params: &SystemParams, cap: u64) -> Result<PolicyDecision> {
    let mut best: Option<PolicyDecision> = None;
    for assoc in enumerate_associations(gains.num_users(), gains.num_devices(), cap)? {
        let sum_rate = evaluate_frame(gains, &assoc, params)?.sum_rate;
        let better = best
            .as_ref()
            .is_none_or(|b| sum_rate > b.achieved_sum_rate);
        if better {
            best = Some(PolicyDecision {
                assoc,
                achieved_sum_rate: sum_rate,
            });
        }
    }
    Ok(best.expect("enumeration yields at least one association"))
}

/// Associates every device with a uniformly random user.
pub fn random_policy(num_users: usize, num_devices: usize, rng: &mut ChaCha8Rng) -> Association {
    Association::from_user_assignments(
        (0..num_devices)
            .map(|_| rng.random_range(0..num_users))
            .collect(),
        num_users,
    )
    .expect("sampled user indices are in range")
}
