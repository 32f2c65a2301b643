//! Contact-isolation attack: adaptive pool testing against the exposure
//! server to pinpoint which recorded contact later tested positive.
//!
//! The attacker groups overheard broadcasts into per-contact sessions,
//! uploads disjoint pools of sessions under throwaway accounts, and polls
//! each account. A notified account means its pool holds a diagnosed
//! contact; the pool is re-split across fresh accounts until singletons
//! remain. With `n` pools per round and one diagnosed contact among `N`,
//! identification takes ceil(log_n N) rounds.

use std::collections::BTreeSet;

use crate::error::AttackError;
use crate::protocol::EncounterCode;
use crate::server::ExposureServer;
use crate::world::{BtMac, SimOutput};

/// Codes attributed to one contact: everything heard from one rotating
/// MAC. A contact spanning several epochs shows up as several sessions
/// (the rotation is exactly what prevents linking them).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceSession {
    pub mac: BtMac,
    pub codes: Vec<EncounterCode>,
}

/// Groups a receiver's observations into sessions, ordered by MAC.
pub fn collect_sessions(observed: &BTreeSet<(BtMac, EncounterCode)>) -> Vec<DeviceSession> {
    let mut sessions: Vec<DeviceSession> = Vec::new();
    for &(mac, code) in observed {
        match sessions.last_mut() {
            Some(s) if s.mac == mac => s.codes.push(code),
            _ => sessions.push(DeviceSession { mac, codes: vec![code] }),
        }
    }
    sessions
}

/// Sessions overheard by one attacker device in a finished run.
pub fn collect_contacts(out: &SimOutput, attacker: u32) -> Vec<DeviceSession> {
    out.observed_codes
        .get(&attacker)
        .map(collect_sessions)
        .unwrap_or_default()
}

/// One round's pools: disjoint contiguous slices of session indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub pools: Vec<Vec<usize>>,
}

/// Splits `units` into at most `k` contiguous near-equal pools (sizes
/// differ by at most one). Fewer pools come back when there are fewer
/// units than `k`.
pub fn split_contiguous(units: &[usize], k: usize) -> PartitionPlan {
    let k = k.min(units.len()).max(1);
    let base = units.len() / k;
    let extra = units.len() % k;
    let mut pools = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        pools.push(units[at..at + len].to_vec());
        at += len;
    }
    PartitionPlan { pools }
}

/// Divides the round budget of `n` pools over the positive sets from the
/// previous round. When there are too many positives to give each at
/// least two pools, the later sets are deferred to a following round.
pub fn refine_partitions(
    positives: &[Vec<usize>],
    n: usize,
) -> (Vec<PartitionPlan>, Vec<Vec<usize>>) {
    let set_pool = n / positives.len().max(1);
    if set_pool >= 2 {
        let plans = positives.iter().map(|s| split_contiguous(s, set_pool)).collect();
        (plans, Vec::new())
    } else {
        let fit = n / 2;
        let plans = positives[..fit].iter().map(|s| split_contiguous(s, 2)).collect();
        (plans, positives[fit..].to_vec())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IsolationParams {
    /// Accounts (pools) available per round.
    pub pools: usize,
    pub max_rounds: usize,
}

impl Default for IsolationParams {
    fn default() -> Self {
        Self { pools: 3, max_rounds: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsolationResult {
    /// Indices (into the session list) pinned down as diagnosed contacts.
    pub identified: Vec<usize>,
    pub rounds_used: usize,
    pub accounts_used: usize,
    /// Sets still unresolved when the round budget ran out.
    pub ambiguous: bool,
    pub complete: bool,
}

/// Cycles through source addresses so the per-source firewall never blocks
/// the attack; one address is good for ten accounts.
#[derive(Debug, Clone, Default)]
pub struct SourceRotation {
    next: u64,
}

impl SourceRotation {
    pub fn create_account(&mut self, server: &mut ExposureServer) -> Result<u64, AttackError> {
        loop {
            let addr = format!("bot-{}", self.next);
            match server.create_account(&addr) {
                Ok(id) => return Ok(id),
                Err(crate::error::ServerError::FirewallRejected { .. }) => {
                    self.next += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Runs the pool-testing loop against a live server.
pub fn run_isolation(
    server: &mut ExposureServer,
    sessions: &[DeviceSession],
    params: &IsolationParams,
) -> Result<IsolationResult, AttackError> {
    if params.pools < 2 {
        return Err(AttackError::TooFewPools(params.pools));
    }
    let mut result = IsolationResult {
        identified: Vec::new(),
        rounds_used: 0,
        accounts_used: 0,
        ambiguous: false,
        complete: false,
    };
    if sessions.is_empty() {
        result.complete = true;
        return Ok(result);
    }

    let mut sources = SourceRotation::default();
    let all: Vec<usize> = (0..sessions.len()).collect();
    let mut unresolved: Vec<Vec<usize>> = vec![all];

    while !unresolved.is_empty() && result.rounds_used < params.max_rounds {
        result.rounds_used += 1;
        let (plans, deferred) = refine_partitions(&unresolved, params.pools);
        let mut next: Vec<Vec<usize>> = deferred;
        for plan in plans {
            for pool in plan.pools {
                let account = sources.create_account(server)?;
                result.accounts_used += 1;
                let codes: Vec<EncounterCode> =
                    pool.iter().flat_map(|&u| sessions[u].codes.iter().copied()).collect();
                server.upload_records(account, &codes)?;
                if server.poll_notifications(account)?.notified() {
                    if pool.len() == 1 {
                        result.identified.push(pool[0]);
                    } else {
                        next.push(pool);
                    }
                }
            }
        }
        unresolved = next;
    }

    result.identified.sort_unstable();
    result.ambiguous = !unresolved.is_empty();
    result.complete = !result.ambiguous;
    Ok(result)
}
