//! Contact-pollution (relay/replay) attack.
//!
//! Attacker receivers near infected users forward overheard (MAC, code)
//! pairs to a concentrator; polluter devices near victims download fresh
//! pairs and rebroadcast them verbatim. Victims record encounters that
//! never happened, and get notified when the replayed user later tests
//! positive. The broadcast side is slot-scheduled: one advert per slot,
//! and every code must reappear within the receiver scan interval, which
//! caps how many codes one polluter can sustain.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{AttackError, ConfigError};
use crate::protocol::{match_exposures, EncounterCode, KeyDatabase};
use crate::world::engine::run_scenario;
use crate::world::{BtMac, PollutionSettings, ScenarioConfig, SimOutput};

/// Store of relayed (MAC, code) pairs shared by receivers and polluters.
/// Replay-only by construction: polluters can only draw from what some
/// receiver actually overheard and uploaded.
#[derive(Debug, Clone, Default)]
pub struct ConcentratorStore {
    entries: Vec<(BtMac, EncounterCode, f64)>,
    seen: BTreeSet<(BtMac, EncounterCode)>,
}

impl ConcentratorStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an overheard pair. Duplicates are ignored.
    pub fn upload(&mut self, mac: BtMac, code: EncounterCode, time: f64) -> bool {
        if self.seen.insert((mac, code)) {
            self.entries.push((mac, code, time));
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fresh pairs a polluter may replay during `current_epoch`: codes from
    /// the current epoch or up to `grace_epochs` back, newest first, capped
    /// at the broadcast capacity.
    pub fn download(
        &self,
        current_epoch: u64,
        grace_epochs: u64,
        capacity: usize,
    ) -> Vec<(BtMac, EncounterCode)> {
        let oldest = current_epoch.saturating_sub(grace_epochs);
        let mut fresh: Vec<(BtMac, EncounterCode)> = self
            .entries
            .iter()
            .rev()
            .filter(|(_, code, _)| code.epoch_index >= oldest && code.epoch_index <= current_epoch)
            .map(|(mac, code, _)| (*mac, *code))
            .take(capacity)
            .collect();
        fresh.reverse();
        fresh
    }
}

/// Round-robin replay schedule for one polluter.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastSchedule {
    /// (offset in ms from cycle start, pair) — one advert per slot.
    pub slots: Vec<(u64, (BtMac, EncounterCode))>,
    pub settings: PollutionSettings,
}

impl BroadcastSchedule {
    /// Worst-case gap in ms between consecutive broadcasts of one code.
    pub fn max_gap_ms(&self) -> u64 {
        self.slots.len() as u64 * self.settings.slot_ms
    }

    /// Pair broadcast in the cycle slot containing time `t_ms`.
    pub fn at(&self, t_ms: u64) -> (BtMac, EncounterCode) {
        let cycle = self.max_gap_ms();
        let slot = ((t_ms % cycle) / self.settings.slot_ms) as usize;
        self.slots[slot].1
    }
}

/// Plans a replay cycle. Every code must be rebroadcast within the victim
/// scan interval, so at most `max_interval / slot` distinct codes fit.
pub fn plan_broadcast(
    pairs: &[(BtMac, EncounterCode)],
    settings: &PollutionSettings,
) -> Result<BroadcastSchedule, AttackError> {
    let max = settings.capacity();
    if pairs.len() > max {
        return Err(AttackError::CapacityExceeded { requested: pairs.len(), max });
    }
    let slots = pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| (i as u64 * settings.slot_ms, *pair))
        .collect();
    Ok(BroadcastSchedule { slots, settings: *settings })
}

/// Total message interactions to pollute `n` victims: one receive near the
/// infected user and one rebroadcast per victim.
pub fn interaction_cost(victims: u64) -> u64 {
    2 * victims
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PollutionReport {
    /// Devices notified only because of replayed codes.
    pub false_notifications: u32,
    /// Devices that would have been notified from genuine contact anyway.
    pub genuine_notifications: u32,
    pub falsely_notified: BTreeSet<u32>,
    /// Distinct codes delivered to some victim by a polluter.
    pub replayed_codes: usize,
    pub interactions: u64,
}

/// Runs a placed scenario with polluters and scores the damage: diagnosed
/// devices publish their keys, every non-attacking device matches its
/// inbox, and notifications are split by whether they survive with the
/// replayed records removed.
pub fn run_pollution(config: &ScenarioConfig, seed: u64) -> Result<PollutionReport, ConfigError> {
    let out = run_scenario(config, seed)?;
    Ok(score_pollution(config, &out))
}

pub fn score_pollution(config: &ScenarioConfig, out: &SimOutput) -> PollutionReport {
    let mut db = KeyDatabase::new();
    for id in &out.ground_truth.diagnosed {
        for key in &out.ground_truth.device_keys[id] {
            db.insert(*key);
        }
    }

    let mut report = PollutionReport {
        false_notifications: 0,
        genuine_notifications: 0,
        falsely_notified: BTreeSet::new(),
        replayed_codes: 0,
        interactions: 0,
    };

    let mut replayed_pairs: BTreeSet<EncounterCode> = BTreeSet::new();
    for ((_, code), prov) in &out.provenance {
        if prov.replayed.is_some() {
            replayed_pairs.insert(*code);
        }
    }
    report.replayed_codes = replayed_pairs.len();

    // Attackers and polluters don't run the client app.
    let attacker_ids: BTreeSet<u32> = match &config.kind {
        crate::world::ScenarioKind::Placed(devices) => {
            devices.iter().filter(|d| d.attacker || d.polluter).map(|d| d.id).collect()
        }
        _ => BTreeSet::new(),
    };

    for (receiver, _) in &out.inboxes {
        if attacker_ids.contains(receiver) {
            continue;
        }
        let genuine: Vec<_> = out
            .provenance
            .iter()
            .filter(|((r, _), p)| r == receiver && p.genuine.is_some())
            .map(|(_, p)| p.genuine.clone().unwrap())
            .collect();
        let all = &out.inboxes[receiver];
        let with_replay =
            !match_exposures(all, &db, &config.exposure, &config.clock).is_empty();
        let without_replay =
            !match_exposures(&genuine, &db, &config.exposure, &config.clock).is_empty();
        if with_replay && !without_replay {
            report.false_notifications += 1;
            report.falsely_notified.insert(*receiver);
        } else if without_replay {
            report.genuine_notifications += 1;
        }
    }
    report.interactions = interaction_cost(report.false_notifications as u64);
    report
}
