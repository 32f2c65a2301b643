//! DP-3T-style key schedule, rolling identifier derivation, and local
//! exposure matching.
//!
//! A device holds one [`TemporaryKey`] per day. Every epoch (15 minutes by
//! default) the key is expanded into a fresh [`EncounterCode`] that is
//! broadcast over BLE. Diagnosed users publish their daily keys to a
//! [`KeyDatabase`]; everyone else re-derives the codes locally and matches
//! them against their recorded encounters.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ProtocolError;

/// Maps scenario time (seconds since start) to epoch and day indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochClock {
    epoch_len: u64,
    key_period: u64,
}

impl Default for EpochClock {
    fn default() -> Self {
        Self { epoch_len: 900, key_period: 86_400 }
    }
}

impl EpochClock {
    pub fn new(epoch_len: u64, key_period: u64) -> Result<Self, ProtocolError> {
        if epoch_len == 0 || key_period == 0 || key_period % epoch_len != 0 {
            return Err(ProtocolError::InvalidClock { epoch_len, key_period });
        }
        Ok(Self { epoch_len, key_period })
    }

    pub fn epoch_len(&self) -> u64 {
        self.epoch_len
    }

    pub fn key_period(&self) -> u64 {
        self.key_period
    }

    pub fn epochs_per_day(&self) -> u64 {
        self.key_period / self.epoch_len
    }

    /// Epoch index for a scenario time. A time exactly on a boundary belongs
    /// to the later epoch (half-open intervals).
    pub fn epoch_of(&self, sim_time: f64) -> u64 {
        debug_assert!(sim_time >= 0.0);
        (sim_time / self.epoch_len as f64).floor() as u64
    }

    pub fn day_of(&self, sim_time: f64) -> u64 {
        self.epoch_of(sim_time) / self.epochs_per_day()
    }

    pub fn day_of_epoch(&self, epoch: u64) -> u64 {
        epoch / self.epochs_per_day()
    }
}

/// Daily secret from which all of a device's identifiers derive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporaryKey {
    pub key_bytes: [u8; 16],
    pub day_index: u64,
}

impl TemporaryKey {
    pub fn generate<R: RngCore>(rng: &mut R, day_index: u64) -> Self {
        let mut key_bytes = [0u8; 16];
        rng.fill_bytes(&mut key_bytes);
        Self { key_bytes, day_index }
    }

    pub fn from_bytes(key_bytes: [u8; 16], day_index: u64) -> Self {
        Self { key_bytes, day_index }
    }
}

/// One broadcast rolling proximity identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EncounterCode {
    pub id_bytes: [u8; 16],
    pub epoch_index: u64,
}

impl fmt::Display for EncounterCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", hex::encode(self.id_bytes), self.epoch_index)
    }
}

impl EncounterCode {
    pub fn hex(&self) -> String {
        hex::encode(self.id_bytes)
    }
}

/// Derives the rolling identifier for `epoch` from a daily key.
///
/// Two-stage chain: hash-based expansion of the temporary key into a
/// 32-byte subkey, then a keyed hash of the epoch index truncated to 16
/// bytes. Deterministic for a given (key, epoch).
pub fn derive_identifier(
    key: &TemporaryKey,
    epoch: u64,
    clock: &EpochClock,
) -> Result<EncounterCode, ProtocolError> {
    if clock.day_of_epoch(epoch) != key.day_index {
        return Err(ProtocolError::EpochOutsideKeyWindow { epoch, day_index: key.day_index });
    }
    let mut h = Sha256::new();
    h.update(b"rpi-key-expand");
    h.update(key.key_bytes);
    let subkey = h.finalize();

    let mut h = Sha256::new();
    h.update(subkey);
    h.update(b"epoch");
    h.update(epoch.to_le_bytes());
    let digest = h.finalize();

    let mut id_bytes = [0u8; 16];
    id_bytes.copy_from_slice(&digest[..16]);
    Ok(EncounterCode { id_bytes, epoch_index: epoch })
}

/// Append-only store of (key, day) pairs published by diagnosed users.
#[derive(Debug, Clone, Default)]
pub struct KeyDatabase {
    entries: Vec<TemporaryKey>,
    seen: HashSet<([u8; 16], u64)>,
}

impl KeyDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a key; duplicate (key, day) pairs are ignored.
    /// Returns true if the entry was new.
    pub fn insert(&mut self, key: TemporaryKey) -> bool {
        if self.seen.insert((key.key_bytes, key.day_index)) {
            self.entries.push(key);
            true
        } else {
            false
        }
    }

    pub fn entries(&self) -> &[TemporaryKey] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every identifier derivable from the published keys.
    pub fn diagnosed_codes(&self, clock: &EpochClock) -> BTreeSet<EncounterCode> {
        let per_day = clock.epochs_per_day();
        let mut out = BTreeSet::new();
        for key in &self.entries {
            let start = key.day_index * per_day;
            for epoch in start..start + per_day {
                // In-window by construction.
                let code = derive_identifier(key, epoch, clock).expect("epoch in key window");
                out.insert(code);
            }
        }
        out
    }

    /// Line-delimited text export: `<hex key>,<day_index>` per line.
    pub fn export<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for key in &self.entries {
            writeln!(w, "{},{}", hex::encode(key.key_bytes), key.day_index)?;
        }
        Ok(())
    }

    pub fn import<R: BufRead>(r: R) -> Result<Self, ProtocolError> {
        let mut db = Self::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| ProtocolError::KeyDbFormat {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (hex_key, day) = line.split_once(',').ok_or_else(|| ProtocolError::KeyDbFormat {
                line: lineno + 1,
                reason: "expected `<hex key>,<day_index>`".into(),
            })?;
            let bytes = hex::decode(hex_key.trim()).map_err(|e| ProtocolError::KeyDbFormat {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            let key_bytes: [u8; 16] =
                bytes.try_into().map_err(|_| ProtocolError::KeyDbFormat {
                    line: lineno + 1,
                    reason: "key must be 16 bytes".into(),
                })?;
            let day_index = day.trim().parse().map_err(|_| ProtocolError::KeyDbFormat {
                line: lineno + 1,
                reason: "bad day index".into(),
            })?;
            db.insert(TemporaryKey { key_bytes, day_index });
        }
        Ok(db)
    }
}

/// Distance/dwell thresholds for counting an exposure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureParams {
    pub max_distance: f64,
    pub min_dwell: f64,
}

impl Default for ExposureParams {
    fn default() -> Self {
        Self { max_distance: 5.0, min_dwell: 1.0 }
    }
}

impl ExposureParams {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.max_distance <= 0.0 || self.min_dwell <= 0.0 {
            return Err(ProtocolError::InvalidExposureParams);
        }
        Ok(())
    }
}

/// One recorded encounter with distance/dwell annotations from the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub code: EncounterCode,
    pub time: f64,
    pub distance: f64,
    pub dwell: f64,
    pub receiver: u32,
}

/// Local contact matching against the published key database.
///
/// A record matches iff its code derives from some published key and the
/// distance/dwell annotations clear the thresholds.
pub fn match_exposures(
    records: &[EncounterRecord],
    db: &KeyDatabase,
    params: &ExposureParams,
    clock: &EpochClock,
) -> BTreeSet<EncounterCode> {
    let diagnosed = db.diagnosed_codes(clock);
    records
        .iter()
        .filter(|r| r.distance <= params.max_distance && r.dwell >= params.min_dwell)
        .filter(|r| diagnosed.contains(&r.code))
        .map(|r| r.code)
        .collect()
}
