//! Loopback exposure server: account creation behind a per-source
//! firewall, encounter uploads, authenticated positive reports, and
//! level-triggered notification polling.
//!
//! Notifications are recomputed on every poll from the current key
//! database, so a poll is repeatable: the same state answers the same way
//! until new keys or uploads arrive.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::ServerError;
use crate::protocol::{EncounterCode, EpochClock, KeyDatabase, TemporaryKey};

/// Accounts one source address may create before the firewall cuts it off.
pub const FIREWALL_THRESHOLD: u32 = 10;
/// Oldest key (in days before the report day) accepted in a positive report.
pub const MAX_KEY_AGE_DAYS: u64 = 14;

#[derive(Debug, Clone)]
pub struct Account {
    pub id: u64,
    pub source_addr: String,
    pub uploaded: BTreeSet<EncounterCode>,
}

/// Codes uploaded by the account that derive from some reported key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationSet {
    pub matched: BTreeSet<EncounterCode>,
}

impl NotificationSet {
    pub fn notified(&self) -> bool {
        !self.matched.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ExposureServer {
    clock: EpochClock,
    accounts: HashMap<u64, Account>,
    next_account: u64,
    accounts_per_source: HashMap<String, u32>,
    covidcodes: HashSet<String>,
    keys: KeyDatabase,
    diagnosed_cache: Option<BTreeSet<EncounterCode>>,
}

impl ExposureServer {
    pub fn new(clock: EpochClock) -> Self {
        Self {
            clock,
            accounts: HashMap::new(),
            next_account: 1,
            accounts_per_source: HashMap::new(),
            covidcodes: HashSet::new(),
            keys: KeyDatabase::new(),
            diagnosed_cache: Some(BTreeSet::new()),
        }
    }

    pub fn clock(&self) -> &EpochClock {
        &self.clock
    }

    /// Health-authority side: makes a covidcode redeemable.
    pub fn register_covidcode(&mut self, code: impl Into<String>) {
        self.covidcodes.insert(code.into());
    }

    pub fn account_count(&self) -> usize {
        self.accounts.len()
    }

    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    /// Opens an account. Each source address gets at most
    /// [`FIREWALL_THRESHOLD`] accounts; the next attempt is rejected.
    pub fn create_account(&mut self, source_addr: &str) -> Result<u64, ServerError> {
        let count = self.accounts_per_source.entry(source_addr.to_string()).or_insert(0);
        if *count >= FIREWALL_THRESHOLD {
            return Err(ServerError::FirewallRejected {
                source_addr: source_addr.to_string(),
                threshold: FIREWALL_THRESHOLD,
            });
        }
        *count += 1;
        let id = self.next_account;
        self.next_account += 1;
        self.accounts.insert(
            id,
            Account { id, source_addr: source_addr.to_string(), uploaded: BTreeSet::new() },
        );
        Ok(id)
    }

    /// Adds encounter codes to an account's uploaded set. Re-uploading is a
    /// no-op per code.
    pub fn upload_records(
        &mut self,
        account: u64,
        codes: &[EncounterCode],
    ) -> Result<(), ServerError> {
        let acct =
            self.accounts.get_mut(&account).ok_or(ServerError::UnknownAccount(account))?;
        acct.uploaded.extend(codes.iter().copied());
        Ok(())
    }

    /// Redeems a covidcode and publishes the reporter's daily keys. Keys
    /// older than [`MAX_KEY_AGE_DAYS`] relative to `report_day` are dropped
    /// silently. Idempotent: duplicate keys are deduplicated and a
    /// covidcode may be redeemed again with the same effect.
    pub fn report_positive(
        &mut self,
        covidcode: &str,
        keys: &[TemporaryKey],
        report_day: u64,
    ) -> Result<usize, ServerError> {
        if !self.covidcodes.contains(covidcode) {
            return Err(ServerError::InvalidCovidcode);
        }
        let oldest = report_day.saturating_sub(MAX_KEY_AGE_DAYS);
        let mut inserted = 0;
        for key in keys {
            if key.day_index < oldest || key.day_index > report_day {
                continue;
            }
            if self.keys.insert(*key) {
                inserted += 1;
            }
        }
        if inserted > 0 {
            self.diagnosed_cache = None;
        }
        Ok(inserted)
    }

    fn diagnosed_codes(&mut self) -> &BTreeSet<EncounterCode> {
        if self.diagnosed_cache.is_none() {
            self.diagnosed_cache = Some(self.keys.diagnosed_codes(&self.clock));
        }
        self.diagnosed_cache.as_ref().unwrap()
    }

    /// Level-triggered: intersects the account's uploads with every code
    /// derivable from the published keys, at poll time.
    pub fn poll_notifications(&mut self, account: u64) -> Result<NotificationSet, ServerError> {
        let uploaded = self
            .accounts
            .get(&account)
            .ok_or(ServerError::UnknownAccount(account))?
            .uploaded
            .clone();
        let diagnosed = self.diagnosed_codes();
        let matched = uploaded.intersection(diagnosed).copied().collect();
        Ok(NotificationSet { matched })
    }
}
