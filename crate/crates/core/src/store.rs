//! The responder's CRL-derived blacklist.
//!
//! A [`StoreSnapshot`] is built only from a CRL whose signature verified, and
//! is never mutated afterwards. [`RevocationStore`] holds the live snapshot
//! behind an atomic pointer: lookups load it without locking, and a refresh
//! either swaps in a complete new snapshot or leaves the old one in place.

use std::collections::{HashMap, HashSet};
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use arc_swap::ArcSwapOption;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::clock::Clock;
use crate::crl::{CertificateRevocationList, CrlError, CrlReason, DistinguishedName, SerialNumber};
use crate::der::Asn1Time;
use crate::http::{self, HttpError};
use crate::parallel::{self, Execution};
use crate::signing::PublicKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RevocationStatus {
    Good,
    Revoked {
        #[serde(serialize_with = "ser_time")]
        date: Asn1Time,
        reason: Option<CrlReason>,
    },
    Unknown,
}

fn ser_time<S: serde::Serializer>(t: &Asn1Time, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&t.to_rfc3339())
}

impl RevocationStatus {
    pub fn is_revoked(&self) -> bool {
        matches!(self, RevocationStatus::Revoked { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            RevocationStatus::Good => "good",
            RevocationStatus::Revoked { .. } => "revoked",
            RevocationStatus::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("CRL signature does not verify against the configured CA key")]
    SignatureInvalid,
    #[error("malformed CRL: {0}")]
    MalformedCrl(String),
    #[error("CRL fetch failed: {0}")]
    FetchFailure(String),
    #[error("no CRL snapshot has been loaded yet")]
    NoSnapshotYet,
}

impl From<CrlError> for StoreError {
    fn from(e: CrlError) -> Self {
        StoreError::MalformedCrl(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RevokedInfo {
    pub date: Asn1Time,
    pub reason: Option<CrlReason>,
}

#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    issuer: DistinguishedName,
    revoked: HashMap<SerialNumber, RevokedInfo>,
    source_this_update: Asn1Time,
    source_next_update: Option<Asn1Time>,
    loaded_at: Duration,
    crl_signature_verified: bool,
}

impl StoreSnapshot {
    /// Verify `crl` under `ca_key` and index its entries. `loaded_at` is the
    /// monotonic load time.
    pub fn from_crl(crl: &CertificateRevocationList, ca_key: &PublicKey, loaded_at: Duration) -> Result<Self, StoreError> {
        match crl.verify(ca_key) {
            Ok(true) => {}
            Ok(false) => return Err(StoreError::SignatureInvalid),
            Err(e) => return Err(StoreError::MalformedCrl(e.to_string())),
        }
        let revoked = crl
            .entries()
            .iter()
            .map(|e| (e.serial.clone(), RevokedInfo { date: e.revocation_date, reason: e.reason }))
            .collect();
        Ok(Self {
            issuer: crl.issuer().clone(),
            revoked,
            source_this_update: crl.this_update(),
            source_next_update: crl.next_update(),
            loaded_at,
            crl_signature_verified: true,
        })
    }

    pub fn from_der(der: &[u8], ca_key: &PublicKey, loaded_at: Duration) -> Result<Self, StoreError> {
        Self::from_crl(&CertificateRevocationList::from_der(der)?, ca_key, loaded_at)
    }

    /// Revoked iff the serial is listed; Good otherwise.
    pub fn lookup(&self, serial: &SerialNumber) -> RevocationStatus {
        match self.revoked.get(serial) {
            Some(info) => RevocationStatus::Revoked { date: info.date, reason: info.reason },
            None => RevocationStatus::Good,
        }
    }

    pub fn lookup_many(&self, serials: &[SerialNumber], exec: Execution) -> Vec<RevocationStatus> {
        parallel::map(serials, exec, |s| self.lookup(s))
    }

    pub fn issuer(&self) -> &DistinguishedName {
        &self.issuer
    }

    pub fn len(&self) -> usize {
        self.revoked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revoked.is_empty()
    }

    pub fn source_this_update(&self) -> Asn1Time {
        self.source_this_update
    }

    pub fn source_next_update(&self) -> Option<Asn1Time> {
        self.source_next_update
    }

    pub fn loaded_at(&self) -> Duration {
        self.loaded_at
    }

    pub fn crl_signature_verified(&self) -> bool {
        self.crl_signature_verified
    }
}

pub fn snapshot_from_crl(crl: &CertificateRevocationList, ca_public_key: &PublicKey, now: Duration) -> Result<StoreSnapshot, StoreError> {
    StoreSnapshot::from_crl(crl, ca_public_key, now)
}

pub fn lookup(snapshot: &StoreSnapshot, serial: &SerialNumber) -> RevocationStatus {
    snapshot.lookup(serial)
}

/// Source of CRL bytes for [`RevocationStore::refresh`].
pub trait CrlFetcher: Send + Sync {
    fn fetch(&self) -> impl Future<Output = Result<Vec<u8>, StoreError>> + Send;
}

/// Fetches a DER CRL over HTTP GET.
#[derive(Debug, Clone)]
pub struct HttpCrlFetcher {
    pub url: String,
    pub timeout: Duration,
}

impl HttpCrlFetcher {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), timeout: Duration::from_secs(10) }
    }
}

impl CrlFetcher for HttpCrlFetcher {
    async fn fetch(&self) -> Result<Vec<u8>, StoreError> {
        let ex = http::get(&self.url, self.timeout)
            .await
            .map_err(|e: HttpError| StoreError::FetchFailure(e.to_string()))?;
        if !ex.status.is_success() {
            return Err(StoreError::FetchFailure(format!("HTTP {}", ex.status)));
        }
        Ok(ex.body.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefreshOutcome {
    Updated { entries: usize },
    /// The refresh failed and the previous snapshot (if any) stays live.
    Retained { error: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StoreMetrics {
    pub refresh_success: u64,
    pub refresh_failure: u64,
    pub entry_count: usize,
    pub staleness_seconds: Option<f64>,
}

/// Live blacklist with lock-free reads.
pub struct RevocationStore {
    current: ArcSwapOption<StoreSnapshot>,
    ca_key: PublicKey,
    clock: Arc<dyn Clock>,
    max_staleness: Option<Duration>,
    issued: Option<HashSet<SerialNumber>>,
    successes: AtomicU64,
    failures: AtomicU64,
}

impl RevocationStore {
    pub fn new(ca_key: PublicKey, clock: Arc<dyn Clock>) -> Self {
        Self {
            current: ArcSwapOption::empty(),
            ca_key,
            clock,
            max_staleness: None,
            issued: None,
            successes: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        }
    }

    /// Answer Unknown once the live snapshot is older than `limit`.
    pub fn with_max_staleness(mut self, limit: Duration) -> Self {
        self.max_staleness = Some(limit);
        self
    }

    /// Strict mode: serials outside `issued` answer Unknown instead of Good.
    pub fn with_issued_serials(mut self, issued: HashSet<SerialNumber>) -> Self {
        self.issued = Some(issued);
        self
    }

    pub fn ca_key(&self) -> &PublicKey {
        &self.ca_key
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// The live snapshot. Callers should load once per request.
    pub fn snapshot(&self) -> Option<Arc<StoreSnapshot>> {
        self.current.load_full()
    }

    pub fn install(&self, snapshot: StoreSnapshot) {
        self.current.store(Some(Arc::new(snapshot)));
    }

    /// Verify and install `crl` directly.
    pub fn load_crl(&self, crl: &CertificateRevocationList) -> Result<usize, StoreError> {
        let snap = StoreSnapshot::from_crl(crl, &self.ca_key, self.clock.monotonic())?;
        let n = snap.len();
        self.install(snap);
        Ok(n)
    }

    /// Status of `serial` against `snapshot`, applying the staleness cutoff and
    /// strict mode.
    pub fn status_in(&self, snapshot: &StoreSnapshot, serial: &SerialNumber) -> RevocationStatus {
        if let Some(limit) = self.max_staleness {
            if self.clock.monotonic().saturating_sub(snapshot.loaded_at) > limit {
                return RevocationStatus::Unknown;
            }
        }
        let status = snapshot.lookup(serial);
        match (&self.issued, status) {
            (Some(issued), RevocationStatus::Good) if !issued.contains(serial) => RevocationStatus::Unknown,
            _ => status,
        }
    }

    pub fn lookup(&self, serial: &SerialNumber) -> Result<RevocationStatus, StoreError> {
        let snap = self.current.load();
        let snap = snap.as_ref().ok_or(StoreError::NoSnapshotYet)?;
        Ok(self.status_in(snap, serial))
    }

    /// Fetch, verify and swap. Any failure keeps the previous snapshot.
    pub async fn refresh<F: CrlFetcher>(&self, fetcher: &F) -> RefreshOutcome {
        let result = match fetcher.fetch().await {
            Ok(bytes) => StoreSnapshot::from_der(&bytes, &self.ca_key, self.clock.monotonic()),
            Err(e) => Err(e),
        };
        match result {
            Ok(snapshot) => {
                let entries = snapshot.len();
                self.install(snapshot);
                self.successes.fetch_add(1, Ordering::Relaxed);
                RefreshOutcome::Updated { entries }
            }
            Err(e) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(error = %e, "CRL refresh failed; serving previous snapshot");
                RefreshOutcome::Retained { error: e.to_string() }
            }
        }
    }

    pub fn staleness(&self) -> Result<Duration, StoreError> {
        let snap = self.current.load();
        let snap = snap.as_ref().ok_or(StoreError::NoSnapshotYet)?;
        Ok(self.clock.monotonic().saturating_sub(snap.loaded_at))
    }

    pub fn metrics(&self) -> StoreMetrics {
        StoreMetrics {
            refresh_success: self.successes.load(Ordering::Relaxed),
            refresh_failure: self.failures.load(Ordering::Relaxed),
            entry_count: self.snapshot().map_or(0, |s| s.len()),
            staleness_seconds: self.staleness().ok().map(|d| d.as_secs_f64()),
        }
    }
}

/// Draw the next refresh delay: `interval` with ±`jitter` relative spread.
pub fn jittered(interval: Duration, jitter: f64, rng: &mut impl Rng) -> Duration {
    if jitter <= 0.0 {
        return interval;
    }
    let factor = 1.0 + rng.gen_range(-jitter..=jitter);
    interval.mul_f64(factor.max(0.0))
}

pub const DEFAULT_JITTER: f64 = 0.10;

/// Refresh immediately, then every `interval` (±`jitter`) until the task is
/// aborted.
pub fn spawn_refresh_loop<F>(store: Arc<RevocationStore>, fetcher: F, interval: Duration, jitter: f64) -> tokio::task::JoinHandle<()>
where
    F: CrlFetcher + 'static,
{
    tokio::spawn(async move {
        loop {
            let outcome = store.refresh(&fetcher).await;
            tracing::debug!(?outcome, "CRL refresh");
            let delay = jittered(interval, jitter, &mut rand::thread_rng());
            tokio::time::sleep(delay).await;
        }
    })
}
