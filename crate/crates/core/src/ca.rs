//! Certificate authority side: the append-only revocation ledger, CRL
//! issuance, and HTTP distribution of the current CRL.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use arc_swap::ArcSwap;
use axum::extract::State;
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use bytes::Bytes;
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::crl::{build_crl, CertificateRevocationList, CrlError, CrlReason, DistinguishedName, RevokedEntry, SerialNumber};
use crate::der::{self, tag, Asn1Time};
use crate::http::{BindError, HttpServer};
use crate::oid;
use crate::signing::{KeyError, PublicKey, RsaSha256Signer, SignatureProvider};

/// Hourly CRL regeneration.
pub const DEFAULT_REFRESH_INTERVAL: Duration = Duration::from_secs(3600);

pub const CRL_DER_CONTENT_TYPE: &str = "application/pkix-crl";
pub const CRL_PEM_CONTENT_TYPE: &str = "application/x-pem-file";

#[derive(Debug, Error)]
pub enum CaError {
    #[error("serial {0} is already revoked")]
    AlreadyRevoked(SerialNumber),
    #[error("ledger persistence failed: {0}")]
    Persistence(#[from] io::Error),
    #[error("ledger line {line}: {message}")]
    LedgerFormat { line: usize, message: String },
    #[error(transparent)]
    Crl(#[from] CrlError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("invalid CA configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub serial: SerialNumber,
    pub reason: CrlReason,
    pub revoked_at: Asn1Time,
}

impl LedgerRecord {
    fn to_line(&self) -> String {
        format!("{} {} {}\n", self.serial.to_hex(), self.reason.code(), self.revoked_at.epoch_seconds())
    }

    fn parse(line: &str, lineno: usize) -> Result<Self, CaError> {
        let err = |message: String| CaError::LedgerFormat { line: lineno, message };
        let mut fields = line.split_whitespace();
        let (Some(serial), Some(reason), Some(at), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(err("expected `<serial-hex> <reason-code> <revoked-at-epoch>`".into()));
        };
        let serial = SerialNumber::from_hex(serial).map_err(|e| err(e.to_string()))?;
        let reason = reason
            .parse::<u64>()
            .ok()
            .and_then(CrlReason::from_code)
            .ok_or_else(|| err(format!("invalid reason code {reason}")))?;
        let revoked_at = at
            .parse::<i64>()
            .map_err(|e| err(e.to_string()))
            .and_then(|s| Asn1Time::from_epoch(s).map_err(|e| err(e.to_string())))?;
        Ok(Self { serial, reason, revoked_at })
    }

    fn to_entry(&self) -> RevokedEntry {
        RevokedEntry {
            serial: self.serial.clone(),
            revocation_date: self.revoked_at,
            // RFC 5280: omit the extension rather than encode unspecified
            reason: (self.reason != CrlReason::Unspecified).then_some(self.reason),
        }
    }
}

/// Append-only list of revocations, optionally backed by a text file with one
/// `<serial-hex> <reason-code> <revoked-at-epoch>` record per line.
#[derive(Debug, Default)]
pub struct RevocationLedger {
    path: Option<PathBuf>,
    records: Vec<LedgerRecord>,
    index: HashSet<SerialNumber>,
    persisted_len: u64,
}

impl RevocationLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Load `path`, creating an empty ledger file if it does not exist.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CaError> {
        let path = path.into();
        if !path.exists() {
            fs::write(&path, b"")?;
        }
        let mut ledger = Self { path: Some(path), ..Self::default() };
        ledger.reload()?;
        Ok(ledger)
    }

    pub fn from_text(text: &str) -> Result<Self, CaError> {
        let mut ledger = Self::default();
        ledger.parse_into(text)?;
        Ok(ledger)
    }

    fn parse_into(&mut self, text: &str) -> Result<(), CaError> {
        let mut records = Vec::new();
        let mut index = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = LedgerRecord::parse(line, i + 1)?;
            if !index.insert(record.serial.clone()) {
                return Err(CaError::LedgerFormat { line: i + 1, message: format!("duplicate serial {}", record.serial) });
            }
            records.push(record);
        }
        self.records = records;
        self.index = index;
        Ok(())
    }

    fn reload(&mut self) -> Result<(), CaError> {
        if let Some(path) = &self.path {
            let text = fs::read_to_string(path)?;
            self.persisted_len = text.len() as u64;
            self.parse_into(&text)?;
        }
        Ok(())
    }

    /// Pick up records appended by another process. Returns whether anything changed.
    pub fn sync_from_disk(&mut self) -> Result<bool, CaError> {
        let Some(path) = &self.path else { return Ok(false) };
        let len = fs::metadata(path)?.len();
        if len == self.persisted_len {
            return Ok(false);
        }
        self.reload()?;
        Ok(true)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, serial: &SerialNumber) -> bool {
        self.index.contains(serial)
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(LedgerRecord::to_line).collect()
    }

    /// Rewrite the whole file from memory.
    pub fn save(&mut self) -> Result<(), CaError> {
        if let Some(path) = &self.path {
            let text = self.to_text();
            fs::write(path, &text)?;
            self.persisted_len = text.len() as u64;
        }
        Ok(())
    }

    /// Append a record; it is on disk (fsynced) before this returns.
    pub fn revoke(&mut self, serial: SerialNumber, reason: CrlReason, at: Asn1Time) -> Result<&LedgerRecord, CaError> {
        if self.path.is_some() {
            self.sync_from_disk()?;
        }
        if self.index.contains(&serial) {
            return Err(CaError::AlreadyRevoked(serial));
        }
        let record = LedgerRecord { serial, reason, revoked_at: at };
        if let Some(path) = &self.path {
            let line = record.to_line();
            let mut file = OpenOptions::new().append(true).open(path)?;
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
            self.persisted_len += line.len() as u64;
        }
        self.index.insert(record.serial.clone());
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn entries(&self) -> Vec<RevokedEntry> {
        self.records.iter().map(LedgerRecord::to_entry).collect()
    }
}

/// A CA: issuer identity, signing key, and its ledger.
pub struct CertificateAuthority {
    issuer: DistinguishedName,
    signer: Arc<dyn SignatureProvider>,
    certificate: Vec<u8>,
    ledger: Mutex<RevocationLedger>,
    generation: AtomicU64,
    refresh_interval: Duration,
}

impl CertificateAuthority {
    pub fn new(
        issuer: DistinguishedName,
        signer: Arc<dyn SignatureProvider>,
        certificate: Vec<u8>,
        ledger: RevocationLedger,
        refresh_interval: Duration,
    ) -> Self {
        Self { issuer, signer, certificate, ledger: Mutex::new(ledger), generation: AtomicU64::new(0), refresh_interval }
    }

    /// In-memory CA with a freshly self-signed certificate.
    pub fn ephemeral(issuer: DistinguishedName, signer: Arc<dyn SignatureProvider>, now: Asn1Time) -> Result<Self, CaError> {
        let certificate = self_signed_certificate(&issuer, signer.as_ref(), now, 3650)?;
        Ok(Self::new(issuer, signer, certificate, RevocationLedger::in_memory(), DEFAULT_REFRESH_INTERVAL))
    }

    pub fn with_refresh_interval(mut self, interval: Duration) -> Self {
        self.refresh_interval = interval;
        self
    }

    pub fn issuer(&self) -> &DistinguishedName {
        &self.issuer
    }

    pub fn public_key(&self) -> &PublicKey {
        self.signer.public_key()
    }

    pub fn signer(&self) -> Arc<dyn SignatureProvider> {
        self.signer.clone()
    }

    /// DER self-signed CA certificate.
    pub fn certificate(&self) -> &[u8] {
        &self.certificate
    }

    pub fn refresh_interval(&self) -> Duration {
        self.refresh_interval
    }

    pub fn revoke(&self, serial: SerialNumber, reason: CrlReason, at: Asn1Time) -> Result<LedgerRecord, CaError> {
        let mut ledger = self.ledger.lock().expect("ledger lock");
        let record = ledger.revoke(serial, reason, at)?.clone();
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(record)
    }

    /// Ledger change counter; also folds in records appended by other processes.
    pub fn generation(&self) -> Result<u64, CaError> {
        let mut ledger = self.ledger.lock().expect("ledger lock");
        if ledger.sync_from_disk()? {
            self.generation.fetch_add(1, Ordering::SeqCst);
        }
        Ok(self.generation.load(Ordering::SeqCst))
    }

    pub fn with_ledger<R>(&self, f: impl FnOnce(&RevocationLedger) -> R) -> R {
        f(&self.ledger.lock().expect("ledger lock"))
    }

    pub fn issue_crl(&self, now: Asn1Time, include_next_update: bool) -> Result<CertificateRevocationList, CaError> {
        let entries = {
            let mut ledger = self.ledger.lock().expect("ledger lock");
            ledger.sync_from_disk()?;
            ledger.entries()
        };
        let next_update = if include_next_update {
            Some(now.checked_add_seconds(self.refresh_interval.as_secs().max(1) as i64).map_err(|e| CaError::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(build_crl(&self.issuer, &entries, now, next_update, self.signer.as_ref())?)
    }
}

/// Minimal self-signed X.509 v3 CA certificate (basicConstraints CA, keyUsage
/// keyCertSign|cRLSign). Carried opaquely in OCSP responses.
pub fn self_signed_certificate(
    subject: &DistinguishedName,
    signer: &dyn SignatureProvider,
    not_before: Asn1Time,
    validity_days: i64,
) -> Result<Vec<u8>, CaError> {
    let not_after = not_before
        .checked_add_seconds(validity_days * 86_400)
        .map_err(|e| CaError::Config(e.to_string()))?;
    let alg = crate::crl::algorithm_identifier(&signer.algorithm());
    let name = subject.to_der();
    let key = signer.public_key();
    let basic_constraints = crate::crl::encode_extension(&oid::basic_constraints(), true, &der::sequence(&[&der::boolean(true)]));
    let key_usage = crate::crl::encode_extension(&oid::key_usage(), true, &der::encode_tlv(tag::BIT_STRING, &[0x01, 0x06]));
    let ski = crate::crl::encode_extension(&oid::subject_key_identifier(), false, &der::octet_string(&key.sha1_key_hash()));
    let extensions = der::encode_tlv(tag::context(3), &der::sequence(&[&basic_constraints, &key_usage, &ski]));
    let tbs = der::sequence(&[
        &der::encode_tlv(tag::context(0), &der::integer(&[2])),
        &der::integer(&[1]),
        &alg,
        &name,
        &der::sequence(&[&not_before.to_der(), &not_after.to_der()]),
        &name,
        key.spki_der(),
        &extensions,
    ]);
    let signature = signer.sign(&tbs).map_err(CrlError::from)?;
    Ok(der::sequence(&[&tbs, &alg, &der::bit_string(&signature)]))
}

/// On-disk CA material: `ca_key.pem`, `ca_pub.pem`, `ca_cert.pem`,
/// `issuer.txt` and `ledger.txt` under one directory.
#[derive(Debug, Clone)]
pub struct CaFiles {
    pub dir: PathBuf,
}

impl CaFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key_path(&self) -> PathBuf {
        self.dir.join("ca_key.pem")
    }

    pub fn public_key_path(&self) -> PathBuf {
        self.dir.join("ca_pub.pem")
    }

    pub fn certificate_path(&self) -> PathBuf {
        self.dir.join("ca_cert.pem")
    }

    pub fn issuer_path(&self) -> PathBuf {
        self.dir.join("issuer.txt")
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.dir.join("ledger.txt")
    }

    /// Create the directory with a key (generated unless `key_pem` is given),
    /// a self-signed certificate and an empty ledger.
    pub fn init(&self, issuer: &DistinguishedName, key_pem: Option<&str>, bits: usize, now: Asn1Time) -> Result<(), CaError> {
        if self.key_path().exists() {
            return Err(CaError::Config(format!("{} already initialized", self.dir.display())));
        }
        fs::create_dir_all(&self.dir)?;
        let signer = match key_pem {
            Some(pem) => RsaSha256Signer::from_pkcs8_pem(pem)?,
            None => RsaSha256Signer::generate(bits)?,
        };
        fs::write(self.key_path(), signer.to_pkcs8_pem()?)?;
        fs::write(self.public_key_path(), signer.public_key().to_spki_pem()?)?;
        let cert = self_signed_certificate(issuer, &signer, now, 3650)?;
        fs::write(self.certificate_path(), crate::pem::pem_encode("CERTIFICATE", &cert).expect("valid label"))?;
        fs::write(self.issuer_path(), format!("{issuer}\n"))?;
        RevocationLedger::open(self.ledger_path())?;
        Ok(())
    }

    pub fn issuer(&self) -> Result<DistinguishedName, CaError> {
        fs::read_to_string(self.issuer_path())?
            .trim()
            .parse()
            .map_err(|e: crate::crl::NameError| CaError::Config(e.to_string()))
    }

    pub fn public_key(&self) -> Result<PublicKey, CaError> {
        Ok(PublicKey::from_spki_pem(&fs::read_to_string(self.public_key_path())?)?)
    }

    pub fn load(&self, refresh_interval: Duration) -> Result<CertificateAuthority, CaError> {
        let signer = RsaSha256Signer::from_pkcs8_pem(&fs::read_to_string(self.key_path())?)?;
        let (label, cert) = crate::pem::pem_decode(&fs::read_to_string(self.certificate_path())?)
            .map_err(|e| CaError::Config(e.to_string()))?;
        if label != "CERTIFICATE" {
            return Err(CaError::Config("ca_cert.pem is not a certificate".into()));
        }
        let ledger = RevocationLedger::open(self.ledger_path())?;
        Ok(CertificateAuthority::new(self.issuer()?, Arc::new(signer), cert, ledger, refresh_interval))
    }
}

/// A published CRL in both encodings.
#[derive(Debug)]
pub struct PublishedCrl {
    pub crl: CertificateRevocationList,
    pub der: Bytes,
    pub pem: Bytes,
    pub generation: u64,
    pub issued_at: Duration,
}

impl PublishedCrl {
    pub fn new(crl: CertificateRevocationList, generation: u64, issued_at: Duration) -> Self {
        let der = Bytes::from(crl.to_der());
        let pem = Bytes::from(crl.to_pem());
        Self { crl, der, pem, generation, issued_at }
    }
}

/// The CRL distribution point. With a CA attached, each request first checks
/// whether the ledger moved or the published CRL aged past the refresh
/// interval, and re-issues if so. Readers get an atomic snapshot.
pub struct CrlDistribution {
    current: ArcSwap<PublishedCrl>,
    ca: Option<Arc<CertificateAuthority>>,
    clock: Arc<dyn Clock>,
    reissue: tokio::sync::Mutex<()>,
    include_next_update: bool,
}

impl CrlDistribution {
    /// Serve a fixed CRL (replaceable with [`publish`](Self::publish)).
    pub fn fixed(crl: CertificateRevocationList, clock: Arc<dyn Clock>) -> Self {
        let now = clock.monotonic();
        Self {
            current: ArcSwap::from_pointee(PublishedCrl::new(crl, 0, now)),
            ca: None,
            clock,
            reissue: tokio::sync::Mutex::new(()),
            include_next_update: true,
        }
    }

    pub fn for_authority(ca: Arc<CertificateAuthority>, clock: Arc<dyn Clock>, include_next_update: bool) -> Result<Self, CaError> {
        let generation = ca.generation()?;
        let crl = ca.issue_crl(clock.now(), include_next_update)?;
        Ok(Self {
            current: ArcSwap::from_pointee(PublishedCrl::new(crl, generation, clock.monotonic())),
            ca: Some(ca),
            clock,
            reissue: tokio::sync::Mutex::new(()),
            include_next_update,
        })
    }

    pub fn publish(&self, crl: CertificateRevocationList) {
        let generation = self.current.load().generation;
        self.current.store(Arc::new(PublishedCrl::new(crl, generation, self.clock.monotonic())));
    }

    pub fn snapshot(&self) -> Arc<PublishedCrl> {
        self.current.load_full()
    }

    /// Current CRL, re-issued first if stale relative to the ledger.
    pub async fn current(&self) -> Result<Arc<PublishedCrl>, CaError> {
        let Some(ca) = &self.ca else { return Ok(self.snapshot()) };
        let _guard = self.reissue.lock().await;
        let generation = ca.generation()?;
        let cur = self.current.load_full();
        let age = self.clock.monotonic().saturating_sub(cur.issued_at);
        if cur.generation == generation && age < ca.refresh_interval() {
            return Ok(cur);
        }
        let crl = ca.issue_crl(self.clock.now(), self.include_next_update)?;
        let published = Arc::new(PublishedCrl::new(crl, generation, self.clock.monotonic()));
        self.current.store(published.clone());
        tracing::debug!(generation, entries = published.crl.entries().len(), "re-issued CRL");
        Ok(published)
    }
}

async fn crl_der(State(dist): State<Arc<CrlDistribution>>) -> Response {
    match dist.current().await {
        Ok(p) => ([(header::CONTENT_TYPE, CRL_DER_CONTENT_TYPE)], p.der.clone()).into_response(),
        Err(e) => (axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn crl_pem(State(dist): State<Arc<CrlDistribution>>) -> Response {
    match dist.current().await {
        Ok(p) => ([(header::CONTENT_TYPE, CRL_PEM_CONTENT_TYPE)], p.pem.clone()).into_response(),
        Err(e) => (axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// `GET /crl.der` and `GET /crl.pem`; anything else is 404.
pub fn crl_router(dist: Arc<CrlDistribution>) -> Router {
    Router::new()
        .route("/crl.der", get(crl_der))
        .route("/crl.pem", get(crl_pem))
        .with_state(dist)
}

/// Bind the CRL distribution endpoint for `ca`.
pub async fn serve_crl(bind: SocketAddr, ca: Arc<CertificateAuthority>) -> Result<(HttpServer, Arc<CrlDistribution>), ServeError> {
    let dist = Arc::new(CrlDistribution::for_authority(ca, Arc::new(SystemClock::new()), true)?);
    let server = HttpServer::bind(bind, crl_router(dist.clone())).await?;
    Ok((server, dist))
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Ca(#[from] CaError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::crl::reference_serials;

    fn signer() -> Arc<dyn SignatureProvider> {
        Arc::new(RsaSha256Signer::from_pkcs8_pem(include_str!("../testdata/ca_key.pem")).unwrap())
    }

    fn t0() -> Asn1Time {
        Asn1Time::from_civil(2023, 5, 4, 19, 57, 27).unwrap()
    }

    #[test]
    fn ledger_revoke_and_persist() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.txt");
        let mut ledger = RevocationLedger::open(&path).unwrap();
        let [a, b, c] = reference_serials();
        ledger.revoke(a.clone(), CrlReason::KeyCompromise, t0()).unwrap();
        assert_eq!(ledger.len(), 1);
        assert!(matches!(ledger.revoke(a.clone(), CrlReason::KeyCompromise, t0()), Err(CaError::AlreadyRevoked(_))));
        ledger.revoke(b, CrlReason::Superseded, t0()).unwrap();
        ledger.revoke(c, CrlReason::Unspecified, t0()).unwrap();
        let on_disk = fs::read_to_string(&path).unwrap();
        assert_eq!(on_disk.lines().next().unwrap(), "221A0A99711F9968 1 1683230247");

        let mut reloaded = RevocationLedger::open(&path).unwrap();
        assert_eq!(reloaded.records(), ledger.records());
        reloaded.save().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), on_disk);
    }

    #[test]
    fn ledger_rejects_bad_lines() {
        assert!(RevocationLedger::from_text("ZZ 1 0\n").is_err());
        assert!(RevocationLedger::from_text("01 7 0\n").is_err());
        assert!(RevocationLedger::from_text("01 1\n").is_err());
        assert!(RevocationLedger::from_text("01 1 0\n01 1 0\n").is_err());
        assert_eq!(RevocationLedger::from_text("01 1 0\n\n02 0 5\n").unwrap().len(), 2);
    }

    #[test]
    fn ledger_picks_up_external_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.txt");
        let mut a = RevocationLedger::open(&path).unwrap();
        let mut b = RevocationLedger::open(&path).unwrap();
        b.revoke(SerialNumber::from_u64(9), CrlReason::KeyCompromise, t0()).unwrap();
        assert!(a.sync_from_disk().unwrap());
        assert!(a.contains(&SerialNumber::from_u64(9)));
        assert!(matches!(a.revoke(SerialNumber::from_u64(9), CrlReason::KeyCompromise, t0()), Err(CaError::AlreadyRevoked(_))));
    }

    #[test]
    fn issue_reference_crl() {
        let ca = CertificateAuthority::ephemeral(DistinguishedName::smart_grid_root(), signer(), t0()).unwrap();
        for s in reference_serials() {
            ca.revoke(s, CrlReason::KeyCompromise, t0()).unwrap();
        }
        let crl = ca.issue_crl(t0(), false).unwrap();
        assert_eq!(crl.next_update(), None);
        assert_eq!(crl.issuer().to_string(), "C=aa, ST=aa, L=aa, O=aa, OU=aa, CN=rootca");
        let serials: Vec<_> = crl.entries().iter().map(|e| e.serial.clone()).collect();
        assert_eq!(serials, reference_serials());
        assert!(crl.verify(ca.public_key()).unwrap());
    }

    #[test]
    fn empty_ledger_crl_is_signed() {
        let ca = CertificateAuthority::ephemeral(DistinguishedName::smart_grid_root(), signer(), t0()).unwrap();
        let crl = ca.issue_crl(t0(), true).unwrap();
        assert!(crl.entries().is_empty());
        assert_eq!(crl.next_update(), Some(t0().checked_add_seconds(3600).unwrap()));
        assert!(crl.verify(ca.public_key()).unwrap());
    }

    // Field-wise diff oracle: decode both and compare every field separately.
    #[test]
    fn consecutive_issues_differ_only_in_times_and_signature() {
        let ca = CertificateAuthority::ephemeral(DistinguishedName::smart_grid_root(), signer(), t0()).unwrap();
        for s in reference_serials() {
            ca.revoke(s, CrlReason::KeyCompromise, t0()).unwrap();
        }
        let a = CertificateRevocationList::from_der(&ca.issue_crl(t0(), true).unwrap().to_der()).unwrap();
        let b = CertificateRevocationList::from_der(&ca.issue_crl(t0().checked_add_seconds(3600).unwrap(), true).unwrap().to_der()).unwrap();
        assert_eq!(a.version(), b.version());
        assert_eq!(a.issuer(), b.issuer());
        assert_eq!(a.signature_algorithm(), b.signature_algorithm());
        assert_eq!(a.entries(), b.entries());
        assert_ne!(a.this_update(), b.this_update());
        assert_ne!(a.next_update(), b.next_update());
        assert_ne!(a.signature(), b.signature());
    }

    #[test]
    fn ca_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let files = CaFiles::new(dir.path().join("ca"));
        files.init(&DistinguishedName::smart_grid_root(), Some(include_str!("../testdata/ca_key.pem")), 2048, t0()).unwrap();
        assert!(files.init(&DistinguishedName::smart_grid_root(), None, 2048, t0()).is_err());
        let ca = files.load(DEFAULT_REFRESH_INTERVAL).unwrap();
        assert_eq!(ca.issuer(), &DistinguishedName::smart_grid_root());
        assert_eq!(&files.public_key().unwrap(), ca.public_key());
        ca.revoke(SerialNumber::from_u64(5), CrlReason::KeyCompromise, t0()).unwrap();
        let again = files.load(DEFAULT_REFRESH_INTERVAL).unwrap();
        assert_eq!(again.with_ledger(|l| l.len()), 1);
        // the certificate parses as a SEQUENCE of tbs, algorithm, signature
        let mut r = der::DerReader::new(ca.certificate());
        let mut cert = r.read_sequence().unwrap();
        let (_, tbs) = cert.read_raw(tag::SEQUENCE).unwrap();
        crate::crl::read_algorithm_identifier(&mut cert).unwrap();
        let sig = cert.read_bit_string().unwrap();
        assert!(ca.public_key().verify(&oid::sha256_with_rsa_encryption(), tbs, sig).unwrap());
    }

    #[tokio::test]
    async fn distribution_tracks_ledger_and_age() {
        let clock = Arc::new(ManualClock::new(t0()));
        let ca = Arc::new(
            CertificateAuthority::ephemeral(DistinguishedName::smart_grid_root(), signer(), t0())
                .unwrap()
                .with_refresh_interval(Duration::from_secs(10)),
        );
        let dist = CrlDistribution::for_authority(ca.clone(), clock.clone(), true).unwrap();
        let first = dist.current().await.unwrap();
        assert!(first.crl.entries().is_empty());
        assert!(Arc::ptr_eq(&first, &dist.current().await.unwrap()));
        ca.revoke(SerialNumber::from_u64(77), CrlReason::KeyCompromise, t0()).unwrap();
        let second = dist.current().await.unwrap();
        assert_eq!(second.crl.entries().len(), 1);
        clock.advance(Duration::from_secs(10));
        let third = dist.current().await.unwrap();
        assert_eq!(third.crl.this_update().epoch_seconds(), t0().epoch_seconds() + 10);
        assert!(third.pem.starts_with(b"-----BEGIN X509 CRL-----"));
    }
}
