//! Meter-side revocation checking: OCSP or CRL per a byte-cost policy, with
//! fallback between the two and a local CRL cache.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca::DEFAULT_REFRESH_INTERVAL;
use crate::clock::Clock;
use crate::crl::{CertificateRevocationList, DistinguishedName, SerialNumber};
use crate::http;
use crate::ocsp::{self, CertId, HashAlgorithm, OcspRequest, ResponseStatus};
use crate::signing::PublicKey;
use crate::store::{RevocationStatus, StoreError, StoreSnapshot};

pub const CRL_FETCH_TIMEOUT: Duration = Duration::from_secs(10);
const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrlFormat {
    #[default]
    Der,
    Pem,
}

impl FromStr for CrlFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "der" => Ok(CrlFormat::Der),
            "pem" => Ok(CrlFormat::Pem),
            other => Err(format!("unknown CRL format {other:?} (expected der or pem)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Auto,
    ForceOcsp,
    ForceCrl,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "auto" => Ok(Mode::Auto),
            "force-ocsp" => Ok(Mode::ForceOcsp),
            "force-crl" => Ok(Mode::ForceCrl),
            other => Err(format!("unknown mode {other:?} (expected auto, force-ocsp or force-crl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientPolicy {
    pub pem_record_threshold: usize,
    pub der_record_threshold: usize,
    pub ocsp_timeout_ms: u64,
    pub preferred_crl_format: CrlFormat,
    pub batch_min: usize,
    pub mode: Mode,
}

impl Default for ClientPolicy {
    fn default() -> Self {
        Self {
            pem_record_threshold: 14,
            der_record_threshold: 24,
            ocsp_timeout_ms: 2000,
            preferred_crl_format: CrlFormat::Der,
            batch_min: 2,
            mode: Mode::Auto,
        }
    }
}

impl ClientPolicy {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.ocsp_timeout_ms == 0 {
            return Err(ClientError::Policy("ocsp_timeout_ms must be positive".into()));
        }
        if self.batch_min == 0 {
            return Err(ClientError::Policy("batch_min must be at least 1".into()));
        }
        Ok(())
    }

    /// Record count above which OCSP is cheaper than fetching the CRL in the
    /// preferred format.
    pub fn threshold(&self) -> usize {
        match self.preferred_crl_format {
            CrlFormat::Der => self.der_record_threshold,
            CrlFormat::Pem => self.pem_record_threshold,
        }
    }

    pub fn ocsp_timeout(&self) -> Duration {
        Duration::from_millis(self.ocsp_timeout_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Decision {
    UseCache,
    UseOcsp,
    UseCrlFetch,
}

pub fn choose_protocol(policy: &ClientPolicy, n_checks: usize, crl_record_count: Option<usize>, cache_valid: bool) -> Decision {
    debug_assert!(n_checks >= 1);
    if cache_valid {
        return Decision::UseCache;
    }
    match policy.mode {
        Mode::ForceOcsp => return Decision::UseOcsp,
        Mode::ForceCrl => return Decision::UseCrlFetch,
        Mode::Auto => {}
    }
    if n_checks >= policy.batch_min {
        return Decision::UseCrlFetch;
    }
    match crl_record_count {
        Some(n) if n <= policy.threshold() => Decision::UseCrlFetch,
        _ => Decision::UseOcsp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Ocsp,
    CrlCache,
    CrlFetch,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Ocsp => "Ocsp",
            Source::CrlCache => "CrlCache",
            Source::CrlFetch => "CrlFetch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusResult {
    pub serial: SerialNumber,
    #[serde(flatten)]
    pub status: RevocationStatus,
    pub source: Source,
    pub bytes_used: u64,
    pub latency_ms: f64,
    /// Answered from an expired cache because every network path failed.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("all revocation paths failed (ocsp: {ocsp}; crl: {crl})")]
    AllPathsFailed { ocsp: String, crl: String },
    #[error("signature verification failed: {0}")]
    SignatureInvalid(String),
    #[error("invalid client policy: {0}")]
    Policy(String),
    #[error("no endpoint configured")]
    NoEndpoint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub ocsp_url: Option<String>,
    pub crl_der_url: Option<String>,
    pub crl_pem_url: Option<String>,
}

impl Endpoints {
    /// Endpoints of a combined deployment: OCSP at `ocsp_base` and the CRL
    /// distribution point at `crl_base`.
    pub fn from_bases(ocsp_base: &str, crl_base: &str) -> Self {
        let crl = crl_base.trim_end_matches('/');
        Self {
            ocsp_url: Some(format!("{}/", ocsp_base.trim_end_matches('/'))),
            crl_der_url: Some(format!("{crl}/crl.der")),
            crl_pem_url: Some(format!("{crl}/crl.pem")),
        }
    }

    fn crl_url(&self, preferred: CrlFormat) -> Option<(CrlFormat, &str)> {
        let der = self.crl_der_url.as_deref().map(|u| (CrlFormat::Der, u));
        let pem = self.crl_pem_url.as_deref().map(|u| (CrlFormat::Pem, u));
        match preferred {
            CrlFormat::Der => der.or(pem),
            CrlFormat::Pem => pem.or(der),
        }
    }
}

/// The single CA this client trusts.
#[derive(Debug, Clone)]
pub struct TrustAnchor {
    pub issuer: DistinguishedName,
    pub key: PublicKey,
}

#[derive(Debug, Clone)]
pub struct CrlCache {
    pub snapshot: Arc<StoreSnapshot>,
    pub fetched_at: Duration,
    pub ttl: Duration,
}

impl CrlCache {
    pub fn is_valid(&self, clock: &dyn Clock) -> bool {
        let fresh = clock.monotonic() < self.fetched_at + self.ttl;
        fresh && self.snapshot.source_next_update().is_none_or(|next| clock.now() < next)
    }
}

/// One meter's checker. Not shared between tasks; the cache is per instance.
pub struct HybridClient {
    anchor: TrustAnchor,
    endpoints: Endpoints,
    policy: ClientPolicy,
    clock: Arc<dyn Clock>,
    cache: Option<CrlCache>,
    cache_ttl: Duration,
    record_count: Option<usize>,
    rng: ChaCha20Rng,
}

enum PathError {
    Unavailable(String),
    BadSignature(String),
}

impl PathError {
    fn describe(&self) -> String {
        match self {
            PathError::Unavailable(m) => m.clone(),
            PathError::BadSignature(m) => format!("signature invalid: {m}"),
        }
    }
}

struct Fetched {
    snapshot: Arc<StoreSnapshot>,
    bytes: u64,
}

impl HybridClient {
    pub fn new(anchor: TrustAnchor, endpoints: Endpoints, policy: ClientPolicy, clock: Arc<dyn Clock>) -> Result<Self, ClientError> {
        policy.validate()?;
        if endpoints.ocsp_url.is_none() && endpoints.crl_url(CrlFormat::Der).is_none() {
            return Err(ClientError::NoEndpoint);
        }
        Ok(Self {
            anchor,
            endpoints,
            policy,
            clock,
            cache: None,
            cache_ttl: DEFAULT_REFRESH_INTERVAL,
            record_count: None,
            rng: ChaCha20Rng::from_entropy(),
        })
    }

    /// Cache lifetime when the CRL carries no nextUpdate.
    pub fn with_cache_ttl(mut self, ttl: Duration) -> Self {
        self.cache_ttl = ttl;
        self
    }

    /// Deterministic nonces.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn policy(&self) -> &ClientPolicy {
        &self.policy
    }

    pub fn cache(&self) -> Option<&CrlCache> {
        self.cache.as_ref()
    }

    pub fn cache_valid(&self) -> bool {
        self.cache.as_ref().is_some_and(|c| c.is_valid(self.clock.as_ref()))
    }

    /// Record count of the most recently fetched CRL, if any.
    pub fn known_record_count(&self) -> Option<usize> {
        self.record_count
    }

    pub fn decide(&self, n_checks: usize) -> Decision {
        choose_protocol(&self.policy, n_checks, self.record_count, self.cache_valid())
    }

    pub async fn check(&mut self, serial: &SerialNumber) -> Result<StatusResult, ClientError> {
        let started = Instant::now();
        let decision = self.decide(1);
        let mut ocsp_err = None;
        if decision == Decision::UseCache {
            let cache = self.cache.as_ref().expect("valid cache");
            return Ok(result(serial, cache.snapshot.lookup(serial), Source::CrlCache, 0, started, false));
        }
        if decision == Decision::UseOcsp {
            match self.query_ocsp(serial).await {
                Ok((status, bytes)) => return Ok(result(serial, status, Source::Ocsp, bytes, started, false)),
                Err(e) => ocsp_err = Some(e),
            }
        }
        let crl_err = match self.fetch_crl().await {
            Ok(f) => return Ok(result(serial, f.snapshot.lookup(serial), Source::CrlFetch, f.bytes, started, false)),
            Err(e) => e,
        };
        if ocsp_err.is_none() {
            match self.query_ocsp(serial).await {
                Ok((status, bytes)) => return Ok(result(serial, status, Source::Ocsp, bytes, started, false)),
                Err(e) => ocsp_err = Some(e),
            }
        }
        if let Some(cache) = &self.cache {
            tracing::warn!(%serial, "both network paths failed; answering from expired CRL cache");
            return Ok(result(serial, cache.snapshot.lookup(serial), Source::CrlCache, 0, started, true));
        }
        Err(give_up(ocsp_err, Some(crl_err)))
    }

    /// Check many serials, amortizing a single CRL download when the policy
    /// selects CRL for the batch.
    pub async fn check_many(&mut self, serials: &[SerialNumber]) -> Result<Vec<StatusResult>, ClientError> {
        if serials.len() <= 1 {
            let mut out = Vec::new();
            for s in serials {
                out.push(self.check(s).await?);
            }
            return Ok(out);
        }
        match self.decide(serials.len()) {
            Decision::UseOcsp => {
                let mut out = Vec::with_capacity(serials.len());
                for s in serials {
                    out.push(self.check(s).await?);
                }
                Ok(out)
            }
            Decision::UseCache => {
                let snap = self.cache.as_ref().expect("valid cache").snapshot.clone();
                Ok(serials.iter().map(|s| result(s, snap.lookup(s), Source::CrlCache, 0, Instant::now(), false)).collect())
            }
            Decision::UseCrlFetch => {
                let started = Instant::now();
                match self.fetch_crl().await {
                    Ok(f) => Ok(serials
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let (source, bytes) = if i == 0 { (Source::CrlFetch, f.bytes) } else { (Source::CrlCache, 0) };
                            result(s, f.snapshot.lookup(s), source, bytes, started, false)
                        })
                        .collect()),
                    Err(e) => {
                        tracing::debug!(error = e.describe(), "batch CRL fetch failed; checking individually");
                        let mut out = Vec::with_capacity(serials.len());
                        for s in serials {
                            out.push(self.check(s).await?);
                        }
                        Ok(out)
                    }
                }
            }
        }
    }

    async fn query_ocsp(&mut self, serial: &SerialNumber) -> Result<(RevocationStatus, u64), PathError> {
        let url = self.endpoints.ocsp_url.as_deref().ok_or_else(|| PathError::Unavailable("no OCSP endpoint".into()))?;
        let id = CertId::new(HashAlgorithm::Sha1, &self.anchor.issuer, &self.anchor.key, serial.clone());
        let mut nonce = vec![0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let request = OcspRequest::new(vec![id.clone()], Some(nonce.clone())).expect("well-formed request");
        let ex = http::post(url, ocsp::REQUEST_CONTENT_TYPE, Bytes::from(request.to_der()), self.policy.ocsp_timeout())
            .await
            .map_err(|e| PathError::Unavailable(e.to_string()))?;
        if !ex.status.is_success() {
            return Err(PathError::Unavailable(format!("OCSP HTTP {}", ex.status)));
        }
        let response = ocsp::decode_ocsp_response(&ex.body).map_err(|e| PathError::Unavailable(e.to_string()))?;
        if response.status != ResponseStatus::Successful {
            return Err(PathError::Unavailable(format!("OCSP responder answered {:?}", response.status)));
        }
        let basic = response.basic.as_ref().expect("successful response has a body");
        if !basic.verify(&self.anchor.key) {
            return Err(PathError::BadSignature("OCSP response".into()));
        }
        if response.nonce() != Some(nonce.as_slice()) {
            return Err(PathError::Unavailable("OCSP nonce mismatch".into()));
        }
        match response.responses() {
            [single] if single.cert_id == id => Ok((single.status, ex.total_bytes())),
            _ => Err(PathError::Unavailable("OCSP response does not answer the request".into())),
        }
    }

    async fn fetch_crl(&mut self) -> Result<Fetched, PathError> {
        let (format, url) = self
            .endpoints
            .crl_url(self.policy.preferred_crl_format)
            .ok_or_else(|| PathError::Unavailable("no CRL endpoint".into()))?;
        let ex = http::get(url, CRL_FETCH_TIMEOUT).await.map_err(|e| PathError::Unavailable(e.to_string()))?;
        if !ex.status.is_success() {
            return Err(PathError::Unavailable(format!("CRL HTTP {}", ex.status)));
        }
        let crl = match format {
            CrlFormat::Der => CertificateRevocationList::from_der(&ex.body),
            CrlFormat::Pem => std::str::from_utf8(&ex.body)
                .map_err(|_| crate::crl::CrlError::Malformed("PEM body is not UTF-8".into()))
                .and_then(CertificateRevocationList::from_pem),
        }
        .map_err(|e| PathError::Unavailable(e.to_string()))?;
        if crl.issuer() != &self.anchor.issuer {
            return Err(PathError::Unavailable(format!("CRL issued by {}", crl.issuer())));
        }
        let snapshot = match StoreSnapshot::from_crl(&crl, &self.anchor.key, self.clock.monotonic()) {
            Ok(s) => Arc::new(s),
            Err(StoreError::SignatureInvalid) => return Err(PathError::BadSignature("CRL".into())),
            Err(e) => return Err(PathError::Unavailable(e.to_string())),
        };
        self.record_count = Some(snapshot.len());
        self.cache = Some(CrlCache { snapshot: snapshot.clone(), fetched_at: self.clock.monotonic(), ttl: self.cache_ttl });
        Ok(Fetched { snapshot, bytes: ex.total_bytes() })
    }
}

fn result(serial: &SerialNumber, status: RevocationStatus, source: Source, bytes_used: u64, started: Instant, stale: bool) -> StatusResult {
    StatusResult {
        serial: serial.clone(),
        status,
        source,
        bytes_used,
        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        stale,
    }
}

fn give_up(ocsp: Option<PathError>, crl: Option<PathError>) -> ClientError {
    for e in [&ocsp, &crl].into_iter().flatten() {
        if let PathError::BadSignature(what) = e {
            return ClientError::SignatureInvalid(what.clone());
        }
    }
    ClientError::AllPathsFailed {
        ocsp: ocsp.map_or_else(|| "not attempted".into(), |e| e.describe()),
        crl: crl.map_or_else(|| "not attempted".into(), |e| e.describe()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decision_examples() {
        let p = ClientPolicy::default();
        assert_eq!(choose_protocol(&p, 1, Some(30), false), Decision::UseOcsp);
        let pem = ClientPolicy { preferred_crl_format: CrlFormat::Pem, ..p.clone() };
        assert_eq!(choose_protocol(&pem, 1, Some(5), false), Decision::UseCrlFetch);
        assert_eq!(choose_protocol(&p, 1, Some(1000), true), Decision::UseCache);
        assert_eq!(choose_protocol(&p, 1, None, false), Decision::UseOcsp);
        assert_eq!(choose_protocol(&p, 100, Some(1000), false), Decision::UseCrlFetch);
        assert_eq!(choose_protocol(&p, 1, Some(24), false), Decision::UseCrlFetch);
        assert_eq!(choose_protocol(&p, 1, Some(25), false), Decision::UseOcsp);
        let force = ClientPolicy { mode: Mode::ForceCrl, ..p.clone() };
        assert_eq!(choose_protocol(&force, 1, Some(1000), false), Decision::UseCrlFetch);
        let force = ClientPolicy { mode: Mode::ForceOcsp, ..p };
        assert_eq!(choose_protocol(&force, 50, Some(0), false), Decision::UseOcsp);
    }

    #[test]
    fn policy_parsing_and_validation() {
        assert_eq!("force_ocsp".parse::<Mode>().unwrap(), Mode::ForceOcsp);
        assert_eq!("PEM".parse::<CrlFormat>().unwrap(), CrlFormat::Pem);
        assert!("xml".parse::<CrlFormat>().is_err());
        assert!(ClientPolicy { ocsp_timeout_ms: 0, ..Default::default() }.validate().is_err());
        let p: ClientPolicy = serde_json::from_str(r#"{"mode":"force-crl","der_record_threshold":3}"#).unwrap();
        assert_eq!(p.mode, Mode::ForceCrl);
        assert_eq!(p.pem_record_threshold, 14);
    }

    fn policy_strategy() -> impl Strategy<Value = ClientPolicy> {
        (0usize..64, 0usize..64, any::<bool>(), 1usize..8).prop_map(|(pem, der, use_pem, batch_min)| ClientPolicy {
            pem_record_threshold: pem,
            der_record_threshold: der,
            preferred_crl_format: if use_pem { CrlFormat::Pem } else { CrlFormat::Der },
            batch_min,
            ..Default::default()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn more_records_never_flip_ocsp_to_crl(policy in policy_strategy(), a in 0usize..200, b in 0usize..200) {
            let (lo, hi) = (a.min(b), a.max(b));
            if choose_protocol(&policy, 1, Some(lo), false) == Decision::UseOcsp {
                prop_assert_eq!(choose_protocol(&policy, 1, Some(hi), false), Decision::UseOcsp);
            }
        }

        #[test]
        fn valid_cache_always_wins(policy in policy_strategy(), n in 1usize..50, count in prop::option::of(0usize..100)) {
            prop_assert_eq!(choose_protocol(&policy, n, count, true), Decision::UseCache);
        }
    }
}
