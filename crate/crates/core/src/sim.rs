//! Experiment drivers: the meter-fleet simulation with outage injection, the
//! responder throughput benchmark and the CRL/OCSP byte measurement.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use hyper::Method;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca::{crl_router, CaError, CertificateAuthority, CrlDistribution};
use crate::client::{ClientPolicy, Endpoints, HybridClient, Source, StatusResult, TrustAnchor};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::crl::{build_crl, CrlError, CrlReason, DistinguishedName, RevokedEntry, SerialNumber};
use crate::der::Asn1Time;
use crate::http::{self, BindError, Connection, HttpServer};
use crate::ocsp::{self, serve_ocsp, CertId, HashAlgorithm, OcspRequest, Responder, ResponseStatus};
use crate::parallel::{self, Execution};
use crate::signing::{PublicKey, RsaSha256Signer, SignatureProvider};
use crate::store::{HttpCrlFetcher, RefreshOutcome, RevocationStatus, RevocationStore, StoreError};

const LOCALHOST: SocketAddr = SocketAddr::new(std::net::IpAddr::V4(std::net::Ipv4Addr::LOCALHOST), 0);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("benchmark target down: {0}")]
    TargetDown(String),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Ca(#[from] CaError),
    #[error(transparent)]
    Crl(#[from] CrlError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Fixed reference instant used as the virtual-time origin.
pub fn reference_epoch() -> Asn1Time {
    Asn1Time::from_civil(2023, 5, 4, 19, 57, 27).expect("valid date")
}

/// Deterministic 8-octet serials (first octet in 0x10..=0x7F so every DER
/// INTEGER has the same length).
pub fn random_serials(n: usize, rng: &mut impl RngCore) -> Vec<SerialNumber> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut b = [0u8; 8];
        rng.fill_bytes(&mut b);
        b[0] = 0x10 + b[0] % 0x70;
        let s = SerialNumber::from_bytes(&b).expect("8 octets");
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

fn key_compromise(serials: &[SerialNumber], at: Asn1Time) -> Vec<RevokedEntry> {
    serials
        .iter()
        .map(|s| RevokedEntry { serial: s.clone(), revocation_date: at, reason: Some(CrlReason::KeyCompromise) })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_meters: usize,
    pub request_rate_per_meter_hz: f64,
    pub duration_s: f64,
    pub outage_windows: Vec<(f64, f64)>,
    pub revoked_fraction: f64,
    pub rng_seed: u64,
    pub policy: ClientPolicy,
    /// Size of the issued-certificate pool the meters query.
    pub n_issued: usize,
    /// Virtual-time step; server state changes only on step boundaries.
    pub tick_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_meters: 100,
            request_rate_per_meter_hz: 0.5,
            duration_s: 60.0,
            outage_windows: Vec::new(),
            revoked_fraction: 0.1,
            rng_seed: 1,
            policy: ClientPolicy::default(),
            n_issued: 1000,
            tick_s: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.n_meters == 0 || self.n_issued == 0 {
            return bad("n_meters and n_issued must be positive");
        }
        if self.request_rate_per_meter_hz.is_nan() || self.request_rate_per_meter_hz <= 0.0 || !self.request_rate_per_meter_hz.is_finite() {
            return bad("request rate must be positive");
        }
        if self.duration_s.is_nan() || self.duration_s <= 0.0 || self.tick_s.is_nan() || self.tick_s <= 0.0 {
            return bad("duration and tick must be positive");
        }
        if !(0.0..=1.0).contains(&self.revoked_fraction) {
            return bad("revoked_fraction must be within [0, 1]");
        }
        for &(start, end) in &self.outage_windows {
            if !(0.0 <= start && start < end && end <= self.duration_s) {
                return bad("outage windows must satisfy 0 <= start < end <= duration");
            }
        }
        self.policy.validate().map_err(|e| SimError::Config(e.to_string()))
    }

    fn in_outage(&self, t: f64) -> bool {
        self.outage_windows.iter().any(|&(s, e)| s <= t && t < e)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &mut [f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(f64::total_cmp);
        let rank = |q: f64| samples[((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1];
        Self { mean: samples.iter().sum::<f64>() / samples.len() as f64, p50: rank(0.50), p99: rank(0.99) }
    }
}

/// The parts of a report that depend only on the configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimCounts {
    pub total_checks: u64,
    pub correct_checks: u64,
    pub failures: u64,
    pub source_counts: BTreeMap<Source, u64>,
    pub outage_checks: u64,
    pub outage_violations: u64,
    pub stale_answers: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    #[serde(flatten)]
    pub counts: SimCounts,
    pub latency_ms: LatencySummary,
    pub bytes_by_source: BTreeMap<Source, u64>,
    pub wall_time_s: f64,
}

impl SimReport {
    /// Every check answered, correct, and no OCSP answers inside an outage.
    pub fn passed(&self) -> bool {
        let c = &self.counts;
        c.failures == 0 && c.correct_checks == c.total_checks && c.outage_violations == 0
    }

    pub fn render_table(&self) -> String {
        let c = &self.counts;
        let mut out = String::new();
        let _ = writeln!(out, "{:<22}{:>12}", "total checks", c.total_checks);
        let _ = writeln!(out, "{:<22}{:>12}", "correct checks", c.correct_checks);
        let _ = writeln!(out, "{:<22}{:>12}", "failures", c.failures);
        let _ = writeln!(out, "{:<22}{:>12}", "outage checks", c.outage_checks);
        let _ = writeln!(out, "{:<22}{:>12}", "outage violations", c.outage_violations);
        let _ = writeln!(out, "{:<22}{:>12}", "stale answers", c.stale_answers);
        let _ = writeln!(out, "{:<22}{:>12.3}", "latency mean (ms)", self.latency_ms.mean);
        let _ = writeln!(out, "{:<22}{:>12.3}", "latency p50 (ms)", self.latency_ms.p50);
        let _ = writeln!(out, "{:<22}{:>12.3}", "latency p99 (ms)", self.latency_ms.p99);
        let _ = writeln!(out, "\n{:<12}{:>12}{:>14}", "source", "checks", "bytes");
        for source in [Source::Ocsp, Source::CrlFetch, Source::CrlCache] {
            let n = c.source_counts.get(&source).copied().unwrap_or(0);
            let b = self.bytes_by_source.get(&source).copied().unwrap_or(0);
            let _ = writeln!(out, "{:<12}{:>12}{:>14}", source.to_string(), n, b);
        }
        out
    }
}

struct Event {
    meter: usize,
    at: f64,
    serial: SerialNumber,
}

fn schedule(config: &SimConfig, issued: &[SerialNumber], rng: &mut ChaCha20Rng) -> Vec<Event> {
    let period = 1.0 / config.request_rate_per_meter_hz;
    let mut events = Vec::new();
    for meter in 0..config.n_meters {
        let phase = rng.gen_range(0.0..period);
        for k in 0.. {
            let jitter = rng.gen_range(-0.05..0.05) * period;
            let at = (phase + k as f64 * period + jitter).max(0.0);
            if at >= config.duration_s {
                break;
            }
            let serial = issued[rng.gen_range(0..issued.len())].clone();
            events.push(Event { meter, at, serial });
        }
    }
    events.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.meter.cmp(&b.meter)));
    events
}

fn segment_bounds(config: &SimConfig) -> Vec<f64> {
    let mut bounds: Vec<f64> = (0..)
        .map(|i| i as f64 * config.tick_s)
        .take_while(|t| *t < config.duration_s)
        .collect();
    for &(s, e) in &config.outage_windows {
        bounds.push(s);
        bounds.push(e);
    }
    bounds.push(config.duration_s);
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    bounds
}

struct Meter {
    client: HybridClient,
    clock: Arc<ManualClock>,
}

struct Observation {
    serial: SerialNumber,
    in_outage: bool,
    outcome: Result<StatusResult, String>,
}

/// Run the fleet against in-process CA, CRL and OCSP endpoints in virtual time.
/// `signer` defaults to a freshly generated RSA-2048 key.
pub async fn run_simulation(config: &SimConfig, signer: Option<Arc<dyn SignatureProvider>>) -> Result<SimReport, SimError> {
    config.validate()?;
    let wall = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let base = reference_epoch();
    let signer = match signer {
        Some(s) => s,
        None => Arc::new(
            tokio::task::spawn_blocking(|| RsaSha256Signer::generate(RsaSha256Signer::DEFAULT_BITS))
                .await
                .expect("key generation task")
                .map_err(|e| SimError::Config(e.to_string()))?,
        ),
    };
    let issuer = DistinguishedName::smart_grid_root();

    let issued = random_serials(config.n_issued, &mut rng);
    let n_revoked = (config.revoked_fraction * config.n_issued as f64).round() as usize;
    let revoked: HashSet<SerialNumber> = issued.choose_multiple(&mut rng, n_revoked).cloned().collect();

    let server_clock = Arc::new(ManualClock::new(base));
    let ca = Arc::new(CertificateAuthority::ephemeral(issuer.clone(), signer.clone(), base)?);
    for serial in &revoked {
        ca.revoke(serial.clone(), CrlReason::KeyCompromise, base)?;
    }
    let dist = Arc::new(CrlDistribution::for_authority(ca.clone(), server_clock.clone(), true)?);
    let crl_server = HttpServer::bind(LOCALHOST, crl_router(dist)).await?;
    let store = Arc::new(RevocationStore::new(signer.public_key().clone(), server_clock.clone()));
    if let RefreshOutcome::Retained { error } = store.refresh(&HttpCrlFetcher::new(crl_server.url("/crl.der"))).await {
        return Err(SimError::EndpointUnavailable(error));
    }
    let responder = Responder::new(&issuer, signer.clone(), Some(ca.certificate().to_vec()));
    let ocsp_server = serve_ocsp(LOCALHOST, store, responder).await?;
    let endpoints = Endpoints::from_bases(&ocsp_server.url("/"), &crl_server.url(""));

    let anchor = TrustAnchor { issuer: issuer.clone(), key: signer.public_key().clone() };
    let mut meters: Vec<Option<Meter>> = (0..config.n_meters)
        .map(|i| {
            let clock = Arc::new(ManualClock::new(base));
            let client = HybridClient::new(anchor.clone(), endpoints.clone(), config.policy.clone(), clock.clone())
                .map(|c| c.with_seed(config.rng_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
                .map_err(|e| SimError::Config(e.to_string()))?;
            Ok(Some(Meter { client, clock }))
        })
        .collect::<Result<_, SimError>>()?;

    let events = schedule(config, &issued, &mut rng);
    let bounds = segment_bounds(config);
    let mut observations = Vec::with_capacity(events.len());
    let mut cursor = 0;
    let mut paused = false;
    for seg in bounds.windows(2) {
        let (start, end) = (seg[0], seg[1]);
        let outage = config.in_outage(start);
        if outage && !paused {
            tracing::info!(at_s = start, "OCSP outage begins");
            ocsp_server.pause().await;
            paused = true;
        } else if !outage && paused {
            tracing::info!(at_s = start, "OCSP outage ends");
            ocsp_server.resume().await?;
            paused = false;
        }
        server_clock.set(Duration::from_secs_f64(start));

        let mut per_meter: HashMap<usize, Vec<(f64, SerialNumber)>> = HashMap::new();
        while cursor < events.len() && events[cursor].at < end {
            let e = &events[cursor];
            per_meter.entry(e.meter).or_default().push((e.at, e.serial.clone()));
            cursor += 1;
        }
        let mut tasks = Vec::with_capacity(per_meter.len());
        for (id, checks) in per_meter {
            let mut meter = meters[id].take().expect("meter idle between segments");
            tasks.push(tokio::spawn(async move {
                let mut seen = Vec::with_capacity(checks.len());
                for (at, serial) in checks {
                    meter.clock.set(Duration::from_secs_f64(at));
                    let outcome = meter.client.check(&serial).await.map_err(|e| e.to_string());
                    seen.push(Observation { serial, in_outage: outage, outcome });
                }
                (id, meter, seen)
            }));
        }
        for task in tasks {
            let (id, meter, seen) = task.await.expect("meter task");
            meters[id] = Some(meter);
            observations.extend(seen);
        }
    }
    ocsp_server.shutdown().await;
    crl_server.shutdown().await;

    let mut counts = SimCounts {
        total_checks: observations.len() as u64,
        correct_checks: 0,
        failures: 0,
        source_counts: BTreeMap::new(),
        outage_checks: 0,
        outage_violations: 0,
        stale_answers: 0,
    };
    let mut bytes_by_source = BTreeMap::new();
    let mut latencies = Vec::with_capacity(observations.len());
    for obs in &observations {
        counts.outage_checks += obs.in_outage as u64;
        match &obs.outcome {
            Ok(r) => {
                let expected_revoked = revoked.contains(&obs.serial);
                let correct = r.status != RevocationStatus::Unknown && r.status.is_revoked() == expected_revoked;
                counts.correct_checks += correct as u64;
                if !correct {
                    tracing::warn!(serial = %obs.serial, status = r.status.label(), source = %r.source, "status disagrees with ledger");
                }
                *counts.source_counts.entry(r.source).or_insert(0) += 1;
                *bytes_by_source.entry(r.source).or_insert(0) += r.bytes_used;
                counts.stale_answers += r.stale as u64;
                if obs.in_outage && r.source == Source::Ocsp {
                    counts.outage_violations += 1;
                }
                latencies.push(r.latency_ms);
            }
            Err(e) => {
                tracing::warn!(serial = %obs.serial, error = %e, "check failed");
                counts.failures += 1;
            }
        }
    }
    Ok(SimReport {
        counts,
        latency_ms: LatencySummary::from_samples(&mut latencies),
        bytes_by_source,
        wall_time_s: wall.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub n_requests: usize,
    pub concurrency: usize,
    pub keep_alive: bool,
    pub total_time_s: f64,
    /// Wall time divided by the number of requests.
    pub avg_request_s: f64,
    pub throughput_rps: f64,
    pub errors: u64,
}

impl BenchReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14}{:>12}{:>12}{:>16}{:>18}{:>10}", "requests", "concurrency", "keep-alive", "total time (s)", "avg request (s)", "errors");
        let _ = writeln!(
            out,
            "{:<14}{:>12}{:>12}{:>16.3}{:>18.6}{:>10}",
            self.n_requests,
            self.concurrency,
            if self.keep_alive { "yes" } else { "no" },
            self.total_time_s,
            self.avg_request_s,
            self.errors
        );
        out
    }
}

async fn bench_once(conn: &mut Option<Connection>, url: &str, body: Bytes, keep_alive: bool) -> bool {
    for _attempt in 0..2 {
        if conn.is_none() {
            match Connection::open(url).await {
                Ok(c) => *conn = Some(c),
                Err(_) => continue,
            }
        }
        let c = conn.as_mut().expect("connection just opened");
        match c.send(Method::POST, Some(ocsp::REQUEST_CONTENT_TYPE), body.clone(), !keep_alive).await {
            Ok(ex) => {
                if !keep_alive {
                    *conn = None;
                }
                return ex.status.is_success()
                    && ocsp::decode_ocsp_response(&ex.body).is_ok_and(|r| r.status == ResponseStatus::Successful);
            }
            Err(_) => *conn = None,
        }
    }
    false
}

/// Issue exactly `n_requests` OCSP POSTs from `concurrency` workers, cycling
/// through `bodies`.
pub async fn run_bench(n_requests: usize, concurrency: usize, url: &str, bodies: Vec<Bytes>, keep_alive: bool) -> Result<BenchReport, SimError> {
    if n_requests == 0 || concurrency == 0 || bodies.is_empty() {
        return Err(SimError::Config("requests, concurrency and bodies must be non-empty".into()));
    }
    Connection::open(url).await.map_err(|e| SimError::TargetDown(e.to_string()))?;
    let bodies = Arc::new(bodies);
    let next = Arc::new(AtomicUsize::new(0));
    let errors = Arc::new(AtomicU64::new(0));
    let started = Instant::now();
    let workers: Vec<_> = (0..concurrency)
        .map(|_| {
            let (bodies, next, errors, url) = (bodies.clone(), next.clone(), errors.clone(), url.to_string());
            tokio::spawn(async move {
                let mut conn = None;
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n_requests {
                        break;
                    }
                    if !bench_once(&mut conn, &url, bodies[i % bodies.len()].clone(), keep_alive).await {
                        errors.fetch_add(1, Ordering::Relaxed);
                    }
                }
            })
        })
        .collect();
    for w in workers {
        w.await.expect("bench worker");
    }
    let total = started.elapsed().as_secs_f64();
    Ok(BenchReport {
        n_requests,
        concurrency,
        keep_alive,
        total_time_s: total,
        avg_request_s: total / n_requests as f64,
        throughput_rps: n_requests as f64 / total,
        errors: errors.load(Ordering::Relaxed),
    })
}

/// An in-process responder backed by a store of `n_revoked` serials, plus a
/// pool of ready-made request bodies (half revoked, half good serials).
pub struct BenchFixture {
    pub server: HttpServer,
    pub bodies: Vec<Bytes>,
}

impl BenchFixture {
    pub async fn start(bind: SocketAddr, n_revoked: usize, signer: Arc<dyn SignatureProvider>, seed: u64) -> Result<Self, SimError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let issuer = DistinguishedName::smart_grid_root();
        let base = reference_epoch();
        let serials = random_serials(n_revoked + 512, &mut rng);
        let (revoked, good) = serials.split_at(n_revoked);
        let crl = build_crl(&issuer, &key_compromise(revoked, base), base, None, signer.as_ref())?;
        let store = Arc::new(RevocationStore::new(signer.public_key().clone(), Arc::new(SystemClock::new())));
        store.load_crl(&crl)?;
        let certificate = crate::ca::self_signed_certificate(&issuer, signer.as_ref(), base, 3650)?;
        let responder = Responder::new(&issuer, signer.clone(), Some(certificate));
        let server = serve_ocsp(bind, store, responder).await?;
        let pick: Vec<SerialNumber> = revoked.iter().take(512).chain(good.iter()).cloned().collect();
        let bodies = ocsp_request_bodies(&issuer, signer.public_key(), &pick, &mut rng);
        Ok(Self { server, bodies })
    }
}

/// One encoded single-CertID OCSP request (SHA-1, 16-byte nonce) per serial.
pub fn ocsp_request_bodies(issuer: &DistinguishedName, key: &PublicKey, serials: &[SerialNumber], rng: &mut impl RngCore) -> Vec<Bytes> {
    serials
        .iter()
        .map(|s| {
            let id = CertId::new(HashAlgorithm::Sha1, issuer, key, s.clone());
            let mut nonce = vec![0u8; 16];
            rng.fill_bytes(&mut nonce);
            Bytes::from(OcspRequest::new(vec![id], Some(nonce)).expect("valid request").to_der())
        })
        .collect()
}

pub struct MeasureParams {
    pub signer: Arc<dyn SignatureProvider>,
    pub issuer: DistinguishedName,
    /// Attach the CA certificate to OCSP responses, as the served responder does.
    pub include_certificate: bool,
    pub seed: u64,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeasureRow {
    pub record_count: usize,
    /// HTTP GET exchange bytes for the DER CRL.
    pub der_bytes: u64,
    pub pem_bytes: u64,
    /// One OCSP POST exchange (request plus response).
    pub ocsp_aggregate_bytes: u64,
    pub der_body_bytes: usize,
    pub pem_body_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeasureReport {
    pub rows: Vec<MeasureRow>,
    /// Smallest record count whose DER CRL exchange exceeds the OCSP exchange.
    pub crossover_der: Option<usize>,
    pub crossover_pem: Option<usize>,
}

impl MeasureReport {
    pub fn ocsp_constant(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].ocsp_aggregate_bytes == w[1].ocsp_aggregate_bytes)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>12}{:>12}{:>16}", "records", "DER bytes", "PEM bytes", "OCSP req+resp");
        for r in &self.rows {
            let _ = writeln!(out, "{:<10}{:>12}{:>12}{:>16}", r.record_count, r.der_bytes, r.pem_bytes, r.ocsp_aggregate_bytes);
        }
        let show = |c: Option<usize>| c.map_or_else(|| "none".to_string(), |n| n.to_string());
        let _ = writeln!(out, "\ncrossover DER: {}\ncrossover PEM: {}", show(self.crossover_der), show(self.crossover_pem));
        out
    }
}

/// For each record count, build and serve a CRL of that size and measure
/// the HTTP bytes of fetching it against one OCSP exchange for a good serial.
pub async fn measure_bytes(record_counts: &[usize], params: &MeasureParams) -> Result<MeasureReport, SimError> {
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let base = reference_epoch();
    let max = record_counts.iter().copied().max().unwrap_or(0);
    let serials = random_serials(max + 1, &mut rng);
    let (queried, pool) = serials.split_last().expect("at least one serial");
    let entries = key_compromise(pool, base);
    let issuer = &params.issuer;
    let signer = params.signer.as_ref();
    let crls = parallel::try_map(record_counts, params.execution, |&n| build_crl(issuer, &entries[..n], base, None, signer))?;

    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let dist = Arc::new(CrlDistribution::fixed(crls.first().cloned().expect("non-empty counts"), clock.clone()));
    let crl_server = HttpServer::bind(LOCALHOST, crl_router(dist.clone())).await?;
    let store = Arc::new(RevocationStore::new(params.signer.public_key().clone(), clock));
    let certificate = if params.include_certificate {
        Some(crate::ca::self_signed_certificate(issuer, signer, base, 3650)?)
    } else {
        None
    };
    let responder = Responder::new(issuer, params.signer.clone(), certificate);
    let ocsp_server = serve_ocsp(LOCALHOST, store.clone(), responder).await?;
    let id = CertId::new(HashAlgorithm::Sha1, issuer, params.signer.public_key(), queried.clone());
    let timeout = Duration::from_secs(10);
    let unavailable = |e: http::HttpError| SimError::EndpointUnavailable(e.to_string());

    let mut rows = Vec::with_capacity(crls.len());
    for (crl, &n) in crls.into_iter().zip(record_counts) {
        store.load_crl(&crl)?;
        dist.publish(crl);
        let der = http::get(&crl_server.url("/crl.der"), timeout).await.map_err(unavailable)?;
        let pem = http::get(&crl_server.url("/crl.pem"), timeout).await.map_err(unavailable)?;
        let mut nonce = vec![0u8; 16];
        rng.fill_bytes(&mut nonce);
        let request = OcspRequest::new(vec![id.clone()], Some(nonce)).expect("valid request");
        let ocsp = http::post(&ocsp_server.url("/"), ocsp::REQUEST_CONTENT_TYPE, request.to_der().into(), timeout)
            .await
            .map_err(unavailable)?;
        rows.push(MeasureRow {
            record_count: n,
            der_bytes: der.total_bytes(),
            pem_bytes: pem.total_bytes(),
            ocsp_aggregate_bytes: ocsp.total_bytes(),
            der_body_bytes: der.body.len(),
            pem_body_bytes: pem.body.len(),
        });
    }
    ocsp_server.shutdown().await;
    crl_server.shutdown().await;

    let crossover = |bytes: fn(&MeasureRow) -> u64| rows.iter().find(|r| bytes(r) > r.ocsp_aggregate_bytes).map(|r| r.record_count);
    let crossover_der = crossover(|r| r.der_bytes);
    let crossover_pem = crossover(|r| r.pem_bytes);
    Ok(MeasureReport { rows, crossover_der, crossover_pem })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_deterministic_and_bounded() {
        let config = SimConfig { n_meters: 5, duration_s: 10.0, request_rate_per_meter_hz: 2.0, ..Default::default() };
        let issued = random_serials(50, &mut ChaCha20Rng::seed_from_u64(1));
        let a = schedule(&config, &issued, &mut ChaCha20Rng::seed_from_u64(9));
        let b = schedule(&config, &issued, &mut ChaCha20Rng::seed_from_u64(9));
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.at == y.at && x.serial == y.serial && x.meter == y.meter));
        assert!(a.iter().all(|e| (0.0..10.0).contains(&e.at)));
        assert!((95..=105).contains(&a.len()), "{}", a.len());
    }

    #[test]
    fn segments_split_on_outage_edges() {
        let config = SimConfig { duration_s: 5.0, tick_s: 2.0, outage_windows: vec![(1.5, 3.0)], ..Default::default() };
        assert_eq!(segment_bounds(&config), [0.0, 1.5, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig { outage_windows: vec![(40.0, 20.0)], ..Default::default() }.validate().is_err());
        assert!(SimConfig { outage_windows: vec![(0.0, 61.0)], ..Default::default() }.validate().is_err());
        assert!(SimConfig { request_rate_per_meter_hz: 0.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { revoked_fraction: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn latency_percentiles() {
        let mut xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = LatencySummary::from_samples(&mut xs);
        assert_eq!((s.p50, s.p99), (50.0, 99.0));
        assert_eq!(s.mean, 50.5);
        assert_eq!(LatencySummary::from_samples(&mut []), LatencySummary::default());
    }

    #[test]
    fn serials_are_distinct_and_fixed_width() {
        let s = random_serials(500, &mut ChaCha20Rng::seed_from_u64(3));
        assert_eq!(s.iter().collect::<HashSet<_>>().len(), 500);
        assert!(s.iter().all(|x| x.as_bytes().len() == 8 && x.as_bytes()[0] < 0x80));
    }
}
