mod config;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hybrid_ocsp::ca::{serve_crl, CaFiles, DEFAULT_REFRESH_INTERVAL};
use hybrid_ocsp::client::{ClientError, ClientPolicy, CrlFormat, Endpoints, HybridClient, Mode, TrustAnchor};
use hybrid_ocsp::clock::SystemClock;
use hybrid_ocsp::crl::{CrlReason, DistinguishedName, SerialNumber};
use hybrid_ocsp::der::Asn1Time;
use hybrid_ocsp::ocsp::{serve_ocsp, Responder};
use hybrid_ocsp::parallel::Execution;
use hybrid_ocsp::signing::{PublicKey, RsaSha256Signer, SignatureProvider};
use hybrid_ocsp::sim::{self, BenchFixture, MeasureParams, SimConfig};
use hybrid_ocsp::store::{spawn_refresh_loop, HttpCrlFetcher, RefreshOutcome, RevocationStatus, RevocationStore, DEFAULT_JITTER};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{ServeFile, ServeFlags};

/// Exit codes of `check`.
const EXIT_REVOKED: u8 = 1;
const EXIT_ALL_PATHS_FAILED: u8 = 3;
const EXIT_UNKNOWN: u8 = 4;
const EXIT_SIGNATURE_INVALID: u8 = 5;

#[derive(Parser)]
#[command(name = "hocsp", version, about = "CRL-backed OCSP responder, CA tooling and hybrid revocation client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a CA directory: key, self-signed certificate, issuer name and empty ledger.
    CaInit(CaInitArgs),
    /// Append a revocation to the CA ledger.
    Revoke(RevokeArgs),
    /// Issue a CRL from the ledger.
    GenCrl(GenCrlArgs),
    /// Run the CRL distribution point and the OCSP responder until interrupted.
    Serve(ServeArgs),
    /// Check certificate status via OCSP and/or CRL.
    Check(CheckArgs),
    /// Run the meter-fleet simulation with optional OCSP outages.
    Simulate(SimulateArgs),
    /// Benchmark OCSP request throughput.
    Bench(BenchArgs),
    /// Measure CRL download bytes against one OCSP exchange per record count.
    Measure(MeasureArgs),
}

#[derive(Args)]
struct CaInitArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Issuer distinguished name.
    #[arg(long, default_value = "C=aa, ST=aa, L=aa, O=aa, OU=aa, CN=rootca")]
    subject: DistinguishedName,
    /// Import an existing PKCS#8 PEM RSA key instead of generating one.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = RsaSha256Signer::DEFAULT_BITS)]
    bits: usize,
}

#[derive(Args)]
struct RevokeArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Hex serial (colons allowed), or decimal with a 0d prefix.
    #[arg(long)]
    serial: SerialNumber,
    /// RFC 5280 reason name (key-compromise) or code.
    #[arg(long, default_value = "unspecified")]
    reason: CrlReason,
    /// Revocation time (RFC 3339); defaults to now.
    #[arg(long, value_parser = parse_time)]
    date: Option<Asn1Time>,
}

#[derive(Args)]
struct GenCrlArgs {
    #[arg(long)]
    dir: PathBuf,
    /// PEM armor instead of DER.
    #[arg(long)]
    pem: bool,
    /// Leave out nextUpdate.
    #[arg(long)]
    omit_next_update: bool,
    /// Print a human-readable dump instead of the encoded CRL.
    #[arg(long, conflicts_with = "pem")]
    text: bool,
    /// nextUpdate distance in seconds.
    #[arg(long, default_value_t = DEFAULT_REFRESH_INTERVAL.as_secs())]
    refresh_interval: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    dir: Option<PathBuf>,
    /// TOML file with defaults for these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ocsp_bind: Option<SocketAddr>,
    #[arg(long)]
    crl_bind: Option<SocketAddr>,
    /// CRL regeneration and responder refresh interval, seconds.
    #[arg(long)]
    refresh_interval: Option<u64>,
    /// Answer Unknown once the responder's CRL is older than this many seconds.
    #[arg(long)]
    max_staleness: Option<u64>,
    /// Do not attach the CA certificate to OCSP responses.
    #[arg(long)]
    no_responder_cert: bool,
}

#[derive(Args, Clone)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    /// CRL encoding to download.
    #[arg(long, value_enum, default_value_t = FormatArg::Der)]
    format: FormatArg,
    #[arg(long, default_value_t = 14)]
    pem_threshold: usize,
    #[arg(long, default_value_t = 24)]
    der_threshold: usize,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    ocsp_timeout_ms: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    batch_min: u64,
}

impl PolicyArgs {
    fn policy(&self) -> ClientPolicy {
        ClientPolicy {
            pem_record_threshold: self.pem_threshold,
            der_record_threshold: self.der_threshold,
            ocsp_timeout_ms: self.ocsp_timeout_ms,
            preferred_crl_format: match self.format {
                FormatArg::Der => CrlFormat::Der,
                FormatArg::Pem => CrlFormat::Pem,
            },
            batch_min: self.batch_min as usize,
            mode: match self.mode {
                ModeArg::Auto => Mode::Auto,
                ModeArg::ForceOcsp => Mode::ForceOcsp,
                ModeArg::ForceCrl => Mode::ForceCrl,
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    ForceOcsp,
    ForceCrl,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Der,
    Pem,
}

#[derive(Args)]
struct AnchorArgs {
    /// CA directory to take the trusted key and issuer name from.
    #[arg(long, required_unless_present = "ca_pub")]
    ca_dir: Option<PathBuf>,
    /// Trusted CA public key (SPKI PEM); requires --issuer.
    #[arg(long, requires = "issuer", conflicts_with = "ca_dir")]
    ca_pub: Option<PathBuf>,
    #[arg(long)]
    issuer: Option<DistinguishedName>,
}

impl AnchorArgs {
    fn load(&self) -> anyhow::Result<TrustAnchor> {
        match (&self.ca_dir, &self.ca_pub) {
            (Some(dir), _) => {
                let files = CaFiles::new(dir);
                Ok(TrustAnchor { issuer: files.issuer()?, key: files.public_key()? })
            }
            (None, Some(path)) => Ok(TrustAnchor {
                issuer: self.issuer.clone().context("--issuer is required with --ca-pub")?,
                key: PublicKey::from_spki_pem(&std::fs::read_to_string(path)?)?,
            }),
            (None, None) => bail!("pass --ca-dir or --ca-pub"),
        }
    }
}

#[derive(Args)]
struct CheckArgs {
    /// Serial(s) to check; several serials form one batch.
    #[arg(long, required = true, num_args = 1..)]
    serial: Vec<SerialNumber>,
    #[command(flatten)]
    anchor: AnchorArgs,
    /// OCSP responder URL.
    #[arg(long)]
    ocsp_url: Option<String>,
    /// CRL distribution base URL (serving /crl.der and /crl.pem).
    #[arg(long)]
    crl_url: Option<String>,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    meters: usize,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Checks per meter per second.
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    /// OCSP outage window START:END in seconds; repeatable.
    #[arg(long, value_parser = parse_window)]
    outage: Vec<(f64, f64)>,
    #[arg(long, default_value_t = 0.1)]
    revoked_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    issued: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    tick: f64,
    /// CA key (PKCS#8 PEM); a fresh RSA-2048 key otherwise.
    #[arg(long)]
    key: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConnectionArg {
    KeepAlive,
    Close,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    requests: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: u64,
    /// External responder URL; an in-process responder is started otherwise.
    #[arg(long, requires = "ca_dir")]
    target: Option<String>,
    /// CA directory of the external responder (for building requests).
    #[arg(long)]
    ca_dir: Option<PathBuf>,
    /// Revoked serials in the in-process responder's store.
    #[arg(long, default_value_t = 10_000)]
    revoked: usize,
    /// CA key for the in-process responder (PKCS#8 PEM).
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ConnectionArg::KeepAlive)]
    connection: ConnectionArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasureArgs {
    /// Measure record counts 0..=MAX.
    #[arg(long, default_value_t = 40, conflicts_with = "counts")]
    max: usize,
    /// Explicit comma-separated record counts.
    #[arg(long, value_delimiter = ',')]
    counts: Vec<usize>,
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = RsaSha256Signer::DEFAULT_BITS)]
    bits: usize,
    #[arg(long, default_value = "C=aa, ST=aa, L=aa, O=aa, OU=aa, CN=rootca")]
    issuer: DistinguishedName,
    /// Do not attach the CA certificate to OCSP responses.
    #[arg(long)]
    no_responder_cert: bool,
    /// Build CRLs on one thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_time(s: &str) -> Result<Asn1Time, String> {
    Asn1Time::parse_rfc3339(s).map_err(|e| e.to_string())
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad start {a:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad end {b:?}"))?;
    Ok((a, b))
}

fn load_signer(key: Option<&Path>, bits: usize) -> anyhow::Result<Arc<dyn SignatureProvider>> {
    Ok(Arc::new(match key {
        Some(path) => RsaSha256Signer::from_pkcs8_pem(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => RsaSha256Signer::generate(bits)?,
    }))
}

/// Write `text` to `out` if given, otherwise to standard output.
fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn report<T: serde::Serialize>(value: &T, table: String, json: bool, out: Option<&Path>) -> anyhow::Result<()> {
    let text = if json { serde_json::to_string_pretty(value)? + "\n" } else { table };
    emit(out, text.as_bytes())
}

fn ca_init(args: CaInitArgs) -> anyhow::Result<ExitCode> {
    let key = args.key.as_deref().map(std::fs::read_to_string).transpose()?;
    CaFiles::new(&args.dir).init(&args.subject, key.as_deref(), args.bits, Asn1Time::now())?;
    eprintln!("initialized CA {} in {}", args.subject, args.dir.display());
    Ok(ExitCode::SUCCESS)
}

fn revoke(args: RevokeArgs) -> anyhow::Result<ExitCode> {
    let ca = CaFiles::new(&args.dir).load(DEFAULT_REFRESH_INTERVAL)?;
    let record = ca.revoke(args.serial, args.reason, args.date.unwrap_or_else(Asn1Time::now))?;
    eprintln!("revoked {} ({}) at {}", record.serial, record.reason.flag_name(), record.revoked_at);
    Ok(ExitCode::SUCCESS)
}

fn gen_crl(args: GenCrlArgs) -> anyhow::Result<ExitCode> {
    let ca = CaFiles::new(&args.dir).load(Duration::from_secs(args.refresh_interval.max(1)))?;
    let crl = ca.issue_crl(Asn1Time::now(), !args.omit_next_update)?;
    let bytes = if args.text {
        crl.render_text().into_bytes()
    } else if args.pem {
        crl.to_pem().into_bytes()
    } else {
        crl.to_der()
    };
    emit(args.out.as_deref(), &bytes)?;
    Ok(ExitCode::SUCCESS)
}

async fn serve(args: ServeArgs) -> anyhow::Result<ExitCode> {
    let file = match &args.config {
        Some(path) => ServeFile::load(path)?,
        None => ServeFile::default(),
    };
    let flags = ServeFlags {
        dir: args.dir,
        ocsp_bind: args.ocsp_bind,
        crl_bind: args.crl_bind,
        refresh_interval_s: args.refresh_interval,
        max_staleness_s: args.max_staleness,
        no_responder_cert: args.no_responder_cert,
    };
    let settings = config::resolve(flags, file, |k| std::env::var(k).ok())?;
    let interval = Duration::from_secs(settings.refresh_interval_s);
    let ca = Arc::new(CaFiles::new(&settings.dir).load(interval)?);
    let (crl_server, _dist) = serve_crl(settings.crl_bind, ca.clone()).await?;

    let mut store = RevocationStore::new(ca.public_key().clone(), Arc::new(SystemClock::new()));
    if let Some(limit) = settings.max_staleness_s {
        store = store.with_max_staleness(Duration::from_secs(limit));
    }
    let store = Arc::new(store);
    let fetcher = HttpCrlFetcher::new(crl_server.url("/crl.der"));
    if let RefreshOutcome::Retained { error } = store.refresh(&fetcher).await {
        bail!("initial CRL load failed: {error}");
    }
    let refresher = spawn_refresh_loop(store.clone(), fetcher, interval, DEFAULT_JITTER);
    let certificate = settings.include_responder_cert.then(|| ca.certificate().to_vec());
    let responder = Responder::new(ca.issuer(), ca.signer(), certificate);
    let ocsp_server = serve_ocsp(settings.ocsp_bind, store, responder).await?;

    println!("ocsp listening on {}", ocsp_server.url("/"));
    println!("crl listening on {}", crl_server.url(""));
    std::io::stdout().flush()?;
    tracing::info!(refresh_interval_s = settings.refresh_interval_s, "serving");

    tokio::signal::ctrl_c().await?;
    refresher.abort();
    ocsp_server.shutdown().await;
    crl_server.shutdown().await;
    Ok(ExitCode::SUCCESS)
}

async fn check(args: CheckArgs) -> anyhow::Result<ExitCode> {
    let anchor = args.anchor.load()?;
    let crl = args.crl_url.as_deref().map(|base| base.trim_end_matches('/').to_string());
    let endpoints = Endpoints {
        ocsp_url: args.ocsp_url,
        crl_der_url: crl.as_ref().map(|b| format!("{b}/crl.der")),
        crl_pem_url: crl.as_ref().map(|b| format!("{b}/crl.pem")),
    };
    let mut client = HybridClient::new(anchor, endpoints, args.policy.policy(), Arc::new(SystemClock::new()))?;
    let results = match client.check_many(&args.serial).await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(match e {
                ClientError::AllPathsFailed { .. } => EXIT_ALL_PATHS_FAILED,
                ClientError::SignatureInvalid(_) => EXIT_SIGNATURE_INVALID,
                _ => 1,
            }));
        }
    };
    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    emit(None, lines.as_bytes())?;
    let code = if results.iter().any(|r| r.status.is_revoked()) {
        EXIT_REVOKED
    } else if results.iter().any(|r| r.status == RevocationStatus::Unknown) {
        EXIT_UNKNOWN
    } else {
        0
    };
    Ok(ExitCode::from(code))
}

async fn simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let config = SimConfig {
        n_meters: args.meters,
        request_rate_per_meter_hz: args.rate,
        duration_s: args.duration,
        outage_windows: args.outage,
        revoked_fraction: args.revoked_fraction,
        rng_seed: args.seed,
        policy: args.policy.policy(),
        n_issued: args.issued,
        tick_s: args.tick,
    };
    let signer = args.key.as_deref().map(|k| load_signer(Some(k), 0)).transpose()?;
    let result = sim::run_simulation(&config, signer).await?;
    report(&result, result.render_table(), args.json, args.out.as_deref())?;
    Ok(if result.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

async fn bench(args: BenchArgs) -> anyhow::Result<ExitCode> {
    let n = args.requests as usize;
    let concurrency = args.concurrency as usize;
    let (url, bodies, fixture) = match (&args.target, &args.ca_dir) {
        (Some(target), Some(dir)) => {
            let files = CaFiles::new(dir);
            let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
            let serials = sim::random_serials(1024, &mut rng);
            let bodies = sim::ocsp_request_bodies(&files.issuer()?, &files.public_key()?, &serials, &mut rng);
            (target.clone(), bodies, None)
        }
        _ => {
            let signer = load_signer(args.key.as_deref(), RsaSha256Signer::DEFAULT_BITS)?;
            let fixture = BenchFixture::start("127.0.0.1:0".parse()?, args.revoked, signer, args.seed).await?;
            (fixture.server.url("/"), fixture.bodies.clone(), Some(fixture))
        }
    };
    let modes: &[bool] = match args.connection {
        ConnectionArg::KeepAlive => &[true],
        ConnectionArg::Close => &[false],
        ConnectionArg::Both => &[true, false],
    };
    let mut reports = Vec::new();
    for &keep_alive in modes {
        reports.push(sim::run_bench(n, concurrency, &url, bodies.clone(), keep_alive).await?);
    }
    if let Some(f) = fixture {
        f.server.shutdown().await;
    }
    let failed = reports.iter().any(|r| r.errors > 0);
    let table: String = reports.iter().map(|r| r.render_table()).collect();
    if reports.len() == 1 {
        report(&reports[0], table, args.json, args.out.as_deref())?;
    } else {
        report(&reports, table, args.json, args.out.as_deref())?;
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

async fn measure(args: MeasureArgs) -> anyhow::Result<ExitCode> {
    let signer = load_signer(args.key.as_deref(), args.bits)?;
    let counts: Vec<usize> = if args.counts.is_empty() { (0..=args.max).collect() } else { args.counts };
    let params = MeasureParams {
        signer,
        issuer: args.issuer,
        include_certificate: !args.no_responder_cert,
        seed: args.seed,
        execution: if args.sequential { Execution::Sequential } else { Execution::available() },
    };
    let result = sim::measure_bytes(&counts, &params).await?;
    report(&result, result.render_table(), args.json, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = runtime.block_on(async move {
        match cli.command {
            Command::CaInit(a) => ca_init(a),
            Command::Revoke(a) => revoke(a),
            Command::GenCrl(a) => gen_crl(a),
            Command::Serve(a) => serve(a).await,
            Command::Check(a) => check(a).await,
            Command::Simulate(a) => simulate(a).await,
            Command::Bench(a) => bench(a).await,
            Command::Measure(a) => measure(a).await,
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
