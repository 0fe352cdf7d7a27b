use std::sync::Arc;
use std::time::Duration;

use hybrid_ocsp::ca::{serve_crl, CertificateAuthority};
use hybrid_ocsp::client::{ClientError, ClientPolicy, Endpoints, HybridClient, Mode, Source, TrustAnchor};
use hybrid_ocsp::clock::{Clock, ManualClock};
use hybrid_ocsp::crl::{reference_serials, CrlReason, DistinguishedName, SerialNumber};
use hybrid_ocsp::der::Asn1Time;
use hybrid_ocsp::http::HttpServer;
use hybrid_ocsp::ocsp::{serve_ocsp, Responder};
use hybrid_ocsp::signing::{RsaSha256Signer, SignatureProvider};
use hybrid_ocsp::store::{HttpCrlFetcher, RevocationStore};

struct Deployment {
    ocsp: HttpServer,
    crl: HttpServer,
    anchor: TrustAnchor,
    endpoints: Endpoints,
}

fn signer() -> Arc<RsaSha256Signer> {
    Arc::new(RsaSha256Signer::from_pkcs8_pem(include_str!("../testdata/ca_key.pem")).unwrap())
}

async fn deploy() -> Deployment {
    let signer = signer();
    let issuer = DistinguishedName::smart_grid_root();
    let now = Asn1Time::now();
    let ca = Arc::new(CertificateAuthority::ephemeral(issuer.clone(), signer.clone(), now).unwrap());
    for s in reference_serials() {
        ca.revoke(s, CrlReason::KeyCompromise, now).unwrap();
    }
    let (crl, _) = serve_crl("127.0.0.1:0".parse().unwrap(), ca.clone()).await.unwrap();
    let store = Arc::new(RevocationStore::new(signer.public_key().clone(), Arc::new(hybrid_ocsp::clock::SystemClock::new())));
    store.refresh(&HttpCrlFetcher::new(crl.url("/crl.der"))).await;
    let responder = Responder::new(&issuer, signer.clone(), Some(ca.certificate().to_vec()));
    let ocsp = serve_ocsp("127.0.0.1:0".parse().unwrap(), store, responder).await.unwrap();
    let endpoints = Endpoints::from_bases(&ocsp.url("/"), &crl.url(""));
    Deployment { ocsp, crl, anchor: TrustAnchor { issuer, key: signer.public_key().clone() }, endpoints }
}

fn client(d: &Deployment, policy: ClientPolicy) -> (HybridClient, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(Asn1Time::now()));
    let c = HybridClient::new(d.anchor.clone(), d.endpoints.clone(), policy, clock.clone()).unwrap().with_seed(7);
    (c, clock)
}

fn revoked() -> SerialNumber {
    SerialNumber::from_u64(0x221A0A99711F9968)
}

#[tokio::test]
async fn ocsp_first_then_pivot_to_crl() {
    let d = deploy().await;
    let (mut c, _) = client(&d, ClientPolicy::default());
    let r = c.check(&revoked()).await.unwrap();
    assert_eq!((r.source, r.status.is_revoked()), (Source::Ocsp, true));
    assert!(r.bytes_used > 0);

    d.ocsp.pause().await;
    let r = c.check(&revoked()).await.unwrap();
    assert_eq!((r.source, r.status.is_revoked()), (Source::CrlFetch, true));
    let r = c.check(&SerialNumber::from_u64(77)).await.unwrap();
    assert_eq!((r.source, r.status.is_revoked(), r.bytes_used), (Source::CrlCache, false, 0));
    assert_eq!(c.known_record_count(), Some(3));
}

#[tokio::test]
async fn all_paths_down() {
    let d = deploy().await;
    let (mut cached, _) = client(&d, ClientPolicy { mode: Mode::ForceCrl, ..Default::default() });
    assert_eq!(cached.check(&revoked()).await.unwrap().source, Source::CrlFetch);
    d.ocsp.pause().await;
    d.crl.pause().await;

    let (mut empty, _) = client(&d, ClientPolicy::default());
    assert!(matches!(empty.check(&revoked()).await, Err(ClientError::AllPathsFailed { .. })));

    let r = cached.check(&revoked()).await.unwrap();
    assert_eq!((r.source, r.stale, r.status.is_revoked()), (Source::CrlCache, false, true));
}

#[tokio::test]
async fn expired_cache_is_flagged_stale() {
    let d = deploy().await;
    let (c, clock) = client(&d, ClientPolicy::default());
    let mut c = c.with_cache_ttl(Duration::from_secs(5));
    d.ocsp.pause().await;
    assert_eq!(c.check(&revoked()).await.unwrap().source, Source::CrlFetch);
    clock.advance(Duration::from_secs(10));
    assert!(!c.cache_valid());
    d.crl.pause().await;
    let r = c.check(&revoked()).await.unwrap();
    assert_eq!((r.source, r.stale, r.status.is_revoked()), (Source::CrlCache, true, true));
    assert!(clock.monotonic() >= Duration::from_secs(10));
}

#[tokio::test]
async fn batch_downloads_once_and_agrees_with_ocsp() {
    let d = deploy().await;
    let mut serials: Vec<SerialNumber> = (1..=97u64).map(SerialNumber::from_u64).collect();
    serials.extend(reference_serials());
    let (mut batch, _) = client(&d, ClientPolicy::default());
    let results = batch.check_many(&serials).await.unwrap();
    assert_eq!(results.len(), 100);
    assert_eq!(results[0].source, Source::CrlFetch);
    assert!(results[0].bytes_used > 0);
    assert!(results[1..].iter().all(|r| r.bytes_used == 0 && r.source == Source::CrlCache));

    let (mut single, _) = client(&d, ClientPolicy { mode: Mode::ForceOcsp, ..Default::default() });
    for (s, r) in serials.iter().zip(&results) {
        let o = single.check(s).await.unwrap();
        assert_eq!(o.source, Source::Ocsp);
        assert_eq!(o.status.is_revoked(), r.status.is_revoked(), "{s}");
    }
    assert_eq!(results.iter().filter(|r| r.status.is_revoked()).count(), 3);

    let (mut one, _) = client(&d, ClientPolicy::default());
    let r = one.check_many(&[revoked()]).await.unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].source, Source::Ocsp);
}

#[tokio::test]
async fn untrusted_signatures_are_rejected() {
    let d = deploy().await;
    let other = RsaSha256Signer::from_pkcs8_pem(include_str!("../testdata/other_key.pem")).unwrap();
    let anchor = TrustAnchor { issuer: d.anchor.issuer.clone(), key: other.public_key().clone() };
    let clock = Arc::new(ManualClock::new(Asn1Time::now()));
    let mut c = HybridClient::new(anchor, d.endpoints.clone(), ClientPolicy::default(), clock).unwrap();
    assert!(matches!(c.check(&revoked()).await, Err(ClientError::SignatureInvalid(_))));
    assert!(c.cache().is_none());
}
