//! RFC 6960 OCSP messages and the HTTP responder that answers them from the
//! revocation store.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use sha1::{Digest, Sha1};
use sha2::Sha256;
use thiserror::Error;

use crate::crl::{self, CrlReason, DistinguishedName, SerialNumber};
use crate::der::{self, tag, Asn1Time, DerError, DerReader, ObjectIdentifier};
use crate::http::{BindError, HttpServer};
use crate::oid;
use crate::signing::{PublicKey, SignatureProvider, SigningError};
use crate::store::{RevocationStatus, RevocationStore, StoreSnapshot};

pub const REQUEST_CONTENT_TYPE: &str = "application/ocsp-request";
pub const RESPONSE_CONTENT_TYPE: &str = "application/ocsp-response";
pub const MAX_NONCE_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OcspError {
    #[error("malformed OCSP message: {0}")]
    Malformed(String),
}

impl From<DerError> for OcspError {
    fn from(e: DerError) -> Self {
        OcspError::Malformed(e.to_string())
    }
}

fn malformed(msg: impl Into<String>) -> OcspError {
    OcspError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashAlgorithm {
    Sha1,
    Sha256,
}

impl HashAlgorithm {
    pub fn oid(self) -> ObjectIdentifier {
        match self {
            HashAlgorithm::Sha1 => oid::sha1(),
            HashAlgorithm::Sha256 => oid::sha256(),
        }
    }

    pub fn from_oid(id: &ObjectIdentifier) -> Option<Self> {
        [HashAlgorithm::Sha1, HashAlgorithm::Sha256].into_iter().find(|a| a.oid() == *id)
    }

    pub fn output_len(self) -> usize {
        match self {
            HashAlgorithm::Sha1 => 20,
            HashAlgorithm::Sha256 => 32,
        }
    }

    pub fn digest(self, data: &[u8]) -> Vec<u8> {
        match self {
            HashAlgorithm::Sha1 => Sha1::digest(data).to_vec(),
            HashAlgorithm::Sha256 => Sha256::digest(data).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CertId {
    pub hash_algorithm: ObjectIdentifier,
    pub issuer_name_hash: Vec<u8>,
    pub issuer_key_hash: Vec<u8>,
    pub serial: SerialNumber,
}

impl CertId {
    /// CertID for `serial` issued by the CA with `issuer` name and `issuer_key`.
    pub fn new(alg: HashAlgorithm, issuer: &DistinguishedName, issuer_key: &PublicKey, serial: SerialNumber) -> Self {
        Self {
            hash_algorithm: alg.oid(),
            issuer_name_hash: alg.digest(&issuer.to_der()),
            issuer_key_hash: alg.digest(issuer_key.subject_public_key()),
            serial,
        }
    }

    pub fn to_der(&self) -> Vec<u8> {
        der::sequence(&[
            &crl::algorithm_identifier(&self.hash_algorithm),
            &der::octet_string(&self.issuer_name_hash),
            &der::octet_string(&self.issuer_key_hash),
            &self.serial.to_der(),
        ])
    }

    fn from_reader(mut r: DerReader<'_>) -> Result<Self, OcspError> {
        let hash_algorithm = crl::read_algorithm_identifier(&mut r)?;
        let issuer_name_hash = r.read_octet_string()?.to_vec();
        let issuer_key_hash = r.read_octet_string()?.to_vec();
        let serial = SerialNumber::from_bytes(&r.read_unsigned()?).map_err(|e| malformed(e.to_string()))?;
        r.finish()?;
        if let Some(alg) = HashAlgorithm::from_oid(&hash_algorithm) {
            if issuer_name_hash.len() != alg.output_len() || issuer_key_hash.len() != alg.output_len() {
                return Err(malformed("CertID hash length does not match its algorithm"));
            }
        }
        Ok(Self { hash_algorithm, issuer_name_hash, issuer_key_hash, serial })
    }
}

fn nonce_extensions(nonce: &[u8]) -> Vec<u8> {
    // RFC 8954: the extension value wraps the nonce in an OCTET STRING
    let ext = crl::encode_extension(&oid::ocsp_nonce(), false, &der::octet_string(nonce));
    der::sequence(&[&ext])
}

fn find_nonce(extensions: &[u8]) -> Result<Option<Vec<u8>>, OcspError> {
    let mut nonce = None;
    for ext in crl::parse_extensions(extensions)? {
        if ext.id == oid::ocsp_nonce() {
            let value = der::parse_single(ext.value, tag::OCTET_STRING)?;
            if value.is_empty() || value.len() > MAX_NONCE_LEN {
                return Err(malformed("nonce must be 1 to 32 octets"));
            }
            nonce = Some(value.to_vec());
        } else if ext.critical {
            return Err(malformed(format!("unsupported critical extension {}", ext.id)));
        }
    }
    Ok(nonce)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcspRequest {
    pub cert_ids: Vec<CertId>,
    pub nonce: Option<Vec<u8>>,
}

impl OcspRequest {
    pub fn new(cert_ids: Vec<CertId>, nonce: Option<Vec<u8>>) -> Result<Self, OcspError> {
        if cert_ids.is_empty() {
            return Err(malformed("request must name at least one certificate"));
        }
        if let Some(n) = &nonce {
            if n.is_empty() || n.len() > MAX_NONCE_LEN {
                return Err(malformed("nonce must be 1 to 32 octets"));
            }
        }
        Ok(Self { cert_ids, nonce })
    }

    pub fn to_der(&self) -> Vec<u8> {
        let requests: Vec<Vec<u8>> = self.cert_ids.iter().map(|id| der::sequence(&[&id.to_der()])).collect();
        let refs: Vec<&[u8]> = requests.iter().map(Vec::as_slice).collect();
        let list = der::sequence(&refs);
        let tbs = match &self.nonce {
            Some(n) => der::sequence(&[&list, &der::encode_tlv(tag::context(2), &nonce_extensions(n))]),
            None => der::sequence(&[&list]),
        };
        der::sequence(&[&tbs])
    }

    pub fn from_der(input: &[u8]) -> Result<Self, OcspError> {
        let mut outer = DerReader::new(input);
        let mut req = outer.read_sequence()?;
        outer.finish()?;
        let mut tbs = req.read_sequence()?;
        if req.read_optional(tag::context(0))?.is_some() {
            // signed requests are accepted but the signature is not checked
            tracing::debug!("ignoring OCSP request signature");
        }
        req.finish()?;
        if let Some(v) = tbs.read_optional(tag::context(0))? {
            if der::decode_u64(der::parse_single(v, tag::INTEGER)?)? != 0 {
                return Err(malformed("unsupported request version"));
            }
        }
        tbs.read_optional(tag::context(1))?;
        let mut list = tbs.read_sequence()?;
        let mut cert_ids = Vec::new();
        while !list.is_empty() {
            let mut single = list.read_sequence()?;
            cert_ids.push(CertId::from_reader(single.read_sequence()?)?);
            if let Some(exts) = single.read_optional(tag::context(0))? {
                for ext in crl::parse_extensions(der::parse_single(exts, tag::SEQUENCE)?)? {
                    if ext.critical {
                        return Err(malformed(format!("unsupported critical extension {}", ext.id)));
                    }
                }
            }
            single.finish()?;
        }
        let nonce = match tbs.read_optional(tag::context(2))? {
            Some(exts) => find_nonce(der::parse_single(exts, tag::SEQUENCE)?)?,
            None => None,
        };
        tbs.finish()?;
        Self::new(cert_ids, nonce)
    }
}

pub fn decode_ocsp_request(bytes: &[u8]) -> Result<OcspRequest, OcspError> {
    OcspRequest::from_der(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseStatus {
    Successful,
    MalformedRequest,
    InternalError,
    TryLater,
    SigRequired,
    Unauthorized,
}

impl ResponseStatus {
    pub fn code(self) -> u64 {
        match self {
            ResponseStatus::Successful => 0,
            ResponseStatus::MalformedRequest => 1,
            ResponseStatus::InternalError => 2,
            ResponseStatus::TryLater => 3,
            ResponseStatus::SigRequired => 5,
            ResponseStatus::Unauthorized => 6,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Some(match code {
            0 => ResponseStatus::Successful,
            1 => ResponseStatus::MalformedRequest,
            2 => ResponseStatus::InternalError,
            3 => ResponseStatus::TryLater,
            5 => ResponseStatus::SigRequired,
            6 => ResponseStatus::Unauthorized,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleResponse {
    pub cert_id: CertId,
    pub status: RevocationStatus,
    pub this_update: Asn1Time,
    pub next_update: Option<Asn1Time>,
}

impl SingleResponse {
    fn to_der(&self) -> Vec<u8> {
        let status = match &self.status {
            RevocationStatus::Good => der::encode_tlv(tag::context_primitive(0), &[]),
            RevocationStatus::Revoked { date, reason } => {
                let time = date.to_generalized_der();
                match reason {
                    Some(r) => {
                        let reason = der::encode_tlv(tag::context(0), &der::enumerated(r.code() as u64));
                        der::encode_constructed(tag::context(1), &[&time, &reason])
                    }
                    None => der::encode_constructed(tag::context(1), &[&time]),
                }
            }
            RevocationStatus::Unknown => der::encode_tlv(tag::context_primitive(2), &[]),
        };
        let mut parts = vec![self.cert_id.to_der(), status, self.this_update.to_generalized_der()];
        if let Some(next) = self.next_update {
            parts.push(der::encode_tlv(tag::context(0), &next.to_generalized_der()));
        }
        let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        der::sequence(&refs)
    }

    fn from_reader(mut r: DerReader<'_>) -> Result<Self, OcspError> {
        let cert_id = CertId::from_reader(r.read_sequence()?)?;
        let (t, content, _) = r.read_any()?;
        let status = match t {
            t if t == tag::context_primitive(0) && content.is_empty() => RevocationStatus::Good,
            t if t == tag::context_primitive(2) && content.is_empty() => RevocationStatus::Unknown,
            t if t == tag::context(1) => {
                let mut info = DerReader::new(content);
                let date = info.read_generalized_time()?;
                let reason = match info.read_optional(tag::context(0))? {
                    Some(inner) => {
                        let code = DerReader::new(inner).read_enumerated()?;
                        Some(CrlReason::from_code(code).ok_or_else(|| malformed(format!("invalid reason code {code}")))?)
                    }
                    None => None,
                };
                info.finish()?;
                RevocationStatus::Revoked { date, reason }
            }
            _ => return Err(malformed("invalid certStatus")),
        };
        let this_update = r.read_generalized_time()?;
        let next_update = match r.read_optional(tag::context(0))? {
            Some(inner) => Some(Asn1Time::from_tagged(tag::GENERALIZED_TIME, der::parse_single(inner, tag::GENERALIZED_TIME)?)?),
            None => None,
        };
        r.read_optional(tag::context(1))?;
        r.finish()?;
        Ok(Self { cert_id, status, this_update, next_update })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseData {
    /// SHA-1 of the responder's public key (ResponderID byKey).
    pub responder_key_hash: Vec<u8>,
    pub produced_at: Asn1Time,
    pub responses: Vec<SingleResponse>,
    pub nonce: Option<Vec<u8>>,
}

impl ResponseData {
    pub fn to_der(&self) -> Vec<u8> {
        let responder = der::encode_tlv(tag::context(2), &der::octet_string(&self.responder_key_hash));
        let singles: Vec<Vec<u8>> = self.responses.iter().map(SingleResponse::to_der).collect();
        let refs: Vec<&[u8]> = singles.iter().map(Vec::as_slice).collect();
        let responses = der::sequence(&refs);
        let produced = self.produced_at.to_generalized_der();
        match &self.nonce {
            Some(n) => {
                let exts = der::encode_tlv(tag::context(1), &nonce_extensions(n));
                der::sequence(&[&responder, &produced, &responses, &exts])
            }
            None => der::sequence(&[&responder, &produced, &responses]),
        }
    }

    fn from_reader(mut r: DerReader<'_>) -> Result<Self, OcspError> {
        if let Some(v) = r.read_optional(tag::context(0))? {
            if der::decode_u64(der::parse_single(v, tag::INTEGER)?)? != 0 {
                return Err(malformed("unsupported response version"));
            }
        }
        let responder_key_hash = match r.read_any()? {
            (t, content, _) if t == tag::context(2) => der::parse_single(content, tag::OCTET_STRING)?.to_vec(),
            (t, _, _) if t == tag::context(1) => return Err(malformed("ResponderID byName is not supported")),
            _ => return Err(malformed("invalid ResponderID")),
        };
        let produced_at = r.read_generalized_time()?;
        let mut list = r.read_sequence()?;
        let mut responses = Vec::new();
        while !list.is_empty() {
            responses.push(SingleResponse::from_reader(list.read_sequence()?)?);
        }
        let nonce = match r.read_optional(tag::context(1))? {
            Some(exts) => find_nonce(der::parse_single(exts, tag::SEQUENCE)?)?,
            None => None,
        };
        r.finish()?;
        Ok(Self { responder_key_hash, produced_at, responses, nonce })
    }
}

/// BasicOCSPResponse. The signed `tbsResponseData` bytes are retained so
/// verification always runs over exactly what was signed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicResponse {
    data: ResponseData,
    signature_algorithm: ObjectIdentifier,
    signature: Vec<u8>,
    certs: Vec<Vec<u8>>,
    tbs: Vec<u8>,
}

impl BasicResponse {
    pub fn sign(data: ResponseData, signer: &dyn SignatureProvider, certs: Vec<Vec<u8>>) -> Result<Self, SigningError> {
        let tbs = data.to_der();
        let signature = signer.sign(&tbs)?;
        Ok(Self { data, signature_algorithm: signer.algorithm(), signature, certs, tbs })
    }

    pub fn data(&self) -> &ResponseData {
        &self.data
    }

    pub fn signature_algorithm(&self) -> &ObjectIdentifier {
        &self.signature_algorithm
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    /// DER certificates carried alongside the response.
    pub fn certs(&self) -> &[Vec<u8>] {
        &self.certs
    }

    /// Signature check plus ResponderID match against `responder_key`.
    pub fn verify(&self, responder_key: &PublicKey) -> bool {
        self.data.responder_key_hash == responder_key.sha1_key_hash()
            && responder_key.verify(&self.signature_algorithm, &self.tbs, &self.signature).unwrap_or(false)
    }

    fn to_der(&self) -> Vec<u8> {
        let alg = crl::algorithm_identifier(&self.signature_algorithm);
        let sig = der::bit_string(&self.signature);
        if self.certs.is_empty() {
            der::sequence(&[&self.tbs, &alg, &sig])
        } else {
            let refs: Vec<&[u8]> = self.certs.iter().map(Vec::as_slice).collect();
            let certs = der::encode_tlv(tag::context(0), &der::sequence(&refs));
            der::sequence(&[&self.tbs, &alg, &sig, &certs])
        }
    }

    fn from_der(input: &[u8]) -> Result<Self, OcspError> {
        let mut outer = DerReader::new(input);
        let mut basic = outer.read_sequence()?;
        outer.finish()?;
        let (data_content, tbs) = basic.read_raw(tag::SEQUENCE)?;
        let data = ResponseData::from_reader(DerReader::new(data_content))?;
        let signature_algorithm = crl::read_algorithm_identifier(&mut basic)?;
        let signature = basic.read_bit_string()?.to_vec();
        let mut certs = Vec::new();
        if let Some(wrapped) = basic.read_optional(tag::context(0))? {
            let mut list = DerReader::new(der::parse_single(wrapped, tag::SEQUENCE)?);
            while !list.is_empty() {
                certs.push(list.read_raw(tag::SEQUENCE)?.1.to_vec());
            }
        }
        basic.finish()?;
        Ok(Self { data, signature_algorithm, signature, certs, tbs: tbs.to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcspResponse {
    pub status: ResponseStatus,
    pub basic: Option<BasicResponse>,
}

impl OcspResponse {
    pub fn error(status: ResponseStatus) -> Self {
        debug_assert_ne!(status, ResponseStatus::Successful);
        Self { status, basic: None }
    }

    pub fn to_der(&self) -> Vec<u8> {
        let status = der::enumerated(self.status.code());
        match &self.basic {
            Some(basic) => {
                let bytes = der::sequence(&[&oid::ocsp_basic().to_der(), &der::octet_string(&basic.to_der())]);
                der::sequence(&[&status, &der::encode_tlv(tag::context(0), &bytes)])
            }
            None => der::sequence(&[&status]),
        }
    }

    pub fn from_der(input: &[u8]) -> Result<Self, OcspError> {
        let mut outer = DerReader::new(input);
        let mut resp = outer.read_sequence()?;
        outer.finish()?;
        let code = resp.read_enumerated()?;
        let status = ResponseStatus::from_code(code).ok_or_else(|| malformed(format!("unknown responseStatus {code}")))?;
        let basic = match resp.read_optional(tag::context(0))? {
            Some(wrapped) => {
                let mut bytes = DerReader::new(der::parse_single(wrapped, tag::SEQUENCE)?);
                if bytes.read_oid()? != oid::ocsp_basic() {
                    return Err(malformed("unsupported responseType"));
                }
                let inner = bytes.read_octet_string()?;
                bytes.finish()?;
                Some(BasicResponse::from_der(inner)?)
            }
            None => None,
        };
        resp.finish()?;
        if (status == ResponseStatus::Successful) != basic.is_some() {
            return Err(malformed("responseBytes must be present exactly when successful"));
        }
        Ok(Self { status, basic })
    }

    /// Per-certificate results of a successful response.
    pub fn responses(&self) -> &[SingleResponse] {
        self.basic.as_ref().map_or(&[], |b| b.data.responses.as_slice())
    }

    pub fn nonce(&self) -> Option<&[u8]> {
        self.basic.as_ref().and_then(|b| b.data.nonce.as_deref())
    }
}

pub fn encode_ocsp_response(resp: &OcspResponse) -> Vec<u8> {
    resp.to_der()
}

pub fn decode_ocsp_response(bytes: &[u8]) -> Result<OcspResponse, OcspError> {
    OcspResponse::from_der(bytes)
}

/// The responder identity: which CA it answers for and how it signs.
pub struct Responder {
    signer: Arc<dyn SignatureProvider>,
    sha1_ids: (Vec<u8>, Vec<u8>),
    sha256_ids: (Vec<u8>, Vec<u8>),
    certs: Vec<Vec<u8>>,
}

impl Responder {
    /// `certificate`, if given, is attached to every successful response.
    pub fn new(issuer: &DistinguishedName, signer: Arc<dyn SignatureProvider>, certificate: Option<Vec<u8>>) -> Self {
        let name = issuer.to_der();
        let key = signer.public_key().subject_public_key().to_vec();
        let ids = |alg: HashAlgorithm| (alg.digest(&name), alg.digest(&key));
        Self {
            sha1_ids: ids(HashAlgorithm::Sha1),
            sha256_ids: ids(HashAlgorithm::Sha256),
            signer,
            certs: certificate.into_iter().collect(),
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        self.signer.public_key()
    }

    pub fn knows_issuer(&self, id: &CertId) -> bool {
        let expected = match HashAlgorithm::from_oid(&id.hash_algorithm) {
            Some(HashAlgorithm::Sha1) => &self.sha1_ids,
            Some(HashAlgorithm::Sha256) => &self.sha256_ids,
            None => return false,
        };
        id.issuer_name_hash == expected.0 && id.issuer_key_hash == expected.1
    }

    fn respond(&self, request: &OcspRequest, this_update: Asn1Time, now: Asn1Time, status: impl Fn(&SerialNumber) -> RevocationStatus) -> OcspResponse {
        let responses = request
            .cert_ids
            .iter()
            .map(|id| SingleResponse {
                cert_id: id.clone(),
                status: if self.knows_issuer(id) { status(&id.serial) } else { RevocationStatus::Unknown },
                this_update,
                next_update: None,
            })
            .collect();
        let data = ResponseData {
            responder_key_hash: self.public_key().sha1_key_hash().to_vec(),
            produced_at: now,
            responses,
            nonce: request.nonce.clone(),
        };
        match BasicResponse::sign(data, self.signer.as_ref(), self.certs.clone()) {
            Ok(basic) => OcspResponse { status: ResponseStatus::Successful, basic: Some(basic) },
            Err(e) => {
                tracing::error!(error = %e, "OCSP response signing failed");
                OcspResponse::error(ResponseStatus::InternalError)
            }
        }
    }

    /// Answer from the store's live snapshot, loaded once for the whole request.
    pub fn respond_from_store(&self, request: &OcspRequest, store: &RevocationStore, now: Asn1Time) -> OcspResponse {
        match store.snapshot() {
            Some(snap) => self.respond(request, snap.source_this_update(), now, |s| store.status_in(&snap, s)),
            None => OcspResponse::error(ResponseStatus::TryLater),
        }
    }

    /// Decode, answer and encode one request body.
    pub fn handle(&self, body: &[u8], store: &RevocationStore) -> Vec<u8> {
        let response = match OcspRequest::from_der(body) {
            Ok(req) => self.respond_from_store(&req, store, store.clock().now()),
            Err(e) => {
                tracing::debug!(error = %e, "malformed OCSP request");
                OcspResponse::error(ResponseStatus::MalformedRequest)
            }
        };
        response.to_der()
    }
}

/// Build the response for `request` from a snapshot (None answers tryLater).
pub fn build_response(request: &OcspRequest, snapshot: Option<&StoreSnapshot>, responder: &Responder, now: Asn1Time) -> OcspResponse {
    match snapshot {
        Some(snap) => responder.respond(request, snap.source_this_update(), now, |s| snap.lookup(s)),
        None => OcspResponse::error(ResponseStatus::TryLater),
    }
}

pub struct OcspService {
    pub responder: Responder,
    pub store: Arc<RevocationStore>,
}

async fn handle_post(State(svc): State<Arc<OcspService>>, body: Bytes) -> Response {
    let der = svc.responder.handle(&body, &svc.store);
    ([(header::CONTENT_TYPE, RESPONSE_CONTENT_TYPE)], der).into_response()
}

/// `POST /` only; other methods get 405.
pub fn ocsp_router(service: Arc<OcspService>) -> Router {
    Router::new().route("/", post(handle_post)).with_state(service)
}

pub async fn serve_ocsp(bind: SocketAddr, store: Arc<RevocationStore>, responder: Responder) -> Result<HttpServer, BindError> {
    HttpServer::bind(bind, ocsp_router(Arc::new(OcspService { responder, store }))).await
}
