//! X.509 v1/v2 certificate revocation lists (RFC 5280 §5).

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::der::{self, tag, Asn1Time, DerError, DerReader, ObjectIdentifier};
use crate::oid;
use crate::pem::{self, PemError};
use crate::signing::{PublicKey, SignatureProvider, SigningError, UnsupportedAlgorithm};

pub const PEM_LABEL: &str = "X509 CRL";

#[derive(Debug, Error)]
pub enum CrlError {
    #[error("duplicate serial {0} in revocation entries")]
    DuplicateSerial(SerialNumber),
    #[error(transparent)]
    Signing(#[from] SigningError),
    #[error("malformed CRL: {0}")]
    Malformed(String),
    #[error(transparent)]
    Pem(#[from] PemError),
    #[error("invalid CRL parameters: {0}")]
    Invalid(String),
}

impl From<DerError> for CrlError {
    fn from(e: DerError) -> Self {
        CrlError::Malformed(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerialError {
    #[error("serial must be 1 to 20 octets, got {0}")]
    Length(usize),
    #[error("invalid serial text {0:?}")]
    Parse(String),
}

/// Unsigned certificate serial number, stored without redundant leading zeros.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SerialNumber(Vec<u8>);

impl SerialNumber {
    pub const MAX_OCTETS: usize = 20;

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SerialError> {
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        let trimmed = if skip == bytes.len() && !bytes.is_empty() { &[0u8][..] } else { &bytes[skip..] };
        if trimmed.is_empty() || trimmed.len() > Self::MAX_OCTETS {
            return Err(SerialError::Length(trimmed.len()));
        }
        Ok(Self(trimmed.to_vec()))
    }

    pub fn from_u64(v: u64) -> Self {
        Self::from_bytes(&v.to_be_bytes()).expect("u64 fits")
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        crate::signing::hex(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, SerialError> {
        let s = s.trim();
        let digits: String = s.chars().filter(|c| *c != ':').collect();
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(SerialError::Parse(s.to_string()));
        }
        let padded = if digits.len() % 2 == 1 { format!("0{digits}") } else { digits };
        let bytes: Vec<u8> = (0..padded.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&padded[i..i + 2], 16).expect("hex checked"))
            .collect();
        Self::from_bytes(&bytes)
    }

    pub fn from_decimal(s: &str) -> Result<Self, SerialError> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(SerialError::Parse(s.to_string()));
        }
        let mut bytes: Vec<u8> = vec![0];
        for d in s.bytes().map(|b| (b - b'0') as u32) {
            let mut carry = d;
            for byte in bytes.iter_mut().rev() {
                let v = *byte as u32 * 10 + carry;
                *byte = v as u8;
                carry = v >> 8;
            }
            while carry > 0 {
                bytes.insert(0, carry as u8);
                carry >>= 8;
            }
            if bytes.len() > Self::MAX_OCTETS + 1 {
                return Err(SerialError::Length(bytes.len()));
            }
        }
        Self::from_bytes(&bytes)
    }

    pub fn to_der(&self) -> Vec<u8> {
        der::integer(&self.0)
    }
}

/// Hex by default, decimal with a `0d` prefix.
impl FromStr for SerialNumber {
    type Err = SerialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(dec) = s.strip_prefix("0d") {
            Self::from_decimal(dec)
        } else {
            Self::from_hex(s.strip_prefix("0x").unwrap_or(s))
        }
    }
}

impl Ord for SerialNumber {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for SerialNumber {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SerialNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for SerialNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SerialNumber({})", self.to_hex())
    }
}

impl Serialize for SerialNumber {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SerialNumber {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SerialNumber::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// RFC 5280 CRLReason. Code 7 is unassigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrlReason {
    Unspecified,
    KeyCompromise,
    CaCompromise,
    AffiliationChanged,
    Superseded,
    CessationOfOperation,
    CertificateHold,
    RemoveFromCrl,
    PrivilegeWithdrawn,
    AaCompromise,
}

impl CrlReason {
    pub const ALL: [CrlReason; 10] = [
        CrlReason::Unspecified,
        CrlReason::KeyCompromise,
        CrlReason::CaCompromise,
        CrlReason::AffiliationChanged,
        CrlReason::Superseded,
        CrlReason::CessationOfOperation,
        CrlReason::CertificateHold,
        CrlReason::RemoveFromCrl,
        CrlReason::PrivilegeWithdrawn,
        CrlReason::AaCompromise,
    ];

    pub fn code(self) -> u8 {
        match self {
            CrlReason::Unspecified => 0,
            CrlReason::KeyCompromise => 1,
            CrlReason::CaCompromise => 2,
            CrlReason::AffiliationChanged => 3,
            CrlReason::Superseded => 4,
            CrlReason::CessationOfOperation => 5,
            CrlReason::CertificateHold => 6,
            CrlReason::RemoveFromCrl => 8,
            CrlReason::PrivilegeWithdrawn => 9,
            CrlReason::AaCompromise => 10,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.code() as u64 == code)
    }

    /// Kebab-case flag name, e.g. `key-compromise`.
    pub fn flag_name(self) -> &'static str {
        match self {
            CrlReason::Unspecified => "unspecified",
            CrlReason::KeyCompromise => "key-compromise",
            CrlReason::CaCompromise => "ca-compromise",
            CrlReason::AffiliationChanged => "affiliation-changed",
            CrlReason::Superseded => "superseded",
            CrlReason::CessationOfOperation => "cessation-of-operation",
            CrlReason::CertificateHold => "certificate-hold",
            CrlReason::RemoveFromCrl => "remove-from-crl",
            CrlReason::PrivilegeWithdrawn => "privilege-withdrawn",
            CrlReason::AaCompromise => "aa-compromise",
        }
    }

    /// OpenSSL text form, e.g. `Key Compromise`.
    pub fn display_name(self) -> &'static str {
        match self {
            CrlReason::Unspecified => "Unspecified",
            CrlReason::KeyCompromise => "Key Compromise",
            CrlReason::CaCompromise => "CA Compromise",
            CrlReason::AffiliationChanged => "Affiliation Changed",
            CrlReason::Superseded => "Superseded",
            CrlReason::CessationOfOperation => "Cessation Of Operation",
            CrlReason::CertificateHold => "Certificate Hold",
            CrlReason::RemoveFromCrl => "Remove From CRL",
            CrlReason::PrivilegeWithdrawn => "Privilege Withdrawn",
            CrlReason::AaCompromise => "AA Compromise",
        }
    }
}

impl FromStr for CrlReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(code) = s.parse::<u64>() {
            return Self::from_code(code).ok_or_else(|| format!("invalid reason code {code}"));
        }
        Self::ALL
            .into_iter()
            .find(|r| r.flag_name() == s)
            .ok_or_else(|| format!("unknown reason {s:?}"))
    }
}

impl fmt::Display for CrlReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevokedEntry {
    pub serial: SerialNumber,
    pub revocation_date: Asn1Time,
    pub reason: Option<CrlReason>,
}

impl RevokedEntry {
    fn to_der(&self) -> Vec<u8> {
        let serial = self.serial.to_der();
        let date = self.revocation_date.to_der();
        match self.reason {
            Some(reason) => {
                let ext = encode_extension(&oid::crl_reason(), false, &der::enumerated(reason.code() as u64));
                let exts = der::sequence(&[&ext]);
                der::sequence(&[&serial, &date, &exts])
            }
            None => der::sequence(&[&serial, &date]),
        }
    }

    fn from_reader(mut r: DerReader<'_>) -> Result<Self, CrlError> {
        let serial = SerialNumber::from_bytes(&r.read_unsigned()?)
            .map_err(|e| CrlError::Malformed(e.to_string()))?;
        let revocation_date = r.read_time()?;
        let mut reason = None;
        if let Some(exts) = r.read_optional(tag::SEQUENCE)? {
            for ext in parse_extensions(exts)? {
                if ext.id == oid::crl_reason() {
                    let code = DerReader::new(ext.value).read_enumerated()?;
                    reason = Some(
                        CrlReason::from_code(code)
                            .ok_or_else(|| CrlError::Malformed(format!("invalid reason code {code}")))?,
                    );
                } else if ext.critical {
                    return Err(CrlError::Malformed(format!("unknown critical entry extension {}", ext.id)));
                }
            }
        }
        r.finish()?;
        Ok(Self { serial, revocation_date, reason })
    }
}

pub(crate) struct Extension<'a> {
    pub id: ObjectIdentifier,
    pub critical: bool,
    pub value: &'a [u8],
}

pub(crate) fn encode_extension(id: &ObjectIdentifier, critical: bool, value: &[u8]) -> Vec<u8> {
    let id = id.to_der();
    let value = der::octet_string(value);
    if critical {
        der::sequence(&[&id, &der::boolean(true), &value])
    } else {
        der::sequence(&[&id, &value])
    }
}

pub(crate) fn parse_extensions(content: &[u8]) -> Result<Vec<Extension<'_>>, DerError> {
    let mut r = DerReader::new(content);
    let mut out = Vec::new();
    while !r.is_empty() {
        let mut e = r.read_sequence()?;
        let id = e.read_oid()?;
        let critical = if e.peek_tag() == Some(tag::BOOLEAN) {
            // DER forbids encoding the DEFAULT FALSE value
            if !e.read_boolean()? {
                return Err(DerError::InvalidBoolean);
            }
            true
        } else {
            false
        };
        let value = e.read_octet_string()?;
        e.finish()?;
        out.push(Extension { id, critical, value });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid distinguished name: {0}")]
pub struct NameError(pub String);

/// An X.501 Name restricted to one attribute per RDN.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DistinguishedName {
    attributes: Vec<(ObjectIdentifier, String)>,
}

type OidCtor = fn() -> ObjectIdentifier;

const SHORT_NAMES: [(&str, OidCtor); 6] = [
    ("C", oid::country_name),
    ("ST", oid::state_or_province_name),
    ("L", oid::locality_name),
    ("O", oid::organization_name),
    ("OU", oid::organizational_unit_name),
    ("CN", oid::common_name),
];

impl DistinguishedName {
    pub fn new(attributes: Vec<(ObjectIdentifier, String)>) -> Self {
        Self { attributes }
    }

    pub fn attributes(&self) -> &[(ObjectIdentifier, String)] {
        &self.attributes
    }

    /// The issuer shown in the reference CRL dump.
    pub fn smart_grid_root() -> Self {
        "C=aa, ST=aa, L=aa, O=aa, OU=aa, CN=rootca".parse().expect("valid constant")
    }

    pub fn to_der(&self) -> Vec<u8> {
        let rdns: Vec<Vec<u8>> = self
            .attributes
            .iter()
            .map(|(id, value)| {
                let string_tag = if *id == oid::country_name() { tag::PRINTABLE_STRING } else { tag::UTF8_STRING };
                let atv = der::sequence(&[&id.to_der(), &der::encode_tlv(string_tag, value.as_bytes())]);
                der::encode_tlv(tag::SET, &atv)
            })
            .collect();
        let refs: Vec<&[u8]> = rdns.iter().map(Vec::as_slice).collect();
        der::sequence(&refs)
    }

    pub fn from_content(content: &[u8]) -> Result<Self, DerError> {
        let mut r = DerReader::new(content);
        let mut attributes = Vec::new();
        while !r.is_empty() {
            let mut set = DerReader::new(r.read(tag::SET)?);
            let mut atv = set.read_sequence()?;
            set.finish()?;
            let id = atv.read_oid()?;
            let (t, value, _) = atv.read_any()?;
            if !matches!(t, tag::UTF8_STRING | tag::PRINTABLE_STRING | tag::IA5_STRING) {
                return Err(DerError::InvalidString);
            }
            atv.finish()?;
            let value = std::str::from_utf8(value).map_err(|_| DerError::InvalidString)?;
            attributes.push((id, value.to_string()));
        }
        Ok(Self { attributes })
    }
}

impl fmt::Display for DistinguishedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (id, value)) in self.attributes.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match SHORT_NAMES.iter().find(|(_, o)| o() == *id) {
                Some((short, _)) => write!(f, "{short}={value}")?,
                None => write!(f, "{id}={value}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for DistinguishedName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut attributes = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| NameError(part.to_string()))?;
            let key = key.trim();
            let id = match SHORT_NAMES.iter().find(|(short, _)| short.eq_ignore_ascii_case(key)) {
                Some((_, o)) => o(),
                None => key.parse().map_err(|_| NameError(format!("unknown attribute {key}")))?,
            };
            attributes.push((id, value.trim().to_string()));
        }
        if attributes.is_empty() {
            return Err(NameError("empty name".into()));
        }
        Ok(Self { attributes })
    }
}

/// Decoder strictness knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecodeOptions {
    /// Accept v1 CRLs that nevertheless carry entry extensions.
    pub allow_v1_extensions: bool,
}


/// A signed CRL. Constructed only by [`build_crl`] or by decoding, so the
/// retained `tbsCertList` bytes always match the fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateRevocationList {
    version: u8,
    signature_algorithm: ObjectIdentifier,
    issuer: DistinguishedName,
    this_update: Asn1Time,
    next_update: Option<Asn1Time>,
    entries: Vec<RevokedEntry>,
    signature: Vec<u8>,
    tbs: Vec<u8>,
}

impl CertificateRevocationList {
    pub fn version(&self) -> u8 {
        self.version
    }

    pub fn signature_algorithm(&self) -> &ObjectIdentifier {
        &self.signature_algorithm
    }

    pub fn issuer(&self) -> &DistinguishedName {
        &self.issuer
    }

    pub fn this_update(&self) -> Asn1Time {
        self.this_update
    }

    pub fn next_update(&self) -> Option<Asn1Time> {
        self.next_update
    }

    pub fn entries(&self) -> &[RevokedEntry] {
        &self.entries
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    /// The exact signed bytes.
    pub fn tbs_der(&self) -> &[u8] {
        &self.tbs
    }

    pub fn to_der(&self) -> Vec<u8> {
        let alg = algorithm_identifier(&self.signature_algorithm);
        der::sequence(&[&self.tbs, &alg, &der::bit_string(&self.signature)])
    }

    pub fn to_pem(&self) -> String {
        pem::pem_encode(PEM_LABEL, &self.to_der()).expect("constant label is valid")
    }

    pub fn from_der(input: &[u8]) -> Result<Self, CrlError> {
        Self::from_der_with(input, DecodeOptions::default())
    }

    pub fn from_der_with(input: &[u8], options: DecodeOptions) -> Result<Self, CrlError> {
        let mut outer = DerReader::new(input);
        let mut list = outer.read_sequence()?;
        outer.finish()?;
        let (tbs_content, tbs_raw) = list.read_raw(tag::SEQUENCE)?;
        let outer_alg = read_algorithm_identifier(&mut list)?;
        let signature = list.read_bit_string()?.to_vec();
        list.finish()?;

        let mut tbs = DerReader::new(tbs_content);
        let version = match tbs.read_optional(tag::INTEGER)? {
            None => 1,
            Some(v) if der::decode_u64(v)? == 1 => 2,
            Some(_) => return Err(CrlError::Malformed("unsupported CRL version".into())),
        };
        let signature_algorithm = read_algorithm_identifier(&mut tbs)?;
        if signature_algorithm != outer_alg {
            return Err(CrlError::Malformed("inner and outer signature algorithms differ".into()));
        }
        let issuer = DistinguishedName::from_content(tbs.read(tag::SEQUENCE)?)?;
        let this_update = tbs.read_time()?;
        let next_update = match tbs.peek_tag() {
            Some(tag::UTC_TIME) | Some(tag::GENERALIZED_TIME) => Some(tbs.read_time()?),
            _ => None,
        };
        let mut entries = Vec::new();
        if let Some(list) = tbs.read_optional(tag::SEQUENCE)? {
            let mut r = DerReader::new(list);
            if r.is_empty() {
                return Err(CrlError::Malformed("empty revokedCertificates must be omitted".into()));
            }
            while !r.is_empty() {
                entries.push(RevokedEntry::from_reader(r.read_sequence()?)?);
            }
        }
        if let Some(exts) = tbs.read_optional(tag::context(0))? {
            let exts = der::parse_single(exts, tag::SEQUENCE)?;
            if version != 2 {
                return Err(CrlError::Malformed("crlExtensions require a v2 CRL".into()));
            }
            for ext in parse_extensions(exts)? {
                if ext.critical {
                    return Err(CrlError::Malformed(format!("unknown critical CRL extension {}", ext.id)));
                }
            }
        }
        tbs.finish()?;

        if version == 1 && entries.iter().any(|e| e.reason.is_some()) && !options.allow_v1_extensions {
            return Err(CrlError::Malformed("entry extensions require a v2 CRL".into()));
        }
        if let Some(next) = next_update {
            if next <= this_update {
                return Err(CrlError::Malformed("nextUpdate is not after thisUpdate".into()));
            }
        }
        Ok(Self {
            version,
            signature_algorithm,
            issuer,
            this_update,
            next_update,
            entries,
            signature,
            tbs: tbs_raw.to_vec(),
        })
    }

    pub fn from_pem(text: &str) -> Result<Self, CrlError> {
        let (label, der) = pem::pem_decode(text)?;
        if label != PEM_LABEL {
            return Err(PemError::BadArmor(format!("expected {PEM_LABEL}, found {label}")).into());
        }
        Self::from_der(&der)
    }

    /// True iff the signature verifies over the exact tbsCertList bytes.
    pub fn verify(&self, issuer_key: &PublicKey) -> Result<bool, UnsupportedAlgorithm> {
        issuer_key.verify(&self.signature_algorithm, &self.tbs, &self.signature)
    }

    pub fn contains(&self, serial: &SerialNumber) -> bool {
        self.entries.iter().any(|e| &e.serial == serial)
    }

    /// OpenSSL `crl -text` style dump.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Certificate Revocation List (CRL):");
        let _ = writeln!(s, "  Version {} (0x{:x})", self.version, self.version - 1);
        let _ = writeln!(s, "  Signature Algorithm: {}", oid::name(&self.signature_algorithm));
        let _ = writeln!(s, "  Issuer: {}", self.issuer);
        let _ = writeln!(s, "  Last Update: {}", self.this_update.to_openssl_text());
        match self.next_update {
            Some(t) => {
                let _ = writeln!(s, "  Next Update: {}", t.to_openssl_text());
            }
            None => {
                let _ = writeln!(s, "  Next Update: NONE");
            }
        }
        if self.entries.is_empty() {
            let _ = writeln!(s, "No Revoked Certificates.");
        } else {
            let _ = writeln!(s, "Revoked Certificates:");
        }
        for e in &self.entries {
            let _ = writeln!(s, "  Serial Number: {}", e.serial);
            let _ = writeln!(s, "  Revocation Date: {}", e.revocation_date.to_openssl_text());
            if let Some(reason) = e.reason {
                let _ = writeln!(s, "  CRL entry extensions:");
                let _ = writeln!(s, "    X509v3 CRL Reason Code:");
                let _ = writeln!(s, "      {reason}");
            }
        }
        let _ = writeln!(s, "Signature Algorithm: {}", oid::name(&self.signature_algorithm));
        let _ = writeln!(s, "Signature Value:");
        let hex: Vec<String> = self.signature.iter().map(|b| format!("{b:02x}")).collect();
        for line in hex.chunks(18) {
            let _ = writeln!(s, "{}:", line.join(":"));
        }
        if s.ends_with(":\n") {
            s.truncate(s.len() - 2);
            s.push('\n');
        }
        s
    }
}

pub(crate) fn algorithm_identifier(alg: &ObjectIdentifier) -> Vec<u8> {
    der::sequence(&[&alg.to_der(), &der::null()])
}

pub(crate) fn read_algorithm_identifier(r: &mut DerReader<'_>) -> Result<ObjectIdentifier, DerError> {
    let mut alg = r.read_sequence()?;
    let id = alg.read_oid()?;
    if !alg.is_empty() {
        alg.read_null()?;
    }
    alg.finish()?;
    Ok(id)
}

/// Sign a CRL over `entries`, sorted ascending by serial. Emits v2 whenever an
/// entry carries a reason extension, v1 otherwise.
pub fn build_crl(
    issuer: &DistinguishedName,
    entries: &[RevokedEntry],
    this_update: Asn1Time,
    next_update: Option<Asn1Time>,
    signer: &dyn SignatureProvider,
) -> Result<CertificateRevocationList, CrlError> {
    let mut seen = HashSet::with_capacity(entries.len());
    for e in entries {
        if !seen.insert(&e.serial) {
            return Err(CrlError::DuplicateSerial(e.serial.clone()));
        }
    }
    if let Some(next) = next_update {
        if next <= this_update {
            return Err(CrlError::Invalid("nextUpdate must be after thisUpdate".into()));
        }
    }
    let mut entries = entries.to_vec();
    entries.sort_by(|a, b| a.serial.cmp(&b.serial));
    let version = if entries.iter().any(|e| e.reason.is_some()) { 2 } else { 1 };
    let signature_algorithm = signer.algorithm();

    let mut parts: Vec<Vec<u8>> = Vec::with_capacity(6);
    if version == 2 {
        parts.push(der::integer(&[1]));
    }
    parts.push(algorithm_identifier(&signature_algorithm));
    parts.push(issuer.to_der());
    parts.push(this_update.to_der());
    if let Some(next) = next_update {
        parts.push(next.to_der());
    }
    if !entries.is_empty() {
        let encoded: Vec<Vec<u8>> = entries.iter().map(RevokedEntry::to_der).collect();
        let refs: Vec<&[u8]> = encoded.iter().map(Vec::as_slice).collect();
        parts.push(der::sequence(&refs));
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    let tbs = der::sequence(&refs);
    let signature = signer.sign(&tbs)?;
    Ok(CertificateRevocationList {
        version,
        signature_algorithm,
        issuer: issuer.clone(),
        this_update,
        next_update,
        entries,
        signature,
        tbs,
    })
}

pub fn encode_crl_der(crl: &CertificateRevocationList) -> Vec<u8> {
    crl.to_der()
}

pub fn decode_crl_der(bytes: &[u8]) -> Result<CertificateRevocationList, CrlError> {
    CertificateRevocationList::from_der(bytes)
}

pub fn crl_to_pem(crl: &CertificateRevocationList) -> String {
    crl.to_pem()
}

pub fn crl_from_pem(text: &str) -> Result<CertificateRevocationList, CrlError> {
    CertificateRevocationList::from_pem(text)
}

pub fn verify_crl(crl: &CertificateRevocationList, issuer_key: &PublicKey) -> Result<bool, UnsupportedAlgorithm> {
    crl.verify(issuer_key)
}

/// The three serials from the reference CRL dump.
pub fn reference_serials() -> [SerialNumber; 3] {
    [
        SerialNumber::from_u64(0x221A_0A99_711F_9968),
        SerialNumber::from_u64(0x308C_707E_A89F_47A5),
        SerialNumber::from_u64(0x5238_F347_5665_F7C4),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signing::RsaSha256Signer;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn signer() -> &'static RsaSha256Signer {
        static S: OnceLock<RsaSha256Signer> = OnceLock::new();
        S.get_or_init(|| RsaSha256Signer::from_pkcs8_pem(include_str!("../testdata/ca_key.pem")).unwrap())
    }

    fn other() -> &'static RsaSha256Signer {
        static S: OnceLock<RsaSha256Signer> = OnceLock::new();
        S.get_or_init(|| RsaSha256Signer::from_pkcs8_pem(include_str!("../testdata/other_key.pem")).unwrap())
    }

    fn reference_time() -> Asn1Time {
        Asn1Time::from_civil(2023, 5, 4, 19, 57, 27).unwrap()
    }

    fn reference_crl() -> CertificateRevocationList {
        let entries: Vec<RevokedEntry> = reference_serials()
            .into_iter()
            .map(|serial| RevokedEntry { serial, revocation_date: reference_time(), reason: Some(CrlReason::KeyCompromise) })
            .collect();
        build_crl(&DistinguishedName::smart_grid_root(), &entries, reference_time(), None, signer()).unwrap()
    }

    #[test]
    fn serial_parsing() {
        let s: SerialNumber = "221A0A99711F9968".parse().unwrap();
        assert_eq!(s, SerialNumber::from_u64(0x221A0A99711F9968));
        assert_eq!(s.to_der(), [0x02, 0x08, 0x22, 0x1A, 0x0A, 0x99, 0x71, 0x1F, 0x99, 0x68]);
        assert_eq!("0d255".parse::<SerialNumber>().unwrap(), SerialNumber::from_u64(255));
        assert_eq!("0d0".parse::<SerialNumber>().unwrap(), SerialNumber::from_u64(0));
        assert_eq!(
            "0d2457288200828197224".parse::<SerialNumber>().unwrap(),
            SerialNumber::from_u64(0x221A0A99711F9968)
        );
        assert_eq!(SerialNumber::from_bytes(&[0, 0, 5]).unwrap().as_bytes(), [5]);
        assert!(SerialNumber::from_bytes(&[1; 21]).is_err());
        assert!(SerialNumber::from_bytes(&[]).is_err());
        assert!("xyz".parse::<SerialNumber>().is_err());
        assert!(SerialNumber::from_u64(0x100) > SerialNumber::from_u64(0xFF));
    }

    #[test]
    fn reason_codes() {
        assert_eq!(CrlReason::from_code(7), None);
        assert_eq!(CrlReason::from_code(1), Some(CrlReason::KeyCompromise));
        assert_eq!(CrlReason::KeyCompromise.to_string(), "Key Compromise");
        assert_eq!("key-compromise".parse::<CrlReason>().unwrap().code(), 1);
        assert!("7".parse::<CrlReason>().is_err());
    }

    #[test]
    fn name_text_and_der() {
        let dn = DistinguishedName::smart_grid_root();
        assert_eq!(dn.to_string(), "C=aa, ST=aa, L=aa, O=aa, OU=aa, CN=rootca");
        let der = dn.to_der();
        let back = DistinguishedName::from_content(der::parse_single(&der, tag::SEQUENCE).unwrap()).unwrap();
        assert_eq!(back, dn);
        assert!("".parse::<DistinguishedName>().is_err());
        assert!("CN".parse::<DistinguishedName>().is_err());
    }

    #[test]
    fn reference_reconstruction() {
        let crl = reference_crl();
        let back = CertificateRevocationList::from_der(&crl.to_der()).unwrap();
        assert_eq!(back, crl);
        assert_eq!(back.issuer().to_string(), "C=aa, ST=aa, L=aa, O=aa, OU=aa, CN=rootca");
        assert_eq!(back.signature_algorithm(), &oid::sha256_with_rsa_encryption());
        assert_eq!(back.version(), 2);
        assert_eq!(back.next_update(), None);
        let serials: Vec<_> = back.entries().iter().map(|e| e.serial.clone()).collect();
        assert_eq!(serials, reference_serials());
        assert!(back.entries().iter().all(|e| e.reason == Some(CrlReason::KeyCompromise)));
        assert!(back.verify(signer().public_key()).unwrap());
        let text = back.render_text();
        assert!(text.contains("Issuer: C=aa, ST=aa, L=aa, O=aa, OU=aa, CN=rootca"));
        assert!(text.contains("Last Update: May  4 19:57:27 2023 GMT"));
        assert!(text.contains("Next Update: NONE"));
        assert!(text.contains("Serial Number: 221A0A99711F9968"));
        assert!(text.contains("      Key Compromise"));
        assert_eq!(CertificateRevocationList::from_pem(&crl.to_pem()).unwrap(), crl);
    }

    #[test]
    fn empty_crl() {
        let crl = build_crl(&DistinguishedName::smart_grid_root(), &[], reference_time(), None, signer()).unwrap();
        assert_eq!(crl.version(), 1);
        let back = CertificateRevocationList::from_der(&crl.to_der()).unwrap();
        assert_eq!(back, crl);
        assert!(back.entries().is_empty());
        assert!(back.verify(signer().public_key()).unwrap());
    }

    #[test]
    fn duplicate_serial_rejected() {
        let e = RevokedEntry { serial: SerialNumber::from_u64(1), revocation_date: reference_time(), reason: None };
        let err = build_crl(&DistinguishedName::smart_grid_root(), &[e.clone(), e], reference_time(), None, signer());
        assert!(matches!(err, Err(CrlError::DuplicateSerial(_))));
    }

    #[test]
    fn next_update_must_follow_this_update() {
        let t = reference_time();
        assert!(build_crl(&DistinguishedName::smart_grid_root(), &[], t, Some(t), signer()).is_err());
        let crl = build_crl(&DistinguishedName::smart_grid_root(), &[], t, Some(t.checked_add_seconds(3600).unwrap()), signer()).unwrap();
        assert_eq!(CertificateRevocationList::from_der(&crl.to_der()).unwrap().next_update(), crl.next_update());
    }

    #[test]
    fn entries_are_sorted() {
        let mk = |v: u64| RevokedEntry { serial: SerialNumber::from_u64(v), revocation_date: reference_time(), reason: None };
        let crl = build_crl(&DistinguishedName::smart_grid_root(), &[mk(300), mk(2), mk(0x10000), mk(7)], reference_time(), None, signer()).unwrap();
        let got: Vec<_> = crl.entries().iter().map(|e| e.serial.clone()).collect();
        assert_eq!(got, [2u64, 7, 300, 0x10000].map(SerialNumber::from_u64));
    }

    #[test]
    fn verify_rejects_tampering() {
        let crl = reference_crl();
        assert!(!crl.verify(other().public_key()).unwrap());
        let der = crl.to_der();
        // flip one bit inside the first serial's content octets
        let serial = reference_serials()[0].to_der();
        let pos = der.windows(serial.len()).position(|w| w == serial).unwrap() + 4;
        for bit in 0..8 {
            let mut bad = der.clone();
            bad[pos] ^= 1 << bit;
            let decoded = CertificateRevocationList::from_der(&bad).unwrap();
            assert!(!decoded.verify(signer().public_key()).unwrap());
        }
    }

    #[test]
    fn version_one_with_extensions() {
        // Rebuild the reference CRL with a v1 header (no version field) as the
        // reference dump shows, then check strict and lenient decoding.
        let crl = reference_crl();
        let mut tbs = DerReader::new(crl.tbs_der()).read_sequence().unwrap();
        tbs.read(tag::INTEGER).unwrap();
        let mut rest = Vec::new();
        while !tbs.is_empty() {
            rest.extend_from_slice(tbs.read_any().unwrap().2);
        }
        let v1_tbs = der::encode_tlv(tag::SEQUENCE, &rest);
        let sig = signer().sign(&v1_tbs).unwrap();
        let v1 = der::sequence(&[&v1_tbs, &algorithm_identifier(&oid::sha256_with_rsa_encryption()), &der::bit_string(&sig)]);
        assert!(CertificateRevocationList::from_der(&v1).is_err());
        let lenient = CertificateRevocationList::from_der_with(&v1, DecodeOptions { allow_v1_extensions: true }).unwrap();
        assert_eq!(lenient.version(), 1);
        assert_eq!(lenient.entries().len(), 3);
        assert!(lenient.verify(signer().public_key()).unwrap());
        assert_eq!(lenient.to_der(), v1);
        assert!(lenient.render_text().contains("Version 1 (0x0)"));
    }

    #[test]
    fn unknown_critical_extension_rejected() {
        let crl = reference_crl();
        let mut tbs = DerReader::new(crl.tbs_der()).read_sequence().unwrap();
        let mut rest = Vec::new();
        while !tbs.is_empty() {
            rest.extend_from_slice(tbs.read_any().unwrap().2);
        }
        let ext = encode_extension(&"1.2.3.4".parse().unwrap(), true, &der::null());
        rest.extend(der::encode_tlv(tag::context(0), &der::sequence(&[&ext])));
        let tbs = der::encode_tlv(tag::SEQUENCE, &rest);
        let bad = der::sequence(&[&tbs, &algorithm_identifier(&oid::sha256_with_rsa_encryption()), &der::bit_string(&[0; 4])]);
        assert!(matches!(CertificateRevocationList::from_der(&bad), Err(CrlError::Malformed(_))));
    }

    #[test]
    fn der_size_strictly_increasing() {
        let sizes: Vec<usize> = (0..=40u64)
            .map(|n| {
                let entries: Vec<RevokedEntry> = (0..n)
                    .map(|i| RevokedEntry {
                        serial: SerialNumber::from_u64(0x1000_0000_0000_0000 + i),
                        revocation_date: reference_time(),
                        reason: Some(CrlReason::KeyCompromise),
                    })
                    .collect();
                let crl = build_crl(&DistinguishedName::smart_grid_root(), &entries, reference_time(), None, signer()).unwrap();
                assert!(crl.to_pem().len() > crl.to_der().len());
                crl.to_der().len()
            })
            .collect();
        assert!(sizes.windows(2).all(|w| w[1] > w[0]), "{sizes:?}");
    }

    #[test]
    fn garbage_is_malformed() {
        for input in [&[][..], &[0x30, 0x00], &[0x30, 0x03, 0x02, 0x01, 0x00], b"hello world"] {
            assert!(CertificateRevocationList::from_der(input).is_err());
        }
        assert!(CertificateRevocationList::from_pem("-----BEGIN X509 CERTIFICATE-----\nAAAA\n-----END X509 CERTIFICATE-----\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn serial_hex_round_trip(bytes in prop::collection::vec(any::<u8>(), 1..=20)) {
            let s = SerialNumber::from_bytes(&bytes).unwrap();
            prop_assert_eq!(SerialNumber::from_hex(&s.to_hex()).unwrap(), s);
        }
    }
}
