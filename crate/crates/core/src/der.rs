//! A closed, strict DER subset: enough ASN.1 for CRLs, OCSP messages and a
//! self-signed CA certificate. Indefinite and non-minimal lengths are rejected.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub mod tag {
    pub const BOOLEAN: u8 = 0x01;
    pub const INTEGER: u8 = 0x02;
    pub const BIT_STRING: u8 = 0x03;
    pub const OCTET_STRING: u8 = 0x04;
    pub const NULL: u8 = 0x05;
    pub const OID: u8 = 0x06;
    pub const ENUMERATED: u8 = 0x0A;
    pub const UTF8_STRING: u8 = 0x0C;
    pub const PRINTABLE_STRING: u8 = 0x13;
    pub const IA5_STRING: u8 = 0x16;
    pub const UTC_TIME: u8 = 0x17;
    pub const GENERALIZED_TIME: u8 = 0x18;
    pub const SEQUENCE: u8 = 0x30;
    pub const SET: u8 = 0x31;

    /// Constructed context-specific tag `[n]`.
    pub const fn context(n: u8) -> u8 {
        0xA0 | n
    }

    /// Primitive context-specific tag `[n]` (IMPLICIT over a primitive type).
    pub const fn context_primitive(n: u8) -> u8 {
        0x80 | n
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DerError {
    #[error("input truncated: declared length exceeds available bytes")]
    Truncated,
    #[error("length not encoded in minimal DER form")]
    NonMinimalLength,
    #[error("indefinite length is not permitted in DER")]
    IndefiniteLength,
    #[error("length does not fit in 32 bits")]
    LengthOverflow,
    #[error("high-tag-number form is not supported")]
    UnsupportedTag,
    #[error("expected tag {expected:#04x}, found {found:#04x}")]
    UnexpectedTag { expected: u8, found: u8 },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("trailing data after value")]
    TrailingData,
    #[error("integer is not minimally encoded")]
    NonCanonicalInteger,
    #[error("negative integer where an unsigned value is required")]
    NegativeInteger,
    #[error("integer too large")]
    IntegerOverflow,
    #[error("object identifier has no arcs")]
    EmptyOid,
    #[error("object identifier arc is unterminated or overflows")]
    ArcOverflow,
    #[error("invalid object identifier: {0}")]
    InvalidOid(String),
    #[error("malformed time: {0}")]
    MalformedTime(String),
    #[error("invalid boolean encoding")]
    InvalidBoolean,
    #[error("invalid bit string")]
    InvalidBitString,
    #[error("invalid string contents")]
    InvalidString,
}

pub type Result<T> = std::result::Result<T, DerError>;

fn push_length(len: usize, out: &mut Vec<u8>) {
    if len < 0x80 {
        out.push(len as u8);
        return;
    }
    let bytes = (len as u64).to_be_bytes();
    let skip = bytes.iter().take_while(|b| **b == 0).count();
    let significant = &bytes[skip..];
    out.push(0x80 | significant.len() as u8);
    out.extend_from_slice(significant);
}

/// `tag ‖ length ‖ payload` with the length in minimal form.
pub fn encode_tlv(tag: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 6);
    out.push(tag);
    push_length(payload.len(), &mut out);
    out.extend_from_slice(payload);
    out
}

/// Concatenate pre-encoded children under one constructed tag.
pub fn encode_constructed(tag: u8, children: &[&[u8]]) -> Vec<u8> {
    let len: usize = children.iter().map(|c| c.len()).sum();
    let mut payload = Vec::with_capacity(len);
    for c in children {
        payload.extend_from_slice(c);
    }
    encode_tlv(tag, &payload)
}

pub fn sequence(children: &[&[u8]]) -> Vec<u8> {
    encode_constructed(tag::SEQUENCE, children)
}

/// Split one TLV off the front of `input`, returning `(tag, payload, rest)`.
pub fn decode_tlv(input: &[u8]) -> Result<(u8, &[u8], &[u8])> {
    let (&tag, rest) = input.split_first().ok_or(DerError::UnexpectedEnd)?;
    if tag & 0x1F == 0x1F {
        return Err(DerError::UnsupportedTag);
    }
    let (&first, mut rest) = rest.split_first().ok_or(DerError::Truncated)?;
    let len = if first < 0x80 {
        first as usize
    } else if first == 0x80 {
        return Err(DerError::IndefiniteLength);
    } else {
        let n = (first & 0x7F) as usize;
        if n > 4 {
            return Err(DerError::LengthOverflow);
        }
        if rest.len() < n {
            return Err(DerError::Truncated);
        }
        let (len_bytes, after) = rest.split_at(n);
        rest = after;
        if len_bytes[0] == 0 {
            return Err(DerError::NonMinimalLength);
        }
        let len = len_bytes.iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
        if len < 0x80 {
            return Err(DerError::NonMinimalLength);
        }
        len
    };
    if rest.len() < len {
        return Err(DerError::Truncated);
    }
    let (payload, rest) = rest.split_at(len);
    Ok((tag, payload, rest))
}

/// Content octets of a non-negative INTEGER given its big-endian magnitude.
pub fn encode_integer(magnitude: &[u8]) -> Vec<u8> {
    let skip = magnitude.iter().take_while(|b| **b == 0).count();
    let trimmed = &magnitude[skip..];
    if trimmed.is_empty() {
        return vec![0];
    }
    let mut out = Vec::with_capacity(trimmed.len() + 1);
    if trimmed[0] & 0x80 != 0 {
        out.push(0);
    }
    out.extend_from_slice(trimmed);
    out
}

pub fn encode_u64(value: u64) -> Vec<u8> {
    encode_integer(&value.to_be_bytes())
}

/// Parse INTEGER content octets as an unsigned magnitude, enforcing minimal form.
pub fn decode_unsigned(content: &[u8]) -> Result<Vec<u8>> {
    match content {
        [] => Err(DerError::NonCanonicalInteger),
        [0] => Ok(vec![0]),
        [0, next, ..] if next & 0x80 == 0 => Err(DerError::NonCanonicalInteger),
        [0, rest @ ..] => Ok(rest.to_vec()),
        [first, ..] if first & 0x80 != 0 => Err(DerError::NegativeInteger),
        _ => Ok(content.to_vec()),
    }
}

pub fn decode_u64(content: &[u8]) -> Result<u64> {
    let magnitude = decode_unsigned(content)?;
    if magnitude.len() > 8 {
        return Err(DerError::IntegerOverflow);
    }
    Ok(magnitude.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64))
}

/// Dotted-arc object identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectIdentifier(Vec<u64>);

impl ObjectIdentifier {
    pub fn new(arcs: &[u64]) -> Result<Self> {
        if arcs.is_empty() {
            return Err(DerError::EmptyOid);
        }
        if arcs.len() < 2 {
            return Err(DerError::InvalidOid("at least two arcs required".into()));
        }
        if arcs[0] > 2 {
            return Err(DerError::InvalidOid(format!("first arc {} > 2", arcs[0])));
        }
        if arcs[0] < 2 && arcs[1] >= 40 {
            return Err(DerError::InvalidOid(format!(
                "second arc {} must be < 40 under {}",
                arcs[1], arcs[0]
            )));
        }
        if arcs[0] == 2 && arcs[1] > u64::MAX - 80 {
            return Err(DerError::ArcOverflow);
        }
        Ok(Self(arcs.to_vec()))
    }

    pub fn arcs(&self) -> &[u64] {
        &self.0
    }

    /// Content octets (no tag/length).
    pub fn to_content(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_base128(self.0[0] * 40 + self.0[1], &mut out);
        for arc in &self.0[2..] {
            push_base128(*arc, &mut out);
        }
        out
    }

    pub fn to_der(&self) -> Vec<u8> {
        encode_tlv(tag::OID, &self.to_content())
    }

    pub fn from_content(content: &[u8]) -> Result<Self> {
        if content.is_empty() {
            return Err(DerError::EmptyOid);
        }
        let mut values = Vec::new();
        let mut acc: u64 = 0;
        let mut in_arc = false;
        for &b in content {
            if !in_arc && b == 0x80 {
                // leading 0x80 is a non-minimal arc
                return Err(DerError::InvalidOid("non-minimal arc encoding".into()));
            }
            if acc > (u64::MAX >> 7) {
                return Err(DerError::ArcOverflow);
            }
            acc = (acc << 7) | (b & 0x7F) as u64;
            in_arc = b & 0x80 != 0;
            if !in_arc {
                values.push(acc);
                acc = 0;
            }
        }
        if in_arc {
            return Err(DerError::ArcOverflow);
        }
        let first = values[0];
        let mut arcs = Vec::with_capacity(values.len() + 1);
        if first < 80 {
            arcs.push(first / 40);
            arcs.push(first % 40);
        } else {
            arcs.push(2);
            arcs.push(first - 80);
        }
        arcs.extend_from_slice(&values[1..]);
        Ok(Self(arcs))
    }
}

fn push_base128(mut value: u64, out: &mut Vec<u8>) {
    let mut buf = [0u8; 10];
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = (value & 0x7F) as u8;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    let last = buf.len() - 1;
    for (j, b) in buf.iter().enumerate().skip(i) {
        out.push(if j == last { *b } else { *b | 0x80 });
    }
}

pub fn encode_oid(arcs: &[u64]) -> Result<Vec<u8>> {
    Ok(ObjectIdentifier::new(arcs)?.to_content())
}

pub fn decode_oid(content: &[u8]) -> Result<Vec<u64>> {
    Ok(ObjectIdentifier::from_content(content)?.0)
}

impl fmt::Display for ObjectIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for arc in &self.0 {
            if !first {
                f.write_str(".")?;
            }
            write!(f, "{arc}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for ObjectIdentifier {
    type Err = DerError;

    fn from_str(s: &str) -> Result<Self> {
        let arcs = s
            .split('.')
            .map(|p| p.parse::<u64>().map_err(|_| DerError::InvalidOid(s.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&arcs)
    }
}

/// UTC instant with one-second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Asn1Time {
    epoch_seconds: i64,
}

pub const MIN_YEAR: i64 = 1950;
pub const MAX_YEAR: i64 = 9999;

const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

impl Asn1Time {
    pub fn from_epoch(epoch_seconds: i64) -> Result<Self> {
        let t = Self { epoch_seconds };
        let year = t.civil().0;
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(DerError::MalformedTime(format!("year {year} out of range")));
        }
        Ok(t)
    }

    pub fn from_civil(year: i64, month: u32, day: u32, hour: u32, min: u32, sec: u32) -> Result<Self> {
        if !(1..=12).contains(&month)
            || day == 0
            || day > days_in_month(year, month)
            || hour > 23
            || min > 59
            || sec > 59
        {
            return Err(DerError::MalformedTime(format!(
                "{year:04}-{month:02}-{day:02}T{hour:02}:{min:02}:{sec:02}"
            )));
        }
        let days = days_from_civil(year, month, day);
        Self::from_epoch(days * 86_400 + (hour * 3600 + min * 60 + sec) as i64)
    }

    pub fn epoch_seconds(&self) -> i64 {
        self.epoch_seconds
    }

    pub fn checked_add_seconds(&self, secs: i64) -> Result<Self> {
        Self::from_epoch(self.epoch_seconds + secs)
    }

    /// `(year, month, day, hour, minute, second)`
    pub fn civil(&self) -> (i64, u32, u32, u32, u32, u32) {
        let days = self.epoch_seconds.div_euclid(86_400);
        let secs = self.epoch_seconds.rem_euclid(86_400) as u32;
        let (y, m, d) = civil_from_days(days);
        (y, m, d, secs / 3600, (secs / 60) % 60, secs % 60)
    }

    /// UTCTime for 1950–2049, GeneralizedTime otherwise (RFC 5280 rule).
    pub fn to_der(&self) -> Vec<u8> {
        let (y, ..) = self.civil();
        if (1950..2050).contains(&y) {
            encode_tlv(tag::UTC_TIME, self.digits(false).as_bytes())
        } else {
            self.to_generalized_der()
        }
    }

    pub fn to_generalized_der(&self) -> Vec<u8> {
        encode_tlv(tag::GENERALIZED_TIME, self.digits(true).as_bytes())
    }

    fn digits(&self, four_digit_year: bool) -> String {
        let (y, mo, d, h, mi, s) = self.civil();
        if four_digit_year {
            format!("{y:04}{mo:02}{d:02}{h:02}{mi:02}{s:02}Z")
        } else {
            format!("{:02}{mo:02}{d:02}{h:02}{mi:02}{s:02}Z", y % 100)
        }
    }

    /// Parse a full UTCTime or GeneralizedTime TLV.
    pub fn from_der(tlv: &[u8]) -> Result<Self> {
        let (t, content, rest) = decode_tlv(tlv)?;
        if !rest.is_empty() {
            return Err(DerError::TrailingData);
        }
        Self::from_tagged(t, content)
    }

    pub fn from_tagged(t: u8, content: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(content)
            .map_err(|_| DerError::MalformedTime("not ASCII".into()))?;
        let bad = || DerError::MalformedTime(text.to_string());
        let (year, body) = match t {
            tag::UTC_TIME => {
                if text.len() != 13 {
                    return Err(bad());
                }
                let yy: i64 = parse_digits(&text[..2]).ok_or_else(bad)?;
                (if yy < 50 { 2000 + yy } else { 1900 + yy }, &text[2..])
            }
            tag::GENERALIZED_TIME => {
                if text.len() != 15 {
                    return Err(bad());
                }
                (parse_digits(&text[..4]).ok_or_else(bad)?, &text[4..])
            }
            other => {
                return Err(DerError::UnexpectedTag {
                    expected: tag::UTC_TIME,
                    found: other,
                })
            }
        };
        if !body.ends_with('Z') {
            return Err(bad());
        }
        let field = |i: usize| parse_digits::<u32>(&body[i..i + 2]).ok_or_else(bad);
        Self::from_civil(year, field(0)?, field(2)?, field(4)?, field(6)?, field(8)?)
            .map_err(|_| bad())
    }

    /// RFC 3339 form, e.g. `2023-05-04T19:57:27Z`.
    pub fn to_rfc3339(&self) -> String {
        let (y, mo, d, h, mi, s) = self.civil();
        format!("{y:04}-{mo:02}-{d:02}T{h:02}:{mi:02}:{s:02}Z")
    }

    pub fn parse_rfc3339(s: &str) -> Result<Self> {
        let bad = || DerError::MalformedTime(s.to_string());
        let b = s.as_bytes();
        if b.len() != 20 || b[4] != b'-' || b[7] != b'-' || b[10] != b'T' || b[13] != b':' || b[16] != b':' || b[19] != b'Z' {
            return Err(bad());
        }
        let n = |r: std::ops::Range<usize>| parse_digits::<u32>(&s[r]).ok_or_else(bad);
        Self::from_civil(n(0..4)? as i64, n(5..7)?, n(8..10)?, n(11..13)?, n(14..16)?, n(17..19)?)
    }

    /// OpenSSL-style rendering: `May  4 19:57:27 2023 GMT`.
    pub fn to_openssl_text(&self) -> String {
        let (y, mo, d, h, mi, s) = self.civil();
        format!("{} {d:>2} {h:02}:{mi:02}:{s:02} {y} GMT", MONTHS[mo as usize - 1])
    }

    pub fn now() -> Self {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        Self { epoch_seconds: secs }
    }
}

impl fmt::Display for Asn1Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

pub fn encode_time(t: &Asn1Time) -> Vec<u8> {
    t.to_der()
}

pub fn decode_time(tlv: &[u8]) -> Result<Asn1Time> {
    Asn1Time::from_der(tlv)
}

fn parse_digits<T: FromStr>(s: &str) -> Option<T> {
    if s.bytes().all(|b| b.is_ascii_digit()) {
        s.parse().ok()
    } else {
        None
    }
}

fn is_leap(y: i64) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

fn days_in_month(y: i64, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(y) => 29,
        2 => 28,
        _ => 0,
    }
}

// Howard Hinnant's civil calendar algorithms.
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = m as i64;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + if m <= 2 { 1 } else { 0 };
    (y, m, d)
}

/// Sequential reader over concatenated TLVs.
#[derive(Debug, Clone, Copy)]
pub struct DerReader<'a> {
    rest: &'a [u8],
}

impl<'a> DerReader<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { rest: input }
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    pub fn peek_tag(&self) -> Option<u8> {
        self.rest.first().copied()
    }

    /// Next TLV of any tag: `(tag, content, full encoding)`.
    pub fn read_any(&mut self) -> Result<(u8, &'a [u8], &'a [u8])> {
        let start = self.rest;
        let (t, content, rest) = decode_tlv(self.rest)?;
        self.rest = rest;
        Ok((t, content, &start[..start.len() - rest.len()]))
    }

    pub fn read(&mut self, expected: u8) -> Result<&'a [u8]> {
        match self.peek_tag() {
            None => Err(DerError::UnexpectedEnd),
            Some(found) if found != expected => Err(DerError::UnexpectedTag { expected, found }),
            Some(_) => Ok(self.read_any()?.1),
        }
    }

    /// Like [`read`](Self::read) but also returns the whole TLV encoding.
    pub fn read_raw(&mut self, expected: u8) -> Result<(&'a [u8], &'a [u8])> {
        match self.peek_tag() {
            None => Err(DerError::UnexpectedEnd),
            Some(found) if found != expected => Err(DerError::UnexpectedTag { expected, found }),
            Some(_) => {
                let (_, content, raw) = self.read_any()?;
                Ok((content, raw))
            }
        }
    }

    pub fn read_optional(&mut self, expected: u8) -> Result<Option<&'a [u8]>> {
        if self.peek_tag() == Some(expected) {
            self.read(expected).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn read_sequence(&mut self) -> Result<DerReader<'a>> {
        self.read(tag::SEQUENCE).map(DerReader::new)
    }

    pub fn read_unsigned(&mut self) -> Result<Vec<u8>> {
        decode_unsigned(self.read(tag::INTEGER)?)
    }

    pub fn read_oid(&mut self) -> Result<ObjectIdentifier> {
        ObjectIdentifier::from_content(self.read(tag::OID)?)
    }

    pub fn read_octet_string(&mut self) -> Result<&'a [u8]> {
        self.read(tag::OCTET_STRING)
    }

    pub fn read_null(&mut self) -> Result<()> {
        if self.read(tag::NULL)?.is_empty() {
            Ok(())
        } else {
            Err(DerError::TrailingData)
        }
    }

    pub fn read_boolean(&mut self) -> Result<bool> {
        match self.read(tag::BOOLEAN)? {
            [0x00] => Ok(false),
            [0xFF] => Ok(true),
            _ => Err(DerError::InvalidBoolean),
        }
    }

    pub fn read_enumerated(&mut self) -> Result<u64> {
        decode_u64(self.read(tag::ENUMERATED)?)
    }

    /// BIT STRING with zero unused bits; returns the data octets.
    pub fn read_bit_string(&mut self) -> Result<&'a [u8]> {
        match self.read(tag::BIT_STRING)? {
            [0, data @ ..] => Ok(data),
            _ => Err(DerError::InvalidBitString),
        }
    }

    pub fn read_time(&mut self) -> Result<Asn1Time> {
        let (t, content, _) = self.read_any()?;
        Asn1Time::from_tagged(t, content)
    }

    pub fn read_generalized_time(&mut self) -> Result<Asn1Time> {
        Asn1Time::from_tagged(tag::GENERALIZED_TIME, self.read(tag::GENERALIZED_TIME)?)
    }

    pub fn finish(&self) -> Result<()> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(DerError::TrailingData)
        }
    }
}

pub fn null() -> Vec<u8> {
    encode_tlv(tag::NULL, &[])
}

pub fn boolean(value: bool) -> Vec<u8> {
    encode_tlv(tag::BOOLEAN, &[if value { 0xFF } else { 0x00 }])
}

pub fn octet_string(bytes: &[u8]) -> Vec<u8> {
    encode_tlv(tag::OCTET_STRING, bytes)
}

pub fn bit_string(bytes: &[u8]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(bytes.len() + 1);
    payload.push(0);
    payload.extend_from_slice(bytes);
    encode_tlv(tag::BIT_STRING, &payload)
}

pub fn integer(magnitude: &[u8]) -> Vec<u8> {
    encode_tlv(tag::INTEGER, &encode_integer(magnitude))
}

pub fn enumerated(value: u64) -> Vec<u8> {
    encode_tlv(tag::ENUMERATED, &encode_u64(value))
}

/// Parse a whole buffer as exactly one TLV with the expected tag.
pub fn parse_single(input: &[u8], expected: u8) -> Result<&[u8]> {
    let mut reader = DerReader::new(input);
    let content = reader.read(expected)?;
    reader.finish()?;
    Ok(content)
}
