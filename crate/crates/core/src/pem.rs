//! RFC 7468 text armor.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

/// Base64 body line width.
pub const LINE_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PemError {
    #[error("bad PEM armor: {0}")]
    BadArmor(String),
}

pub fn pem_encode(label: &str, der: &[u8]) -> Result<String, PemError> {
    if label.is_empty() || !label.is_ascii() || label.contains('-') {
        return Err(PemError::BadArmor(format!("invalid label {label:?}")));
    }
    let body = STANDARD.encode(der);
    let mut out = String::with_capacity(body.len() + body.len() / LINE_WIDTH + 2 * label.len() + 40);
    out.push_str("-----BEGIN ");
    out.push_str(label);
    out.push_str("-----\n");
    for chunk in body.as_bytes().chunks(LINE_WIDTH) {
        // base64 output is ASCII
        out.push_str(std::str::from_utf8(chunk).expect("ascii"));
        out.push('\n');
    }
    out.push_str("-----END ");
    out.push_str(label);
    out.push_str("-----\n");
    Ok(out)
}

/// Decode the first armored block in `text`. Whitespace inside the body is ignored.
pub fn pem_decode(text: &str) -> Result<(String, Vec<u8>), PemError> {
    let bad = |m: &str| PemError::BadArmor(m.to_string());
    let mut lines = text.lines().map(str::trim).skip_while(|l| l.is_empty());
    let begin = lines.next().ok_or_else(|| bad("empty input"))?;
    let label = begin
        .strip_prefix("-----BEGIN ")
        .and_then(|l| l.strip_suffix("-----"))
        .ok_or_else(|| bad("missing BEGIN line"))?;
    if label.is_empty() || label.contains('-') {
        return Err(bad("invalid label"));
    }
    let mut body = String::new();
    let mut ended = false;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("-----END ") {
            if rest.strip_suffix("-----") != Some(label) {
                return Err(bad("END label does not match BEGIN"));
            }
            ended = true;
            break;
        }
        body.push_str(line);
    }
    if !ended {
        return Err(bad("missing END line"));
    }
    let der = STANDARD
        .decode(body.as_bytes())
        .map_err(|e| PemError::BadArmor(format!("invalid base64: {e}")))?;
    Ok((label.to_string(), der))
}
