//! Object identifiers used by CRLs, OCSP and the CA certificate.

use crate::der::ObjectIdentifier;

macro_rules! oids {
    ($($(#[$m:meta])* $name:ident = [$($arc:expr),+];)+) => {
        $(
            $(#[$m])*
            pub fn $name() -> ObjectIdentifier {
                ObjectIdentifier::new(&[$($arc),+]).expect("well-formed constant")
            }
        )+
    };
}

oids! {
    rsa_encryption = [1, 2, 840, 113549, 1, 1, 1];
    sha256_with_rsa_encryption = [1, 2, 840, 113549, 1, 1, 11];
    sha1 = [1, 3, 14, 3, 2, 26];
    sha256 = [2, 16, 840, 1, 101, 3, 4, 2, 1];

    country_name = [2, 5, 4, 6];
    state_or_province_name = [2, 5, 4, 8];
    locality_name = [2, 5, 4, 7];
    organization_name = [2, 5, 4, 10];
    organizational_unit_name = [2, 5, 4, 11];
    common_name = [2, 5, 4, 3];

    /// X509v3 CRL Reason Code
    crl_reason = [2, 5, 29, 21];
    basic_constraints = [2, 5, 29, 19];
    key_usage = [2, 5, 29, 15];
    subject_key_identifier = [2, 5, 29, 14];

    ocsp_basic = [1, 3, 6, 1, 5, 5, 7, 48, 1, 1];
    ocsp_nonce = [1, 3, 6, 1, 5, 5, 7, 48, 1, 2];
}

/// Short display name, falling back to dotted form.
pub fn name(oid: &ObjectIdentifier) -> String {
    let known = [
        (sha256_with_rsa_encryption(), "sha256WithRSAEncryption"),
        (rsa_encryption(), "rsaEncryption"),
        (sha1(), "sha1"),
        (sha256(), "sha256"),
        (crl_reason(), "X509v3 CRL Reason Code"),
    ];
    known
        .iter()
        .find(|(o, _)| o == oid)
        .map(|(_, n)| n.to_string())
        .unwrap_or_else(|| oid.to_string())
}
