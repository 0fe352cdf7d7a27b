//! Signature provider contract and the shipped sha256WithRSAEncryption
//! (PKCS#1 v1.5) implementation. Key handling and verification use the `rsa`
//! crate; signing goes through `ring` when it accepts the key.

use std::fmt;

use rsa::pkcs1::EncodeRsaPublicKey;
use rsa::pkcs1v15::{Signature, SigningKey, VerifyingKey};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::signature::{RandomizedSigner, SignatureEncoding, Verifier};
use rsa::{RsaPrivateKey, RsaPublicKey};
use sha1::{Digest, Sha1};
use sha2::Sha256;
use thiserror::Error;

use crate::der::ObjectIdentifier;
use crate::oid;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("key decode failed: {0}")]
    Decode(String),
    #[error("key encode failed: {0}")]
    Encode(String),
    #[error("key generation failed: {0}")]
    Generate(String),
}

#[derive(Debug, Error)]
#[error("signing failed: {0}")]
pub struct SigningError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsupported signature algorithm {0}")]
pub struct UnsupportedAlgorithm(pub ObjectIdentifier);

/// Anything able to sign a to-be-signed structure for a CRL or OCSP response.
pub trait SignatureProvider: Send + Sync {
    fn algorithm(&self) -> ObjectIdentifier;
    fn sign(&self, tbs: &[u8]) -> Result<Vec<u8>, SigningError>;
    fn public_key(&self) -> &PublicKey;
}

/// An issuer's RSA public key plus the encodings OCSP and X.509 need.
#[derive(Clone)]
pub struct PublicKey {
    key: RsaPublicKey,
    pkcs1: Vec<u8>,
    spki: Vec<u8>,
}

impl PublicKey {
    pub fn from_rsa(key: RsaPublicKey) -> Result<Self, KeyError> {
        let pkcs1 = key
            .to_pkcs1_der()
            .map_err(|e| KeyError::Encode(e.to_string()))?
            .as_bytes()
            .to_vec();
        let spki = key
            .to_public_key_der()
            .map_err(|e| KeyError::Encode(e.to_string()))?
            .as_bytes()
            .to_vec();
        Ok(Self { key, pkcs1, spki })
    }

    pub fn from_spki_pem(pem: &str) -> Result<Self, KeyError> {
        let key = RsaPublicKey::from_public_key_pem(pem).map_err(|e| KeyError::Decode(e.to_string()))?;
        Self::from_rsa(key)
    }

    pub fn from_spki_der(der: &[u8]) -> Result<Self, KeyError> {
        let key = RsaPublicKey::from_public_key_der(der).map_err(|e| KeyError::Decode(e.to_string()))?;
        Self::from_rsa(key)
    }

    pub fn to_spki_pem(&self) -> Result<String, KeyError> {
        self.key
            .to_public_key_pem(LineEnding::LF)
            .map_err(|e| KeyError::Encode(e.to_string()))
    }

    /// DER SubjectPublicKeyInfo.
    pub fn spki_der(&self) -> &[u8] {
        &self.spki
    }

    /// The subjectPublicKey BIT STRING contents (PKCS#1 RSAPublicKey).
    pub fn subject_public_key(&self) -> &[u8] {
        &self.pkcs1
    }

    /// SHA-1 over the subjectPublicKey bits, as used by OCSP ResponderID byKey.
    pub fn sha1_key_hash(&self) -> [u8; 20] {
        Sha1::digest(&self.pkcs1).into()
    }

    pub fn rsa(&self) -> &RsaPublicKey {
        &self.key
    }

    /// Verify `sig` over `tbs` under the declared algorithm.
    pub fn verify(&self, algorithm: &ObjectIdentifier, tbs: &[u8], sig: &[u8]) -> Result<bool, UnsupportedAlgorithm> {
        if *algorithm != oid::sha256_with_rsa_encryption() {
            return Err(UnsupportedAlgorithm(algorithm.clone()));
        }
        let Ok(signature) = Signature::try_from(sig) else {
            return Ok(false);
        };
        let verifier = VerifyingKey::<Sha256>::new(self.key.clone());
        Ok(verifier.verify(tbs, &signature).is_ok())
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.spki == other.spki
    }
}

impl Eq for PublicKey {}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey(sha1:{})", hex(&self.sha1_key_hash()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect()
}

enum Backend {
    Ring(ring::rsa::KeyPair),
    /// Keys outside ring's accepted sizes.
    Portable(SigningKey<Sha256>),
}

/// sha256WithRSAEncryption signer. Signing uses blinding and is safe to share across threads.
pub struct RsaSha256Signer {
    private: RsaPrivateKey,
    backend: Backend,
    public: PublicKey,
}

impl RsaSha256Signer {
    pub const DEFAULT_BITS: usize = 2048;

    pub fn new(private: RsaPrivateKey) -> Result<Self, KeyError> {
        let public = PublicKey::from_rsa(private.to_public_key())?;
        let der = private.to_pkcs8_der().map_err(|e| KeyError::Encode(e.to_string()))?;
        let backend = match ring::rsa::KeyPair::from_pkcs8(der.as_bytes()) {
            Ok(pair) => Backend::Ring(pair),
            Err(_) => Backend::Portable(SigningKey::<Sha256>::new(private.clone())),
        };
        Ok(Self { private, backend, public })
    }

    pub fn generate(bits: usize) -> Result<Self, KeyError> {
        let key = RsaPrivateKey::new(&mut rand::thread_rng(), bits).map_err(|e| KeyError::Generate(e.to_string()))?;
        Self::new(key)
    }

    pub fn from_pkcs8_pem(pem: &str) -> Result<Self, KeyError> {
        let key = RsaPrivateKey::from_pkcs8_pem(pem).map_err(|e| KeyError::Decode(e.to_string()))?;
        Self::new(key)
    }

    pub fn to_pkcs8_pem(&self) -> Result<String, KeyError> {
        self.private
            .to_pkcs8_pem(LineEnding::LF)
            .map(|z| z.to_string())
            .map_err(|e| KeyError::Encode(e.to_string()))
    }
}

impl SignatureProvider for RsaSha256Signer {
    fn algorithm(&self) -> ObjectIdentifier {
        oid::sha256_with_rsa_encryption()
    }

    fn sign(&self, tbs: &[u8]) -> Result<Vec<u8>, SigningError> {
        match &self.backend {
            Backend::Ring(pair) => {
                let mut sig = vec![0u8; pair.public().modulus_len()];
                pair.sign(&ring::signature::RSA_PKCS1_SHA256, &ring::rand::SystemRandom::new(), tbs, &mut sig)
                    .map_err(|_| SigningError("RSA signing failed".into()))?;
                Ok(sig)
            }
            Backend::Portable(key) => {
                let sig = key
                    .try_sign_with_rng(&mut rand::thread_rng(), tbs)
                    .map_err(|e| SigningError(e.to_string()))?;
                Ok(sig.to_vec())
            }
        }
    }

    fn public_key(&self) -> &PublicKey {
        &self.public
    }
}

impl fmt::Debug for RsaSha256Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RsaSha256Signer").field("public", &self.public).finish()
    }
}
