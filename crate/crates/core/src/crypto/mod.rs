//! Cryptographic primitives consumed by the protocol entities.
//!
//! AES-128 encrypt-then-MAC with a synthetic IV, AES-CMAC, SHA-256, ECDSA
//! over P-192 and X25519. All randomness is supplied by the caller so a
//! seeded simulation stays reproducible.

pub mod toy_dh;

use aes::Aes128;
use cmac::{Cmac, Mac};
use ctr::cipher::{KeyIvInit, StreamCipher};
use ecdsa::hazmat::{bits2field, sign_prehashed, verify_prehashed};
use p192::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use p192::elliptic_curve::{NonZeroScalar, PrimeField};
use p192::{AffinePoint, EncodedPoint, NistP192, ProjectivePoint, Scalar};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{
    Certificate, EntityId, KeyRole, Privilege, PublicKeyBytes, SignatureBytes, SymmetricKey, KEY_LEN, PUBKEY_LEN,
    SIG_LEN,
};

type Aes128Ctr = ctr::Ctr128BE<Aes128>;

pub const IV_LEN: usize = 16;
pub const TAG_LEN: usize = 16;
pub const AEAD_OVERHEAD: usize = IV_LEN + TAG_LEN;
pub const BLOCK_LEN: usize = 16;
pub const DIGEST_LEN: usize = 32;

const LABEL_ENC: &[u8] = b"imdsec/aead/enc";
const LABEL_AUTH: &[u8] = b"imdsec/aead/mac";
const LABEL_IV: &[u8] = b"imdsec/aead/siv";
const LABEL_TAG: &[u8] = b"imdsec/mac";

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("peer value is not a valid group element")]
    InvalidGroupElement,
    #[error("malformed public key")]
    MalformedKey,
}

/// How the primitives are realised on the implant. Functionally identical;
/// selects the energy and delay cost row only.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImplementationClass {
    HardwareAccelerated,
    SoftwareAes,
    SoftwareSpeck,
    SoftwareMisty1,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CryptoProvider {
    pub class: ImplementationClass,
}

impl Default for CryptoProvider {
    fn default() -> Self {
        CryptoProvider { class: ImplementationClass::HardwareAccelerated }
    }
}

impl CryptoProvider {
    pub fn new(class: ImplementationClass) -> Self {
        CryptoProvider { class }
    }

    pub fn aead_encrypt(&self, key: &SymmetricKey, plaintext: &[u8], ad: &[u8]) -> Vec<u8> {
        aead_encrypt(key, plaintext, ad)
    }

    pub fn aead_decrypt(&self, key: &SymmetricKey, sealed: &[u8], ad: &[u8]) -> Result<Vec<u8>, CryptoError> {
        aead_decrypt(key, sealed, ad)
    }

    pub fn mac(&self, key: &SymmetricKey, message: &[u8]) -> [u8; TAG_LEN] {
        mac(key, message)
    }

    pub fn verify_mac(&self, key: &SymmetricKey, message: &[u8], tag: &[u8; TAG_LEN]) -> bool {
        verify_mac(key, message, tag)
    }

    pub fn hash(&self, data: &[u8]) -> [u8; DIGEST_LEN] {
        hash(data)
    }

    pub fn sign(&self, kp: &KeyPair, message: &[u8]) -> SignatureBytes {
        kp.sign(message)
    }

    pub fn verify_sig(&self, pk: &PublicKeyBytes, message: &[u8], sig: &SignatureBytes) -> bool {
        verify_sig(pk, message, sig)
    }
}

fn cmac(key: &[u8; KEY_LEN], parts: &[&[u8]]) -> [u8; BLOCK_LEN] {
    let mut m = <Cmac<Aes128> as Mac>::new_from_slice(key).expect("16-byte key");
    for p in parts {
        m.update(p);
    }
    m.finalize().into_bytes().into()
}

/// Encryption, authentication and IV subkeys derived from one key.
pub struct Subkeys {
    pub enc: [u8; KEY_LEN],
    pub auth: [u8; KEY_LEN],
    pub iv: [u8; KEY_LEN],
}

pub fn derive_subkeys(key: &SymmetricKey) -> Subkeys {
    let k = key.as_bytes();
    Subkeys { enc: cmac(k, &[LABEL_ENC]), auth: cmac(k, &[LABEL_AUTH]), iv: cmac(k, &[LABEL_IV]) }
}

fn ad_len_prefix(ad: &[u8]) -> [u8; 2] {
    (ad.len() as u16).to_be_bytes()
}

/// Deterministic authenticated encryption: `IV ‖ CTR(pt) ‖ CMAC(ad ‖ IV ‖ ct)`.
pub fn aead_encrypt(key: &SymmetricKey, plaintext: &[u8], ad: &[u8]) -> Vec<u8> {
    assert!(ad.len() <= u16::MAX as usize, "associated data too long");
    let sk = derive_subkeys(key);
    let lp = ad_len_prefix(ad);
    let iv = cmac(&sk.iv, &[&lp, ad, plaintext]);
    let mut out = Vec::with_capacity(AEAD_OVERHEAD + plaintext.len());
    out.extend_from_slice(&iv);
    out.extend_from_slice(plaintext);
    Aes128Ctr::new(&sk.enc.into(), &iv.into()).apply_keystream(&mut out[IV_LEN..]);
    let tag = cmac(&sk.auth, &[&lp, ad, &out]);
    out.extend_from_slice(&tag);
    out
}

pub fn aead_decrypt(key: &SymmetricKey, sealed: &[u8], ad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() < AEAD_OVERHEAD || ad.len() > u16::MAX as usize {
        return Err(CryptoError::AuthenticationFailed);
    }
    let sk = derive_subkeys(key);
    let lp = ad_len_prefix(ad);
    let (body, tag) = sealed.split_at(sealed.len() - TAG_LEN);
    if cmac(&sk.auth, &[&lp, ad, body]) != tag {
        return Err(CryptoError::AuthenticationFailed);
    }
    let iv: [u8; IV_LEN] = body[..IV_LEN].try_into().expect("length checked");
    let mut pt = body[IV_LEN..].to_vec();
    Aes128Ctr::new(&sk.enc.into(), &iv.into()).apply_keystream(&mut pt);
    if cmac(&sk.iv, &[&lp, ad, &pt]) != iv {
        return Err(CryptoError::AuthenticationFailed);
    }
    Ok(pt)
}

pub fn mac(key: &SymmetricKey, message: &[u8]) -> [u8; TAG_LEN] {
    let tk = cmac(key.as_bytes(), &[LABEL_TAG]);
    cmac(&tk, &[message])
}

pub fn verify_mac(key: &SymmetricKey, message: &[u8], tag: &[u8; TAG_LEN]) -> bool {
    &mac(key, message) == tag
}

pub fn hash(data: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(data).into()
}

/// AES block operations spent computing a CMAC over `len` bytes.
pub fn cmac_blocks(len: usize) -> u64 {
    len.div_ceil(BLOCK_LEN).max(1) as u64
}

/// AES block operations spent sealing or opening one AEAD message.
pub fn aead_blocks(pt_len: usize, ad_len: usize) -> u64 {
    cmac_blocks(2 + ad_len + pt_len) + pt_len.div_ceil(BLOCK_LEN) as u64 + cmac_blocks(2 + ad_len + IV_LEN + pt_len)
}

/// ECDSA P-192 key pair.
#[derive(Clone)]
pub struct KeyPair {
    secret: NonZeroScalar<NistP192>,
    public: PublicKeyBytes,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyPair({:?})", self.public)
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let secret = NonZeroScalar::<NistP192>::random(&mut ChaCha20Rng::from_seed(seed));
        let point = (ProjectivePoint::GENERATOR * *secret).to_affine();
        let enc = point.to_encoded_point(true);
        let mut public = [0u8; PUBKEY_LEN];
        public.copy_from_slice(enc.as_bytes());
        KeyPair { secret, public: PublicKeyBytes(public) }
    }

    pub fn public(&self) -> PublicKeyBytes {
        self.public
    }

    /// Deterministic signature; the per-message nonce is derived from the
    /// secret scalar and the message digest.
    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        let z = bits2field::<NistP192>(&hash(message)).expect("digest wider than half the field");
        let mut h = Sha256::new();
        h.update(b"imdsec/ecdsa/k");
        h.update(self.secret.to_repr());
        h.update(z);
        let mut krng = ChaCha20Rng::from_seed(h.finalize().into());
        loop {
            let k = *NonZeroScalar::<NistP192>::random(&mut krng);
            if let Ok((sig, _)) = sign_prehashed::<NistP192, Scalar>(&self.secret, k, &z) {
                let mut out = [0u8; SIG_LEN];
                out.copy_from_slice(&sig.to_bytes());
                return SignatureBytes(out);
            }
        }
    }
}

fn decode_point(pk: &PublicKeyBytes) -> Option<ProjectivePoint> {
    let ep = EncodedPoint::from_bytes(pk.0).ok()?;
    Option::<AffinePoint>::from(AffinePoint::from_encoded_point(&ep)).map(ProjectivePoint::from)
}

pub fn verify_sig(pk: &PublicKeyBytes, message: &[u8], sig: &SignatureBytes) -> bool {
    let Some(q) = decode_point(pk) else { return false };
    let Ok(sig) = ecdsa::Signature::<NistP192>::from_slice(&sig.0) else { return false };
    let Ok(z) = bits2field::<NistP192>(&hash(message)) else { return false };
    verify_prehashed::<NistP192>(&q, &z, &sig).is_ok()
}

/// Certificate authority able to issue and check certificates.
#[derive(Clone, Debug)]
pub struct CertificateAuthority {
    keys: KeyPair,
}

impl CertificateAuthority {
    pub fn new<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        CertificateAuthority { keys: KeyPair::generate(rng) }
    }

    pub fn public(&self) -> PublicKeyBytes {
        self.keys.public()
    }

    pub fn issue(
        &self,
        subject: EntityId,
        privilege: Option<Privilege>,
        pk: PublicKeyBytes,
        not_after: u64,
    ) -> Certificate {
        let tbs = Certificate::tbs_bytes(&subject, privilege, &pk, not_after);
        Certificate { subject, privilege, public_key: pk, not_after, signature: self.keys.sign(&tbs) }
    }
}

pub fn verify_certificate(ca: &PublicKeyBytes, cert: &Certificate) -> bool {
    verify_sig(ca, &cert.tbs(), &cert.signature)
}

/// Ephemeral X25519 secret for one handshake.
pub struct DhSecret(x25519_dalek::StaticSecret);

impl DhSecret {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> (DhSecret, [u8; 32]) {
        let mut raw = [0u8; 32];
        rng.fill_bytes(&mut raw);
        let s = x25519_dalek::StaticSecret::from(raw);
        let p = x25519_dalek::PublicKey::from(&s);
        (DhSecret(s), p.to_bytes())
    }
}

/// Derives K'_RS from an ephemeral exchange. `transcript` binds both public
/// values so each side derives the same key only for the same handshake.
pub fn dh_exchange(own: &DhSecret, peer: &[u8; 32], transcript: &[u8]) -> Result<SymmetricKey, CryptoError> {
    let shared = own.0.diffie_hellman(&x25519_dalek::PublicKey::from(*peer));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidGroupElement);
    }
    let mut h = Sha256::new();
    h.update(b"imdsec/dh/k-rs");
    h.update(shared.as_bytes());
    h.update(transcript);
    let d = h.finalize();
    let mut raw = [0u8; KEY_LEN];
    raw.copy_from_slice(&d[..KEY_LEN]);
    Ok(SymmetricKey::new(raw, KeyRole::ReaderServer))
}
