//! Plaintext layouts of the named cryptograms.

use rand::RngCore;

use crate::crypto::{aead_decrypt, aead_encrypt, CryptoError};
use crate::types::{Certificate, Command, EntityId, Nonce, Privilege, SessionMode, SignatureBytes, SymmetricKey};
use crate::wire::{Decoder, Encoder, Message, WireError, WireField};

impl WireField for Privilege {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put_u8(self.to_u8());
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Privilege::from_u8(dec.u8()?).ok_or(WireError::InvalidValue { field: "privilege" })
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        Privilege::from_u8((rng.next_u32() % 3) as u8).unwrap()
    }
}

impl WireField for SessionMode {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put_u8(self.to_u8());
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        SessionMode::from_u8(dec.u8()?).ok_or(WireError::InvalidValue { field: "mode" })
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        SessionMode::from_u8((rng.next_u32() % 4) as u8).unwrap()
    }
}

impl WireField for u32 {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put_u32(*self);
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        dec.u32()
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        rng.next_u32()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpenError {
    Crypto(CryptoError),
    Format(WireError),
}

impl From<CryptoError> for OpenError {
    fn from(e: CryptoError) -> Self {
        OpenError::Crypto(e)
    }
}

impl From<WireError> for OpenError {
    fn from(e: WireError) -> Self {
        OpenError::Format(e)
    }
}

pub trait Plaintext: Sized {
    const KIND: CtKind;
    fn to_bytes(&self) -> Vec<u8>;
    fn from_bytes(raw: &[u8]) -> Result<Self, WireError>;

    fn seal(&self, key: &SymmetricKey, ad: &[u8]) -> Vec<u8> {
        aead_encrypt(key, &self.to_bytes(), ad)
    }

    fn open(key: &SymmetricKey, sealed: &[u8], ad: &[u8]) -> Result<Self, OpenError> {
        let pt = aead_decrypt(key, sealed, ad)?;
        Ok(Self::from_bytes(&pt)?)
    }
}

macro_rules! plaintexts {
    ($( $(#[$meta:meta])* $name:ident : $kind:ident { $($field:ident : $ty:ty),* $(,)? } )*) => {
        $(
            $(#[$meta])*
            #[derive(Clone, PartialEq, Eq, Debug)]
            pub struct $name { $(pub $field: $ty),* }

            impl Plaintext for $name {
                const KIND: CtKind = CtKind::$kind;

                fn to_bytes(&self) -> Vec<u8> {
                    let mut enc = Encoder::new();
                    $( WireField::put(&self.$field, &mut enc).expect("plaintext field within width"); )*
                    enc.finish()
                }

                fn from_bytes(raw: &[u8]) -> Result<Self, WireError> {
                    let mut dec = Decoder::new(raw);
                    let out = $name { $($field: <$ty as WireField>::get(&mut dec)?),* };
                    dec.finish()?;
                    Ok(out)
                }
            }
        )*
    };
}

/// Which cryptogram a ciphertext on the wire is.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum CtKind {
    MSc1,
    TokenR,
    TokenC,
    PinBlock,
    MSc2,
    MR,
    MI,
    MRi,
    CardCmd,
    CardSig,
    ImplantCmd,
    Answer,
    AnswerChunk,
    BedsideCmd,
    BedsideReport,
    RemoteMint,
    RemoteReply,
}

plaintexts! {
    /// m_SC1 = {Cert_C, ID_R, N_R, N_S, N_C}_K_SC
    MSc1Plain: MSc1 { cert: Certificate, reader_id: EntityId, reader_nonce: Nonce, server_nonce: Nonce, card_nonce: Nonce }
    TokenRPlain: TokenR {
        reader_id: EntityId, card_id: EntityId, reader_nonce: Nonce, card_nonce: Nonce,
        k_rc: [u8; 16], lifetime_ms: u64, privilege: Privilege,
    }
    TokenCPlain: TokenC { reader_id: EntityId, card_id: EntityId, reader_nonce: Nonce, card_nonce: Nonce, k_rc: [u8; 16] }
    PinBlockPlain: PinBlock { pin: u32, reader_nonce: Nonce, card_nonce: Nonce }
    /// m_SC2 = {pin-ok, N_C, N_S}_K_SC
    MSc2Plain: MSc2 { pin_ok: u8, card_nonce: Nonce, server_nonce: Nonce }
    MRPlain: MR { k_ri: [u8; 16], reader_nonce: Nonce, implant_nonce: Nonce, implant_id: EntityId, privilege: Privilege }
    MIPlain: MI {
        k_ri: [u8; 16], reader_nonce: Nonce, implant_nonce: Nonce, reader_id: EntityId,
        card_id: EntityId, card_nonce: Nonce, privilege: Privilege, mode: SessionMode,
    }
    MRiPlain: MRi { reader_nonce: Nonce, implant_nonce: Nonce }
    CardCmdPlain: CardCmd { cmd: Command, reader_nonce: Nonce, card_nonce: Nonce }
    CardSigPlain: CardSig { sig: SignatureBytes }
    ImplantCmdPlain: ImplantCmd { cmd: Command, reader_nonce: Nonce, implant_nonce: Nonce }
    AnswerPlain: Answer { ans: [u8; 8], implant_nonce: Nonce, reader_nonce: Nonce }
    ChunkPlain: AnswerChunk { seq: u32, implant_nonce: Nonce, reader_nonce: Nonce, data: Vec<u8> }
    BedsideCmdPlain: BedsideCmd { implant_id: EntityId, cmd: Command, reader_nonce: Nonce, implant_nonce: Nonce }
    BedsideReportPlain: BedsideReport { implant_id: EntityId, seq: u32, data: Vec<u8> }
    /// Key material forwarded between servers so the home server can build m_I.
    RemoteMintPlain: RemoteMint {
        k_ri: [u8; 16], reader_nonce: Nonce, implant_nonce: Nonce, reader_id: EntityId,
        card_id: EntityId, card_nonce: Nonce, privilege: Privilege, mode: SessionMode,
    }
    RemoteReplyPlain: RemoteReply { m_i: Vec<u8> }
}

pub fn remote_mint_ad(origin: &EntityId, implant_id: &EntityId) -> Vec<u8> {
    [origin.as_bytes().as_slice(), implant_id.as_bytes()].concat()
}

pub fn remote_reply_ad(implant_id: &EntityId, reader_nonce: Nonce) -> Vec<u8> {
    [implant_id.as_bytes().as_slice(), &reader_nonce.to_bytes()].concat()
}

/// A ciphertext carried by a message, with the associated data needed to open it.
pub struct Carried<'a> {
    pub kind: CtKind,
    pub sealed: &'a [u8],
    pub ad: Vec<u8>,
}

impl Message {
    /// Cryptograms embedded in this message. Associated data is always
    /// recoverable from the message itself.
    pub fn cryptograms(&self) -> Vec<Carried<'_>> {
        fn c(kind: CtKind, sealed: &[u8]) -> Carried<'_> {
            Carried { kind, sealed, ad: Vec::new() }
        }
        match self {
            Message::TokenRequest { m_sc1, .. } => vec![c(CtKind::MSc1, m_sc1)],
            Message::TokenGrant { token_r, token_c } => vec![c(CtKind::TokenR, token_r), c(CtKind::TokenC, token_c)],
            Message::SessionKeyRequest { m_sc2, .. } => vec![c(CtKind::MSc2, m_sc2)],
            Message::SessionKeyGrant { m_r, m_i } => vec![c(CtKind::MR, m_r), c(CtKind::MI, m_i)],
            Message::BedsideCommand { ct, .. } => vec![c(CtKind::BedsideCmd, ct)],
            Message::BedsideReport { ct } => vec![c(CtKind::BedsideReport, ct)],
            Message::CardResponse { m_sc1, .. } => vec![c(CtKind::MSc1, m_sc1)],
            Message::CardKeyConfirm { token_c, .. } => vec![c(CtKind::TokenC, token_c)],
            Message::PinVerify { ct } => vec![c(CtKind::PinBlock, ct)],
            Message::PinResult { m_sc2 } => vec![c(CtKind::MSc2, m_sc2)],
            Message::CardCommand { ct } => vec![c(CtKind::CardCmd, ct)],
            Message::CardSignature { ct } => vec![c(CtKind::CardSig, ct)],
            Message::ImplantKeyDelivery { m_i, m_ri } => vec![c(CtKind::MI, m_i), c(CtKind::MRi, m_ri)],
            Message::ImplantCommandSigned { ct, sig } => {
                vec![Carried { kind: CtKind::ImplantCmd, sealed: ct, ad: sig.0.to_vec() }]
            }
            Message::ImplantCommandServerMac { ct, server_mac } => {
                vec![Carried { kind: CtKind::ImplantCmd, sealed: ct, ad: server_mac.to_vec() }]
            }
            Message::ImplantCommandUnsigned { ct } => vec![c(CtKind::ImplantCmd, ct)],
            Message::ImplantAnswer { ct } => vec![c(CtKind::Answer, ct)],
            Message::ImplantAnswerChunk { ct } => vec![c(CtKind::AnswerChunk, ct)],
            Message::RemoteMintRequest { origin, implant_id, sealed } => {
                vec![Carried { kind: CtKind::RemoteMint, sealed, ad: remote_mint_ad(origin, implant_id) }]
            }
            Message::RemoteMintReply { implant_id, reader_nonce, sealed } => {
                vec![Carried { kind: CtKind::RemoteReply, sealed, ad: remote_reply_ad(implant_id, *reader_nonce) }]
            }
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::KeyRole;
    use rand::SeedableRng;

    #[test]
    fn sealed_plaintexts_roundtrip() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let k = SymmetricKey::random(&mut rng, KeyRole::ServerImplant);
        let m = MIPlain {
            k_ri: [5; 16],
            reader_nonce: Nonce(1),
            implant_nonce: Nonce(2),
            reader_id: EntityId::from_label("r"),
            card_id: EntityId::from_label("c"),
            card_nonce: Nonce(3),
            privilege: Privilege::ReadWrite,
            mode: SessionMode::Online,
        };
        let ct = m.seal(&k, b"");
        assert_eq!(MIPlain::open(&k, &ct, b"").unwrap(), m);
        let other = SymmetricKey::random(&mut rng, KeyRole::ServerImplant);
        assert!(matches!(MIPlain::open(&other, &ct, b""), Err(OpenError::Crypto(_))));
    }

    #[test]
    fn command_plaintext_is_twelve_bytes() {
        let p = ImplantCmdPlain { cmd: Command::read_status(), reader_nonce: Nonce(1), implant_nonce: Nonce(2) };
        assert_eq!(p.to_bytes().len(), crate::wire::COMMAND_PT_LEN);
        let a = AnswerPlain { ans: [0; 8], implant_nonce: Nonce(1), reader_nonce: Nonce(2) };
        assert_eq!(a.to_bytes().len(), crate::wire::ANSWER_PT_LEN);
    }
}
