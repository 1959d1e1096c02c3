//! Tag-length-body frame codec.
//!
//! Every frame is `tag (u8) ‖ length (u16, big-endian) ‖ body`. Body fields
//! are written in declaration order, big-endian, without padding. Variable
//! length byte strings carry their own u16 length prefix; fixed-width
//! fields do not. The full per-message layout table lives in `docs/wire.md`.

use rand::RngCore;
use thiserror::Error;

use crate::types::{
    Certificate, Command, EntityId, Nonce, PublicKeyBytes, SignatureBytes, CMD_LEN, ID_LEN, PUBKEY_LEN, SIG_LEN,
};

pub const HEADER_LEN: usize = 3;
pub const MAC_LEN: usize = 16;
pub const EPH_LEN: usize = 32;
pub const HASH_LEN: usize = 32;
/// Plaintext of a main-phase command: CMD ‖ N_R ‖ N_I.
pub const COMMAND_PT_LEN: usize = CMD_LEN + 8;
/// Plaintext of a basic answer: ANS ‖ N_I ‖ N_R.
pub const ANSWER_PT_LEN: usize = 8 + 8;
pub const AEAD_OVERHEAD: usize = crate::crypto::AEAD_OVERHEAD;
pub const SEALED_COMMAND_LEN: usize = AEAD_OVERHEAD + COMMAND_PT_LEN;
pub const SEALED_ANSWER_LEN: usize = AEAD_OVERHEAD + ANSWER_PT_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("{extra} trailing bytes after body")]
    TrailingBytes { extra: usize },
    #[error("declared length {declared} but {actual} body bytes present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("field {field} value {value} exceeds its width")]
    FieldWidth { field: &'static str, value: u64 },
    #[error("invalid value in field {field}")]
    InvalidValue { field: &'static str },
}

pub type MacTag = [u8; MAC_LEN];

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder::default()
    }

    pub fn put(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn put_u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn put_u32(&mut self, v: u32) -> &mut Self {
        self.put(&v.to_be_bytes())
    }

    pub fn put_u64(&mut self, v: u64) -> &mut Self {
        self.put(&v.to_be_bytes())
    }

    pub fn put_var(&mut self, bytes: &[u8], field: &'static str) -> Result<&mut Self, WireError> {
        let len = u16::try_from(bytes.len()).map_err(|_| WireError::FieldWidth { field, value: bytes.len() as u64 })?;
        self.put(&len.to_be_bytes());
        Ok(self.put(bytes))
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(WireError::Truncated { needed: n, available });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn var(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            extra => Err(WireError::TrailingBytes { extra }),
        }
    }
}

/// A body field with a fixed on-wire representation.
pub trait WireField: Sized {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError>;
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError>;
    fn random(rng: &mut dyn RngCore) -> Self;
}

impl WireField for u8 {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put_u8(*self);
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        dec.u8()
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        rng.next_u32() as u8
    }
}

impl WireField for u64 {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put_u64(*self);
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        dec.u64()
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        rng.next_u64()
    }
}

impl<const N: usize> WireField for [u8; N] {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put(self);
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        dec.array()
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        let mut out = [0u8; N];
        rng.fill_bytes(&mut out);
        out
    }
}

impl WireField for Vec<u8> {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put_var(self, "bytes").map(|_| ())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Ok(dec.var()?.to_vec())
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        let mut out = vec![0u8; (rng.next_u32() % 96) as usize];
        rng.fill_bytes(&mut out);
        out
    }
}

impl WireField for EntityId {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put(self.as_bytes());
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Ok(EntityId::from_bytes(dec.array::<ID_LEN>()?))
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        EntityId::from_bytes(<[u8; ID_LEN]>::random(rng))
    }
}

impl WireField for Nonce {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put_u32(self.0);
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Ok(Nonce(dec.u32()?))
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        Nonce(rng.next_u32())
    }
}

impl WireField for SignatureBytes {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put(&self.0);
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Ok(SignatureBytes(dec.array::<SIG_LEN>()?))
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        SignatureBytes(<[u8; SIG_LEN]>::random(rng))
    }
}

impl WireField for Command {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put(&self.encode()?);
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Command::decode(dec.array::<CMD_LEN>()?)
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        let kind = crate::types::CommandKind::ALL[(rng.next_u32() % 6) as usize];
        Command::new(kind, rng.next_u32() & crate::types::COMMAND_ARG_MAX)
    }
}

impl WireField for Certificate {
    fn put(&self, enc: &mut Encoder) -> Result<(), WireError> {
        enc.put(&self.to_bytes());
        Ok(())
    }
    fn get(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Certificate::from_bytes(dec.take(Certificate::ENCODED_LEN)?)
    }
    fn random(rng: &mut dyn RngCore) -> Self {
        let p = rng.next_u32() % 4;
        Certificate {
            subject: EntityId::random(rng),
            privilege: crate::types::Privilege::from_u8(p as u8),
            public_key: PublicKeyBytes(<[u8; PUBKEY_LEN]>::random(rng)),
            not_after: rng.next_u64(),
            signature: SignatureBytes::random(rng),
        }
    }
}

/// Transport medium a frame travels over.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Channel {
    Rf,
    Oob,
    Internet,
    /// Reader-to-inserted-card slot.
    Contact,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Rf => "rf",
            Channel::Oob => "oob",
            Channel::Internet => "internet",
            Channel::Contact => "contact",
        }
    }
}

macro_rules! messages {
    ($( $(#[$meta:meta])* $name:ident = $tag:literal, $chan:ident { $($field:ident : $ty:ty),* $(,)? } ),* $(,)?) => {
        /// Typed protocol message.
        #[derive(Clone, PartialEq, Eq, Debug)]
        pub enum Message {
            $( $(#[$meta])* $name { $($field: $ty),* } ),*
        }

        /// Every defined tag with its message name and usual channel.
        pub const MESSAGE_TAGS: &[(u8, &str, Channel)] = &[ $( ($tag, stringify!($name), Channel::$chan) ),* ];

        impl Message {
            pub fn tag(&self) -> u8 {
                match self { $( Message::$name { .. } => $tag ),* }
            }

            pub fn name(&self) -> &'static str {
                match self { $( Message::$name { .. } => stringify!($name) ),* }
            }

            fn encode_body(&self, enc: &mut Encoder) -> Result<(), WireError> {
                match self {
                    $( #[allow(unused_variables)] Message::$name { $($field),* } => {
                        $( WireField::put($field, enc)?; )*
                        Ok(())
                    } ),*
                }
            }

            fn decode_body(tag: u8, dec: &mut Decoder<'_>) -> Result<Message, WireError> {
                match tag {
                    $( $tag => Ok(Message::$name { $($field: <$ty as WireField>::get(dec)?),* }), )*
                    other => Err(WireError::UnknownTag(other)),
                }
            }

            /// Random well-typed message for the given tag.
            pub fn random_with_tag(tag: u8, rng: &mut dyn RngCore) -> Option<Message> {
                match tag {
                    $( #[allow(unused_variables)] $tag => Some(Message::$name { $($field: <$ty as WireField>::random(rng)),* }), )*
                    _ => None,
                }
            }
        }
    };
}

messages! {
    ServerHello = 0x01, Internet { reader_id: EntityId, nonce: Nonce },
    PuzzleChallenge = 0x02, Internet { hx: [u8; HASH_LEN], partial_x: [u8; HASH_LEN], t: u64, k: u8 },
    PuzzleSolution = 0x03, Internet { reader_id: EntityId, t: u64, solution: Vec<u8> },
    ServerNonce = 0x04, Internet { server_id: EntityId, nonce: Nonce },
    DhInit = 0x05, Internet { cert: Certificate, eph: [u8; EPH_LEN], sig: SignatureBytes },
    DhReply = 0x06, Internet { cert: Certificate, eph: [u8; EPH_LEN], sig: SignatureBytes },
    TokenRequest = 0x07, Internet { reader_id: EntityId, card_id: EntityId, card_nonce: Nonce, m_sc1: Vec<u8>, mac: MacTag },
    TokenGrant = 0x08, Internet { token_r: Vec<u8>, token_c: Vec<u8> },
    SessionKeyRequest = 0x09, Internet {
        reader_id: EntityId, implant_id: EntityId, card_id: EntityId,
        reader_nonce: Nonce, implant_nonce: Nonce, card_nonce: Nonce, server_nonce: Nonce,
        m_sc2: Vec<u8>, mac: MacTag,
    },
    BedsideKeyRequest = 0x0A, Internet { reader_id: EntityId, implant_id: EntityId, reader_nonce: Nonce, implant_nonce: Nonce, mac: MacTag },
    SessionKeyGrant = 0x0B, Internet { m_r: Vec<u8>, m_i: Vec<u8> },
    BedsideReady = 0x0C, Internet { implant_id: EntityId, mac: MacTag },
    BedsideCommand = 0x0D, Internet { ct: Vec<u8>, server_mac: MacTag },
    BedsideReport = 0x0E, Internet { ct: Vec<u8> },
    BedsideDone = 0x0F, Internet { implant_id: EntityId, mac: MacTag },
    SessionReject = 0x10, Internet { reason: u8 },

    CardChallenge = 0x20, Contact { reader_id: EntityId, reader_nonce: Nonce, server_nonce: Nonce },
    CardResponse = 0x21, Contact { card_id: EntityId, card_nonce: Nonce, m_sc1: Vec<u8> },
    CardKeyConfirm = 0x22, Contact { mac: MacTag, token_c: Vec<u8> },
    CardKeyAck = 0x23, Contact { mac: MacTag },
    PinVerify = 0x24, Contact { ct: Vec<u8> },
    PinResult = 0x25, Contact { m_sc2: Vec<u8> },
    CardError = 0x26, Contact { reason: u8 },
    CardCommand = 0x27, Contact { ct: Vec<u8> },
    CardSignature = 0x28, Contact { ct: Vec<u8> },

    ImplantHello = 0x40, Rf { reader_id: EntityId, reader_nonce: Nonce },
    ImplantNonce = 0x41, Rf { implant_id: EntityId, implant_nonce: Nonce },
    ImplantKeyDelivery = 0x42, Rf { m_i: Vec<u8>, m_ri: Vec<u8> },
    ImplantKeyConfirm = 0x43, Rf { mac: MacTag },
    /// The signature is bound to the ciphertext as associated data.
    ImplantCommandSigned = 0x44, Rf { ct: [u8; SEALED_COMMAND_LEN], sig: SignatureBytes },
    /// The server MAC is bound to the ciphertext as associated data.
    ImplantCommandServerMac = 0x45, Rf { ct: [u8; SEALED_COMMAND_LEN], server_mac: MacTag },
    ImplantCommandUnsigned = 0x46, Rf { ct: [u8; SEALED_COMMAND_LEN] },
    ImplantAnswer = 0x47, Rf { ct: [u8; SEALED_ANSWER_LEN] },
    ImplantAnswerChunk = 0x48, Rf { ct: Vec<u8> },
    /// Unprotected command frame, sized for the no-security baseline.
    PlainCommand = 0x4A, Rf { cmd: Command },
    PlainAnswer = 0x4B, Rf { ans: [u8; 8] },

    OfflineRequest = 0x60, Oob { reader_id: EntityId },
    OfflineKey = 0x61, Oob { key: [u8; 16], implant_nonce: Nonce, implant_id: EntityId },
    OfflineConfirm = 0x62, Rf { reader_id: EntityId, card_id: EntityId, card_nonce: Nonce, reader_nonce: Nonce, mac: MacTag },
    OfflineConfirmAck = 0x63, Rf { mac: MacTag },

    RemoteMintRequest = 0x80, Internet { origin: EntityId, implant_id: EntityId, sealed: Vec<u8> },
    RemoteMintReply = 0x81, Internet { implant_id: EntityId, reader_nonce: Nonce, sealed: Vec<u8> },
    RemoteMintFailure = 0x82, Internet { implant_id: EntityId, reader_nonce: Nonce, reason: u8 },
}

impl Message {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode_frame(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        decode_frame(bytes)
    }

    pub fn is_known_tag(tag: u8) -> bool {
        MESSAGE_TAGS.iter().any(|(t, _, _)| *t == tag)
    }
}

/// Header-level view of a frame.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Frame<'a> {
    pub msg_type: u8,
    pub length: u16,
    pub body: &'a [u8],
}

impl<'a> Frame<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Frame<'a>, WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::Truncated { needed: HEADER_LEN, available: bytes.len() });
        }
        let msg_type = bytes[0];
        let length = u16::from_be_bytes([bytes[1], bytes[2]]);
        let body = &bytes[HEADER_LEN..];
        if !Message::is_known_tag(msg_type) {
            return Err(WireError::UnknownTag(msg_type));
        }
        if body.len() != length as usize {
            return Err(WireError::LengthMismatch { declared: length as usize, actual: body.len() });
        }
        Ok(Frame { msg_type, length, body })
    }
}

pub fn encode_frame(message: &Message) -> Result<Vec<u8>, WireError> {
    let mut body = Encoder::new();
    message.encode_body(&mut body)?;
    let body = body.finish();
    let len = u16::try_from(body.len())
        .map_err(|_| WireError::FieldWidth { field: "frame.length", value: body.len() as u64 })?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.push(message.tag());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Message, WireError> {
    let frame = Frame::parse(bytes)?;
    let mut dec = Decoder::new(frame.body);
    let msg = Message::decode_body(frame.msg_type, &mut dec)?;
    dec.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn read_status_frame_layout() {
        let m = Message::PlainCommand { cmd: Command::read_status() };
        assert_eq!(encode_frame(&m).unwrap(), vec![0x4A, 0x00, 0x04, 0, 0, 0, 0]);
    }

    #[test]
    fn empty_input_is_truncation() {
        assert!(matches!(decode_frame(&[]), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn unknown_tag_is_reported() {
        assert_eq!(decode_frame(&[0xEE, 0, 0]), Err(WireError::UnknownTag(0xEE)));
    }

    #[test]
    fn trailing_bytes_are_reported() {
        let m = Message::ImplantKeyConfirm { mac: [1; 16] };
        let mut raw = encode_frame(&m).unwrap();
        raw.push(0);
        raw[2] += 1;
        assert_eq!(decode_frame(&raw), Err(WireError::TrailingBytes { extra: 1 }));
    }

    #[test]
    fn short_body_is_truncation() {
        let m = Message::ImplantKeyConfirm { mac: [1; 16] };
        let mut raw = encode_frame(&m).unwrap();
        raw.pop();
        raw[2] -= 1;
        assert!(matches!(decode_frame(&raw), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn signed_command_body_width() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let m = Message::random_with_tag(0x44, &mut rng).unwrap();
        let raw = encode_frame(&m).unwrap();
        // AEAD overhead + CMD + two nonces + signature
        assert_eq!(raw.len() - HEADER_LEN, AEAD_OVERHEAD + 12 + 48);
    }

    #[test]
    fn every_tag_has_a_random_instance_that_roundtrips() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for (tag, _, _) in MESSAGE_TAGS {
            let m = Message::random_with_tag(*tag, &mut rng).unwrap();
            assert_eq!(m.tag(), *tag);
            assert_eq!(decode_frame(&encode_frame(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn tags_are_unique() {
        let mut tags: Vec<u8> = MESSAGE_TAGS.iter().map(|t| t.0).collect();
        tags.sort_unstable();
        tags.dedup();
        assert_eq!(tags.len(), MESSAGE_TAGS.len());
    }

    #[test]
    fn oversized_variable_field_is_an_encoding_error() {
        let m = Message::BedsideReport { ct: vec![0; 70_000] };
        assert!(matches!(encode_frame(&m), Err(WireError::FieldWidth { .. })));
    }
}
