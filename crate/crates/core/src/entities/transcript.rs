//! Byte strings that get signed or MACed, shared by both ends of each exchange.

use crate::types::{Command, EntityId, Nonce};
use crate::wire::{Encoder, EPH_LEN};

/// N_R ‖ N_C, used by the five-pass confirmations.
pub fn nonce_pair(reader_nonce: Nonce, card_nonce: Nonce) -> Vec<u8> {
    [reader_nonce.to_bytes(), card_nonce.to_bytes()].concat()
}

/// N_I ‖ N_R, used by the implant's key confirmation.
pub fn confirm_bytes(implant_nonce: Nonce, reader_nonce: Nonce) -> Vec<u8> {
    [implant_nonce.to_bytes(), reader_nonce.to_bytes()].concat()
}

pub fn offline_confirm_bytes(
    reader_id: &EntityId,
    card_id: &EntityId,
    card_nonce: Nonce,
    reader_nonce: Nonce,
    implant_nonce: Nonce,
) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(reader_id.as_bytes())
        .put(card_id.as_bytes())
        .put(&card_nonce.to_bytes())
        .put(&reader_nonce.to_bytes())
        .put(&implant_nonce.to_bytes());
    e.finish()
}

/// CMD ‖ N_R ‖ N_I, MACed under K_SI for bedside commands.
pub fn server_mac_bytes(cmd: &Command, reader_nonce: Nonce, implant_nonce: Nonce) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(&cmd.encode().expect("command within width")).put(&reader_nonce.to_bytes()).put(&implant_nonce.to_bytes());
    e.finish()
}

pub fn dh_init_bytes(eph_r: &[u8; EPH_LEN], server_nonce: Nonce, server: &EntityId, reader: &EntityId) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(b"imdsec/dh-init").put(eph_r).put(&server_nonce.to_bytes()).put(server.as_bytes()).put(reader.as_bytes());
    e.finish()
}

pub fn dh_reply_bytes(eph_s: &[u8; EPH_LEN], eph_r: &[u8; EPH_LEN], server_nonce: Nonce, reader: &EntityId) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(b"imdsec/dh-reply").put(eph_s).put(eph_r).put(&server_nonce.to_bytes()).put(reader.as_bytes());
    e.finish()
}

pub fn dh_transcript(
    eph_r: &[u8; EPH_LEN],
    eph_s: &[u8; EPH_LEN],
    server_nonce: Nonce,
    reader: &EntityId,
    server: &EntityId,
) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(eph_r).put(eph_s).put(&server_nonce.to_bytes()).put(reader.as_bytes()).put(server.as_bytes());
    e.finish()
}

pub fn token_request_bytes(reader: &EntityId, card: &EntityId, card_nonce: Nonce, m_sc1: &[u8]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(reader.as_bytes()).put(card.as_bytes()).put(&card_nonce.to_bytes()).put(m_sc1);
    e.finish()
}

#[allow(clippy::too_many_arguments)]
pub fn session_request_bytes(
    reader: &EntityId,
    implant: &EntityId,
    card: &EntityId,
    reader_nonce: Nonce,
    implant_nonce: Nonce,
    card_nonce: Nonce,
    server_nonce: Nonce,
    m_sc2: &[u8],
) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(reader.as_bytes())
        .put(implant.as_bytes())
        .put(card.as_bytes())
        .put(&reader_nonce.to_bytes())
        .put(&implant_nonce.to_bytes())
        .put(&card_nonce.to_bytes())
        .put(&server_nonce.to_bytes())
        .put(m_sc2);
    e.finish()
}

pub fn bedside_request_bytes(
    reader: &EntityId,
    implant: &EntityId,
    reader_nonce: Nonce,
    implant_nonce: Nonce,
) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(b"bedside")
        .put(reader.as_bytes())
        .put(implant.as_bytes())
        .put(&reader_nonce.to_bytes())
        .put(&implant_nonce.to_bytes());
    e.finish()
}

/// MAC input of BedsideReady and BedsideDone.
pub fn bedside_marker_bytes(label: &[u8], implant: &EntityId) -> Vec<u8> {
    [label, implant.as_bytes().as_slice()].concat()
}
