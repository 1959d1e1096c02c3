//! Non-repudiation records kept in implant flash.

use crate::crypto::verify_sig;
use crate::types::{Command, EntityId, Nonce, PublicKeyBytes, SignatureBytes, CMD_LEN, ID_LEN, SIG_LEN};
use crate::wire::WireError;

/// sig 48 ‖ cmd 4 ‖ card id 12 ‖ card nonce 4 ‖ reader nonce 4
pub const RECORD_LEN: usize = SIG_LEN + CMD_LEN + ID_LEN + 4 + 4;

pub const DEFAULT_FLASH_BYTES: usize = 32 * 1024;

/// Message a card signs for a command: CMD ‖ N_R ‖ N_C.
pub fn signed_message(cmd: &Command, reader_nonce: Nonce, card_nonce: Nonce) -> Vec<u8> {
    let mut m = Vec::with_capacity(CMD_LEN + 8);
    m.extend_from_slice(&cmd.encode().expect("command within width"));
    m.extend_from_slice(&reader_nonce.to_bytes());
    m.extend_from_slice(&card_nonce.to_bytes());
    m
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SignatureRecord {
    pub sig: SignatureBytes,
    pub cmd: Command,
    pub card_id: EntityId,
    pub card_nonce: Nonce,
    pub reader_nonce: Nonce,
}

impl SignatureRecord {
    pub fn to_bytes(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[..48].copy_from_slice(&self.sig.0);
        out[48..52].copy_from_slice(&self.cmd.encode().expect("command within width"));
        out[52..64].copy_from_slice(self.card_id.as_bytes());
        out[64..68].copy_from_slice(&self.card_nonce.to_bytes());
        out[68..72].copy_from_slice(&self.reader_nonce.to_bytes());
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, WireError> {
        if raw.len() != RECORD_LEN {
            return Err(if raw.len() < RECORD_LEN {
                WireError::Truncated { needed: RECORD_LEN, available: raw.len() }
            } else {
                WireError::TrailingBytes { extra: raw.len() - RECORD_LEN }
            });
        }
        let word = |at: usize| u32::from_be_bytes(raw[at..at + 4].try_into().unwrap());
        Ok(SignatureRecord {
            sig: SignatureBytes(raw[..48].try_into().unwrap()),
            cmd: Command::decode(raw[48..52].try_into().unwrap())?,
            card_id: EntityId::from_bytes(raw[52..64].try_into().unwrap()),
            card_nonce: Nonce(word(64)),
            reader_nonce: Nonce(word(68)),
        })
    }

    pub fn verify(&self, card_pk: &PublicKeyBytes) -> bool {
        verify_sig(card_pk, &signed_message(&self.cmd, self.reader_nonce, self.card_nonce), &self.sig)
    }
}

/// Fixed-size ring of records, overwritten strictly in slot order.
#[derive(Clone, Debug)]
pub struct SignatureFlash {
    capacity_bytes: usize,
    slots: Vec<Option<SignatureRecord>>,
    next: usize,
    writes: u64,
}

impl SignatureFlash {
    pub fn new(capacity_bytes: usize) -> Self {
        SignatureFlash { capacity_bytes, slots: vec![None; capacity_bytes / RECORD_LEN], next: 0, writes: 0 }
    }

    pub fn capacity_bytes(&self) -> usize {
        self.capacity_bytes
    }

    pub fn capacity_records(&self) -> usize {
        self.slots.len()
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }

    /// Stores a record and returns its slot. With zero capacity nothing is kept.
    pub fn store(&mut self, record: SignatureRecord) -> Option<usize> {
        if self.slots.is_empty() {
            return None;
        }
        let slot = self.next;
        self.slots[slot] = Some(record);
        self.next = (slot + 1) % self.slots.len();
        self.writes += 1;
        Some(slot)
    }

    pub fn slot(&self, i: usize) -> Option<&SignatureRecord> {
        self.slots.get(i).and_then(Option::as_ref)
    }

    /// Occupied records in slot order.
    pub fn records(&self) -> impl Iterator<Item = (usize, &SignatureRecord)> {
        self.slots.iter().enumerate().filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
    }

    pub fn len(&self) -> usize {
        self.records().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dump of the occupied records in slot order.
    pub fn dump(&self) -> Vec<u8> {
        self.records().flat_map(|(_, r)| r.to_bytes()).collect()
    }
}

/// Splits a dump into records. A trailing partial record is reported as an error.
pub fn parse_dump(raw: &[u8]) -> Vec<Result<SignatureRecord, WireError>> {
    raw.chunks(RECORD_LEN).map(SignatureRecord::from_bytes).collect()
}

/// Writes the target, then counts further writes until its slot is reused.
pub fn overwrite_attempts(capacity_bytes: usize) -> Option<u64> {
    let mut flash = SignatureFlash::new(capacity_bytes);
    let rec = |n: u32| SignatureRecord {
        sig: SignatureBytes([0; 48]),
        cmd: Command::new(crate::types::CommandKind::WriteTherapy, n & crate::types::COMMAND_ARG_MAX),
        card_id: EntityId::ZERO,
        card_nonce: Nonce(n),
        reader_nonce: Nonce(n),
    };
    let target = rec(0);
    let slot = flash.store(target)?;
    let mut attempts = 0u64;
    while flash.slot(slot) == Some(&target) {
        attempts += 1;
        flash.store(rec(attempts as u32));
    }
    Some(attempts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CommandKind;

    fn sample() -> SignatureRecord {
        SignatureRecord {
            sig: SignatureBytes([9; 48]),
            cmd: Command::new(CommandKind::Suspend, 3),
            card_id: EntityId::from_label("card"),
            card_nonce: Nonce(0xA1A2A3A4),
            reader_nonce: Nonce(0xB1B2B3B4),
        }
    }

    #[test]
    fn record_layout() {
        let b = sample().to_bytes();
        assert_eq!(b.len(), 72);
        assert_eq!(&b[48..52], &[2, 0, 0, 3]);
        assert_eq!(&b[64..68], &[0xA1, 0xA2, 0xA3, 0xA4]);
        assert_eq!(&b[68..72], &[0xB1, 0xB2, 0xB3, 0xB4]);
        assert_eq!(SignatureRecord::from_bytes(&b).unwrap(), sample());
    }

    #[test]
    fn ring_starts_at_zero_and_wraps() {
        let mut f = SignatureFlash::new(DEFAULT_FLASH_BYTES);
        assert_eq!(f.capacity_records(), 455);
        assert_eq!(f.store(sample()), Some(0));
        for _ in 1..455 {
            f.store(sample());
        }
        assert_eq!(f.store(sample()), Some(0));
        assert_eq!(f.len(), 455);
    }

    #[test]
    fn partial_record_in_dump_is_reported() {
        let mut raw = sample().to_bytes().to_vec();
        raw.extend_from_slice(&[0; 10]);
        let parsed = parse_dump(&raw);
        assert_eq!(parsed.len(), 2);
        assert!(parsed[0].is_ok());
        assert!(matches!(parsed[1], Err(WireError::Truncated { .. })));
        assert!(parse_dump(&[]).is_empty());
    }
}
