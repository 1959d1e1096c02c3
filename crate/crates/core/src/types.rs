use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::wire::WireError;

pub const ID_LEN: usize = 12;
pub const NONCE_LEN: usize = 4;
pub const KEY_LEN: usize = 16;
pub const CMD_LEN: usize = 4;
pub const ANS_LEN: usize = 8;
pub const SIG_LEN: usize = 48;
pub const PUBKEY_LEN: usize = 25;

/// 96-bit opaque entity identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct EntityId([u8; ID_LEN]);

impl EntityId {
    pub const ZERO: EntityId = EntityId([0; ID_LEN]);

    pub const fn from_bytes(raw: [u8; ID_LEN]) -> Self {
        EntityId(raw)
    }

    /// Stable identifier derived from a human-readable label.
    pub fn from_label(label: &str) -> Self {
        let digest = Sha256::digest(label.as_bytes());
        let mut raw = [0u8; ID_LEN];
        raw.copy_from_slice(&digest[..ID_LEN]);
        EntityId(raw)
    }

    pub fn as_bytes(&self) -> &[u8; ID_LEN] {
        &self.0
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EntityId({})", hex::encode(self.0))
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// 32-bit nonce with wrapping successor.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Nonce(pub u32);

impl Nonce {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        Nonce(rng.next_u32())
    }

    pub fn succ(self) -> Self {
        Nonce(self.0.wrapping_add(1))
    }

    pub fn to_bytes(self) -> [u8; NONCE_LEN] {
        self.0.to_be_bytes()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyRole {
    ServerImplant,
    ServerCard,
    ReaderCard,
    ReaderImplant,
    ReaderServer,
    ServerLink,
}

/// 128-bit symmetric key tagged with its role.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymmetricKey {
    raw: [u8; KEY_LEN],
    role: KeyRole,
}

impl SymmetricKey {
    pub fn new(raw: [u8; KEY_LEN], role: KeyRole) -> Self {
        SymmetricKey { raw, role }
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R, role: KeyRole) -> Self {
        let mut raw = [0u8; KEY_LEN];
        rng.fill_bytes(&mut raw);
        SymmetricKey { raw, role }
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.raw
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    pub fn with_role(self, role: KeyRole) -> Self {
        SymmetricKey { raw: self.raw, role }
    }

    /// Short public digest used to correlate keys in logs without exposing them.
    pub fn fingerprint(&self) -> [u8; 8] {
        let d = Sha256::digest(self.raw);
        let mut out = [0u8; 8];
        out.copy_from_slice(&d[..8]);
        out
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({:?}, fp={})", self.role, hex::encode(self.fingerprint()))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Privilege {
    ReadOnly,
    ReadWrite,
    ReadWriteFirmware,
}

impl Privilege {
    pub fn to_u8(self) -> u8 {
        match self {
            Privilege::ReadOnly => 0,
            Privilege::ReadWrite => 1,
            Privilege::ReadWriteFirmware => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Privilege::ReadOnly),
            1 => Some(Privilege::ReadWrite),
            2 => Some(Privilege::ReadWriteFirmware),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserRole {
    Patient,
    Nurse,
    Relative,
    Physician,
    Paramedic,
    Technician,
}

impl UserRole {
    pub fn privilege(self) -> Privilege {
        match self {
            UserRole::Patient | UserRole::Nurse | UserRole::Relative => Privilege::ReadOnly,
            UserRole::Physician | UserRole::Paramedic => Privilege::ReadWrite,
            UserRole::Technician => Privilege::ReadWriteFirmware,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    ReadStatus,
    WriteTherapy,
    Suspend,
    Resume,
    FirmwareUpdate,
    Finish,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::ReadStatus,
        CommandKind::WriteTherapy,
        CommandKind::Suspend,
        CommandKind::Resume,
        CommandKind::FirmwareUpdate,
        CommandKind::Finish,
    ];

    pub fn required_privilege(self) -> Privilege {
        match self {
            CommandKind::ReadStatus | CommandKind::Finish => Privilege::ReadOnly,
            CommandKind::WriteTherapy | CommandKind::Suspend | CommandKind::Resume => Privilege::ReadWrite,
            CommandKind::FirmwareUpdate => Privilege::ReadWriteFirmware,
        }
    }

    fn code(self) -> u8 {
        match self {
            CommandKind::ReadStatus => 0,
            CommandKind::WriteTherapy => 1,
            CommandKind::Suspend => 2,
            CommandKind::Resume => 3,
            CommandKind::FirmwareUpdate => 4,
            CommandKind::Finish => 5,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        CommandKind::ALL.iter().copied().find(|k| k.code() == c)
    }
}

/// Largest argument that fits beside the kind byte.
pub const COMMAND_ARG_MAX: u32 = 0x00FF_FFFF;

/// Configuration command: kind in the top byte, 24-bit argument below it.
///
/// `ReadStatus` with argument 1 requests the full data log rather than the
/// 8-byte status word.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Command {
    pub kind: CommandKind,
    pub arg: u32,
}

impl Command {
    pub const READ_LOG_ARG: u32 = 1;

    pub fn new(kind: CommandKind, arg: u32) -> Self {
        Command { kind, arg }
    }

    pub fn read_status() -> Self {
        Command::new(CommandKind::ReadStatus, 0)
    }

    pub fn read_log() -> Self {
        Command::new(CommandKind::ReadStatus, Self::READ_LOG_ARG)
    }

    pub fn finish() -> Self {
        Command::new(CommandKind::Finish, 0)
    }

    pub fn required_privilege(&self) -> Privilege {
        self.kind.required_privilege()
    }

    pub fn encode(&self) -> Result<[u8; CMD_LEN], WireError> {
        if self.arg > COMMAND_ARG_MAX {
            return Err(WireError::FieldWidth { field: "command.arg", value: self.arg as u64 });
        }
        Ok(((self.kind.code() as u32) << 24 | self.arg).to_be_bytes())
    }

    pub fn decode(raw: [u8; CMD_LEN]) -> Result<Self, WireError> {
        let v = u32::from_be_bytes(raw);
        let kind = CommandKind::from_code((v >> 24) as u8).ok_or(WireError::InvalidValue { field: "command.kind" })?;
        Ok(Command { kind, arg: v & COMMAND_ARG_MAX })
    }
}

pub type Answer = [u8; ANS_LEN];

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignatureBytes(pub [u8; SIG_LEN]);

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig({}..)", hex::encode(&self.0[..6]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKeyBytes(pub [u8; PUBKEY_LEN]);

impl fmt::Debug for PublicKeyBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pk({}..)", hex::encode(&self.0[..6]))
    }
}

/// CA-signed binding of subject, optional privilege and public key.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Certificate {
    pub subject: EntityId,
    pub privilege: Option<Privilege>,
    pub public_key: PublicKeyBytes,
    /// Virtual-clock millisecond after which the certificate is expired.
    pub not_after: u64,
    pub signature: SignatureBytes,
}

impl Certificate {
    pub const ENCODED_LEN: usize = ID_LEN + 1 + PUBKEY_LEN + 8 + SIG_LEN;
    const NO_PRIVILEGE: u8 = 0xFF;

    /// Bytes covered by the CA signature.
    pub fn tbs_bytes(subject: &EntityId, privilege: Option<Privilege>, pk: &PublicKeyBytes, not_after: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(ID_LEN + 1 + PUBKEY_LEN + 8);
        out.extend_from_slice(subject.as_bytes());
        out.push(privilege.map_or(Self::NO_PRIVILEGE, Privilege::to_u8));
        out.extend_from_slice(&pk.0);
        out.extend_from_slice(&not_after.to_be_bytes());
        out
    }

    pub fn tbs(&self) -> Vec<u8> {
        Self::tbs_bytes(&self.subject, self.privilege, &self.public_key, self.not_after)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.tbs();
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, WireError> {
        if raw.len() < Self::ENCODED_LEN {
            return Err(WireError::Truncated { needed: Self::ENCODED_LEN, available: raw.len() });
        }
        if raw.len() > Self::ENCODED_LEN {
            return Err(WireError::TrailingBytes { extra: raw.len() - Self::ENCODED_LEN });
        }
        let mut subject = [0u8; ID_LEN];
        subject.copy_from_slice(&raw[..ID_LEN]);
        let p = raw[ID_LEN];
        let privilege = if p == Self::NO_PRIVILEGE {
            None
        } else {
            Some(Privilege::from_u8(p).ok_or(WireError::InvalidValue { field: "certificate.privilege" })?)
        };
        let mut pk = [0u8; PUBKEY_LEN];
        pk.copy_from_slice(&raw[ID_LEN + 1..ID_LEN + 1 + PUBKEY_LEN]);
        let at = ID_LEN + 1 + PUBKEY_LEN;
        let not_after = u64::from_be_bytes(raw[at..at + 8].try_into().unwrap());
        let mut sig = [0u8; SIG_LEN];
        sig.copy_from_slice(&raw[at + 8..]);
        Ok(Certificate {
            subject: EntityId(subject),
            privilege,
            public_key: PublicKeyBytes(pk),
            not_after,
            signature: SignatureBytes(sig),
        })
    }
}

/// Network zone a request originates from, as observed by the server.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkZone {
    Hospital,
    External,
}

/// Operating mode of an established implant session.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    Online,
    Offline,
    Bedside,
    Remote,
}

impl SessionMode {
    pub fn to_u8(self) -> u8 {
        match self {
            SessionMode::Online => 0,
            SessionMode::Offline => 1,
            SessionMode::Bedside => 2,
            SessionMode::Remote => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SessionMode::Online),
            1 => Some(SessionMode::Offline),
            2 => Some(SessionMode::Bedside),
            3 => Some(SessionMode::Remote),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn privilege_order_is_total() {
        assert!(Privilege::ReadOnly < Privilege::ReadWrite);
        assert!(Privilege::ReadWrite < Privilege::ReadWriteFirmware);
    }

    #[test]
    fn roles_map_to_privileges() {
        assert_eq!(UserRole::Nurse.privilege(), Privilege::ReadOnly);
        assert_eq!(UserRole::Relative.privilege(), Privilege::ReadOnly);
        assert_eq!(UserRole::Paramedic.privilege(), Privilege::ReadWrite);
        assert_eq!(UserRole::Technician.privilege(), Privilege::ReadWriteFirmware);
    }

    #[test]
    fn read_status_zero_is_all_zero() {
        assert_eq!(Command::read_status().encode().unwrap(), [0, 0, 0, 0]);
    }

    #[test]
    fn command_arg_overflow_is_rejected() {
        let c = Command::new(CommandKind::WriteTherapy, COMMAND_ARG_MAX + 1);
        assert!(matches!(c.encode(), Err(WireError::FieldWidth { .. })));
    }

    #[test]
    fn nonce_successor_wraps() {
        assert_eq!(Nonce(u32::MAX).succ(), Nonce(0));
    }

    #[test]
    fn certificate_bytes_roundtrip() {
        let cert = Certificate {
            subject: EntityId::from_label("card"),
            privilege: Some(Privilege::ReadWrite),
            public_key: PublicKeyBytes([7; PUBKEY_LEN]),
            not_after: 99,
            signature: SignatureBytes([3; SIG_LEN]),
        };
        let raw = cert.to_bytes();
        assert_eq!(raw.len(), Certificate::ENCODED_LEN);
        assert_eq!(Certificate::from_bytes(&raw).unwrap(), cert);
    }
}
