//! Protocol actors as event-driven state machines.
//!
//! Each actor consumes one delivered message or timer at a time through a
//! [`Ctx`], which collects the frames it sends, the timers it arms and the
//! ground-truth [`ProtocolEvent`]s it emits.

pub mod card;
pub mod flash;
pub mod implant;
pub mod manufacturer;
pub mod puzzle;
pub mod reader;
pub mod server;
pub mod transcript;

use std::fmt;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Command, EntityId, KeyRole, NetworkZone, Privilege, SessionMode, SymmetricKey};
use crate::wire::{Channel, Message};

pub use card::{Card, CardConfig};
pub use flash::{signed_message, SignatureFlash, SignatureRecord, RECORD_LEN};
pub use implant::{Implant, ImplantConfig, ImplantSession};
pub use manufacturer::Manufacturer;
pub use reader::{Hack, Reader, ReaderConfig, ReaderKind, Task};
pub use server::{Server, ServerConfig};

/// Why a step was refused. Encodable in one byte for reject frames.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum Reason {
    CertInvalid = 1,
    CertRevoked = 2,
    CardRevoked = 3,
    CardExpired = 4,
    MacFailure = 5,
    NonceMismatch = 6,
    TokenExpired = 7,
    PinMismatch = 8,
    CardLocked = 9,
    PrivilegeViolation = 10,
    SessionExpired = 11,
    NoSession = 12,
    PuzzleExpired = 13,
    PuzzleWrong = 14,
    GroupElementInvalid = 15,
    M2Invalid = 16,
    PolicyViolation = 17,
    OobUnavailable = 18,
    FlagMismatch = 19,
    UnknownImplant = 20,
    ServerLinkFailure = 21,
    Timeout = 22,
    Replay = 23,
    UserNotVerified = 24,
    Malformed = 25,
}

impl Reason {
    pub const ALL: [Reason; 25] = [
        Reason::CertInvalid,
        Reason::CertRevoked,
        Reason::CardRevoked,
        Reason::CardExpired,
        Reason::MacFailure,
        Reason::NonceMismatch,
        Reason::TokenExpired,
        Reason::PinMismatch,
        Reason::CardLocked,
        Reason::PrivilegeViolation,
        Reason::SessionExpired,
        Reason::NoSession,
        Reason::PuzzleExpired,
        Reason::PuzzleWrong,
        Reason::GroupElementInvalid,
        Reason::M2Invalid,
        Reason::PolicyViolation,
        Reason::OobUnavailable,
        Reason::FlagMismatch,
        Reason::UnknownImplant,
        Reason::ServerLinkFailure,
        Reason::Timeout,
        Reason::Replay,
        Reason::UserNotVerified,
        Reason::Malformed,
    ];

    pub fn to_u8(self) -> u8 {
        self as u8
    }

    /// Unknown codes from the wire map to `Malformed`.
    pub fn from_u8(v: u8) -> Reason {
        Reason::ALL.iter().copied().find(|r| r.to_u8() == v).unwrap_or(Reason::Malformed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Reason::CertInvalid => "cert-invalid",
            Reason::CertRevoked => "cert-revoked",
            Reason::CardRevoked => "card-revoked",
            Reason::CardExpired => "card-expired",
            Reason::MacFailure => "mac-failure",
            Reason::NonceMismatch => "nonce-mismatch",
            Reason::TokenExpired => "token-expired",
            Reason::PinMismatch => "pin-mismatch",
            Reason::CardLocked => "card-locked",
            Reason::PrivilegeViolation => "privilege-violation",
            Reason::SessionExpired => "session-expired",
            Reason::NoSession => "no-session",
            Reason::PuzzleExpired => "puzzle-expired",
            Reason::PuzzleWrong => "puzzle-wrong",
            Reason::GroupElementInvalid => "group-element-invalid",
            Reason::M2Invalid => "m2-invalid",
            Reason::PolicyViolation => "policy-violation",
            Reason::OobUnavailable => "oob-unavailable",
            Reason::FlagMismatch => "flag-mismatch",
            Reason::UnknownImplant => "unknown-implant",
            Reason::ServerLinkFailure => "server-link-failure",
            Reason::Timeout => "timeout",
            Reason::Replay => "replay",
            Reason::UserNotVerified => "user-not-verified",
            Reason::Malformed => "malformed",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One side's view of an authentication run. A `Request` by B about A must
/// be matched by a distinct `Witness` by A about B with equal nonces and key.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Agreement {
    pub label: &'static str,
    pub by: EntityId,
    pub peer: EntityId,
    pub nonces: Vec<u32>,
    pub key_fp: [u8; 8],
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ProtocolEvent {
    Witness(Agreement),
    Request(Agreement),
    TokenIssued { reader: EntityId, card: EntityId, privilege: Privilege },
    SecretMinted { key: SymmetricKey },
    KeyGranted { reader: EntityId, implant: EntityId, privilege: Privilege, mode: SessionMode },
    SessionEstablished { implant: EntityId, reader: EntityId, privilege: Privilege, mode: SessionMode },
    CommandExecuted { implant: EntityId, cmd: Command, granted: Privilege, mode: SessionMode, ans: [u8; 8] },
    CommandRejected { implant: EntityId, cmd: Option<Command>, reason: Reason },
    SignatureStored { implant: EntityId, slot: usize, record: SignatureRecord },
    AnswerReceived { reader: EntityId, cmd: Command, status: u8 },
    BedsideCollected { implant: EntityId, bytes: u64 },
    SessionClosed { by: EntityId },
    TaskCompleted { reader: EntityId, task: &'static str },
    PhaseAborted { reason: Reason },
}

impl ProtocolEvent {
    pub fn secret_key(&self, role: KeyRole) -> Option<&SymmetricKey> {
        match self {
            ProtocolEvent::SecretMinted { key } if key.role() == role => Some(key),
            _ => None,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Outgoing {
    pub channel: Channel,
    pub dst: EntityId,
    pub msg: Message,
}

/// Per-dispatch context handed to an actor.
pub struct Ctx<'a> {
    pub now: u64,
    pub me: EntityId,
    pub rng: &'a mut ChaCha20Rng,
    /// Zone the delivered frame originated from.
    pub origin_zone: NetworkZone,
    pub sends: Vec<Outgoing>,
    pub timers: Vec<(u64, u64)>,
    pub events: Vec<ProtocolEvent>,
}

impl<'a> Ctx<'a> {
    pub fn new(now: u64, me: EntityId, rng: &'a mut ChaCha20Rng) -> Self {
        Ctx {
            now,
            me,
            rng,
            origin_zone: NetworkZone::Hospital,
            sends: Vec::new(),
            timers: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn send(&mut self, channel: Channel, dst: EntityId, msg: Message) {
        self.sends.push(Outgoing { channel, dst, msg });
    }

    /// Fire `on_timer(token)` after `delay_ms`.
    pub fn set_timer(&mut self, delay_ms: u64, token: u64) {
        self.timers.push((delay_ms, token));
    }

    pub fn emit(&mut self, ev: ProtocolEvent) {
        self.events.push(ev);
    }

    pub fn abort(&mut self, reason: Reason) {
        self.events.push(ProtocolEvent::PhaseAborted { reason });
    }
}

/// Any protocol actor.
pub enum Node {
    Implant(Box<Implant>),
    Reader(Box<Reader>),
    Card(Box<Card>),
    Server(Box<Server>),
    Manufacturer(Box<Manufacturer>),
}

impl Node {
    pub fn id(&self) -> EntityId {
        match self {
            Node::Implant(n) => n.id(),
            Node::Reader(n) => n.id(),
            Node::Card(n) => n.id(),
            Node::Server(n) => n.id(),
            Node::Manufacturer(n) => n.id(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Node::Implant(_) => "implant",
            Node::Reader(_) => "reader",
            Node::Card(_) => "card",
            Node::Server(_) => "server",
            Node::Manufacturer(_) => "manufacturer",
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, msg: Message) {
        match self {
            Node::Implant(n) => n.on_message(ctx, from, channel, msg),
            Node::Reader(n) => n.on_message(ctx, from, channel, msg),
            Node::Card(n) => n.on_message(ctx, from, channel, msg),
            Node::Server(n) => n.on_message(ctx, from, channel, msg),
            Node::Manufacturer(n) => n.on_message(ctx, from, channel, msg),
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        if let Node::Reader(n) = self {
            n.on_timer(ctx, token);
        }
    }
}

/// Milliseconds of one hour of simulated time.
pub const HOUR_MS: u64 = 3_600_000;
