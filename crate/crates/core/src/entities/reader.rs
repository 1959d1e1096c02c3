use std::collections::VecDeque;

use rand::RngCore;

use super::puzzle::{solve_puzzle, Puzzle};
use super::transcript::{
    bedside_marker_bytes, bedside_request_bytes, confirm_bytes, dh_init_bytes, dh_reply_bytes, dh_transcript,
    nonce_pair, offline_confirm_bytes, session_request_bytes, token_request_bytes,
};
use super::{Agreement, Ctx, ProtocolEvent, Reason};
use crate::crypto::{dh_exchange, mac, verify_certificate, verify_mac, verify_sig, DhSecret, KeyPair};
use crate::cryptogram::{
    AnswerPlain, BedsideCmdPlain, BedsideReportPlain, CardCmdPlain, CardSigPlain, ChunkPlain, ImplantCmdPlain, MRPlain,
    MRiPlain, PinBlockPlain, Plaintext, TokenRPlain,
};
use crate::types::{
    Certificate, Command, CommandKind, EntityId, KeyRole, Nonce, Privilege, PublicKeyBytes, SessionMode,
    SignatureBytes, SymmetricKey,
};
use crate::wire::{Channel, Message, EPH_LEN};

/// Timer token that starts the next queued task.
pub const KICK: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hack {
    /// Send this command to the implant in place of the one the card signed.
    ReplaceCommand(Command),
    /// Have the card sign `decoy` and pair that signature with the real command.
    ReplaceSignature { decoy: Command },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReaderKind {
    Valid,
    /// Legitimate device reported to the server's revocation list.
    Stolen,
    Hacked(Hack),
    /// Holds no CA-issued certificate; fabricates signatures when it has no card.
    Forged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReaderConfig {
    pub timeout_ms: u64,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        ReaderConfig { timeout_ms: 5_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    ConnectServer {
        server: EntityId,
    },
    AuthenticateCard,
    VerifyUser {
        pin: u32,
    },
    EstablishSession {
        implant: EntityId,
    },
    BedsideSession {
        implant: EntityId,
    },
    /// Touch-to-access pairing; `signed` selects the non-repudiation flavour.
    OfflinePair {
        implant: EntityId,
        signed: bool,
    },
    Command(Command),
    Wait(u64),
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::ConnectServer { .. } => "connect-server",
            Task::AuthenticateCard => "authenticate-card",
            Task::VerifyUser { .. } => "verify-user",
            Task::EstablishSession { .. } => "establish-session",
            Task::BedsideSession { .. } => "bedside-session",
            Task::OfflinePair { .. } => "offline-pair",
            Task::Command(_) => "command",
            Task::Wait(_) => "wait",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServerLink {
    pub server: EntityId,
    pub server_nonce: Nonce,
    pub k_rs: Option<SymmetricKey>,
}

/// Tokens and K'_RC from reader-card authentication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CardSession {
    pub card_id: EntityId,
    pub reader_nonce: Nonce,
    pub card_nonce: Nonce,
    pub k_rc: SymmetricKey,
    pub privilege: Privilege,
    pub lifetime_ms: u64,
    pub issued_at: u64,
}

impl CardSession {
    /// Valid while the reader's clock since issue is below T_L.
    pub fn valid_at(&self, now: u64) -> bool {
        now.saturating_sub(self.issued_at) < self.lifetime_ms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReaderSession {
    pub implant: EntityId,
    pub key: SymmetricKey,
    pub reader_nonce: Nonce,
    pub implant_nonce: Nonce,
    pub privilege: Privilege,
    pub mode: SessionMode,
    pub signed: bool,
}

enum Stage {
    Idle,
    Waiting,
    AwaitServerReply,
    AwaitDhReply { secret: DhSecret, eph: [u8; EPH_LEN] },
    AwaitCardResponse { reader_nonce: Nonce },
    AwaitTokenGrant { reader_nonce: Nonce, card_id: EntityId, card_nonce: Nonce },
    AwaitCardAck { session: CardSession },
    AwaitPinResult,
    AwaitImplantNonce { implant: EntityId, reader_nonce: Nonce, bedside: bool },
    AwaitKeyGrant { implant: EntityId, reader_nonce: Nonce, implant_nonce: Nonce, bedside: bool },
    AwaitKeyConfirm { session: ReaderSession },
    AwaitOfflineKey { implant: EntityId, signed: bool },
    AwaitOfflineAck { session: ReaderSession },
    AwaitSignature { cmd: Command },
    AwaitAnswer { cmd: Command },
    AwaitChunks { cmd: Command, next: u32, total: u32, implant_nonce: Nonce },
    AwaitBedsideCommand,
}

pub struct Reader {
    id: EntityId,
    kind: ReaderKind,
    cfg: ReaderConfig,
    keypair: KeyPair,
    cert: Certificate,
    ca: PublicKeyBytes,
    card: Option<EntityId>,
    link: Option<ServerLink>,
    card_session: Option<CardSession>,
    m_sc2: Option<Vec<u8>>,
    session: Option<ReaderSession>,
    tasks: VecDeque<Task>,
    current: Option<Task>,
    stage: Stage,
    generation: u64,
    answers: Vec<(Command, [u8; 8])>,
    chunk_bytes: u64,
    puzzle_work: u64,
}

impl Reader {
    pub fn new(
        id: EntityId,
        kind: ReaderKind,
        keypair: KeyPair,
        cert: Certificate,
        ca: PublicKeyBytes,
        cfg: ReaderConfig,
    ) -> Self {
        Reader {
            id,
            kind,
            cfg,
            keypair,
            cert,
            ca,
            card: None,
            link: None,
            card_session: None,
            m_sc2: None,
            session: None,
            tasks: VecDeque::new(),
            current: None,
            stage: Stage::Idle,
            generation: 0,
            answers: Vec::new(),
            chunk_bytes: 0,
            puzzle_work: 0,
        }
    }

    pub fn id(&self) -> EntityId {
        self.id
    }

    pub fn kind(&self) -> ReaderKind {
        self.kind
    }

    pub fn insert_card(&mut self, card: Option<EntityId>) {
        self.card = card;
    }

    pub fn inserted_card(&self) -> Option<EntityId> {
        self.card
    }

    pub fn push_task(&mut self, task: Task) {
        self.tasks.push_back(task);
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.stage, Stage::Idle) && self.tasks.is_empty()
    }

    pub fn link(&self) -> Option<&ServerLink> {
        self.link.as_ref()
    }

    pub fn card_session(&self) -> Option<&CardSession> {
        self.card_session.as_ref()
    }

    pub fn session(&self) -> Option<&ReaderSession> {
        self.session.as_ref()
    }

    pub fn answers(&self) -> &[(Command, [u8; 8])] {
        &self.answers
    }

    pub fn chunk_bytes_received(&self) -> u64 {
        self.chunk_bytes
    }

    /// Hash evaluations spent on client puzzles.
    pub fn puzzle_work(&self) -> u64 {
        self.puzzle_work
    }

    pub fn has_user_verification(&self) -> bool {
        self.m_sc2.is_some()
    }

    fn arm(&mut self, ctx: &mut Ctx<'_>) {
        self.generation += 1;
        ctx.set_timer(self.cfg.timeout_ms, self.generation);
    }

    fn set(&mut self, ctx: &mut Ctx<'_>, stage: Stage) {
        self.stage = stage;
        self.arm(ctx);
    }

    fn done(&mut self, ctx: &mut Ctx<'_>) {
        if let Some(t) = self.current.take() {
            ctx.emit(ProtocolEvent::TaskCompleted { reader: self.id, task: t.name() });
        }
        self.stage = Stage::Idle;
        self.generation += 1;
        ctx.set_timer(0, KICK);
    }

    /// Abandons the current task and the rest of the script, dropping the
    /// keys of the phase that failed.
    fn fail(&mut self, ctx: &mut Ctx<'_>, reason: Reason) {
        ctx.abort(reason);
        match self.current {
            Some(Task::ConnectServer { .. }) => self.link = None,
            Some(Task::AuthenticateCard) => self.card_session = None,
            Some(Task::VerifyUser { .. }) => self.m_sc2 = None,
            Some(Task::EstablishSession { .. } | Task::BedsideSession { .. } | Task::OfflinePair { .. }) => {
                self.session = None
            }
            Some(Task::Command(_)) if reason != Reason::UserNotVerified => self.session = None,
            _ => {}
        }
        self.current = None;
        self.tasks.clear();
        self.stage = Stage::Idle;
        self.generation += 1;
    }

    fn valid_token(&self, now: u64) -> Result<CardSession, Reason> {
        match self.card_session {
            None => Err(Reason::NoSession),
            Some(s) if !s.valid_at(now) => Err(Reason::TokenExpired),
            Some(s) => Ok(s),
        }
    }

    fn k_rs(&self) -> Result<(EntityId, SymmetricKey, Nonce), Reason> {
        match self.link {
            Some(ServerLink { server, server_nonce, k_rs: Some(k) }) => Ok((server, k, server_nonce)),
            _ => Err(Reason::NoSession),
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        if token == KICK {
            if matches!(self.stage, Stage::Idle) {
                self.start_next(ctx);
            }
            return;
        }
        if token != self.generation {
            return;
        }
        match self.stage {
            Stage::Idle => {}
            Stage::Waiting => self.done(ctx),
            Stage::AwaitOfflineKey { .. } => self.fail(ctx, Reason::OobUnavailable),
            _ => self.fail(ctx, Reason::Timeout),
        }
    }

    fn start_next(&mut self, ctx: &mut Ctx<'_>) {
        let Some(task) = self.tasks.pop_front() else { return };
        self.current = Some(task);
        if let Err(reason) = self.start(ctx, task) {
            self.fail(ctx, reason);
        }
    }

    fn start(&mut self, ctx: &mut Ctx<'_>, task: Task) -> Result<(), Reason> {
        match task {
            Task::ConnectServer { server } => {
                self.link = Some(ServerLink { server, server_nonce: Nonce(0), k_rs: None });
                let nonce = Nonce::random(ctx.rng);
                ctx.send(Channel::Internet, server, Message::ServerHello { reader_id: self.id, nonce });
                self.set(ctx, Stage::AwaitServerReply);
            }
            Task::AuthenticateCard => {
                let (_, _, server_nonce) = self.k_rs()?;
                let card = self.card.ok_or(Reason::NoSession)?;
                let reader_nonce = Nonce::random(ctx.rng);
                ctx.send(
                    Channel::Contact,
                    card,
                    Message::CardChallenge { reader_id: self.id, reader_nonce, server_nonce },
                );
                self.set(ctx, Stage::AwaitCardResponse { reader_nonce });
            }
            Task::VerifyUser { pin } => {
                let s = self.valid_token(ctx.now)?;
                let card = self.card.ok_or(Reason::NoSession)?;
                let ct =
                    PinBlockPlain { pin, reader_nonce: s.reader_nonce, card_nonce: s.card_nonce }.seal(&s.k_rc, b"");
                ctx.send(Channel::Contact, card, Message::PinVerify { ct });
                self.set(ctx, Stage::AwaitPinResult);
            }
            Task::EstablishSession { implant } => {
                self.valid_token(ctx.now)?;
                self.k_rs()?;
                if self.m_sc2.is_none() {
                    return Err(Reason::UserNotVerified);
                }
                self.hello(ctx, implant, false);
            }
            Task::BedsideSession { implant } => {
                self.k_rs()?;
                self.hello(ctx, implant, true);
            }
            Task::OfflinePair { implant, signed } => {
                if signed && !self.compromised() {
                    self.valid_token(ctx.now)?;
                    if self.m_sc2.is_none() {
                        return Err(Reason::UserNotVerified);
                    }
                }
                ctx.send(Channel::Oob, implant, Message::OfflineRequest { reader_id: self.id });
                self.set(ctx, Stage::AwaitOfflineKey { implant, signed });
            }
            Task::Command(cmd) => self.start_command(ctx, cmd)?,
            Task::Wait(ms) => {
                self.stage = Stage::Waiting;
                self.generation += 1;
                ctx.set_timer(ms, self.generation);
            }
        }
        Ok(())
    }

    /// Firmware under attacker control skips its own local checks.
    fn compromised(&self) -> bool {
        matches!(self.kind, ReaderKind::Forged | ReaderKind::Hacked(_))
    }

    fn hello(&mut self, ctx: &mut Ctx<'_>, implant: EntityId, bedside: bool) {
        let reader_nonce = Nonce::random(ctx.rng);
        ctx.send(Channel::Rf, implant, Message::ImplantHello { reader_id: self.id, reader_nonce });
        self.set(ctx, Stage::AwaitImplantNonce { implant, reader_nonce, bedside });
    }

    fn start_command(&mut self, ctx: &mut Ctx<'_>, cmd: Command) -> Result<(), Reason> {
        let s = self.session.ok_or(Reason::NoSession)?;
        match s.mode {
            SessionMode::Bedside => return Err(Reason::PolicyViolation),
            _ if !s.signed => {
                let ct = ImplantCmdPlain { cmd, reader_nonce: s.reader_nonce, implant_nonce: s.implant_nonce }
                    .seal(&s.key, b"");
                ctx.send(Channel::Rf, s.implant, Message::ImplantCommandUnsigned { ct: fixed(ct) });
                self.set(ctx, Stage::AwaitAnswer { cmd });
            }
            _ if self.card_session.is_none() && self.compromised() => {
                let mut sig = [0u8; 48];
                ctx.rng.fill_bytes(&mut sig);
                self.send_signed(ctx, &s, cmd, SignatureBytes(sig));
            }
            _ => {
                let cs = self.valid_token(ctx.now)?;
                let card = self.card.ok_or(Reason::NoSession)?;
                let to_sign = match self.kind {
                    ReaderKind::Hacked(Hack::ReplaceSignature { decoy }) => decoy,
                    _ => cmd,
                };
                let ct = CardCmdPlain { cmd: to_sign, reader_nonce: s.reader_nonce, card_nonce: cs.card_nonce }
                    .seal(&cs.k_rc, b"");
                ctx.send(Channel::Contact, card, Message::CardCommand { ct });
                self.set(ctx, Stage::AwaitSignature { cmd });
            }
        }
        Ok(())
    }

    fn send_signed(&mut self, ctx: &mut Ctx<'_>, s: &ReaderSession, cmd: Command, sig: SignatureBytes) {
        let cmd = match self.kind {
            ReaderKind::Hacked(Hack::ReplaceCommand(other)) => other,
            _ => cmd,
        };
        let ct =
            ImplantCmdPlain { cmd, reader_nonce: s.reader_nonce, implant_nonce: s.implant_nonce }.seal(&s.key, &sig.0);
        ctx.send(Channel::Rf, s.implant, Message::ImplantCommandSigned { ct: fixed(ct), sig });
        self.set(ctx, Stage::AwaitAnswer { cmd });
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, msg: Message) {
        if let Err(reason) = self.handle(ctx, from, channel, msg) {
            self.fail(ctx, reason);
        }
    }

    fn handle(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, msg: Message) -> Result<(), Reason> {
        let stage = std::mem::replace(&mut self.stage, Stage::Idle);
        match (stage, msg) {
            (Stage::Idle, _) => {}
            (_, Message::SessionReject { reason }) if channel == Channel::Internet && self.is_server(from) => {
                return Err(Reason::from_u8(reason));
            }
            (_, Message::CardError { reason }) if channel == Channel::Contact && Some(from) == self.card => {
                return Err(Reason::from_u8(reason));
            }
            (Stage::AwaitServerReply, Message::PuzzleChallenge { hx, partial_x, t, k }) if self.is_server(from) => {
                let (solution, work) = solve_puzzle(&Puzzle { hx, partial_x, t, k }).ok_or(Reason::PuzzleWrong)?;
                self.puzzle_work += work;
                ctx.send(Channel::Internet, from, Message::PuzzleSolution { reader_id: self.id, t, solution });
                self.set(ctx, Stage::AwaitServerReply);
            }
            (Stage::AwaitServerReply, Message::ServerNonce { server_id, nonce }) if self.is_server(from) => {
                if server_id != from {
                    return Err(Reason::CertInvalid);
                }
                if let Some(l) = self.link.as_mut() {
                    l.server_nonce = nonce;
                }
                let (secret, eph) = DhSecret::generate(ctx.rng);
                let sig = self.keypair.sign(&dh_init_bytes(&eph, nonce, &server_id, &self.id));
                ctx.send(Channel::Internet, from, Message::DhInit { cert: self.cert, eph, sig });
                self.set(ctx, Stage::AwaitDhReply { secret, eph });
            }
            (Stage::AwaitDhReply { secret, eph }, Message::DhReply { cert, eph: eph_s, sig })
                if self.is_server(from) =>
            {
                let link = self.link.ok_or(Reason::NoSession)?;
                if !verify_certificate(&self.ca, &cert) || cert.subject != link.server {
                    return Err(Reason::CertInvalid);
                }
                if !verify_sig(&cert.public_key, &dh_reply_bytes(&eph_s, &eph, link.server_nonce, &self.id), &sig) {
                    return Err(Reason::CertInvalid);
                }
                let transcript = dh_transcript(&eph, &eph_s, link.server_nonce, &self.id, &link.server);
                let k = dh_exchange(&secret, &eph_s, &transcript).map_err(|_| Reason::GroupElementInvalid)?;
                self.link = Some(ServerLink { k_rs: Some(k), ..link });
                self.done(ctx);
            }
            (Stage::AwaitCardResponse { reader_nonce }, Message::CardResponse { card_id, card_nonce, m_sc1 })
                if Some(from) == self.card =>
            {
                let (server, k_rs, _) = self.k_rs()?;
                let tag = mac(&k_rs, &token_request_bytes(&self.id, &card_id, card_nonce, &m_sc1));
                ctx.send(
                    Channel::Internet,
                    server,
                    Message::TokenRequest { reader_id: self.id, card_id, card_nonce, m_sc1, mac: tag },
                );
                self.set(ctx, Stage::AwaitTokenGrant { reader_nonce, card_id, card_nonce });
            }
            (
                Stage::AwaitTokenGrant { reader_nonce, card_id, card_nonce },
                Message::TokenGrant { token_r, token_c },
            ) if self.is_server(from) => {
                let (_, k_rs, _) = self.k_rs()?;
                let t = TokenRPlain::open(&k_rs, &token_r, self.id.as_bytes()).map_err(|_| Reason::MacFailure)?;
                if t.reader_id != self.id
                    || t.card_id != card_id
                    || t.reader_nonce != reader_nonce
                    || t.card_nonce != card_nonce
                {
                    return Err(Reason::NonceMismatch);
                }
                let session = CardSession {
                    card_id,
                    reader_nonce,
                    card_nonce,
                    k_rc: SymmetricKey::new(t.k_rc, KeyRole::ReaderCard),
                    privilege: t.privilege,
                    lifetime_ms: t.lifetime_ms,
                    issued_at: ctx.now,
                };
                let card = self.card.ok_or(Reason::NoSession)?;
                let tag = mac(&session.k_rc, &nonce_pair(reader_nonce, card_nonce));
                ctx.emit(ProtocolEvent::Witness(self.agreement(
                    "rc-confirm",
                    card_id,
                    reader_nonce,
                    card_nonce,
                    &session.k_rc,
                )));
                ctx.send(Channel::Contact, card, Message::CardKeyConfirm { mac: tag, token_c });
                self.set(ctx, Stage::AwaitCardAck { session });
            }
            (Stage::AwaitCardAck { session }, Message::CardKeyAck { mac: tag }) if Some(from) == self.card => {
                let expect = nonce_pair(session.reader_nonce.succ(), session.card_nonce.succ());
                if !verify_mac(&session.k_rc, &expect, &tag) {
                    return Err(Reason::MacFailure);
                }
                ctx.emit(ProtocolEvent::Request(self.agreement(
                    "cr-ack",
                    session.card_id,
                    session.reader_nonce,
                    session.card_nonce,
                    &session.k_rc,
                )));
                self.card_session = Some(session);
                self.m_sc2 = None;
                self.done(ctx);
            }
            (Stage::AwaitPinResult, Message::PinResult { m_sc2 }) if Some(from) == self.card => {
                self.m_sc2 = Some(m_sc2);
                self.done(ctx);
            }
            (
                Stage::AwaitImplantNonce { implant, reader_nonce, bedside },
                Message::ImplantNonce { implant_id, implant_nonce },
            ) if from == implant && implant_id == implant => {
                let (server, k_rs, server_nonce) = self.k_rs()?;
                let msg = if bedside {
                    let tag = mac(&k_rs, &bedside_request_bytes(&self.id, &implant, reader_nonce, implant_nonce));
                    Message::BedsideKeyRequest { reader_id: self.id, implant_id, reader_nonce, implant_nonce, mac: tag }
                } else {
                    let cs = self.valid_token(ctx.now)?;
                    let m_sc2 = self.m_sc2.clone().ok_or(Reason::UserNotVerified)?;
                    let tag = mac(
                        &k_rs,
                        &session_request_bytes(
                            &self.id,
                            &implant,
                            &cs.card_id,
                            reader_nonce,
                            implant_nonce,
                            cs.card_nonce,
                            server_nonce,
                            &m_sc2,
                        ),
                    );
                    Message::SessionKeyRequest {
                        reader_id: self.id,
                        implant_id,
                        card_id: cs.card_id,
                        reader_nonce,
                        implant_nonce,
                        card_nonce: cs.card_nonce,
                        server_nonce,
                        m_sc2,
                        mac: tag,
                    }
                };
                ctx.send(Channel::Internet, server, msg);
                self.set(ctx, Stage::AwaitKeyGrant { implant, reader_nonce, implant_nonce, bedside });
            }
            (
                Stage::AwaitKeyGrant { implant, reader_nonce, implant_nonce, bedside },
                Message::SessionKeyGrant { m_r, m_i },
            ) if self.is_server(from) => {
                let (_, k_rs, _) = self.k_rs()?;
                let r = MRPlain::open(&k_rs, &m_r, self.id.as_bytes()).map_err(|_| Reason::MacFailure)?;
                if r.reader_nonce != reader_nonce || r.implant_nonce != implant_nonce || r.implant_id != implant {
                    return Err(Reason::NonceMismatch);
                }
                let key = SymmetricKey::new(r.k_ri, KeyRole::ReaderImplant);
                let session = ReaderSession {
                    implant,
                    key,
                    reader_nonce,
                    implant_nonce,
                    privilege: r.privilege,
                    mode: if bedside { SessionMode::Bedside } else { SessionMode::Online },
                    signed: !bedside,
                };
                let m_ri = MRiPlain { reader_nonce, implant_nonce }.seal(&key, b"");
                ctx.emit(ProtocolEvent::Witness(self.agreement("ri-key", implant, reader_nonce, implant_nonce, &key)));
                ctx.send(Channel::Rf, implant, Message::ImplantKeyDelivery { m_i, m_ri });
                self.set(ctx, Stage::AwaitKeyConfirm { session });
            }
            (Stage::AwaitKeyConfirm { session }, Message::ImplantKeyConfirm { mac: tag })
                if from == session.implant =>
            {
                self.confirm_session(ctx, session, &tag)?;
                if session.mode == SessionMode::Bedside {
                    let (server, k_rs, _) = self.k_rs()?;
                    let tag = mac(&k_rs, &bedside_marker_bytes(b"ready", &session.implant));
                    ctx.send(
                        Channel::Internet,
                        server,
                        Message::BedsideReady { implant_id: session.implant, mac: tag },
                    );
                    self.set(ctx, Stage::AwaitBedsideCommand);
                } else {
                    self.done(ctx);
                }
            }
            (Stage::AwaitOfflineKey { implant, signed }, Message::OfflineKey { key, implant_nonce, implant_id })
                if channel == Channel::Oob && from == implant && implant_id == implant =>
            {
                let key = SymmetricKey::new(key, KeyRole::ReaderImplant);
                let reader_nonce = Nonce::random(ctx.rng);
                let (card_id, card_nonce) = match self.card_session {
                    Some(cs) if signed => (cs.card_id, cs.card_nonce),
                    _ => (EntityId::ZERO, Nonce(0)),
                };
                let tag =
                    mac(&key, &offline_confirm_bytes(&self.id, &card_id, card_nonce, reader_nonce, implant_nonce));
                let session = ReaderSession {
                    implant,
                    key,
                    reader_nonce,
                    implant_nonce,
                    privilege: super::implant::OFFLINE_PRIVILEGE_CAP,
                    mode: SessionMode::Offline,
                    signed,
                };
                ctx.emit(ProtocolEvent::Witness(self.agreement("ri-key", implant, reader_nonce, implant_nonce, &key)));
                ctx.send(
                    Channel::Rf,
                    implant,
                    Message::OfflineConfirm { reader_id: self.id, card_id, card_nonce, reader_nonce, mac: tag },
                );
                self.set(ctx, Stage::AwaitOfflineAck { session });
            }
            (Stage::AwaitOfflineAck { session }, Message::OfflineConfirmAck { mac: tag })
                if from == session.implant =>
            {
                self.confirm_session(ctx, session, &tag)?;
                self.done(ctx);
            }
            (Stage::AwaitSignature { cmd }, Message::CardSignature { ct }) if Some(from) == self.card => {
                let cs = self.card_session.ok_or(Reason::NoSession)?;
                let s = self.session.ok_or(Reason::NoSession)?;
                let sig = CardSigPlain::open(&cs.k_rc, &ct, b"").map_err(|_| Reason::MacFailure)?.sig;
                self.send_signed(ctx, &s, cmd, sig);
            }
            (Stage::AwaitAnswer { cmd }, Message::ImplantAnswer { ct }) => {
                let s = self.session.ok_or(Reason::NoSession)?;
                if from != s.implant {
                    self.stage = Stage::AwaitAnswer { cmd };
                    return Ok(());
                }
                let a = AnswerPlain::open(&s.key, &ct, b"").map_err(|_| Reason::MacFailure)?;
                if a.reader_nonce != s.reader_nonce || a.implant_nonce != s.implant_nonce {
                    return Err(Reason::NonceMismatch);
                }
                ctx.emit(ProtocolEvent::AnswerReceived { reader: self.id, cmd, status: a.ans[0] });
                self.answers.push((cmd, a.ans));
                if let Some(live) = self.session.as_mut() {
                    live.implant_nonce = live.implant_nonce.succ();
                }
                self.report(ctx, &s, 0, a.ans.to_vec())?;
                let chunks = if a.ans[0] == 0 && cmd == Command::read_log() {
                    u32::from_be_bytes(a.ans[4..8].try_into().unwrap())
                } else {
                    0
                };
                if chunks > 0 {
                    self.set(ctx, Stage::AwaitChunks { cmd, next: 0, total: chunks, implant_nonce: s.implant_nonce });
                } else {
                    self.finish_command(ctx, cmd, a.ans[0])?;
                }
            }
            (Stage::AwaitChunks { cmd, next, total, implant_nonce }, Message::ImplantAnswerChunk { ct }) => {
                let s = self.session.ok_or(Reason::NoSession)?;
                let c = ChunkPlain::open(&s.key, &ct, b"").map_err(|_| Reason::MacFailure)?;
                if c.seq != next || c.implant_nonce != implant_nonce || c.reader_nonce != s.reader_nonce {
                    return Err(Reason::NonceMismatch);
                }
                self.chunk_bytes += c.data.len() as u64;
                self.report(ctx, &s, next + 1, c.data)?;
                if next + 1 == total {
                    self.finish_command(ctx, cmd, 0)?;
                } else {
                    self.set(ctx, Stage::AwaitChunks { cmd, next: next + 1, total, implant_nonce });
                }
            }
            (Stage::AwaitBedsideCommand, Message::BedsideCommand { ct, server_mac }) if self.is_server(from) => {
                let (_, k_rs, _) = self.k_rs()?;
                let s = self.session.ok_or(Reason::NoSession)?;
                let b = BedsideCmdPlain::open(&k_rs, &ct, s.implant.as_bytes()).map_err(|_| Reason::MacFailure)?;
                if b.implant_id != s.implant || b.reader_nonce != s.reader_nonce || b.implant_nonce != s.implant_nonce {
                    return Err(Reason::NonceMismatch);
                }
                let ct = ImplantCmdPlain { cmd: b.cmd, reader_nonce: s.reader_nonce, implant_nonce: s.implant_nonce }
                    .seal(&s.key, &server_mac);
                ctx.send(Channel::Rf, s.implant, Message::ImplantCommandServerMac { ct: fixed(ct), server_mac });
                self.set(ctx, Stage::AwaitAnswer { cmd: b.cmd });
            }
            (stage, _) => self.stage = stage,
        }
        Ok(())
    }

    fn is_server(&self, from: EntityId) -> bool {
        self.link.is_some_and(|l| l.server == from)
    }

    fn agreement(&self, label: &'static str, peer: EntityId, a: Nonce, b: Nonce, key: &SymmetricKey) -> Agreement {
        Agreement { label, by: self.id, peer, nonces: vec![a.0, b.0], key_fp: key.fingerprint() }
    }

    fn confirm_session(&mut self, ctx: &mut Ctx<'_>, session: ReaderSession, tag: &[u8; 16]) -> Result<(), Reason> {
        if !verify_mac(&session.key, &confirm_bytes(session.implant_nonce, session.reader_nonce), tag) {
            return Err(Reason::MacFailure);
        }
        ctx.emit(ProtocolEvent::Request(self.agreement(
            "ir-confirm",
            session.implant,
            session.reader_nonce,
            session.implant_nonce,
            &session.key,
        )));
        self.session = Some(session);
        Ok(())
    }

    /// Bedside sessions relay every answer and chunk to the server.
    fn report(&mut self, ctx: &mut Ctx<'_>, s: &ReaderSession, seq: u32, data: Vec<u8>) -> Result<(), Reason> {
        if s.mode != SessionMode::Bedside {
            return Ok(());
        }
        let (server, k_rs, _) = self.k_rs()?;
        let ct = BedsideReportPlain { implant_id: s.implant, seq, data }.seal(&k_rs, s.implant.as_bytes());
        ctx.send(Channel::Internet, server, Message::BedsideReport { ct });
        Ok(())
    }

    fn finish_command(&mut self, ctx: &mut Ctx<'_>, cmd: Command, status: u8) -> Result<(), Reason> {
        let s = self.session.ok_or(Reason::NoSession)?;
        let closing = cmd.kind == CommandKind::Finish && status == 0;
        if s.mode == SessionMode::Bedside {
            if closing {
                let (server, k_rs, _) = self.k_rs()?;
                let tag = mac(&k_rs, &bedside_marker_bytes(b"done", &s.implant));
                ctx.send(Channel::Internet, server, Message::BedsideDone { implant_id: s.implant, mac: tag });
                self.session = None;
                self.done(ctx);
            } else {
                self.set(ctx, Stage::AwaitBedsideCommand);
            }
            return Ok(());
        }
        if closing {
            self.session = None;
        }
        self.done(ctx);
        Ok(())
    }
}

fn fixed<const N: usize>(v: Vec<u8>) -> [u8; N] {
    v.try_into().expect("sealed length is fixed by the plaintext layout")
}
