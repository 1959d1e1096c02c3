use std::collections::{HashMap, HashSet, VecDeque};

use super::puzzle::{issue_puzzle, verify_puzzle};
use super::transcript::{
    bedside_marker_bytes, bedside_request_bytes, dh_init_bytes, dh_reply_bytes, dh_transcript, server_mac_bytes,
    session_request_bytes, token_request_bytes,
};
use super::{Ctx, ProtocolEvent, Reason, HOUR_MS};
use crate::crypto::{dh_exchange, mac, verify_certificate, verify_mac, verify_sig, DhSecret, KeyPair};
use crate::cryptogram::{
    remote_mint_ad, remote_reply_ad, BedsideCmdPlain, BedsideReportPlain, MIPlain, MRPlain, MSc1Plain, MSc2Plain,
    Plaintext, RemoteMintPlain, RemoteReplyPlain, TokenCPlain, TokenRPlain,
};
use crate::types::{
    Certificate, Command, EntityId, KeyRole, NetworkZone, Nonce, Privilege, PublicKeyBytes, SessionMode, SymmetricKey,
};
use crate::wire::{Channel, MacTag, Message, EPH_LEN};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerConfig {
    pub puzzle_k: u8,
    /// Half-open connections at which puzzles switch on.
    pub load_threshold: usize,
    pub force_puzzle: bool,
    pub puzzle_expiry_ms: u64,
    /// How long a relayed key request may wait for the home server.
    pub remote_timeout_ms: u64,
    /// T_L written into token_R.
    pub token_lifetime_ms: u64,
    /// Default working hours as `[start, end)` hour of day.
    pub working_hours: (u8, u8),
    pub hours_override: HashMap<EntityId, (u8, u8)>,
    /// Hour of day at virtual time zero.
    pub start_hour: u8,
    /// Build m_I locally under a wrong key instead of asking the home server.
    pub misbind_remote: bool,
    /// Commands pushed to each implant's bedside reader before `Finish`.
    pub bedside_commands: HashMap<EntityId, Vec<Command>>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            puzzle_k: 12,
            load_threshold: 100,
            force_puzzle: false,
            puzzle_expiry_ms: 10_000,
            remote_timeout_ms: 5_000,
            token_lifetime_ms: HOUR_MS,
            working_hours: (8, 18),
            hours_override: HashMap::new(),
            start_hour: 10,
            misbind_remote: false,
            bedside_commands: HashMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Connection {
    server_nonce: Nonce,
    k_rs: Option<SymmetricKey>,
    token_issued: bool,
}

#[derive(Clone, Copy, Debug)]
struct TokenSession {
    reader: EntityId,
    card_nonce: Nonce,
    privilege: Privilege,
    consumed: bool,
}

#[derive(Clone, Debug)]
struct PendingRemote {
    reader: EntityId,
    privilege: Privilege,
    m_r: Vec<u8>,
    sent_at: u64,
}

#[derive(Clone, Debug)]
struct BedsideState {
    reader: EntityId,
    reader_nonce: Nonce,
    implant_nonce: Nonce,
    queue: VecDeque<Command>,
    in_flight: Option<Command>,
    awaiting_chunks: u32,
    bytes: u64,
}

pub struct Server {
    id: EntityId,
    cfg: ServerConfig,
    keypair: KeyPair,
    cert: Certificate,
    ca: PublicKeyBytes,
    secret: [u8; 16],
    crl: HashSet<EntityId>,
    cards: HashMap<EntityId, SymmetricKey>,
    implants: HashMap<EntityId, SymmetricKey>,
    bedside_readers: HashSet<EntityId>,
    manufacturer: Option<(EntityId, SymmetricKey)>,
    conns: HashMap<EntityId, Connection>,
    tokens: HashMap<(EntityId, Nonce), TokenSession>,
    seen_m_sc2: HashSet<Vec<u8>>,
    pending_remote: HashMap<(EntityId, Nonce), PendingRemote>,
    /// Remote mint requests already answered, by (implant, n_R, n_I).
    remote_served: HashSet<(EntityId, Nonce, Nonce)>,
    bedside: HashMap<EntityId, BedsideState>,
    puzzles_issued: u64,
}

impl Server {
    pub fn new(
        id: EntityId,
        keypair: KeyPair,
        cert: Certificate,
        ca: PublicKeyBytes,
        secret: [u8; 16],
        cfg: ServerConfig,
    ) -> Self {
        Server {
            id,
            cfg,
            keypair,
            cert,
            ca,
            secret,
            crl: HashSet::new(),
            cards: HashMap::new(),
            implants: HashMap::new(),
            bedside_readers: HashSet::new(),
            manufacturer: None,
            conns: HashMap::new(),
            tokens: HashMap::new(),
            seen_m_sc2: HashSet::new(),
            pending_remote: HashMap::new(),
            remote_served: HashSet::new(),
            bedside: HashMap::new(),
            puzzles_issued: 0,
        }
    }

    pub fn id(&self) -> EntityId {
        self.id
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn register_card(&mut self, card: EntityId, k_sc: SymmetricKey) {
        self.cards.insert(card, k_sc);
    }

    pub fn register_implant(&mut self, implant: EntityId, k_si: SymmetricKey) {
        self.implants.insert(implant, k_si);
    }

    pub fn register_bedside_reader(&mut self, reader: EntityId) {
        self.bedside_readers.insert(reader);
    }

    pub fn link_manufacturer(&mut self, manufacturer: EntityId, key: SymmetricKey) {
        self.manufacturer = Some((manufacturer, key));
    }

    pub fn revoke(&mut self, subject: EntityId) {
        self.crl.insert(subject);
    }

    pub fn is_revoked(&self, subject: &EntityId) -> bool {
        self.crl.contains(subject)
    }

    /// Connections that have not completed the DH handshake.
    pub fn load(&self) -> usize {
        self.conns.values().filter(|c| c.k_rs.is_none()).count()
    }

    pub fn puzzles_issued(&self) -> u64 {
        self.puzzles_issued
    }

    pub fn hour_of_day(&self, now: u64) -> u8 {
        ((u64::from(self.cfg.start_hour) + now / HOUR_MS) % 24) as u8
    }

    pub fn within_hours(&self, card: &EntityId, now: u64) -> bool {
        let (start, end) = self.cfg.hours_override.get(card).copied().unwrap_or(self.cfg.working_hours);
        let h = self.hour_of_day(now);
        start <= h && h < end
    }

    fn reject(&self, ctx: &mut Ctx<'_>, to: EntityId, reason: Reason) {
        ctx.send(Channel::Internet, to, Message::SessionReject { reason: reason.to_u8() });
    }

    fn k_rs(&self, reader: &EntityId) -> Result<SymmetricKey, Reason> {
        self.conns.get(reader).and_then(|c| c.k_rs).ok_or(Reason::NoSession)
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, msg: Message) {
        if channel != Channel::Internet {
            return;
        }
        let result = match msg {
            Message::ServerHello { reader_id, .. } => self.on_hello(ctx, from, reader_id),
            Message::PuzzleSolution { reader_id, t, solution } => {
                if reader_id != from {
                    Err(Reason::PuzzleWrong)
                } else {
                    verify_puzzle(
                        &self.secret,
                        &reader_id,
                        t,
                        &solution,
                        ctx.now,
                        self.cfg.puzzle_k,
                        self.cfg.puzzle_expiry_ms,
                    )
                    .map(|()| self.open_connection(ctx, from))
                }
            }
            Message::DhInit { cert, eph, sig } => self.on_dh_init(ctx, from, cert, eph, sig),
            Message::TokenRequest { reader_id, card_id, card_nonce, m_sc1, mac } => {
                self.on_token_request(ctx, from, reader_id, card_id, card_nonce, &m_sc1, &mac)
            }
            Message::SessionKeyRequest {
                reader_id,
                implant_id,
                card_id,
                reader_nonce,
                implant_nonce,
                card_nonce,
                server_nonce,
                m_sc2,
                mac,
            } => {
                let req = SessionRequest {
                    reader: reader_id,
                    implant: implant_id,
                    card: card_id,
                    reader_nonce,
                    implant_nonce,
                    card_nonce,
                    server_nonce,
                };
                self.on_session_request(ctx, from, req, m_sc2, &mac)
            }
            Message::BedsideKeyRequest { reader_id, implant_id, reader_nonce, implant_nonce, mac } => {
                self.on_bedside_request(ctx, from, reader_id, implant_id, reader_nonce, implant_nonce, &mac)
            }
            Message::BedsideReady { implant_id, mac } => self.on_bedside_marker(ctx, from, implant_id, &mac, false),
            Message::BedsideReport { ct } => self.on_bedside_report(ctx, from, &ct),
            Message::BedsideDone { implant_id, mac } => self.on_bedside_marker(ctx, from, implant_id, &mac, true),
            Message::RemoteMintRequest { origin, implant_id, sealed } => {
                return self.on_remote_mint(ctx, from, origin, implant_id, &sealed);
            }
            Message::RemoteMintReply { implant_id, reader_nonce, sealed } => {
                return self.on_remote_reply(ctx, from, implant_id, reader_nonce, Ok(&sealed));
            }
            Message::RemoteMintFailure { implant_id, reader_nonce, reason } => {
                return self.on_remote_reply(ctx, from, implant_id, reader_nonce, Err(Reason::from_u8(reason)));
            }
            _ => Ok(()),
        };
        if let Err(reason) = result {
            self.reject(ctx, from, reason);
        }
    }

    fn on_hello(&mut self, ctx: &mut Ctx<'_>, from: EntityId, reader_id: EntityId) -> Result<(), Reason> {
        if reader_id != from {
            return Err(Reason::CertInvalid);
        }
        if self.cfg.force_puzzle || self.load() >= self.cfg.load_threshold {
            let p = issue_puzzle(&self.secret, &reader_id, ctx.now, self.cfg.puzzle_k);
            self.puzzles_issued += 1;
            ctx.send(
                Channel::Internet,
                from,
                Message::PuzzleChallenge { hx: p.hx, partial_x: p.partial_x, t: p.t, k: p.k },
            );
        } else {
            self.open_connection(ctx, from);
        }
        Ok(())
    }

    fn open_connection(&mut self, ctx: &mut Ctx<'_>, reader: EntityId) {
        let server_nonce = Nonce::random(ctx.rng);
        self.conns.insert(reader, Connection { server_nonce, k_rs: None, token_issued: false });
        ctx.send(Channel::Internet, reader, Message::ServerNonce { server_id: self.id, nonce: server_nonce });
    }

    fn on_dh_init(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        cert: Certificate,
        eph_r: [u8; EPH_LEN],
        sig: crate::types::SignatureBytes,
    ) -> Result<(), Reason> {
        let conn = *self.conns.get(&from).ok_or(Reason::NoSession)?;
        if conn.k_rs.is_some() {
            return Err(Reason::Replay);
        }
        if !verify_certificate(&self.ca, &cert) || cert.subject != from {
            return Err(Reason::CertInvalid);
        }
        if self.crl.contains(&cert.subject) {
            return Err(Reason::CertRevoked);
        }
        if cert.not_after < ctx.now {
            return Err(Reason::CertInvalid);
        }
        if !verify_sig(&cert.public_key, &dh_init_bytes(&eph_r, conn.server_nonce, &self.id, &from), &sig) {
            return Err(Reason::CertInvalid);
        }
        let (secret, eph_s) = DhSecret::generate(ctx.rng);
        let transcript = dh_transcript(&eph_r, &eph_s, conn.server_nonce, &from, &self.id);
        let k_rs = dh_exchange(&secret, &eph_r, &transcript).map_err(|_| Reason::GroupElementInvalid)?;
        ctx.emit(ProtocolEvent::SecretMinted { key: k_rs });
        self.conns.insert(from, Connection { k_rs: Some(k_rs), ..conn });
        let sig = self.keypair.sign(&dh_reply_bytes(&eph_s, &eph_r, conn.server_nonce, &from));
        ctx.send(Channel::Internet, from, Message::DhReply { cert: self.cert, eph: eph_s, sig });
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn on_token_request(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        reader_id: EntityId,
        card_id: EntityId,
        card_nonce: Nonce,
        m_sc1: &[u8],
        tag: &MacTag,
    ) -> Result<(), Reason> {
        let k_rs = self.k_rs(&from)?;
        if reader_id != from || !verify_mac(&k_rs, &token_request_bytes(&reader_id, &card_id, card_nonce, m_sc1), tag) {
            return Err(Reason::MacFailure);
        }
        let k_sc = *self.cards.get(&card_id).ok_or(Reason::CertInvalid)?;
        let m = MSc1Plain::open(&k_sc, m_sc1, card_id.as_bytes()).map_err(|_| Reason::MacFailure)?;
        let conn = self.conns[&from];
        if m.reader_id != reader_id || m.card_nonce != card_nonce || m.server_nonce != conn.server_nonce {
            return Err(Reason::NonceMismatch);
        }
        if conn.token_issued {
            return Err(Reason::Replay);
        }
        if !verify_certificate(&self.ca, &m.cert) || m.cert.subject != card_id {
            return Err(Reason::CertInvalid);
        }
        if self.crl.contains(&card_id) {
            return Err(Reason::CardRevoked);
        }
        if m.cert.not_after < ctx.now {
            return Err(Reason::CardExpired);
        }
        let privilege = m.cert.privilege.unwrap_or(Privilege::ReadOnly);
        let k_rc = SymmetricKey::random(ctx.rng, KeyRole::ReaderCard);
        let token_r = TokenRPlain {
            reader_id,
            card_id,
            reader_nonce: m.reader_nonce,
            card_nonce,
            k_rc: *k_rc.as_bytes(),
            lifetime_ms: self.cfg.token_lifetime_ms,
            privilege,
        }
        .seal(&k_rs, reader_id.as_bytes());
        let token_c =
            TokenCPlain { reader_id, card_id, reader_nonce: m.reader_nonce, card_nonce, k_rc: *k_rc.as_bytes() }
                .seal(&k_sc, card_id.as_bytes());
        if let Some(c) = self.conns.get_mut(&from) {
            c.token_issued = true;
        }
        self.tokens.insert(
            (card_id, conn.server_nonce),
            TokenSession { reader: reader_id, card_nonce, privilege, consumed: false },
        );
        ctx.emit(ProtocolEvent::SecretMinted { key: k_rc });
        ctx.emit(ProtocolEvent::TokenIssued { reader: reader_id, card: card_id, privilege });
        ctx.send(Channel::Internet, from, Message::TokenGrant { token_r, token_c });
        Ok(())
    }

    fn on_session_request(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        req: SessionRequest,
        m_sc2: Vec<u8>,
        tag: &MacTag,
    ) -> Result<(), Reason> {
        let k_rs = self.k_rs(&from)?;
        let transcript = session_request_bytes(
            &req.reader,
            &req.implant,
            &req.card,
            req.reader_nonce,
            req.implant_nonce,
            req.card_nonce,
            req.server_nonce,
            &m_sc2,
        );
        if req.reader != from || !verify_mac(&k_rs, &transcript, tag) {
            return Err(Reason::MacFailure);
        }
        let token = *self.tokens.get(&(req.card, req.server_nonce)).ok_or(Reason::NoSession)?;
        if token.reader != req.reader || token.card_nonce != req.card_nonce {
            return Err(Reason::M2Invalid);
        }
        if token.consumed || self.seen_m_sc2.contains(&m_sc2) {
            return Err(Reason::Replay);
        }
        let k_sc = *self.cards.get(&req.card).ok_or(Reason::CertInvalid)?;
        let m = MSc2Plain::open(&k_sc, &m_sc2, req.card.as_bytes()).map_err(|_| Reason::M2Invalid)?;
        if m.pin_ok != 1 || m.card_nonce != req.card_nonce || m.server_nonce != req.server_nonce {
            return Err(Reason::M2Invalid);
        }
        if self.crl.contains(&req.card) {
            return Err(Reason::CardRevoked);
        }
        if self.crl.contains(&req.reader) {
            return Err(Reason::CertRevoked);
        }
        self.seen_m_sc2.insert(m_sc2);
        if let Some(t) = self.tokens.get_mut(&(req.card, req.server_nonce)) {
            t.consumed = true;
        }
        let mut privilege = token.privilege;
        if privilege > Privilege::ReadOnly
            && (ctx.origin_zone != NetworkZone::Hospital || !self.within_hours(&req.card, ctx.now))
        {
            privilege = Privilege::ReadOnly;
        }
        let k_ri = SymmetricKey::random(ctx.rng, KeyRole::ReaderImplant);
        ctx.emit(ProtocolEvent::SecretMinted { key: k_ri });
        let m_r = MRPlain {
            k_ri: *k_ri.as_bytes(),
            reader_nonce: req.reader_nonce,
            implant_nonce: req.implant_nonce,
            implant_id: req.implant,
            privilege,
        }
        .seal(&k_rs, req.reader.as_bytes());
        let local = self.implants.get(&req.implant).copied();
        let mode = if local.is_some() { SessionMode::Online } else { SessionMode::Remote };
        let mi = MIPlain {
            k_ri: *k_ri.as_bytes(),
            reader_nonce: req.reader_nonce,
            implant_nonce: req.implant_nonce,
            reader_id: req.reader,
            card_id: req.card,
            card_nonce: req.card_nonce,
            privilege,
            mode,
        };
        if let Some(k_si) = local {
            let m_i = mi.seal(&k_si, req.implant.as_bytes());
            return self.grant(ctx, req.reader, req.implant, privilege, mode, m_r, m_i);
        }
        if self.cfg.misbind_remote {
            let wrong = SymmetricKey::random(ctx.rng, KeyRole::ServerImplant);
            let m_i = mi.seal(&wrong, req.implant.as_bytes());
            return self.grant(ctx, req.reader, req.implant, privilege, mode, m_r, m_i);
        }
        let (manufacturer, link) = self.manufacturer.ok_or(Reason::ServerLinkFailure)?;
        let sealed = RemoteMintPlain {
            k_ri: mi.k_ri,
            reader_nonce: mi.reader_nonce,
            implant_nonce: mi.implant_nonce,
            reader_id: mi.reader_id,
            card_id: mi.card_id,
            card_nonce: mi.card_nonce,
            privilege,
            mode,
        }
        .seal(&link, &remote_mint_ad(&self.id, &req.implant));
        self.pending_remote.insert(
            (req.implant, req.reader_nonce),
            PendingRemote { reader: req.reader, privilege, m_r, sent_at: ctx.now },
        );
        ctx.send(
            Channel::Internet,
            manufacturer,
            Message::RemoteMintRequest { origin: self.id, implant_id: req.implant, sealed },
        );
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn grant(
        &mut self,
        ctx: &mut Ctx<'_>,
        reader: EntityId,
        implant: EntityId,
        privilege: Privilege,
        mode: SessionMode,
        m_r: Vec<u8>,
        m_i: Vec<u8>,
    ) -> Result<(), Reason> {
        ctx.emit(ProtocolEvent::KeyGranted { reader, implant, privilege, mode });
        ctx.send(Channel::Internet, reader, Message::SessionKeyGrant { m_r, m_i });
        Ok(())
    }

    /// Home-server side of a remote establishment: seal m_I under K_SI.
    fn on_remote_mint(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        origin: EntityId,
        implant: EntityId,
        sealed: &[u8],
    ) {
        let Some((manufacturer, link)) = self.manufacturer.filter(|(m, _)| *m == from) else { return };
        let Ok(p) = RemoteMintPlain::open(&link, sealed, &remote_mint_ad(&origin, &implant)) else { return };
        let fail = |ctx: &mut Ctx<'_>, reason: Reason| {
            ctx.send(
                Channel::Internet,
                manufacturer,
                Message::RemoteMintFailure {
                    implant_id: implant,
                    reader_nonce: p.reader_nonce,
                    reason: reason.to_u8(),
                },
            )
        };
        let Some(k_si) = self.implants.get(&implant).copied() else {
            return fail(ctx, Reason::UnknownImplant);
        };
        if !self.remote_served.insert((implant, p.reader_nonce, p.implant_nonce)) {
            return fail(ctx, Reason::Replay);
        }
        let m_i = MIPlain {
            k_ri: p.k_ri,
            reader_nonce: p.reader_nonce,
            implant_nonce: p.implant_nonce,
            reader_id: p.reader_id,
            card_id: p.card_id,
            card_nonce: p.card_nonce,
            privilege: p.privilege,
            mode: p.mode,
        }
        .seal(&k_si, implant.as_bytes());
        let sealed = RemoteReplyPlain { m_i }.seal(&link, &remote_reply_ad(&implant, p.reader_nonce));
        ctx.send(
            Channel::Internet,
            manufacturer,
            Message::RemoteMintReply { implant_id: implant, reader_nonce: p.reader_nonce, sealed },
        );
    }

    /// Origin-server side: forward the home server's m_I to the waiting reader.
    fn on_remote_reply(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        implant: EntityId,
        reader_nonce: Nonce,
        outcome: Result<&[u8], Reason>,
    ) {
        let Some((_, link)) = self.manufacturer.filter(|(m, _)| *m == from) else { return };
        let Some(p) = self.pending_remote.remove(&(implant, reader_nonce)) else { return };
        if ctx.now.saturating_sub(p.sent_at) > self.cfg.remote_timeout_ms {
            return self.reject(ctx, p.reader, Reason::Timeout);
        }
        let m_i = outcome.and_then(|sealed| {
            RemoteReplyPlain::open(&link, sealed, &remote_reply_ad(&implant, reader_nonce))
                .map(|r| r.m_i)
                .map_err(|_| Reason::ServerLinkFailure)
        });
        match m_i {
            Ok(m_i) => {
                ctx.emit(ProtocolEvent::KeyGranted {
                    reader: p.reader,
                    implant,
                    privilege: p.privilege,
                    mode: SessionMode::Remote,
                });
                ctx.send(Channel::Internet, p.reader, Message::SessionKeyGrant { m_r: p.m_r, m_i });
            }
            Err(reason) => self.reject(ctx, p.reader, reason),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_bedside_request(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        reader: EntityId,
        implant: EntityId,
        reader_nonce: Nonce,
        implant_nonce: Nonce,
        tag: &MacTag,
    ) -> Result<(), Reason> {
        let k_rs = self.k_rs(&from)?;
        if reader != from
            || !verify_mac(&k_rs, &bedside_request_bytes(&reader, &implant, reader_nonce, implant_nonce), tag)
        {
            return Err(Reason::MacFailure);
        }
        if !self.bedside_readers.contains(&reader) {
            return Err(Reason::PolicyViolation);
        }
        let k_si = *self.implants.get(&implant).ok_or(Reason::UnknownImplant)?;
        let k_ri = SymmetricKey::random(ctx.rng, KeyRole::ReaderImplant);
        ctx.emit(ProtocolEvent::SecretMinted { key: k_ri });
        let privilege = Privilege::ReadOnly;
        let m_r = MRPlain { k_ri: *k_ri.as_bytes(), reader_nonce, implant_nonce, implant_id: implant, privilege }
            .seal(&k_rs, reader.as_bytes());
        let m_i = MIPlain {
            k_ri: *k_ri.as_bytes(),
            reader_nonce,
            implant_nonce,
            reader_id: reader,
            card_id: EntityId::ZERO,
            card_nonce: Nonce(0),
            privilege,
            mode: SessionMode::Bedside,
        }
        .seal(&k_si, implant.as_bytes());
        let mut queue: VecDeque<Command> = self.cfg.bedside_commands.get(&implant).cloned().unwrap_or_default().into();
        queue.push_back(Command::finish());
        self.bedside.insert(
            implant,
            BedsideState { reader, reader_nonce, implant_nonce, queue, in_flight: None, awaiting_chunks: 0, bytes: 0 },
        );
        self.grant(ctx, reader, implant, privilege, SessionMode::Bedside, m_r, m_i)
    }

    fn on_bedside_marker(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        implant: EntityId,
        tag: &MacTag,
        done: bool,
    ) -> Result<(), Reason> {
        let k_rs = self.k_rs(&from)?;
        let label: &[u8] = if done { b"done" } else { b"ready" };
        if !verify_mac(&k_rs, &bedside_marker_bytes(label, &implant), tag) {
            return Err(Reason::MacFailure);
        }
        let state = self.bedside.get(&implant).filter(|b| b.reader == from).ok_or(Reason::NoSession)?;
        if done {
            let bytes = state.bytes;
            self.bedside.remove(&implant);
            ctx.emit(ProtocolEvent::BedsideCollected { implant, bytes });
            return Ok(());
        }
        self.push_bedside_command(ctx, implant, k_rs);
        Ok(())
    }

    fn push_bedside_command(&mut self, ctx: &mut Ctx<'_>, implant: EntityId, k_rs: SymmetricKey) {
        let Some(k_si) = self.implants.get(&implant).copied() else { return };
        let Some(state) = self.bedside.get_mut(&implant) else { return };
        let Some(cmd) = state.queue.pop_front() else { return };
        state.in_flight = Some(cmd);
        let server_mac = mac(&k_si, &server_mac_bytes(&cmd, state.reader_nonce, state.implant_nonce));
        let ct = BedsideCmdPlain {
            implant_id: implant,
            cmd,
            reader_nonce: state.reader_nonce,
            implant_nonce: state.implant_nonce,
        }
        .seal(&k_rs, implant.as_bytes());
        let reader = state.reader;
        ctx.send(Channel::Internet, reader, Message::BedsideCommand { ct, server_mac });
    }

    fn on_bedside_report(&mut self, ctx: &mut Ctx<'_>, from: EntityId, ct: &[u8]) -> Result<(), Reason> {
        let k_rs = self.k_rs(&from)?;
        let implant = self.bedside.iter().find(|(_, b)| b.reader == from).map(|(i, _)| *i).ok_or(Reason::NoSession)?;
        let r = BedsideReportPlain::open(&k_rs, ct, implant.as_bytes()).map_err(|_| Reason::MacFailure)?;
        if r.implant_id != implant {
            return Err(Reason::NonceMismatch);
        }
        let state = self.bedside.get_mut(&implant).expect("found above");
        let next = if r.seq == 0 {
            state.implant_nonce = state.implant_nonce.succ();
            let chunks = match (state.in_flight.take(), r.data.as_slice()) {
                (Some(cmd), [0, _, _, _, a, b, c, d]) if cmd == Command::read_log() => {
                    u32::from_be_bytes([*a, *b, *c, *d])
                }
                _ => 0,
            };
            state.awaiting_chunks = chunks;
            chunks == 0
        } else {
            state.bytes += r.data.len() as u64;
            r.seq >= state.awaiting_chunks
        };
        if next {
            self.push_bedside_command(ctx, implant, k_rs);
        }
        Ok(())
    }
}

struct SessionRequest {
    reader: EntityId,
    implant: EntityId,
    card: EntityId,
    reader_nonce: Nonce,
    implant_nonce: Nonce,
    card_nonce: Nonce,
    server_nonce: Nonce,
}
