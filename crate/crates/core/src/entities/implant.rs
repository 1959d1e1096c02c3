use std::sync::Arc;

use super::flash::{SignatureFlash, SignatureRecord, DEFAULT_FLASH_BYTES};
use super::transcript::{confirm_bytes, offline_confirm_bytes, server_mac_bytes};
use super::{Agreement, Ctx, ProtocolEvent, Reason};
use crate::crypto::{mac, verify_mac, ImplementationClass};
use crate::cryptogram::{AnswerPlain, ChunkPlain, ImplantCmdPlain, MIPlain, MRiPlain, Plaintext};
use crate::energy::{CostTable, EnergyLedger, LedgerConfig, ProtocolStep, SecurityClass};
use crate::types::{
    Command, CommandKind, EntityId, KeyRole, Nonce, Privilege, SessionMode, SignatureBytes, SymmetricKey, ANS_LEN,
};
use crate::wire::{Channel, MacTag, Message};

/// Outstanding handshakes kept per implant.
pub const MAX_PENDING: usize = 4;

/// Privilege ceiling for sessions paired over the out-of-band port.
pub const OFFLINE_PRIVILEGE_CAP: Privilege = Privilege::ReadWrite;

#[derive(Clone, Debug)]
pub struct ImplantConfig {
    /// Whether offline commands must carry a card signature. Fixed at deployment.
    pub nr_required: bool,
    pub flash_bytes: usize,
    /// Session lifetime, T_L.
    pub session_lifetime_ms: u64,
    pub ledger: LedgerConfig,
    pub class: ImplementationClass,
    /// Size of the data log returned by a log read.
    pub log_bytes: u64,
    pub chunk_bytes: usize,
}

impl Default for ImplantConfig {
    fn default() -> Self {
        ImplantConfig {
            nr_required: true,
            flash_bytes: DEFAULT_FLASH_BYTES,
            session_lifetime_ms: 3_600_000,
            ledger: LedgerConfig::default(),
            class: ImplementationClass::HardwareAccelerated,
            log_bytes: 3_000_000,
            chunk_bytes: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImplantSession {
    pub reader_id: EntityId,
    pub card_id: EntityId,
    pub card_nonce: Nonce,
    pub privilege: Privilege,
    pub mode: SessionMode,
    pub key: SymmetricKey,
    pub reader_nonce: Nonce,
    /// Expected N_I of the next command.
    pub implant_nonce: Nonce,
    pub established_at: u64,
}

#[derive(Clone, Copy, Debug)]
struct PendingHandshake {
    reader_id: EntityId,
    reader_nonce: Nonce,
    implant_nonce: Nonce,
}

#[derive(Clone, Copy, Debug)]
struct OfflinePending {
    reader_id: EntityId,
    key: SymmetricKey,
    implant_nonce: Nonce,
}

/// Authenticator accompanying a main-phase command.
enum Auth {
    Signed(SignatureBytes),
    ServerMac(MacTag),
    Unsigned,
}

/// Therapy state the commands act on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TherapyState {
    pub setting: u32,
    pub suspended: bool,
    pub firmware: u32,
}

pub struct Implant {
    id: EntityId,
    k_si: SymmetricKey,
    nr_required: bool,
    cfg: ImplantConfig,
    costs: Arc<CostTable>,
    pending: Vec<PendingHandshake>,
    offline: Option<OfflinePending>,
    session: Option<ImplantSession>,
    flash: SignatureFlash,
    ledger: EnergyLedger,
    therapy: TherapyState,
}

impl Implant {
    pub fn new(id: EntityId, k_si: SymmetricKey, cfg: ImplantConfig, costs: Arc<CostTable>) -> Self {
        Implant {
            id,
            k_si,
            nr_required: cfg.nr_required,
            flash: SignatureFlash::new(cfg.flash_bytes),
            ledger: EnergyLedger::new(cfg.ledger),
            cfg,
            costs,
            pending: Vec::new(),
            offline: None,
            session: None,
            therapy: TherapyState::default(),
        }
    }

    pub fn id(&self) -> EntityId {
        self.id
    }

    pub fn nr_required(&self) -> bool {
        self.nr_required
    }

    pub fn session(&self) -> Option<&ImplantSession> {
        self.session.as_ref()
    }

    pub fn flash(&self) -> &SignatureFlash {
        &self.flash
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn therapy(&self) -> TherapyState {
        self.therapy
    }

    fn class(&self) -> SecurityClass {
        self.cfg.class.into()
    }

    fn step_pj(&self, step: ProtocolStep) -> u64 {
        self.costs.step_energy_pj(self.class(), step).expect("cost table covers the implant class")
    }

    /// Charges the steps together, or defers the whole operation.
    fn charge(&mut self, steps: &[ProtocolStep], authenticated: bool) -> bool {
        let total: u64 = steps.iter().map(|s| self.step_pj(*s)).sum();
        if !authenticated && !self.ledger.can_afford_pre_auth(total) {
            self.ledger.charge(steps[0], total, false);
            return false;
        }
        for s in steps {
            let pj = self.step_pj(*s);
            self.ledger.charge(*s, pj, authenticated);
        }
        true
    }

    fn session_live(&mut self, ctx: &mut Ctx<'_>) -> bool {
        let Some(s) = &self.session else { return false };
        if ctx.now.saturating_sub(s.established_at) >= self.cfg.session_lifetime_ms {
            self.session = None;
            ctx.emit(ProtocolEvent::SessionClosed { by: self.id });
            return false;
        }
        true
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, msg: Message) {
        if matches!(channel, Channel::Rf | Channel::Oob) {
            self.ledger.harvest_frame();
        }
        match msg {
            Message::ImplantHello { reader_id, reader_nonce } if channel == Channel::Rf => {
                self.on_hello(ctx, from, reader_id, reader_nonce)
            }
            Message::ImplantKeyDelivery { m_i, m_ri } if channel == Channel::Rf => {
                self.on_key_delivery(ctx, from, &m_i, &m_ri)
            }
            Message::OfflineRequest { reader_id } => self.on_offline_request(ctx, from, channel, reader_id),
            Message::OfflineConfirm { reader_id, card_id, card_nonce, reader_nonce, mac } if channel == Channel::Rf => {
                self.on_offline_confirm(ctx, from, reader_id, card_id, card_nonce, reader_nonce, &mac)
            }
            Message::ImplantCommandSigned { ct, sig } if channel == Channel::Rf => {
                self.on_command(ctx, from, &ct, &sig.0, Auth::Signed(sig))
            }
            Message::ImplantCommandServerMac { ct, server_mac } if channel == Channel::Rf => {
                self.on_command(ctx, from, &ct, &server_mac, Auth::ServerMac(server_mac))
            }
            Message::ImplantCommandUnsigned { ct } if channel == Channel::Rf => {
                self.on_command(ctx, from, &ct, &[], Auth::Unsigned)
            }
            _ => {}
        }
    }

    fn on_hello(&mut self, ctx: &mut Ctx<'_>, from: EntityId, reader_id: EntityId, reader_nonce: Nonce) {
        if !self.charge(&[ProtocolStep::HelloRx, ProtocolStep::NonceTx], false) {
            return;
        }
        let implant_nonce = Nonce::random(ctx.rng);
        self.pending.retain(|p| p.reader_id != reader_id);
        if self.pending.len() == MAX_PENDING {
            self.pending.remove(0);
        }
        self.pending.push(PendingHandshake { reader_id, reader_nonce, implant_nonce });
        ctx.send(Channel::Rf, from, Message::ImplantNonce { implant_id: self.id, implant_nonce });
    }

    fn on_key_delivery(&mut self, ctx: &mut Ctx<'_>, from: EntityId, m_i: &[u8], m_ri: &[u8]) {
        // Charged before verification.
        if !self.charge(&[ProtocolStep::KeyDeliveryRx, ProtocolStep::KeyConfirm], false) {
            return;
        }
        let mi = match MIPlain::open(&self.k_si, m_i, self.id.as_bytes()) {
            Ok(mi) => mi,
            Err(_) => return ctx.abort(Reason::MacFailure),
        };
        let Some(idx) = self.pending.iter().position(|p| p.reader_id == mi.reader_id) else {
            return ctx.abort(Reason::NoSession);
        };
        let p = self.pending[idx];
        if mi.reader_nonce != p.reader_nonce || mi.implant_nonce != p.implant_nonce {
            return ctx.abort(Reason::NonceMismatch);
        }
        if mi.mode == SessionMode::Offline {
            return ctx.abort(Reason::PolicyViolation);
        }
        let key = SymmetricKey::new(mi.k_ri, KeyRole::ReaderImplant);
        match MRiPlain::open(&key, m_ri, b"") {
            Ok(r) if r.reader_nonce == p.reader_nonce && r.implant_nonce == p.implant_nonce => {}
            Ok(_) => return ctx.abort(Reason::NonceMismatch),
            Err(_) => return ctx.abort(Reason::MacFailure),
        }
        self.pending.remove(idx);
        let privilege = if mi.mode == SessionMode::Bedside { Privilege::ReadOnly } else { mi.privilege };
        self.establish(
            ctx,
            from,
            ImplantSession {
                reader_id: mi.reader_id,
                card_id: mi.card_id,
                card_nonce: mi.card_nonce,
                privilege,
                mode: mi.mode,
                key,
                reader_nonce: p.reader_nonce,
                implant_nonce: p.implant_nonce,
                established_at: ctx.now,
            },
            Message::ImplantKeyConfirm { mac: mac(&key, &confirm_bytes(p.implant_nonce, p.reader_nonce)) },
        );
    }

    fn establish(&mut self, ctx: &mut Ctx<'_>, to: EntityId, s: ImplantSession, reply: Message) {
        let agreement = |label| Agreement {
            label,
            by: self.id,
            peer: s.reader_id,
            nonces: vec![s.reader_nonce.0, s.implant_nonce.0],
            key_fp: s.key.fingerprint(),
        };
        ctx.emit(ProtocolEvent::Request(agreement("ri-key")));
        ctx.emit(ProtocolEvent::Witness(agreement("ir-confirm")));
        ctx.emit(ProtocolEvent::SessionEstablished {
            implant: self.id,
            reader: s.reader_id,
            privilege: s.privilege,
            mode: s.mode,
        });
        self.session = Some(s);
        ctx.send(Channel::Rf, to, reply);
    }

    fn on_offline_request(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, reader_id: EntityId) {
        if channel != Channel::Oob {
            return ctx.abort(Reason::OobUnavailable);
        }
        if !self.charge(&[ProtocolStep::HelloRx, ProtocolStep::NonceTx], false) {
            return;
        }
        let key = SymmetricKey::random(ctx.rng, KeyRole::ReaderImplant);
        let implant_nonce = Nonce::random(ctx.rng);
        ctx.emit(ProtocolEvent::SecretMinted { key });
        self.offline = Some(OfflinePending { reader_id, key, implant_nonce });
        ctx.send(Channel::Oob, from, Message::OfflineKey { key: *key.as_bytes(), implant_nonce, implant_id: self.id });
    }

    #[allow(clippy::too_many_arguments)]
    fn on_offline_confirm(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: EntityId,
        reader_id: EntityId,
        card_id: EntityId,
        card_nonce: Nonce,
        reader_nonce: Nonce,
        tag: &MacTag,
    ) {
        if !self.charge(&[ProtocolStep::KeyDeliveryRx, ProtocolStep::KeyConfirm], false) {
            return;
        }
        let Some(p) = self.offline.filter(|p| p.reader_id == reader_id) else {
            return ctx.abort(Reason::OobUnavailable);
        };
        let msg = offline_confirm_bytes(&reader_id, &card_id, card_nonce, reader_nonce, p.implant_nonce);
        if !verify_mac(&p.key, &msg, tag) {
            return ctx.abort(Reason::MacFailure);
        }
        self.offline = None;
        self.establish(
            ctx,
            from,
            ImplantSession {
                reader_id,
                card_id,
                card_nonce,
                privilege: OFFLINE_PRIVILEGE_CAP,
                mode: SessionMode::Offline,
                key: p.key,
                reader_nonce,
                implant_nonce: p.implant_nonce,
                established_at: ctx.now,
            },
            Message::OfflineConfirmAck { mac: mac(&p.key, &confirm_bytes(p.implant_nonce, reader_nonce)) },
        );
    }

    fn on_command(&mut self, ctx: &mut Ctx<'_>, from: EntityId, ct: &[u8], ad: &[u8], auth: Auth) {
        if !self.session_live(ctx) {
            if self.charge(&[ProtocolStep::CommandRx], false) {
                ctx.emit(ProtocolEvent::CommandRejected { implant: self.id, cmd: None, reason: Reason::NoSession });
            }
            return;
        }
        self.charge(&[ProtocolStep::CommandRx], true);
        let s = self.session.clone().expect("live session");
        let pt = match ImplantCmdPlain::open(&s.key, ct, ad) {
            Ok(pt) => pt,
            Err(_) => {
                return ctx.emit(ProtocolEvent::CommandRejected {
                    implant: self.id,
                    cmd: None,
                    reason: Reason::MacFailure,
                })
            }
        };
        if pt.reader_nonce != s.reader_nonce || pt.implant_nonce != s.implant_nonce {
            return ctx.emit(ProtocolEvent::CommandRejected {
                implant: self.id,
                cmd: Some(pt.cmd),
                reason: Reason::Replay,
            });
        }
        let cmd = pt.cmd;
        let verdict = self.admit(&s, &cmd, &auth);
        let mut ans = [0u8; ANS_LEN];
        let mut chunks = Vec::new();
        match verdict {
            Ok(()) => {
                if cmd.required_privilege() > Privilege::ReadOnly {
                    if let Auth::Signed(sig) = auth {
                        if s.mode != SessionMode::Offline || self.nr_required {
                            let record = SignatureRecord {
                                sig,
                                cmd,
                                card_id: s.card_id,
                                card_nonce: s.card_nonce,
                                reader_nonce: s.reader_nonce,
                            };
                            if let Some(slot) = self.flash.store(record) {
                                ctx.emit(ProtocolEvent::SignatureStored { implant: self.id, slot, record });
                            }
                        }
                    }
                }
                ans = self.execute(&cmd);
                if cmd.kind == CommandKind::ReadStatus && cmd.arg == Command::READ_LOG_ARG {
                    chunks = self.log_chunks();
                    ans[4..8].copy_from_slice(&(chunks.len() as u32).to_be_bytes());
                }
                ctx.emit(ProtocolEvent::CommandExecuted {
                    implant: self.id,
                    cmd,
                    granted: s.privilege,
                    mode: s.mode,
                    ans,
                });
            }
            Err(reason) => {
                ans[0] = reason.to_u8();
                ctx.emit(ProtocolEvent::CommandRejected { implant: self.id, cmd: Some(cmd), reason });
            }
        }
        self.charge(&[ProtocolStep::AnswerTx], true);
        let reply = AnswerPlain { ans, implant_nonce: s.implant_nonce, reader_nonce: s.reader_nonce };
        let sealed = reply.seal(&s.key, b"");
        ctx.send(Channel::Rf, from, Message::ImplantAnswer { ct: sealed.try_into().expect("answer size is fixed") });
        for (seq, data) in chunks.into_iter().enumerate() {
            let c = ChunkPlain { seq: seq as u32, implant_nonce: s.implant_nonce, reader_nonce: s.reader_nonce, data };
            ctx.send(Channel::Rf, from, Message::ImplantAnswerChunk { ct: c.seal(&s.key, b"") });
        }
        if let Some(live) = self.session.as_mut() {
            live.implant_nonce = live.implant_nonce.succ();
        }
        if verdict.is_ok() && cmd.kind == CommandKind::Finish {
            self.session = None;
            ctx.emit(ProtocolEvent::SessionClosed { by: self.id });
        }
    }

    fn admit(&self, s: &ImplantSession, cmd: &Command, auth: &Auth) -> Result<(), Reason> {
        match (s.mode, auth) {
            (SessionMode::Online | SessionMode::Remote, Auth::Signed(_)) => {}
            (SessionMode::Online | SessionMode::Remote, _) => return Err(Reason::PolicyViolation),
            (SessionMode::Bedside, Auth::ServerMac(tag)) => {
                let msg = server_mac_bytes(cmd, s.reader_nonce, s.implant_nonce);
                if !verify_mac(&self.k_si, &msg, tag) {
                    return Err(Reason::MacFailure);
                }
            }
            (SessionMode::Bedside, _) => return Err(Reason::MacFailure),
            (SessionMode::Offline, Auth::Signed(_)) => {}
            (SessionMode::Offline, Auth::Unsigned) if !self.nr_required => {}
            (SessionMode::Offline, _) => return Err(Reason::FlagMismatch),
        }
        if cmd.required_privilege() > s.privilege {
            return Err(Reason::PrivilegeViolation);
        }
        Ok(())
    }

    fn execute(&mut self, cmd: &Command) -> [u8; ANS_LEN] {
        match cmd.kind {
            CommandKind::WriteTherapy => self.therapy.setting = cmd.arg,
            CommandKind::Suspend => self.therapy.suspended = true,
            CommandKind::Resume => self.therapy.suspended = false,
            CommandKind::FirmwareUpdate => self.therapy.firmware = cmd.arg,
            CommandKind::ReadStatus | CommandKind::Finish => {}
        }
        let mut ans = [0u8; ANS_LEN];
        ans[1] = u8::from(self.therapy.suspended);
        ans[2..4].copy_from_slice(&(self.therapy.firmware as u16).to_be_bytes());
        ans[4..8].copy_from_slice(&self.therapy.setting.to_be_bytes());
        ans
    }

    fn log_chunks(&self) -> Vec<Vec<u8>> {
        let total = self.cfg.log_bytes as usize;
        let seed = self.id.as_bytes()[0];
        let mut out = Vec::with_capacity(total.div_ceil(self.cfg.chunk_bytes.max(1)));
        let mut at = 0usize;
        while at < total {
            let n = self.cfg.chunk_bytes.min(total - at);
            out.push((at..at + n).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect());
            at += n;
        }
        out
    }
}
