use super::flash::signed_message;
use super::transcript::nonce_pair;
use super::{Agreement, Ctx, ProtocolEvent, Reason};
use crate::crypto::{hash, mac, verify_mac, KeyPair};
use crate::cryptogram::{CardCmdPlain, CardSigPlain, MSc1Plain, MSc2Plain, PinBlockPlain, Plaintext, TokenCPlain};
use crate::types::{Certificate, EntityId, KeyRole, Nonce, SymmetricKey};
use crate::wire::{Channel, MacTag, Message};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CardConfig {
    pub pin: u32,
    pub retry_limit: u8,
}

impl Default for CardConfig {
    fn default() -> Self {
        CardConfig { pin: 1234, retry_limit: 3 }
    }
}

/// State written to card flash at the end of reader-card authentication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CardFlash {
    pub reader_id: EntityId,
    pub reader_nonce: Nonce,
    pub card_nonce: Nonce,
    pub server_nonce: Nonce,
    pub k_rc: SymmetricKey,
}

#[derive(Clone, Copy, Debug)]
struct PendingAuth {
    reader_id: EntityId,
    reader_nonce: Nonce,
    server_nonce: Nonce,
    card_nonce: Nonce,
}

pub struct Card {
    id: EntityId,
    k_sc: SymmetricKey,
    keypair: KeyPair,
    cert: Certificate,
    pin_hash: [u8; 32],
    retry_limit: u8,
    failures: u8,
    locked: bool,
    flash: Option<CardFlash>,
    pending: Option<PendingAuth>,
    pin_verified: bool,
}

fn pin_digest(card: &EntityId, pin: u32) -> [u8; 32] {
    hash(&[b"imdsec/pin".as_slice(), card.as_bytes(), &pin.to_be_bytes()].concat())
}

impl Card {
    pub fn new(id: EntityId, k_sc: SymmetricKey, keypair: KeyPair, cert: Certificate, cfg: CardConfig) -> Self {
        Card {
            id,
            k_sc,
            keypair,
            cert,
            pin_hash: pin_digest(&id, cfg.pin),
            retry_limit: cfg.retry_limit,
            failures: 0,
            locked: false,
            flash: None,
            pending: None,
            pin_verified: false,
        }
    }

    pub fn id(&self) -> EntityId {
        self.id
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    pub fn flash(&self) -> Option<&CardFlash> {
        self.flash.as_ref()
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub fn pin_failures(&self) -> u8 {
        self.failures
    }

    /// Removal from the reader: volatile state is lost, flash is kept.
    pub fn power_cycle(&mut self) {
        self.pending = None;
        self.pin_verified = false;
    }

    fn reject(&self, ctx: &mut Ctx<'_>, to: EntityId, reason: Reason) {
        ctx.send(Channel::Contact, to, Message::CardError { reason: reason.to_u8() });
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, msg: Message) {
        if channel != Channel::Contact {
            return;
        }
        match msg {
            Message::CardChallenge { reader_id, reader_nonce, server_nonce } => {
                if self.locked {
                    return self.reject(ctx, from, Reason::CardLocked);
                }
                let card_nonce = Nonce::random(ctx.rng);
                self.pending = Some(PendingAuth { reader_id, reader_nonce, server_nonce, card_nonce });
                let m_sc1 = MSc1Plain { cert: self.cert, reader_id, reader_nonce, server_nonce, card_nonce }
                    .seal(&self.k_sc, self.id.as_bytes());
                ctx.send(Channel::Contact, from, Message::CardResponse { card_id: self.id, card_nonce, m_sc1 });
            }
            Message::CardKeyConfirm { mac: tag, token_c } => self.on_key_confirm(ctx, from, &tag, &token_c),
            Message::PinVerify { ct } => self.on_pin(ctx, from, &ct),
            Message::CardCommand { ct } => self.on_command(ctx, from, &ct),
            _ => {}
        }
    }

    fn on_key_confirm(&mut self, ctx: &mut Ctx<'_>, from: EntityId, tag: &MacTag, token_c: &[u8]) {
        let Some(p) = self.pending else { return self.reject(ctx, from, Reason::NoSession) };
        let token = match TokenCPlain::open(&self.k_sc, token_c, self.id.as_bytes()) {
            Ok(t) => t,
            Err(_) => return self.reject(ctx, from, Reason::MacFailure),
        };
        if token.reader_id != p.reader_id
            || token.card_id != self.id
            || token.reader_nonce != p.reader_nonce
            || token.card_nonce != p.card_nonce
        {
            return self.reject(ctx, from, Reason::NonceMismatch);
        }
        let k_rc = SymmetricKey::new(token.k_rc, KeyRole::ReaderCard);
        if !verify_mac(&k_rc, &nonce_pair(p.reader_nonce, p.card_nonce), tag) {
            return self.reject(ctx, from, Reason::MacFailure);
        }
        self.pending = None;
        self.pin_verified = false;
        self.flash = Some(CardFlash {
            reader_id: p.reader_id,
            reader_nonce: p.reader_nonce,
            card_nonce: p.card_nonce,
            server_nonce: p.server_nonce,
            k_rc,
        });
        let agreement = |label| Agreement {
            label,
            by: self.id,
            peer: p.reader_id,
            nonces: vec![p.reader_nonce.0, p.card_nonce.0],
            key_fp: k_rc.fingerprint(),
        };
        ctx.emit(ProtocolEvent::Request(agreement("rc-confirm")));
        ctx.emit(ProtocolEvent::Witness(agreement("cr-ack")));
        let ack = mac(&k_rc, &nonce_pair(p.reader_nonce.succ(), p.card_nonce.succ()));
        ctx.send(Channel::Contact, from, Message::CardKeyAck { mac: ack });
    }

    fn on_pin(&mut self, ctx: &mut Ctx<'_>, from: EntityId, ct: &[u8]) {
        let Some(f) = self.flash else { return self.reject(ctx, from, Reason::NoSession) };
        if self.locked {
            return self.reject(ctx, from, Reason::CardLocked);
        }
        if self.pin_verified {
            return self.reject(ctx, from, Reason::Replay);
        }
        let block = match PinBlockPlain::open(&f.k_rc, ct, b"") {
            Ok(b) => b,
            Err(_) => return self.reject(ctx, from, Reason::MacFailure),
        };
        if block.reader_nonce != f.reader_nonce || block.card_nonce != f.card_nonce {
            return self.reject(ctx, from, Reason::NonceMismatch);
        }
        if pin_digest(&self.id, block.pin) != self.pin_hash {
            self.failures += 1;
            if self.failures >= self.retry_limit {
                self.locked = true;
                return self.reject(ctx, from, Reason::CardLocked);
            }
            return self.reject(ctx, from, Reason::PinMismatch);
        }
        self.failures = 0;
        self.pin_verified = true;
        let m_sc2 = MSc2Plain { pin_ok: 1, card_nonce: f.card_nonce, server_nonce: f.server_nonce }
            .seal(&self.k_sc, self.id.as_bytes());
        ctx.send(Channel::Contact, from, Message::PinResult { m_sc2 });
    }

    fn on_command(&mut self, ctx: &mut Ctx<'_>, from: EntityId, ct: &[u8]) {
        let Some(f) = self.flash else { return self.reject(ctx, from, Reason::NoSession) };
        if !self.pin_verified {
            return self.reject(ctx, from, Reason::UserNotVerified);
        }
        let req = match CardCmdPlain::open(&f.k_rc, ct, b"") {
            Ok(r) => r,
            Err(_) => return self.reject(ctx, from, Reason::MacFailure),
        };
        if req.card_nonce != f.card_nonce {
            return self.reject(ctx, from, Reason::NonceMismatch);
        }
        let sig = self.keypair.sign(&signed_message(&req.cmd, req.reader_nonce, req.card_nonce));
        let ct = CardSigPlain { sig }.seal(&f.k_rc, b"");
        ctx.send(Channel::Contact, from, Message::CardSignature { ct });
    }
}
