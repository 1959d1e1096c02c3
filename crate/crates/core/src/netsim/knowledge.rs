//! Symbolic attacker knowledge: observed terms closed under decryption with
//! keys the attacker holds.

use std::collections::BTreeSet;

use crate::cryptogram::{
    AnswerPlain, BedsideCmdPlain, BedsideReportPlain, CardCmdPlain, ChunkPlain, CtKind, ImplantCmdPlain, MIPlain,
    MRPlain, PinBlockPlain, Plaintext, RemoteMintPlain, RemoteReplyPlain, TokenCPlain, TokenRPlain,
};
use crate::types::{EntityId, KeyRole, SymmetricKey, ID_LEN};
use crate::wire::Message;

#[derive(Clone, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Atom {
    Key([u8; 16]),
    Pin(u32),
    Cmd([u8; 4]),
    Ans([u8; 8]),
    Data(Vec<u8>),
}

#[derive(Clone, PartialEq, Eq, Debug)]
struct Sealed {
    kind: CtKind,
    bytes: Vec<u8>,
    ad: Vec<u8>,
}

#[derive(Clone, Default, Debug)]
pub struct Knowledge {
    atoms: BTreeSet<Atom>,
    ids: BTreeSet<EntityId>,
    clear: BTreeSet<Atom>,
    roots: Vec<Sealed>,
    sealed: Vec<Sealed>,
    opened: Vec<bool>,
    given: BTreeSet<[u8; 16]>,
    scanned: usize,
    seen_keys: usize,
    seen_ids: usize,
}

impl Knowledge {
    /// Knowledge seeded with keys the attacker was handed out of band.
    pub fn with_keys(keys: impl IntoIterator<Item = [u8; 16]>) -> Self {
        let mut k = Knowledge::default();
        for key in keys {
            k.given.insert(key);
            k.atoms.insert(Atom::Key(key));
        }
        k
    }

    pub fn atoms(&self) -> &BTreeSet<Atom> {
        &self.atoms
    }

    pub fn knows(&self, atom: &Atom) -> bool {
        self.atoms.contains(atom)
    }

    pub fn knows_key(&self, key: &SymmetricKey) -> bool {
        self.atoms.contains(&Atom::Key(*key.as_bytes()))
    }

    pub fn learn_id(&mut self, id: EntityId) {
        if self.ids.insert(id) {
            self.saturate();
        }
    }

    /// Adds a cleartext message and everything now derivable from it.
    pub fn observe(&mut self, msg: &Message) {
        match msg {
            Message::PlainCommand { cmd } => {
                if let Ok(c) = cmd.encode() {
                    self.clear.insert(Atom::Cmd(c));
                }
            }
            Message::PlainAnswer { ans } => {
                self.clear.insert(Atom::Ans(*ans));
            }
            Message::OfflineKey { key, .. } => {
                self.clear.insert(Atom::Key(*key));
            }
            _ => {}
        }
        self.atoms.extend(self.clear.iter().cloned());
        for id in clear_ids(msg) {
            self.ids.insert(id);
        }
        for c in msg.cryptograms() {
            let s = Sealed { kind: c.kind, bytes: c.sealed.to_vec(), ad: c.ad };
            self.roots.push(s.clone());
            self.sealed.push(s);
            self.opened.push(false);
        }
        self.saturate();
    }

    fn ad_candidates(&self, carried: &[u8]) -> Vec<Vec<u8>> {
        let mut out = vec![carried.to_vec()];
        if carried.is_empty() {
            out.extend(self.ids.iter().map(|id| id.as_bytes().to_vec()));
        }
        out
    }

    fn keys(&self) -> Vec<[u8; 16]> {
        self.atoms
            .iter()
            .filter_map(|a| match a {
                Atom::Key(k) => Some(*k),
                _ => None,
            })
            .collect()
    }

    /// Worklist closure. New sealed terms are tried against the current
    /// keys; every unopened term is retried only when a key or identity was
    /// learned since the last pass.
    fn saturate(&mut self) {
        let mut from = self.scanned;
        loop {
            let keys = self.keys();
            if keys.len() != self.seen_keys || self.ids.len() != self.seen_ids {
                from = 0;
            }
            self.seen_keys = keys.len();
            self.seen_ids = self.ids.len();
            let end = self.sealed.len();
            if !keys.is_empty() {
                for i in from..end {
                    if self.opened[i] {
                        continue;
                    }
                    let ads = self.ad_candidates(&self.sealed[i].ad);
                    if let Some((atoms, nested)) = try_open(&self.sealed[i], &keys, &ads) {
                        self.opened[i] = true;
                        self.atoms.extend(atoms);
                        for n in nested {
                            self.sealed.push(n);
                            self.opened.push(false);
                        }
                    }
                }
            }
            self.scanned = end;
            if self.keys().len() == self.seen_keys && self.sealed.len() == end {
                break;
            }
            from = end;
        }
    }

    /// Recomputes the closure from scratch by naive fixpoint iteration over
    /// every sealed term, key and candidate associated data. Used to
    /// cross-check the incremental closure.
    pub fn naive_closure(&self) -> BTreeSet<Atom> {
        let mut atoms: BTreeSet<Atom> = self.given.iter().map(|k| Atom::Key(*k)).collect();
        atoms.extend(self.clear.iter().cloned());
        let mut pool = self.roots.clone();
        loop {
            let keys: Vec<[u8; 16]> = atoms
                .iter()
                .filter_map(|a| match a {
                    Atom::Key(k) => Some(*k),
                    _ => None,
                })
                .collect();
            let mut grew = false;
            let mut extra = Vec::new();
            for s in &pool {
                for k in &keys {
                    for ad in self.ad_candidates(&s.ad) {
                        let Some((found, nested)) = try_open(s, std::slice::from_ref(k), &[ad]) else { continue };
                        for a in found {
                            grew |= atoms.insert(a);
                        }
                        for n in nested {
                            if !pool.contains(&n) && !extra.contains(&n) {
                                extra.push(n);
                            }
                        }
                    }
                }
            }
            grew |= !extra.is_empty();
            pool.extend(extra);
            if !grew {
                return atoms;
            }
        }
    }
}

fn clear_ids(msg: &Message) -> Vec<EntityId> {
    match msg {
        Message::ServerHello { reader_id, .. }
        | Message::PuzzleSolution { reader_id, .. }
        | Message::ImplantHello { reader_id, .. }
        | Message::OfflineRequest { reader_id } => vec![*reader_id],
        Message::ServerNonce { server_id, .. } => vec![*server_id],
        Message::DhInit { cert, .. } | Message::DhReply { cert, .. } => vec![cert.subject],
        Message::TokenRequest { reader_id, card_id, .. } => vec![*reader_id, *card_id],
        Message::SessionKeyRequest { reader_id, implant_id, card_id, .. } => vec![*reader_id, *implant_id, *card_id],
        Message::BedsideKeyRequest { reader_id, implant_id, .. } => vec![*reader_id, *implant_id],
        Message::BedsideReady { implant_id, .. }
        | Message::BedsideDone { implant_id, .. }
        | Message::ImplantNonce { implant_id, .. }
        | Message::RemoteMintReply { implant_id, .. }
        | Message::RemoteMintFailure { implant_id, .. } => vec![*implant_id],
        Message::RemoteMintRequest { origin, implant_id, .. } => vec![*origin, *implant_id],
        Message::CardChallenge { reader_id, .. } => vec![*reader_id],
        Message::CardResponse { card_id, .. } => vec![*card_id],
        Message::OfflineConfirm { reader_id, card_id, .. } => vec![*reader_id, *card_id],
        _ => Vec::new(),
    }
}

type Opened = (Vec<Atom>, Vec<Sealed>);

fn try_open(s: &Sealed, keys: &[[u8; 16]], ads: &[Vec<u8>]) -> Option<Opened> {
    for k in keys {
        let key = SymmetricKey::new(*k, KeyRole::ReaderImplant);
        for ad in ads {
            if let Some(out) = extract(s.kind, &key, &s.bytes, ad) {
                return Some(out);
            }
        }
    }
    None
}

fn extract(kind: CtKind, key: &SymmetricKey, ct: &[u8], ad: &[u8]) -> Option<Opened> {
    let cmd = |c: crate::types::Command| c.encode().map(Atom::Cmd).ok();
    let atoms = match kind {
        CtKind::TokenR => vec![Atom::Key(TokenRPlain::open(key, ct, ad).ok()?.k_rc)],
        CtKind::TokenC => vec![Atom::Key(TokenCPlain::open(key, ct, ad).ok()?.k_rc)],
        CtKind::PinBlock => vec![Atom::Pin(PinBlockPlain::open(key, ct, ad).ok()?.pin)],
        CtKind::MR => vec![Atom::Key(MRPlain::open(key, ct, ad).ok()?.k_ri)],
        CtKind::MI => vec![Atom::Key(MIPlain::open(key, ct, ad).ok()?.k_ri)],
        CtKind::RemoteMint => vec![Atom::Key(RemoteMintPlain::open(key, ct, ad).ok()?.k_ri)],
        CtKind::CardCmd => cmd(CardCmdPlain::open(key, ct, ad).ok()?.cmd).into_iter().collect(),
        CtKind::ImplantCmd => cmd(ImplantCmdPlain::open(key, ct, ad).ok()?.cmd).into_iter().collect(),
        CtKind::BedsideCmd => cmd(BedsideCmdPlain::open(key, ct, ad).ok()?.cmd).into_iter().collect(),
        CtKind::Answer => vec![Atom::Ans(AnswerPlain::open(key, ct, ad).ok()?.ans)],
        CtKind::AnswerChunk => vec![Atom::Data(ChunkPlain::open(key, ct, ad).ok()?.data)],
        CtKind::BedsideReport => {
            let r = BedsideReportPlain::open(key, ct, ad).ok()?;
            match <[u8; 8]>::try_from(r.data.as_slice()) {
                Ok(ans) if r.seq == 0 => vec![Atom::Ans(ans)],
                _ => vec![Atom::Data(r.data)],
            }
        }
        CtKind::RemoteReply => {
            let r = RemoteReplyPlain::open(key, ct, ad).ok()?;
            let implant = ad.get(..ID_LEN).map(<[u8]>::to_vec).unwrap_or_default();
            return Some((Vec::new(), vec![Sealed { kind: CtKind::MI, bytes: r.m_i, ad: implant }]));
        }
        CtKind::MSc1 | CtKind::MSc2 | CtKind::MRi | CtKind::CardSig => {
            crate::crypto::aead_decrypt(key, ct, ad).ok()?;
            Vec::new()
        }
    };
    Some((atoms, Vec::new()))
}
