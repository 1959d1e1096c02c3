use std::collections::HashMap;

use super::{Ctx, Reason};
use crate::cryptogram::{remote_mint_ad, remote_reply_ad, Plaintext, RemoteMintPlain, RemoteReplyPlain};
use crate::types::{EntityId, Nonce, SymmetricKey};
use crate::wire::{Channel, Message};

/// Relays key material between hospital servers for implants registered elsewhere.
pub struct Manufacturer {
    id: EntityId,
    registry: HashMap<EntityId, EntityId>,
    links: HashMap<EntityId, SymmetricKey>,
    pending: HashMap<(EntityId, Nonce), EntityId>,
    relayed: u64,
}

impl Manufacturer {
    pub fn new(id: EntityId) -> Self {
        Manufacturer { id, registry: HashMap::new(), links: HashMap::new(), pending: HashMap::new(), relayed: 0 }
    }

    pub fn id(&self) -> EntityId {
        self.id
    }

    pub fn register_implant(&mut self, implant: EntityId, home: EntityId) {
        self.registry.insert(implant, home);
    }

    pub fn link_server(&mut self, server: EntityId, key: SymmetricKey) {
        self.links.insert(server, key);
    }

    pub fn home_of(&self, implant: &EntityId) -> Option<EntityId> {
        self.registry.get(implant).copied()
    }

    pub fn relayed(&self) -> u64 {
        self.relayed
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: EntityId, channel: Channel, msg: Message) {
        if channel != Channel::Internet {
            return;
        }
        let Some(from_link) = self.links.get(&from).copied() else { return };
        match msg {
            Message::RemoteMintRequest { origin, implant_id, sealed } if origin == from => {
                let ad = remote_mint_ad(&origin, &implant_id);
                let Ok(p) = RemoteMintPlain::open(&from_link, &sealed, &ad) else { return };
                let home = self.home_of(&implant_id).and_then(|h| self.links.get(&h).map(|k| (h, *k)));
                let Some((home, home_link)) = home else {
                    let reason = Reason::UnknownImplant.to_u8();
                    return ctx.send(
                        Channel::Internet,
                        from,
                        Message::RemoteMintFailure { implant_id, reader_nonce: p.reader_nonce, reason },
                    );
                };
                self.pending.insert((implant_id, p.reader_nonce), origin);
                self.relayed += 1;
                let sealed = p.seal(&home_link, &ad);
                ctx.send(Channel::Internet, home, Message::RemoteMintRequest { origin, implant_id, sealed });
            }
            Message::RemoteMintReply { implant_id, reader_nonce, sealed } => {
                let ad = remote_reply_ad(&implant_id, reader_nonce);
                let Ok(r) = RemoteReplyPlain::open(&from_link, &sealed, &ad) else { return };
                let Some(origin) = self.pending.remove(&(implant_id, reader_nonce)) else { return };
                let Some(origin_link) = self.links.get(&origin) else { return };
                let sealed = r.seal(origin_link, &ad);
                ctx.send(Channel::Internet, origin, Message::RemoteMintReply { implant_id, reader_nonce, sealed });
            }
            Message::RemoteMintFailure { implant_id, reader_nonce, reason } => {
                if let Some(origin) = self.pending.remove(&(implant_id, reader_nonce)) {
                    ctx.send(
                        Channel::Internet,
                        origin,
                        Message::RemoteMintFailure { implant_id, reader_nonce, reason },
                    );
                }
            }
            _ => {}
        }
    }
}
