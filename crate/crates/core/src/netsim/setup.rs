//! Builds a populated hospital world from a compact description.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::world::World;
use crate::crypto::{CertificateAuthority, KeyPair};
use crate::energy::table::CostTable;
use crate::entities::{
    Card, CardConfig, Implant, ImplantConfig, Manufacturer, Node, Reader, ReaderConfig, ReaderKind, Server,
    ServerConfig,
};
use crate::types::{EntityId, KeyRole, NetworkZone, Privilege, PublicKeyBytes, SymmetricKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ids {
    pub server: EntityId,
    /// Hospital the implant is registered at when it is not `server`.
    pub remote_server: EntityId,
    pub manufacturer: EntityId,
    pub implant: EntityId,
    pub reader: EntityId,
    pub bedside_reader: EntityId,
    pub card: EntityId,
}

impl Default for Ids {
    fn default() -> Self {
        Ids {
            server: EntityId::from_label("hospital-a"),
            remote_server: EntityId::from_label("hospital-b"),
            manufacturer: EntityId::from_label("manufacturer"),
            implant: EntityId::from_label("imd-1"),
            reader: EntityId::from_label("reader-1"),
            bedside_reader: EntityId::from_label("bedside-1"),
            card: EntityId::from_label("card-1"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub seed: u64,
    pub reader_kind: ReaderKind,
    pub reader_zone: NetworkZone,
    pub card_privilege: Privilege,
    /// Whether the card is registered with the server.
    pub card_issued: bool,
    pub card_revoked: bool,
    /// Virtual-clock expiry of the card certificate.
    pub card_not_after: u64,
    /// Implant registered at another hospital, reached through the manufacturer.
    pub remote_implant: bool,
    /// Implant known to the manufacturer registry.
    pub implant_in_registry: bool,
    pub implant: ImplantConfig,
    pub server: ServerConfig,
    pub reader: ReaderConfig,
    pub card: CardConfig,
    pub costs: Arc<CostTable>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 1,
            reader_kind: ReaderKind::Valid,
            reader_zone: NetworkZone::Hospital,
            card_privilege: Privilege::ReadWrite,
            card_issued: true,
            card_revoked: false,
            card_not_after: u64::MAX,
            remote_implant: false,
            implant_in_registry: true,
            implant: ImplantConfig::default(),
            server: ServerConfig::default(),
            reader: ReaderConfig::default(),
            card: CardConfig::default(),
            costs: Arc::new(CostTable::default()),
        }
    }
}

/// A built world plus the facts tests need to judge it.
pub struct Setup {
    pub world: World,
    pub ids: Ids,
    pub card_public: PublicKeyBytes,
    pub pin: u32,
    pub k_si: SymmetricKey,
    pub k_sc: SymmetricKey,
}

pub fn build(cfg: &WorldConfig) -> Setup {
    let ids = Ids::default();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x1D5E_C0DE);
    let ca = CertificateAuthority::new(&mut rng);
    let rogue = CertificateAuthority::new(&mut rng);
    let mut world = World::new(cfg.seed);

    let mut secret = [0u8; 16];
    let server = |rng: &mut ChaCha20Rng, id: EntityId, secret: [u8; 16], cfg: ServerConfig| {
        let kp = KeyPair::generate(rng);
        let cert = ca.issue(id, None, kp.public(), u64::MAX);
        Server::new(id, kp, cert, ca.public(), secret, cfg)
    };
    rng.fill_bytes(&mut secret);
    let mut local = server(&mut rng, ids.server, secret, cfg.server.clone());
    rng.fill_bytes(&mut secret);
    let mut remote = server(&mut rng, ids.remote_server, secret, ServerConfig::default());
    let mut manufacturer = Manufacturer::new(ids.manufacturer);
    for (srv, id) in [(&mut local, ids.server), (&mut remote, ids.remote_server)] {
        let link = SymmetricKey::random(&mut rng, KeyRole::ServerLink);
        srv.link_manufacturer(ids.manufacturer, link);
        manufacturer.link_server(id, link);
    }

    let k_si = SymmetricKey::random(&mut rng, KeyRole::ServerImplant);
    let home = if cfg.remote_implant { ids.remote_server } else { ids.server };
    if cfg.remote_implant {
        remote.register_implant(ids.implant, k_si);
    } else {
        local.register_implant(ids.implant, k_si);
    }
    if cfg.implant_in_registry {
        manufacturer.register_implant(ids.implant, home);
    }
    let implant = Implant::new(ids.implant, k_si, cfg.implant.clone(), cfg.costs.clone());

    let reader_kp = KeyPair::generate(&mut rng);
    let issuer = if cfg.reader_kind == ReaderKind::Forged { &rogue } else { &ca };
    let reader_cert = issuer.issue(ids.reader, None, reader_kp.public(), u64::MAX);
    let reader = Reader::new(ids.reader, cfg.reader_kind, reader_kp, reader_cert, ca.public(), cfg.reader);
    if cfg.reader_kind == ReaderKind::Stolen {
        local.revoke(ids.reader);
    }

    let bedside_kp = KeyPair::generate(&mut rng);
    let bedside_cert = ca.issue(ids.bedside_reader, None, bedside_kp.public(), u64::MAX);
    let bedside = Reader::new(ids.bedside_reader, ReaderKind::Valid, bedside_kp, bedside_cert, ca.public(), cfg.reader);
    local.register_bedside_reader(ids.bedside_reader);

    let card_kp = KeyPair::generate(&mut rng);
    let card_public = card_kp.public();
    let card_cert = ca.issue(ids.card, Some(cfg.card_privilege), card_public, cfg.card_not_after);
    let k_sc = SymmetricKey::random(&mut rng, KeyRole::ServerCard);
    if cfg.card_issued {
        local.register_card(ids.card, k_sc);
    }
    if cfg.card_revoked {
        local.revoke(ids.card);
    }
    let card = Card::new(ids.card, k_sc, card_kp, card_cert, cfg.card);

    world.add_node(Node::Server(Box::new(local)), NetworkZone::Hospital);
    world.add_node(Node::Server(Box::new(remote)), NetworkZone::Hospital);
    world.add_node(Node::Manufacturer(Box::new(manufacturer)), NetworkZone::Hospital);
    world.add_node(Node::Implant(Box::new(implant)), NetworkZone::External);
    world.add_node(Node::Reader(Box::new(reader)), cfg.reader_zone);
    world.add_node(Node::Reader(Box::new(bedside)), NetworkZone::External);
    world.add_node(Node::Card(Box::new(card)), cfg.reader_zone);
    world.insert_card(ids.reader, ids.card);

    Setup { world, ids, card_public, pin: cfg.card.pin, k_si, k_sc }
}
