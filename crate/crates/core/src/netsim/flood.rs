//! Battery-exhaustion flood against an implant's session start.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::setup::{build, WorldConfig};
use crate::entities::{ProtocolEvent, Task};
use crate::types::{EntityId, Nonce};
use crate::wire::{Channel, Message};

const KEY_DELIVERY_TAG: u8 = 0x42;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FloodReport {
    pub attempts: u64,
    pub zpd: bool,
    pub battery_spent_pj: u64,
    pub harvested_spent_pj: u64,
    pub deferred_operations: u64,
    /// Whether the honest session run alongside the flood established.
    pub honest_completed: Option<bool>,
    /// Battery charged for the honest session's post-authentication steps.
    pub honest_battery_pj: u64,
}

impl FloodReport {
    pub fn battery_spent_j(&self) -> f64 {
        self.battery_spent_pj as f64 / 1e12
    }
}

/// Sends `attempts` bogus session starts (hello plus a forged key delivery)
/// from an unregistered reader identity. With `honest` set, a legitimate
/// online session runs in the middle of the flood.
pub fn battery_dos_flood(mut cfg: WorldConfig, attempts: u64, zpd: bool, honest: bool) -> FloodReport {
    cfg.implant.ledger.zpd = zpd;
    let mut setup = build(&cfg);
    let ids = setup.ids;
    let world = &mut setup.world;
    let flooder = EntityId::from_label("flooder");
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xF100D);
    let half = attempts / 2;
    for i in 0..attempts {
        if honest && i == half {
            world.push_tasks(
                ids.reader,
                [
                    Task::ConnectServer { server: ids.server },
                    Task::AuthenticateCard,
                    Task::VerifyUser { pin: setup.pin },
                    Task::EstablishSession { implant: ids.implant },
                    Task::Command(crate::types::Command::read_status()),
                ],
            );
            world.run_until_quiescent();
        }
        let reader_nonce = Nonce::random(&mut rng);
        world.inject(flooder, Channel::Rf, ids.implant, Message::ImplantHello { reader_id: flooder, reader_nonce });
        world.run_until_quiescent();
        let forged = Message::random_with_tag(KEY_DELIVERY_TAG, &mut rng).expect("key delivery tag is known");
        world.inject(flooder, Channel::Rf, ids.implant, forged);
        world.run_until_quiescent();
    }
    let honest_completed = honest.then(|| {
        world
            .protocol_events()
            .any(|e| matches!(e, ProtocolEvent::SessionEstablished { reader, .. } if *reader == ids.reader))
    });
    let ledger = world.implant(&ids.implant).ledger();
    let honest_battery_pj = ledger.spend_log().iter().filter(|e| e.authenticated).map(|e| e.pj).sum();
    FloodReport {
        attempts,
        zpd,
        battery_spent_pj: ledger.battery_spent_pj(),
        harvested_spent_pj: ledger.harvested_spent_pj(),
        deferred_operations: ledger.deferred_operations(),
        honest_completed,
        honest_battery_pj,
    }
}
