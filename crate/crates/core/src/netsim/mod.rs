//! Deterministic discrete-event network with a programmable attacker.

pub mod adversary;
pub mod flood;
pub mod knowledge;
pub mod properties;
pub mod scenario;
pub mod setup;
pub mod world;

pub use adversary::{attackable_tags, Action, Adversary, Delivery, Observed, PolicyError, Rule, Trigger};
pub use knowledge::{Atom, Knowledge};
pub use scenario::{
    reader_kind, scenarios_named, table_scenarios, Outcome, Preconditions, Scenario, ScenarioError, ScenarioRun,
    UserKind, Verdict,
};
pub use setup::{build, Ids, Setup, WorldConfig};
pub use world::{ChannelEvent, FrameAction, RunStats, World};
