//! Energy and delay accounting for implant-side protocol steps.

pub mod calibrate;
pub mod ledger;
pub mod model;
pub mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::ImplementationClass;

pub use ledger::{EnergyLedger, EnergySource, LedgerConfig, SpendEntry};
pub use model::{
    auth_energy, daily_energy, estimate_lifetime, lifetime_spread, protocol_delay, session_energy, LifetimeSpread,
    SessionSpec, UsageProfile,
};
pub use table::{ClassCosts, CostTable, RfParams, StepCost};

pub const PJ_PER_UJ: f64 = 1e6;

/// Cost row selector: the insecure baseline or one crypto implementation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecurityClass {
    None,
    HwAes,
    SwAes,
    SwSpeck,
    SwMisty1,
}

impl SecurityClass {
    pub const ALL: [SecurityClass; 5] = [
        SecurityClass::None,
        SecurityClass::HwAes,
        SecurityClass::SwAes,
        SecurityClass::SwSpeck,
        SecurityClass::SwMisty1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SecurityClass::None => "none",
            SecurityClass::HwAes => "hw-aes",
            SecurityClass::SwAes => "sw-aes",
            SecurityClass::SwSpeck => "sw-speck",
            SecurityClass::SwMisty1 => "sw-misty1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SecurityClass::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn is_secure(self) -> bool {
        self != SecurityClass::None
    }

    pub fn basic_steps(self) -> &'static [ProtocolStep] {
        if self.is_secure() {
            &ProtocolStep::SECURE_SESSION
        } else {
            &ProtocolStep::PLAIN_SESSION
        }
    }
}

impl From<ImplementationClass> for SecurityClass {
    fn from(c: ImplementationClass) -> Self {
        match c {
            ImplementationClass::HardwareAccelerated => SecurityClass::HwAes,
            ImplementationClass::SoftwareAes => SecurityClass::SwAes,
            ImplementationClass::SoftwareSpeck => SecurityClass::SwSpeck,
            ImplementationClass::SoftwareMisty1 => SecurityClass::SwMisty1,
        }
    }
}

impl std::fmt::Display for SecurityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Implant-side protocol step. Steps one to four make up authentication.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolStep {
    HelloRx,
    NonceTx,
    KeyDeliveryRx,
    KeyConfirm,
    CommandRx,
    AnswerTx,
    PlainCommandRx,
    PlainAnswerTx,
}

impl ProtocolStep {
    pub const AUTH: [ProtocolStep; 4] =
        [ProtocolStep::HelloRx, ProtocolStep::NonceTx, ProtocolStep::KeyDeliveryRx, ProtocolStep::KeyConfirm];
    pub const MAIN: [ProtocolStep; 2] = [ProtocolStep::CommandRx, ProtocolStep::AnswerTx];
    pub const SECURE_SESSION: [ProtocolStep; 6] = [
        ProtocolStep::HelloRx,
        ProtocolStep::NonceTx,
        ProtocolStep::KeyDeliveryRx,
        ProtocolStep::KeyConfirm,
        ProtocolStep::CommandRx,
        ProtocolStep::AnswerTx,
    ];
    pub const PLAIN_SESSION: [ProtocolStep; 2] = [ProtocolStep::PlainCommandRx, ProtocolStep::PlainAnswerTx];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolStep::HelloRx => "hello-rx",
            ProtocolStep::NonceTx => "nonce-tx",
            ProtocolStep::KeyDeliveryRx => "key-delivery-rx",
            ProtocolStep::KeyConfirm => "key-confirm",
            ProtocolStep::CommandRx => "command-rx",
            ProtocolStep::AnswerTx => "answer-tx",
            ProtocolStep::PlainCommandRx => "plain-command-rx",
            ProtocolStep::PlainAnswerTx => "plain-answer-tx",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("step {step} has no cost entry for class {class}")]
    UnknownStep { step: &'static str, class: &'static str },
    #[error("class {0} missing from cost table")]
    UnknownClass(&'static str),
    #[error("cost table: {0}")]
    Table(String),
}
