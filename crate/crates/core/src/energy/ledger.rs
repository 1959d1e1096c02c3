use serde::{Deserialize, Serialize};

use super::{ProtocolStep, PJ_PER_UJ};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergySource {
    Battery,
    Harvested,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SpendEntry {
    pub step: ProtocolStep,
    pub source: EnergySource,
    pub pj: u64,
    /// Whether a session had been confirmed when the charge was made.
    pub authenticated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerConfig {
    pub zpd: bool,
    pub battery_capacity_j: f64,
    pub harvest_pool_capacity_uj: f64,
    /// Energy harvested from each received RF frame.
    pub harvest_per_frame_uj: f64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            zpd: true,
            battery_capacity_j: 10_080.0,
            harvest_pool_capacity_uj: 240.0,
            harvest_per_frame_uj: 120.0,
        }
    }
}

/// Implant energy book-keeping in integer picojoules.
#[derive(Clone, Debug)]
pub struct EnergyLedger {
    config: LedgerConfig,
    battery_capacity_pj: u64,
    battery_spent_pj: u64,
    pool_pj: u64,
    pool_capacity_pj: u64,
    harvest_per_frame_pj: u64,
    deferred: u64,
    log: Vec<SpendEntry>,
}

impl EnergyLedger {
    pub fn new(config: LedgerConfig) -> Self {
        let pool_capacity_pj = (config.harvest_pool_capacity_uj * PJ_PER_UJ).round() as u64;
        EnergyLedger {
            config,
            battery_capacity_pj: (config.battery_capacity_j * 1e12).round() as u64,
            battery_spent_pj: 0,
            pool_pj: 0,
            pool_capacity_pj,
            harvest_per_frame_pj: (config.harvest_per_frame_uj * PJ_PER_UJ).round() as u64,
            deferred: 0,
            log: Vec::new(),
        }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    /// Credit harvested energy for one received RF frame.
    pub fn harvest_frame(&mut self) {
        self.pool_pj = (self.pool_pj + self.harvest_per_frame_pj).min(self.pool_capacity_pj);
    }

    /// Whether a pre-authentication charge of `pj` can be made now.
    pub fn can_afford_pre_auth(&self, pj: u64) -> bool {
        !self.config.zpd || self.pool_pj >= pj
    }

    /// Charge a step. Returns `None` when ZPD is on, the session is not yet
    /// authenticated and the harvested pool cannot cover the step; the
    /// caller must then defer the operation.
    pub fn charge(&mut self, step: ProtocolStep, pj: u64, authenticated: bool) -> Option<EnergySource> {
        let source = if self.config.zpd && !authenticated {
            if self.pool_pj < pj {
                self.deferred += 1;
                return None;
            }
            self.pool_pj -= pj;
            EnergySource::Harvested
        } else {
            self.battery_spent_pj += pj;
            EnergySource::Battery
        };
        self.log.push(SpendEntry { step, source, pj, authenticated });
        Some(source)
    }

    pub fn battery_spent_pj(&self) -> u64 {
        self.battery_spent_pj
    }

    pub fn battery_spent_j(&self) -> f64 {
        self.battery_spent_pj as f64 / 1e12
    }

    pub fn battery_remaining_j(&self) -> f64 {
        self.battery_capacity_pj.saturating_sub(self.battery_spent_pj) as f64 / 1e12
    }

    pub fn harvested_spent_pj(&self) -> u64 {
        self.log.iter().filter(|e| e.source == EnergySource::Harvested).map(|e| e.pj).sum()
    }

    pub fn harvested_pool_pj(&self) -> u64 {
        self.pool_pj
    }

    pub fn deferred_operations(&self) -> u64 {
        self.deferred
    }

    pub fn spend_log(&self) -> &[SpendEntry] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zpd_draws_pre_auth_from_pool_and_defers_when_empty() {
        let mut l = EnergyLedger::new(LedgerConfig { harvest_per_frame_uj: 10.0, ..Default::default() });
        assert_eq!(l.charge(ProtocolStep::HelloRx, 5_000_000, false), None);
        l.harvest_frame();
        assert_eq!(l.charge(ProtocolStep::HelloRx, 5_000_000, false), Some(EnergySource::Harvested));
        assert_eq!(l.harvested_pool_pj(), 5_000_000);
        assert_eq!(l.charge(ProtocolStep::CommandRx, 7, true), Some(EnergySource::Battery));
        assert_eq!(l.battery_spent_pj(), 7);
        assert_eq!(l.deferred_operations(), 1);
    }

    #[test]
    fn pool_is_capped() {
        let mut l = EnergyLedger::new(LedgerConfig::default());
        for _ in 0..10 {
            l.harvest_frame();
        }
        assert_eq!(l.harvested_pool_pj(), 240_000_000);
    }

    #[test]
    fn without_zpd_everything_hits_the_battery() {
        let mut l = EnergyLedger::new(LedgerConfig { zpd: false, ..Default::default() });
        assert_eq!(l.charge(ProtocolStep::HelloRx, 3, false), Some(EnergySource::Battery));
        assert_eq!(l.battery_spent_pj(), 3);
    }
}
