use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnergyError, ProtocolStep, SecurityClass, PJ_PER_UJ};

/// Shipped calibration, regenerated by `imdsec calibrate`.
pub const DEFAULT_COST_TABLE_TOML: &str = include_str!("../../data/cost_table.toml");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub step: ProtocolStep,
    pub energy_uj: f64,
    pub time_ms: f64,
}

impl StepCost {
    pub fn energy_pj(&self) -> u64 {
        (self.energy_uj * PJ_PER_UJ).round() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCosts {
    pub class: SecurityClass,
    /// Crypto cost per AES block during bulk answer transfer.
    pub bulk_energy_per_block_uj: f64,
    pub bulk_time_per_block_ms: f64,
    pub step: Vec<StepCost>,
}

impl ClassCosts {
    pub fn step_cost(&self, step: ProtocolStep) -> Option<&StepCost> {
        self.step.iter().find(|s| s.step == step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub rate_kbps: f64,
    pub energy_per_bit_uj: f64,
    pub time_per_packet_ms: f64,
}

impl RfParams {
    pub fn time_per_bit_ms(&self) -> f64 {
        1.0 / self.rate_kbps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub chunk_payload_bytes: u32,
    /// Medical-processor draw per day if it ran continuously; scaled by the
    /// profile's duty cycle.
    pub medical_cpu_full_duty_j_per_day: f64,
    pub rf: RfParams,
    pub class: Vec<ClassCosts>,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable::from_toml(DEFAULT_COST_TABLE_TOML).expect("shipped cost table parses")
    }
}

impl CostTable {
    pub fn from_toml(text: &str) -> Result<Self, EnergyError> {
        let t: CostTable = toml::from_str(text).map_err(|e| EnergyError::Table(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, EnergyError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnergyError::Table(format!("{}: {e}", path.display())))?;
        CostTable::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("cost table serialises")
    }

    fn validate(&self) -> Result<(), EnergyError> {
        if self.rf.rate_kbps <= 0.0 || self.chunk_payload_bytes == 0 {
            return Err(EnergyError::Table("rate and chunk size must be positive".into()));
        }
        for c in &self.class {
            for s in &c.step {
                if !(s.energy_uj >= 0.0 && s.time_ms >= 0.0) {
                    return Err(EnergyError::Table(format!("negative cost for {} / {}", c.class, s.step.name())));
                }
            }
        }
        Ok(())
    }

    pub fn class_costs(&self, class: SecurityClass) -> Result<&ClassCosts, EnergyError> {
        self.class.iter().find(|c| c.class == class).ok_or(EnergyError::UnknownClass(class.name()))
    }

    pub fn step(&self, class: SecurityClass, step: ProtocolStep) -> Result<&StepCost, EnergyError> {
        self.class_costs(class)?
            .step_cost(step)
            .ok_or(EnergyError::UnknownStep { step: step.name(), class: class.name() })
    }

    pub fn step_energy_pj(&self, class: SecurityClass, step: ProtocolStep) -> Result<u64, EnergyError> {
        Ok(self.step(class, step)?.energy_pj())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_table_parses_and_roundtrips() {
        let t = CostTable::default();
        assert_eq!(CostTable::from_toml(&t.to_toml()).unwrap(), t);
        assert_eq!(t.rf.rate_kbps, 265.0);
    }

    #[test]
    fn unknown_step_is_an_error() {
        let t = CostTable::default();
        assert!(matches!(t.step(SecurityClass::None, ProtocolStep::HelloRx), Err(EnergyError::UnknownStep { .. })));
    }
}
