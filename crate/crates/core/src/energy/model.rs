use serde::{Deserialize, Serialize};

use super::{CostTable, EnergyError, ProtocolStep, SecurityClass};
use crate::crypto::{aead_blocks, AEAD_OVERHEAD};
use crate::wire::HEADER_LEN;

/// Bytes a secure answer chunk adds around its data: seq, N_I, N_R and the
/// data length prefix inside the ciphertext, plus the frame's own prefix.
pub const SECURE_CHUNK_PT_OVERHEAD: usize = 4 + 4 + 4 + 2;
pub const PLAIN_CHUNK_OVERHEAD: usize = 4 + 2;

pub fn secure_chunk_frame_bytes(data_len: usize) -> usize {
    HEADER_LEN + 2 + AEAD_OVERHEAD + SECURE_CHUNK_PT_OVERHEAD + data_len
}

pub fn plain_chunk_frame_bytes(data_len: usize) -> usize {
    HEADER_LEN + PLAIN_CHUNK_OVERHEAD + data_len
}

pub fn secure_chunk_blocks(data_len: usize) -> u64 {
    aead_blocks(SECURE_CHUNK_PT_OVERHEAD + data_len, 0)
}

/// Physical quantities of a bulk transfer of `bytes` answer bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BulkShape {
    pub bits: u64,
    pub packets: u64,
    pub blocks: u64,
}

pub fn bulk_shape(bytes: u64, chunk: u32, secure: bool) -> BulkShape {
    let chunk = chunk as u64;
    let full = bytes / chunk;
    let tail = bytes % chunk;
    let mut shape = BulkShape::default();
    let mut add = |data: u64, n: u64| {
        if n == 0 {
            return;
        }
        let d = data as usize;
        let frame = if secure { secure_chunk_frame_bytes(d) } else { plain_chunk_frame_bytes(d) };
        shape.bits += n * frame as u64 * 8;
        shape.packets += n;
        if secure {
            shape.blocks += n * secure_chunk_blocks(d);
        }
    };
    add(chunk, full);
    add(tail, u64::from(tail > 0));
    shape
}

/// Executed steps plus any bulk answer bytes beyond the basic 8-byte ANS.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub steps: Vec<ProtocolStep>,
    pub bulk_transfers: Vec<u64>,
}

impl SessionSpec {
    pub fn basic(class: SecurityClass) -> Self {
        SessionSpec { steps: class.basic_steps().to_vec(), bulk_transfers: Vec::new() }
    }

    /// Basic session whose answer totals `ans_bytes`.
    pub fn with_answer(class: SecurityClass, ans_bytes: u64) -> Self {
        let mut s = SessionSpec::basic(class);
        let extra = ans_bytes.saturating_sub(crate::types::ANS_LEN as u64);
        if extra > 0 {
            s.bulk_transfers.push(extra);
        }
        s
    }

    pub fn concat(mut self, other: &SessionSpec) -> Self {
        self.steps.extend_from_slice(&other.steps);
        self.bulk_transfers.extend_from_slice(&other.bulk_transfers);
        self
    }
}

pub fn bulk_energy(table: &CostTable, class: SecurityClass, bytes: u64) -> Result<f64, EnergyError> {
    let cc = table.class_costs(class)?;
    let s = bulk_shape(bytes, table.chunk_payload_bytes, class.is_secure());
    Ok(s.bits as f64 * table.rf.energy_per_bit_uj + s.blocks as f64 * cc.bulk_energy_per_block_uj)
}

pub fn bulk_time(table: &CostTable, class: SecurityClass, bytes: u64) -> Result<f64, EnergyError> {
    let cc = table.class_costs(class)?;
    let s = bulk_shape(bytes, table.chunk_payload_bytes, class.is_secure());
    Ok(s.bits as f64 * table.rf.time_per_bit_ms()
        + s.packets as f64 * table.rf.time_per_packet_ms
        + s.blocks as f64 * cc.bulk_time_per_block_ms)
}

/// Energy of a session in µJ.
pub fn session_energy(table: &CostTable, class: SecurityClass, spec: &SessionSpec) -> Result<f64, EnergyError> {
    let mut total = 0.0;
    for step in &spec.steps {
        total += table.step(class, *step)?.energy_uj;
    }
    for bytes in &spec.bulk_transfers {
        total += bulk_energy(table, class, *bytes)?;
    }
    Ok(total)
}

pub fn session_time(table: &CostTable, class: SecurityClass, spec: &SessionSpec) -> Result<f64, EnergyError> {
    let mut total = 0.0;
    for step in &spec.steps {
        total += table.step(class, *step)?.time_ms;
    }
    for bytes in &spec.bulk_transfers {
        total += bulk_time(table, class, *bytes)?;
    }
    Ok(total)
}

/// Sum of the four authentication steps in µJ; zero for the insecure baseline.
pub fn auth_energy(table: &CostTable, class: SecurityClass) -> f64 {
    ProtocolStep::AUTH.iter().filter_map(|s| table.step(class, *s).ok()).map(|c| c.energy_uj).sum()
}

/// Basic-session delay in ms.
pub fn protocol_delay(table: &CostTable, class: SecurityClass) -> Result<f64, EnergyError> {
    session_time(table, class, &SessionSpec::basic(class))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UsageProfile {
    pub sessions_per_day: f64,
    pub ans_bytes: u64,
    pub heartbeat_energy_uj: f64,
    pub heart_rate_bpm: f64,
    pub medical_duty_cycle: f64,
    pub battery_capacity_j: f64,
}

impl Default for UsageProfile {
    fn default() -> Self {
        UsageProfile {
            sessions_per_day: 1.0,
            ans_bytes: 3_000_000,
            heartbeat_energy_uj: 20.0,
            heart_rate_bpm: 60.0,
            medical_duty_cycle: 0.05,
            battery_capacity_j: 10_080.0,
        }
    }
}

impl UsageProfile {
    pub fn stimulation_j_per_day(&self) -> f64 {
        self.heartbeat_energy_uj * self.heart_rate_bpm * 60.0 * 24.0 / 1e6
    }
}

/// Total implant consumption per day in J.
pub fn daily_energy(table: &CostTable, class: SecurityClass, profile: &UsageProfile) -> Result<f64, EnergyError> {
    let session = session_energy(table, class, &SessionSpec::with_answer(class, profile.ans_bytes))?;
    Ok(profile.stimulation_j_per_day()
        + table.medical_cpu_full_duty_j_per_day * profile.medical_duty_cycle
        + profile.sessions_per_day * session / 1e6)
}

/// Battery lifetime in days.
pub fn estimate_lifetime(table: &CostTable, profile: &UsageProfile, class: SecurityClass) -> Result<f64, EnergyError> {
    Ok(profile.battery_capacity_j / daily_energy(table, class, profile)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeSpread {
    pub min_days: f64,
    pub median_days: f64,
    pub max_days: f64,
}

/// Session rates from one per day down to one per week.
pub const SESSION_RATES: [f64; 7] = [1.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0, 1.0 / 5.0, 1.0 / 6.0, 1.0 / 7.0];

/// Lifetime spread across daily-to-weekly session rates.
pub fn lifetime_spread(
    table: &CostTable,
    profile: &UsageProfile,
    class: SecurityClass,
) -> Result<LifetimeSpread, EnergyError> {
    let mut days = SESSION_RATES
        .iter()
        .map(|r| estimate_lifetime(table, &UsageProfile { sessions_per_day: *r, ..profile.clone() }, class))
        .collect::<Result<Vec<_>, _>>()?;
    days.sort_by(f64::total_cmp);
    Ok(LifetimeSpread { min_days: days[0], median_days: days[days.len() / 2], max_days: days[days.len() - 1] })
}
