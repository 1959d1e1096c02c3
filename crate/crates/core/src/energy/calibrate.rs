//! Derives the per-step cost table from measured aggregate figures.
//!
//! Each step is described by the bits it puts on air, the packets it
//! handles and the AES blocks it processes. Non-negative least squares
//! gives per-bit and per-block energy weights and per-packet and per-block
//! time weights; the weighted step shares are then scaled so every
//! measured aggregate is met exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{bulk_shape, SessionSpec, UsageProfile};
use super::table::{ClassCosts, CostTable, RfParams, StepCost};
use super::{ProtocolStep, SecurityClass, PJ_PER_UJ};
use crate::crypto::{aead_blocks, cmac_blocks, AEAD_OVERHEAD};
use crate::cryptogram::{MIPlain, MRiPlain, Plaintext};
use crate::types::{Command, EntityId, Nonce, Privilege, SessionMode, SignatureBytes};
use crate::wire::{encode_frame, Message, ANSWER_PT_LEN, COMMAND_PT_LEN, SEALED_ANSWER_LEN, SEALED_COMMAND_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub rate_kbps: f64,
    pub chunk_payload_bytes: u32,
    pub session_uj_none: f64,
    pub session_uj_hw: f64,
    pub session_uj_sw: f64,
    pub auth_uj_hw: f64,
    pub auth_uj_sw: f64,
    pub delay_ms_none: f64,
    pub delay_ms_hw: f64,
    pub delay_ms_sw: f64,
    pub daily_j_none: f64,
    pub daily_j_hw: f64,
    pub daily_j_sw: f64,
    /// Position of each lightweight cipher between hardware (0) and software AES (1).
    pub speck_ratio: f64,
    pub misty1_ratio: f64,
    pub profile: UsageProfile,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            rate_kbps: 265.0,
            chunk_payload_bytes: 256,
            session_uj_none: 16.61,
            session_uj_hw: 108.31,
            session_uj_sw: 217.89,
            auth_uj_hw: 59.6,
            auth_uj_sw: 119.4,
            delay_ms_none: 2.17,
            delay_ms_hw: 15.73,
            delay_ms_sw: 58.99,
            daily_j_none: 16.60,
            daily_j_hw: 17.69,
            daily_j_sw: 19.89,
            speck_ratio: 0.5,
            misty1_ratio: 0.75,
            profile: UsageProfile::default(),
        }
    }
}

/// Physical work attributed to one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepShape {
    pub step: ProtocolStep,
    pub bits: u64,
    pub packets: u64,
    pub blocks: u64,
}

fn frame_bits(m: &Message) -> u64 {
    encode_frame(m).expect("sizing frame encodes").len() as u64 * 8
}

/// Frame sizes come from the codec, block counts from the AEAD layout.
pub fn step_shapes() -> Vec<StepShape> {
    let id = EntityId::ZERO;
    let n = Nonce(0);
    let mi_pt = MIPlain {
        k_ri: [0; 16],
        reader_nonce: n,
        implant_nonce: n,
        reader_id: id,
        card_id: id,
        card_nonce: n,
        privilege: Privilege::ReadOnly,
        mode: SessionMode::Online,
    }
    .to_bytes()
    .len();
    let mri_pt = MRiPlain { reader_nonce: n, implant_nonce: n }.to_bytes().len();
    let shape = |step, m: Message, blocks| StepShape { step, bits: frame_bits(&m), packets: 1, blocks };
    vec![
        shape(ProtocolStep::HelloRx, Message::ImplantHello { reader_id: id, reader_nonce: n }, 0),
        // one block for the random nonce
        shape(ProtocolStep::NonceTx, Message::ImplantNonce { implant_id: id, implant_nonce: n }, 1),
        shape(
            ProtocolStep::KeyDeliveryRx,
            Message::ImplantKeyDelivery { m_i: vec![0; mi_pt + AEAD_OVERHEAD], m_ri: vec![0; mri_pt + AEAD_OVERHEAD] },
            0,
        ),
        shape(
            ProtocolStep::KeyConfirm,
            Message::ImplantKeyConfirm { mac: [0; 16] },
            aead_blocks(mi_pt, 0) + aead_blocks(mri_pt, 0) + cmac_blocks(8),
        ),
        shape(
            ProtocolStep::CommandRx,
            Message::ImplantCommandSigned { ct: [0; SEALED_COMMAND_LEN], sig: SignatureBytes([0; 48]) },
            aead_blocks(COMMAND_PT_LEN, 48),
        ),
        shape(
            ProtocolStep::AnswerTx,
            Message::ImplantAnswer { ct: [0; SEALED_ANSWER_LEN] },
            aead_blocks(ANSWER_PT_LEN, 0),
        ),
        shape(ProtocolStep::PlainCommandRx, Message::PlainCommand { cmd: Command::read_status() }, 0),
        shape(ProtocolStep::PlainAnswerTx, Message::PlainAnswer { ans: [0; 8] }, 0),
    ]
}

fn shape_of(shapes: &[StepShape], step: ProtocolStep) -> StepShape {
    *shapes.iter().find(|s| s.step == step).expect("every step has a shape")
}

/// Non-negative least squares by exhaustive active-set search. Exact for
/// the handful of unknowns used here.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut best = DVector::zeros(n);
    let mut best_res = b.norm_squared();
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
        let Ok(x) = sub.clone().svd(true, true).solve(b, 1e-12) else { continue };
        if x.iter().any(|v| *v < 0.0) {
            continue;
        }
        let res = (&sub * &x - b).norm_squared();
        if res < best_res - 1e-15 {
            best_res = res;
            best = DVector::zeros(n);
            for (k, &c) in cols.iter().enumerate() {
                best[c] = x[k];
            }
        }
    }
    best
}

/// Splits `total_pj` over `weights` proportionally; rounding lands on the last entry.
fn split_pj(weights: &[f64], total_pj: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let mut out: Vec<u64> = weights
        .iter()
        .map(|w| if sum > 0.0 { (w / sum * total_pj as f64).floor() as u64 } else { total_pj / weights.len() as u64 })
        .collect();
    let assigned: u64 = out.iter().sum();
    *out.last_mut().expect("non-empty group") += total_pj - assigned;
    out
}

fn scale(weights: &[f64], total: f64) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| if sum > 0.0 { w / sum * total } else { total / weights.len() as f64 }).collect()
}

fn to_pj(uj: f64) -> u64 {
    (uj * PJ_PER_UJ).round() as u64
}

/// Fitted structural weights, kept for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedWeights {
    pub energy_per_bit_uj: f64,
    pub energy_per_block_uj_hw: f64,
    pub energy_per_block_uj_sw: f64,
    pub time_per_packet_ms: f64,
    pub time_per_block_ms_hw: f64,
    pub time_per_block_ms_sw: f64,
}

pub fn fit_weights(t: &CalibrationTargets, shapes: &[StepShape]) -> FittedWeights {
    let sum = |steps: &[ProtocolStep]| {
        steps.iter().fold((0.0, 0.0, 0.0), |acc, s| {
            let sh = shape_of(shapes, *s);
            (acc.0 + sh.bits as f64, acc.1 + sh.packets as f64, acc.2 + sh.blocks as f64)
        })
    };
    let plain = sum(&ProtocolStep::PLAIN_SESSION);
    let auth = sum(&ProtocolStep::AUTH);
    let main = sum(&ProtocolStep::MAIN);

    // energy unknowns: bit, block(hw), block(sw)
    let a = DMatrix::from_row_slice(
        5,
        3,
        &[plain.0, 0.0, 0.0, auth.0, auth.2, 0.0, main.0, main.2, 0.0, auth.0, 0.0, auth.2, main.0, 0.0, main.2],
    );
    let b = DVector::from_row_slice(&[
        t.session_uj_none,
        t.auth_uj_hw,
        t.session_uj_hw - t.auth_uj_hw,
        t.auth_uj_sw,
        t.session_uj_sw - t.auth_uj_sw,
    ]);
    let e = nnls(&a, &b);

    // time unknowns: packet, block(hw), block(sw); the bit time is fixed by the rate
    let tb = 1.0 / t.rate_kbps;
    let secure = (auth.0 + main.0, auth.1 + main.1, auth.2 + main.2);
    let a = DMatrix::from_row_slice(3, 3, &[plain.1, 0.0, 0.0, secure.1, secure.2, 0.0, secure.1, 0.0, secure.2]);
    let b = DVector::from_row_slice(&[
        t.delay_ms_none - plain.0 * tb,
        t.delay_ms_hw - secure.0 * tb,
        t.delay_ms_sw - secure.0 * tb,
    ]);
    let d = nnls(&a, &b);

    FittedWeights {
        energy_per_bit_uj: e[0],
        energy_per_block_uj_hw: e[1],
        energy_per_block_uj_sw: e[2],
        time_per_packet_ms: d[0],
        time_per_block_ms_hw: d[1],
        time_per_block_ms_sw: d[2],
    }
}

fn group_costs(
    steps: &[ProtocolStep],
    shapes: &[StepShape],
    energy_w: impl Fn(&StepShape) -> f64,
    time_w: impl Fn(&StepShape) -> f64,
    energy_pj: u64,
) -> (Vec<u64>, Vec<f64>) {
    let sh: Vec<StepShape> = steps.iter().map(|s| shape_of(shapes, *s)).collect();
    let ew: Vec<f64> = sh.iter().map(&energy_w).collect();
    let tw: Vec<f64> = sh.iter().map(&time_w).collect();
    (split_pj(&ew, energy_pj), tw)
}

/// Builds the complete cost table for the given targets.
pub fn derive_cost_table(t: &CalibrationTargets) -> CostTable {
    let shapes = step_shapes();
    let w = fit_weights(t, &shapes);
    let tb = 1.0 / t.rate_kbps;
    let rf_e = |s: &StepShape| s.bits as f64 * w.energy_per_bit_uj;
    let rf_t = |s: &StepShape| s.bits as f64 * tb + s.packets as f64 * w.time_per_packet_ms;

    let secure_class = |blk_e: f64, blk_t: f64, auth_uj: f64, session_uj: f64, delay_ms: f64| {
        let ew = |s: &StepShape| rf_e(s) + s.blocks as f64 * blk_e;
        let tw = |s: &StepShape| rf_t(s) + s.blocks as f64 * blk_t;
        let (auth_pj, auth_tw) = group_costs(&ProtocolStep::AUTH, &shapes, ew, tw, to_pj(auth_uj));
        let (main_pj, main_tw) = group_costs(&ProtocolStep::MAIN, &shapes, ew, tw, to_pj(session_uj) - to_pj(auth_uj));
        let times = scale(&[auth_tw, main_tw].concat(), delay_ms);
        ProtocolStep::SECURE_SESSION
            .iter()
            .zip(auth_pj.into_iter().chain(main_pj))
            .zip(times)
            .map(|((step, pj), time_ms)| StepCost { step: *step, energy_uj: pj as f64 / PJ_PER_UJ, time_ms })
            .collect::<Vec<_>>()
    };

    let hw =
        secure_class(w.energy_per_block_uj_hw, w.time_per_block_ms_hw, t.auth_uj_hw, t.session_uj_hw, t.delay_ms_hw);
    let sw =
        secure_class(w.energy_per_block_uj_sw, w.time_per_block_ms_sw, t.auth_uj_sw, t.session_uj_sw, t.delay_ms_sw);
    let plain = {
        let (pj, tw) = group_costs(&ProtocolStep::PLAIN_SESSION, &shapes, rf_e, rf_t, to_pj(t.session_uj_none));
        let times = scale(&tw, t.delay_ms_none);
        ProtocolStep::PLAIN_SESSION
            .iter()
            .zip(pj)
            .zip(times)
            .map(|((step, pj), time_ms)| StepCost { step: *step, energy_uj: pj as f64 / PJ_PER_UJ, time_ms })
            .collect::<Vec<_>>()
    };

    let rf = RfParams {
        rate_kbps: t.rate_kbps,
        energy_per_bit_uj: w.energy_per_bit_uj,
        time_per_packet_ms: w.time_per_packet_ms,
    };

    // Daily figures: the insecure day fixes the medical baseline; each secure
    // class's bulk crypto cost per block closes its own daily total.
    let p = &t.profile;
    let extra = p.ans_bytes.saturating_sub(crate::types::ANS_LEN as u64);
    let bulk_rf = |secure: bool| {
        let s = bulk_shape(extra, t.chunk_payload_bytes, secure);
        (s.bits as f64 * rf.energy_per_bit_uj, s.blocks as f64)
    };
    let (plain_bulk_uj, _) = bulk_rf(false);
    let (secure_bulk_uj, bulk_blocks) = bulk_rf(true);
    let per_day = |uj: f64| p.sessions_per_day * uj / 1e6;
    let stim = p.stimulation_j_per_day();
    let baseline = t.daily_j_none - stim - per_day(t.session_uj_none + plain_bulk_uj);
    let bulk_block_uj = |daily: f64, session: f64| {
        let rest_j = daily - stim - baseline - per_day(session + secure_bulk_uj);
        rest_j * 1e6 / (p.sessions_per_day * bulk_blocks)
    };
    let hw_bulk = bulk_block_uj(t.daily_j_hw, t.session_uj_hw);
    let sw_bulk = bulk_block_uj(t.daily_j_sw, t.session_uj_sw);

    let lerp_steps = |r: f64| {
        hw.iter()
            .zip(&sw)
            .map(|(h, s)| StepCost {
                step: h.step,
                energy_uj: to_pj(h.energy_uj + r * (s.energy_uj - h.energy_uj)) as f64 / PJ_PER_UJ,
                time_ms: h.time_ms + r * (s.time_ms - h.time_ms),
            })
            .collect::<Vec<_>>()
    };
    let lerp = |a: f64, b: f64, r: f64| a + r * (b - a);

    let class = vec![
        ClassCosts {
            class: SecurityClass::None,
            bulk_energy_per_block_uj: 0.0,
            bulk_time_per_block_ms: 0.0,
            step: plain,
        },
        ClassCosts {
            class: SecurityClass::HwAes,
            bulk_energy_per_block_uj: hw_bulk,
            bulk_time_per_block_ms: w.time_per_block_ms_hw,
            step: hw.clone(),
        },
        ClassCosts {
            class: SecurityClass::SwAes,
            bulk_energy_per_block_uj: sw_bulk,
            bulk_time_per_block_ms: w.time_per_block_ms_sw,
            step: sw.clone(),
        },
        ClassCosts {
            class: SecurityClass::SwSpeck,
            bulk_energy_per_block_uj: lerp(hw_bulk, sw_bulk, t.speck_ratio),
            bulk_time_per_block_ms: lerp(w.time_per_block_ms_hw, w.time_per_block_ms_sw, t.speck_ratio),
            step: lerp_steps(t.speck_ratio),
        },
        ClassCosts {
            class: SecurityClass::SwMisty1,
            bulk_energy_per_block_uj: lerp(hw_bulk, sw_bulk, t.misty1_ratio),
            bulk_time_per_block_ms: lerp(w.time_per_block_ms_hw, w.time_per_block_ms_sw, t.misty1_ratio),
            step: lerp_steps(t.misty1_ratio),
        },
    ];

    CostTable {
        chunk_payload_bytes: t.chunk_payload_bytes,
        medical_cpu_full_duty_j_per_day: baseline / p.medical_duty_cycle,
        rf,
        class,
    }
}

/// TOML text of the default calibration, as shipped in `data/cost_table.toml`.
pub fn default_cost_table_toml() -> String {
    let mut out = String::from("# Generated by `imdsec calibrate`. Energies in uJ, times in ms.\n\n");
    out.push_str(&derive_cost_table(&CalibrationTargets::default()).to_toml());
    out
}

/// Basic session spec used when checking session aggregates.
pub fn basic_spec(class: SecurityClass) -> SessionSpec {
    SessionSpec::basic(class)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_codec_sizes() {
        let s = step_shapes();
        let bits = |st| shape_of(&s, st).bits;
        assert_eq!(bits(ProtocolStep::HelloRx), 19 * 8);
        assert_eq!(bits(ProtocolStep::KeyDeliveryRx), 133 * 8);
        assert_eq!(bits(ProtocolStep::CommandRx), 95 * 8);
        assert_eq!(bits(ProtocolStep::AnswerTx), 51 * 8);
        assert_eq!(bits(ProtocolStep::PlainCommandRx) + bits(ProtocolStep::PlainAnswerTx), 18 * 8);
    }

    #[test]
    fn nnls_matches_exact_solution_when_feasible() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let b = DVector::from_row_slice(&[3.0, 4.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_components() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_row_slice(&[-1.0, -3.0]);
        assert_eq!(nnls(&a, &b)[0], 0.0);
    }

    #[test]
    fn split_is_exact() {
        let v = split_pj(&[1.0, 1.0, 1.0], 10);
        assert_eq!(v.iter().sum::<u64>(), 10);
    }

    #[test]
    fn weights_are_non_negative() {
        let w = fit_weights(&CalibrationTargets::default(), &step_shapes());
        for v in [
            w.energy_per_bit_uj,
            w.energy_per_block_uj_hw,
            w.energy_per_block_uj_sw,
            w.time_per_packet_ms,
            w.time_per_block_ms_hw,
            w.time_per_block_ms_sw,
        ] {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn shipped_table_is_current() {
        let shipped = CostTable::default();
        let fresh = derive_cost_table(&CalibrationTargets::default());
        assert_eq!(shipped, CostTable::from_toml(&fresh.to_toml()).unwrap());
    }
}
