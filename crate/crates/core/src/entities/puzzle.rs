//! Stateless hash-based client puzzle.
//!
//! The server derives x = H(ID_R ‖ t ‖ K_S), hands out H(x) together with x
//! with its first k bits cleared, and later recomputes x to check an answer.

use super::Reason;
use crate::crypto::hash;
use crate::types::EntityId;
use crate::wire::HASH_LEN;

/// Largest supported difficulty.
pub const MAX_K: u8 = 32;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Puzzle {
    pub hx: [u8; HASH_LEN],
    pub partial_x: [u8; HASH_LEN],
    pub t: u64,
    pub k: u8,
}

pub fn puzzle_x(secret: &[u8; 16], reader: &EntityId, t: u64) -> [u8; HASH_LEN] {
    let mut buf = Vec::with_capacity(12 + 8 + 16);
    buf.extend_from_slice(reader.as_bytes());
    buf.extend_from_slice(&t.to_be_bytes());
    buf.extend_from_slice(secret);
    hash(&buf)
}

fn solution_len(k: u8) -> usize {
    (k as usize).div_ceil(8)
}

/// Writes the k-bit value `v` into the top k bits of `x`.
fn set_prefix(x: &mut [u8; HASH_LEN], k: u8, v: u64) {
    for bit in 0..k as usize {
        let b = (v >> (k as usize - 1 - bit)) & 1;
        let mask = 0x80u8 >> (bit % 8);
        if b == 1 {
            x[bit / 8] |= mask;
        } else {
            x[bit / 8] &= !mask;
        }
    }
}

fn prefix(x: &[u8; HASH_LEN], k: u8) -> u64 {
    (0..k as usize).fold(0u64, |acc, bit| (acc << 1) | u64::from(x[bit / 8] & (0x80 >> (bit % 8)) != 0))
}

fn encode_solution(k: u8, v: u64) -> Vec<u8> {
    let n = solution_len(k);
    v.to_be_bytes()[8 - n..].to_vec()
}

fn decode_solution(k: u8, raw: &[u8]) -> Option<u64> {
    if raw.len() != solution_len(k) {
        return None;
    }
    let v = raw.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b));
    (k == 64 || v < (1u64 << k)).then_some(v)
}

pub fn issue_puzzle(secret: &[u8; 16], reader: &EntityId, now: u64, k: u8) -> Puzzle {
    assert!(k <= MAX_K, "puzzle difficulty above {MAX_K}");
    let x = puzzle_x(secret, reader, now);
    let mut partial_x = x;
    set_prefix(&mut partial_x, k, 0);
    Puzzle { hx: hash(&x), partial_x, t: now, k }
}

/// Exhaustive search. Returns the encoded solution and the number of
/// candidate hashes evaluated.
pub fn solve_puzzle(p: &Puzzle) -> Option<(Vec<u8>, u64)> {
    if p.k > MAX_K {
        return None;
    }
    let mut x = p.partial_x;
    for v in 0..(1u64 << p.k) {
        set_prefix(&mut x, p.k, v);
        if hash(&x) == p.hx {
            return Some((encode_solution(p.k, v), v + 1));
        }
    }
    None
}

pub fn verify_puzzle(
    secret: &[u8; 16],
    reader: &EntityId,
    t: u64,
    solution: &[u8],
    now: u64,
    k: u8,
    expiry_ms: u64,
) -> Result<(), Reason> {
    if t > now || now - t > expiry_ms {
        return Err(Reason::PuzzleExpired);
    }
    let x = puzzle_x(secret, reader, t);
    match decode_solution(k, solution) {
        Some(v) if v == prefix(&x, k) => Ok(()),
        _ => Err(Reason::PuzzleWrong),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: [u8; 16] = [7; 16];

    #[test]
    fn zero_difficulty_has_empty_solution() {
        let r = EntityId::from_label("r");
        let p = issue_puzzle(&S, &r, 5, 0);
        let (sol, evals) = solve_puzzle(&p).unwrap();
        assert!(sol.is_empty());
        assert_eq!(evals, 1);
        assert_eq!(verify_puzzle(&S, &r, 5, &sol, 5, 0, 10_000), Ok(()));
    }

    #[test]
    fn puzzle_is_deterministic() {
        let r = EntityId::from_label("r");
        assert_eq!(issue_puzzle(&S, &r, 9, 10), issue_puzzle(&S, &r, 9, 10));
    }

    #[test]
    fn solution_restores_digest_and_expires() {
        let r = EntityId::from_label("r");
        let p = issue_puzzle(&S, &r, 1_000, 8);
        let (sol, evals) = solve_puzzle(&p).unwrap();
        assert!(evals <= 256);
        let mut x = p.partial_x;
        set_prefix(&mut x, 8, decode_solution(8, &sol).unwrap());
        assert_eq!(hash(&x), p.hx);
        assert_eq!(verify_puzzle(&S, &r, 1_000, &sol, 11_000, 8, 10_000), Ok(()));
        assert_eq!(verify_puzzle(&S, &r, 1_000, &sol, 11_001, 8, 10_000), Err(Reason::PuzzleExpired));
    }

    #[test]
    fn odd_difficulty_prefix_roundtrip() {
        let mut x = [0xFF; HASH_LEN];
        set_prefix(&mut x, 13, 0b1_0100_0000_0011);
        assert_eq!(prefix(&x, 13), 0b1_0100_0000_0011);
        assert_eq!(x[1] & 0x07, 0x07);
        assert_eq!(decode_solution(13, &encode_solution(13, 8191)), Some(8191));
        assert_eq!(decode_solution(13, &[0x20, 0x00]), None);
    }
}
