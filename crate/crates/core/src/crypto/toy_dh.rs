//! Deliberately tiny Diffie-Hellman group (multiplicative group mod 65537,
//! order 2^16). Only exists so tests can show that a brute-force attacker
//! recovers the shared secret when the group is small enough.

use super::CryptoError;

pub const P: u64 = 65_537;
pub const G: u64 = 3;

fn pow_mod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1;
    base %= P;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % P;
        }
        base = base * base % P;
        exp >>= 1;
    }
    acc
}

pub fn public_value(secret: u16) -> u64 {
    pow_mod(G, secret as u64)
}

pub fn shared_secret(secret: u16, peer: u64) -> Result<u64, CryptoError> {
    if peer <= 1 || peer >= P - 1 {
        return Err(CryptoError::InvalidGroupElement);
    }
    Ok(pow_mod(peer, secret as u64))
}

/// Exhaustive discrete logarithm.
pub fn brute_force_log(public: u64) -> Option<u16> {
    let mut acc = 1;
    for e in 0..=u16::MAX {
        if acc == public {
            return Some(e);
        }
        acc = acc * G % P;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_has_full_order() {
        assert_eq!(pow_mod(G, 1 << 15), P - 1);
        assert_eq!(pow_mod(G, 1 << 16), 1);
    }

    #[test]
    fn eavesdropper_recovers_toy_key() {
        let (a, b) = (4_321u16, 60_001u16);
        let (pa, pb) = (public_value(a), public_value(b));
        let k = shared_secret(a, pb).unwrap();
        assert_eq!(k, shared_secret(b, pa).unwrap());
        let a_guess = brute_force_log(pa).unwrap();
        assert_eq!(shared_secret(a_guess, pb).unwrap(), k);
    }

    #[test]
    fn degenerate_peer_values_are_rejected() {
        for v in [0, 1, P - 1, P, P + 5] {
            assert_eq!(shared_secret(7, v), Err(CryptoError::InvalidGroupElement));
        }
    }
}
