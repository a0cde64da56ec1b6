//! PRINCE 64-bit block cipher with a 128-bit key `k0 || k1`.
//!
//! Nibble 0 is the most significant nibble of the block.

const SBOX: [u8; 16] = [
    0xB, 0xF, 0x3, 0x2, 0xA, 0xC, 0x9, 0x1, 0x6, 0x7, 0x8, 0x0, 0xE, 0x5, 0xD, 0x4,
];

const RC: [u64; 12] = [
    0x0000000000000000,
    0x13198a2e03707344,
    0xa4093822299f31d0,
    0x082efa98ec4e6c89,
    0x452821e638d01377,
    0xbe5466cf34e90c6c,
    0x7ef84f78fd955cb1,
    0x85840851f1ac43aa,
    0xc882d32f25323c54,
    0x64a51195e0e3610d,
    0xd3b5a399ca0c2399,
    0xc0ac29b7c97c50dd,
];

const SHIFT_ROWS: [usize; 16] = [0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12, 1, 6, 11];

fn sbox_inverse() -> [u8; 16] {
    let mut inv = [0u8; 16];
    for (i, s) in SBOX.iter().enumerate() {
        inv[*s as usize] = i as u8;
    }
    inv
}

fn nibble(s: u64, i: usize) -> u64 {
    (s >> (60 - 4 * i)) & 0xF
}

fn sub_nibbles(s: u64, table: &[u8; 16]) -> u64 {
    (0..16).fold(0, |acc, i| {
        acc | ((table[nibble(s, i) as usize] as u64) << (60 - 4 * i))
    })
}

fn shift_rows(s: u64, inverse: bool) -> u64 {
    let mut out = 0u64;
    for (i, src) in SHIFT_ROWS.iter().enumerate() {
        if inverse {
            out |= nibble(s, i) << (60 - 4 * src);
        } else {
            out |= nibble(s, *src) << (60 - 4 * i);
        }
    }
    out
}

/// One 16x16 block of M'. `shift` is 0 for M^(0) and 1 for M^(1).
fn m_hat(chunk: u16, shift: usize) -> u16 {
    let bit = |j: usize| (chunk >> (15 - j)) & 1;
    let mut out = 0u16;
    for r in 0..4 {
        for a in 0..4 {
            let mut v = 0;
            for c in 0..4 {
                if a != (r + c + shift) % 4 {
                    v ^= bit(4 * c + a);
                }
            }
            out |= v << (15 - (4 * r + a));
        }
    }
    out
}

fn m_prime(s: u64) -> u64 {
    let shifts = [0, 1, 1, 0];
    (0..4).fold(0, |acc, i| {
        let chunk = (s >> (48 - 16 * i)) as u16;
        acc | ((m_hat(chunk, shifts[i]) as u64) << (48 - 16 * i))
    })
}

#[derive(Clone, Copy, Debug)]
pub struct Prince {
    k0: u64,
    k0_prime: u64,
    k1: u64,
}

impl Prince {
    pub fn new(key: &[u8; 16]) -> Self {
        let k0 = u64::from_be_bytes(key[..8].try_into().unwrap());
        let k1 = u64::from_be_bytes(key[8..].try_into().unwrap());
        Prince {
            k0,
            k0_prime: k0.rotate_right(1) ^ (k0 >> 63),
            k1,
        }
    }

    pub fn encrypt(&self, block: u64) -> u64 {
        self.k0_prime ^ core(block ^ self.k0, self.k1)
    }

    pub fn decrypt(&self, block: u64) -> u64 {
        // PRINCE is alpha-reflective: decryption swaps the whitening keys and
        // uses k1 ^ alpha in the core.
        self.k0 ^ core(block ^ self.k0_prime, self.k1 ^ RC[11])
    }
}

fn core(mut s: u64, k1: u64) -> u64 {
    let inv = sbox_inverse();
    s ^= k1 ^ RC[0];
    for rc in &RC[1..6] {
        s = sub_nibbles(s, &SBOX);
        s = shift_rows(m_prime(s), false);
        s ^= rc ^ k1;
    }
    s = sub_nibbles(s, &SBOX);
    s = m_prime(s);
    s = sub_nibbles(s, &inv);
    for rc in &RC[6..11] {
        s ^= rc ^ k1;
        s = m_prime(shift_rows(s, true));
        s = sub_nibbles(s, &inv);
    }
    s ^ RC[11] ^ k1
}
