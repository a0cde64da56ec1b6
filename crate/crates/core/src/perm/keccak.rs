//! Keccak-p[b, nr] for lane widths 2 and 8 (b = 50 and b = 200).
//!
//! Lane `x + 5y` occupies state bits `[w(x + 5y), w(x + 5y) + w)`.

use std::sync::OnceLock;

use crate::bits::StateBits;

const RHO: [u32; 25] = [
    0, 1, 62, 28, 27, 36, 44, 6, 55, 20, 3, 10, 43, 25, 39, 41, 45, 15, 21, 8, 18, 2, 61, 56, 14,
];

const RC: [u64; 24] = [
    0x0000000000000001,
    0x0000000000008082,
    0x800000000000808a,
    0x8000000080008000,
    0x000000000000808b,
    0x0000000080000001,
    0x8000000080008081,
    0x8000000000008009,
    0x000000000000008a,
    0x0000000000000088,
    0x0000000080008009,
    0x000000008000000a,
    0x000000008000808b,
    0x800000000000008b,
    0x8000000000008089,
    0x8000000000008003,
    0x8000000000008002,
    0x8000000000000080,
    0x000000000000800a,
    0x800000008000000a,
    0x8000000080008081,
    0x8000000000008080,
    0x0000000080000001,
    0x8000000080008008,
];

/// Maximum round count `12 + 2l` for lane width `2^l`.
pub fn max_rounds(lane_bits: u32) -> u32 {
    12 + 2 * lane_bits.trailing_zeros()
}

#[derive(Clone, Copy, Debug)]
pub struct KeccakP {
    lane_bits: u32,
    rounds: u32,
}

impl KeccakP {
    pub fn new(width: usize, rounds: u32) -> Option<Self> {
        let lane_bits = match width {
            50 => 2,
            200 => 8,
            _ => return None,
        };
        if rounds > max_rounds(lane_bits) {
            return None;
        }
        Some(KeccakP { lane_bits, rounds })
    }

    pub fn width(&self) -> usize {
        25 * self.lane_bits as usize
    }

    fn mask(&self) -> u64 {
        (1u64 << self.lane_bits) - 1
    }

    fn rotl(&self, v: u64, n: u32) -> u64 {
        let w = self.lane_bits;
        let n = n % w;
        if n == 0 {
            v
        } else {
            ((v << n) | (v >> (w - n))) & self.mask()
        }
    }

    fn rotr(&self, v: u64, n: u32) -> u64 {
        let w = self.lane_bits;
        self.rotl(v, (w - n % w) % w)
    }

    fn first_round(&self) -> usize {
        (max_rounds(self.lane_bits) - self.rounds) as usize
    }

    fn load(&self, s: &StateBits) -> [u64; 25] {
        let w = self.lane_bits as usize;
        let mut a = [0u64; 25];
        for (i, lane) in a.iter_mut().enumerate() {
            *lane = s.get_bits(i * w, w);
        }
        a
    }

    fn store(&self, a: &[u64; 25]) -> StateBits {
        let w = self.lane_bits as usize;
        let mut s = StateBits::zero(self.width());
        for (i, lane) in a.iter().enumerate() {
            s.set_bits(i * w, w, *lane);
        }
        s
    }

    pub fn permute(&self, s: &StateBits) -> StateBits {
        let mut a = self.load(s);
        for ir in self.first_round()..self.first_round() + self.rounds as usize {
            self.round(&mut a, ir);
        }
        self.store(&a)
    }

    pub fn permute_inverse(&self, s: &StateBits) -> StateBits {
        let mut a = self.load(s);
        for ir in (self.first_round()..self.first_round() + self.rounds as usize).rev() {
            self.round_inverse(&mut a, ir);
        }
        self.store(&a)
    }

    fn round(&self, a: &mut [u64; 25], ir: usize) {
        // theta
        let mut c = [0u64; 5];
        for x in 0..5 {
            c[x] = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20];
        }
        for x in 0..5 {
            let d = c[(x + 4) % 5] ^ self.rotl(c[(x + 1) % 5], 1);
            for y in 0..5 {
                a[x + 5 * y] ^= d;
            }
        }
        // rho + pi
        let mut b = [0u64; 25];
        for x in 0..5 {
            for y in 0..5 {
                let i = x + 5 * y;
                b[y + 5 * ((2 * x + 3 * y) % 5)] = self.rotl(a[i], RHO[i]);
            }
        }
        // chi
        let m = self.mask();
        for y in 0..5 {
            for x in 0..5 {
                a[x + 5 * y] =
                    b[x + 5 * y] ^ (!b[(x + 1) % 5 + 5 * y] & m & b[(x + 2) % 5 + 5 * y]);
            }
        }
        // iota
        a[0] ^= RC[ir] & m;
    }

    fn round_inverse(&self, a: &mut [u64; 25], ir: usize) {
        let m = self.mask();
        a[0] ^= RC[ir] & m;
        // chi^-1, one 5-bit row slice at a time
        let inv = chi_inverse_table();
        for y in 0..5 {
            let mut row = [0u64; 5];
            for z in 0..self.lane_bits {
                let mut v = 0usize;
                for x in 0..5 {
                    v |= (((a[x + 5 * y] >> z) & 1) as usize) << x;
                }
                let u = inv[v];
                for (x, r) in row.iter_mut().enumerate() {
                    *r |= (((u >> x) & 1) as u64) << z;
                }
            }
            a[5 * y..5 * y + 5].copy_from_slice(&row);
        }
        // pi^-1 + rho^-1
        let mut b = [0u64; 25];
        for x in 0..5 {
            for y in 0..5 {
                let i = x + 5 * y;
                b[i] = self.rotr(a[y + 5 * ((2 * x + 3 * y) % 5)], RHO[i]);
            }
        }
        *a = b;
        // theta^-1: recover column parities, then undo the column mix
        let w = self.lane_bits as usize;
        let mut parity = 0u64;
        for x in 0..5 {
            let c = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20];
            parity |= c << (x * w);
        }
        let rows = theta_parity_inverse(self.lane_bits);
        let mut orig = 0u64;
        for (bit, row) in rows.iter().enumerate() {
            orig |= (((row & parity).count_ones() & 1) as u64) << bit;
        }
        let c: Vec<u64> = (0..5).map(|x| (orig >> (x * w)) & m).collect();
        for x in 0..5 {
            let d = c[(x + 4) % 5] ^ self.rotl(c[(x + 1) % 5], 1);
            for y in 0..5 {
                a[x + 5 * y] ^= d;
            }
        }
    }
}

fn chi_row(v: usize) -> usize {
    let mut out = 0;
    for x in 0..5 {
        let a = (v >> x) & 1;
        let b = (v >> ((x + 1) % 5)) & 1;
        let c = (v >> ((x + 2) % 5)) & 1;
        out |= (a ^ ((b ^ 1) & c)) << x;
    }
    out
}

fn chi_inverse_table() -> &'static [u8; 32] {
    static TABLE: OnceLock<[u8; 32]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0u8; 32];
        for v in 0..32 {
            t[chi_row(v)] = v as u8;
        }
        t
    })
}

/// Rows of the GF(2) inverse of the map that theta induces on the
/// 5w column-parity bits (bit index `x * w + z`).
fn theta_parity_inverse(lane_bits: u32) -> &'static [u64] {
    static W2: OnceLock<Vec<u64>> = OnceLock::new();
    static W8: OnceLock<Vec<u64>> = OnceLock::new();
    let cell = match lane_bits {
        2 => &W2,
        8 => &W8,
        _ => unreachable!("unsupported lane width"),
    };
    cell.get_or_init(|| {
        let w = lane_bits as usize;
        let n = 5 * w;
        let mask = (1u64 << w) - 1;
        let rot1 = |v: u64| ((v << 1) | (v >> (w - 1))) & mask;
        let apply = |p: u64| -> u64 {
            let c: Vec<u64> = (0..5).map(|x| (p >> (x * w)) & mask).collect();
            let mut out = 0u64;
            for x in 0..5 {
                let d = c[(x + 4) % 5] ^ rot1(c[(x + 1) % 5]);
                out |= (c[x] ^ d) << (x * w);
            }
            out
        };
        // matrix rows: row i has bit j set iff output bit i depends on input bit j
        let mut m: Vec<u64> = vec![0; n];
        for j in 0..n {
            let col = apply(1u64 << j);
            for (i, row) in m.iter_mut().enumerate() {
                if (col >> i) & 1 == 1 {
                    *row |= 1u64 << j;
                }
            }
        }
        let mut inv: Vec<u64> = (0..n).map(|i| 1u64 << i).collect();
        for col in 0..n {
            let pivot = (col..n)
                .find(|&r| (m[r] >> col) & 1 == 1)
                .expect("theta parity map is invertible");
            m.swap(col, pivot);
            inv.swap(col, pivot);
            for r in 0..n {
                if r != col && (m[r] >> col) & 1 == 1 {
                    m[r] ^= m[col];
                    inv[r] ^= inv[col];
                }
            }
        }
        inv
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn chi_row_is_a_permutation() {
        let mut seen = [false; 32];
        for v in 0..32 {
            seen[chi_row(v)] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn zero_rounds_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for width in [50, 200] {
            let p = KeccakP::new(width, 0).unwrap();
            let s = StateBits::random(width, &mut rng);
            assert_eq!(p.permute(&s), s);
            assert_eq!(p.permute_inverse(&s), s);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for width in [50, 200] {
            let p = KeccakP::new(width, 12).unwrap();
            for _ in 0..200 {
                let s = StateBits::random(width, &mut rng);
                assert_eq!(p.permute(&p.permute_inverse(&s)), s);
                assert_eq!(p.permute_inverse(&p.permute(&s)), s);
            }
        }
    }

    #[test]
    fn rejects_too_many_rounds() {
        assert!(KeccakP::new(50, 15).is_none());
        assert!(KeccakP::new(200, 18).is_some());
        assert!(KeccakP::new(1600, 24).is_none());
    }
}
