//! Bit-level Keccak-p written directly from the step-mapping definitions.
//! Deliberately slow and independent of the library's lane arithmetic.
#![allow(clippy::needless_range_loop)]

/// `a[x][y][z]`, bit `z` of lane `(x, y)`.
type State = Vec<Vec<Vec<u8>>>;

fn from_bits(bits: &[u8], w: usize) -> State {
    let mut a = vec![vec![vec![0u8; w]; 5]; 5];
    for y in 0..5 {
        for x in 0..5 {
            for z in 0..w {
                a[x][y][z] = bits[w * (5 * y + x) + z];
            }
        }
    }
    a
}

fn to_bits(a: &State, w: usize) -> Vec<u8> {
    let mut bits = vec![0u8; 25 * w];
    for y in 0..5 {
        for x in 0..5 {
            for z in 0..w {
                bits[w * (5 * y + x) + z] = a[x][y][z];
            }
        }
    }
    bits
}

fn theta(a: &State, w: usize) -> State {
    let mut c = vec![vec![0u8; w]; 5];
    for x in 0..5 {
        for z in 0..w {
            c[x][z] = (0..5).fold(0, |acc, y| acc ^ a[x][y][z]);
        }
    }
    let mut out = a.clone();
    for x in 0..5 {
        for z in 0..w {
            let d = c[(x + 4) % 5][z] ^ c[(x + 1) % 5][(z + w - 1) % w];
            for y in 0..5 {
                out[x][y][z] ^= d;
            }
        }
    }
    out
}

fn rho(a: &State, w: usize) -> State {
    let mut out = a.clone();
    let (mut x, mut y) = (1usize, 0usize);
    for t in 0..24usize {
        let shift = (t + 1) * (t + 2) / 2;
        for z in 0..w {
            out[x][y][z] = a[x][y][(z + w * 64 - shift % w) % w];
        }
        let nx = y;
        let ny = (2 * x + 3 * y) % 5;
        x = nx;
        y = ny;
    }
    out
}

fn pi(a: &State, w: usize) -> State {
    let mut out = a.clone();
    for x in 0..5 {
        for y in 0..5 {
            for z in 0..w {
                out[x][y][z] = a[(x + 3 * y) % 5][x][z];
            }
        }
    }
    out
}

fn chi(a: &State, w: usize) -> State {
    let mut out = a.clone();
    for x in 0..5 {
        for y in 0..5 {
            for z in 0..w {
                out[x][y][z] = a[x][y][z] ^ ((a[(x + 1) % 5][y][z] ^ 1) & a[(x + 2) % 5][y][z]);
            }
        }
    }
    out
}

fn rc(t: usize) -> u8 {
    if t.is_multiple_of(255) {
        return 1;
    }
    let mut r = vec![1u8, 0, 0, 0, 0, 0, 0, 0];
    for _ in 1..=(t % 255) {
        r.insert(0, 0);
        r[0] ^= r[8];
        r[4] ^= r[8];
        r[5] ^= r[8];
        r[6] ^= r[8];
        r.truncate(8);
    }
    r[0]
}

fn iota(a: &State, w: usize, ir: usize) -> State {
    let l = w.trailing_zeros() as usize;
    let mut out = a.clone();
    for j in 0..=l {
        out[0][0][(1 << j) - 1] ^= rc(j + 7 * ir);
    }
    out
}

/// Keccak-p[25w, nr] on a bit vector of length `25w`.
pub fn keccak_p(bits: &[u8], w: usize, nr: usize) -> Vec<u8> {
    let l = w.trailing_zeros() as usize;
    let mut a = from_bits(bits, w);
    for ir in (12 + 2 * l - nr)..(12 + 2 * l) {
        a = iota(&chi(&pi(&rho(&theta(&a, w), w), w), w), w, ir);
    }
    to_bits(&a, w)
}

pub fn bits_from_bytes(bytes: &[u8], nbits: usize) -> Vec<u8> {
    (0..nbits).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}

pub fn bytes_from_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, b) in bits.iter().enumerate() {
        out[i / 8] |= b << (i % 8);
    }
    out
}
