mod common;

use common::keccak_oracle::{bits_from_bytes, bytes_from_bits, keccak_p};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scfp_core::perm::{PermSpec, Permutation, Prince};
use scfp_core::StateBits;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");

fn kat_lines(name: &str) -> Vec<Vec<String>> {
    std::fs::read_to_string(format!("{DATA}/{name}"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

fn oracle(s: &StateBits, rounds: usize) -> StateBits {
    let w = s.width() / 25;
    let out = keccak_p(&bits_from_bytes(&s.to_le_bytes(), s.width()), w, rounds);
    StateBits::from_le_bytes(s.width(), &bytes_from_bits(&out)).unwrap()
}

#[test]
fn oracle_matches_keccak_f1600_zero_state() {
    let out = keccak_p(&vec![0u8; 1600], 64, 24);
    let lane = |i: usize| {
        (0..64).fold(0u64, |acc, z| acc | ((out[64 * i + z] as u64) << z))
    };
    assert_eq!(lane(0), 0xf1258f7940e1dde7);
    assert_eq!(lane(1), 0x84d5ccf933c0478a);
    assert_eq!(lane(24), 0xeaf1ff7b5ceca249);
}

#[test]
fn library_matches_oracle_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (width, max) in [(50usize, 14u32), (200, 18)] {
        for rounds in [1, 2, 12, max] {
            let p = Permutation::new(&PermSpec::keccak(width, rounds)).unwrap();
            for _ in 0..50 {
                let s = StateBits::random(width, &mut rng);
                assert_eq!(p.permute(&s).unwrap(), oracle(&s, rounds as usize), "b={width} nr={rounds}");
            }
        }
    }
}

#[test]
fn frozen_keccak_vectors() {
    for (file, width) in [("keccak_p50_12.txt", 50), ("keccak_p200_12.txt", 200)] {
        let p = Permutation::new(&PermSpec::keccak(width, 12)).unwrap();
        let lines = kat_lines(file);
        assert!(lines.len() >= 8);
        for l in lines {
            let input = StateBits::from_hex(width, &l[0]).unwrap();
            let output = StateBits::from_hex(width, &l[1]).unwrap();
            assert_eq!(p.permute(&input).unwrap(), output);
            assert_eq!(p.permute_inverse(&output).unwrap(), input);
        }
    }
}

/// Regenerates the frozen vectors from the oracle.
#[test]
#[ignore]
fn regenerate_keccak_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (file, width) in [("keccak_p50_12.txt", 50), ("keccak_p200_12.txt", 200)] {
        let mut text = format!("# Keccak-p[{width},12]: input output, little-endian hex\n");
        let mut inputs = vec![StateBits::zero(width)];
        let mut one = StateBits::zero(width);
        one.set_bit(0, true);
        inputs.push(one);
        while inputs.len() < 16 {
            inputs.push(StateBits::random(width, &mut rng));
        }
        for s in inputs {
            text += &format!("{} {}\n", s.to_hex(), oracle(&s, 12).to_hex());
        }
        std::fs::write(format!("{DATA}/{file}"), text).unwrap();
    }
}

#[test]
fn prince_known_answers() {
    for l in kat_lines("prince_kat.txt") {
        let hex = |s: &str| u64::from_str_radix(s, 16).unwrap();
        let mut key = [0u8; 16];
        key[..8].copy_from_slice(&hex(&l[1]).to_be_bytes());
        key[8..].copy_from_slice(&hex(&l[2]).to_be_bytes());
        let p = Prince::new(&key);
        assert_eq!(p.encrypt(hex(&l[0])), hex(&l[3]), "pt {}", l[0]);
        assert_eq!(p.decrypt(hex(&l[3])), hex(&l[0]));
    }
}

#[test]
fn prince_decrypt_inverts_encrypt() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let p = Prince::new(&rng.gen());
        let b: u64 = rng.gen();
        assert_eq!(p.decrypt(p.encrypt(b)), b);
    }
}
