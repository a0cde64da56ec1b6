use criterion::{black_box, criterion_group, criterion_main, Criterion};
use scfp_core::perm::{PermSpec, Permutation, Prince};
use scfp_core::StateBits;

fn permutations(c: &mut Criterion) {
    for width in [50, 200] {
        let p = Permutation::new(&PermSpec::keccak(width, 12)).unwrap();
        let s = StateBits::from_u64(width, 0x0123_4567_89ab_cdef);
        c.bench_function(&format!("keccak-p[{width},12]"), |b| b.iter(|| p.permute(black_box(&s))));
        c.bench_function(&format!("keccak-p[{width},12] inverse"), |b| {
            b.iter(|| p.permute_inverse(black_box(&s)))
        });
    }
    let prince = Prince::new(b"0123456789abcdef");
    c.bench_function("prince encrypt", |b| b.iter(|| prince.encrypt(black_box(0x0123_4567_89ab_cdef))));
    c.bench_function("prince decrypt", |b| b.iter(|| prince.decrypt(black_box(0x0123_4567_89ab_cdef))));
}

criterion_group!(benches, permutations);
criterion_main!(benches);
