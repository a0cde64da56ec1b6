use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scfp_bench::source;
use scfp_core::isa::{assemble, AsmOptions};
use scfp_core::linker::{link, link_plain, Placement};
use scfp_core::sponge::{KeyMaterial, SpongeParams};
use scfp_core::vm::{run, NoHook, RunConfig};

const KEY: [u8; 16] = *b"scfp-bench-key!!";

fn link_and_run(c: &mut Criterion) {
    let km = KeyMaterial::new(KEY, [1; 16]);
    let cfg = RunConfig::new(50_000_000);
    for name in ["crc_loop", "dispatch"] {
        let src = source(name);
        let plain = link_plain(&assemble(&src, &AsmOptions { slot_words: 1, protected: false }).unwrap()).unwrap();
        c.bench_with_input(BenchmarkId::new("run/plain", name), &plain, |b, img| {
            b.iter(|| run(img, &KEY, &cfg, &mut NoHook).unwrap())
        });
        for (preset, params) in [("ie", SpongeParams::IE), ("aee", SpongeParams::AEE), ("aee-light", SpongeParams::AEE_LIGHT)] {
            let prog = assemble(&src, &AsmOptions { slot_words: params.slot_words(), protected: true }).unwrap();
            c.bench_with_input(BenchmarkId::new(format!("link/{preset}"), name), &prog, |b, prog| {
                b.iter(|| link(prog, &params, &km, Placement::SpanningTree).unwrap())
            });
            let img = link(&prog, &params, &km, Placement::SpanningTree).unwrap().image;
            c.bench_with_input(BenchmarkId::new(format!("run/{preset}"), name), &img, |b, img| {
                b.iter(|| run(img, &KEY, &cfg, &mut NoHook).unwrap())
            });
        }
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = link_and_run
}
criterion_main!(benches);
