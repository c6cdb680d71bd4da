use coad::decode::{generate, BaseSource, CoadSource, DecodePolicy};
use coad::fusion::coad_next_token;
use coad::world::{oracle_next, pretrained_next};
use coad::Context;
use coad_bench::{bench_inputs, bench_world, fusion_modes};
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn next_token_ops(c: &mut Criterion) {
    let (config, suite) = bench_world();
    let (scene, belief, ctx) = bench_inputs(&config, &suite);

    c.bench_function("oracle_next", |b| {
        b.iter(|| oracle_next(black_box(&ctx), &scene.truth(), &suite).unwrap())
    });
    c.bench_function("pretrained_next", |b| {
        b.iter(|| pretrained_next(black_box(&ctx), &scene, &suite).unwrap())
    });
    for (name, fusion) in fusion_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        c.bench_function(&format!("coad_next_token/{name}"), |b| {
            b.iter(|| {
                coad_next_token(
                    black_box(&ctx),
                    &scene,
                    &belief,
                    &suite,
                    &fusion,
                    &mut rng,
                )
                .unwrap()
            })
        });
    }
}

fn caption_generation(c: &mut Criterion) {
    let (config, suite) = bench_world();
    let (scene, belief, _) = bench_inputs(&config, &suite);
    let policy = DecodePolicy {
        max_tokens: 64,
        ..DecodePolicy::default()
    };

    c.bench_function("generate/base", |b| {
        b.iter(|| {
            let mut source = BaseSource::new(&suite, &scene);
            generate(&scene, &Context::bos(), &mut source, &policy).unwrap()
        })
    });
    let (_, soft) = &fusion_modes()[0];
    c.bench_function("generate/coad_soft", |b| {
        b.iter(|| {
            let mut source = CoadSource::new(&suite, &scene, belief.clone(), soft.clone(), 5);
            generate(&scene, &Context::bos(), &mut source, &policy).unwrap()
        })
    });
}

criterion_group!(benches, next_token_ops, caption_generation);
criterion_main!(benches);
