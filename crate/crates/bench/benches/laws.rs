use criterion::{criterion_group, criterion_main, Criterion};
use lexivis_core::lexicon::TableMeta;
use lexivis_core::{
    benford_analysis, heaps_analysis, word_count, zipf_analysis, ThresholdSpec, WordCountTable,
};

fn vgg_sized_table() -> WordCountTable {
    const CHANNELS: [usize; 16] = [
        64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512,
    ];
    let mut k = 0u64;
    let layers = CHANNELS
        .iter()
        .map(|&c| {
            (0..c)
                .map(|_| {
                    k += 1;
                    (k * 2654435761) % 5000
                })
                .collect()
        })
        .collect();
    WordCountTable::from_layers(layers, TableMeta::default())
}

fn counting(c: &mut Criterion) {
    let map: Vec<f32> = (0..224 * 224).map(|i| ((i * 7919) % 1000) as f32).collect();
    let t = ThresholdSpec::default();
    c.bench_function("word_count_224", |b| b.iter(|| word_count(&map, &t)));
}

fn fits(c: &mut Criterion) {
    let table = vgg_sized_table();
    c.bench_function("zipf_5504", |b| b.iter(|| zipf_analysis(&table).unwrap()));
    c.bench_function("heaps_5504_x100", |b| {
        b.iter(|| heaps_analysis(&table, 100, 0).unwrap())
    });
    c.bench_function("benford_16", |b| {
        b.iter(|| benford_analysis(&table).unwrap())
    });
}

criterion_group!(benches, counting, fits);
criterion_main!(benches);
