use criterion::{criterion_group, criterion_main, Criterion};
use lexivis_core::weights::synthetic_vgg19;
use lexivis_core::{
    conv2d, to_input_tensor, ConvWeights, ImageBuffer, Normalization, Tap, Tensor, Vgg19,
};

fn ramp(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i % 97) as f32 - 48.0) / 48.0).collect()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    group.sample_size(10);
    for (name, cin, cout, size) in [
        ("64x224", 64, 64, 224),
        ("256x56", 256, 256, 56),
        ("512x14", 512, 512, 14),
    ] {
        let input = Tensor::new(cin, size, size, ramp(cin * size * size)).unwrap();
        let w = ConvWeights::new(cout, cin, 3, 3, ramp(cout * cin * 9), vec![0.0; cout]).unwrap();
        group.bench_function(name, |b| b.iter(|| conv2d(&input, &w, 1, 1).unwrap()));
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let net = Vgg19::from_parts(
        synthetic_vgg19(1).unwrap(),
        Normalization::imagenet(),
        "bench",
    )
    .unwrap();
    let img = ImageBuffer::from_fn(224, 224, |x, y| [x as u8, y as u8, (x ^ y) as u8]).unwrap();
    let input = to_input_tensor(&img, net.normalization()).unwrap();
    let mut group = c.benchmark_group("vgg19");
    group.sample_size(10);
    group.bench_function("forward_collect", |b| {
        b.iter(|| net.forward_collect(&input, Tap::PostRelu).unwrap())
    });
    group.finish();
}

criterion_group!(benches, conv, forward);
criterion_main!(benches);
