use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use cnnflow::autodiff::{conv2d, transposed_conv2d, ParamStore, Tape};
use cnnflow::cfd::{init_cavity, step_flow, SolverParams};
use cnnflow::convlstm::{convlstm_step, ConvLstmState, ConvLstmWeights};
use cnnflow::nets::{ModelKind, Network, NetworkSpec};
use cnnflow::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("conv2d");
    for channels in [8, 32] {
        let x = random(&[channels, 64, 64], &mut rng);
        let k = random(&[channels, channels, 3, 3], &mut rng);
        let up = random(&[channels, channels, 2, 2], &mut rng);
        let small = random(&[channels, 32, 32], &mut rng);
        group.bench_with_input(BenchmarkId::new("3x3 s1 p1", channels), &channels, |b, _| {
            b.iter(|| conv2d(black_box(&x), &k, None, 1, 1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("transposed 2x2 s2", channels), &channels, |b, _| {
            b.iter(|| transposed_conv2d(black_box(&small), &up, None, 2, 0).unwrap())
        });
    }
    group.finish();
}

fn bench_convlstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let w = ConvLstmWeights::init(&mut store, "lstm", 3, 16, 3, &mut rng).unwrap();
    let x = random(&[3, 64, 64], &mut rng);
    let state = ConvLstmState {
        h: random(&[16, 64, 64], &mut rng),
        c: random(&[16, 64, 64], &mut rng),
    };
    c.bench_function("convlstm step 3->16 at 64x64", |b| {
        b.iter(|| convlstm_step(black_box(&x), &state, &store, &w).unwrap())
    });
}

fn bench_solver(c: &mut Criterion) {
    let params = SolverParams::default();
    let state = init_cavity(&params).unwrap();
    let state = (0..20).fold(state, |s, _| step_flow(&s, &params).unwrap());
    c.bench_function("step_flow 64x64", |b| b.iter(|| step_flow(black_box(&state), &params).unwrap()));
}

fn bench_networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("network 32x32 base 8");
    group.sample_size(20);
    for kind in ModelKind::ALL {
        let spec = NetworkSpec::new(kind, 32, 32).with_base_channels(8).with_hidden_channels(8);
        let net = Network::build(spec, 3).unwrap();
        let frames: Vec<Tensor> = (0..net.input_window()).map(|_| random(&[3, 32, 32], &mut rng)).collect();
        let target = random(&[3, 32, 32], &mut rng);
        group.bench_function(BenchmarkId::new("forward", kind.as_str()), |b| {
            b.iter(|| net.predict(black_box(&frames)).unwrap())
        });
        group.bench_function(BenchmarkId::new("forward+backward", kind.as_str()), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let vars: Vec<_> = frames.iter().map(|f| tape.constant(f.clone()).unwrap()).collect();
                let y = net.forward_window(&mut tape, &vars).unwrap();
                let t = tape.constant(target.clone()).unwrap();
                let loss = tape.mse_loss(y, t).unwrap();
                tape.gradients(loss).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_convlstm, bench_solver, bench_networks);
criterion_main!(benches);
