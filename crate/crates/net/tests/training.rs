use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvcloth_net::checkpoint::load_checkpoint;
use uvcloth_net::layers::Mode;
use uvcloth_net::optim::Adam;
use uvcloth_net::train::{discriminator_step, generator_step, train, Model, TrainConfig, TrainHooks, TrainSample};
use uvcloth_net::{NetError, Tensor4};

fn synthetic(count: usize, n: usize, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Smooth random fields: one low-frequency wave per channel.
    let mut r = |c: usize| {
        let waves: Vec<[f32; 3]> = (0..c).map(|_| [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.0..6.3)]).collect();
        let data = waves
            .iter()
            .flat_map(|w| (0..n * n).map(move |p| 0.8 * (w[0] * (p % n) as f32 + w[1] * (p / n) as f32 + w[2]).sin()))
            .collect();
        Tensor4::<f32>::new([1, c, n, n], data).unwrap()
    };
    (0..count)
        .map(|_| {
            let input = r(18);
            // Targets are a fixed map of the input so there is something to learn.
            let plane = 3 * n * n;
            let targets = (0..3)
                .map(|t| Tensor4::new([1, 3, n, n], input.data()[t * plane..(t + 1) * plane].iter().map(|v| 0.5 * v).collect()).unwrap())
                .collect();
            let masks = (0..3).map(|_| r(1).map(|v| if v > -0.4 { 1.0 } else { 0.0 })).collect();
            TrainSample { input, targets, masks }
        })
        .collect()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        base_width: 4,
        seed: 5,
        ..Default::default()
    }
}

fn snapshot(state: Vec<(String, &mut Vec<f32>)>) -> Vec<Vec<f32>> {
    state.into_iter().map(|(_, v)| v.clone()).collect()
}

#[test]
fn each_step_updates_only_its_network() {
    let samples = synthetic(2, 32, 1);
    let mut model = Model::new(&small_config(1), 32, "h").unwrap();
    let refs: Vec<&Tensor4<f32>> = samples.iter().map(|s| &s.input).collect();
    let x = Tensor4::stack(&refs).unwrap();
    let ys: Vec<Tensor4<f32>> = (0..3).map(|t| Tensor4::stack(&samples.iter().map(|s| &s.targets[t]).collect::<Vec<_>>()).unwrap()).collect();
    let ms: Vec<Tensor4<f32>> = (0..3).map(|t| Tensor4::stack(&samples.iter().map(|s| &s.masks[t]).collect::<Vec<_>>()).unwrap()).collect();
    let y_real = Tensor4::concat_channels(&ys.iter().collect::<Vec<_>>()).unwrap();
    let (mut opt_d, mut opt_g) = (Adam::new(2e-4, 0.5, 0.999), Adam::new(2e-4, 0.5, 0.999));

    let fakes = model.generator.forward(&x, Mode::Train).unwrap();
    let y_fake = Tensor4::concat_channels(&fakes.iter().collect::<Vec<_>>()).unwrap();
    let g_before = snapshot(model.generator.state());
    let d_before = snapshot(model.discriminator.state());
    let loss = discriminator_step(&mut model, &mut opt_d, &x, &y_real, &y_fake, &[0.9, 0.8], &[0.1, 0.2]).unwrap();
    assert!(loss.is_finite());
    assert_eq!(snapshot(model.generator.state()), g_before);
    let d_after = snapshot(model.discriminator.state());
    assert_ne!(d_after, d_before);

    let d_params: Vec<Vec<f32>> = model.discriminator.params().iter().map(|p| p.value.clone()).collect();
    generator_step(&mut model, &mut opt_g, &x, &fakes, &ys, &ms).unwrap();
    let d_params_after: Vec<Vec<f32>> = model.discriminator.params().iter().map(|p| p.value.clone()).collect();
    assert_eq!(d_params_after, d_params);
    assert_ne!(snapshot(model.generator.state()), g_before);
}

#[test]
fn training_is_reproducible_and_reduces_l1() {
    let samples = synthetic(6, 32, 2);
    let run = || {
        let cfg = TrainConfig { batch_size: 2, lr: 1e-3, ..small_config(40) };
        let mut m = Model::new(&cfg, 32, "h").unwrap();
        let log = train(&mut m, &samples, TrainHooks::default()).unwrap();
        (log, snapshot(m.generator.state()))
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a, b);
    assert_eq!(wa, wb);
    assert_eq!(a.len(), 40);
    let first = a[0].l1_all;
    let last = a.last().unwrap().l1_all;
    assert!(last < 0.5 * first, "L1 {first} -> {last}");
    for e in &a {
        assert!(e.loss_d.is_finite() && e.loss_g.is_finite());
        let weighted: f64 = e.l1.iter().sum::<f64>() / 3.0;
        assert!(weighted > 0.0);
    }
}

#[test]
fn checkpoint_tracks_the_latest_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.pxn");
    let samples = synthetic(3, 32, 3);
    let mut model = Model::new(&small_config(2), 32, "stats").unwrap();
    let mut seen = Vec::new();
    let mut on_epoch = |e: &uvcloth_net::train::EpochLog| seen.push(e.epoch);
    train(&mut model, &samples, TrainHooks { checkpoint: Some(&path), on_epoch: Some(&mut on_epoch) }).unwrap();
    assert_eq!(seen, vec![1, 2]);
    let (mut back, epoch) = load_checkpoint(&path).unwrap();
    assert_eq!(epoch, 2);
    assert_eq!(back.stats_hash, "stats");
    assert_eq!(snapshot(back.generator.state()), snapshot(model.generator.state()));
    let x = samples[0].input.clone();
    let p = model.generator.forward(&x, Mode::Eval).unwrap();
    let q = back.generator.forward(&x, Mode::Eval).unwrap();
    assert_eq!(p, q);
}

#[test]
fn non_finite_data_is_reported_as_divergence() {
    let mut samples = synthetic(3, 32, 4);
    samples[1].targets[0].data_mut()[7] = f32::NAN;
    let mut model = Model::new(&small_config(2), 32, "h").unwrap();
    let err = train(&mut model, &samples, TrainHooks::default()).unwrap_err();
    assert!(matches!(err, NetError::Diverged { epoch: 1, .. }), "{err}");
}

#[test]
fn mismatched_resolution_is_rejected() {
    let samples = synthetic(2, 32, 6);
    let mut model = Model::new(&small_config(1), 64, "h").unwrap();
    assert!(matches!(train(&mut model, &samples, TrainHooks::default()), Err(NetError::Shape(_))));
}
