use std::path::PathBuf;

use ganprune_core::data::{latent_batch, load_dataset, ring_samples, tensor_digest, BatchStream, Split, RING_MODES, RING_RADIUS};
use ganprune_core::models::{build_models, scaled_generator_width, task_spec, TASK_IDS};
use ganprune_core::seeding::Stream;
use ganprune_nn::{Mode, Network};

fn data_dir() -> PathBuf {
    std::env::var_os("GANPRUNE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn have_mnist() -> bool {
    let ok = data_dir().join("mnist/train-images-idx3-ubyte").exists();
    if !ok {
        eprintln!("MNIST not found under {}; run scripts/fetch_mnist.sh", data_dir().display());
    }
    ok
}

fn param_digest(net: &Network) -> Vec<(String, Vec<u32>)> {
    net.named_params().into_iter().map(|(n, p)| (n, p.value.iter().map(|v| v.to_bits()).collect())).collect()
}

#[test]
fn dcgan_generator_emits_64x64_images() {
    let spec = task_spec("dcgan-mnist", None, None).unwrap();
    assert_eq!(spec.latent_dim, 100);
    let (g, d) = build_models(&spec, 0).unwrap();
    let z = latent_batch(0, Stream::TrainLatent, 0, spec.input_shape(3));
    let x = g.predict(&z, Mode::Eval);
    assert_eq!(x.shape(), [3, 1, 64, 64]);
    assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(d.predict(&x, Mode::Eval).shape(), [3, 1, 1, 1]);

    let small = task_spec("dcgan-mnist-28", None, None).unwrap();
    let (g, _) = build_models(&small, 0).unwrap();
    assert_eq!(g.predict(&latent_batch(0, Stream::TrainLatent, 0, small.input_shape(2)), Mode::Eval).shape(), [2, 1, 28, 28]);
}

#[test]
fn same_seed_builds_identical_parameters() {
    for id in TASK_IDS {
        let spec = task_spec(id, None, None).unwrap();
        let (g1, d1) = build_models(&spec, 7).unwrap();
        let (g2, d2) = build_models(&spec, 7).unwrap();
        let (g3, _) = build_models(&spec, 8).unwrap();
        assert_eq!(param_digest(&g1), param_digest(&g2), "{id}");
        assert_eq!(param_digest(&d1), param_digest(&d2), "{id}");
        assert_ne!(param_digest(&g1), param_digest(&g3), "{id}");
    }
}

#[test]
fn half_width_generators_hold_half_the_parameters() {
    for id in TASK_IDS {
        let spec = task_spec(id, None, None).unwrap();
        let w = scaled_generator_width(&spec, 0.5).unwrap();
        let small = task_spec(id, Some(w), None).unwrap();
        let ratio = small.generator_param_count() as f64 / spec.generator_param_count() as f64;
        assert!((ratio - 0.5).abs() <= 0.05 * 0.5, "{id}: width {w} gives ratio {ratio}");
    }
}

#[test]
fn ring_modes_are_reproducible() {
    let (a, ma) = ring_samples(4000, 3);
    let (b, mb) = ring_samples(4000, 3);
    assert_eq!(ma, mb);
    assert!(a.iter().zip(&b).all(|(p, q)| p[0].to_bits() == q[0].to_bits() && p[1].to_bits() == q[1].to_bits()));
    let mut counts = [0usize; RING_MODES];
    for (p, &m) in a.iter().zip(&ma) {
        let angle = 2.0 * std::f32::consts::PI * m as f32 / RING_MODES as f32;
        let (cx, cy) = (RING_RADIUS * angle.cos(), RING_RADIUS * angle.sin());
        let nearest = (0..RING_MODES)
            .min_by(|&i, &j| {
                let d = |k: usize| {
                    let t = 2.0 * std::f32::consts::PI * k as f32 / RING_MODES as f32;
                    (p[0] - RING_RADIUS * t.cos()).powi(2) + (p[1] - RING_RADIUS * t.sin()).powi(2)
                };
                d(i).partial_cmp(&d(j)).unwrap()
            })
            .unwrap();
        assert_eq!(nearest, m as usize, "point {p:?} centred at ({cx}, {cy})");
        counts[m as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c > 350), "{counts:?}");
}

#[test]
fn ring_batches_depend_only_on_seed() {
    let spec = task_spec("ring-2d", None, None).unwrap();
    let ds = load_dataset(&spec, Split::Train, &data_dir()).unwrap();
    let first = |seed| tensor_digest(&BatchStream::new(&ds, seed, 64).unwrap().batch_at(0));
    assert_eq!(first(1), first(1));
    assert_ne!(first(1), first(2));
}

#[test]
fn mnist_splits_have_the_expected_sizes() {
    if !have_mnist() {
        return;
    }
    let spec = task_spec("dcgan-mnist", None, None).unwrap();
    let train = load_dataset(&spec, Split::Train, &data_dir()).unwrap();
    assert_eq!(train.len(), 60_000);
    assert_eq!(train.sample_shape(), [1, 64, 64]);
    let item = train.item(0);
    assert_eq!(item.len(), 64 * 64);
    assert!(item.iter().all(|v| (-1.0..=1.0).contains(v)));
    let test = load_dataset(&task_spec("dcgan-mnist-28", None, None).unwrap(), Split::Test, &data_dir()).unwrap();
    assert_eq!((test.len(), test.sample_shape()), (10_000, [1, 28, 28]));

    let first = |seed| tensor_digest(&BatchStream::new(&train, seed, 64).unwrap().batch_at(0));
    assert_eq!(first(0), first(0));
    assert_ne!(first(0), first(1));
}
