use playstyle_net::branch::INPUT_SHAPE;
use playstyle_net::gradcheck::{check_gradients, kink_margin};
use playstyle_net::layers::{conv_forward, Shape};
use playstyle_net::model::{triplet_loss, Inputs, Model, Triplet};
use playstyle_net::NetConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs<T: playstyle_net::Real>(n: usize, rng: &mut ChaCha8Rng) -> Inputs<T> {
    let mut x = Inputs::default();
    for _ in 0..n {
        let loc: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let dir: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        x.push(&loc, &dir);
    }
    x
}

fn reduced() -> NetConfig {
    NetConfig {
        channels: [2, 2, 3, 2],
        fc_hidden: 4,
        embed_dim: 3,
        alpha: 0.5,
        ..Default::default()
    }
}

#[test]
fn shape_trace_matches_architecture_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::<f32>::new(NetConfig::default(), &mut rng);
    let x = random_inputs::<f32>(3, &mut rng);
    let (emb, cache) = model.forward_train(&x, 7);
    let (loc, dir) = cache.trace();
    // height × width × channels, as tabulated
    let want: [(&str, [usize; 3]); 14] = [
        ("conv1a", [36, 48, 4]),
        ("conv1b", [36, 48, 4]),
        ("pool1", [18, 24, 4]),
        ("conv2a", [18, 24, 16]),
        ("conv2b", [18, 24, 16]),
        ("pool2", [9, 12, 16]),
        ("conv3a", [10, 12, 32]),
        ("conv3b", [10, 12, 32]),
        ("pool3", [5, 6, 32]),
        ("conv4a", [5, 6, 64]),
        ("conv4b", [5, 6, 64]),
        ("flatten", [1920, 1, 1]),
        ("fc1", [128, 1, 1]),
        ("fc2", [10, 1, 1]),
    ];
    for trace in [loc, dir] {
        assert_eq!(trace.len(), want.len());
        for ((name, s), (wn, w)) in trace.iter().zip(want) {
            assert_eq!(name, wn);
            let got = if s.h == 1 && s.w == 1 { [s.c, 1, 1] } else { [s.h, s.w, s.c] };
            assert_eq!(got, w, "{name}");
        }
    }
    assert_eq!(emb.len(), 3 * 20);
    for r in emb.chunks(20) {
        let n: f64 = r.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    let inf = model.embed(&x);
    for r in inf.chunks(20) {
        let n: f64 = r.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_input_and_bias_give_zero_preactivation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::<f64>::new(NetConfig::default(), &mut rng);
    let conv = &model.loc.convs[0];
    assert!(conv.bias.iter().all(|&b| b == 0.0));
    let z = conv_forward(conv, &vec![0.0; INPUT_SHAPE.len()], 1, INPUT_SHAPE);
    assert!(z.iter().all(|&v| v == 0.0));
    let s = Shape::new(4, 36, 48);
    let z2 = conv_forward(&model.loc.convs[1], &vec![0.0; s.len()], 1, s);
    assert!(z2.iter().all(|&v| v == 0.0));
}

#[test]
fn inference_is_deterministic_and_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::<f32>::new(NetConfig::default(), &mut rng);
    let x = random_inputs::<f32>(4, &mut rng);
    let a = model.embed(&x);
    let b = model.embed(&x);
    assert_eq!(a, b);
    let mut one = Inputs::default();
    one.loc = x.loc[..INPUT_SHAPE.len()].to_vec();
    one.dir = x.dir[..INPUT_SHAPE.len()].to_vec();
    one.n = 1;
    assert_eq!(model.embed(&one)[..], a[..20]);
}

#[test]
fn branches_are_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::<f32>::new(NetConfig::default(), &mut rng);
    let x = random_inputs::<f32>(1, &mut rng);
    let swapped = Inputs { n: 1, loc: x.dir.clone(), dir: x.loc.clone() };
    let a = model.embed(&x);
    let b = model.embed(&swapped);
    assert!(a.iter().zip(&b).any(|(u, v)| (u - v).abs() > 1e-4));
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::<f64>::new(reduced(), &mut rng);
    let triplets: Vec<Triplet> = vec![[0, 1, 2], [0, 0, 3], [1, 0, 4], [3, 4, 5], [5, 3, 1]];
    // redraw inputs until no ReLU or hinge sits within 1e-6 of its kink
    let x = (0..)
        .map(|_| random_inputs::<f64>(6, &mut rng))
        .find(|x| kink_margin(&model, x, &triplets, 11) > 1e-6)
        .unwrap();
    let report = check_gradients(&model, &x, &triplets, 1e-5, 11);
    for t in &report.tensors {
        assert!(t.checked > 0, "{}: every element skipped", t.name);
        assert!(t.rel_error <= 1e-3, "{}: relative error {}", t.name, t.rel_error);
    }
    let checked: usize = report.tensors.iter().map(|t| t.checked).sum();
    let skipped: usize = report.tensors.iter().map(|t| t.skipped).sum();
    assert!(skipped * 10 < checked, "{skipped} skipped of {}", checked + skipped);
}

#[test]
fn inactive_batch_has_zero_gradient_and_duplication_doubles_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Model::<f64>::new(reduced(), &mut rng);
    let x = random_inputs::<f64>(4, &mut rng);
    let (emb, cache) = model.forward_train(&x, 1);
    let dim = model.embed_dim();
    let (_, g0, active) = triplet_loss(&emb, dim, &[[0, 1, 2]], -10.0);
    assert_eq!(active, 0);
    let grads = model.backward(&cache, &g0);
    assert!(grads.params().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));

    let t: Vec<Triplet> = vec![[0, 1, 2], [2, 3, 1]];
    let (l1, g1, _) = triplet_loss(&emb, dim, &t, 4.0);
    let doubled: Vec<Triplet> = t.iter().chain(&t).copied().collect();
    let (l2, g2, _) = triplet_loss(&emb, dim, &doubled, 4.0);
    assert!((l2 - 2.0 * l1).abs() < 1e-12);
    let a = model.backward(&cache, &g1);
    let b = model.backward(&cache, &g2);
    for ((_, ta), (_, tb)) in a.params().iter().zip(b.params()) {
        for (u, v) in ta.iter().zip(tb) {
            assert!((2.0 * u - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn training_steps_are_reproducible() {
    use playstyle_net::adam::{Adam, AdamConfig};
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = Model::<f32>::new(reduced(), &mut rng);
        let x = random_inputs::<f32>(5, &mut rng);
        let mut opt = Adam::new(&model, AdamConfig::default());
        for step in 0..3 {
            let (emb, cache) = model.forward_train(&x, step);
            let (_, g, _) = triplet_loss(&emb, model.embed_dim(), &[[0, 1, 2], [3, 4, 0]], 0.5);
            let grads = model.backward(&cache, &g);
            opt.step(&mut model, &grads, 0.05);
            model.apply_stats(&cache);
        }
        model
    };
    assert_eq!(run(), run());
}

#[test]
fn inference_matches_training_forward_with_batch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = NetConfig { dropout: 0.0, ..NetConfig::default() };
    let mut model = Model::<f64>::new(cfg, &mut rng);
    let mut x = Inputs::<f64>::default();
    for _ in 0..300 {
        // count-normalized grids, as the trainer feeds them
        let loc: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..1.0) / 875.0).collect();
        let dir: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..1.0) / 875.0).collect();
        x.push(&loc, &dir);
    }
    let (train_emb, cache) = model.forward_train(&x, 0);
    model.apply_stats_with(&cache, 1.0);
    let infer = model.embed(&x);
    let worst = train_emb.iter().zip(&infer).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 2e-2, "train and inference embeddings differ by {worst}");
}

#[test]
fn recalibration_pools_chunk_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = NetConfig { dropout: 0.3, ..reduced() };
    let model = Model::<f64>::new(cfg, &mut rng);
    let x = random_inputs::<f64>(60, &mut rng);

    // one chunk: exactly the full-batch statistics, dropout ignored
    let mut whole = model.clone();
    whole.recalibrate(&x, 60);
    let mut no_drop = model.clone();
    no_drop.config.dropout = 0.0;
    let (_, cache) = no_drop.forward_train(&x, 0);
    let mut direct = model.clone();
    direct.apply_stats_with(&cache, 1.0);
    for ((name, a), (_, b)) in whole.buffers().iter().zip(direct.buffers()) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()), "{name}: {u} vs {v}");
        }
    }

    // chunked: same first-layer mean, which does not depend on the chunking
    let mut chunked = model.clone();
    chunked.recalibrate(&x, 7);
    let (a, b) = (&chunked.loc.bns[0].running_mean, &whole.loc.bns[0].running_mean);
    for (u, v) in a.iter().zip(b) {
        assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()));
    }
}
