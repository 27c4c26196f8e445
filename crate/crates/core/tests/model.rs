use nncore::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use table2image::data::{build_pool, ImagePool, LabeledImages, MappingPolicy, TabularDataset, PIXELS};
use table2image::model::dump::{dump_images, to_byte, DumpItem};
use table2image::model::snapshot;
use table2image::model::*;
use table2image::vif::{compute_vif, VifReport, VIF_MAX};
use table2image::Error;

fn tiny_arch(side: usize) -> Architecture {
    Architecture { img_side: side, embed_extra: 4, enc_hidden: 6, dec_hidden: 6, conv1: 2, conv2: 3, fc_hidden: 5, dropout: 0.0 }
}

fn ones_vif(n: usize) -> VifReport {
    VifReport { vif: vec![1.0; n], r2: vec![0.0; n], clamped: vec![false; n], vif_max: VIF_MAX }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, rng)
}

#[test]
fn default_shapes_follow_the_layer_chain() {
    let n = 78;
    let m = Table2ImageModel::<f32>::new(n, 5, Variant::Base, Architecture::default(), None, 0).unwrap();
    assert_eq!((m.fc1.d_in, m.fc1.d_out, m.fc2.d_out), (78, 82, 78));
    assert_eq!(m.fc3.d_in, 784 + 78);
    assert_eq!((m.fc3.d_out, m.fc4.d_out), (128, 78));
    assert_eq!((m.fc5.d_in, m.fc6.d_out), (78 + 78, 784));
    assert_eq!((m.fc7.d_in, m.fc7.d_out, m.fc8.d_out), (3136, 128, 5));
    let v = Table2ImageModel::<f32>::new(n, 5, Variant::Vif, Architecture::default(), Some(&ones_vif(n)), 0).unwrap();
    assert_eq!(v.d_emb(), 156);
    assert_eq!((v.fc3.d_in, v.fc5.d_in), (784 + 156, 78 + 156));
}

#[test]
fn forward_shapes_and_ranges() {
    let (n, b) = (5, 3);
    for variant in Variant::ALL {
        let m = Table2ImageModel::<f64>::new(n, 4, variant, tiny_arch(8), Some(&ones_vif(n)), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let x = tape.input(randn(&mut rng, &[b, n]));
        let r = tape.input(randn(&mut rng, &[b, 64]));
        let f = m.forward(&mut tape, x, r, false, &mut rng).unwrap();
        assert_eq!(tape.value(f.embedding).shape(), &[b, m.d_emb()]);
        assert_eq!(tape.value(f.latent).shape(), &[b, n]);
        assert_eq!(tape.value(f.image).shape(), &[b, 64]);
        assert!(tape.value(f.image).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        for row in tape.value(f.probs).data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let bad = tape.input(Tensor::zeros(&[b, n + 1]));
        assert!(m.embed(&mut tape, bad).is_err());
    }
}

#[test]
fn zero_weights_give_zero_codes_and_grey_images() {
    let n = 4;
    let mut m = Table2ImageModel::<f64>::new(n, 3, Variant::Base, tiny_arch(8), None, 0).unwrap();
    for p in m.store.iter_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let x = tape.input(randn(&mut rng, &[2, n]));
    let r = tape.input(randn(&mut rng, &[2, 64]));
    let f = m.forward(&mut tape, x, r, false, &mut rng).unwrap();
    assert!(tape.value(f.embedding).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(f.latent).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(f.image).data().iter().all(|&v| v == 0.5));
    assert!(tape.value(f.probs).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn vif_branch_matches_hand_formula_at_init() {
    let n = 3;
    let vif = VifReport { vif: vec![1.0, 2.0, 4.0], r2: vec![0.0, 0.5, 0.75], clamped: vec![false; 3], vif_max: VIF_MAX };
    let m = Table2ImageModel::<f64>::new(n, 2, Variant::Vif, tiny_arch(4), Some(&vif), 3).unwrap();
    let (_, fc10) = m.vif_branch.unwrap();
    let x = [0.5, 1.0, 2.0];
    // First layer: every hidden unit sees sum_i x_i / VIF_i (bias zero).
    let h = (x[0] / 1.0 + x[1] / 2.0 + x[2] / 4.0_f64).max(0.0);
    let w10 = m.store.value(fc10.w);
    let b10 = m.store.value(fc10.b);
    let expect: Vec<f64> = (0..n)
        .map(|j| ((0..fc10.d_in).map(|k| h * w10.data()[k * n + j]).sum::<f64>() + b10.data()[j]).max(0.0))
        .collect();
    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(&[1, n], x.to_vec()).unwrap());
    let e = m.embed(&mut tape, xv).unwrap();
    let out = tape.value(e).data();
    let mut plain = Tape::new();
    let xv = plain.input(Tensor::new(&[1, n], x.to_vec()).unwrap());
    let h1 = m.fc1.forward(&mut plain, &m.store, xv).unwrap();
    let h1 = plain.relu(h1);
    let h2 = m.fc2.forward(&mut plain, &m.store, h1).unwrap();
    let p = plain.relu(h2);
    assert_eq!(&out[..n], plain.value(p).data());
    for j in 0..n {
        assert!((out[n + j] - expect[j]).abs() < 1e-12);
    }
}

#[test]
fn mul_and_dir_initialisation() {
    let vif = VifReport { vif: vec![1.0, 10.0], r2: vec![0.0, 0.9], clamped: vec![false; 2], vif_max: VIF_MAX };
    let m = Table2ImageModel::<f32>::new(2, 2, Variant::Mul, tiny_arch(4), Some(&vif), 0).unwrap();
    assert_eq!(m.store.value(m.mul_scale.unwrap()).data(), &[1.0, 0.1]);
    let d = Table2ImageModel::<f32>::new(2, 2, Variant::Dir, tiny_arch(4), Some(&vif), 0).unwrap();
    let w = d.store.value(d.fc1.w).data();
    assert!(w[..6].iter().all(|&v| v == 1.0 / 11.0));
    assert!(w[6..].iter().all(|&v| v == 0.05));
    assert!(matches!(
        Table2ImageModel::<f32>::new(2, 2, Variant::Vif, tiny_arch(4), None, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn loss_is_mse_plus_cross_entropy() {
    let m = Table2ImageModel::<f64>::new(3, 3, Variant::Base, tiny_arch(4), None, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let img: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let tgt: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).cos().abs()).collect();
    let logits = randn(&mut rng, &[2, 3]);
    let iv = tape.input(Tensor::new(&[2, 16], img.clone()).unwrap());
    let tv = tape.input(Tensor::new(&[2, 16], tgt.clone()).unwrap());
    let lv = tape.input(logits.clone());
    let pv = tape.softmax(lv);
    let y = [2, 0];
    let l = m.total_loss(&mut tape, iv, pv, tv, &y).unwrap();
    let mse = img.iter().zip(&tgt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 32.0;
    let ce = logits
        .data()
        .chunks(3)
        .zip(y)
        .map(|(z, y)| {
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum::<f64>()
        / 2.0;
    assert!((tape.value(l.recon).item() - mse).abs() < 1e-12);
    assert!((tape.value(l.cls).item() - ce).abs() < 1e-12);
    assert!((tape.value(l.total).item() - (mse + ce)).abs() < 1e-12);

    let mut tape = Tape::new();
    let half = tape.input(Tensor::full(&[1, 16], 0.5));
    let one = tape.input(Tensor::ones(&[1, 16]));
    let r = tape.mse(half, one).unwrap();
    assert_eq!(tape.value(r).item(), 0.25);
}

fn loss_of(m: &Table2ImageModel<f64>, x: &Tensor<f64>, r: &Tensor<f64>, t: &Tensor<f64>, y: &[usize]) -> (Tape<f64>, Losses) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let rv = tape.input(r.clone());
    let tv = tape.input(t.clone());
    let f = m.forward(&mut tape, xv, rv, false, &mut rng).unwrap();
    let l = m.total_loss(&mut tape, f.image, f.probs, tv, y).unwrap();
    (tape, l)
}

#[test]
fn gradients_match_finite_differences() {
    for variant in Variant::ALL {
        let n = 3;
        let vif = VifReport { vif: vec![1.5, 2.0, 3.0], r2: vec![0.3; 3], clamped: vec![false; 3], vif_max: VIF_MAX };
        let mut m = Table2ImageModel::<f64>::new(n, 3, variant, tiny_arch(4), Some(&vif), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::new(&[2, n], randn(&mut rng, &[2, n]).data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
        let r = randn(&mut rng, &[2, 16]);
        let t = Tensor::new(&[2, 16], (0..32).map(|i| ((i * 7 % 11) as f64) / 11.0).collect()).unwrap();
        let y = [1, 2];
        let (tape, l) = loss_of(&m, &x, &r, &t, &y);
        m.store.zero_grad();
        tape.backward(l.total, &mut m.store).unwrap();
        let ids: Vec<_> = m.store.ids().collect();
        let h = 1e-6;
        let mut checked = 0;
        for id in ids {
            let analytic = m.store.grad(id).clone();
            for k in (0..analytic.numel()).step_by(7.max(analytic.numel() / 5)) {
                let orig = m.store.value(id).data()[k];
                m.store.get_mut(id).value.data_mut()[k] = orig + h;
                let (tp, lp) = loss_of(&m, &x, &r, &t, &y);
                m.store.get_mut(id).value.data_mut()[k] = orig - h;
                let (tm, lm) = loss_of(&m, &x, &r, &t, &y);
                m.store.get_mut(id).value.data_mut()[k] = orig;
                let fd = (tp.value(lp.total).item() - tm.value(lm.total).item()) / (2.0 * h);
                let a = analytic.data()[k];
                assert!((fd - a).abs() < 1e-6 + 1e-4 * fd.abs(), "{variant} {}[{k}]: fd {fd} vs {a}", m.store.get(id).name);
                checked += 1;
            }
        }
        assert!(checked > 40);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let n = 4;
    let vif = ones_vif(n);
    for variant in Variant::ALL {
        let mut m = Table2ImageModel::<f64>::new(n, 3, variant, tiny_arch(8), Some(&vif), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = randn(&mut rng, &[16, n]);
        let r = randn(&mut rng, &[16, 64]);
        let t = Tensor::new(&[16, 64], (0..1024).map(|i| (i % 5) as f64 / 4.0).collect()).unwrap();
        let y: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let (tape, l) = loss_of(&m, &x, &r, &t, &y);
        m.store.zero_grad();
        tape.backward(l.total, &mut m.store).unwrap();
        for p in m.store.iter() {
            assert!(p.grad.data().iter().any(|&g| g != 0.0), "{variant}: {} has an all-zero gradient", p.name);
        }
    }
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let n = 4;
    let vif = VifReport { vif: vec![1.0, 2.0, 3.0, 4.0], r2: vec![0.0; 4], clamped: vec![false; 4], vif_max: VIF_MAX };
    for variant in Variant::ALL {
        let m = Table2ImageModel::<f32>::new(n, 3, variant, tiny_arch(28), Some(&vif), 21).unwrap();
        let meta = serde_json::json!({ "dataset": "unit", "variant": variant.to_string() });
        let bytes = snapshot::to_bytes(&m, &meta);
        let (back, meta_back) = snapshot::from_bytes(&bytes).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(back.variant, variant);
        for (a, b) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let x = [0.1, -0.3, 0.7, 1.2];
        let noise = fixed_noise(7, PIXELS);
        assert_eq!(m.predict_proba(&x, &noise).unwrap(), back.predict_proba(&x, &noise).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(snapshot::from_bytes(&bad), Err(Error::Format(_))));
        assert!(snapshot::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}

#[test]
fn inference_is_deterministic() {
    let m = Table2ImageModel::<f32>::new(4, 3, Variant::Base, tiny_arch(28), None, 2).unwrap();
    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
    let noise = fixed_noise(7, PIXELS);
    assert_eq!(m.generate(&x, &noise).unwrap(), m.generate(&x, &noise).unwrap());
    assert_eq!(fixed_noise(7, PIXELS), noise);
    assert_ne!(fixed_noise(8, PIXELS), noise);
}

/// Classes with distinct constant brightness and a linearly separable table.
fn toy_problem() -> (TabularDataset, TabularDataset, ImagePool) {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2u8 {
        for k in 0..5u8 {
            pixels.extend(std::iter::repeat_n(40 + 150 * c + k, PIXELS));
            labels.push(c);
        }
    }
    let pool = build_pool(2, &LabeledImages { pixels, labels }, None).unwrap();
    let make = |m: usize, offset: usize| {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..m {
            let c = (i + offset) % 2;
            let t = ((i * 37 + offset) % 17) as f64 / 17.0;
            x.extend([if c == 1 { 1.0 + t } else { -1.0 - t }, t - 0.5, (i as f64).sin()]);
            y.push(c);
        }
        TabularDataset {
            x,
            y,
            n_features: 3,
            n_classes: 2,
            column_names: vec!["a".into(), "b".into(), "c".into()],
            class_names: vec!["0".into(), "1".into()],
            report: Default::default(),
        }
    };
    (make(48, 0), make(16, 1), pool)
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        repeats: 2,
        batch_size: 16,
        lr: 5e-3,
        arch: Architecture { enc_hidden: 8, dec_hidden: 8, conv1: 2, conv2: 2, fc_hidden: 8, ..Architecture::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn fit_keeps_the_best_epoch() {
    let (train, test, pool) = toy_problem();
    let mut log = Vec::new();
    let report = fit(&train, &test, &pool, &quick_config(), Some(&mut log)).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert_ne!(report.runs[0].seed, report.runs[1].seed);
    for run in &report.runs {
        let max = run.epochs.iter().map(|e| e.test_acc).fold(f64::MIN, f64::max);
        assert_eq!(run.best_acc, max);
        assert_eq!(run.epochs[run.best_epoch].test_acc, max);
        let noise = fixed_noise(quick_config().eval_noise_seed, PIXELS);
        let probs = run.model.predict_proba(&test.x, &noise).unwrap();
        let acc = table2image::eval::accuracy(&probs, 2, &test.y).unwrap();
        assert_eq!(acc, run.best_acc, "returned parameters are not the best epoch's");
        assert_eq!(run.first_epoch_losses.len(), 3);
    }
    let mean = report.runs.iter().map(|r| r.best_acc).sum::<f64>() / 2.0;
    assert_eq!(report.mean_acc, mean);
    let lines: Vec<serde_json::Value> =
        String::from_utf8(log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    assert!(lines[0].get("recon").is_some() && lines[0].get("test_auc").is_some());
}

#[test]
fn fit_is_reproducible_and_validates() {
    let (train, test, pool) = toy_problem();
    let cfg = TrainConfig { repeats: 1, epochs: 2, ..quick_config() };
    let a = fit(&train, &test, &pool, &cfg, None).unwrap();
    let b = fit(&train, &test, &pool, &cfg, None).unwrap();
    assert_eq!(a.runs[0].epochs, b.runs[0].epochs);
    for bad in [
        TrainConfig { epochs: 0, ..cfg.clone() },
        TrainConfig { batch_size: 0, ..cfg.clone() },
        TrainConfig { repeats: 0, ..cfg.clone() },
        TrainConfig { lr: -1.0, ..cfg.clone() },
    ] {
        assert!(fit(&train, &test, &pool, &bad, None).is_err());
    }
    let single = TrainConfig { mapping: MappingPolicy::Single, ..cfg.clone() };
    assert!(fit(&train, &test, &pool, &single, None).is_ok());
    let vif = fit(&train, &test, &pool, &TrainConfig { variant: Variant::Vif, ..cfg }, None).unwrap();
    assert_eq!(vif.runs[0].vif.as_ref().unwrap(), &compute_vif(&train.x, 48, 3).unwrap());
}

#[test]
fn reverse_recovers_a_linear_map() {
    let (pixels, n, m) = (6, 2, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs: Vec<f64> = (0..m * pixels).map(|_| rng.random_range(0.0..1.0)).collect();
    let a = [[0.5, -0.2], [0.1, 0.3], [-0.4, 0.2], [0.2, 0.1], [0.0, -0.3], [0.3, 0.4]];
    let targets: Vec<f64> = inputs
        .chunks(pixels)
        .flat_map(|row| (0..n).map(move |j| row.iter().zip(&a).map(|(v, w)| v * w[j]).sum::<f64>()).collect::<Vec<_>>())
        .collect();
    let mut rev = ReverseReconstructor::<f64>::new(pixels, 32, n, 4, 1);
    let cfg = ReverseConfig {
        epochs: 300,
        batch_size: 32,
        seed: 2,
        optimizer: nncore::AdamWConfig { lr: 3e-3, weight_decay: 0.0, ..Default::default() },
    };
    let curve = rev.fit_pairs(&inputs, &targets, &cfg).unwrap();
    assert!(curve.last().unwrap() < &curve[0]);
    let pred = rev.reconstruct(&inputs).unwrap();
    assert_eq!(pred.len(), m * n);
    let mse = pred.iter().zip(&targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    let rmse = mse.sqrt();
    assert!(rmse < 1e-2, "reconstruction RMSE {rmse}");
}

#[test]
fn image_dumps() {
    assert_eq!((to_byte(1.0), to_byte(0.0), to_byte(2.0), to_byte(-1.0)), (255, 0, 255, 0));
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<f64> = (0..3 * 16).map(|i| (i % 16) as f64 / 15.0).collect();
    let items: Vec<DumpItem> = (0..3)
        .map(|i| DumpItem { id: i, class: i % 2, source: format!("FashionMNIST - {i}") })
        .collect();
    let files = dump_images(&images, 4, &items, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    let bytes = std::fs::read(&files[0]).unwrap();
    assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
    assert_eq!(*bytes.last().unwrap(), 255);
    let index = std::fs::read_to_string(dir.path().join("index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 4);
}
