use itertools::Itertools;
use nncore::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use table2image::attribution::*;
use table2image::data::TabularDataset;
use table2image::model::{Architecture, ReverseReconstructor, Table2ImageModel, Variant};
use table2image::Error;

/// Random two-layer tanh network used as a black box.
struct RandomModel {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    a: Vec<f64>,
}

impl RandomModel {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = 4;
        Self {
            w: (0..hidden).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            b: (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect(),
            a: (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.w
            .iter()
            .zip(&self.b)
            .zip(&self.a)
            .map(|((w, b), a)| a * (w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b).tanh())
            .sum()
    }

    fn batch(&self, rows: &[f64], n: usize) -> Vec<f64> {
        rows.chunks(n).map(|r| self.eval(r)).collect()
    }
}

/// Shapley values by averaging marginal contributions over every ordering,
/// with absent features drawn from the background rows.
fn permutation_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[f64]) -> Vec<f64> {
    let n = x.len();
    let value = |present: &[bool]| -> f64 {
        let rows: Vec<f64> = background
            .chunks(n)
            .map(|b| f(&(0..n).map(|j| if present[j] { x[j] } else { b[j] }).collect::<Vec<_>>()))
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    let mut phi = vec![0.0; n];
    let mut count = 0.0;
    for order in (0..n).permutations(n) {
        let mut present = vec![false; n];
        let mut prev = value(&present);
        for &j in &order {
            present[j] = true;
            let cur = value(&present);
            phi[j] += cur - prev;
            prev = cur;
        }
        count += 1.0;
    }
    phi.iter().map(|p| p / count).collect()
}

fn shap_of(model: &RandomModel, x: &[f64], bg: &[f64], cfg: &KernelShapConfig) -> ShapValues {
    let n = x.len();
    let mut f = |rows: &[f64]| Ok(model.batch(rows, n));
    kernel_shap(&mut f, x, bg, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_kernel_shap_equals_permutation_shapley(seed in 0u64..10_000, n in 1usize..=6, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = RandomModel::new(n, &mut rng);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bg: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shap = shap_of(&model, &x, &bg, &KernelShapConfig::default());
        prop_assert!(shap.exact);
        let oracle = permutation_shapley(&|r| model.eval(r), &x, &bg);
        for (a, b) in shap.phi.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", shap.phi, oracle);
        }
        prop_assert!(shap.efficiency_residual() < 1e-9);
    }
}

#[test]
fn null_player_and_symmetry() {
    let f = |r: &[f64]| (r[0] * r[1]).sin() + r[0] + r[1];
    let mut g = |rows: &[f64]| Ok(rows.chunks(3).map(f).collect());
    let x = [0.7, 0.7, 5.0];
    let bg = [0.1, 0.1, -3.0, -0.4, -0.4, 2.0];
    let s = kernel_shap(&mut g, &x, &bg, &KernelShapConfig::default()).unwrap();
    assert!(s.phi[2].abs() < 1e-12, "unused feature got {}", s.phi[2]);
    assert!((s.phi[0] - s.phi[1]).abs() < 1e-12);
    assert_eq!(s.fx, f(&x));
}

#[test]
fn sampled_mode_is_exact_for_additive_models() {
    let n = 16;
    let w: Vec<f64> = (0..n).map(|i| (i as f64 - 7.5) / 4.0).collect();
    let f = |r: &[f64]| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let mut g = |rows: &[f64]| Ok(rows.chunks(n).map(f).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bg: Vec<f64> = (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = kernel_shap(&mut g, &x, &bg, &KernelShapConfig { n_coalitions: 512, ..Default::default() }).unwrap();
    assert!(!s.exact);
    for j in 0..n {
        let mean_b = bg.chunks(n).map(|b| b[j]).sum::<f64>() / 4.0;
        assert!((s.phi[j] - w[j] * (x[j] - mean_b)).abs() < 1e-8);
    }
}

#[test]
fn kernel_shap_rejects_bad_inputs() {
    let mut g = |rows: &[f64]| Ok(rows.chunks(2).map(|_| f64::NAN).collect());
    let cfg = KernelShapConfig::default();
    assert!(kernel_shap(&mut g, &[1.0, 2.0], &[], &cfg).is_err());
    assert!(kernel_shap(&mut g, &[1.0, 2.0], &[0.0, 0.0, 1.0], &cfg).is_err());
    assert!(matches!(kernel_shap(&mut g, &[1.0, 2.0], &[0.0, 0.0], &cfg), Err(Error::NonFinite(_))));
    assert_eq!(shapley_kernel(4, 0), f64::INFINITY);
    // (M - 1) / (C(M, s) s (M - s)) for M = 4, s = 2.
    assert!((shapley_kernel(4, 2) - 3.0 / 24.0).abs() < 1e-15);
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, rng)
}

#[test]
fn deep_shap_of_a_linear_network_is_gradient_times_delta() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (c_out, side) = (2, 4);
    let kernels = rand_tensor(&mut rng, &[c_out, 1, 3, 3]);
    let cb = rand_tensor(&mut rng, &[c_out]);
    let w = rand_tensor(&mut rng, &[c_out * side * side, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let net = DeepShapNet {
        layers: vec![
            Layer::Conv { kernels: kernels.clone(), bias: cb.clone(), c_in: 1, side },
            Layer::Dense { w: w.clone(), b: b.clone() },
        ],
        head: Head::Logit(1),
        input_len: side * side,
    };
    let x: Vec<f64> = rand_tensor(&mut rng, &[16]).into_data();
    let bg: Vec<f64> = rand_tensor(&mut rng, &[3 * 16]).into_data();

    let mut store = ParamStore::new();
    let mut tape = Tape::new();
    let xv = tape.input_tracked(Tensor::new(&[1, 1, side, side], x.clone()).unwrap());
    let kv = tape.input(kernels);
    let cbv = tape.input(cb);
    let h = tape.conv2d(xv, kv, cbv).unwrap();
    let h = tape.reshape(h, &[1, c_out * side * side]).unwrap();
    let wv = tape.input(w);
    let bv = tape.input(b);
    let z = tape.affine(h, wv, bv).unwrap();
    let z1 = tape.slice(z, 1, 1).unwrap();
    let out = tape.sum(z1);
    let grad = tape.backward(out, &mut store).unwrap().get(xv).unwrap().clone();

    let s = net.explain(&x, &bg).unwrap();
    for i in 0..16 {
        let mean_b = bg.chunks(16).map(|r| r[i]).sum::<f64>() / 3.0;
        assert!((s.phi[i] - grad.data()[i] * (x[i] - mean_b)).abs() < 1e-10);
    }
    assert!((s.fx - tape.value(out).item()).abs() < 1e-12);
    assert!(s.completeness_residual() < 1e-10);
}

#[test]
fn deep_shap_single_relu_matches_rescale_rule() {
    // y = relu(w . x): the rescale multiplier is (relu(w.x) - relu(w.r)) / (w.x - w.r).
    let w = Tensor::new(&[2, 1], vec![1.0, -2.0]).unwrap();
    let net = DeepShapNet {
        layers: vec![Layer::Dense { w, b: Tensor::zeros(&[1]) }, Layer::Relu],
        head: Head::Logit(0),
        input_len: 2,
    };
    let s = net.explain(&[3.0, 0.5], &[0.0, 1.0]).unwrap();
    let (zx, zr) = (3.0 - 1.0, 0.0 - 2.0);
    let m = (f64::max(zx, 0.0) - f64::max(zr, 0.0)) / (zx - zr);
    assert!((s.phi[0] - m * 3.0).abs() < 1e-12);
    assert!((s.phi[1] - m * -2.0 * -0.5).abs() < 1e-12);
}

fn tiny_model(seed: u64) -> Table2ImageModel<f64> {
    let arch = Architecture { img_side: 8, embed_extra: 4, enc_hidden: 8, dec_hidden: 8, conv1: 3, conv2: 4, fc_hidden: 6, dropout: 0.5 };
    Table2ImageModel::new(3, 4, Variant::Base, arch, None, seed).unwrap()
}

#[test]
fn deep_shap_is_complete_on_the_cnn_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..6 {
        let model = tiny_model(seed);
        for head in [Head::Probability((seed % 4) as usize), Head::Logit(1)] {
            let net = DeepShapNet::from_model(&model, head).unwrap();
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
            let bg: Vec<f64> = (0..5 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
            let s = net.explain(&x, &bg).unwrap();
            assert!(s.completeness_residual() < 1e-3, "residual {}", s.completeness_residual());
            let base = bg.chunks(64).map(|b| net.output(b).unwrap()).sum::<f64>() / 5.0;
            assert!((s.base - base).abs() < 1e-12);
        }
    }
    assert!(DeepShapNet::from_model(&tiny_model(0), Head::Logit(4)).is_err());
    let net = DeepShapNet::from_model(&tiny_model(0), Head::Logit(0)).unwrap();
    assert!(net.explain(&[0.0; 63], &[0.0; 64]).is_err());
    assert!(net.explain(&[0.0; 64], &[]).is_err());
}

proptest! {
    #[test]
    fn unshuffle_is_a_bijection(c in 1usize..3, hb in 1usize..4, wb in 1usize..4, r in 1usize..4, seed in 0u64..1000) {
        let (h, w) = (hb * r, wb * r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<i64> = (0..c * h * w).map(|_| rng.random_range(-50..50)).collect();
        let u = pixel_unshuffle(&x, c, h, w, r).unwrap();
        let (mut a, mut b) = (x.clone(), u.clone());
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        prop_assert_eq!(pixel_shuffle(&u, c * r * r, hb, wb, r).unwrap(), x);
    }

    #[test]
    fn match_length_preserves_the_mean(n in 1usize..=100, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..784).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = match_length(&q, 28, n).unwrap();
        prop_assert_eq!(out.len(), n);
        let mean_in = q.iter().sum::<f64>() / 784.0;
        let mean_out = out.iter().sum::<f64>() / n as f64;
        prop_assert!((mean_in - mean_out).abs() < 1e-12);
        let map = match_length_map(28, n).unwrap();
        for (row, v) in map.iter().zip(&out) {
            let lin: f64 = row.iter().map(|&(i, wgt)| q[i] * wgt).sum();
            prop_assert!((lin - v).abs() < 1e-12);
        }
    }
}

#[test]
fn unshuffle_layout() {
    let x: Vec<u32> = (0..16).collect();
    let u = pixel_unshuffle(&x, 1, 4, 4, 2).unwrap();
    assert_eq!(&u[..4], &[0, 2, 8, 10]);
    assert_eq!(&u[4..8], &[1, 3, 9, 11]);
    assert!(pixel_unshuffle(&x, 1, 4, 4, 3).is_err());
    assert!(pixel_unshuffle(&x, 2, 4, 4, 2).is_err());
}

#[test]
fn match_length_block_oracles() {
    let quadrants = [0.25, -1.0, 3.0, 0.5];
    let q: Vec<f64> = (0..256).map(|p| quadrants[(p / 16 / 8) * 2 + (p % 16) / 8]).collect();
    assert_eq!(match_length(&q, 16, 4).unwrap(), quadrants.to_vec());

    // 49 features on 28x28: two halving stages give the 4x4 block means.
    let q: Vec<f64> = (0..784).map(|p| ((p / 28) * 31 + (p % 28) * 7) as f64 % 13.0).collect();
    let out = match_length(&q, 28, 49).unwrap();
    for (k, v) in out.iter().enumerate() {
        let (bi, bj) = (k / 7, k % 7);
        let block: f64 = (0..16).map(|t| q[(bi * 4 + t / 4) * 28 + bj * 4 + t % 4]).sum::<f64>() / 16.0;
        assert!((v - block).abs() < 1e-12);
    }
    for n in [1, 4, 7, 13, 49, 100] {
        assert!(match_length(&vec![2.5; 784], 28, n).unwrap().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
    assert_eq!(match_length(&q, 28, 784).unwrap(), q);
    assert!(matches!(match_length(&q, 28, 785), Err(Error::Unsupported(_))));
    assert!(match_length(&q, 28, 0).is_err());
    assert_eq!(reduction_stages(28, 4), 2);
    assert_eq!(reduction_stages(28, 100), 1);
}

#[test]
fn mmd_properties() {
    let a = [0.3, -1.2, 2.0, 0.7];
    let b = [1.1, 0.4, -0.3];
    assert!(mmd2(&a, &a, 1).unwrap().abs() < 1e-12);
    assert_eq!(mmd2(&a, &b, 1).unwrap(), mmd2(&b, &a, 1).unwrap());
    let shift = |v: &[f64]| v.iter().map(|x| x + 17.25).collect::<Vec<_>>();
    assert!((mmd2(&a, &b, 1).unwrap() - mmd2(&shift(&a), &shift(&b), 1).unwrap()).abs() < 1e-9);
    for (delta, h) in [(0.5f64, 1.0f64), (2.0, 0.7), (1.0, 3.0)] {
        let v = mmd2_with_bandwidth(&[0.0], &[delta], 1, h).unwrap();
        assert!((v - (2.0 - 2.0 * (-delta * delta / (2.0 * h * h)).exp())).abs() < 1e-15);
    }
    assert!(mmd2(&[1.0, 2.0], &[1.0, 3.0], 2).is_ok());
    assert!(mmd2(&[1.0, 2.0, 3.0], &[1.0, 2.0], 2).is_err());
}

proptest! {
    #[test]
    fn mmd_is_nonnegative_and_symmetric(a in proptest::collection::vec(-5.0f64..5.0, 1..8), b in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
        let ab = mmd2(&a, &b, 1).unwrap();
        prop_assert!(ab >= -1e-12);
        prop_assert_eq!(ab, mmd2(&b, &a, 1).unwrap());
    }

    #[test]
    fn kld_is_nonnegative(p in proptest::collection::vec(-5.0f64..5.0, 4), q in proptest::collection::vec(-5.0f64..5.0, 4)) {
        prop_assert!(kld(&p, &q).unwrap() >= -1e-12);
    }
}

#[test]
fn kld_hand_case() {
    // softmax([0, 1]) against softmax([0, ln 2]) = [1/3, 2/3].
    let e = std::f64::consts::E;
    let p = [1.0 / (1.0 + e), e / (1.0 + e)];
    let expect = p[0] * (p[0] * 3.0).ln() + p[1] * (p[1] * 1.5).ln();
    assert!((kld(&[0.0, 1.0], &[0.0, 2f64.ln()]).unwrap() - expect).abs() < 1e-15);
    assert!(kld(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn tape_discrepancies_match_finite_differences() {
    let p = vec![0.4, -1.1, 0.9, 2.0];
    let q = vec![0.1, 0.3, -0.5, 1.2];
    let eval = |p: &[f64], grad: bool| -> (f64, Vec<f64>) {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let pv = tape.input_tracked(Tensor::new(&[1, 4], p.to_vec()).unwrap());
        let qv = tape.input(Tensor::new(&[1, 4], q.clone()).unwrap());
        let k = kld_var(&mut tape, pv, qv).unwrap();
        let pc = tape.reshape(pv, &[4, 1]).unwrap();
        let qc = tape.reshape(qv, &[4, 1]).unwrap();
        let m = mmd2_var(&mut tape, pc, qc).unwrap();
        let total = tape.add(k, m).unwrap();
        let value = tape.value(total).item();
        assert!((tape.value(k).item() - kld(p, &q).unwrap()).abs() < 1e-14);
        let g = if grad { tape.backward(total, &mut store).unwrap().get(pv).unwrap().data().to_vec() } else { vec![] };
        (value, g)
    };
    let (_, g) = eval(&p, true);
    let h = median_bandwidth(&p, &q, 1);
    for i in 0..4 {
        let step = 1e-6;
        let mut plus = p.clone();
        plus[i] += step;
        let mut minus = p.clone();
        minus[i] -= step;
        // The bandwidth is held fixed while differentiating.
        let f = |v: &[f64]| kld(v, &q).unwrap() + mmd2_with_bandwidth(v, &q, 1, h).unwrap();
        let fd = (f(&plus) - f(&minus)) / (2.0 * step);
        assert!((fd - g[i]).abs() < 1e-7, "component {i}: fd {fd} vs {}", g[i]);
    }
}

fn pair(seed: u64) -> AttributionPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AttributionPair {
        phi_tab: (0..4).map(|_| rng.random_range(-0.2..0.2)).collect(),
        phi_img: (0..64).map(|_| rng.random_range(-0.01..0.01)).collect(),
        x_recon: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        i_recon: (0..64).map(|_| rng.random_range(0.05..1.0)).collect(),
        side: 8,
        class: 0,
    }
}

#[test]
fn dualshap_is_deterministic_and_finite() {
    let cfg = DualShapConfig { iters: 60, hidden_img: 16, ..Default::default() };
    let a = dualshap_fit(&pair(1), &cfg).unwrap();
    let b = dualshap_fit(&pair(1), &cfg).unwrap();
    assert_eq!(a, b);
    let c = dualshap_fit(&pair(1), &DualShapConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.p, c.p);
    assert_eq!((a.p.len(), a.q.len(), a.trace.len()), (4, 4, 60));
    assert!(a.sigma_s.iter().all(|&s| s >= 0.0));
    for l in &a.trace {
        assert!(l.mse.is_finite() && l.kld >= -1e-12 && l.mmd >= -1e-12);
        assert!((l.total - (l.mse + l.kld + l.mmd)).abs() < 1e-12);
    }
    let last = a.final_loss().unwrap();
    let direct: f64 = a.p.iter().zip(&a.q).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / 4.0;
    assert!((last.mse - direct).abs() < 1e-12);
}

#[test]
fn dualshap_rejects_bad_pairs() {
    let cfg = DualShapConfig { iters: 5, hidden_img: 4, ..Default::default() };
    let mut p = pair(2);
    p.phi_img.pop();
    assert!(matches!(dualshap_fit(&p, &cfg), Err(Error::Data(_))));
    let mut p = pair(2);
    p.x_recon[0] = f64::NAN;
    assert!(matches!(dualshap_fit(&p, &cfg), Err(Error::NonFinite(_))));
    let p = AttributionPair { phi_tab: vec![0.1; 5], x_recon: vec![1.0; 5], phi_img: vec![0.0; 4], i_recon: vec![1.0; 4], side: 2, class: 0 };
    assert!(matches!(dualshap_fit(&p, &cfg), Err(Error::Unsupported(_))));
    assert!(dualshap_fit(&pair(2), &DualShapConfig { iters: 0, ..cfg }).is_err());
    assert!(matches!(dualshap_fit(&pair(2), &DualShapConfig { draws: 0, ..cfg }), Err(Error::Config(_))));
}

#[test]
fn dualshap_averages_several_draws_per_step() {
    let one = DualShapConfig { iters: 40, hidden_img: 16, ..Default::default() };
    let three = DualShapConfig { draws: 3, ..one };
    let a = dualshap_fit(&pair(3), &three).unwrap();
    assert_eq!(a, dualshap_fit(&pair(3), &three).unwrap());
    assert_ne!(a.trace, dualshap_fit(&pair(3), &one).unwrap().trace);
    for l in &a.trace {
        assert!(l.mse.is_finite() && l.kld >= -1e-12 && l.mmd >= -1e-12);
        assert!((l.total - (l.mse + l.kld + l.mmd)).abs() < 1e-12);
    }
}

#[test]
fn explainer_end_to_end() {
    let n = 3;
    let arch = Architecture { enc_hidden: 8, dec_hidden: 8, conv1: 2, conv2: 2, fc_hidden: 6, ..Architecture::default() };
    let model = Table2ImageModel::<f32>::new(n, 3, Variant::Base, arch, None, 4).unwrap();
    let reverse = ReverseReconstructor::<f32>::new(784, 8, n, 4, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train = TabularDataset {
        x: (0..40 * n).map(|_| rng.random_range(-1.5..1.5)).collect(),
        y: (0..40).map(|i| i % 3).collect(),
        n_features: n,
        n_classes: 3,
        column_names: vec!["a".into(), "b".into(), "c".into()],
        class_names: vec!["x".into(), "y".into(), "z".into()],
        report: Default::default(),
    };
    let cfg = ExplainConfig {
        background_rows: 8,
        dualshap: DualShapConfig { iters: 30, ..Default::default() },
        ..Default::default()
    };
    let ex = Explainer::new(&model, &reverse, &train, cfg).unwrap();
    assert_eq!(ex.background().len(), 8 * n);
    let row = train.row(5).to_vec();
    let e = ex.explain(&row).unwrap();
    let probs = ex.predict(&row).unwrap();
    let predicted = probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(e.class, predicted);
    assert_eq!((e.phi_tab.len(), e.pair.phi_img.len(), e.dual.p.len()), (n, 784, n));
    assert!((e.phi_tab.iter().sum::<f64>() - (e.fx - e.base)).abs() < 1e-9);
    assert!(e.deep_residual < 1e-3);
    assert_eq!(e, ex.explain(&row).unwrap());
    let fixed = Explainer::new(&model, &reverse, &train, ExplainConfig { class: ClassChoice::Fixed(2), ..cfg }).unwrap();
    assert_eq!(fixed.explain(&row).unwrap().class, 2);
    let bad = Explainer::new(&model, &reverse, &train, ExplainConfig { class: ClassChoice::Fixed(3), ..cfg }).unwrap();
    assert!(bad.explain(&row).is_err());
    assert!(Explainer::new(&model, &reverse, &train, ExplainConfig { background_rows: 0, ..cfg }).is_err());
}
