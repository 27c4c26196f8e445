//! Per-sample alignment of tabular and image SHAP evidence.
//!
//! Two small heads predict a mean and a scale for a stochastic gate on each
//! side. The tabular ratio `P = S * phi_tab / X_recon` and the image ratio
//! `Q = match_length(T * phi_img / I_recon)` are pulled together by
//! MSE + KLD + MMD², and the final `P` is the importance vector.

use super::divergence::{kld_var, mmd2_var};
use super::unshuffle::match_length_map;
use crate::error::{Error, Result};
use nncore::{AdamW, AdamWConfig, Linear, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Everything DualSHAP consumes for one explained sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionPair {
    pub phi_tab: Vec<f64>,
    /// Row-major `side x side`.
    pub phi_img: Vec<f64>,
    pub x_recon: Vec<f64>,
    pub i_recon: Vec<f64>,
    pub side: usize,
    pub class: usize,
}

impl AttributionPair {
    pub fn validate(&self) -> Result<()> {
        let (n, pixels) = (self.phi_tab.len(), self.side * self.side);
        if n == 0 || self.x_recon.len() != n || self.phi_img.len() != pixels || self.i_recon.len() != pixels {
            return Err(Error::Data(format!(
                "attribution pair lengths: phi_tab {n}, x_recon {}, phi_img {}, i_recon {} for side {}",
                self.x_recon.len(),
                self.phi_img.len(),
                self.i_recon.len(),
                self.side
            )));
        }
        if n > pixels {
            return Err(Error::Unsupported(format!("{n} features exceed {pixels} pixels")));
        }
        let all = [&self.phi_tab, &self.phi_img, &self.x_recon, &self.i_recon];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("attribution pair contains non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualShapConfig {
    pub iters: usize,
    pub hidden_tab: usize,
    pub hidden_img: usize,
    /// Magnitude floor of the reconstruction denominators.
    pub guard: f64,
    pub seed: u64,
    /// Initial step size; decays to zero along a half cosine when `cosine` is set.
    pub lr: f64,
    pub cosine: bool,
    pub weight_decay: f64,
    /// Reparameterised draws of `S` and `T` averaged into each step's loss.
    pub draws: usize,
}

impl Default for DualShapConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        Self { iters: 500, hidden_tab: 12, hidden_img: 128, guard: 1e-6, seed: 0, lr: 1e-2, cosine: false, weight_decay: opt.weight_decay, draws: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub mse: f64,
    pub kld: f64,
    pub mmd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualShapResult {
    /// Importance vector: `P` of the last iteration (its first draw).
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub mu_s: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub trace: Vec<LossPoint>,
}

impl DualShapResult {
    pub fn final_loss(&self) -> Option<LossPoint> {
        self.trace.last().copied()
    }
}

/// `v` with magnitude at least `eps`, keeping its sign (zero counts as positive).
pub fn guarded(v: f64, eps: f64) -> f64 {
    if v.abs() >= eps {
        v
    } else if v < 0.0 {
        -eps
    } else {
        eps
    }
}

/// Means of consecutive `window`-sized blocks of the total loss.
pub fn window_means(trace: &[LossPoint], window: usize) -> Vec<f64> {
    trace
        .chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| c.iter().map(|p| p.total).sum::<f64>() / c.len() as f64)
        .collect()
}

struct GateHead {
    l1: Linear,
    l2: Linear,
    width: usize,
}

impl GateHead {
    fn new(store: &mut ParamStore<f64>, name: &str, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let l1 = Linear::new(store, &format!("{name}.fc1"), 2 * width, hidden, rng);
        let l2 = Linear::new(store, &format!("{name}.fc2"), hidden, 2 * width, rng);
        Self { l1, l2, width }
    }

    /// Returns `(mu, sigma)`.
    fn gate(&self, tape: &mut Tape<f64>, store: &ParamStore<f64>, input: Var) -> Result<(Var, Var)> {
        let h = self.l1.forward(tape, store, input)?;
        let h = tape.relu(h);
        let out = self.l2.forward(tape, store, h)?;
        let mu = tape.slice(out, 0, self.width)?;
        let raw = tape.slice(out, self.width, self.width)?;
        Ok((mu, tape.softplus(raw)))
    }
}

/// `mu + sigma * eps`.
fn draw(tape: &mut Tape<f64>, mu: Var, sigma: Var, eps: Tensor<f64>) -> Result<Var> {
    let e = tape.input(eps);
    let noise = tape.mul(sigma, e)?;
    Ok(tape.add(mu, noise)?)
}

/// The three discrepancies between one draw of `P` and `Q`.
fn discrepancies(tape: &mut Tape<f64>, p: Var, q: Var, n: usize) -> Result<[Var; 3]> {
    let mse = tape.mse(p, q)?;
    let kld = kld_var(tape, p, q)?;
    let pc = tape.reshape(p, &[n, 1])?;
    let qc = tape.reshape(q, &[n, 1])?;
    Ok([mse, kld, mmd2_var(tape, pc, qc)?])
}

impl GateHead {
}

fn row(values: Vec<f64>) -> Result<Tensor<f64>> {
    Ok(Tensor::new(&[1, values.len()], values)?)
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Fits the two gate heads for one sample and returns the aligned importances.
pub fn dualshap_fit(pair: &AttributionPair, config: &DualShapConfig) -> Result<DualShapResult> {
    pair.validate()?;
    if config.iters == 0 {
        return Err(Error::Config("DualSHAP needs at least one iteration".into()));
    }
    if config.draws == 0 {
        return Err(Error::Config("DualSHAP needs at least one draw per iteration".into()));
    }
    let draws = config.draws;
    let n = pair.phi_tab.len();
    let pixels = pair.side * pair.side;
    let reduce = Arc::new(match_length_map(pair.side, n)?);
    let ratio = |num: &[f64], den: &[f64]| -> Vec<f64> {
        num.iter().zip(den).map(|(a, b)| a / guarded(*b, config.guard)).collect()
    };
    let ratio_tab = ratio(&pair.phi_tab, &pair.x_recon);
    let ratio_img = ratio(&pair.phi_img, &pair.i_recon);
    let in_tab = concat(&pair.phi_tab, &pair.x_recon);
    let in_img = concat(&pair.phi_img, &pair.i_recon);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let head_s = GateHead::new(&mut store, "head_tab", n, config.hidden_tab, &mut rng);
    let head_t = GateHead::new(&mut store, "head_img", pixels, config.hidden_img, &mut rng);
    let mut opt = AdamW::new(AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() })?;

    let mut trace = Vec::with_capacity(config.iters);
    let mut last = None;
    for iter in 0..config.iters {
        if config.cosine {
            let t = iter as f64 / config.iters as f64;
            opt.config.lr = 0.5 * config.lr * (1.0 + (std::f64::consts::PI * t).cos());
        }
        let mut tape = Tape::new();
        let xs = tape.input(row(in_tab.clone())?);
        let xt = tape.input(row(in_img.clone())?);
        let (mu_s, sigma_s) = head_s.gate(&mut tape, &store, xs)?;
        let (mu_t, sigma_t) = head_t.gate(&mut tape, &store, xt)?;
        let a_tab = tape.input(row(ratio_tab.clone())?);
        let a_img = tape.input(row(ratio_img.clone())?);
        let mut sums: Option<[Var; 3]> = None;
        let mut first = None;
        for _ in 0..draws {
            let s = draw(&mut tape, mu_s, sigma_s, Tensor::randn(&[1, n], &mut rng))?;
            let t = draw(&mut tape, mu_t, sigma_t, Tensor::randn(&[1, pixels], &mut rng))?;
            let p = tape.mul(s, a_tab)?;
            let q_raw = tape.mul(t, a_img)?;
            let q = tape.linear_map(q_raw, reduce.clone())?;
            let terms = discrepancies(&mut tape, p, q, n)?;
            sums = Some(match sums {
                None => terms,
                Some(acc) => [tape.add(acc[0], terms[0])?, tape.add(acc[1], terms[1])?, tape.add(acc[2], terms[2])?],
            });
            first.get_or_insert((p, q));
        }
        let (p, q) = first.expect("at least one draw");
        let scale = 1.0 / draws as f64;
        let [mse, kld, mmd] = sums.expect("at least one draw").map(|v| tape.scale(v, scale));
        let partial = tape.add(mse, kld)?;
        let total = tape.add(partial, mmd)?;
        let point = LossPoint {
            mse: tape.value(mse).item(),
            kld: tape.value(kld).item(),
            mmd: tape.value(mmd).item(),
            total: tape.value(total).item(),
        };
        if ![point.mse, point.kld, point.mmd, point.total].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("DualSHAP loss at iteration {iter}: {point:?}")));
        }
        trace.push(point);
        store.zero_grad();
        tape.backward(total, &mut store)?;
        opt.step(&mut store).map_err(|e| Error::NonFinite(format!("DualSHAP iteration {iter}: {e}")))?;
        last = Some((
            tape.value(p).data().to_vec(),
            tape.value(q).data().to_vec(),
            tape.value(mu_s).data().to_vec(),
            tape.value(sigma_s).data().to_vec(),
        ));
    }
    let (p, q, mu_s, sigma_s) = last.expect("at least one iteration");
    Ok(DualShapResult { p, q, mu_s, sigma_s, trace })
}
