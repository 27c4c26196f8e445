//! Mirror network mapping generated images back to tabular rows.

use super::network::{fixed_noise, Table2ImageModel};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use nncore::{AdamW, AdamWConfig, Linear, ParamStore, Real, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `pixels -> hidden -> N` (the decoder reversed) followed by `N -> N+extra -> N`
/// (the embedding reversed).
#[derive(Debug, Clone)]
pub struct ReverseReconstructor<T: Real = f32> {
    pub store: ParamStore<T>,
    pub img_in: Linear,
    pub to_latent: Linear,
    pub widen: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 64, seed: 0, optimizer: AdamWConfig::default() }
    }
}

impl<T: Real> ReverseReconstructor<T> {
    pub fn new(pixels: usize, hidden: usize, n_features: usize, extra: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let img_in = Linear::new(&mut store, "rev.img_in", pixels, hidden, &mut rng);
        let to_latent = Linear::new(&mut store, "rev.to_latent", hidden, n_features, &mut rng);
        let widen = Linear::new(&mut store, "rev.widen", n_features, n_features + extra, &mut rng);
        let out = Linear::new(&mut store, "rev.out", n_features + extra, n_features, &mut rng);
        Self { store, img_in, to_latent, widen, out }
    }

    pub fn n_features(&self) -> usize {
        self.out.d_out
    }

    pub fn forward(&self, tape: &mut Tape<T>, images: Var) -> Result<Var> {
        let s = &self.store;
        let h = self.img_in.forward(tape, s, images)?;
        let h = tape.relu(h);
        let h = self.to_latent.forward(tape, s, h)?;
        let h = self.widen.forward(tape, s, h)?;
        let h = tape.relu(h);
        Ok(self.out.forward(tape, s, h)?)
    }

    /// Reconstructed rows (`m x N`) for row-major images.
    pub fn reconstruct(&self, images: &[f64]) -> Result<Vec<f64>> {
        let pixels = self.img_in.d_in;
        let mut out = Vec::new();
        for chunk in images.chunks(256 * pixels) {
            let mut tape = Tape::inference();
            let iv = tape.input(Tensor::from_f64(&[chunk.len() / pixels, pixels], chunk)?);
            let y = self.forward(&mut tape, iv)?;
            out.extend(tape.value(y).data().iter().map(|v| v.f64()));
        }
        Ok(out)
    }

    /// Minimises the MSE between `reconstruct(inputs)` and `targets`.
    /// Returns the mean training loss of every epoch.
    pub fn fit_pairs(&mut self, inputs: &[f64], targets: &[f64], config: &ReverseConfig) -> Result<Vec<f64>> {
        let (pixels, n) = (self.img_in.d_in, self.n_features());
        let m = targets.len() / n;
        if inputs.len() != m * pixels || config.epochs == 0 || config.batch_size == 0 {
            return Err(Error::Config("reverse training needs matching pairs, epochs and batch size".into()));
        }
        let mut opt = AdamW::new(config.optimizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..m).collect();
        let mut curve = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for idx in order.chunks(config.batch_size) {
                let b = idx.len();
                let xi: Vec<f64> = idx.iter().flat_map(|&i| inputs[i * pixels..(i + 1) * pixels].to_vec()).collect();
                let yi: Vec<f64> = idx.iter().flat_map(|&i| targets[i * n..(i + 1) * n].to_vec()).collect();
                let mut tape = Tape::new();
                let iv = tape.input(Tensor::from_f64(&[b, pixels], &xi)?);
                let tv = tape.input(Tensor::from_f64(&[b, n], &yi)?);
                let pred = self.forward(&mut tape, iv)?;
                let loss = tape.mse(pred, tv)?;
                let l = tape.value(loss).item().f64();
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("reverse loss at epoch {epoch}")));
                }
                self.store.zero_grad();
                tape.backward(loss, &mut self.store)?;
                opt.step(&mut self.store)?;
                sum += l * b as f64;
            }
            curve.push(sum / m as f64);
        }
        Ok(curve)
    }
}

/// Trains a reconstructor on images the frozen `model` generates for the
/// training rows with the fixed noise image.
pub fn train_reverse(
    model: &Table2ImageModel<f32>,
    train: &TabularDataset,
    noise_seed: u64,
    config: &ReverseConfig,
) -> Result<(ReverseReconstructor<f32>, Vec<f64>)> {
    let noise = fixed_noise(noise_seed, model.arch.pixels());
    let images = model.generate(&train.x, &noise)?;
    let mut rev = ReverseReconstructor::new(
        model.arch.pixels(),
        model.arch.dec_hidden,
        model.n_features,
        model.arch.embed_extra,
        config.seed,
    );
    let curve = rev.fit_pairs(&images, &train.x, config)?;
    Ok((rev, curve))
}
