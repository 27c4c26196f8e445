//! The Table2Image network: tabular embedding, noise-conditioned
//! autoencoder and CNN classifier.

use crate::error::{Error, Result};
use crate::vif::{dir_init_weights, mul_scale_init, vif_init_weights, VifReport};
use nncore::{Conv2d, Linear, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Layer widths. The defaults give the 28x28 network; smaller values are
/// useful for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub img_side: usize,
    pub embed_extra: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub fc_hidden: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            img_side: 28,
            embed_extra: 4,
            enc_hidden: 128,
            dec_hidden: 128,
            conv1: 32,
            conv2: 64,
            fc_hidden: 128,
            dropout: 0.5,
        }
    }
}

impl Architecture {
    pub fn pixels(&self) -> usize {
        self.img_side * self.img_side
    }

    /// Length of the flattened feature map after the two pooling stages.
    pub fn flat(&self) -> usize {
        let s = self.img_side / 4;
        self.conv2 * s * s
    }

    pub fn validate(&self) -> Result<()> {
        if self.img_side == 0 || self.img_side % 4 != 0 {
            return Err(Error::Config(format!("image side {} must be a positive multiple of 4", self.img_side)));
        }
        let widths = [self.enc_hidden, self.dec_hidden, self.conv1, self.conv2, self.fc_hidden];
        if widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    Base,
    /// Concatenates a second embedding whose first layer starts at `1 / VIF`.
    Vif,
    /// Initialises the first embedding layer at `1 / (VIF + 10)`.
    Dir,
    /// Concatenates a trainable per-feature scaling started at `1 / VIF`.
    Mul,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Vif, Variant::Dir, Variant::Mul];

    pub fn needs_vif(self) -> bool {
        self != Variant::Base
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::Vif => "vif",
            Variant::Dir => "dir",
            Variant::Mul => "mul",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "vif" => Ok(Variant::Vif),
            "dir" => Ok(Variant::Dir),
            "mul" => Ok(Variant::Mul),
            other => Err(Error::Config(format!("unknown variant {other:?} (base, vif, dir, mul)"))),
        }
    }
}

/// Handles to the intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub embedding: Var,
    pub latent: Var,
    /// `[B x pixels]` generated images in `(0, 1)`.
    pub image: Var,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub recon: Var,
    pub cls: Var,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct Table2ImageModel<T: Real = f32> {
    pub store: ParamStore<T>,
    pub arch: Architecture,
    pub variant: Variant,
    pub n_features: usize,
    pub n_classes: usize,
    pub fc1: Linear,
    pub fc2: Linear,
    /// Second embedding branch (`FC9`, `FC10`) of the VIF variant.
    pub vif_branch: Option<(Linear, Linear)>,
    pub mul_scale: Option<ParamId>,
    pub fc3: Linear,
    pub fc4: Linear,
    pub fc5: Linear,
    pub fc6: Linear,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc7: Linear,
    pub fc8: Linear,
}

impl<T: Real> Table2ImageModel<T> {
    pub fn new(
        n_features: usize,
        n_classes: usize,
        variant: Variant,
        arch: Architecture,
        vif: Option<&VifReport>,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if n_features == 0 {
            return Err(Error::Config("model needs at least one feature".into()));
        }
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let vif = match (variant.needs_vif(), vif) {
            (true, None) => return Err(Error::Config(format!("variant {variant} needs a VIF report"))),
            (true, Some(r)) if r.len() != n_features => {
                return Err(Error::Config(format!("VIF report has {} entries for {n_features} features", r.len())))
            }
            (_, v) => v,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n = n_features;
        let wide = n + arch.embed_extra;
        let fc1 = Linear::new(&mut store, "fc1", n, wide, &mut rng);
        let fc2 = Linear::new(&mut store, "fc2", wide, n, &mut rng);
        if variant == Variant::Dir {
            store.get_mut(fc1.w).value = dir_init_weights(vif.unwrap(), n, wide)?;
        }
        let vif_branch = if variant == Variant::Vif {
            let fc9 = Linear::new(&mut store, "fc9", n, wide, &mut rng);
            let fc10 = Linear::new(&mut store, "fc10", wide, n, &mut rng);
            store.get_mut(fc9.w).value = vif_init_weights(vif.unwrap(), n, wide)?;
            Some((fc9, fc10))
        } else {
            None
        };
        let mul_scale = if variant == Variant::Mul {
            Some(store.add("mul_scale", mul_scale_init(vif.unwrap())))
        } else {
            None
        };
        let d_emb = if matches!(variant, Variant::Vif | Variant::Mul) { 2 * n } else { n };
        let pixels = arch.pixels();
        let fc3 = Linear::new(&mut store, "fc3", pixels + d_emb, arch.enc_hidden, &mut rng);
        let fc4 = Linear::new(&mut store, "fc4", arch.enc_hidden, n, &mut rng);
        let fc5 = Linear::new(&mut store, "fc5", n + d_emb, arch.dec_hidden, &mut rng);
        let fc6 = Linear::new(&mut store, "fc6", arch.dec_hidden, pixels, &mut rng);
        let conv1 = Conv2d::new(&mut store, "conv1", 1, arch.conv1, &mut rng);
        let conv2 = Conv2d::new(&mut store, "conv2", arch.conv1, arch.conv2, &mut rng);
        let fc7 = Linear::new(&mut store, "fc7", arch.flat(), arch.fc_hidden, &mut rng);
        let fc8 = Linear::new(&mut store, "fc8", arch.fc_hidden, n_classes, &mut rng);
        Ok(Self {
            store,
            arch,
            variant,
            n_features,
            n_classes,
            fc1,
            fc2,
            vif_branch,
            mul_scale,
            fc3,
            fc4,
            fc5,
            fc6,
            conv1,
            conv2,
            fc7,
            fc8,
        })
    }

    pub fn d_emb(&self) -> usize {
        match self.variant {
            Variant::Vif | Variant::Mul => 2 * self.n_features,
            Variant::Base | Variant::Dir => self.n_features,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Table2ImageModel<U> {
        Table2ImageModel {
            store: self.store.cast(),
            arch: self.arch,
            variant: self.variant,
            n_features: self.n_features,
            n_classes: self.n_classes,
            fc1: self.fc1,
            fc2: self.fc2,
            vif_branch: self.vif_branch,
            mul_scale: self.mul_scale,
            fc3: self.fc3,
            fc4: self.fc4,
            fc5: self.fc5,
            fc6: self.fc6,
            conv1: self.conv1,
            conv2: self.conv2,
            fc7: self.fc7,
            fc8: self.fc8,
        }
    }

    fn check_width(&self, tape: &Tape<T>, v: Var, width: usize, what: &str) -> Result<()> {
        let t = tape.value(v);
        if t.ndim() != 2 || t.last_dim() != width {
            return Err(Error::Nn(nncore::NnError::Shape(format!(
                "{what} must be [B x {width}], got {:?}",
                t.shape()
            ))));
        }
        Ok(())
    }

    /// `P(x)`, concatenated with the VIF branch or the scaled input for the
    /// two widened variants.
    pub fn embed(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.check_width(tape, x, self.n_features, "tabular input")?;
        let s = &self.store;
        let h = self.fc1.forward(tape, s, x)?;
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, s, h)?;
        let p = tape.relu(h);
        let out = match (self.vif_branch, self.mul_scale) {
            (Some((fc9, fc10)), _) => {
                let h = fc9.forward(tape, s, x)?;
                let h = tape.relu(h);
                let h = fc10.forward(tape, s, h)?;
                let q = tape.relu(h);
                tape.concat(&[p, q])?
            }
            (None, Some(scale)) => {
                let rows = tape.value(x).rows();
                let c = tape.param(s, scale);
                let c = tape.reshape(c, &[1, self.n_features])?;
                let ones = tape.input(Tensor::ones(&[rows, 1]));
                let c_rows = tape.matmul(ones, c)?;
                let q = tape.mul(c_rows, x)?;
                tape.concat(&[p, q])?
            }
            (None, None) => p,
        };
        Ok(out)
    }

    /// Latent code `z` from noise `r` (`[B x pixels]`) and the embedding.
    pub fn encode(&self, tape: &mut Tape<T>, embedding: Var, r: Var) -> Result<Var> {
        self.check_width(tape, r, self.arch.pixels(), "noise")?;
        let h = tape.concat(&[r, embedding])?;
        let h = self.fc3.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let h = self.fc4.forward(tape, &self.store, h)?;
        Ok(tape.relu(h))
    }

    /// Flattened image in `(0, 1)` from the latent code and the embedding.
    pub fn decode(&self, tape: &mut Tape<T>, latent: Var, embedding: Var) -> Result<Var> {
        let h = tape.concat(&[latent, embedding])?;
        let h = self.fc5.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let h = self.fc6.forward(tape, &self.store, h)?;
        Ok(tape.sigmoid(h))
    }

    /// Class logits and probabilities for flattened images.
    pub fn classify(
        &self,
        tape: &mut Tape<T>,
        image: Var,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<(Var, Var)> {
        self.check_width(tape, image, self.arch.pixels(), "image")?;
        let b = tape.value(image).rows();
        let side = self.arch.img_side;
        let s = &self.store;
        let h = tape.reshape(image, &[b, 1, side, side])?;
        let h = self.conv1.forward(tape, s, h)?;
        let h = tape.relu(h);
        let h = tape.maxpool2d(h)?;
        let h = self.conv2.forward(tape, s, h)?;
        let h = tape.relu(h);
        let h = tape.maxpool2d(h)?;
        let h = tape.reshape(h, &[b, self.arch.flat()])?;
        let h = self.fc7.forward(tape, s, h)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.arch.dropout, training, rng)?;
        let logits = self.fc8.forward(tape, s, h)?;
        let probs = tape.softmax(logits);
        Ok((logits, probs))
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        r: Var,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Forward> {
        let embedding = self.embed(tape, x)?;
        let latent = self.encode(tape, embedding, r)?;
        let image = self.decode(tape, latent, embedding)?;
        let (logits, probs) = self.classify(tape, image, training, rng)?;
        Ok(Forward { embedding, latent, image, logits, probs })
    }

    /// `mse(image, target) + cross_entropy(probs, y)`.
    pub fn total_loss(&self, tape: &mut Tape<T>, image: Var, probs: Var, target: Var, y: &[usize]) -> Result<Losses> {
        let recon = tape.mse(image, target)?;
        let cls = tape.cross_entropy(probs, y)?;
        let total = tape.add(recon, cls)?;
        Ok(Losses { recon, cls, total })
    }

    fn inference_batches(
        &self,
        x: &[f64],
        noise: &[f32],
        mut visit: impl FnMut(&Tape<T>, Forward) -> Result<()>,
    ) -> Result<()> {
        let n = self.n_features;
        let pixels = self.arch.pixels();
        if noise.len() != pixels || x.len() % n != 0 {
            return Err(Error::Config(format!(
                "inference needs rows of {n} features and a {pixels}-pixel noise image"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in x.chunks(256 * n) {
            let rows = chunk.len() / n;
            let mut tape = Tape::inference();
            let xv = tape.input(Tensor::from_f64(&[rows, n], chunk)?);
            let r: Vec<T> = (0..rows).flat_map(|_| noise.iter().map(|&v| T::of(v as f64))).collect();
            let rv = tape.input(Tensor::new(&[rows, pixels], r)?);
            let fwd = self.forward(&mut tape, xv, rv, false, &mut rng)?;
            visit(&tape, fwd)?;
        }
        Ok(())
    }

    /// Class probabilities (`m x n_classes`, row-major) with a fixed noise image.
    pub fn predict_proba(&self, x: &[f64], noise: &[f32]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len() / self.n_features.max(1) * self.n_classes);
        self.inference_batches(x, noise, |tape, fwd| {
            out.extend(tape.value(fwd.probs).data().iter().map(|v| v.f64()));
            Ok(())
        })?;
        Ok(out)
    }

    /// Generated images (`m x pixels`, row-major) with a fixed noise image.
    pub fn generate(&self, x: &[f64], noise: &[f32]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.inference_batches(x, noise, |tape, fwd| {
            out.extend(tape.value(fwd.image).data().iter().map(|v| v.f64()));
            Ok(())
        })?;
        Ok(out)
    }
}

/// Standard-normal noise image drawn from `seed`.
pub fn fixed_noise(seed: u64, pixels: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::<f32>::randn(&[pixels], &mut rng).into_data()
}
