//! Joint training of the autoencoder and classifier.

use super::network::{fixed_noise, Architecture, Table2ImageModel, Variant};
use crate::data::{ImagePool, MappingPolicy, MappingSchema, TabularDataset, PIXELS};
use crate::error::{Error, Result};
use crate::eval::metrics::{accuracy, auc};
use crate::vif::{compute_vif, VifReport};
use nncore::{AdamW, AdamWConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// How noise images are drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoisePolicy {
    /// Fresh noise for every forward pass.
    #[default]
    PerForward,
    /// One noise image per training row, kept for the whole run.
    PerInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub repeats: usize,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub mapping: MappingPolicy,
    pub noise: NoisePolicy,
    /// Seed of the fixed noise image used for evaluation and attribution.
    pub eval_noise_seed: u64,
    pub variant: Variant,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        Self {
            batch_size: 64,
            epochs: 100,
            repeats: 3,
            seed: 0,
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            mapping: MappingPolicy::PerEpoch,
            noise: NoisePolicy::PerForward,
            eval_noise_seed: 7,
            variant: Variant::Base,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        self.arch.validate()?;
        if self.arch.pixels() != PIXELS {
            return Err(Error::Config(format!(
                "training needs {PIXELS}-pixel images to match the pool, architecture has {}",
                self.arch.pixels()
            )));
        }
        AdamW::new(self.optimizer())?;
        Ok(())
    }

    /// Seed of repeat `run`; distinct for every run.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub run: usize,
    pub epoch: usize,
    pub recon: f64,
    pub cls: f64,
    pub total: f64,
    pub test_acc: f64,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    /// Parameters of the best epoch.
    pub model: Table2ImageModel<f32>,
    pub vif: Option<VifReport>,
    pub best_epoch: usize,
    pub best_acc: f64,
    pub best_auc: Option<f64>,
    pub epochs: Vec<EpochMetrics>,
    /// Per-batch total loss of the first epoch.
    pub first_epoch_losses: Vec<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub runs: Vec<RunResult>,
    pub mean_acc: f64,
    pub mean_auc: Option<f64>,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs `config.repeats` independent trainings and averages their best epochs.
pub fn fit(
    train: &TabularDataset,
    test: &TabularDataset,
    pool: &ImagePool,
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<FitReport> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.repeats);
    for run in 0..config.repeats {
        let sink = log.as_mut().map(|w| &mut **w as &mut dyn Write);
        runs.push(fit_run(train, test, pool, config, run, sink)?);
    }
    let mean_acc = runs.iter().map(|r| r.best_acc).sum::<f64>() / runs.len() as f64;
    let mean_auc = mean_opt(runs.iter().map(|r| r.best_auc));
    Ok(FitReport { runs, mean_acc, mean_auc })
}

/// One seeded training run keeping the parameters of the best test-accuracy epoch.
pub fn fit_run(
    train: &TabularDataset,
    test: &TabularDataset,
    pool: &ImagePool,
    config: &TrainConfig,
    run: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<RunResult> {
    config.validate()?;
    if train.n_features != test.n_features || train.n_classes != test.n_classes {
        return Err(Error::Data("train and test splits disagree on features or classes".into()));
    }
    if pool.n_classes() < train.n_classes {
        return Err(Error::Data(format!(
            "pool has {} classes, dataset needs {}",
            pool.n_classes(),
            train.n_classes
        )));
    }
    let started = Instant::now();
    let seed = config.run_seed(run);
    let (m, n) = (train.n_rows(), train.n_features);
    let vif = if config.variant.needs_vif() { Some(compute_vif(&train.x, m, n)?) } else { None };
    let mut model =
        Table2ImageModel::<f32>::new(n, train.n_classes, config.variant, config.arch, vif.as_ref(), seed)?;
    let mut opt = AdamW::new(config.optimizer())?;
    let mut schema = MappingSchema::new(seed ^ 0x6d61_7070, config.mapping);
    let stream_rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let (mut order_rng, mut noise_rng, mut drop_rng) = (stream_rng(1), stream_rng(2), stream_rng(3));
    let eval_noise = fixed_noise(config.eval_noise_seed, PIXELS);
    let instance_noise: Vec<f32> = match config.noise {
        NoisePolicy::PerInstance => Tensor::<f32>::randn(&[m, PIXELS], &mut stream_rng(4)).into_data(),
        NoisePolicy::PerForward => Vec::new(),
    };

    let mut best: Option<(usize, f64, Option<f64>, nncore::ParamStore<f32>)> = None;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut first_epoch_losses = Vec::new();
    let mut order: Vec<usize> = (0..m).collect();
    for epoch in 0..config.epochs {
        let assignment = schema.assign(&train.y, pool, epoch)?.to_vec();
        order.shuffle(&mut order_rng);
        let (mut sum_recon, mut sum_cls, mut seen) = (0.0, 0.0, 0usize);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let b = idx.len();
            let mut xb = Vec::with_capacity(b * n);
            let mut target = vec![0f32; b * PIXELS];
            let mut yb = Vec::with_capacity(b);
            for (k, &i) in idx.iter().enumerate() {
                xb.extend_from_slice(train.row(i));
                pool.write_image(train.y[i], assignment[i], &mut target[k * PIXELS..(k + 1) * PIXELS]);
                yb.push(train.y[i]);
            }
            let noise = match config.noise {
                NoisePolicy::PerForward => Tensor::<f32>::randn(&[b, PIXELS], &mut noise_rng),
                NoisePolicy::PerInstance => Tensor::new(
                    &[b, PIXELS],
                    idx.iter().flat_map(|&i| instance_noise[i * PIXELS..(i + 1) * PIXELS].to_vec()).collect(),
                )?,
            };
            let mut tape = Tape::new();
            let xv = tape.input(Tensor::from_f64(&[b, n], &xb)?);
            let rv = tape.input(noise);
            let tv = tape.input(Tensor::new(&[b, PIXELS], target)?);
            let fwd = model.forward(&mut tape, xv, rv, true, &mut drop_rng)?;
            let losses = model.total_loss(&mut tape, fwd.image, fwd.probs, tv, &yb)?;
            let total = tape.value(losses.total).item() as f64;
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("loss {total} at epoch {epoch}, batch {batch}")));
            }
            model.store.zero_grad();
            tape.backward(losses.total, &mut model.store)?;
            opt.step(&mut model.store)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {batch}: {e}")))?;
            sum_recon += tape.value(losses.recon).item() as f64 * b as f64;
            sum_cls += tape.value(losses.cls).item() as f64 * b as f64;
            seen += b;
            if epoch == 0 {
                first_epoch_losses.push(total);
            }
        }
        let probs = model.predict_proba(&test.x, &eval_noise)?;
        let test_acc = accuracy(&probs, test.n_classes, &test.y)?;
        let test_auc = auc(&probs, test.n_classes, &test.y)?;
        let metrics = EpochMetrics {
            run,
            epoch,
            recon: sum_recon / seen as f64,
            cls: sum_cls / seen as f64,
            total: (sum_recon + sum_cls) / seen as f64,
            test_acc,
            test_auc,
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&metrics).expect("metrics serialise");
            writeln!(w, "{line}").map_err(|e| Error::Io { path: "<training log>".into(), source: e })?;
        }
        log::debug!("run {run} epoch {epoch}: acc {test_acc:.4} loss {:.4}", metrics.total);
        if best.as_ref().is_none_or(|b| test_acc > b.1) {
            best = Some((epoch, test_acc, test_auc, model.store.clone()));
        }
        epochs.push(metrics);
    }
    let (best_epoch, best_acc, best_auc, store) = best.expect("at least one epoch");
    model.store = store;
    model.store.zero_grad();
    Ok(RunResult {
        run,
        seed,
        model,
        vif,
        best_epoch,
        best_acc,
        best_auc,
        epochs,
        first_epoch_losses,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}
