//! End-to-end attribution of single rows of a trained model.

use super::deep_shap::{DeepShapNet, DeepShapValues, Head};
use super::dualshap::{dualshap_fit, AttributionPair, DualShapConfig, DualShapResult};
use super::kernel_shap::{kernel_shap, KernelShapConfig, ShapValues};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::eval::metrics::argmax;
use crate::model::{fixed_noise, ReverseReconstructor, Table2ImageModel};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which class probability the tabular explanation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClassChoice {
    #[default]
    Predicted,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub background_rows: usize,
    pub kernel_exact_max: usize,
    pub n_coalitions: usize,
    pub noise_seed: u64,
    pub class: ClassChoice,
    /// Seeds background selection, coalition sampling and DualSHAP.
    pub seed: u64,
    pub dualshap: DualShapConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        let k = KernelShapConfig::default();
        Self {
            background_rows: 32,
            kernel_exact_max: k.exact_max_features,
            n_coalitions: k.n_coalitions,
            noise_seed: 7,
            class: ClassChoice::Predicted,
            seed: 0,
            dualshap: DualShapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub class: usize,
    pub phi_tab: Vec<f64>,
    pub fx: f64,
    pub base: f64,
    pub deep_residual: f64,
    pub pair: AttributionPair,
    pub dual: DualShapResult,
}

pub struct Explainer<'a> {
    model: &'a Table2ImageModel<f32>,
    reverse: &'a ReverseReconstructor<f32>,
    config: ExplainConfig,
    noise: Vec<f32>,
    background: Vec<f64>,
    background_images: Vec<f64>,
}

impl<'a> Explainer<'a> {
    /// Draws `config.background_rows` rows of `train` as the reference set.
    pub fn new(
        model: &'a Table2ImageModel<f32>,
        reverse: &'a ReverseReconstructor<f32>,
        train: &TabularDataset,
        config: ExplainConfig,
    ) -> Result<Self> {
        if config.background_rows == 0 {
            return Err(Error::Config("background must have at least one row".into()));
        }
        if train.n_features != model.n_features || reverse.n_features() != model.n_features {
            return Err(Error::Data("model, reconstructor and data disagree on the feature count".into()));
        }
        let m = train.n_rows();
        let k = config.background_rows.min(m);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6267);
        let mut idx: Vec<usize> = sample(&mut rng, m, k).into_vec();
        idx.sort_unstable();
        let background = train.subset(&idx).x;
        let noise = fixed_noise(config.noise_seed, model.arch.pixels());
        let background_images = model.generate(&background, &noise)?;
        Ok(Self { model, reverse, config, noise, background, background_images })
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn noise(&self) -> &[f32] {
        &self.noise
    }

    /// Class probabilities for row-major rows with the fixed noise.
    pub fn predict(&self, rows: &[f64]) -> Result<Vec<f64>> {
        self.model.predict_proba(rows, &self.noise)
    }

    fn target_class(&self, x: &[f64]) -> Result<usize> {
        match self.config.class {
            ClassChoice::Fixed(c) if c < self.model.n_classes => Ok(c),
            ClassChoice::Fixed(c) => Err(Error::Config(format!("class {c} out of range"))),
            ClassChoice::Predicted => Ok(argmax(&self.predict(x)?)),
        }
    }

    /// Kernel SHAP of the target class probability.
    pub fn tabular_shap(&self, x: &[f64], class: usize) -> Result<ShapValues> {
        let n_classes = self.model.n_classes;
        let mut f = |rows: &[f64]| -> Result<Vec<f64>> {
            let probs = self.predict(rows)?;
            Ok(probs.chunks(n_classes).map(|p| p[class]).collect())
        };
        let cfg = KernelShapConfig {
            exact_max_features: self.config.kernel_exact_max,
            n_coalitions: self.config.n_coalitions,
            seed: self.config.seed,
        };
        kernel_shap(&mut f, x, &self.background, &cfg)
    }

    /// Deep SHAP of the class probability on the generated image against
    /// the images generated for the background rows.
    pub fn image_shap(&self, image: &[f64], class: usize) -> Result<DeepShapValues> {
        DeepShapNet::from_model(self.model, Head::Probability(class))?.explain(image, &self.background_images)
    }

    pub fn explain(&self, x: &[f64]) -> Result<Explanation> {
        let class = self.target_class(x)?;
        let shap = self.tabular_shap(x, class)?;
        let image = self.model.generate(x, &self.noise)?;
        let deep = self.image_shap(&image, class)?;
        let x_recon = self.reverse.reconstruct(&image)?;
        let pair = AttributionPair {
            phi_tab: shap.phi.clone(),
            phi_img: deep.phi.clone(),
            x_recon,
            i_recon: image,
            side: self.model.arch.img_side,
            class,
        };
        let dual = dualshap_fit(&pair, &DualShapConfig { seed: self.config.seed, ..self.config.dualshap })?;
        Ok(Explanation {
            class,
            phi_tab: shap.phi,
            fx: shap.fx,
            base: shap.base,
            deep_residual: deep.completeness_residual(),
            pair,
            dual,
        })
    }
}
