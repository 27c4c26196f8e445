//! The class-indexed pool of reference images and the random mapping of
//! tabular rows onto it.

use super::idx::{load_idx, LabeledImages, PIXELS};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MAX_CLASSES: usize = 20;

const FASHION_NAMES: [&str; 10] = [
    "T-shirt/Top",
    "Trouser",
    "Pullover",
    "Dress",
    "Coat",
    "Sandal",
    "Shirt",
    "Sneaker",
    "Bag",
    "Ankle boot",
];

/// Where the images of one pool class come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Fashion(u8),
    Mnist(u8),
}

impl Source {
    /// Fixed assignment: classes 0-9 are FashionMNIST 0-9, 10-19 are MNIST digits 0-9.
    pub fn for_class(class: usize) -> Result<Self> {
        match class {
            0..=9 => Ok(Source::Fashion(class as u8)),
            10..=19 => Ok(Source::Mnist((class - 10) as u8)),
            _ => Err(Error::Unsupported(format!("class index {class} beyond {MAX_CLASSES} classes"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Source::Fashion(c) => format!("FashionMNIST - {}", FASHION_NAMES[*c as usize]),
            Source::Mnist(d) => format!("MNIST - {d}"),
        }
    }
}

/// Which file split of the image corpora feeds the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CorpusSplit {
    #[default]
    Train,
    Test,
}

/// Locations of the two IDX corpora.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub fashion_dir: PathBuf,
    pub mnist_dir: PathBuf,
    pub split: CorpusSplit,
}

impl Corpora {
    /// Expects `fashion-mnist/` and `mnist/` below `data_dir`.
    pub fn in_dir(data_dir: &Path) -> Self {
        Self {
            fashion_dir: data_dir.join("fashion-mnist"),
            mnist_dir: data_dir.join("mnist"),
            split: CorpusSplit::Train,
        }
    }

    fn load(&self, dir: &Path) -> Result<LabeledImages> {
        let prefix = match self.split {
            CorpusSplit::Train => "train",
            CorpusSplit::Test => "t10k",
        };
        load_idx(
            &dir.join(format!("{prefix}-images-idx3-ubyte")),
            &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    }

    /// Loads only the corpora needed for `n` classes and builds the pool.
    pub fn build_pool(&self, n: usize) -> Result<ImagePool> {
        check_class_count(n)?;
        let fashion = self.load(&self.fashion_dir)?;
        let mnist = if n > 10 { Some(self.load(&self.mnist_dir)?) } else { None };
        build_pool(n, &fashion, mnist.as_ref())
    }
}

fn check_class_count(n: usize) -> Result<()> {
    if n > MAX_CLASSES {
        return Err(Error::Unsupported(format!(
            "{n} classes requested; at most {MAX_CLASSES} are supported"
        )));
    }
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolClass {
    pub source: Source,
    /// Row-major `count x 784` bytes.
    pub pixels: Vec<u8>,
}

impl PoolClass {
    pub fn len(&self) -> usize {
        self.pixels.len() / PIXELS
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn raw(&self, k: usize) -> &[u8] {
        &self.pixels[k * PIXELS..(k + 1) * PIXELS]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool {
    pub classes: Vec<PoolClass>,
}

impl ImagePool {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Pixel values of image `k` of `class`, scaled to `[0, 1]`.
    pub fn image(&self, class: usize, k: usize) -> Vec<f32> {
        self.classes[class].raw(k).iter().map(|&b| b as f32 / 255.0).collect()
    }

    /// Writes image `k` of `class` into `out` (length 784).
    pub fn write_image(&self, class: usize, k: usize, out: &mut [f32]) {
        for (o, &b) in out.iter_mut().zip(self.classes[class].raw(k)) {
            *o = b as f32 / 255.0;
        }
    }
}

/// Pool for `n` classes from already-loaded corpora.
pub fn build_pool(n: usize, fashion: &LabeledImages, mnist: Option<&LabeledImages>) -> Result<ImagePool> {
    check_class_count(n)?;
    let mut classes = Vec::with_capacity(n);
    for c in 0..n {
        let source = Source::for_class(c)?;
        let (set, label) = match source {
            Source::Fashion(l) => (fashion, l),
            Source::Mnist(d) => (
                mnist.ok_or_else(|| Error::Config(format!("{n} classes need the MNIST corpus")))?,
                d,
            ),
        };
        let mut pixels = Vec::new();
        for i in (0..set.len()).filter(|&i| set.labels[i] == label) {
            pixels.extend_from_slice(set.raw(i));
        }
        classes.push(PoolClass { source, pixels });
    }
    Ok(ImagePool { classes })
}

/// How the row-to-image assignment evolves over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MappingPolicy {
    /// A fresh random image of the row's class at every epoch.
    #[default]
    PerEpoch,
    /// One random image per row, drawn once.
    Fixed,
    /// One image per class shared by all rows of that class.
    Single,
}

/// Random class-preserving assignment of rows to pool images.
#[derive(Debug, Clone)]
pub struct MappingSchema {
    pub seed: u64,
    pub policy: MappingPolicy,
    assignment: Vec<usize>,
    drawn: bool,
}

impl MappingSchema {
    pub fn new(seed: u64, policy: MappingPolicy) -> Self {
        Self { seed, policy, assignment: Vec::new(), drawn: false }
    }

    /// Index (within its class bucket) of the image assigned to each row.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Assignment in force during `epoch`.
    pub fn assign(&mut self, labels: &[usize], pool: &ImagePool, epoch: usize) -> Result<&[usize]> {
        if let Some(&c) = labels.iter().find(|&&c| c >= pool.n_classes()) {
            return Err(Error::Data(format!("label {c} has no pool class")));
        }
        if let Some(c) = (0..pool.n_classes()).find(|&c| pool.classes[c].is_empty()) {
            return Err(Error::Data(format!("pool class {c} has no images")));
        }
        let redraw = match self.policy {
            MappingPolicy::PerEpoch => true,
            MappingPolicy::Fixed | MappingPolicy::Single => !self.drawn || self.assignment.len() != labels.len(),
        };
        if redraw {
            let stream = if self.policy == MappingPolicy::PerEpoch { epoch as u64 } else { 0 };
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(stream);
            self.assignment = match self.policy {
                MappingPolicy::Single => {
                    let per_class: Vec<usize> =
                        pool.classes.iter().map(|c| rng.random_range(0..c.len())).collect();
                    labels.iter().map(|&c| per_class[c]).collect()
                }
                _ => labels.iter().map(|&c| rng.random_range(0..pool.classes[c].len())).collect(),
            };
            self.drawn = true;
        }
        Ok(&self.assignment)
    }
}
