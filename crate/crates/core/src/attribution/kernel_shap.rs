//! Kernel SHAP: Shapley values as the solution of a Shapley-kernel weighted
//! least-squares fit over feature coalitions.

use crate::error::{Error, Result};
use crate::vif::cholesky_solve;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelShapConfig {
    /// Enumerate all coalitions up to this many features.
    pub exact_max_features: usize,
    /// Number of sampled coalitions (in complementary pairs) above that.
    pub n_coalitions: usize,
    pub seed: u64,
}

impl Default for KernelShapConfig {
    fn default() -> Self {
        Self { exact_max_features: 12, n_coalitions: 2048, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapValues {
    pub phi: Vec<f64>,
    /// `f(x)`.
    pub fx: f64,
    /// Mean of `f` over the background rows.
    pub base: f64,
    pub exact: bool,
}

impl ShapValues {
    /// `|sum(phi) - (f(x) - base)|`.
    pub fn efficiency_residual(&self) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.fx - self.base)).abs()
    }
}

/// Shapley kernel weight of one coalition of size `s` out of `m` features.
pub fn shapley_kernel(m: usize, s: usize) -> f64 {
    if s == 0 || s == m {
        return f64::INFINITY;
    }
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Value of each coalition: mean of `f` over background rows with the
/// features outside the coalition replaced by the background values.
fn coalition_values(
    f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    background: &[f64],
    masks: &[Vec<bool>],
) -> Result<Vec<f64>> {
    let n = x.len();
    let k = background.len() / n;
    let mut rows = Vec::with_capacity(masks.len() * k * n);
    for mask in masks {
        for b in background.chunks(n) {
            rows.extend((0..n).map(|i| if mask[i] { x[i] } else { b[i] }));
        }
    }
    let out = f(&rows)?;
    if out.len() != masks.len() * k {
        return Err(Error::Data(format!("model returned {} values for {} rows", out.len(), masks.len() * k)));
    }
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("model output {bad} during Kernel SHAP")));
    }
    Ok(out.chunks(k).map(|c| c.iter().sum::<f64>() / k as f64).collect())
}

fn all_masks(m: usize) -> Vec<Vec<bool>> {
    (1..(1usize << m) - 1).map(|bits| (0..m).map(|i| bits >> i & 1 == 1).collect()).collect()
}

fn sampled_masks(m: usize, budget: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut masks = Vec::with_capacity(budget);
    while masks.len() + 2 <= budget.max(2) {
        let mut u = rng.random::<f64>() * total;
        let mut size = m - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                size = i + 1;
                break;
            }
            u -= w;
        }
        let mut mask = vec![false; m];
        for i in sample(&mut rng, m, size) {
            mask[i] = true;
        }
        let complement = mask.iter().map(|b| !b).collect();
        masks.push(mask);
        masks.push(complement);
    }
    masks
}

/// Weighted least squares with `sum(phi) = delta`, solved by eliminating the
/// last coefficient.
fn constrained_wls(masks: &[Vec<bool>], weights: &[f64], values: &[f64], v0: f64, delta: f64, m: usize) -> Result<Vec<f64>> {
    if m == 1 {
        return Ok(vec![delta]);
    }
    let p = m - 1;
    let mut ata = vec![0.0; p * p];
    let mut atb = vec![0.0; p];
    let mut row = vec![0.0; p];
    for ((mask, &w), &v) in masks.iter().zip(weights).zip(values) {
        let last = if mask[p] { 1.0 } else { 0.0 };
        for i in 0..p {
            row[i] = if mask[i] { 1.0 } else { 0.0 } - last;
        }
        let y = v - v0 - last * delta;
        for i in 0..p {
            if row[i] == 0.0 {
                continue;
            }
            atb[i] += w * row[i] * y;
            for j in 0..p {
                ata[i * p + j] += w * row[i] * row[j];
            }
        }
    }
    let scale = (0..p).map(|i| ata[i * p + i]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut solved = false;
    for ridge in [0.0, 1e-10, 1e-6] {
        let mut a = ata.clone();
        let mut b = atb.clone();
        for i in 0..p {
            a[i * p + i] += ridge * scale;
        }
        if cholesky_solve(&mut a, &mut b, p).is_some() {
            atb = b;
            solved = true;
            break;
        }
    }
    if !solved {
        return Err(Error::Data("Kernel SHAP normal equations are singular".into()));
    }
    let mut phi = atb;
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(phi)
}

/// Shapley values of `f` at `x` against the rows of `background`
/// (`k x N`, row-major). `f` maps row-major rows to one output per row.
pub fn kernel_shap(
    f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    background: &[f64],
    config: &KernelShapConfig,
) -> Result<ShapValues> {
    let m = x.len();
    if m == 0 {
        return Err(Error::Config("Kernel SHAP needs at least one feature".into()));
    }
    if background.is_empty() || background.len() % m != 0 {
        return Err(Error::Config(format!(
            "background must be a non-empty k x {m} matrix, got {} values",
            background.len()
        )));
    }
    let ends = coalition_values(f, x, background, &[vec![false; m], vec![true; m]])?;
    let (base, fx) = (ends[0], ends[1]);
    let exhaustive = m <= config.exact_max_features || (m < 63 && (1u64 << m) - 2 <= config.n_coalitions as u64);
    let (masks, weights) = if exhaustive {
        let masks = all_masks(m);
        let weights = masks.iter().map(|z| shapley_kernel(m, z.iter().filter(|&&b| b).count())).collect();
        (masks, weights)
    } else {
        let masks = sampled_masks(m, config.n_coalitions, config.seed);
        let weights = vec![1.0; masks.len()];
        (masks, weights)
    };
    let values = if masks.is_empty() { Vec::new() } else { coalition_values(f, x, background, &masks)? };
    let phi = constrained_wls(&masks, &weights, &values, base, fx - base, m)?;
    Ok(ShapValues { phi, fx, base, exact: exhaustive })
}
