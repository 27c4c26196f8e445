//! Seed stability of attributions and their consistency under column shuffles.

use crate::attribution::Explainer;
use crate::error::{Error, Result};
use serde::Serialize;

/// Per-instance importance vectors of the three methods.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AttributionSet {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub shap: Vec<Vec<f64>>,
}

impl AttributionSet {
    /// Explains every row (`rows` is row-major) with one explainer.
    pub fn explain_rows(explainer: &Explainer<'_>, rows: &[f64], n_features: usize) -> Result<Self> {
        let mut out = Self::default();
        for x in rows.chunks(n_features) {
            let e = explainer.explain(x)?;
            out.p.push(e.dual.p);
            out.q.push(e.dual.q);
            out.shap.push(e.phi_tab);
        }
        Ok(out)
    }

    fn methods(&self) -> [&Vec<Vec<f64>>; 3] {
        [&self.p, &self.q, &self.shap]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodScores {
    pub p: f64,
    pub q: f64,
    pub shap: f64,
}

impl MethodScores {
    fn from_fn(mut f: impl FnMut(usize) -> Result<f64>) -> Result<Self> {
        Ok(Self { p: f(0)?, q: f(1)?, shap: f(2)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    /// Mean over instances and features of the across-run standard deviation.
    pub std: MethodScores,
    pub shuffle_mse: Option<MethodScores>,
}

/// Population standard deviation across runs of every `(instance, feature)`
/// cell, averaged over all cells. `runs[r][i][j]`.
pub fn mean_std(runs: &[&Vec<Vec<f64>>]) -> Result<f64> {
    let Some(first) = runs.first() else {
        return Err(Error::Config("stability needs at least one run".into()));
    };
    let shape: Vec<usize> = first.iter().map(Vec::len).collect();
    if runs.iter().any(|r| r.iter().map(Vec::len).collect::<Vec<_>>() != shape) {
        return Err(Error::Data("runs disagree on instance or feature counts".into()));
    }
    let k = runs.len() as f64;
    let (mut total, mut cells) = (0.0, 0usize);
    for (i, &len) in shape.iter().enumerate() {
        for j in 0..len {
            let shift = first[i][j];
            let mean = runs.iter().map(|r| r[i][j] - shift).sum::<f64>() / k;
            let var = runs.iter().map(|r| (r[i][j] - shift - mean).powi(2)).sum::<f64>() / k;
            total += var.sqrt();
            cells += 1;
        }
    }
    if cells == 0 {
        return Err(Error::Data("no attributions to compare".into()));
    }
    Ok(total / cells as f64)
}

/// Runs `explain` once per seed and summarises the spread of each method.
pub fn stability_study(seeds: &[u64], mut explain: impl FnMut(u64) -> Result<AttributionSet>) -> Result<StabilityReport> {
    let sets = seeds.iter().map(|&s| explain(s)).collect::<Result<Vec<_>>>()?;
    let std = MethodScores::from_fn(|m| mean_std(&sets.iter().map(|s| s.methods()[m]).collect::<Vec<_>>()))?;
    Ok(StabilityReport { runs: seeds.len(), seeds: seeds.to_vec(), std, shuffle_mse: None })
}

/// Maps importances computed on columns permuted by `perm` (shuffled column
/// `j` is original column `perm[j]`) back to the original order.
pub fn unpermute(values: &[f64], perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (j, &orig) in perm.iter().enumerate() {
        out[orig] = values[j];
    }
    out
}

fn check_perm(perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Config(format!("{perm:?} is not a permutation")));
        }
    }
    Ok(())
}

fn aligned_mse(original: &[Vec<f64>], shuffled: &[Vec<f64>], perm: &[usize]) -> Result<f64> {
    if original.len() != shuffled.len() || original.is_empty() {
        return Err(Error::Data("original and shuffled runs explain different instances".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (o, s) in original.iter().zip(shuffled) {
        if o.len() != perm.len() || s.len() != perm.len() {
            return Err(Error::Data("importance length does not match the permutation".into()));
        }
        for (a, b) in o.iter().zip(unpermute(s, perm)) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Fits and explains once on the original columns (`None`) and once on the
/// columns permuted by `perm`, then compares the re-aligned importances.
pub fn shuffle_consistency(
    perm: &[usize],
    mut fit_and_explain: impl FnMut(Option<&[usize]>) -> Result<AttributionSet>,
) -> Result<MethodScores> {
    check_perm(perm)?;
    let original = fit_and_explain(None)?;
    let shuffled = fit_and_explain(Some(perm))?;
    MethodScores::from_fn(|m| aligned_mse(original.methods()[m], shuffled.methods()[m], perm))
}
