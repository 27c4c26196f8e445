//! Discrepancies between two attribution vectors: RBF-kernel MMD² and a
//! softmax-normalised KL divergence.

use crate::error::{Error, Result};
use nncore::tape::PROB_FLOOR;
use nncore::{CustomOp, NnError, Tape, Tensor, Var};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(a: &[f64], b: &[f64], d: usize) -> Result<()> {
    if d == 0 || a.len() % d != 0 || b.len() % d != 0 || a.is_empty() || b.is_empty() {
        return Err(Error::Nn(NnError::Shape(format!(
            "mmd needs non-empty samples of width {d}, got {} and {} values",
            a.len(),
            b.len()
        ))));
    }
    Ok(())
}

/// Median of the pooled pairwise distances; falls back to 1 when that
/// median is zero.
pub fn median_bandwidth(a: &[f64], b: &[f64], d: usize) -> f64 {
    let pooled: Vec<&[f64]> = a.chunks(d).chain(b.chunks(d)).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    let med = if k % 2 == 1 { dists[k / 2] } else { 0.5 * (dists[k / 2 - 1] + dists[k / 2]) };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

fn rbf(a: &[f64], b: &[f64], h: f64) -> f64 {
    (-sq_dist(a, b) / (2.0 * h * h)).exp()
}

fn within_mean(a: &[f64], d: usize, h: f64) -> f64 {
    let rows: Vec<&[f64]> = a.chunks(d).collect();
    let mut s = 0.0;
    for x in &rows {
        for y in &rows {
            s += rbf(x, y, h);
        }
    }
    s / (rows.len() * rows.len()) as f64
}

fn cross_mean(a: &[f64], b: &[f64], d: usize, h: f64) -> f64 {
    let mut values: Vec<f64> = a.chunks(d).flat_map(|x| b.chunks(d).map(move |y| rbf(x, y, h))).collect();
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Biased (V-statistic) MMD² between the rows of `a` and `b` with an RBF
/// kernel of bandwidth `h`.
pub fn mmd2_with_bandwidth(a: &[f64], b: &[f64], d: usize, h: f64) -> Result<f64> {
    check(a, b, d)?;
    if !(h > 0.0) {
        return Err(Error::Config(format!("kernel bandwidth must be positive, got {h}")));
    }
    Ok(within_mean(a, d, h) + within_mean(b, d, h) - 2.0 * cross_mean(a, b, d, h))
}

/// [`mmd2_with_bandwidth`] with the median-heuristic bandwidth.
pub fn mmd2(a: &[f64], b: &[f64], d: usize) -> Result<f64> {
    check(a, b, d)?;
    mmd2_with_bandwidth(a, b, d, median_bandwidth(a, b, d))
}

/// Gradient of the MMD² estimate with respect to every row of `a` and `b`.
fn mmd2_grad(a: &[f64], b: &[f64], d: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (a.len() / d, b.len() / d);
    let h2 = h * h;
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    // d k(x, y) / dx = -k(x, y) (x - y) / h².
    let pair = |x: &[f64], y: &[f64], coef: f64, gx: &mut [f64]| {
        let k = rbf(x, y, h);
        for t in 0..d {
            gx[t] -= coef * k * (x[t] - y[t]) / h2;
        }
    };
    let (wa, wb, wab) = (2.0 / (na * na) as f64, 2.0 / (nb * nb) as f64, -2.0 / (na * nb) as f64);
    for i in 0..na {
        let xi = &a[i * d..(i + 1) * d];
        for j in 0..na {
            pair(xi, &a[j * d..(j + 1) * d], wa, &mut ga[i * d..(i + 1) * d]);
        }
        for j in 0..nb {
            pair(xi, &b[j * d..(j + 1) * d], wab, &mut ga[i * d..(i + 1) * d]);
        }
    }
    for i in 0..nb {
        let yi = &b[i * d..(i + 1) * d];
        for j in 0..nb {
            pair(yi, &b[j * d..(j + 1) * d], wb, &mut gb[i * d..(i + 1) * d]);
        }
        for j in 0..na {
            pair(yi, &a[j * d..(j + 1) * d], wab, &mut gb[i * d..(i + 1) * d]);
        }
    }
    (ga, gb)
}

struct Mmd2Op {
    d: usize,
    h: f64,
}

impl CustomOp<f64> for Mmd2Op {
    fn name(&self) -> &str {
        "mmd2"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<f64>],
        _output: &Tensor<f64>,
        grad_out: &Tensor<f64>,
    ) -> Vec<Option<Tensor<f64>>> {
        let g = grad_out.item();
        let (ga, gb) = mmd2_grad(inputs[0].data(), inputs[1].data(), self.d, self.h);
        let scaled = |t: &Tensor<f64>, v: Vec<f64>| Tensor::new(t.shape(), v.into_iter().map(|x| x * g).collect()).ok();
        vec![scaled(inputs[0], ga), scaled(inputs[1], gb)]
    }
}

/// MMD² between the rows of two `[k x d]` tape values. The median-heuristic
/// bandwidth is computed from the current values and treated as a constant.
pub fn mmd2_var(tape: &mut Tape<f64>, a: Var, b: Var) -> Result<Var> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    let d = ta.last_dim();
    if tb.last_dim() != d {
        return Err(Error::Nn(NnError::Shape(format!("mmd sample widths {:?} vs {:?}", ta.shape(), tb.shape()))));
    }
    let h = median_bandwidth(ta.data(), tb.data(), d);
    let value = mmd2_with_bandwidth(ta.data(), tb.data(), d, h)?;
    Ok(tape.custom(&[a, b], Tensor::scalar(value), Box::new(Mmd2Op { d, h })))
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `KL(softmax(p) || softmax(q))` with the second distribution floored at 1e-12.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Nn(NnError::Shape(format!("kld of lengths {} and {}", p.len(), q.len()))));
    }
    let (sp, sq) = (softmax(p), softmax(q));
    Ok(sp
        .iter()
        .zip(&sq)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.max(PROB_FLOOR).ln()))
        .sum())
}

/// Tape version of [`kld`] for `[1 x N]` values.
pub fn kld_var(tape: &mut Tape<f64>, p: Var, q: Var) -> Result<Var> {
    let sp = tape.softmax(p);
    let sq = tape.softmax(q);
    let lp = tape.ln(sp, f64::MIN_POSITIVE);
    let lq = tape.ln(sq, PROB_FLOOR);
    let diff = tape.sub(lp, lq)?;
    let terms = tape.mul(sp, diff)?;
    Ok(tape.sum(terms))
}
