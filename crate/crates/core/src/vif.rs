//! Variance inflation factors and the initialisations derived from them.

use crate::error::{Error, Result};
use nncore::{Real, Tensor};
use serde::{Deserialize, Serialize};

/// Upper clamp for VIF values; perfect collinearity maps here.
pub const VIF_MAX: f64 = 1e6;
/// Ridge jitter added to the normal equations of each auxiliary regression.
pub const RIDGE: f64 = 1e-8;
/// Offset of the direct initialisation variant.
pub const C_DIR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifReport {
    pub vif: Vec<f64>,
    pub r2: Vec<f64>,
    pub clamped: Vec<bool>,
    pub vif_max: f64,
}

impl VifReport {
    pub fn len(&self) -> usize {
        self.vif.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vif.is_empty()
    }

    /// CSV rows `feature,r2,vif,clamped` with a header.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("feature,r2,vif,clamped\n");
        for i in 0..self.len() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
            out.push_str(&format!("{name},{},{},{}\n", self.r2[i], self.vif[i], self.clamped[i]));
        }
        out
    }
}

/// Solves the symmetric positive definite system `a x = b` in place by
/// Cholesky factorisation. Returns `None` if `a` is not positive definite.
pub(crate) fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(())
}

/// Coefficient of determination of regressing column `target` on every other
/// column plus an intercept.
fn auxiliary_r2(x: &[f64], m: usize, n: usize, target: usize) -> f64 {
    let p = n;
    let design = |i: usize, k: usize| -> f64 {
        if k == 0 {
            1.0
        } else {
            let col = if k - 1 < target { k - 1 } else { k };
            x[i * n + col]
        }
    };
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for i in 0..m {
        for (k, r) in row.iter_mut().enumerate() {
            *r = design(i, k);
        }
        let yi = x[i * n + target];
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..=a {
                xtx[a * p + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[b * p + a] = xtx[a * p + b];
        }
        xtx[a * p + a] += RIDGE;
    }
    let mut beta = xty;
    if cholesky_solve(&mut xtx, &mut beta, p).is_none() {
        return 1.0;
    }
    let mean = (0..m).map(|i| x[i * n + target]).sum::<f64>() / m as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..m {
        let fit: f64 = (0..p).map(|k| beta[k] * design(i, k)).sum();
        let yi = x[i * n + target];
        ss_res += (yi - fit) * (yi - fit);
        ss_tot += (yi - mean) * (yi - mean);
    }
    if ss_tot <= 0.0 {
        return 1.0;
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// VIF of every column of the row-major `m x n` matrix `x`.
pub fn compute_vif(x: &[f64], m: usize, n: usize) -> Result<VifReport> {
    if n < 2 {
        return Err(Error::Config(format!("VIF needs at least 2 columns, got {n}")));
    }
    if m < 3 {
        return Err(Error::Data(format!("VIF needs at least 3 rows, got {m}")));
    }
    if x.len() != m * n {
        return Err(Error::Data(format!("matrix has {} values, expected {m}x{n}", x.len())));
    }
    let mut report = VifReport { vif: vec![], r2: vec![], clamped: vec![], vif_max: VIF_MAX };
    for i in 0..n {
        let r2 = auxiliary_r2(x, m, n, i);
        let clamped = r2 >= 1.0 - 1.0 / VIF_MAX;
        let vif = if clamped { VIF_MAX } else { (1.0 / (1.0 - r2)).clamp(1.0, VIF_MAX) };
        report.vif.push(vif);
        report.r2.push(r2);
        report.clamped.push(clamped);
    }
    Ok(report)
}

fn constant_rows<T: Real>(values: &[f64], rows: usize, cols: usize) -> Result<Tensor<T>> {
    if values.len() != rows {
        return Err(Error::Config(format!("{} VIF values for a layer with {rows} inputs", values.len())));
    }
    let data = values.iter().flat_map(|&v| std::iter::repeat_n(T::of(v), cols)).collect();
    Ok(Tensor::new(&[rows, cols], data)?)
}

/// `[rows x cols]` weights whose row `i` is `1 / VIF_i`.
pub fn vif_init_weights<T: Real>(vif: &VifReport, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let inv: Vec<f64> = vif.vif.iter().map(|v| 1.0 / v).collect();
    constant_rows(&inv, rows, cols)
}

/// `[rows x cols]` weights whose row `i` is `1 / (VIF_i + 10)`.
pub fn dir_init_weights<T: Real>(vif: &VifReport, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let inv: Vec<f64> = vif.vif.iter().map(|v| 1.0 / (v + C_DIR)).collect();
    constant_rows(&inv, rows, cols)
}

/// Initial per-feature scales `1 / VIF_i` of the multiplicative variant.
pub fn mul_scale_init<T: Real>(vif: &VifReport) -> Tensor<T> {
    let data = vif.vif.iter().map(|v| T::of(1.0 / v)).collect();
    Tensor::new(&[vif.len()], data).expect("vector shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(v: &[f64]) -> VifReport {
        VifReport { vif: v.to_vec(), r2: vec![0.0; v.len()], clamped: vec![false; v.len()], vif_max: VIF_MAX }
    }

    #[test]
    fn init_formulas() {
        let w: Tensor<f64> = vif_init_weights(&report(&[1.0, 4.0]), 2, 3).unwrap();
        assert_eq!(w.data(), &[1.0, 1.0, 1.0, 0.25, 0.25, 0.25]);
        let d: Tensor<f64> = dir_init_weights(&report(&[1.0, 10.0, VIF_MAX]), 3, 1).unwrap();
        assert_eq!(d.data()[0], 1.0 / 11.0);
        assert_eq!(d.data()[1], 0.05);
        assert!((d.data()[2] - 1e-6).abs() < 1e-10);
        let c: Tensor<f64> = mul_scale_init(&report(&[1.0, 1.0]));
        assert_eq!(c.data(), &[1.0, 1.0]);
        assert!(vif_init_weights::<f32>(&report(&[1.0]), 2, 3).is_err());
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(compute_vif(&[1.0, 2.0, 3.0], 3, 1), Err(Error::Config(_))));
        assert!(matches!(compute_vif(&[1.0, 2.0, 3.0, 4.0], 2, 2), Err(Error::Data(_))));
    }

    #[test]
    fn duplicated_column_is_clamped() {
        let x: Vec<f64> = (0..50).flat_map(|i| {
            let a = (i as f64 * 0.37).sin();
            [a, a, (i as f64 * 1.3).cos()]
        }).collect();
        let r = compute_vif(&x, 50, 3).unwrap();
        assert!(r.clamped[0] && r.clamped[1]);
        assert_eq!(r.vif[0], VIF_MAX);
        assert!(!r.clamped[2]);
    }
}
