//! Deep SHAP over the CNN head: DeepLIFT multipliers propagated layer by
//! layer against each background image, then averaged.

use crate::error::{Error, Result};
use crate::model::Table2ImageModel;
use nncore::kernels::{conv2d_backward_input, conv2d_forward, maxpool2d_forward};
use nncore::{Real, Tensor};

/// Deltas below this magnitude fall back to the local gradient.
const DELTA_EPS: f64 = 1e-10;

/// Scalar the attribution explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Softmax probability of a class.
    Probability(usize),
    /// Raw logit of a class.
    Logit(usize),
}

/// One stage of a feed-forward network on flat `[C, H, W]` activations.
#[derive(Debug, Clone)]
pub enum Layer {
    /// Same-padded 3x3 convolution; kernels `[c_out, c_in, 3, 3]`.
    Conv { kernels: Tensor<f64>, bias: Tensor<f64>, c_in: usize, side: usize },
    Relu,
    /// 2x2 max pooling of `channels` planes of `side x side`.
    MaxPool { channels: usize, side: usize },
    /// `y = x W + b` with `W` of shape `[d_in, d_out]`.
    Dense { w: Tensor<f64>, b: Tensor<f64> },
}

#[derive(Debug, Clone)]
pub struct DeepShapNet {
    pub layers: Vec<Layer>,
    pub head: Head,
    pub input_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepShapValues {
    pub phi: Vec<f64>,
    pub fx: f64,
    /// Mean head output over the background images.
    pub base: f64,
}

impl DeepShapValues {
    pub fn completeness_residual(&self) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.fx - self.base)).abs()
    }
}

fn to_f64<T: Real>(t: &Tensor<T>) -> Tensor<f64> {
    t.cast()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Adds the least-norm correction that makes `sum(m * dx) == dy` hold.
fn complete(m: &mut [f64], dx: &[f64], dy: f64) {
    let norm: f64 = dx.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return;
    }
    let gap = dy - m.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>();
    for (mi, di) in m.iter_mut().zip(dx) {
        *mi += gap * di / norm;
    }
}

impl DeepShapNet {
    /// The CNN head of a trained model explaining `head`.
    pub fn from_model<T: Real>(model: &Table2ImageModel<T>, head: Head) -> Result<Self> {
        let class = match head {
            Head::Probability(c) | Head::Logit(c) => c,
        };
        if class >= model.n_classes {
            return Err(Error::Config(format!("class {class} out of range for {} classes", model.n_classes)));
        }
        let s = &model.store;
        let side = model.arch.img_side;
        let conv = |c: &nncore::Conv2d, side: usize| Layer::Conv {
            kernels: to_f64(s.value(c.w)),
            bias: to_f64(s.value(c.b)),
            c_in: c.c_in,
            side,
        };
        let dense = |l: &nncore::Linear| Layer::Dense { w: to_f64(s.value(l.w)), b: to_f64(s.value(l.b)) };
        let layers = vec![
            conv(&model.conv1, side),
            Layer::Relu,
            Layer::MaxPool { channels: model.arch.conv1, side },
            conv(&model.conv2, side / 2),
            Layer::Relu,
            Layer::MaxPool { channels: model.arch.conv2, side: side / 2 },
            dense(&model.fc7),
            Layer::Relu,
            dense(&model.fc8),
        ];
        Ok(Self { layers, head, input_len: model.arch.pixels() })
    }

    /// Activations entering every layer, then the final pre-head vector.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut acts = vec![x.to_vec()];
        for layer in &self.layers {
            let cur = acts.last().unwrap();
            let next = match layer {
                Layer::Conv { kernels, bias, c_in, side } => {
                    let t = Tensor::new(&[1, *c_in, *side, *side], cur.clone())?;
                    conv2d_forward(&t, kernels, bias)?.0.into_data()
                }
                Layer::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
                Layer::MaxPool { channels, side } => {
                    let t = Tensor::new(&[1, *channels, *side, *side], cur.clone())?;
                    maxpool2d_forward(&t)?.0.into_data()
                }
                Layer::Dense { w, b } => {
                    let t = Tensor::new(&[1, cur.len()], cur.clone())?;
                    nncore::kernels::affine(&t, w, b)?.into_data()
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    fn head_value(&self, z: &[f64]) -> Result<f64> {
        match self.head {
            Head::Probability(c) | Head::Logit(c) if c >= z.len() => {
                Err(Error::Config(format!("class {c} out of range for {} outputs", z.len())))
            }
            Head::Probability(c) => Ok(softmax(z)[c]),
            Head::Logit(c) => Ok(z[c]),
        }
    }

    /// Head output for one flat input.
    pub fn output(&self, x: &[f64]) -> Result<f64> {
        let acts = self.activations(x)?;
        self.head_value(acts.last().unwrap())
    }

    /// Multipliers of the head with respect to `z` (the network output).
    fn head_multipliers(&self, z: &[f64], z0: &[f64]) -> Result<Vec<f64>> {
        match self.head {
            Head::Logit(c) => {
                let mut m = vec![0.0; z.len()];
                m[c] = 1.0;
                Ok(m)
            }
            Head::Probability(c) => {
                let mid: Vec<f64> = z.iter().zip(z0).map(|(a, b)| 0.5 * (a + b)).collect();
                let p = softmax(&mid);
                let mut m: Vec<f64> = (0..z.len()).map(|j| p[c] * (f64::from(c == j) - p[j])).collect();
                let dz: Vec<f64> = z.iter().zip(z0).map(|(a, b)| a - b).collect();
                let dy = self.head_value(z)? - self.head_value(z0)?;
                complete(&mut m, &dz, dy);
                Ok(m)
            }
        }
    }

    /// Attribution of `x` against a single reference.
    fn attribute_one(&self, acts: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut m = self.head_multipliers(acts.last().unwrap(), refs.last().unwrap())?;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (xin, rin, xout, rout) = (&acts[k], &refs[k], &acts[k + 1], &refs[k + 1]);
            m = match layer {
                Layer::Dense { w, .. } => {
                    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
                    let wd = w.data();
                    (0..d_in).map(|i| (0..d_out).map(|j| wd[i * d_out + j] * m[j]).sum()).collect()
                }
                Layer::Conv { kernels, c_in, side, .. } => {
                    conv2d_backward_input(&m, kernels, &[1, *c_in, *side, *side])?
                }
                Layer::Relu => (0..xin.len())
                    .map(|i| {
                        let dx = xin[i] - rin[i];
                        let mult = if dx.abs() > DELTA_EPS {
                            (xout[i] - rout[i]) / dx
                        } else {
                            f64::from(xin[i] > 0.0)
                        };
                        mult * m[i]
                    })
                    .collect(),
                Layer::MaxPool { channels, side } => {
                    let t = Tensor::new(&[1, *channels, *side, *side], xin.clone())?;
                    let (_, argmax) = maxpool2d_forward(&t)?;
                    let mut out = vec![0.0; xin.len()];
                    let (half, s) = (*side / 2, *side);
                    for (o, &a) in argmax.iter().enumerate() {
                        let plane = o / (half * half);
                        let (py, px) = ((o % (half * half)) / half, o % half);
                        let base = plane * s * s + 2 * py * s + 2 * px;
                        let window = [base, base + 1, base + s, base + s + 1];
                        let dx: Vec<f64> = window.iter().map(|&i| xin[i] - rin[i]).collect();
                        let mut local: Vec<f64> = window.iter().map(|&i| f64::from(i == a)).collect();
                        complete(&mut local, &dx, xout[o] - rout[o]);
                        for (&i, l) in window.iter().zip(local) {
                            out[i] += l * m[o];
                        }
                    }
                    out
                }
            };
        }
        Ok(m.iter().zip(&acts[0]).zip(&refs[0]).map(|((mi, x), r)| mi * (x - r)).collect())
    }

    /// Mean attribution of `x` over the background images (row-major).
    pub fn explain(&self, x: &[f64], backgrounds: &[f64]) -> Result<DeepShapValues> {
        let d = self.input_len;
        if x.len() != d {
            return Err(Error::Nn(nncore::NnError::Shape(format!("input of {} values, expected {d}", x.len()))));
        }
        if backgrounds.is_empty() || backgrounds.len() % d != 0 {
            return Err(Error::Config("Deep SHAP needs at least one background image".into()));
        }
        let acts = self.activations(x)?;
        let fx = self.head_value(acts.last().unwrap())?;
        let k = backgrounds.len() / d;
        let mut phi = vec![0.0; d];
        let mut base = 0.0;
        for b in backgrounds.chunks(d) {
            let refs = self.activations(b)?;
            base += self.head_value(refs.last().unwrap())?;
            for (p, v) in phi.iter_mut().zip(self.attribute_one(&acts, &refs)?) {
                *p += v;
            }
        }
        phi.iter_mut().for_each(|p| *p /= k as f64);
        if let Some(bad) = phi.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Deep SHAP attribution {bad}")));
        }
        Ok(DeepShapValues { phi, fx, base: base / k as f64 })
    }
}
