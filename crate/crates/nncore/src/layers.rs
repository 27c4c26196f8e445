use crate::error::Result;
use crate::kernels::KERNEL;
use crate::param::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

/// Fully connected layer `y = x W + b` with `W` stored as `[d_in x d_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(d_in)`, biases zero.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let w = store.add(format!("{name}.weight"), Tensor::uniform(&[d_in, d_out], bound, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }
}

/// Same-padded 3x3 convolution with kernels stored as `[c_out x c_in x 3 x 3]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv2d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * KERNEL * KERNEL;
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = store.add(format!("{name}.weight"), Tensor::uniform(&[c_out, c_in, KERNEL, KERNEL], bound, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { w, b, c_in, c_out }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv2d(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * KERNEL * KERNEL + self.c_out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_init_respects_fan_in_bound() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(&mut store, "fc", 16, 5, &mut rng);
        let w = store.value(l.w);
        assert_eq!(w.shape(), &[16, 5]);
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
        assert!(store.value(l.b).data().iter().all(|&v| v == 0.0));
        assert_eq!(store.param_count(), l.param_count());
    }

    #[test]
    fn conv_param_count() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Conv2d::new(&mut store, "conv", 32, 64, &mut rng);
        assert_eq!(c.param_count(), 18_496);
        assert_eq!(store.param_count(), 18_496);
        let bound = 1.0 / (288f32).sqrt();
        assert!(store.value(c.w).data().iter().all(|v| v.abs() <= bound));
    }
}
