//! Adam with bias correction, operating directly on parameter matrices.

use ndarray::Array2;

use super::tape::Scalar;

/// First/second-moment state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<S: Scalar> {
    pub m: Array2<S>,
    pub v: Array2<S>,
}

/// The optimizer. Moment buffers are created lazily on the first step so
/// the caller only has to keep parameter/gradient slices aligned by index.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &[Moments<S>] {
        &self.moments
    }

    /// Restores saved state (step counter plus per-parameter moments).
    pub fn restore(&mut self, step: u64, moments: Vec<Moments<S>>) {
        self.step = step;
        self.moments = moments;
    }

    /// One update over parallel slices of parameters and gradients.
    ///
    /// Panics if the slice lengths or tensor shapes do not line up —
    /// those are programming errors, not data errors.
    pub fn step(&mut self, params: &mut [&mut Array2<S>], grads: &[Array2<S>]) {
        assert_eq!(params.len(), grads.len(), "params/grads disagree");
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    m: Array2::zeros(p.dim()),
                    v: Array2::zeros(p.dim()),
                })
                .collect();
        }
        assert_eq!(params.len(), self.moments.len(), "optimizer state mismatch");
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);
        let bc1 = S::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = S::from_f64(1.0 - self.beta2.powi(t));
        for ((p, g), st) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
            st.m.zip_mut_with(g, |m, &gv| *m = b1 * *m + (one - b1) * gv);
            st.v.zip_mut_with(g, |v, &gv| *v = b2 * *v + (one - b2) * gv * gv);
            ndarray::Zip::from(&mut **p)
                .and(&st.m)
                .and(&st.v)
                .for_each(|pv, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
