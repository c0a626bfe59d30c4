use crate::scalar::Real;

/// Adam with bias correction over a flat parameter vector.
///
/// A parameter whose gradient has always been zero never moves.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    step: u32,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// One update; `lr_of(i)` gives the step size of parameter `i`. Ranges
    /// with a zero learning rate are left untouched.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr_of: impl Fn(usize) -> f64) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::one() - T::of(self.beta1.powi(self.step as i32));
        let c2 = T::one() - T::of(self.beta2.powi(self.step as i32));
        let eps = T::of(self.eps);
        let one = T::one();
        for i in 0..params.len() {
            let g = grad[i];
            let m = b1 * self.m[i] + (one - b1) * g;
            let v = b2 * self.v[i] + (one - b2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            if m == T::zero() {
                continue;
            }
            let lr = T::of(lr_of(i));
            params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
    }

    /// Like [`Adam::step`], with one learning rate per contiguous block.
    pub fn step_blocks(&mut self, params: &mut [T], grad: &[T], blocks: &[(std::ops::Range<usize>, f64)]) {
        self.step(params, grad, |i| {
            blocks
                .iter()
                .find(|(r, _)| r.contains(&i))
                .map(|(_, lr)| *lr)
                .unwrap_or(0.0)
        })
    }
}
