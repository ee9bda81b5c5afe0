use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Dense, Gradients, QNetwork};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// SGD or bias-corrected Adam. Moment buffers are allocated for Adam only
/// and always match the parameter shapes of the network they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub adam: AdamConfig,
    pub step: u64,
    pub first_moments: Vec<Dense<T>>,
    pub second_moments: Vec<Dense<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn sgd(learning_rate: T) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            adam: AdamConfig::default(),
            step: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    pub fn adam(learning_rate: T, net: &QNetwork<T>) -> Self {
        let zeros = || net.layers().iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect();
        Optimizer {
            kind: OptimizerKind::Adam,
            learning_rate,
            adam: AdamConfig::default(),
            step: 0,
            first_moments: zeros(),
            second_moments: zeros(),
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: T, net: &QNetwork<T>) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(learning_rate),
            OptimizerKind::Adam => Self::adam(learning_rate, net),
        }
    }

    /// True when the moment buffers fit `net`.
    pub fn matches(&self, net: &QNetwork<T>) -> bool {
        match self.kind {
            OptimizerKind::Sgd => true,
            OptimizerKind::Adam => [&self.first_moments, &self.second_moments].iter().all(|m| {
                m.len() == net.layers().len()
                    && m.iter()
                        .zip(net.layers())
                        .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.dim() == b.bias.dim())
            }),
        }
    }

    pub fn apply(&mut self, net: &mut QNetwork<T>, grads: &Gradients<T>) {
        assert_eq!(grads.layers.len(), net.layers().len(), "gradient layer count");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => net.sgd_step(grads, self.learning_rate),
            OptimizerKind::Adam => self.adam_step(net, grads),
        }
    }

    fn adam_step(&mut self, net: &mut QNetwork<T>, grads: &Gradients<T>) {
        debug_assert!(self.matches(net));
        let b1 = T::lit(self.adam.beta1);
        let b2 = T::lit(self.adam.beta2);
        let eps = T::lit(self.adam.epsilon);
        let one = T::one();
        let t = self.step as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = self.learning_rate;
        let update = |p: &mut T, m: &mut T, v: &mut T, g: &T| {
            *m = flush(b1 * *m + (one - b1) * *g);
            *v = flush(b2 * *v + (one - b2) * *g * *g);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((p, g), m), v) in
            net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.first_moments).zip(&mut self.second_moments)
        {
            Zip::from(&mut p.weights).and(&mut m.weights).and(&mut v.weights).and(&g.weights).for_each(&update);
            Zip::from(&mut p.bias).and(&mut m.bias).and(&mut v.bias).and(&g.bias).for_each(&update);
        }
    }
}

/// Subnormal moments are set to zero: decaying moments otherwise sink into
/// the subnormal range, where arithmetic is orders of magnitude slower.
#[inline]
fn flush<T: Real>(x: T) -> T {
    if x.abs() < T::min_positive_value() {
        T::zero()
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_net(theta: f64) -> QNetwork<f64> {
        QNetwork::from_layers(vec![Dense { weights: array![[theta]], bias: array![0.0] }])
    }

    fn scalar_grad(g: f64) -> Gradients<f64> {
        Gradients { layers: vec![Dense { weights: array![[g]], bias: array![0.0] }] }
    }

    #[test]
    fn sgd_scalar_step() {
        let mut net = scalar_net(0.5);
        Optimizer::sgd(0.1).apply(&mut net, &scalar_grad(1.0));
        assert_eq!(net.layers()[0].weights[[0, 0]], 0.4);
    }

    #[test]
    fn zero_gradient_or_rate_leaves_parameters() {
        let net0 = QNetwork::<f64>::with_dims(&[3, 4, 2], 1);
        let mut net = net0.clone();
        Optimizer::sgd(0.1).apply(&mut net, &Gradients::zeros_like(&net0));
        assert_eq!(net, net0);
        let mut ones = Gradients::zeros_like(&net0);
        for l in &mut ones.layers {
            l.weights.fill(1.0);
            l.bias.fill(1.0);
        }
        Optimizer::sgd(0.0).apply(&mut net, &ones);
        assert_eq!(net, net0);
        let mut adam = Optimizer::adam(0.0, &net0);
        adam.apply(&mut net, &ones);
        assert_eq!(net, net0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // Bias correction makes the first update lr * g / (|g| + eps).
        let mut net = scalar_net(0.5);
        let mut opt = Optimizer::adam(0.01, &net);
        opt.apply(&mut net, &scalar_grad(2.0));
        let expected = 0.5 - 0.01 * 2.0 / (2.0 + 1e-8);
        assert!((net.layers()[0].weights[[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(opt.step, 1);
        assert!((opt.first_moments[0].weights[[0, 0]] - 0.2).abs() < 1e-15);
        assert!((opt.second_moments[0].weights[[0, 0]] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn adam_moments_match_network() {
        let net = QNetwork::<f64>::with_dims(&[5, 7, 3], 0);
        assert!(Optimizer::adam(1e-3, &net).matches(&net));
        let other = QNetwork::<f64>::with_dims(&[5, 6, 3], 0);
        assert!(!Optimizer::adam(1e-3, &net).matches(&other));
    }

    #[test]
    fn decayed_moments_never_go_subnormal() {
        let mut net = QNetwork::<f32>::with_dims(&[1, 1], 0);
        let mut opt = Optimizer::adam(1e-3, &net);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[[0, 0]] = 1e-3;
        opt.apply(&mut net, &g);
        let zero = Gradients::zeros_like(&net);
        for _ in 0..20_000 {
            opt.apply(&mut net, &zero);
            for m in opt.first_moments.iter().chain(&opt.second_moments) {
                assert!(m.weights.iter().all(|x| !x.is_subnormal()));
            }
        }
        assert_eq!(opt.first_moments[0].weights[[0, 0]], 0.0);
    }
}
