//! Feed-forward Q-network with hand-written backpropagation.
//!
//! Layers are dense `y = x W + b` with `W` stored `(inputs, outputs)`.
//! Every hidden layer is followed by ReLU; the output layer is linear.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use optim::{AdamConfig, Optimizer, OptimizerKind};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, CELL_COUNT};
use crate::scalar::Real;

pub const INPUT_DIM: usize = 2 * CELL_COUNT;

/// Hidden widths between the 72 inputs and the message outputs.
pub const HIDDEN_DIMS: [usize; 4] = [576, 576, 576, 36];

/// `[72, 576, 576, 576, 36, m_max]`.
pub fn architecture(m_max: usize) -> Vec<usize> {
    let mut dims = vec![INPUT_DIM];
    dims.extend_from_slice(&HIDDEN_DIMS);
    dims.push(m_max);
    dims
}

/// Network input: the goal's 36 cells followed by the current state's.
pub fn encode_input<T: Real>(goal: Grid, state: Grid, out: &mut [T]) {
    let (g, s) = out.split_at_mut(CELL_COUNT);
    goal.write_features(g);
    state.write_features(s);
}

pub fn encode_batch<T: Real>(pairs: impl ExactSizeIterator<Item = (Grid, Grid)>) -> Array2<T> {
    let mut x = Array2::zeros((pairs.len(), INPUT_DIM));
    for (mut row, (goal, state)) in x.axis_iter_mut(Axis(0)).zip(pairs) {
        encode_input(goal, state, row.as_slice_mut().expect("standard layout"));
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { weights: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    layers: Vec<Dense<T>>,
}

/// Layer inputs recorded during a forward pass: `inputs[0]` is the network
/// input, `inputs[l]` the post-ReLU activation feeding layer `l`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub inputs: Vec<Array2<T>>,
    pub output: Array2<T>,
}

/// Parameter gradients, one `(dW, db)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &QNetwork<T>) -> Self {
        Gradients { layers: net.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect() }
    }

    pub fn max_abs(&self) -> T {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter())).fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T: Real> QNetwork<T> {
    /// The architecture with `m_max` outputs.
    pub fn init(seed: u64, m_max: usize) -> Self {
        Self::with_dims(&architecture(m_max), seed)
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn with_dims(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| {
                let limit = (6.0 / d[0] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((d[0], d[1]), || T::lit(rng.gen_range(-limit..limit)));
                Dense { weights, bias: Array1::zeros(d[1]) }
            })
            .collect();
        QNetwork { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        QNetwork { layers: dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect() }
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Self {
        assert!(!layers.is_empty());
        for pair in layers.windows(2) {
            assert_eq!(pair[0].outputs(), pair[1].inputs(), "layer widths must chain");
        }
        QNetwork { layers }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs()];
        dims.extend(self.layers.iter().map(Dense::outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: ArrayView1<T>) -> Array1<T> {
        let x = input.insert_axis(Axis(0));
        self.forward_batch(x).index_axis_move(Axis(0), 0)
    }

    /// Batched forward pass, one example per row.
    pub fn forward_batch(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut a = affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut a);
            a = affine(layer, a.view());
        }
        a
    }

    pub fn forward_trace(&self, x: ArrayView2<T>) -> Trace<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        let mut a = affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut a);
            let z = affine(layer, a.view());
            inputs.push(a);
            a = z;
        }
        Trace { inputs, output: a }
    }

    /// Gradients of `sum(output * output_grad)` over the batch.
    pub fn backward(&self, trace: &Trace<T>, output_grad: ArrayView2<T>) -> Gradients<T> {
        assert_eq!(output_grad.dim(), trace.output.dim(), "output gradient shape");
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &trace.inputs[l];
            let weights = a_in.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weights, bias });
            if l > 0 {
                let mut back = delta.dot(&layer.weights.t());
                // ReLU derivative: zero wherever the unit was inactive.
                Zip::from(&mut back).and(a_in).for_each(|g, &a| {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Single-example convenience around [`QNetwork::backward`].
    pub fn backward_single(&self, input: ArrayView1<T>, output_grad: ArrayView1<T>) -> Gradients<T> {
        let trace = self.forward_trace(input.insert_axis(Axis(0)));
        self.backward(&trace, output_grad.insert_axis(Axis(0)))
    }

    /// `theta <- theta - lr * g`, used by tests and the SGD optimizer.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) {
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            p.weights.scaled_add(-lr, &g.weights);
            p.bias.scaled_add(-lr, &g.bias);
        }
    }
}

fn affine<T: Real>(layer: &Dense<T>, x: ArrayView2<T>) -> Array2<T> {
    let mut z = x.dot(&layer.weights);
    z += &layer.bias;
    z
}

fn relu_inplace<T: Real>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::Rng;

    #[test]
    fn init_is_deterministic() {
        let a = QNetwork::<f64>::init(11, 20);
        let b = QNetwork::<f64>::init(11, 20);
        assert_eq!(a, b);
        assert_ne!(a, QNetwork::<f64>::init(12, 20));
    }

    #[test]
    fn architecture_dims() {
        let net = QNetwork::<f64>::init(0, 20);
        assert_eq!(net.dims(), vec![72, 576, 576, 576, 36, 20]);
        assert_eq!(net.layers().last().unwrap().weights.dim(), (36, 20));
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let limit = (6.0f64 / 72.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() < limit));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = QNetwork::<f64>::zeros(&architecture(20));
        let x = Array1::from_elem(72, 1.0);
        assert!(net.forward(x.view()).iter().all(|&q| q == 0.0));
    }

    #[test]
    fn final_layer_is_linear() {
        let mut net = QNetwork::<f64>::with_dims(&[6, 5, 3], 4);
        let x = array![1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let base = net.forward(x.view());
        net.layers_mut()[1].weights.mapv_inplace(|w| w * 2.5);
        let scaled = net.forward(x.view());
        for (b, s) in base.iter().zip(scaled.iter()) {
            assert!((s - 2.5 * b).abs() < 1e-12);
        }
    }

    fn hand_net() -> QNetwork<f64> {
        // 2-2-1: hidden = relu([x1 - x2, x1 + 2 x2] + [0.5, -1]), out = 3 h1 - h2 + 0.25
        QNetwork::from_layers(vec![
            Dense { weights: array![[1.0, 1.0], [-1.0, 2.0]], bias: array![0.5, -1.0] },
            Dense { weights: array![[3.0], [-1.0]], bias: array![0.25] },
        ])
    }

    #[test]
    fn hand_computed_forward() {
        let net = hand_net();
        // x = (1, 1): pre = (0.5, 2), out = 1.5 - 2 + 0.25 = -0.25
        assert_eq!(net.forward(array![1.0, 1.0].view())[0], -0.25);
        // x = (0, 1): pre = (-0.5, 1) -> h = (0, 1), out = -1 + 0.25
        assert_eq!(net.forward(array![0.0, 1.0].view())[0], -0.75);
    }

    #[test]
    fn hand_computed_backward() {
        let net = hand_net();
        let g = net.backward_single(array![0.0, 1.0].view(), array![1.0].view());
        // h = (0, 1), unit 0 dead.
        assert_eq!(g.layers[1].weights, array![[0.0], [1.0]]);
        assert_eq!(g.layers[1].bias, array![1.0]);
        assert_eq!(g.layers[0].bias, array![0.0, -1.0]);
        assert_eq!(g.layers[0].weights, array![[0.0, 0.0], [0.0, -1.0]]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = QNetwork::<f64>::with_dims(&[8, 6, 4], 2);
        let x = Array1::from_shape_fn(8, |i| (i % 2) as f64);
        let g = net.backward_single(x.view(), Array1::zeros(4).view());
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn batch_gradient_is_sum_of_single() {
        let net = QNetwork::<f64>::with_dims(&[4, 5, 3], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((3, 4), || rng.gen_range(-1.0..1.0));
        let og = Array2::from_shape_simple_fn((3, 3), || rng.gen_range(-1.0..1.0));
        let batch = net.backward(&net.forward_trace(x.view()), og.view());
        let mut sum = Gradients::zeros_like(&net);
        for i in 0..3 {
            let g = net.backward_single(x.row(i), og.row(i));
            for (s, gl) in sum.layers.iter_mut().zip(&g.layers) {
                s.weights += &gl.weights;
                s.bias += &gl.bias;
            }
        }
        for (a, b) in batch.layers.iter().zip(&sum.layers) {
            assert!(a.weights.iter().zip(b.weights.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
            assert!(a.bias.iter().zip(b.bias.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn forward_batch_matches_rows() {
        let net = QNetwork::<f64>::init(3, 20);
        let x = encode_batch::<f64>(
            [(Grid::from_cells([(0, 1)]), Grid::EMPTY), (Grid::EMPTY, Grid::from_cells([(2, 3)]))].into_iter(),
        );
        let out = net.forward_batch(x.view());
        for i in 0..2 {
            let single = net.forward(x.row(i));
            assert!(out.row(i).iter().zip(single.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn f32_network_runs() {
        let net = QNetwork::<f32>::init(5, 12);
        let x = Array1::from_elem(72, 1.0f32);
        let q = net.forward(x.view());
        assert_eq!(q.len(), 12);
        assert!(q.iter().all(|v| v.is_finite()));
    }
}
