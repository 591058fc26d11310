use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, Matrix};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully-connected layer `y = act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weights.cols
    }

    pub fn output_size(&self) -> usize {
        self.weights.rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.weights.matvec_add(x, &mut y);
        if self.activation != Activation::Identity {
            y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        }
        y
    }
}

/// The four LSTM gates, in the row order used by [`LstmLayer`]'s stacked
/// weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    /// Candidate cell update (tanh branch).
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    fn block(self) -> usize {
        match self {
            Gate::Input => 0,
            Gate::Forget => 1,
            Gate::Output => 2,
            Gate::Cell => 3,
        }
    }
}

/// One LSTM layer. The per-gate matrices `W_x*`, `W_h*` and biases `b_*` are
/// stored stacked: rows `[k*H, (k+1)*H)` of `w_x`, `w_h` and `b` belong to
/// gate `k` in [`Gate::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub hidden_size: usize,
    /// `4H x input_size`
    pub w_x: Matrix,
    /// `4H x H`
    pub w_h: Matrix,
    /// `4H`
    pub b: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            hidden_size,
            w_x: Matrix::zeros(4 * hidden_size, input_size),
            w_h: Matrix::zeros(4 * hidden_size, hidden_size),
            b: vec![0.0; 4 * hidden_size],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x.cols
    }

    /// Input-to-gate weights of one gate, `H x input_size` row-major.
    pub fn input_weights(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size;
        let n = self.input_size();
        &self.w_x.data[gate.block() * h * n..(gate.block() + 1) * h * n]
    }

    pub fn input_weights_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.hidden_size;
        let n = self.input_size();
        &mut self.w_x.data[gate.block() * h * n..(gate.block() + 1) * h * n]
    }

    /// Hidden-to-gate weights of one gate, `H x H` row-major.
    pub fn hidden_weights(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size;
        &self.w_h.data[gate.block() * h * h..(gate.block() + 1) * h * h]
    }

    pub fn hidden_weights_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.hidden_size;
        &mut self.w_h.data[gate.block() * h * h..(gate.block() + 1) * h * h]
    }

    pub fn bias(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size;
        &self.b[gate.block() * h..(gate.block() + 1) * h]
    }

    pub fn bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.hidden_size;
        &mut self.b[gate.block() * h..(gate.block() + 1) * h]
    }
}

/// Gate activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateActivations {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
}

/// Cell and hidden state after a step, with the gates that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub gates: GateActivations,
}

impl LstmLayerState {
    pub fn zeros(hidden_size: usize) -> Self {
        Self::from_memory(vec![0.0; hidden_size], vec![0.0; hidden_size])
    }

    /// A state with the given memory and no gate history.
    pub fn from_memory(c: Vec<f64>, h: Vec<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            h,
            gates: GateActivations {
                i: vec![0.0; n],
                f: vec![0.0; n],
                o: vec![0.0; n],
                g: vec![0.0; n],
            },
        }
    }
}

/// Advances one LSTM layer by one time step.
pub fn lstm_step(
    params: &LstmLayer,
    state: &LstmLayerState,
    input: &[f64],
) -> Result<LstmLayerState, NeuralError> {
    let h = params.hidden_size;
    if input.len() != params.input_size() {
        return Err(NeuralError::Shape(format!(
            "lstm input has {} entries, layer expects {}",
            input.len(),
            params.input_size()
        )));
    }
    if state.c.len() != h || state.h.len() != h {
        return Err(NeuralError::Shape(format!(
            "lstm state has sizes ({}, {}), layer hidden size is {h}",
            state.c.len(),
            state.h.len()
        )));
    }
    let mut z = params.b.clone();
    params.w_x.matvec_add(input, &mut z);
    params.w_h.matvec_add(&state.h, &mut z);

    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * h..].iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
    let h_new: Vec<f64> = (0..h).map(|k| o[k] * c[k].tanh()).collect();
    Ok(LstmLayerState {
        c,
        h: h_new,
        gates: GateActivations { i, f, o, g },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(rng: &mut ChaCha8Rng, n_in: usize, h: usize, scale: f64) -> LstmLayer {
        let mut l = LstmLayer::zeros(n_in, h);
        for v in l.w_x.data.iter_mut().chain(&mut l.w_h.data).chain(&mut l.b) {
            *v = rng.random_range(-scale..scale);
        }
        l
    }

    #[test]
    fn zero_params_halve_the_cell() {
        let layer = LstmLayer::zeros(3, 4);
        let prior = LstmLayerState::from_memory(vec![1.0, -2.0, 0.5, 4.0], vec![0.3, 0.1, -0.2, 0.9]);
        let s = lstm_step(&layer, &prior, &[7.0, -1.0, 2.0]).unwrap();
        for k in 0..4 {
            assert_eq!(s.gates.i[k], 0.5);
            assert_eq!(s.gates.f[k], 0.5);
            assert_eq!(s.gates.o[k], 0.5);
            assert_eq!(s.gates.g[k], 0.0);
            assert_eq!(s.c[k], 0.5 * prior.c[k]);
            assert_eq!(s.h[k], 0.5 * (0.5 * prior.c[k]).tanh());
        }
    }

    #[test]
    fn saturated_forget_gate_drops_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = random_layer(&mut rng, 3, 5, 0.5);
        layer.bias_mut(Gate::Forget).iter_mut().for_each(|b| *b = -1e6);
        let prior = LstmLayerState::from_memory(vec![3.0; 5], vec![0.2; 5]);
        let s = lstm_step(&layer, &prior, &[0.1, 0.2, 0.3]).unwrap();
        for k in 0..5 {
            assert_eq!(s.gates.f[k], 0.0);
            assert_eq!(s.c[k], s.gates.i[k] * s.gates.g[k]);
        }
    }

    #[test]
    fn gate_views_address_stacked_rows() {
        let mut l = LstmLayer::zeros(2, 3);
        l.input_weights_mut(Gate::Output)[0] = 1.0;
        l.hidden_weights_mut(Gate::Cell)[8] = 2.0;
        l.bias_mut(Gate::Forget)[2] = 3.0;
        assert_eq!(l.w_x.get(6, 0), 1.0);
        assert_eq!(l.w_h.get(11, 2), 2.0);
        assert_eq!(l.b[5], 3.0);
    }

    #[test]
    fn shape_errors() {
        let l = LstmLayer::zeros(3, 2);
        assert!(matches!(
            lstm_step(&l, &LstmLayerState::zeros(2), &[1.0]),
            Err(NeuralError::Shape(_))
        ));
        assert!(matches!(
            lstm_step(&l, &LstmLayerState::zeros(4), &[1.0, 2.0, 3.0]),
            Err(NeuralError::Shape(_))
        ));
    }

    #[test]
    fn gate_ranges_hold_for_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Pre-activations stay well below the f64 saturation point of the sigmoid.
        let l = random_layer(&mut rng, 4, 6, 1.0);
        let mut s = LstmLayerState::zeros(6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            s = lstm_step(&l, &s, &x).unwrap();
            for k in 0..6 {
                for v in [s.gates.i[k], s.gates.f[k], s.gates.o[k]] {
                    assert!(v > 0.0 && v < 1.0);
                }
                assert!(s.gates.g[k] > -1.0 && s.gates.g[k] < 1.0);
            }
        }
    }
}
