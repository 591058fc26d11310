use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{lstm_step, Activation, Dense, Gate, LstmLayer, LstmLayerState};
use super::{FeatureVector, NeuralError};
use crate::grid::{fuse_maps, GridGeometry, OccupancyMap};
use crate::parallel::Execution;

/// Longest window `forward` accepts.
pub const MAX_SEQUENCE_LENGTH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Softmax over every grid cell plus the out-of-boundary class.
    Grid,
    /// Two real outputs: the predicted `(x, y)` in meters.
    Regression,
}

impl HeadKind {
    pub fn output_size(self, geometry: &GridGeometry) -> usize {
        match self {
            HeadKind::Grid => geometry.total_classes(),
            HeadKind::Regression => 2,
        }
    }
}

/// Layer widths. Fully-connected layers use tanh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_fc: Vec<usize>,
    pub lstm: Vec<usize>,
    pub output_fc: Vec<usize>,
    pub head: HeadKind,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_fc: vec![64],
            lstm: vec![128, 128],
            output_fc: vec![256],
            head: HeadKind::Grid,
        }
    }
}

impl Architecture {
    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.lstm.is_empty() {
            return Err(NeuralError::Argument("at least one LSTM layer is required".into()));
        }
        if self
            .input_fc
            .iter()
            .chain(&self.lstm)
            .chain(&self.output_fc)
            .any(|&w| w == 0)
        {
            return Err(NeuralError::Argument("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature affine standardization `(v - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Mean and standard deviation of each column; near-constant columns
    /// get a unit scale.
    pub fn fit<'a, I>(n: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut count = 0usize;
        let mut mean = vec![0.0; n];
        for row in rows.clone() {
            count += 1;
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        if count == 0 {
            return Self::identity(n);
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; n];
        for row in rows {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-6 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// How the weights were initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRecipe {
    pub scheme: String,
    pub forget_bias: f64,
    pub seed: u64,
}

/// Data-pipeline settings the parameters were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Window length in steps.
    pub window: usize,
    pub split_seed: u64,
    pub split_ratio: f64,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            window: 20,
            split_seed: 0,
            split_ratio: 0.85,
        }
    }
}

/// Name, shape and regularization status of one trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Included in the L2 penalty.
    pub regularized: bool,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub input_fc: Vec<Dense>,
    pub lstm: Vec<LstmLayer>,
    pub output_fc: Vec<Dense>,
    pub head: Dense,
}

impl Weights {
    pub fn zeros(arch: &Architecture, geometry: &GridGeometry) -> Self {
        let mut width = FeatureVector::LEN;
        let input_fc = arch
            .input_fc
            .iter()
            .map(|&w| {
                let d = Dense::zeros(width, w, Activation::Tanh);
                width = w;
                d
            })
            .collect();
        let lstm = arch
            .lstm
            .iter()
            .map(|&h| {
                let l = LstmLayer::zeros(width, h);
                width = h;
                l
            })
            .collect();
        let output_fc = arch
            .output_fc
            .iter()
            .map(|&w| {
                let d = Dense::zeros(width, w, Activation::Tanh);
                width = w;
                d
            })
            .collect();
        let head = Dense::zeros(width, arch.head.output_size(geometry), Activation::Identity);
        Self {
            input_fc,
            lstm,
            output_fc,
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut w = self.clone();
        w.for_each_mut(|_, t| t.iter_mut().for_each(|v| *v = 0.0));
        w
    }

    /// Tensor layout in canonical order.
    pub fn specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        let dense = |out: &mut Vec<TensorSpec>, prefix: String, d: &Dense| {
            out.push(TensorSpec {
                name: format!("{prefix}.weight"),
                shape: vec![d.weights.rows, d.weights.cols],
                regularized: true,
            });
            out.push(TensorSpec {
                name: format!("{prefix}.bias"),
                shape: vec![d.bias.len()],
                regularized: false,
            });
        };
        for (i, d) in self.input_fc.iter().enumerate() {
            dense(&mut out, format!("input_fc.{i}"), d);
        }
        for (i, l) in self.lstm.iter().enumerate() {
            out.push(TensorSpec {
                name: format!("lstm.{i}.w_x"),
                shape: vec![l.w_x.rows, l.w_x.cols],
                regularized: false,
            });
            out.push(TensorSpec {
                name: format!("lstm.{i}.w_h"),
                shape: vec![l.w_h.rows, l.w_h.cols],
                regularized: false,
            });
            out.push(TensorSpec {
                name: format!("lstm.{i}.b"),
                shape: vec![l.b.len()],
                regularized: false,
            });
        }
        for (i, d) in self.output_fc.iter().enumerate() {
            dense(&mut out, format!("output_fc.{i}"), d);
        }
        dense(&mut out, "head".into(), &self.head);
        out
    }

    /// Flat views of every tensor, in [`Weights::specs`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for d in &self.input_fc {
            out.push(&d.weights.data);
            out.push(&d.bias);
        }
        for l in &self.lstm {
            out.push(&l.w_x.data);
            out.push(&l.w_h.data);
            out.push(&l.b);
        }
        for d in &self.output_fc {
            out.push(&d.weights.data);
            out.push(&d.bias);
        }
        out.push(&self.head.weights.data);
        out.push(&self.head.bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for d in &mut self.input_fc {
            out.push(&mut d.weights.data);
            out.push(&mut d.bias);
        }
        for l in &mut self.lstm {
            out.push(&mut l.w_x.data);
            out.push(&mut l.w_h.data);
            out.push(&mut l.b);
        }
        for d in &mut self.output_fc {
            out.push(&mut d.weights.data);
            out.push(&mut d.bias);
        }
        out.push(&mut self.head.weights.data);
        out.push(&mut self.head.bias);
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&TensorSpec, &mut [f64])) {
        let specs = self.specs();
        for (spec, t) in specs.iter().zip(self.slices_mut()) {
            f(spec, t);
        }
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.for_each_mut(|_, t| t.iter_mut().for_each(|v| *v *= k));
    }

    /// `self += lambda * w` on regularized tensors only.
    pub fn add_l2_gradient(&mut self, weights: &Weights, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        let specs = self.specs();
        for ((spec, g), w) in specs.iter().zip(self.slices_mut()).zip(weights.slices()) {
            if spec.regularized {
                for (gi, wi) in g.iter_mut().zip(w) {
                    *gi += lambda * wi;
                }
            }
        }
    }

    fn fc_width(&self) -> usize {
        self.output_fc
            .last()
            .map(Dense::output_size)
            .unwrap_or_else(|| self.lstm.last().map_or(0, |l| l.hidden_size))
    }
}

/// A complete, self-describing parameter set for one prediction horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Weights,
    pub head: HeadKind,
    pub geometry: GridGeometry,
    /// Prediction horizon in seconds.
    pub delta: f64,
    pub input_norm: Normalization,
    /// Affine map from the regression head's raw outputs to a displacement
    /// (meters) added to the last observed position. Identity for grid heads.
    pub output_norm: Normalization,
    pub init: InitRecipe,
    pub provenance: Provenance,
}

impl NetworkParams {
    /// Random initialization: every matrix uniform in `+-1/sqrt(fan_in)`,
    /// biases zero except the LSTM forget gates, which start at 1.
    pub fn init(
        arch: &Architecture,
        geometry: GridGeometry,
        delta: f64,
        input_norm: Normalization,
        output_norm: Normalization,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        arch.validate()?;
        geometry.validate()?;
        if !(delta > 0.0) {
            return Err(NeuralError::Argument(format!("delta must be positive, got {delta}")));
        }
        if input_norm.mean.len() != FeatureVector::LEN || output_norm.mean.len() != 2 {
            return Err(NeuralError::Shape("normalization sizes must be 6 (input) and 2 (output)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Weights::zeros(arch, &geometry);
        let mut fill = |m: &mut [f64], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            m.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        };
        for d in &mut weights.input_fc {
            let n = d.input_size();
            fill(&mut d.weights.data, n);
        }
        for l in &mut weights.lstm {
            let (n, h) = (l.input_size(), l.hidden_size);
            fill(&mut l.w_x.data, n);
            fill(&mut l.w_h.data, h);
            l.bias_mut(Gate::Forget).iter_mut().for_each(|b| *b = 1.0);
        }
        for d in &mut weights.output_fc {
            let n = d.input_size();
            fill(&mut d.weights.data, n);
        }
        let n = weights.head.input_size();
        fill(&mut weights.head.weights.data, n);
        Ok(Self {
            weights,
            head: arch.head,
            geometry,
            delta,
            input_norm,
            output_norm,
            init: InitRecipe {
                scheme: "uniform_inv_sqrt_fan_in".into(),
                forget_bias: 1.0,
                seed,
            },
            provenance: Provenance::default(),
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_fc: self.weights.input_fc.iter().map(Dense::output_size).collect(),
            lstm: self.weights.lstm.iter().map(|l| l.hidden_size).collect(),
            output_fc: self.weights.output_fc.iter().map(Dense::output_size).collect(),
            head: self.head,
        }
    }

    /// Checks that layer dimensions chain end to end.
    pub fn validate(&self) -> Result<(), NeuralError> {
        let w = &self.weights;
        let mut width = FeatureVector::LEN;
        let mismatch = |what: String| Err(NeuralError::Shape(what));
        for (i, d) in w.input_fc.iter().enumerate() {
            if d.input_size() != width || d.bias.len() != d.output_size() {
                return mismatch(format!("input_fc.{i}"));
            }
            width = d.output_size();
        }
        if w.lstm.is_empty() {
            return mismatch("no LSTM layers".into());
        }
        for (i, l) in w.lstm.iter().enumerate() {
            let h = l.hidden_size;
            if l.input_size() != width
                || l.w_x.rows != 4 * h
                || l.w_h.rows != 4 * h
                || l.w_h.cols != h
                || l.b.len() != 4 * h
            {
                return mismatch(format!("lstm.{i}"));
            }
            width = h;
        }
        for (i, d) in w.output_fc.iter().enumerate() {
            if d.input_size() != width || d.bias.len() != d.output_size() {
                return mismatch(format!("output_fc.{i}"));
            }
            width = d.output_size();
        }
        if w.head.input_size() != width
            || w.head.output_size() != self.head.output_size(&self.geometry)
            || w.head.bias.len() != w.head.output_size()
        {
            return mismatch("head".into());
        }
        if self.input_norm.mean.len() != FeatureVector::LEN
            || self.input_norm.scale.len() != FeatureVector::LEN
            || self.output_norm.mean.len() != 2
            || self.output_norm.scale.len() != 2
        {
            return mismatch("normalization".into());
        }
        Ok(())
    }
}

/// Network output for one track.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Grid(OccupancyMap),
    Point { x: f64, y: f64 },
}

impl Prediction {
    pub fn into_map(self) -> Option<OccupancyMap> {
        match self {
            Prediction::Grid(m) => Some(m),
            Prediction::Point { .. } => None,
        }
    }

    pub fn point(&self) -> Option<(f64, f64)> {
        match *self {
            Prediction::Point { x, y } => Some((x, y)),
            Prediction::Grid(_) => None,
        }
    }
}

/// Activations cached by [`forward`] for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape {
    pub head: HeadKind,
    /// Normalized inputs per step.
    pub inputs: Vec<Vec<f64>>,
    /// `[step][layer]` outputs of the input FC stack.
    pub input_fc: Vec<Vec<Vec<f64>>>,
    /// `[layer][step]` LSTM states including gate activations.
    pub lstm: Vec<Vec<LstmLayerState>>,
    /// Outputs of the output FC stack (final step only).
    pub output_fc: Vec<Vec<f64>>,
    /// Softmax probabilities (grid) or raw head outputs (regression).
    pub head_out: Vec<f64>,
    /// Last observed position, the anchor of regression outputs.
    pub anchor: (f64, f64),
}

impl Tape {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Input to LSTM layer `layer` at step `t`.
    pub(crate) fn lstm_input(&self, layer: usize, t: usize) -> &[f64] {
        if layer > 0 {
            &self.lstm[layer - 1][t].h
        } else if let Some(last) = self.input_fc[t].last() {
            last
        } else {
            &self.inputs[t]
        }
    }

    /// Input to the head layer.
    pub(crate) fn head_input(&self) -> &[f64] {
        match self.output_fc.last() {
            Some(v) => v,
            None => &self.lstm.last().expect("at least one lstm layer").last().expect("non-empty").h,
        }
    }
}

fn check_finite(v: &[f64], layer: impl FnOnce() -> String) -> Result<(), NeuralError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NeuralError::NonFinite { layer: layer() })
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&a| (a - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Runs the network over one track window.
pub fn forward(
    params: &NetworkParams,
    sequence: &[FeatureVector],
) -> Result<(Prediction, Tape), NeuralError> {
    if sequence.is_empty() {
        return Err(NeuralError::Argument("empty input sequence".into()));
    }
    if sequence.len() > MAX_SEQUENCE_LENGTH {
        return Err(NeuralError::Argument(format!(
            "sequence of {} steps exceeds the maximum of {MAX_SEQUENCE_LENGTH}",
            sequence.len()
        )));
    }
    let w = &params.weights;
    let steps = sequence.len();
    let mut inputs = Vec::with_capacity(steps);
    let mut input_fc = Vec::with_capacity(steps);
    for (t, fv) in sequence.iter().enumerate() {
        let x = params.input_norm.apply(&fv.to_array());
        check_finite(&x, || format!("input (step {t})"))?;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(w.input_fc.len());
        for (i, d) in w.input_fc.iter().enumerate() {
            let y = d.forward(acts.last().unwrap_or(&x));
            check_finite(&y, || format!("input_fc.{i}"))?;
            acts.push(y);
        }
        inputs.push(x);
        input_fc.push(acts);
    }

    let mut lstm: Vec<Vec<LstmLayerState>> = Vec::with_capacity(w.lstm.len());
    for (li, layer) in w.lstm.iter().enumerate() {
        let mut states: Vec<LstmLayerState> = Vec::with_capacity(steps);
        let mut state = LstmLayerState::zeros(layer.hidden_size);
        for t in 0..steps {
            let x: &[f64] = if li > 0 {
                &lstm[li - 1][t].h
            } else if let Some(last) = input_fc[t].last() {
                last
            } else {
                &inputs[t]
            };
            state = lstm_step(layer, &state, x)?;
            states.push(state.clone());
        }
        check_finite(&state.c, || format!("lstm.{li}"))?;
        check_finite(&state.h, || format!("lstm.{li}"))?;
        lstm.push(states);
    }

    let top = &lstm.last().expect("validated").last().expect("non-empty").h;
    let mut output_fc: Vec<Vec<f64>> = Vec::with_capacity(w.output_fc.len());
    for (i, d) in w.output_fc.iter().enumerate() {
        let y = d.forward(output_fc.last().unwrap_or(top));
        check_finite(&y, || format!("output_fc.{i}"))?;
        output_fc.push(y);
    }
    let logits = w.head.forward(output_fc.last().unwrap_or(top));
    check_finite(&logits, || "head".to_string())?;

    let last = sequence[steps - 1];
    let anchor = (last.x, last.y);
    let (prediction, head_out) = match params.head {
        HeadKind::Grid => {
            let probs = softmax(&logits);
            check_finite(&probs, || "softmax".to_string())?;
            (
                Prediction::Grid(OccupancyMap::from_class_probs(params.geometry, &probs)?),
                probs,
            )
        }
        HeadKind::Regression => {
            let n = &params.output_norm;
            let x = anchor.0 + n.mean[0] + n.scale[0] * logits[0];
            let y = anchor.1 + n.mean[1] + n.scale[1] * logits[1];
            (Prediction::Point { x, y }, logits)
        }
    };
    debug_assert_eq!(w.fc_width(), w.head.input_size());
    Ok((
        prediction,
        Tape {
            head: params.head,
            inputs,
            input_fc,
            lstm,
            output_fc,
            head_out,
            anchor,
        },
    ))
}

/// Predicts every track with the shared parameters and fuses the per-track
/// maps into one occupancy map.
pub fn predict_fleet(
    params: &NetworkParams,
    tracks: &[Vec<FeatureVector>],
    execution: Execution,
) -> Result<OccupancyMap, NeuralError> {
    if params.head != HeadKind::Grid {
        return Err(NeuralError::HeadMismatch(
            "fleet prediction needs a grid head".into(),
        ));
    }
    if tracks.is_empty() {
        return Err(NeuralError::Argument("no tracks to predict".into()));
    }
    let maps = execution.try_map(tracks, |seq| {
        forward(params, seq).map(|(p, _)| p.into_map().expect("grid head"))
    })?;
    Ok(fuse_maps(&maps)?)
}
