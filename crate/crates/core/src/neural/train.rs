//! Mini-batch training with validation-driven learning-rate decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::accumulate_data_gradient;
use super::loss::{class_data_loss, l2_penalty, LossKind, Target};
use super::network::{forward, Architecture, HeadKind, NetworkParams, Normalization, Weights};
use super::{FeatureVector, NeuralError};
use crate::data::{DatasetSplit, TrackWindow};
use crate::parallel::Execution;

/// Examples per gradient sub-sum. Sub-sums are added in a fixed order so the
/// batch gradient is bit-identical however many threads compute them.
const GRADIENT_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    /// Plain gradient descent on the batch-mean gradient.
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate_init: f64,
    pub batch_size: usize,
    /// L2 coefficient on fully-connected and head weights. The penalty is
    /// added once to the loss summed over all `J` training examples, so each
    /// batch-mean step carries `lambda / J`.
    pub lambda: f64,
    pub lr_decay_factor: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    /// Training stops once the learning rate falls below this.
    pub min_learning_rate: f64,
    pub rng_seed: u64,
    /// Window length in steps; informational, windows arrive pre-built.
    pub sequence_length: usize,
    pub loss: LossKind,
    pub optimizer: Optimizer,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate_init: 0.001,
            batch_size: 40,
            lambda: 0.0005,
            lr_decay_factor: 0.5,
            patience_epochs: 3,
            max_epochs: 30,
            min_learning_rate: 1e-6,
            rng_seed: 0,
            sequence_length: 20,
            loss: LossKind::BinaryPerClass,
            optimizer: Optimizer::adam(),
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let positive = [
            ("learning_rate_init", self.learning_rate_init),
            ("lr_decay_factor", self.lr_decay_factor),
            ("min_learning_rate", self.min_learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NeuralError::Argument(format!("{name} must be positive")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(NeuralError::Argument("lambda must be non-negative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience_epochs == 0 {
            return Err(NeuralError::Argument(
                "batch_size, max_epochs and patience_epochs must be positive".into(),
            ));
        }
        if self.lr_decay_factor >= 1.0 {
            return Err(NeuralError::Argument("lr_decay_factor must be below 1".into()));
        }
        Ok(())
    }
}

/// Decays the learning rate when validation loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct LrScheduler {
    pub learning_rate: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl LrScheduler {
    pub fn new(learning_rate: f64, factor: f64, patience: usize) -> Self {
        Self {
            learning_rate,
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's validation loss. Returns true when it is a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.learning_rate *= self.factor;
            self.stale = 0;
        }
        false
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
    /// Whether the rate was decayed after this epoch.
    pub lr_decayed: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: NetworkParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// CSV with header `epoch,train_loss,val_loss,lr`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.learning_rate
            ));
        }
        out
    }
}

fn target_of(head: HeadKind, w: &TrackWindow) -> Target {
    match head {
        HeadKind::Grid => Target::Cell(w.label_grid),
        HeadKind::Regression => Target::Point {
            x: w.label_point.0,
            y: w.label_point.1,
        },
    }
}

/// Data loss of one example (no regularization).
pub(crate) fn example_loss(
    params: &NetworkParams,
    features: &[FeatureVector],
    target: &Target,
    kind: LossKind,
) -> Result<f64, NeuralError> {
    let (_, tape) = forward(params, features)?;
    match target {
        Target::Cell(label) => Ok(class_data_loss(
            &tape.head_out,
            label.linear_class(&params.geometry),
            kind,
        )),
        Target::Point { x, y } => {
            let n = &params.output_norm;
            let px = tape.anchor.0 + n.mean[0] + n.scale[0] * tape.head_out[0];
            let py = tape.anchor.1 + n.mean[1] + n.scale[1] * tape.head_out[1];
            Ok(0.5 * ((px - x).powi(2) + (py - y).powi(2)))
        }
    }
}

/// Mean data loss over `windows` plus `lambda * L2`.
pub fn mean_loss(
    params: &NetworkParams,
    windows: &[TrackWindow],
    kind: LossKind,
    lambda: f64,
    execution: Execution,
) -> Result<f64, NeuralError> {
    if windows.is_empty() {
        return Err(NeuralError::Argument("no examples".into()));
    }
    let losses = execution.try_map(windows, |w| {
        example_loss(params, &w.features, &target_of(params.head, w), kind)
    })?;
    Ok(losses.iter().sum::<f64>() / windows.len() as f64 + lambda * l2_penalty(&params.weights))
}

/// Batch-mean data gradient plus the L2 gradient, and the batch's summed
/// data loss.
pub fn batch_gradient(
    params: &NetworkParams,
    batch: &[&TrackWindow],
    kind: LossKind,
    lambda: f64,
    execution: Execution,
) -> Result<(Weights, f64), NeuralError> {
    let chunks: Vec<&[&TrackWindow]> = batch.chunks(GRADIENT_CHUNK).collect();
    let partials = execution.try_map(&chunks, |chunk| {
        let mut g = params.weights.zeros_like();
        let mut loss = 0.0;
        for w in chunk.iter() {
            let (_, tape) = forward(params, &w.features)?;
            loss += accumulate_data_gradient(params, &tape, &target_of(params.head, w), kind, &mut g)?;
        }
        Ok::<_, NeuralError>((g, loss))
    })?;
    let mut iter = partials.into_iter();
    let (mut grads, mut loss) = iter.next().expect("non-empty batch");
    for (g, l) in iter {
        grads.add_assign(&g);
        loss += l;
    }
    grads.scale(1.0 / batch.len() as f64);
    grads.add_l2_gradient(&params.weights, lambda);
    Ok((grads, loss))
}

struct OptimizerState {
    kind: Optimizer,
    m: Option<Weights>,
    v: Option<Weights>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, weights: &Weights) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (None, None),
            Optimizer::Adam { .. } => (Some(weights.zeros_like()), Some(weights.zeros_like())),
        };
        Self { kind, m, v, t: 0 }
    }

    fn step(&mut self, weights: &mut Weights, grads: &Weights, lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (w, g) in weights.slices_mut().into_iter().zip(grads.slices()) {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= lr * gi;
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let m = self.m.as_mut().expect("adam state");
                let v = self.v.as_mut().expect("adam state");
                for (((w, g), m), v) in weights
                    .slices_mut()
                    .into_iter()
                    .zip(grads.slices())
                    .zip(m.slices_mut())
                    .zip(v.slices_mut())
                {
                    for k in 0..w.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// Applies one plain gradient step to `params` on a single example and
/// returns that example's full loss before the step.
pub fn sgd_step(
    params: &mut NetworkParams,
    window: &TrackWindow,
    kind: LossKind,
    lambda: f64,
    learning_rate: f64,
) -> Result<f64, NeuralError> {
    let before = lambda * l2_penalty(&params.weights);
    let (grads, loss) = batch_gradient(params, &[window], kind, lambda, Execution::Sequential)?;
    let mut opt = OptimizerState::new(Optimizer::Sgd, &params.weights);
    opt.step(&mut params.weights, &grads, learning_rate);
    Ok(loss + before)
}

/// Fits input normalization (and, for regression, the displacement scale)
/// on the training split.
fn fit_normalization(head: HeadKind, train: &[TrackWindow]) -> (Normalization, Normalization) {
    let rows: Vec<[f64; 6]> = train
        .iter()
        .flat_map(|w| w.features.iter().map(FeatureVector::to_array))
        .collect();
    let input = Normalization::fit(6, rows.iter().map(|r| r.as_slice()));
    let output = match head {
        HeadKind::Grid => Normalization::identity(2),
        HeadKind::Regression => {
            let disp: Vec<[f64; 2]> = train
                .iter()
                .map(|w| {
                    let last = w.features.last().expect("non-empty window");
                    [w.label_point.0 - last.x, w.label_point.1 - last.y]
                })
                .collect();
            Normalization::fit(2, disp.iter().map(|r| r.as_slice()))
        }
    };
    (input, output)
}

/// Trains a fresh network on `split.train`, selecting the epoch with the
/// lowest validation loss.
pub fn train(
    arch: &Architecture,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome, NeuralError> {
    config.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(NeuralError::Argument(
            "training and validation splits must both be non-empty".into(),
        ));
    }
    let first = &split.train[0];
    let (input_norm, output_norm) = fit_normalization(arch.head, &split.train);
    let mut params = NetworkParams::init(
        arch,
        first.geometry,
        first.delta,
        input_norm,
        output_norm,
        config.rng_seed,
    )?;
    params.provenance.window = first.features.len();
    params.provenance.split_seed = split.seed;
    params.provenance.split_ratio = split.ratio;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut optimizer = OptimizerState::new(config.optimizer, &params.weights);
    let mut scheduler = LrScheduler::new(
        config.learning_rate_init,
        config.lr_decay_factor,
        config.patience_epochs,
    );
    let lambda = config.lambda / split.train.len() as f64;
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.learning_rate;
        order.shuffle(&mut rng);
        let mut data_loss = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&TrackWindow> = batch_idx.iter().map(|&i| &split.train[i]).collect();
            let (grads, loss) =
                batch_gradient(&params, &batch, config.loss, lambda, config.execution)?;
            data_loss += loss;
            optimizer.step(&mut params.weights, &grads, lr);
        }
        let train_loss =
            data_loss / split.train.len() as f64 + lambda * l2_penalty(&params.weights);
        let val_loss = mean_loss(
            &params,
            &split.validation,
            config.loss,
            lambda,
            config.execution,
        )?;
        if !val_loss.is_finite() {
            return Err(NeuralError::Numeric(format!(
                "validation loss diverged at epoch {epoch}"
            )));
        }
        if scheduler.observe(val_loss) {
            best = params.clone();
            best_epoch = epoch;
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
            lr_decayed: scheduler.learning_rate < lr,
        });
        if scheduler.learning_rate < config.min_learning_rate {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellLabel, GridGeometry, GridIndex};
    use crate::neural::Normalization;
    use rand::Rng;

    fn toy_window(id: usize, x: f64, y: f64, geometry: GridGeometry) -> TrackWindow {
        let label = if x > 0.0 {
            CellLabel::InGrid(GridIndex::new(1, 1))
        } else {
            CellLabel::OutOfBoundary
        };
        TrackWindow {
            features: (0..3)
                .map(|k| FeatureVector {
                    x: x + 0.01 * k as f64,
                    y,
                    x_dot: 0.0,
                    y_dot: 0.0,
                    psi: 0.0,
                    v: 20.0,
                })
                .collect(),
            label_grid: label,
            label_point: (x, y),
            delta: 0.5,
            track_id: format!("toy-{id:04}"),
            t_end: 0.0,
            t_label: 0.5,
            geometry,
        }
    }

    /// Two classes (the single cell and out-of-boundary), separated by the
    /// sign of x.
    fn toy_split() -> DatasetSplit {
        let g = GridGeometry::centered(1, 1, 5.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut make = |n: usize, offset: usize| -> Vec<TrackWindow> {
            (0..n)
                .map(|i| {
                    let x = if i % 2 == 0 {
                        rng.random_range(0.5..2.0)
                    } else {
                        rng.random_range(-2.0..-0.5)
                    };
                    toy_window(offset + i, x, rng.random_range(-1.0..1.0), g)
                })
                .collect()
        };
        DatasetSplit {
            train: make(120, 0),
            validation: make(40, 1000),
            seed: 0,
            ratio: 0.75,
        }
    }

    fn toy_arch() -> Architecture {
        Architecture {
            input_fc: vec![4],
            lstm: vec![4, 4],
            output_fc: vec![4],
            head: HeadKind::Grid,
        }
    }

    #[test]
    fn scheduler_decays_after_patience() {
        let mut s = LrScheduler::new(0.001, 0.5, 3);
        assert!(s.observe(1.0));
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.2));
        assert_eq!(s.learning_rate, 0.001);
        assert!(!s.observe(1.0));
        assert_eq!(s.learning_rate, 0.0005);
        for _ in 0..3 {
            s.observe(1.0);
        }
        assert_eq!(s.learning_rate, 0.00025);
        assert!(s.observe(0.5));
        assert_eq!(s.best(), 0.5);
    }

    #[test]
    fn frozen_validation_decays_by_the_factor() {
        let split = toy_split();
        let config = TrainConfig {
            learning_rate_init: 0.0,
            ..TrainConfig::default()
        };
        assert!(config.validate().is_err());
        // A learning rate this small leaves the validation loss flat to
        // within rounding, so every decay comes from patience.
        let config = TrainConfig {
            learning_rate_init: 1e-300,
            min_learning_rate: 1e-320,
            max_epochs: 7,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        let out = train(&toy_arch(), &split, &config).unwrap();
        let lrs: Vec<f64> = out.log.iter().map(|r| r.learning_rate).collect();
        assert_eq!(lrs, vec![1e-300, 1e-300, 1e-300, 1e-300, 0.5e-300, 0.5e-300, 0.5e-300]);
        assert!(out.log[3].lr_decayed);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn separable_toy_task_is_learned() {
        let split = toy_split();
        let config = TrainConfig {
            learning_rate_init: 0.01,
            max_epochs: 50,
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&toy_arch(), &split, &config).unwrap();
        let fresh = NetworkParams::init(
            &toy_arch(),
            out.params.geometry,
            out.params.delta,
            out.params.input_norm.clone(),
            out.params.output_norm.clone(),
            config.rng_seed,
        )
        .unwrap();
        let kind = config.loss;
        let initial = mean_loss(&fresh, &split.train, kind, 0.0, Execution::Sequential).unwrap();
        let last = out.log.last().unwrap().train_loss;
        assert!(last < 0.1 * initial, "initial {initial}, final {last}");
        let best_val = out.log[out.best_epoch - 1].val_loss;
        assert!(best_val <= out.log[0].val_loss);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let split = toy_split();
        let config = TrainConfig {
            max_epochs: 4,
            learning_rate_init: 0.01,
            ..TrainConfig::default()
        };
        let a = train(&toy_arch(), &split, &config).unwrap();
        let b = train(&toy_arch(), &split, &config).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        let seq = TrainConfig {
            execution: Execution::Sequential,
            ..config.clone()
        };
        let c = train(&toy_arch(), &split, &seq).unwrap();
        assert_eq!(a.params, c.params);
        let other = TrainConfig {
            rng_seed: 1,
            ..config
        };
        assert_ne!(train(&toy_arch(), &split, &other).unwrap().params, a.params);
    }

    #[test]
    fn empty_split_is_an_argument_error() {
        let mut split = toy_split();
        split.validation.clear();
        assert!(matches!(
            train(&toy_arch(), &split, &TrainConfig::default()),
            Err(NeuralError::Argument(_))
        ));
    }

    #[test]
    fn small_sgd_step_decreases_example_loss() {
        let g = GridGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = Architecture {
            input_fc: vec![6],
            lstm: vec![6, 6],
            output_fc: vec![8],
            head: HeadKind::Grid,
        };
        for trial in 0..10 {
            let head = if trial % 2 == 0 { HeadKind::Grid } else { HeadKind::Regression };
            let mut p = NetworkParams::init(
                &arch.clone().with_head(head),
                g,
                1.0,
                Normalization::identity(6),
                Normalization::identity(2),
                trial,
            )
            .unwrap();
            let w = toy_window(
                0,
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                g,
            );
            let kind = LossKind::BinaryPerClass;
            let before = sgd_step(&mut p, &w, kind, 0.0005, 1e-4).unwrap();
            let after = mean_loss(&p, std::slice::from_ref(&w), kind, 0.0005, Execution::Sequential).unwrap();
            assert!(after < before, "trial {trial}: {before} -> {after}");
        }
    }

    #[test]
    fn log_csv_has_one_row_per_epoch() {
        let split = toy_split();
        let config = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&toy_arch(), &split, &config).unwrap();
        let csv = out.log_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss,lr");
        assert_eq!(lines.len(), 4);
    }
}
