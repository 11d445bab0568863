//! Desk-scale supervised training of a small MLP softmax classifier with
//! per-epoch checkpointing and optional score-driven learning-rate
//! modulation.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::CheckpointRecord;
use crate::config::MpcsConfig;
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::types::{LabeledPrediction, ProbabilityVector};

/// Fully connected network with ReLU hidden layers and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Per-layer parameter gradients, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpModel {
    /// He-style initialization from the given stream: weights drawn from
    /// `N(0, 2 / fan_in)`, biases zero.
    pub fn init(dims: &[usize], rng: &mut impl rand::Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::TrainConfig(format!("bad layer sizes {dims:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
                .collect();
            weights.push(Array2::from_shape_vec((fan_in, fan_out), data).unwrap());
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpModel {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Post-activation values per layer; `out[0]` is the input, the last
    /// entry the softmax probabilities.
    fn forward(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.clone());
        for l in 0..layers {
            let mut z = acts[l].dot(&self.weights[l]);
            z += &self.biases[l];
            if l + 1 == layers {
                softmax_rows_inplace(&mut z);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Softmax probabilities for a batch of inputs.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).pop().expect("forward yields at least the input")
    }

    /// Mean cross entropy (natural log) of the batch.
    pub fn batch_loss(&self, x: &Array2<f64>, targets: &[usize]) -> f64 {
        let probs = self.predict_proba(x);
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            total -= probs[(i, y)].max(1e-12).ln();
        }
        total / targets.len() as f64
    }

    /// Backpropagate the mean cross entropy through cached activations.
    fn backward(&self, acts: &[Array2<f64>], targets: &[usize]) -> Gradients {
        let layers = self.weights.len();
        let batch = targets.len() as f64;
        // softmax with one-hot cross entropy: dz = (p - y) / batch
        let mut dz = acts[layers].clone();
        for (i, &y) in targets.iter().enumerate() {
            dz[(i, y)] -= 1.0;
        }
        dz /= batch;

        let mut grad_w = vec![Array2::zeros((0, 0)); layers];
        let mut grad_b = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            grad_w[l] = acts[l].t().dot(&dz);
            grad_b[l] = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut da = dz.dot(&self.weights[l].t());
                // ReLU gate: the activation is positive iff its input was
                da.zip_mut_with(&acts[l], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                dz = da;
            }
        }
        Gradients {
            weights: grad_w,
            biases: grad_b,
        }
    }

    /// Predictions over a whole dataset, row index as sample id.
    pub fn predict_dataset(&self, dataset: &TabularDataset) -> Result<Vec<LabeledPrediction>> {
        let probs = self.predict_proba(&dataset.features);
        let mut preds = Vec::with_capacity(dataset.len());
        for (i, row) in probs.rows().into_iter().enumerate() {
            preds.push(LabeledPrediction {
                sample_id: i,
                true_label: dataset.labels[i],
                probs: ProbabilityVector::new(row.to_vec())?,
            });
        }
        Ok(preds)
    }
}

fn softmax_rows_inplace(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Optimizer choice for the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-epoch learning-rate policy: fixed, or scaled by the previous epoch's
/// training-set score relative to the initial one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrModulation {
    Off,
    Mpcs { floor_ratio: f64, cap_ratio: f64 },
}

impl LrModulation {
    /// Score-driven modulation with the stock 0.1 floor and 1.0 cap.
    pub fn mpcs() -> Self {
        LrModulation::Mpcs {
            floor_ratio: 0.1,
            cap_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub modulation: LrModulation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            base_lr: 1e-3,
            batch_size: 32,
            optimizer: Optimizer::default(),
            seed: 0,
            modulation: LrModulation::Off,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::TrainConfig("epochs must be at least 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::TrainConfig(format!(
                "base learning rate must be positive, got {}",
                self.base_lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::TrainConfig("batch size must be at least 1".into()));
        }
        if let LrModulation::Mpcs {
            floor_ratio,
            cap_ratio,
        } = self.modulation
        {
            if !(floor_ratio > 0.0 && floor_ratio <= cap_ratio) {
                return Err(Error::TrainConfig(format!(
                    "modulation needs 0 < floor <= cap, got floor {floor_ratio}, cap {cap_ratio}"
                )));
            }
        }
        Ok(())
    }
}

/// Hidden-layer widths of the classifier; input and output sizes come from
/// the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![16] }
    }
}

/// Learning rate for the next epoch: `base * clamp(s_prev / s_ref, floor,
/// cap)`, where `s_prev` is the previous epoch's training-set score and
/// `s_ref` the score at initialization.
pub fn modulated_lr(base: f64, s_prev: f64, s_ref: f64, floor: f64, cap: f64) -> Result<f64> {
    if s_ref.is_nan() || s_ref <= 0.0 {
        return Err(Error::NonPositiveReference(s_ref));
    }
    Ok(base * (s_prev / s_ref).clamp(floor, cap))
}

/// Run minibatch gradient descent on the cross-entropy objective, dumping a
/// full-dataset checkpoint after every epoch.
///
/// Training is deterministic given the seed: initialization and the per-epoch
/// shuffles come from one seeded stream, and metric evaluation never touches
/// it.
pub fn train(
    dataset: &TabularDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mpcs_cfg: &MpcsConfig,
) -> Result<Vec<CheckpointRecord>> {
    train_with(dataset, model_cfg, train_cfg, mpcs_cfg, |_, _| Ok(()))
}

/// Like [`train`], invoking the callback with `(learning rate, checkpoint)`
/// after each epoch so callers can stream dumps and log rows to disk. On
/// divergence the callback has already seen every completed epoch.
pub fn train_with(
    dataset: &TabularDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mpcs_cfg: &MpcsConfig,
    mut on_epoch: impl FnMut(f64, &CheckpointRecord) -> Result<()>,
) -> Result<Vec<CheckpointRecord>> {
    train_cfg.validate()?;
    mpcs_cfg.validate_for_space(&dataset.space)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut dims = vec![dataset.feature_count()];
    dims.extend_from_slice(&model_cfg.hidden);
    dims.push(dataset.space.class_count());

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = MlpModel::init(&dims, &mut rng)?;
    let mut opt = OptimizerState::new(&model, train_cfg.optimizer);

    // reference score of the untrained network, the denominator of the
    // modulation ratio
    let s_ref = match train_cfg.modulation {
        LrModulation::Off => None,
        LrModulation::Mpcs { .. } => {
            let preds = model.predict_dataset(dataset)?;
            Some(crate::scoring::dataset_mpcs(&preds, mpcs_cfg)?)
        }
    };
    let mut prev_score = s_ref;

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut records = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        let lr = match train_cfg.modulation {
            LrModulation::Off => train_cfg.base_lr,
            LrModulation::Mpcs {
                floor_ratio,
                cap_ratio,
            } => modulated_lr(
                train_cfg.base_lr,
                prev_score.expect("set when modulation is on"),
                s_ref.expect("set when modulation is on"),
                floor_ratio,
                cap_ratio,
            )?,
        };

        indices.shuffle(&mut rng);
        for batch in indices.chunks(train_cfg.batch_size) {
            let x = dataset.features.select(Axis(0), batch);
            let targets: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();
            let acts = model.forward(&x);
            let probs = &acts[acts.len() - 1];
            let mut loss = 0.0;
            for (i, &y) in targets.iter().enumerate() {
                loss -= probs[(i, y)].max(1e-12).ln();
            }
            // the clamp above swallows NaN, so check the outputs themselves
            if !loss.is_finite() || probs.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            let grads = model.backward(&acts, &targets);
            opt.apply(&mut model, &grads, lr);
        }

        let preds = model.predict_dataset(dataset)?;
        let report = MetricReport::compute(&preds, &dataset.space, mpcs_cfg)?;
        if !report.ce_loss.is_finite() || !report.mpcs.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        prev_score = Some(report.mpcs);
        let record = CheckpointRecord {
            epoch,
            predictions: Some(preds),
            report,
        };
        on_epoch(lr, &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Optimizer state shaped like the model parameters.
struct OptimizerState {
    kind: Optimizer,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl OptimizerState {
    fn new(model: &MlpModel, kind: Optimizer) -> Self {
        let zeros_w = model.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        let zeros_v = model.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        let zeros_b = model.biases.iter().map(|b| Array1::zeros(b.len())).collect();
        let zeros_vb = model.biases.iter().map(|b| Array1::zeros(b.len())).collect();
        OptimizerState {
            kind,
            step: 0,
            m_w: zeros_w,
            v_w: zeros_v,
            m_b: zeros_b,
            v_b: zeros_vb,
        }
    }

    fn apply(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                    w.zip_mut_with(g, |p, &g| *p -= lr * g);
                }
                for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                    b.zip_mut_with(g, |p, &g| *p -= lr * g);
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.step += 1;
                let t = self.step as i32;
                let lr_t = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr_t * *m / (v.sqrt() + epsilon);
                };
                for l in 0..model.weights.len() {
                    let (w, g) = (&mut model.weights[l], &grads.weights[l]);
                    let (m, v) = (&mut self.m_w[l], &mut self.v_w[l]);
                    for ((p, &g), (m, v)) in
                        w.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        update(p, g, m, v);
                    }
                    let (b, g) = (&mut model.biases[l], &grads.biases[l]);
                    let (m, v) = (&mut self.m_b[l], &mut self.v_b[l]);
                    for ((p, &g), (m, v)) in
                        b.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        update(p, g, m, v);
                    }
                }
            }
        }
    }
}

/// Compare the analytic gradient against central finite differences
/// (`h = 1e-5`) over every parameter, returning the worst relative error.
/// Differences are measured relative to `max(|analytic|, |numeric|, 1e-3)`,
/// so near-zero gradients are compared absolutely.
pub fn gradient_check(model: &mut MlpModel, x: &Array2<f64>, targets: &[usize]) -> f64 {
    const H: f64 = 1e-5;
    let acts = model.forward(x);
    let grads = model.backward(&acts, targets);

    let mut worst = 0.0f64;
    let mut check = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(rel);
    };

    for l in 0..model.weights.len() {
        for idx in 0..model.weights[l].len() {
            let flat = model.weights[l].as_slice_mut().unwrap();
            let old = flat[idx];
            flat[idx] = old + H;
            let up = model.batch_loss(x, targets);
            model.weights[l].as_slice_mut().unwrap()[idx] = old - H;
            let down = model.batch_loss(x, targets);
            model.weights[l].as_slice_mut().unwrap()[idx] = old;
            check(grads.weights[l].as_slice().unwrap()[idx], (up - down) / (2.0 * H));
        }
        for idx in 0..model.biases[l].len() {
            let old = model.biases[l][idx];
            model.biases[l][idx] = old + H;
            let up = model.batch_loss(x, targets);
            model.biases[l][idx] = old - H;
            let down = model.batch_loss(x, targets);
            model.biases[l][idx] = old;
            check(grads.biases[l][idx], (up - down) / (2.0 * H));
        }
    }
    worst
}
