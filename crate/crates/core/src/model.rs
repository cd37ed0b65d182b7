//! Deep ensemble of rectifier MLPs, the posterior-sample source for scoring.
//!
//! K independently initialized and independently trained members stand in
//! for K posterior parameter samples: their softmax outputs fill the sample
//! axis of [`PredictiveSamples`]. Training is plain minibatch Adam on mean
//! cross-entropy with optional early stopping on a held-out slice of the
//! training data. Everything is f64 and deterministic given an [`RngState`]:
//! member i initializes and shuffles on its own labeled sub-streams, so
//! retraining with the same inputs reproduces parameters bit for bit.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngState};
use crate::scoring::PredictiveSamples;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    num_classes: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::parameter("input_dim", "must be positive"));
        }
        if hidden_dims.is_empty() {
            return Err(Error::parameter("hidden_dims", "need at least one hidden layer"));
        }
        if let Some(&w) = hidden_dims.iter().find(|&&w| w == 0) {
            return Err(Error::parameter("hidden_dims", format!("zero-width layer: {w}")));
        }
        if num_classes < 2 {
            return Err(Error::parameter("num_classes", "need at least 2 classes"));
        }
        Ok(Self { input_dim, hidden_dims, num_classes })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// (fan_in, fan_out) per layer, input to output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.num_classes))
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One dense layer: weights of shape (fan_in, fan_out), biases of length
/// fan_out. Also reused as the per-layer gradient record, which has the same
/// shapes by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Gradients of the loss, one record per layer, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// A rectifier MLP: dense layers with ReLU between them and softmax on the
/// final logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Xavier-uniform weights (uniform on ±sqrt(6/(fan_in+fan_out))), zero
    /// biases, parameters drawn in layer order from `rng`'s stream.
    fn init(arch: &MlpArchitecture, rng: &RngState) -> Self {
        let mut stream = rng.stream();
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    (stream.next_uniform() * 2.0 - 1.0) * a
                });
                Layer { weights, biases: Array1::zeros(fan_out) }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the parameters, e.g. for finite-difference probes
    /// or checkpoint surgery. The layer count and shapes are fixed; only the
    /// values are open.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Forward pass keeping per-layer inputs and pre-activations for
    /// backprop. Returns (layer inputs, hidden pre-activations, probs).
    fn forward_cached(
        &self,
        x: ArrayView2<'_, f64>,
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(a.clone());
            let mut z = a.dot(&layer.weights);
            z += &layer.biases;
            if l + 1 < self.layers.len() {
                pre_acts.push(z.clone());
                a = z.mapv(|v| v.max(0.0));
            } else {
                a = z;
            }
        }
        let probs = softmax_rows(&a);
        (inputs, pre_acts, probs)
    }

    /// Class probabilities, one row per input example.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (_, _, probs) = self.forward_cached(x);
        probs
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|p| p / sum);
    }
    probs
}

fn log_sum_exp(row: ndarray::ArrayView1<'_, f64>) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy (nats) and its gradient w.r.t. every parameter, by
/// backpropagation. Labels must lie in [0, C); that is the caller's
/// contract and is checked by assertion.
pub fn loss_and_gradient(
    mlp: &Mlp,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> (f64, Gradients) {
    let n = features.nrows();
    assert_eq!(n, labels.len(), "feature rows ({n}) != labels ({})", labels.len());
    assert!(n > 0, "empty minibatch");
    let num_classes = mlp.layers.last().expect("at least one layer").biases.len();
    assert!(
        labels.iter().all(|&y| y < num_classes),
        "label out of range for {num_classes} classes"
    );

    let (inputs, pre_acts, probs) = mlp.forward_cached(features);

    // Loss via log-sum-exp of the logits, which forward_cached does not
    // keep; recover logit-space loss from probabilities' log would lose
    // precision, so recompute the last layer's logits from its input.
    let last = mlp.layers.len() - 1;
    let mut logits = inputs[last].dot(&mlp.layers[last].weights);
    logits += &mlp.layers[last].biases;
    let loss = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum::<f64>()
        / n as f64;

    // d(loss)/d(logits) = (softmax - onehot) / n.
    let mut delta = probs;
    for (i, &y) in labels.iter().enumerate() {
        delta[(i, y)] -= 1.0;
    }
    delta /= n as f64;

    let mut grads = vec![
        Layer { weights: Array2::zeros((0, 0)), biases: Array1::zeros(0) };
        mlp.layers.len()
    ];
    for l in (0..mlp.layers.len()).rev() {
        grads[l] = Layer {
            weights: inputs[l].t().dot(&delta),
            biases: delta.sum_axis(Axis(0)),
        };
        if l > 0 {
            let mut upstream = delta.dot(&mlp.layers[l].weights.t());
            upstream.zip_mut_with(&pre_acts[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = upstream;
        }
    }
    (loss, Gradients { layers: grads })
}

fn mean_cross_entropy(mlp: &Mlp, features: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let last = mlp.layers.len() - 1;
    let mut a = features.to_owned();
    for layer in &mlp.layers[..last] {
        let mut z = a.dot(&layer.weights);
        z += &layer.biases;
        a = z.mapv(|v| v.max(0.0));
    }
    let mut logits = a.dot(&mlp.layers[last].weights);
    logits += &mlp.layers[last].biases;
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum::<f64>()
        / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving validation epochs tolerated before
    /// stopping; 0 behaves like 1. Only active when validation_fraction > 0.
    pub early_stop_patience: usize,
    pub minibatch_size: usize,
    /// Fraction of the training set held out for early stopping, in
    /// [0, 0.5). 0 disables early stopping and runs max_epochs flat.
    pub validation_fraction: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            max_epochs: 100,
            early_stop_patience: 5,
            minibatch_size: 32,
            validation_fraction: 0.1,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::parameter("learning_rate", "must be finite and >= 0"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::parameter("minibatch_size", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::parameter("validation_fraction", "must lie in [0, 0.5)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::parameter("weight_decay", "must be finite and >= 0"));
        }
        Ok(())
    }
}

struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: u64,
}

impl AdamState {
    fn new(mlp: &Mlp) -> Self {
        let zeros = mlp
            .layers
            .iter()
            .map(|l| Layer {
                weights: Array2::zeros(l.weights.dim()),
                biases: Array1::zeros(l.biases.len()),
            })
            .collect::<Vec<_>>();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One Adam update. Weight decay enters as L2 on the weights (not the
    /// biases) added to the gradient before the moment updates.
    fn step(&mut self, mlp: &mut Mlp, grads: &Gradients, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            azip(&mut self.m[l].weights, &mut self.v[l].weights, &mut layer.weights, &g.weights,
                lr, weight_decay, bc1, bc2);
            azip_bias(&mut self.m[l].biases, &mut self.v[l].biases, &mut layer.biases, &g.biases,
                lr, bc1, bc2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn azip(
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    lr: f64,
    weight_decay: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(m).and(v).and(w).and(g).for_each(|m, v, w, &g| {
        let g = g + weight_decay * *w;
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
    });
}

fn azip_bias(
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    b: &mut Array1<f64>,
    g: &Array1<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(m).and(v).and(b).and(g).for_each(|m, v, b, &g| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *b -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
    });
}

/// Shared validation split: indices into 0..n, (train, val). The val slice
/// is capped at n−1 so at least one training example always remains.
fn validation_split(n: usize, fraction: f64, rng: &RngState) -> (Vec<usize>, Vec<usize>) {
    let mut val_count = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 {
        val_count = val_count.max(1);
    }
    val_count = val_count.min(n - 1);
    if val_count == 0 {
        return ((0..n).collect(), Vec::new());
    }
    let mut stream = rng.with_purpose(Purpose::Split).stream();
    let mut idx: Vec<usize> = (0..n).collect();
    stream.shuffle(&mut idx);
    let (val, train) = idx.split_at(val_count);
    let mut val = val.to_vec();
    let mut train = train.to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn gather_rows(features: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), features.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&features.row(i));
    }
    out
}

/// K ensemble members sharing one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    arch: MlpArchitecture,
    members: Vec<Mlp>,
}

impl Ensemble {
    /// K members, member i drawn from `rng`'s Init purpose at lane i.
    pub fn init(arch: MlpArchitecture, k: usize, rng: &RngState) -> Result<Self> {
        if k == 0 {
            return Err(Error::parameter("k", "need at least one member"));
        }
        let init_rng = rng.with_purpose(Purpose::Init);
        let members =
            (0..k).map(|i| Mlp::init(&arch, &init_rng.with_lane(i as u64))).collect();
        Ok(Self { arch, members })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    /// Trains every member independently on the same data and returns the
    /// trained ensemble. All members share one validation split (so their
    /// stopping criteria are comparable) but shuffle minibatches on their
    /// own streams. The best-validation-loss parameters seen during a
    /// member's run are restored at the end, the pre-training state
    /// included.
    pub fn train(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        config: &TrainConfig,
        rng: &RngState,
    ) -> Result<Ensemble> {
        config.validate()?;
        let n = features.nrows();
        if n == 0 || n != labels.len() {
            return Err(Error::input(format!(
                "got {n} feature rows and {} labels",
                labels.len()
            )));
        }
        if features.ncols() != self.arch.input_dim {
            return Err(Error::input(format!(
                "feature width {} != input_dim {}",
                features.ncols(),
                self.arch.input_dim
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.arch.num_classes) {
            return Err(Error::input(format!(
                "label {y} out of range for {} classes",
                self.arch.num_classes
            )));
        }

        let (train_idx, val_idx) = validation_split(n, config.validation_fraction, rng);
        let train_x = gather_rows(features, &train_idx);
        let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let val_x = gather_rows(features, &val_idx);
        let val_y: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

        let shuffle_rng = rng.with_purpose(Purpose::Shuffle);
        let members = self
            .members
            .iter()
            .enumerate()
            .map(|(k, member)| {
                train_member(
                    member,
                    train_x.view(),
                    &train_y,
                    val_x.view(),
                    &val_y,
                    config,
                    &shuffle_rng.with_lane(k as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble { arch: self.arch.clone(), members })
    }

    /// Stacks every member's class probabilities into a (M, K, C) tensor.
    pub fn predict_samples(&self, features: ArrayView2<'_, f64>) -> PredictiveSamples {
        assert_eq!(
            features.ncols(),
            self.arch.input_dim,
            "feature width != input_dim"
        );
        let m = features.nrows();
        let (k, c) = (self.members.len(), self.arch.num_classes);
        let mut probs = ndarray::Array3::zeros((m, k, c));
        for (j, member) in self.members.iter().enumerate() {
            let p = member.predict_proba(features);
            probs.slice_mut(ndarray::s![.., j, ..]).assign(&p);
        }
        PredictiveSamples::new(probs).expect("softmax rows are normalized")
    }

    /// Mean prediction over members, then argmax with ties to the lowest
    /// class index.
    pub fn predict_classes(&self, features: ArrayView2<'_, f64>) -> Vec<usize> {
        let samples = self.predict_samples(features);
        (0..features.nrows())
            .map(|i| {
                let mean = samples.mean_prediction(i);
                let mut best = 0;
                for (c, &p) in mean.iter().enumerate() {
                    if p > mean[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let members = self
            .members
            .iter()
            .map(|m| CheckpointMember {
                layers: m
                    .layers
                    .iter()
                    .map(|l| CheckpointLayer {
                        rows: l.weights.nrows(),
                        cols: l.weights.ncols(),
                        weights: l.weights.iter().cloned().collect(),
                        biases: l.biases.to_vec(),
                    })
                    .collect(),
            })
            .collect();
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            input_dim: self.arch.input_dim,
            hidden_dims: self.arch.hidden_dims.clone(),
            num_classes: self.arch.num_classes,
            members,
        };
        serde_json::to_string(&checkpoint).expect("checkpoint serializes")
    }

    /// Decodes and fully validates a checkpoint: version, architecture,
    /// layer shapes, and parameter finiteness. Never panics on bad input.
    pub fn from_json(text: &str) -> Result<Ensemble> {
        let checkpoint: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::schema(format!("checkpoint: {e}")))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::schema(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        let arch = MlpArchitecture::new(
            checkpoint.input_dim,
            checkpoint.hidden_dims,
            checkpoint.num_classes,
        )?;
        if checkpoint.members.is_empty() {
            return Err(Error::schema("checkpoint has no members"));
        }
        let dims = arch.layer_dims();
        let mut members = Vec::with_capacity(checkpoint.members.len());
        for (k, member) in checkpoint.members.into_iter().enumerate() {
            if member.layers.len() != dims.len() {
                return Err(Error::schema(format!(
                    "member {k}: {} layers, architecture needs {}",
                    member.layers.len(),
                    dims.len()
                )));
            }
            let mut layers = Vec::with_capacity(dims.len());
            for (l, (layer, &(fan_in, fan_out))) in member.layers.into_iter().zip(&dims).enumerate()
            {
                if layer.rows != fan_in || layer.cols != fan_out {
                    return Err(Error::schema(format!(
                        "member {k} layer {l}: shape {}x{}, expected {fan_in}x{fan_out}",
                        layer.rows, layer.cols
                    )));
                }
                if layer.weights.len() != fan_in * fan_out || layer.biases.len() != fan_out {
                    return Err(Error::schema(format!(
                        "member {k} layer {l}: wrong parameter count"
                    )));
                }
                if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                    return Err(Error::schema(format!(
                        "member {k} layer {l}: non-finite parameter"
                    )));
                }
                layers.push(Layer {
                    weights: Array2::from_shape_vec((fan_in, fan_out), layer.weights)
                        .expect("length checked"),
                    biases: Array1::from_vec(layer.biases),
                });
            }
            members.push(Mlp { layers });
        }
        Ok(Ensemble { arch, members })
    }
}

fn train_member(
    member: &Mlp,
    train_x: ArrayView2<'_, f64>,
    train_y: &[usize],
    val_x: ArrayView2<'_, f64>,
    val_y: &[usize],
    config: &TrainConfig,
    rng: &RngState,
) -> Result<Mlp> {
    let mut current = member.clone();
    let mut adam = AdamState::new(&current);
    let mut stream = rng.stream();
    let has_val = !val_y.is_empty();
    let mut best: Option<(f64, Mlp)> = if has_val {
        Some((mean_cross_entropy(&current, val_x, val_y), current.clone()))
    } else {
        None
    };
    let patience = config.early_stop_patience.max(1);
    let mut since_improved = 0usize;

    let n = train_y.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.max_epochs {
        stream.shuffle(&mut order);
        for chunk in order.chunks(config.minibatch_size) {
            let x = gather_rows(train_x, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, grads) = loss_and_gradient(&current, x.view(), &y);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("minibatch loss is {loss}"),
                });
            }
            adam.step(&mut current, &grads, config.learning_rate, config.weight_decay);
        }
        if has_val {
            let val_loss = mean_cross_entropy(&current, val_x, val_y);
            if !val_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("validation loss is {val_loss}"),
                });
            }
            let best_loss = best.as_ref().expect("validation active").0;
            if val_loss < best_loss {
                best = Some((val_loss, current.clone()));
                since_improved = 0;
            } else {
                since_improved += 1;
                if since_improved >= patience {
                    break;
                }
            }
        }
    }
    Ok(match best {
        Some((_, best_params)) => best_params,
        None => current,
    })
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    input_dim: usize,
    hidden_dims: Vec<usize>,
    num_classes: usize,
    members: Vec<CheckpointMember>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMember {
    layers: Vec<CheckpointLayer>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}
