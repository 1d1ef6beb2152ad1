//! Sparse autoencoder architectures (ReLU+L1, per-sample TopK, BatchTopK),
//! hand-derived gradients, and the training loop.
//!
//! The encoder is `pre = (x - decoder_bias) W_enc^T + encoder_bias`
//! followed by the activation rule; the decoder is the affine map
//! `x_hat = z W_dec^T + decoder_bias`, which keeps feature contributions
//! independently additive. TopK and BatchTopK select among raw
//! pre-activations and clamp kept values at zero from below, so latents
//! are always non-negative. Selection ties break toward the lower feature
//! index, and the backward pass treats the selection as constant
//! (straight-through), so a run is exactly reproducible from its seed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::math::{adam_step, AdamParams, AdamState, MathError, Matrix, Rng};

/// Activation threshold below which a feature counts as dead.
pub const DEAD_FEATURE_THRESHOLD: f64 = 1e-6;

/// Errors from model construction and training.
#[derive(Debug, Clone, PartialEq)]
pub enum SaeError {
    /// Configuration violates an invariant (zero epochs, bad k, ...).
    InvalidConfig { detail: String },
    /// Training or evaluation data with no samples.
    EmptyData,
    /// Input columns do not match the model dimension.
    DimensionMismatch { expected: usize, found: usize },
    /// Loss became non-finite during training.
    TrainingDiverged { epoch: usize },
    /// Negative or non-finite dead-feature threshold.
    InvalidThreshold { value: f64 },
    /// Underlying numeric error.
    Math(MathError),
}

impl fmt::Display for SaeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            Self::EmptyData => write!(f, "data must contain at least one sample"),
            Self::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: model expects {expected} columns, data has {found}")
            }
            Self::TrainingDiverged { epoch } => {
                write!(f, "training diverged to a non-finite loss at epoch {epoch}")
            }
            Self::InvalidThreshold { value } => {
                write!(f, "dead-feature threshold {value} must be finite and non-negative")
            }
            Self::Math(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SaeError {}

impl From<MathError> for SaeError {
    fn from(e: MathError) -> Self {
        Self::Math(e)
    }
}

/// How latents are produced from pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationRule {
    /// Elementwise ReLU with an L1 sparsity penalty in the loss.
    #[serde(rename = "relu_l1")]
    ReluL1,
    /// Keep the k largest pre-activations per sample.
    #[serde(rename = "topk")]
    TopK,
    /// Keep the n*k largest pre-activations across the whole batch.
    #[serde(rename = "batch_topk")]
    BatchTopK,
}

impl ActivationRule {
    pub fn uses_k(self) -> bool {
        matches!(self, Self::TopK | Self::BatchTopK)
    }
}

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    256
}
fn default_patience() -> usize {
    10
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeConfig {
    pub input_dim: usize,
    pub dict_size: usize,
    /// Target nonzeros per sample; used by TopK and BatchTopK only.
    #[serde(default)]
    pub k: usize,
    /// Sparsity penalty weight; used by ReluL1 only.
    #[serde(default)]
    pub l1_coefficient: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub activation_rule: ActivationRule,
    /// Early-stopping patience, in test evaluations without improvement.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Optional early exit once the test MSE drops below this value.
    #[serde(default)]
    pub target_test_mse: Option<f64>,
}

impl SaeConfig {
    pub fn validate(&self) -> Result<(), SaeError> {
        let fail = |detail: String| Err(SaeError::InvalidConfig { detail });
        if self.dict_size == 0 {
            return fail("dict_size must be at least 1".into());
        }
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.activation_rule.uses_k() && (self.k == 0 || self.k > self.dict_size) {
            return fail(format!(
                "k = {} must lie in [1, dict_size = {}] for TopK rules",
                self.k, self.dict_size
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if self.l1_coefficient < 0.0 || !self.l1_coefficient.is_finite() {
            return fail(format!(
                "l1_coefficient = {} must be non-negative",
                self.l1_coefficient
            ));
        }
        Ok(())
    }
}

/// Summary of a completed training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    pub mean_l0: f64,
    pub alive_features: usize,
    pub epochs_run: usize,
}

/// Trained sparse autoencoder.
///
/// Decoder columns are kept at unit L2 norm by the training loop so
/// activation magnitudes are comparable across features.
#[derive(Debug, Clone)]
pub struct SaeModel {
    /// `dict_size x input_dim`.
    pub encoder_weights: Matrix,
    /// `dict_size`.
    pub encoder_bias: Vec<f64>,
    /// `input_dim x dict_size`.
    pub decoder_weights: Matrix,
    /// `input_dim`.
    pub decoder_bias: Vec<f64>,
    pub config: SaeConfig,
}

// ---------------------------------------------------------------------------
// Active-set selection
// ---------------------------------------------------------------------------

/// Sparse pattern of kept (and strictly positive) pre-activations, one
/// sorted index list per sample row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    rows: Vec<Vec<u32>>,
}

impl ActiveSet {
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Self {
        Self { rows }
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn total_active(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Chooses the active slots for a block of pre-activations under the
/// given rule. Kept slots always have strictly positive values; ties on
/// value break toward the lower feature index (row-major order for
/// BatchTopK), deterministically.
pub fn select_active(rule: ActivationRule, k: usize, pre: &Matrix) -> ActiveSet {
    let (n, dict) = pre.shape();
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
    match rule {
        ActivationRule::ReluL1 => {
            for (i, row) in pre.iter_rows().enumerate() {
                rows[i] = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(j, _)| j as u32)
                    .collect();
            }
        }
        ActivationRule::TopK => {
            let k = k.min(dict);
            let mut order: Vec<u32> = Vec::with_capacity(dict);
            for (i, row) in pre.iter_rows().enumerate() {
                order.clear();
                order.extend(0..dict as u32);
                if k < dict {
                    order.select_nth_unstable_by(k - 1, |&a, &b| {
                        row[b as usize]
                            .total_cmp(&row[a as usize])
                            .then(a.cmp(&b))
                    });
                }
                let mut kept: Vec<u32> = order[..k]
                    .iter()
                    .copied()
                    .filter(|&j| row[j as usize] > 0.0)
                    .collect();
                kept.sort_unstable();
                rows[i] = kept;
            }
        }
        ActivationRule::BatchTopK => {
            let budget = (n * k).min(n * dict);
            let mut order: Vec<u64> = (0..(n * dict) as u64).collect();
            if budget < order.len() && budget > 0 {
                let data = pre.data();
                order.select_nth_unstable_by(budget - 1, |&a, &b| {
                    data[b as usize].total_cmp(&data[a as usize]).then(a.cmp(&b))
                });
            }
            let data = pre.data();
            for &flat in order[..budget].iter() {
                let flat = flat as usize;
                if data[flat] > 0.0 {
                    rows[flat / dict].push((flat % dict) as u32);
                }
            }
            for row in &mut rows {
                row.sort_unstable();
            }
        }
    }
    ActiveSet { rows }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Parameter gradients for one batch, laid out like the model tensors.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder_weights: Matrix,
    pub encoder_bias: Vec<f64>,
    pub decoder_weights: Matrix,
    pub decoder_bias: Vec<f64>,
}

impl SaeModel {
    pub fn input_dim(&self) -> usize {
        self.decoder_weights.rows()
    }

    pub fn dict_size(&self) -> usize {
        self.decoder_weights.cols()
    }

    fn check_input(&self, x: &Matrix) -> Result<(), SaeError> {
        if x.cols() != self.input_dim() {
            return Err(SaeError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok(())
    }

    fn check_latent(&self, z: &Matrix) -> Result<(), SaeError> {
        if z.cols() != self.dict_size() {
            return Err(SaeError::DimensionMismatch {
                expected: self.dict_size(),
                found: z.cols(),
            });
        }
        Ok(())
    }

    /// Encoder pre-activations `(x - decoder_bias) W_enc^T + encoder_bias`.
    pub fn preactivations(&self, x: &Matrix) -> Result<Matrix, SaeError> {
        self.check_input(x)?;
        let mut centered = x.clone();
        for row in 0..centered.rows() {
            for (v, b) in centered.row_mut(row).iter_mut().zip(&self.decoder_bias) {
                *v -= b;
            }
        }
        let mut pre = centered.dot_transpose(&self.encoder_weights)?;
        for row in 0..pre.rows() {
            for (v, b) in pre.row_mut(row).iter_mut().zip(&self.encoder_bias) {
                *v += b;
            }
        }
        Ok(pre)
    }

    /// Latents for a batch: pre-activations with the activation rule
    /// applied. The batch is the selection unit for BatchTopK.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix, SaeError> {
        let pre = self.preactivations(x)?;
        let active = select_active(self.config.activation_rule, self.config.k, &pre);
        let mut z = Matrix::zeros(pre.rows(), pre.cols());
        for i in 0..pre.rows() {
            for &j in active.row(i) {
                z.set(i, j as usize, pre.get(i, j as usize));
            }
        }
        Ok(z)
    }

    /// Affine decode `z W_dec^T + decoder_bias`.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix, SaeError> {
        self.check_latent(z)?;
        let mut out = z.dot_transpose(&self.decoder_weights)?;
        for row in 0..out.rows() {
            for (v, b) in out.row_mut(row).iter_mut().zip(&self.decoder_bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Reconstruction of a batch through encode and decode.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix, SaeError> {
        self.decode(&self.encode(x)?)
    }

    /// Count of features whose maximum activation over `data` stays
    /// below `threshold`.
    pub fn dead_features(&self, data: &Matrix, threshold: f64) -> Result<usize, SaeError> {
        if !(threshold >= 0.0) || !threshold.is_finite() {
            return Err(SaeError::InvalidThreshold { value: threshold });
        }
        if data.rows() == 0 {
            return Err(SaeError::EmptyData);
        }
        let z = self.encode(data)?;
        let dict = self.dict_size();
        let mut max_act = vec![0.0f64; dict];
        for row in z.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                if v > max_act[j] {
                    max_act[j] = v;
                }
            }
        }
        Ok(max_act.iter().filter(|&&m| m < threshold).count())
    }

    /// Data-driven initialization: decoder bias at the data mean,
    /// decoder columns at normalized centered training samples (Gaussian
    /// fallback for degenerate samples), tied encoder, zero encoder bias.
    pub fn init_from_data(config: SaeConfig, data: &Matrix) -> Result<Self, SaeError> {
        config.validate()?;
        if data.rows() == 0 {
            return Err(SaeError::EmptyData);
        }
        if data.cols() != config.input_dim {
            return Err(SaeError::DimensionMismatch {
                expected: config.input_dim,
                found: data.cols(),
            });
        }
        let d = config.input_dim;
        let dict = config.dict_size;
        let n = data.rows();
        let mut rng = Rng::new(config.seed);

        let mut mean = vec![0.0f64; d];
        for row in data.iter_rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }

        let mut decoder = Matrix::zeros(d, dict);
        let mut column = vec![0.0f64; d];
        for j in 0..dict {
            let sample = rng.next_below(n as u64) as usize;
            for (c, (&v, &m)) in column.iter_mut().zip(data.row(sample).iter().zip(&mean)) {
                *c = v - m;
            }
            let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                for c in column.iter_mut() {
                    *c = rng.next_gaussian();
                }
                let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
                for c in column.iter_mut() {
                    *c /= norm;
                }
            } else {
                for c in column.iter_mut() {
                    *c /= norm;
                }
            }
            for (i, &c) in column.iter().enumerate() {
                decoder.set(i, j, c);
            }
        }

        let encoder = decoder.transpose();
        Ok(Self {
            encoder_weights: encoder,
            encoder_bias: vec![0.0; dict],
            decoder_weights: decoder,
            decoder_bias: mean,
            config,
        })
    }
}

/// Mean over all entries of the squared difference.
pub fn mse(x: &Matrix, x_hat: &Matrix) -> Result<f64, SaeError> {
    if x.shape() != x_hat.shape() {
        return Err(SaeError::Math(MathError::ShapeMismatch {
            expected: x.shape(),
            found: x_hat.shape(),
        }));
    }
    let total: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(total / x.data().len() as f64)
}

/// Forward pass with a fixed active set: latents are the raw
/// pre-activations at the given slots (straight-through at the kink).
/// Used by training, the loss/gradient pair below, and gradient checks.
struct MaskedForward {
    pre: Matrix,
    x_hat: Matrix,
}

fn masked_forward_parts(model: &SaeModel, x: &Matrix, active: &ActiveSet) -> Result<MaskedForward, SaeError> {
    model.check_input(x)?;
    let pre = model.preactivations(x)?;
    let (n, d) = x.shape();
    let dict = model.dict_size();
    let wd = model.decoder_weights.data();
    let mut x_hat = Matrix::zeros(n, d);
    for i in 0..n {
        let out = x_hat.row_mut(i);
        out.copy_from_slice(&model.decoder_bias);
        for &j in active.row(i) {
            let val = pre.get(i, j as usize);
            let col = j as usize;
            for (r, o) in out.iter_mut().enumerate() {
                *o += val * wd[r * dict + col];
            }
        }
    }
    Ok(MaskedForward { pre, x_hat })
}

/// Training loss (MSE plus the L1 term for ReluL1) with the active set
/// held fixed.
pub fn masked_loss(model: &SaeModel, x: &Matrix, active: &ActiveSet) -> Result<f64, SaeError> {
    let fwd = masked_forward_parts(model, x, active)?;
    let mut loss = mse(x, &fwd.x_hat)?;
    if model.config.activation_rule == ActivationRule::ReluL1 && model.config.l1_coefficient > 0.0 {
        let mut l1 = 0.0;
        for i in 0..x.rows() {
            for &j in active.row(i) {
                l1 += fwd.pre.get(i, j as usize).abs();
            }
        }
        loss += model.config.l1_coefficient * l1 / x.rows() as f64;
    }
    Ok(loss)
}

/// Analytic gradients of [`masked_loss`] with respect to all four
/// parameter tensors, with the active set held fixed.
pub fn masked_gradients(
    model: &SaeModel,
    x: &Matrix,
    active: &ActiveSet,
) -> Result<Gradients, SaeError> {
    let fwd = masked_forward_parts(model, x, active)?;
    let (n, d) = x.shape();
    let dict = model.dict_size();
    let l1_rate = if model.config.activation_rule == ActivationRule::ReluL1 {
        model.config.l1_coefficient / n as f64
    } else {
        0.0
    };

    // G = dLoss/dx_hat, row-major n x d
    let scale = 2.0 / (n * d) as f64;
    let mut g = fwd.x_hat;
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        *gv = (*gv - xv) * scale;
    }

    let wd = model.decoder_weights.data();
    let we = model.encoder_weights.data();
    let mut g_wd = Matrix::zeros(d, dict);
    let mut g_we = Matrix::zeros(dict, d);
    let mut g_be = vec![0.0f64; dict];
    let mut g_bd = vec![0.0f64; d];

    // Decode-path bias gradient: column sums of G.
    for i in 0..n {
        for (acc, &gv) in g_bd.iter_mut().zip(g.row(i)) {
            *acc += gv;
        }
    }

    let g_wd_data = g_wd.data_mut();
    let g_we_data = g_we.data_mut();
    for i in 0..n {
        let g_row = g.row(i);
        let x_row = x.row(i);
        for &j in active.row(i) {
            let col = j as usize;
            let z_val = fwd.pre.get(i, col);
            // dLoss/dz at this slot: G . decoder column, plus the L1 slope.
            let mut dz = l1_rate;
            for (r, &gv) in g_row.iter().enumerate() {
                dz += gv * wd[r * dict + col];
            }
            // decoder weight gradient: z^T G, scattered by column
            for (r, &gv) in g_row.iter().enumerate() {
                g_wd_data[r * dict + col] += z_val * gv;
            }
            // encoder weight gradient: P^T (x - b_dec)
            let we_row = &we[col * d..(col + 1) * d];
            let g_we_row = &mut g_we_data[col * d..(col + 1) * d];
            for ((gw, &xv), &b) in g_we_row.iter_mut().zip(x_row).zip(&model.decoder_bias) {
                *gw += dz * (xv - b);
            }
            // encode-path decoder-bias gradient: -(P W_enc)
            for (acc, &w) in g_bd.iter_mut().zip(we_row) {
                *acc -= dz * w;
            }
            g_be[col] += dz;
        }
    }

    Ok(Gradients {
        encoder_weights: g_we,
        encoder_bias: g_be,
        decoder_weights: g_wd,
        decoder_bias: g_bd,
    })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn vec_as_matrix(v: &[f64]) -> Matrix {
    Matrix::from_vec_unchecked(1, v.len(), v.to_vec())
}

/// Removes the radial component of each decoder-column gradient so the
/// Adam step moves tangentially to the unit sphere.
fn project_decoder_gradient(decoder: &Matrix, grad: &mut Matrix) {
    let (d, dict) = decoder.shape();
    let w = decoder.data();
    let g = grad.data_mut();
    for j in 0..dict {
        let mut radial = 0.0;
        for r in 0..d {
            radial += g[r * dict + j] * w[r * dict + j];
        }
        for r in 0..d {
            g[r * dict + j] -= radial * w[r * dict + j];
        }
    }
}

fn renormalize_decoder_columns(decoder: &mut Matrix) {
    let (d, dict) = decoder.shape();
    let w = decoder.data_mut();
    for j in 0..dict {
        let mut norm = 0.0;
        for r in 0..d {
            norm += w[r * dict + j] * w[r * dict + j];
        }
        let norm = norm.sqrt();
        if norm > 1e-12 {
            for r in 0..d {
                w[r * dict + j] /= norm;
            }
        }
    }
}

struct Snapshot {
    encoder_weights: Matrix,
    encoder_bias: Vec<f64>,
    decoder_weights: Matrix,
    decoder_bias: Vec<f64>,
}

impl Snapshot {
    fn of(model: &SaeModel) -> Self {
        Self {
            encoder_weights: model.encoder_weights.clone(),
            encoder_bias: model.encoder_bias.clone(),
            decoder_weights: model.decoder_weights.clone(),
            decoder_bias: model.decoder_bias.clone(),
        }
    }

    fn restore(self, model: &mut SaeModel) {
        model.encoder_weights = self.encoder_weights;
        model.encoder_bias = self.encoder_bias;
        model.decoder_weights = self.decoder_weights;
        model.decoder_bias = self.decoder_bias;
    }
}

/// Trains an SAE with minibatch Adam, unit-norm decoder columns, and
/// early stopping on held-out MSE. The parameters at the best test MSE
/// seen are the ones returned. Deterministic given the config seed.
pub fn train(
    config: SaeConfig,
    train_data: &Matrix,
    test_data: &Matrix,
) -> Result<(SaeModel, TrainReport), SaeError> {
    config.validate()?;
    if train_data.rows() == 0 || test_data.rows() == 0 {
        return Err(SaeError::EmptyData);
    }
    if test_data.cols() != config.input_dim {
        return Err(SaeError::DimensionMismatch {
            expected: config.input_dim,
            found: test_data.cols(),
        });
    }
    let mut model = SaeModel::init_from_data(config.clone(), train_data)?;
    let n = train_data.rows();
    let d = config.input_dim;
    let dict = config.dict_size;
    let adam = AdamParams::default();
    let mut st_we = AdamState::new(dict, d);
    let mut st_be = AdamState::new(1, dict);
    let mut st_wd = AdamState::new(d, dict);
    let mut st_bd = AdamState::new(1, d);

    // Shuffle stream is separate from the init stream so dictionary
    // size does not perturb the batch order.
    let mut shuffle_rng = Rng::new(config.seed.wrapping_add(0x51_AE_5EED));
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut batch = Matrix::zeros(config.batch_size.min(n), d);

    let mut best_mse = f64::INFINITY;
    let mut best_snapshot = Snapshot::of(&model);
    let mut epochs_without_improvement = 0usize;
    let mut epochs_run = 0usize;

    'epochs: for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size.min(n)) {
            if batch.rows() != chunk.len() {
                batch = Matrix::zeros(chunk.len(), d);
            }
            for (row, &src) in chunk.iter().enumerate() {
                batch.row_mut(row).copy_from_slice(train_data.row(src as usize));
            }
            let pre = model.preactivations(&batch)?;
            let active = select_active(config.activation_rule, config.k, &pre);
            let mut grads = gradients_from_pre(&model, &batch, &pre, &active);
            project_decoder_gradient(&model.decoder_weights, &mut grads.decoder_weights);

            adam_step(
                &mut model.encoder_weights,
                &grads.encoder_weights,
                &mut st_we,
                config.learning_rate,
                &adam,
            )?;
            let mut be = vec_as_matrix(&model.encoder_bias);
            adam_step(&mut be, &vec_as_matrix(&grads.encoder_bias), &mut st_be, config.learning_rate, &adam)?;
            model.encoder_bias.copy_from_slice(be.data());
            adam_step(
                &mut model.decoder_weights,
                &grads.decoder_weights,
                &mut st_wd,
                config.learning_rate,
                &adam,
            )?;
            let mut bd = vec_as_matrix(&model.decoder_bias);
            adam_step(&mut bd, &vec_as_matrix(&grads.decoder_bias), &mut st_bd, config.learning_rate, &adam)?;
            model.decoder_bias.copy_from_slice(bd.data());

            renormalize_decoder_columns(&mut model.decoder_weights);
        }

        let test_mse = mse(test_data, &model.reconstruct(test_data)?)?;
        if !test_mse.is_finite() {
            return Err(SaeError::TrainingDiverged { epoch });
        }
        if test_mse < best_mse {
            best_mse = test_mse;
            best_snapshot = Snapshot::of(&model);
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= config.patience {
                break 'epochs;
            }
        }
        if let Some(target) = config.target_test_mse {
            if test_mse < target {
                break 'epochs;
            }
        }
    }

    best_snapshot.restore(&mut model);
    let final_train_mse = mse(train_data, &model.reconstruct(train_data)?)?;
    let z_test = model.encode(test_data)?;
    let mean_l0 = z_test
        .iter_rows()
        .map(|row| row.iter().filter(|&&v| v != 0.0).count())
        .sum::<usize>() as f64
        / test_data.rows() as f64;
    let dead = model.dead_features(test_data, DEAD_FEATURE_THRESHOLD)?;
    let report = TrainReport {
        final_train_mse,
        final_test_mse: best_mse,
        mean_l0,
        alive_features: dict - dead,
        epochs_run,
    };
    Ok((model, report))
}

/// Gradient computation sharing the already-computed pre-activations;
/// identical math to [`masked_gradients`].
fn gradients_from_pre(
    model: &SaeModel,
    x: &Matrix,
    pre: &Matrix,
    active: &ActiveSet,
) -> Gradients {
    let (n, d) = x.shape();
    let dict = model.dict_size();
    let wd = model.decoder_weights.data();
    let we = model.encoder_weights.data();
    let l1_rate = if model.config.activation_rule == ActivationRule::ReluL1 {
        model.config.l1_coefficient / n as f64
    } else {
        0.0
    };

    let scale = 2.0 / (n * d) as f64;
    let mut g = Matrix::zeros(n, d);
    for i in 0..n {
        let out = g.row_mut(i);
        out.copy_from_slice(&model.decoder_bias);
        for &j in active.row(i) {
            let val = pre.get(i, j as usize);
            let col = j as usize;
            for (r, o) in out.iter_mut().enumerate() {
                *o += val * wd[r * dict + col];
            }
        }
        for (o, &xv) in out.iter_mut().zip(x.row(i)) {
            *o = (*o - xv) * scale;
        }
    }

    let mut g_wd = Matrix::zeros(d, dict);
    let mut g_we = Matrix::zeros(dict, d);
    let mut g_be = vec![0.0f64; dict];
    let mut g_bd = vec![0.0f64; d];
    for i in 0..n {
        for (acc, &gv) in g_bd.iter_mut().zip(g.row(i)) {
            *acc += gv;
        }
    }
    let g_wd_data = g_wd.data_mut();
    let g_we_data = g_we.data_mut();
    for i in 0..n {
        let g_row = g.row(i);
        let x_row = x.row(i);
        for &j in active.row(i) {
            let col = j as usize;
            let z_val = pre.get(i, col);
            let mut dz = l1_rate;
            for (r, &gv) in g_row.iter().enumerate() {
                dz += gv * wd[r * dict + col];
            }
            for (r, &gv) in g_row.iter().enumerate() {
                g_wd_data[r * dict + col] += z_val * gv;
            }
            let we_row = &we[col * d..(col + 1) * d];
            let g_we_row = &mut g_we_data[col * d..(col + 1) * d];
            for ((gw, &xv), &b) in g_we_row.iter_mut().zip(x_row).zip(&model.decoder_bias) {
                *gw += dz * (xv - b);
            }
            for (acc, &w) in g_bd.iter_mut().zip(we_row) {
                *acc -= dz * w;
            }
            g_be[col] += dz;
        }
    }

    Gradients {
        encoder_weights: g_we,
        encoder_bias: g_be,
        decoder_weights: g_wd,
        decoder_bias: g_bd,
    }
}
