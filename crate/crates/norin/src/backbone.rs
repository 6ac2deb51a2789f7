//! A minimal differentiable forecasting backbone.
//!
//! The model is a per-channel linear map `out[i,:,c] = W z_in[i,:,c] + b`
//! with the `(H, T)` weight shared across channels (optionally one per
//! channel). Training composes normalizer-forward, backbone, and
//! normalizer-inverse per the reversible template and minimizes MSE in the
//! original space, so gradients flow through the inverse map's analytic
//! derivative. In joint mode the S_U shape pair receives gradients through
//! both the forward and inverse maps; everything else keeps it frozen.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::normalize::{InstanceStats, Normalizer};
use crate::series::{make_windows, mae, mse, MultiSeries, Part, SplitSpec, WindowBatch};
use crate::{Error, Result};

/// Linear forecaster; `weights[g]` is `(H, T)`, `biases[g]` is `(H)`.
/// One group when weight-tied across channels, `C` groups otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBackbone {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    per_channel: bool,
}

impl LinearBackbone {
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>, per_channel: bool) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Config("backbone needs matching weight/bias groups".into()));
        }
        let (h, t) = weights[0].dim();
        for (w, b) in weights.iter().zip(&biases) {
            if w.dim() != (h, t) || b.len() != h {
                return Err(Error::Config("backbone groups must share dimensions".into()));
            }
        }
        Ok(Self {
            weights,
            biases,
            per_channel,
        })
    }

    pub fn lookback_len(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn horizon_len(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn groups(&self) -> usize {
        self.weights.len()
    }

    pub fn is_per_channel(&self) -> bool {
        self.per_channel
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    fn group_of(&self, channel: usize) -> usize {
        if self.per_channel {
            channel
        } else {
            0
        }
    }
}

/// Initializes weights uniformly in `[-1/sqrt(T), 1/sqrt(T)]` and biases to
/// zero, deterministically per seed.
pub fn init_backbone(
    lookback: usize,
    horizon: usize,
    channels: usize,
    seed: u64,
    per_channel: bool,
) -> Result<LinearBackbone> {
    if lookback == 0 || horizon == 0 || channels == 0 {
        return Err(Error::Config("backbone dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (lookback as f64).sqrt();
    let groups = if per_channel { channels } else { 1 };
    let mut weights = Vec::with_capacity(groups);
    let mut biases = Vec::with_capacity(groups);
    for _ in 0..groups {
        let w = Array2::from_shape_fn((horizon, lookback), |_| rng.random_range(-bound..=bound));
        weights.push(w);
        biases.push(Array1::zeros(horizon));
    }
    LinearBackbone::from_parts(weights, biases, per_channel)
}

/// Applies the backbone to a normalized batch `(N, T, C) -> (N, H, C)`.
pub fn forward(backbone: &LinearBackbone, z_in: &ArrayView3<f64>) -> Result<Array3<f64>> {
    let (n, t, channels) = z_in.dim();
    if t != backbone.lookback_len() {
        return Err(Error::ShapeMismatch(format!(
            "backbone expects lookback {}, got {t}",
            backbone.lookback_len()
        )));
    }
    if backbone.per_channel && channels != backbone.groups() {
        return Err(Error::ShapeMismatch(format!(
            "per-channel backbone has {} groups, data has {channels}",
            backbone.groups()
        )));
    }
    let h = backbone.horizon_len();
    let mut out = Array3::zeros((n, h, channels));
    for c in 0..channels {
        let g = backbone.group_of(c);
        let zc = z_in.index_axis(Axis(2), c);
        let oc = zc.dot(&backbone.weights[g].t());
        let mut out_c = out.index_axis_mut(Axis(2), c);
        for i in 0..n {
            for k in 0..h {
                out_c[[i, k]] = oc[[i, k]] + backbone.biases[g][k];
            }
        }
    }
    Ok(out)
}

/// Gradients of the original-space MSE with respect to every trainable
/// tensor, plus the loss value.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub grad_w: Vec<Array2<f64>>,
    pub grad_b: Vec<Array1<f64>>,
    /// Present when the z-score post-affine is enabled.
    pub grad_gamma: Option<Vec<f64>>,
    pub grad_beta: Option<Vec<f64>>,
    /// Present in joint mode with the S_U normalizer; per channel, through
    /// both the forward and inverse maps.
    pub grad_delta: Option<Vec<f64>>,
    pub grad_epsilon: Option<Vec<f64>>,
}

/// Forward pass, original-space loss, and backward pass for one batch.
///
/// `stats` must come from the batch's own lookbacks.
pub fn loss_and_grads(
    backbone: &LinearBackbone,
    batch: &WindowBatch,
    normalizer: &Normalizer,
    stats: Option<&InstanceStats>,
    joint: bool,
) -> Result<LossGrads> {
    let lookbacks = batch.lookbacks.view();
    let horizons = batch.horizons.view();
    let (n, t, channels) = lookbacks.dim();
    let h = batch.horizon_len();

    let z_in = normalizer.forward(&lookbacks, stats)?;
    let out = forward(backbone, &z_in.view())?;
    let y_hat = normalizer.inverse(&out.view(), stats)?;
    let loss = mse(&y_hat.view(), &horizons)?;

    // dL/dy_hat, then through the inverse map to dL/dout
    let count = (n * h * channels) as f64;
    let mut g_out = Array3::zeros((n, h, channels));
    let mut g_yhat = Array3::zeros((n, h, channels));
    for i in 0..n {
        for c in 0..channels {
            let dinv = match (normalizer, stats) {
                (Normalizer::Identity, _) => DInv::Const(1.0),
                (Normalizer::RevIn { post }, Some(s)) => {
                    let g = if post.enabled { post.gamma[c] } else { 1.0 };
                    DInv::Const(s.scale[[i, c]] / g)
                }
                (Normalizer::NoRin { shape }, Some(s)) => DInv::Jsu {
                    scale: s.scale[[i, c]],
                    delta: shape.delta()[c],
                    eps: shape.epsilon()[c],
                },
                _ => return Err(Error::Config("normalizer requires instance stats".into())),
            };
            for k in 0..h {
                let r = 2.0 * (y_hat[[i, k, c]] - horizons[[i, k, c]]) / count;
                g_yhat[[i, k, c]] = r;
                g_out[[i, k, c]] = r * dinv.at(out[[i, k, c]]);
            }
        }
    }

    // parameter gradients per weight group
    let groups = backbone.groups();
    let mut grad_w: Vec<Array2<f64>> = (0..groups).map(|_| Array2::zeros((h, t))).collect();
    let mut grad_b: Vec<Array1<f64>> = (0..groups).map(|_| Array1::zeros(h)).collect();
    for c in 0..channels {
        let g = backbone.group_of(c);
        let gc = g_out.index_axis(Axis(2), c);
        let zc = z_in.index_axis(Axis(2), c);
        grad_w[g] = &grad_w[g] + &gc.t().dot(&zc);
        grad_b[g] = &grad_b[g] + &gc.sum_axis(Axis(0));
    }

    let needs_post = matches!(normalizer, Normalizer::RevIn { post } if post.enabled);
    let needs_shape = joint && matches!(normalizer, Normalizer::NoRin { .. });
    let (mut grad_gamma, mut grad_beta, mut grad_delta, mut grad_epsilon) = (None, None, None, None);

    if needs_post || needs_shape {
        // dL/dz_in = g_out pushed back through the backbone
        let mut g_zin = Array3::zeros((n, t, channels));
        for c in 0..channels {
            let g = backbone.group_of(c);
            let gc = g_out.index_axis(Axis(2), c);
            let back = gc.dot(&backbone.weights[g]);
            g_zin.index_axis_mut(Axis(2), c).assign(&back);
        }

        match (normalizer, stats) {
            (Normalizer::RevIn { post }, Some(s)) if post.enabled => {
                let mut dg = vec![0.0; channels];
                let mut db = vec![0.0; channels];
                for c in 0..channels {
                    let (gamma, beta) = (post.gamma[c], post.beta[c]);
                    for i in 0..n {
                        let scale = s.scale[[i, c]];
                        for k in 0..h {
                            // inverse path: y = loc + scale*(o - beta)/gamma
                            let o = out[[i, k, c]];
                            dg[c] += g_yhat[[i, k, c]] * (-scale * (o - beta) / (gamma * gamma));
                            db[c] += g_yhat[[i, k, c]] * (-scale / gamma);
                        }
                        let loc = s.loc[[i, c]];
                        for k in 0..t {
                            // forward path: z = gamma*(x - loc)/scale + beta
                            let x = lookbacks[[i, k, c]];
                            dg[c] += g_zin[[i, k, c]] * (x - loc) / scale;
                            db[c] += g_zin[[i, k, c]];
                        }
                    }
                }
                grad_gamma = Some(dg);
                grad_beta = Some(db);
            }
            (Normalizer::NoRin { shape }, Some(s)) if needs_shape => {
                let mut dd = vec![0.0; channels];
                let mut de = vec![0.0; channels];
                for c in 0..channels {
                    let (delta, eps) = (shape.delta()[c], shape.epsilon()[c]);
                    for i in 0..n {
                        let scale = s.scale[[i, c]];
                        for k in 0..h {
                            // inverse path: y = loc + scale*sinh((o - eps)/delta)
                            let centered = out[[i, k, c]] - eps;
                            let w = centered / delta;
                            let cw = w.cosh();
                            dd[c] += g_yhat[[i, k, c]] * (-scale * cw * centered / (delta * delta));
                            de[c] += g_yhat[[i, k, c]] * (-scale * cw / delta);
                        }
                        for k in 0..t {
                            // forward path: z = eps + delta*asinh(u); asinh(u)
                            // recovered from z itself
                            let asinh_u = (z_in[[i, k, c]] - eps) / delta;
                            dd[c] += g_zin[[i, k, c]] * asinh_u;
                            de[c] += g_zin[[i, k, c]];
                        }
                    }
                }
                grad_delta = Some(dd);
                grad_epsilon = Some(de);
            }
            _ => {}
        }
    }

    Ok(LossGrads {
        loss,
        grad_w,
        grad_b,
        grad_gamma,
        grad_beta,
        grad_delta,
        grad_epsilon,
    })
}

enum DInv {
    Const(f64),
    Jsu { scale: f64, delta: f64, eps: f64 },
}

impl DInv {
    fn at(&self, z: f64) -> f64 {
        match self {
            DInv::Const(v) => *v,
            DInv::Jsu { scale, delta, eps } => scale * ((z - eps) / delta).cosh() / delta,
        }
    }
}

/// AdamW hyperparameters for one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Decoupled-weight-decay Adam update at (1-based) step `t`.
pub fn adamw_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: usize,
    cfg: &OptimConfig,
) {
    debug_assert!(t >= 1);
    debug_assert!(param.len() == grad.len() && grad.len() == m.len() && m.len() == v.len());
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * param[i]);
    }
}

/// Moment buffers for one tensor.
#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Training configuration; `early_stop_patience = 0` disables early stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub joint_shape_training: bool,
    pub shape_lr: f64,
    pub per_channel_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 24,
            epochs: 40,
            batch_size: 128,
            lr: 1e-2,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            early_stop_patience: 5,
            joint_shape_training: false,
            shape_lr: 1e-2,
            per_channel_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0,1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::Config("lookback and horizon must be positive".into()));
        }
        if self.joint_shape_training && !(self.shape_lr >= 0.0) {
            return Err(Error::Config("shape_lr must be non-negative".into()));
        }
        Ok(())
    }

    fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    fn shape_optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.shape_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: 0.0,
        }
    }
}

/// Deterministic fingerprint of a run configuration (FNV-1a over the
/// serialized config and normalizer descriptor).
pub fn config_fingerprint(config: &TrainConfig, normalizer: &Normalizer) -> String {
    let mut text = serde_json::to_string(config).unwrap_or_default();
    text.push('|');
    text.push_str(normalizer.kind().name());
    if let Normalizer::NoRin { shape } = normalizer {
        text.push_str(&format!("|{:?}|{:?}|{}", shape.delta(), shape.epsilon(), shape.is_shared()));
    }
    if let Normalizer::RevIn { post } = normalizer {
        text.push_str(&format!("|{:?}|{:?}|{}", post.gamma, post.beta, post.enabled));
    }
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// One per-epoch record of the shape pair (joint mode only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSnapshot {
    pub delta: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// True when the delta floor clamp fired during the epoch.
    pub clamped: bool,
}

/// Metrics and traces of one completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_fingerprint: String,
    pub seed: u64,
    pub train_mse: f64,
    pub train_mae: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub test_mse: f64,
    pub test_mae: f64,
    /// Best validation MSE over epochs (the outer-search objective).
    pub best_val_mse: f64,
    pub epochs_run: usize,
    pub val_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_shape: Option<ShapeSnapshot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shape_trajectory: Vec<ShapeSnapshot>,
}

/// A finished run with its trained state.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub result: RunResult,
    pub backbone: LinearBackbone,
    pub normalizer: Normalizer,
}

/// Flat-array checkpoint with a small header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneCheckpoint {
    pub lookback: usize,
    pub horizon: usize,
    pub per_channel: bool,
    pub seed: u64,
    pub config_fingerprint: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl BackboneCheckpoint {
    pub fn from_backbone(b: &LinearBackbone, seed: u64, fingerprint: &str) -> Self {
        Self {
            lookback: b.lookback_len(),
            horizon: b.horizon_len(),
            per_channel: b.is_per_channel(),
            seed,
            config_fingerprint: fingerprint.to_string(),
            weights: b.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: b.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn to_backbone(&self) -> Result<LinearBackbone> {
        let mut weights = Vec::with_capacity(self.weights.len());
        for flat in &self.weights {
            weights.push(
                Array2::from_shape_vec((self.horizon, self.lookback), flat.clone())
                    .map_err(|e| Error::Config(format!("checkpoint weight shape: {e}")))?,
            );
        }
        let biases = self.biases.iter().map(|b| Array1::from_vec(b.clone())).collect();
        LinearBackbone::from_parts(weights, biases, self.per_channel)
    }
}

fn evaluate(
    backbone: &LinearBackbone,
    normalizer: &Normalizer,
    batch: &WindowBatch,
) -> Result<(f64, f64)> {
    let stats = normalizer.stats(&batch.lookbacks.view());
    let z_in = normalizer.forward(&batch.lookbacks.view(), stats.as_ref())?;
    let out = forward(backbone, &z_in.view())?;
    let y_hat = normalizer.inverse(&out.view(), stats.as_ref())?;
    Ok((
        mse(&y_hat.view(), &batch.horizons.view())?,
        mae(&y_hat.view(), &batch.horizons.view())?,
    ))
}

const SHAPE_DELTA_FLOOR: f64 = 1e-3;

struct Trainable {
    backbone: LinearBackbone,
    normalizer: Normalizer,
}

impl Trainable {
    fn snapshot(&self) -> (LinearBackbone, Normalizer) {
        (self.backbone.clone(), self.normalizer.clone())
    }
}

/// Trains the backbone (and any learnable normalizer parameters) on the
/// train split with early stopping on validation MSE, restoring the
/// best-validation parameters before computing final metrics.
///
/// Fully deterministic per `(config, seed)`.
pub fn train(
    series: &MultiSeries,
    split: &SplitSpec,
    normalizer: &Normalizer,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.joint_shape_training && !matches!(normalizer, Normalizer::NoRin { .. }) {
        return Err(Error::Config(
            "joint shape training requires the S_U normalizer".into(),
        ));
    }
    let train_batch = make_windows(series, split, Part::Train, config.lookback, config.horizon)?;
    let val_batch = make_windows(series, split, Part::Val, config.lookback, config.horizon)?;
    let test_batch = make_windows(series, split, Part::Test, config.lookback, config.horizon)?;
    let channels = series.channels();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let backbone = init_backbone(
        config.lookback,
        config.horizon,
        channels,
        config.seed,
        config.per_channel_weights,
    )?;
    let mut state = Trainable {
        backbone,
        normalizer: normalizer.clone(),
    };
    let fingerprint = config_fingerprint(config, normalizer);

    let groups = state.backbone.groups();
    let mut w_states: Vec<AdamState> = state
        .backbone
        .weights
        .iter()
        .map(|w| AdamState::new(w.len()))
        .collect();
    let mut b_states: Vec<AdamState> = state
        .backbone
        .biases
        .iter()
        .map(|b| AdamState::new(b.len()))
        .collect();
    let mut gamma_state = AdamState::new(channels);
    let mut beta_state = AdamState::new(channels);
    let shape_dims = if matches!(normalizer, Normalizer::NoRin { shape } if shape.is_shared()) {
        1
    } else {
        channels
    };
    let mut delta_state = AdamState::new(shape_dims);
    let mut eps_state = AdamState::new(shape_dims);

    let optim = config.optim();
    let shape_optim = config.shape_optim();

    let initial_shape = match (&state.normalizer, config.joint_shape_training) {
        (Normalizer::NoRin { shape }, true) => Some(ShapeSnapshot {
            delta: shape.delta().to_vec(),
            epsilon: shape.epsilon().to_vec(),
            clamped: false,
        }),
        _ => None,
    };

    let n_train = train_batch.num_windows();
    let mut indices: Vec<usize> = (0..n_train).collect();
    let mut step = 0usize;
    let mut val_trace = Vec::with_capacity(config.epochs);
    let mut shape_trajectory = Vec::new();
    let mut best: Option<(f64, (LinearBackbone, Normalizer))> = None;
    let mut stale_epochs = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_clamped = false;
        for chunk in indices.chunks(config.batch_size) {
            let batch = train_batch.select(chunk);
            let stats = state.normalizer.stats(&batch.lookbacks.view());
            let grads = loss_and_grads(
                &state.backbone,
                &batch,
                &state.normalizer,
                stats.as_ref(),
                config.joint_shape_training,
            )?;
            if !grads.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            step += 1;
            for g in 0..groups {
                let w = state.backbone.weights[g].as_slice_mut().expect("contiguous");
                let gw = grads.grad_w[g].as_slice().expect("contiguous");
                let ws = &mut w_states[g];
                adamw_step(w, gw, &mut ws.m, &mut ws.v, step, &optim);
                let b = state.backbone.biases[g].as_slice_mut().expect("contiguous");
                let gb = grads.grad_b[g].as_slice().expect("contiguous");
                let bs = &mut b_states[g];
                adamw_step(b, gb, &mut bs.m, &mut bs.v, step, &optim);
            }
            if let (Normalizer::RevIn { post }, Some(gg), Some(gb)) =
                (&mut state.normalizer, &grads.grad_gamma, &grads.grad_beta)
            {
                adamw_step(&mut post.gamma, gg, &mut gamma_state.m, &mut gamma_state.v, step, &optim);
                adamw_step(&mut post.beta, gb, &mut beta_state.m, &mut beta_state.v, step, &optim);
            }
            if let (Normalizer::NoRin { shape }, Some(gd), Some(ge)) =
                (&mut state.normalizer, &grads.grad_delta, &grads.grad_epsilon)
            {
                let mut delta = shape.delta().to_vec();
                let mut epsilon = shape.epsilon().to_vec();
                if shape.is_shared() {
                    let mut d0 = [delta[0]];
                    let mut e0 = [epsilon[0]];
                    let gd_sum = [gd.iter().sum::<f64>()];
                    let ge_sum = [ge.iter().sum::<f64>()];
                    adamw_step(&mut d0, &gd_sum, &mut delta_state.m, &mut delta_state.v, step, &shape_optim);
                    adamw_step(&mut e0, &ge_sum, &mut eps_state.m, &mut eps_state.v, step, &shape_optim);
                    delta.fill(d0[0]);
                    epsilon.fill(e0[0]);
                } else {
                    adamw_step(&mut delta, gd, &mut delta_state.m, &mut delta_state.v, step, &shape_optim);
                    adamw_step(&mut epsilon, ge, &mut eps_state.m, &mut eps_state.v, step, &shape_optim);
                }
                for d in delta.iter_mut() {
                    if *d < SHAPE_DELTA_FLOOR {
                        *d = SHAPE_DELTA_FLOOR;
                        epoch_clamped = true;
                    }
                }
                shape.set(delta, epsilon)?;
            }
        }
        epochs_run = epoch + 1;

        let (val_mse, _) = evaluate(&state.backbone, &state.normalizer, &val_batch)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        val_trace.push(val_mse);
        if let Normalizer::NoRin { shape } = &state.normalizer {
            if config.joint_shape_training {
                shape_trajectory.push(ShapeSnapshot {
                    delta: shape.delta().to_vec(),
                    epsilon: shape.epsilon().to_vec(),
                    clamped: epoch_clamped,
                });
            }
        }

        let improved = best.as_ref().map_or(true, |(b, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, state.snapshot()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if config.early_stop_patience > 0 && stale_epochs >= config.early_stop_patience {
                break;
            }
        }
    }

    let best_val_mse = best.as_ref().map(|(b, _)| *b);
    if let Some((_, (bb, nn))) = best {
        state.backbone = bb;
        state.normalizer = nn;
    }

    let (train_mse, train_mae) = evaluate(&state.backbone, &state.normalizer, &train_batch)?;
    let (val_mse, val_mae) = evaluate(&state.backbone, &state.normalizer, &val_batch)?;
    let (test_mse, test_mae) = evaluate(&state.backbone, &state.normalizer, &test_batch)?;

    let result = RunResult {
        config_fingerprint: fingerprint,
        seed: config.seed,
        train_mse,
        train_mae,
        val_mse,
        val_mae,
        test_mse,
        test_mae,
        best_val_mse: best_val_mse.unwrap_or(val_mse),
        epochs_run,
        val_trace,
        initial_shape,
        shape_trajectory,
    };
    Ok(TrainOutcome {
        result,
        backbone: state.backbone,
        normalizer: state.normalizer,
    })
}
