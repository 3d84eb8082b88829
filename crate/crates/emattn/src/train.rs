//! Toy training harness: a small convolutional classifier with an optional
//! attention module on its trunk, SGD with momentum and weight decay, and a
//! deterministic training loop that reports per-step losses and per-epoch
//! accuracies. Small enough to run in seconds, real enough to show a module
//! either helps or does not.

use crate::attention::{
    ca_forward, ema_forward, se_forward, CaParams, CaVars, EmaParams, EmaVariant, EmaVars,
    SeParams, SeVars,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Trunk width of the toy network; attention modules attach at this width.
pub const TOY_CHANNELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionConfig {
    None,
    Ema { groups: usize, variant: EmaVariant },
    Ca { reduction: usize },
    Se { reduction: usize },
}

impl AttentionConfig {
    pub fn label(&self) -> String {
        match self {
            AttentionConfig::None => "none".to_string(),
            AttentionConfig::Ema { groups, variant: EmaVariant::Full } => format!("ema(g={groups})"),
            AttentionConfig::Ema { groups, variant: EmaVariant::NoCrossSpatial } => {
                format!("ema_no(g={groups})")
            }
            AttentionConfig::Ca { reduction } => format!("ca(r={reduction})"),
            AttentionConfig::Se { reduction } => format!("se(r={reduction})"),
        }
    }
}

#[derive(Clone, Debug)]
enum ToyAttention {
    None,
    Ema(EmaParams, EmaVariant),
    Ca(CaParams),
    Se(SeParams),
}

#[derive(Clone, Debug)]
pub struct ToyNet {
    conv1_w: Tensor,
    conv1_b: Tensor,
    attention: ToyAttention,
    conv2_w: Tensor,
    conv2_b: Tensor,
    fc_w: Tensor,
    fc_b: Tensor,
    classes: usize,
}

enum ToyAttnVars {
    Ema(EmaVars, EmaVariant),
    Ca(CaVars),
    Se(SeVars),
}

pub struct ToyVars {
    conv1_w: VarId,
    conv1_b: VarId,
    attention: Option<ToyAttnVars>,
    conv2_w: VarId,
    conv2_b: VarId,
    fc_w: VarId,
    fc_b: VarId,
    classes: usize,
}

fn conv_uniform(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> (Tensor, Tensor) {
    let a = (1.0 / (cin * k * k) as f64).sqrt();
    let w = Tensor::from_fn(&[cout, cin, k, k], |_| rng.gen_range(-a..a));
    (w, Tensor::zeros(&[cout]))
}

impl ToyNet {
    /// conv 3->16 (3x3, pad 1), rectifier, optional attention at width 16,
    /// conv 16->16, rectifier, global average pool, linear head.
    pub fn build(attention: AttentionConfig, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (conv1_w, conv1_b) = conv_uniform(&mut rng, TOY_CHANNELS, 3, 3);
        let (conv2_w, conv2_b) = conv_uniform(&mut rng, TOY_CHANNELS, TOY_CHANNELS, 3);
        let (fc_w, fc_b) = conv_uniform(&mut rng, classes, TOY_CHANNELS, 1);
        // Attention parameters draw from a seed offset so toggling the module
        // does not reshuffle the trunk initialization.
        let attention = match attention {
            AttentionConfig::None => ToyAttention::None,
            AttentionConfig::Ema { groups, variant } => {
                ToyAttention::Ema(EmaParams::init(TOY_CHANNELS, groups, seed ^ 0xA77E)?, variant)
            }
            AttentionConfig::Ca { reduction } => {
                ToyAttention::Ca(CaParams::init(TOY_CHANNELS, reduction, seed ^ 0xA77E)?)
            }
            AttentionConfig::Se { reduction } => {
                ToyAttention::Se(SeParams::init(TOY_CHANNELS, reduction, seed ^ 0xA77E)?)
            }
        };
        Ok(ToyNet { conv1_w, conv1_b, attention, conv2_w, conv2_b, fc_w, fc_b, classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn attention_label(&self) -> String {
        match &self.attention {
            ToyAttention::None => "none".to_string(),
            ToyAttention::Ema(p, EmaVariant::Full) => format!("ema(g={})", p.groups()),
            ToyAttention::Ema(p, EmaVariant::NoCrossSpatial) => format!("ema_no(g={})", p.groups()),
            ToyAttention::Ca(p) => format!("ca(r={})", p.reduction()),
            ToyAttention::Se(p) => format!("se(r={})", p.reduction()),
        }
    }

    /// Every trainable buffer, in the fixed order `bind` pushes leaves.
    pub fn buffers(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.conv1_w, &self.conv1_b];
        match &self.attention {
            ToyAttention::None => {}
            ToyAttention::Ema(p, _) => out.extend(p.buffers().into_iter().map(|(_, t)| t)),
            ToyAttention::Ca(p) => out.extend(p.buffers().into_iter().map(|(_, t)| t)),
            ToyAttention::Se(p) => out.extend(p.buffers().into_iter().map(|(_, t)| t)),
        }
        out.extend([&self.conv2_w, &self.conv2_b, &self.fc_w, &self.fc_b]);
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.conv1_w, &mut self.conv1_b];
        // Attention params have no buffers_mut; rebuild the same order by
        // matching the enum inline.
        match &mut self.attention {
            ToyAttention::None => {}
            ToyAttention::Ema(p, _) => out.extend(p.buffers_mut()),
            ToyAttention::Ca(p) => out.extend(p.buffers_mut()),
            ToyAttention::Se(p) => out.extend(p.buffers_mut()),
        }
        out.extend([&mut self.conv2_w, &mut self.conv2_b, &mut self.fc_w, &mut self.fc_b]);
        out
    }

    pub fn param_count(&self) -> u64 {
        self.buffers().iter().map(|t| t.numel() as u64).sum()
    }

    /// FNV-1a over every parameter byte in buffer order; the fingerprint the
    /// train report carries for reproducibility checks.
    pub fn param_checksum(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for buf in self.buffers() {
            for v in buf.data() {
                for b in v.to_le_bytes() {
                    hash ^= b as u64;
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        format!("{hash:016x}")
    }

    pub fn bind(&self, tape: &mut Tape) -> ToyVars {
        let conv1_w = tape.leaf(self.conv1_w.clone());
        let conv1_b = tape.leaf(self.conv1_b.clone());
        let attention = match &self.attention {
            ToyAttention::None => None,
            ToyAttention::Ema(p, v) => Some(ToyAttnVars::Ema(p.bind(tape), *v)),
            ToyAttention::Ca(p) => Some(ToyAttnVars::Ca(p.bind(tape))),
            ToyAttention::Se(p) => Some(ToyAttnVars::Se(p.bind(tape))),
        };
        let conv2_w = tape.leaf(self.conv2_w.clone());
        let conv2_b = tape.leaf(self.conv2_b.clone());
        let fc_w = tape.leaf(self.fc_w.clone());
        let fc_b = tape.leaf(self.fc_b.clone());
        ToyVars {
            conv1_w,
            conv1_b,
            attention,
            conv2_w,
            conv2_b,
            fc_w,
            fc_b,
            classes: self.classes,
        }
    }

    /// Class logits (B, classes) for a batch (B, 3, H, W).
    pub fn forward_logits(&self, tape: &mut Tape, vars: &ToyVars, x: VarId) -> Result<VarId> {
        let c1 = tape.conv2d(x, vars.conv1_w, vars.conv1_b, 1, 1)?;
        let h1 = tape.relu(c1)?;
        let trunk = match &vars.attention {
            None => h1,
            Some(ToyAttnVars::Ema(v, variant)) => ema_forward(tape, v, *variant, h1)?,
            Some(ToyAttnVars::Ca(v)) => ca_forward(tape, v, h1)?,
            Some(ToyAttnVars::Se(v)) => se_forward(tape, v, h1)?,
        };
        let c2 = tape.conv2d(trunk, vars.conv2_w, vars.conv2_b, 1, 1)?;
        let h2 = tape.relu(c2)?;
        let pooled = tape.gap2d(h2)?;
        let out = tape.conv2d(pooled, vars.fc_w, vars.fc_b, 1, 0)?;
        let b = tape.value(x).dims()[0];
        tape.reshape(out, &[b, vars.classes])
    }

    /// Fraction of samples whose argmax logit matches the label.
    pub fn accuracy(&self, data: &Dataset, limit: Option<usize>) -> Result<f64> {
        let n = limit.map_or(data.len(), |l| l.min(data.len()));
        if n == 0 {
            return Err(Error::Config("cannot score an empty dataset".into()));
        }
        let mut correct = 0usize;
        let mut start = 0usize;
        while start < n {
            let end = (start + 256).min(n);
            let indices: Vec<usize> = (start..end).collect();
            let (batch, labels) = data.select(&indices)?;
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape);
            let xv = tape.leaf(batch);
            let logits = self.forward_logits(&mut tape, &vars, xv)?;
            let lv = tape.value(logits);
            for (row, &label) in lv.data().chunks_exact(self.classes).zip(&labels) {
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                correct += usize::from(argmax == label);
            }
            start = end;
        }
        Ok(correct as f64 / n as f64)
    }
}

/// One SGD-with-momentum update: v <- mu*v + (g + lambda*theta),
/// theta <- theta - lr*v. Weight decay folds into the gradient before the
/// momentum buffer.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    velocity: &mut [Tensor],
    grads: &[Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != velocity.len() || params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} params, {} velocities, {} grads",
            params.len(),
            velocity.len(),
            grads.len()
        )));
    }
    for ((theta, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        if theta.dims() != v.dims() || theta.dims() != g.dims() {
            return Err(Error::Shape(format!(
                "sgd shapes disagree: param {}, velocity {}, grad {}",
                theta.shape(),
                v.shape(),
                g.shape()
            )));
        }
        let td = theta.data_mut();
        let vd = v.data_mut();
        let gd = g.data();
        for i in 0..td.len() {
            vd[i] = momentum * vd[i] + (gd[i] + weight_decay * td[i]);
            td[i] -= lr * vd[i];
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 4e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub attention: String,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub param_count: u64,
    /// Loss at the very first step, before any update.
    pub initial_loss: Option<f64>,
    /// Mean loss over the final (possibly partial) epoch.
    pub final_epoch_mean_loss: Option<f64>,
    pub initial_val_accuracy: f64,
    pub final_val_accuracy: f64,
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub param_checksum: String,
}

/// How many leading train samples each per-epoch train-accuracy probe scores.
const TRAIN_ACC_PROBE: usize = 500;

pub fn train_toy(
    net: &mut ToyNet,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.classes != net.classes() || val.classes != net.classes() {
        return Err(Error::Config(format!(
            "class counts disagree: train {}, val {}, model {}",
            train.classes,
            val.classes,
            net.classes()
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("train and validation sets must be non-empty".into()));
    }

    let initial_val_accuracy = net.accuracy(val, None)?;
    let mut velocity: Vec<Tensor> =
        net.buffers().iter().map(|t| Tensor::zeros(t.dims())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.batch);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;

    let mut losses: Vec<f64> = Vec::with_capacity(cfg.steps);
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut epoch_losses: Vec<f64> = Vec::new();

    for step in 0..cfg.steps {
        if cursor >= order.len() {
            // Fresh epoch: deterministic reshuffle.
            order = (0..train.len()).collect();
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            cursor = 0;
        }
        let end = (cursor + cfg.batch).min(order.len());
        let indices = &order[cursor..end];
        cursor = end;

        let (batch, labels) = train.select(indices)?;
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let leaf_ids = collect_leaf_ids(&vars);
        let xv = tape.leaf(batch);
        let logits = net.forward_logits(&mut tape, &vars, xv)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became non-finite at step {step}"
            )));
        }
        losses.push(loss_value);
        epoch_losses.push(loss_value);

        let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        let gvec: Vec<Tensor> = {
            let bufs = net.buffers();
            leaf_ids
                .iter()
                .zip(&bufs)
                .map(|(&id, buf)| {
                    grads
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(buf.dims()))
                })
                .collect()
        };
        sgd_step(
            &mut net.buffers_mut(),
            &mut velocity,
            &gvec,
            cfg.lr,
            cfg.momentum,
            cfg.weight_decay,
        )?;

        let epoch_done = (step + 1) % steps_per_epoch == 0 || step + 1 == cfg.steps;
        if epoch_done {
            let train_accuracy = net.accuracy(train, Some(TRAIN_ACC_PROBE))?;
            let val_accuracy = net.accuracy(val, None)?;
            epochs.push(EpochRecord {
                epoch: epochs.len(),
                steps: epoch_losses.len(),
                mean_loss: epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64,
                train_accuracy,
                val_accuracy,
            });
            epoch_losses.clear();
        }
    }

    let final_val_accuracy = epochs
        .last()
        .map_or(initial_val_accuracy, |e| e.val_accuracy);
    Ok(TrainReport {
        attention: net.attention_label(),
        steps: cfg.steps,
        batch: cfg.batch,
        lr: cfg.lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        param_count: net.param_count(),
        initial_loss: losses.first().copied(),
        final_epoch_mean_loss: epochs.last().map(|e| e.mean_loss),
        initial_val_accuracy,
        final_val_accuracy,
        losses,
        epochs,
        param_checksum: net.param_checksum(),
    })
}

fn collect_leaf_ids(vars: &ToyVars) -> Vec<VarId> {
    let mut ids = vec![vars.conv1_w, vars.conv1_b];
    match &vars.attention {
        None => {}
        Some(ToyAttnVars::Ema(v, _)) => ids.extend(v.ids().into_iter().map(|(_, id)| id)),
        Some(ToyAttnVars::Ca(v)) => ids.extend(v.ids().into_iter().map(|(_, id)| id)),
        Some(ToyAttnVars::Se(v)) => ids.extend(v.ids().into_iter().map(|(_, id)| id)),
    }
    ids.extend([vars.conv2_w, vars.conv2_b, vars.fc_w, vars.fc_b]);
    ids
}

/// Gradient of the loss on one fixed batch; used by tests and examples to
/// probe descent behavior without running the full loop.
pub fn batch_loss(net: &ToyNet, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let xv = tape.leaf(batch.clone());
    let logits = net.forward_logits(&mut tape, &vars, xv)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    Ok(tape.value(loss).item())
}
