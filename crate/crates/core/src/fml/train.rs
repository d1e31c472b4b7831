use log::{debug, info};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{FlowMapNet, Layer, MlpArchitecture, Normalization};
use crate::datagen::{unit_rng, Dataset};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::localparam::GlobalParams;

/// Datasets smaller than this are trained full-batch.
pub const FULL_BATCH_BELOW: usize = 1024;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Rises linearly from `lo` to `hi` over half a period, then falls back.
    /// Epoch 0 (and every multiple of `period`) sits at `lo`.
    Triangular { lo: f64, hi: f64, period: usize },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Triangular { lo, hi, period } => {
                let phase = (epoch % period) as f64 / period as f64;
                lo + (hi - lo) * (1.0 - (2.0 * phase - 1.0).abs())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr > 0.0 && lr.is_finite(),
            LrSchedule::Triangular { lo, hi, period } => {
                lo > 0.0 && lo <= hi && hi.is_finite() && period >= 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

fn default_batch() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Stop after this many epochs without improvement of the training loss
    /// and restore the best weights.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn constant(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: default_batch(),
            schedule: LrSchedule::Constant { lr },
            patience: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.patience == Some(0) {
            return Err(Error::Config("batch size and patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-pass loss before the first update.
    pub initial_loss: f64,
    /// Full-pass loss of the returned weights.
    pub final_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Normalized inputs and targets of a dataset, one column per pair.
pub(crate) struct Prepared {
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

pub(crate) fn prepare(net: &FlowMapNet, ds: &Dataset) -> Result<Prepared> {
    if ds.n_s != net.arch.n_s || ds.n_par != net.arch.n_par {
        return Err(Error::Shape(format!(
            "dataset has {} states and {} parameters, network expects {} and {}",
            ds.n_s, ds.n_par, net.arch.n_s, net.arch.n_par
        )));
    }
    let n = ds.len();
    let mut z = DMatrix::zeros(net.arch.input_dim(), n);
    let mut t = DMatrix::zeros(net.arch.n_s, n);
    for (j, pair) in ds.pairs.iter().enumerate() {
        net.normalize_input(&pair.s_in, &pair.p, z.column_mut(j).as_mut_slice());
        for i in 0..net.arch.n_s {
            t[(i, j)] = (pair.s_out[i] - pair.s_in[i]) / net.norm.out_scale[i];
        }
    }
    Ok(Prepared { z, t })
}

/// Activations of every layer; `acts[0]` is the input.
fn forward_cache(layers: &[Layer], z: DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let last = layers.len() - 1;
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(z);
    for (i, layer) in layers.iter().enumerate() {
        let mut a = &layer.w * &acts[i];
        for mut col in a.column_iter_mut() {
            col += &layer.b;
        }
        if i < last {
            a.apply(|v| *v = v.tanh());
        }
        acts.push(a);
    }
    acts
}

fn mse(out: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let n = out.len().max(1) as f64;
    out.iter().zip(t.iter()).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / n
}

/// Per-entry mean squared error and its gradient with respect to weight
/// groups `frozen..`. Frozen groups get no gradient.
pub(crate) fn loss_and_grad(
    layers: &[Layer],
    z: DMatrix<f64>,
    t: &DMatrix<f64>,
    frozen: usize,
) -> (f64, Vec<Option<Layer>>) {
    let acts = forward_cache(layers, z);
    let out = &acts[layers.len()];
    let loss = mse(out, t);
    let scale = 2.0 / out.len().max(1) as f64;
    let mut delta = (out - t) * scale;
    let mut grads: Vec<Option<Layer>> = vec![None; layers.len()];
    for i in (frozen..layers.len()).rev() {
        let gw = &delta * acts[i].transpose();
        let gb = delta.column_sum();
        if i > frozen {
            let mut back = layers[i].w.transpose() * &delta;
            back.zip_apply(&acts[i], |d, a| *d *= 1.0 - a * a);
            delta = back;
        }
        grads[i] = Some(Layer { w: gw, b: gb });
    }
    (loss, grads)
}

/// Full-pass loss on prepared data.
pub(crate) fn full_loss(net: &FlowMapNet, data: &Prepared) -> f64 {
    const CHUNK: usize = 4096;
    let n = data.z.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        let out = net.network(&data.z.columns(start, len).into_owned());
        sum += mse(&out, &data.t.columns(start, len).into_owned()) * out.len() as f64;
        start += len;
    }
    sum / (n * net.arch.n_s) as f64
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
}

impl Adam {
    fn new(layers: &[Layer]) -> Self {
        let zeros: Vec<Layer> = layers.iter().map(|l| Layer::zeros(l.w.nrows(), l.w.ncols())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, layers: &mut [Layer], grads: &[Option<Layer>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let apply = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        };
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                let (layer, m, v) = (&mut layers[i], &mut self.m[i], &mut self.v[i]);
                apply(layer.w.as_mut_slice(), m.w.as_mut_slice(), v.w.as_mut_slice(), g.w.as_slice());
                apply(layer.b.as_mut_slice(), m.b.as_mut_slice(), v.b.as_mut_slice(), g.b.as_slice());
            }
        }
    }
}

fn gather(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (j, &i) in idx.iter().enumerate() {
        out.set_column(j, &m.column(i));
    }
    out
}

/// Adam on weight groups `frozen..`, everything else untouched.
fn optimize(
    mut net: FlowMapNet,
    ds: &Dataset,
    config: &TrainConfig,
    frozen: usize,
) -> Result<(FlowMapNet, TrainReport)> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let data = prepare(&net, ds)?;
    let n = ds.len();
    let full_batch = n < FULL_BATCH_BELOW;
    let batch = if full_batch { n } else { config.batch_size.min(n) };
    let mut rng = unit_rng(config.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(&net.layers);
    let initial_loss = full_loss(&net, &data);
    let mut best = (f64::INFINITY, 0usize, net.layers.clone());
    let mut since_best = 0usize;
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        let lr = config.schedule.at(epoch);
        let before = if full_batch && config.patience.is_some() {
            Some(net.layers.clone())
        } else {
            None
        };
        if !full_batch {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let (z, t) = if full_batch {
                (data.z.clone(), data.t.clone())
            } else {
                (gather(&data.z, chunk), gather(&data.t, chunk))
            };
            let (loss, grads) = loss_and_grad(&net.layers, z, &t, frozen);
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.update(&mut net.layers, &grads, lr);
        }
        epoch_loss /= n as f64;
        epochs_run = epoch + 1;
        if epoch % 100 == 0 {
            debug!("epoch {epoch}: lr {lr:.2e}, loss {epoch_loss:.4e}");
        }
        if let Some(patience) = config.patience {
            if epoch_loss < best.0 {
                // Full batch: the loss was measured before this epoch's update.
                best = (epoch_loss, epoch, before.unwrap_or_else(|| net.layers.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    info!("early stop at epoch {epoch}; best epoch {}", best.1);
                    break;
                }
            }
        }
    }
    let best_epoch = if config.patience.is_some() {
        net.layers = best.2;
        best.1
    } else {
        epochs_run.saturating_sub(1)
    };
    let final_loss = full_loss(&net, &data);
    if !final_loss.is_finite() {
        return Err(Error::TrainingDivergence { epoch: epochs_run });
    }
    net.final_loss = Some(final_loss);
    Ok((
        net,
        TrainReport {
            initial_loss,
            final_loss,
            epochs_run,
            best_epoch,
        },
    ))
}

/// Trains a fresh network; normalization is fitted on `ds`.
pub fn train_reported(arch: MlpArchitecture, ds: &Dataset, config: &TrainConfig) -> Result<(FlowMapNet, TrainReport)> {
    arch.validate()?;
    let mut rng = unit_rng(config.seed, 0);
    let net = FlowMapNet::init(arch, Normalization::fit(ds), &mut rng);
    optimize(net, ds, config, 0)
}

pub fn train(arch: MlpArchitecture, ds: &Dataset, config: &TrainConfig) -> Result<FlowMapNet> {
    Ok(train_reported(arch, ds, config)?.0)
}

/// Retrains weight groups `W[ell..=M]` of `prior` on `hf`, keeping
/// `W[0..ell]` and the prior's normalization bit-for-bit.
pub fn transfer_correct_reported(
    prior: &FlowMapNet,
    hf: &Dataset,
    ell: usize,
    config: &TrainConfig,
) -> Result<(FlowMapNet, TrainReport)> {
    prior.validate()?;
    if ell > prior.arch.hidden_layers {
        return Err(Error::Config(format!(
            "freeze index {ell} exceeds the number of hidden layers {}",
            prior.arch.hidden_layers
        )));
    }
    optimize(prior.clone(), hf, config, ell)
}

pub fn transfer_correct(prior: &FlowMapNet, hf: &Dataset, ell: usize, config: &TrainConfig) -> Result<FlowMapNet> {
    Ok(transfer_correct_reported(prior, hf, ell, config)?.0)
}

/// Default divergence bound for recursive prediction.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// `s_{k+1} = forward(s_k, p_k)` over all segments.
pub fn fml_predict(net: &FlowMapNet, s0: &[f64], segments: &GlobalParams) -> Result<Trajectory> {
    fml_predict_bounded(net, s0, segments, DIVERGENCE_BOUND)
}

pub fn fml_predict_bounded(net: &FlowMapNet, s0: &[f64], segments: &GlobalParams, bound: f64) -> Result<Trajectory> {
    let mut times = vec![0.0];
    let mut states = vec![s0.to_vec()];
    for (k, seg) in segments.segments.iter().enumerate() {
        let next = net.forward(&states[k], &seg.p)?;
        if next.iter().any(|v| !v.is_finite() || v.abs() > bound) {
            return Err(Error::Divergence {
                step: k + 1,
                msg: format!("state left the bound {bound:e}"),
            });
        }
        times.push((k + 1) as f64 * segments.dt);
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic| + |numeric|, floor)`
    /// over the sampled trainable weights.
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude on frozen groups (zero by
    /// construction).
    pub frozen_max_abs: f64,
    pub n_checked: usize,
}

/// Denominator floor of the relative error, keeping near-zero gradients from
/// turning round-off into large ratios.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

fn param_mut(layers: &mut [Layer], i: usize, bias: bool, k: usize) -> &mut f64 {
    if bias {
        &mut layers[i].b[k]
    } else {
        &mut layers[i].w.as_mut_slice()[k]
    }
}

/// Compares backpropagation against central differences (`h = 1e-5`) on up
/// to `n_weights` randomly chosen trainable parameters, for the loss on a
/// single pair.
pub fn grad_check(
    net: &FlowMapNet,
    s_in: &[f64],
    p: &[f64],
    s_out: &[f64],
    frozen: usize,
    n_weights: usize,
    seed: u64,
) -> Result<GradCheck> {
    net.validate()?;
    const H: f64 = 1e-5;
    let mut z = DMatrix::zeros(net.arch.input_dim(), 1);
    net.normalize_input(s_in, p, z.as_mut_slice());
    let t = DMatrix::from_fn(net.arch.n_s, 1, |i, _| (s_out[i] - s_in[i]) / net.norm.out_scale[i]);
    let (_, grads) = loss_and_grad(&net.layers, z.clone(), &t, frozen);
    let frozen_max_abs = grads[..frozen.min(grads.len())]
        .iter()
        .map(|g| g.as_ref().map_or(0.0, |g| g.w.amax().max(g.b.amax())))
        .fold(0.0, f64::max);

    // (group, is_bias, flat index)
    let mut candidates = Vec::new();
    for (i, layer) in net.layers.iter().enumerate().skip(frozen) {
        candidates.extend((0..layer.w.len()).map(|k| (i, false, k)));
        candidates.extend((0..layer.b.len()).map(|k| (i, true, k)));
    }
    let mut rng = unit_rng(seed, 0);
    candidates.shuffle(&mut rng);
    candidates.truncate(n_weights);

    let loss_at = |layers: &[Layer]| {
        let mut h = z.clone();
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let mut a = &l.w * &h + DMatrix::from_column_slice(l.b.len(), 1, l.b.as_slice());
            if i < last {
                a.apply(|v| *v = v.tanh());
            }
            h = a;
        }
        mse(&h, &t)
    };
    let mut layers = net.layers.clone();
    let mut max_rel = 0.0f64;
    for &(i, bias, k) in &candidates {
        let orig = *param_mut(&mut layers, i, bias, k);
        *param_mut(&mut layers, i, bias, k) = orig + H;
        let up = loss_at(&layers);
        *param_mut(&mut layers, i, bias, k) = orig - H;
        let down = loss_at(&layers);
        *param_mut(&mut layers, i, bias, k) = orig;
        let numeric = (up - down) / (2.0 * H);
        let g = grads[i].as_ref().expect("trainable group has a gradient");
        let analytic = if bias { g.b[k] } else { g.w.as_slice()[k] };
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        frozen_max_abs,
        n_checked: candidates.len(),
    })
}

/// Convenience: gradient of the full-dataset loss (used by tests).
#[cfg(test)]
pub(crate) fn dataset_gradient(net: &FlowMapNet, ds: &Dataset, frozen: usize) -> Vec<Option<Layer>> {
    let data = prepare(net, ds).unwrap();
    loss_and_grad(&net.layers, data.z, &data.t, frozen).1
}
