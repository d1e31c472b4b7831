use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub n_s: usize,
    pub n_par: usize,
    /// Number of hidden layers, `M`.
    pub hidden_layers: usize,
    /// Nodes per hidden layer, `d`.
    pub width: usize,
}

impl MlpArchitecture {
    pub fn input_dim(&self) -> usize {
        self.n_s + self.n_par
    }

    /// Number of weight groups `W[0..=M]`.
    pub fn n_groups(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 || self.n_s == 0 {
            return Err(Error::Config(format!(
                "architecture needs at least one hidden layer, one node and one state, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of weight group `i`.
    pub fn group_shape(&self, i: usize) -> (usize, usize) {
        let fan_in = if i == 0 { self.input_dim() } else { self.width };
        let fan_out = if i == self.hidden_layers { self.n_s } else { self.width };
        (fan_out, fan_in)
    }
}

/// One affine weight group: `W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    pub fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Layer {
            w: DMatrix::zeros(fan_out, fan_in),
            b: DVector::zeros(fan_out),
        }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Per-feature affine scaling fitted on training data. Inputs are mapped to
/// `(x - in_mean) / in_scale`; network outputs are multiplied by
/// `out_scale` before being added to the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub in_mean: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_scale: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn nonzero(scale: f64) -> f64 {
    if scale > 1e-12 && scale.is_finite() {
        scale
    } else {
        1.0
    }
}

impl Normalization {
    pub fn identity(arch: &MlpArchitecture) -> Self {
        Normalization {
            in_mean: vec![0.0; arch.input_dim()],
            in_scale: vec![1.0; arch.input_dim()],
            out_scale: vec![1.0; arch.n_s],
        }
    }

    /// Zero-mean unit-variance inputs and unit-variance increments; constant
    /// features keep scale 1.
    pub fn fit(ds: &Dataset) -> Self {
        let n_in = ds.n_s + ds.n_par;
        let mut in_mean = Vec::with_capacity(n_in);
        let mut in_scale = Vec::with_capacity(n_in);
        for f in 0..n_in {
            let (m, s) = mean_std(ds.pairs.iter().map(move |p| {
                if f < ds.n_s {
                    p.s_in[f]
                } else {
                    p.p[f - ds.n_s]
                }
            }));
            in_mean.push(m);
            in_scale.push(nonzero(s));
        }
        let out_scale = (0..ds.n_s)
            .map(|i| nonzero(mean_std(ds.pairs.iter().map(move |p| p.s_out[i] - p.s_in[i])).1))
            .collect();
        Normalization {
            in_mean,
            in_scale,
            out_scale,
        }
    }

    pub fn validate(&self, arch: &MlpArchitecture) -> Result<()> {
        if self.in_mean.len() != arch.input_dim()
            || self.in_scale.len() != arch.input_dim()
            || self.out_scale.len() != arch.n_s
        {
            return Err(Error::Shape("normalization does not match architecture".into()));
        }
        let all = self.in_mean.iter().chain(&self.in_scale).chain(&self.out_scale);
        if all.clone().any(|v| !v.is_finite())
            || self.in_scale.iter().chain(&self.out_scale).any(|v| *v == 0.0)
        {
            return Err(Error::Format("normalization scales must be finite and nonzero".into()));
        }
        Ok(())
    }
}

/// Residual flow-map network `s + out_scale * N([s; p])`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMapNet {
    pub arch: MlpArchitecture,
    pub layers: Vec<Layer>,
    pub norm: Normalization,
    /// Full-pass mean squared error on normalized targets after training.
    pub final_loss: Option<f64>,
}

impl FlowMapNet {
    pub fn zeros(arch: MlpArchitecture) -> Self {
        let layers = (0..arch.n_groups())
            .map(|i| {
                let (o, n) = arch.group_shape(i);
                Layer::zeros(o, n)
            })
            .collect();
        FlowMapNet {
            arch,
            layers,
            norm: Normalization::identity(&arch),
            final_loss: None,
        }
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: MlpArchitecture, norm: Normalization, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        net.norm = norm;
        for layer in &mut net.layers {
            let (o, n) = layer.w.shape();
            let a = (6.0 / (o + n) as f64).sqrt();
            for w in layer.w.iter_mut() {
                *w = rng.random_range(-a..a);
            }
        }
        net
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.norm.validate(&self.arch)?;
        if self.layers.len() != self.arch.n_groups() {
            return Err(Error::Shape(format!(
                "{} weight groups, architecture needs {}",
                self.layers.len(),
                self.arch.n_groups()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let (o, n) = self.arch.group_shape(i);
            if l.w.shape() != (o, n) || l.b.len() != o {
                return Err(Error::Shape(format!("weight group {i} has the wrong shape")));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Normalized input columns for a batch of `(s, p)`.
    pub(crate) fn normalize_input(&self, s: &[f64], p: &[f64], out: &mut [f64]) {
        for (i, v) in s.iter().chain(p).enumerate() {
            out[i] = (v - self.norm.in_mean[i]) / self.norm.in_scale[i];
        }
    }

    /// Raw network output on normalized inputs (one column per sample).
    pub fn network(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = z.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = &layer.w * &h;
            for mut col in a.column_iter_mut() {
                col += &layer.b;
            }
            if i < last {
                a.apply(|v| *v = v.tanh());
            }
            h = a;
        }
        h
    }

    /// `s + out_scale * N((x - mean) / scale)` for `x = [s; p]`.
    pub fn forward(&self, s: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.arch.n_s || p.len() != self.arch.n_par {
            return Err(Error::Shape(format!(
                "forward expects {} states and {} parameters, got {} and {}",
                self.arch.n_s,
                self.arch.n_par,
                s.len(),
                p.len()
            )));
        }
        let mut z = DMatrix::zeros(self.arch.input_dim(), 1);
        self.normalize_input(s, p, z.as_mut_slice());
        let out = self.network(&z);
        Ok(s.iter()
            .enumerate()
            .map(|(i, v)| v + self.norm.out_scale[i] * out[i])
            .collect())
    }
}
