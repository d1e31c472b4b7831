//! On-disk network format: `meta.json` plus `weights_<i>.csv` for every
//! weight group, one row per output node laid out as `[w..., bias]`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::net::{FlowMapNet, Layer, MlpArchitecture, Normalization};
use crate::dynamics::ModelKind;
use crate::error::{Error, Result};
use crate::io::{read_matrix, write_json, write_matrix};
use crate::localparam::BasisSpec;

/// What the network was trained on; needed to build parameter sequences
/// for prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetContext {
    pub model: ModelKind,
    pub basis: BasisSpec,
    pub delta_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetMeta {
    pub architecture: MlpArchitecture,
    pub normalization: Normalization,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub context: Option<NetContext>,
}

impl NetMeta {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.normalization.validate(&self.architecture)?;
        if let Some(ctx) = &self.context {
            ctx.basis.validate()?;
            if ctx.model.state_dim() != self.architecture.n_s || ctx.basis.n_par() != self.architecture.n_par {
                return Err(Error::Format("network context does not match the architecture".into()));
            }
            if !(ctx.delta_t > 0.0 && ctx.delta_t.is_finite()) {
                return Err(Error::Format("delta_t must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Parses and validates `meta.json` content.
pub fn parse_meta(text: &str) -> Result<NetMeta> {
    let meta: NetMeta = serde_json::from_str(text)?;
    meta.validate()?;
    Ok(meta)
}

pub fn write_archive(net: &FlowMapNet, context: Option<&NetContext>, dir: &Path) -> Result<()> {
    net.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = NetMeta {
        architecture: net.arch,
        normalization: net.norm.clone(),
        final_loss: net.final_loss,
        context: context.cloned(),
    };
    meta.validate()?;
    write_json(&meta, &dir.join("meta.json"))?;
    for (i, layer) in net.layers.iter().enumerate() {
        let (o, n) = layer.w.shape();
        let m = DMatrix::from_fn(o, n + 1, |r, c| if c < n { layer.w[(r, c)] } else { layer.b[r] });
        write_matrix(&m, &dir.join(format!("weights_{i}.csv")))?;
    }
    Ok(())
}

pub fn read_archive(dir: &Path) -> Result<(FlowMapNet, Option<NetContext>)> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta = parse_meta(&text)?;
    let arch = meta.architecture;
    let mut layers = Vec::with_capacity(arch.n_groups());
    for i in 0..arch.n_groups() {
        let m = read_matrix(&dir.join(format!("weights_{i}.csv")))?;
        let (o, n) = arch.group_shape(i);
        if m.shape() != (o, n + 1) {
            return Err(Error::Format(format!(
                "weights_{i}.csv is {:?}, expected {:?}",
                m.shape(),
                (o, n + 1)
            )));
        }
        layers.push(Layer {
            w: m.columns(0, n).into_owned(),
            b: DVector::from_iterator(o, m.column(n).iter().copied()),
        });
    }
    let net = FlowMapNet {
        arch,
        layers,
        norm: meta.normalization,
        final_loss: meta.final_loss,
    };
    net.validate()?;
    Ok((net, meta.context))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::unit_rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = MlpArchitecture { n_s: 3, n_par: 6, hidden_layers: 2, width: 7 };
        let mut net = FlowMapNet::init(arch, Normalization::identity(&arch), &mut unit_rng(3, 0));
        net.layers[1].b[2] = 0.1 + 0.2;
        net.norm.in_scale[4] = 1.0 / 3.0;
        net.final_loss = Some(1.234e-5);
        let ctx = NetContext {
            model: ModelKind::Unicycle,
            basis: BasisSpec::quadratic_nodes(),
            delta_t: 0.2,
        };
        let dir = tempfile::tempdir().unwrap();
        write_archive(&net, Some(&ctx), dir.path()).unwrap();
        let (back, back_ctx) = read_archive(dir.path()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back_ctx, Some(ctx));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let arch = MlpArchitecture { n_s: 2, n_par: 1, hidden_layers: 1, width: 3 };
        let net = FlowMapNet::zeros(arch);
        let dir = tempfile::tempdir().unwrap();
        write_archive(&net, None, dir.path()).unwrap();
        write_matrix(&DMatrix::zeros(3, 3), &dir.path().join("weights_0.csv")).unwrap();
        assert!(matches!(read_archive(dir.path()), Err(Error::Format(_))));
    }
}
