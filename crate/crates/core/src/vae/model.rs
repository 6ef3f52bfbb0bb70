use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{affine, BoundParams, Graph, NodeId, ParamSet, Tensor2};
use crate::{Error, Result};

/// Fully connected Gaussian encoder and Bernoulli decoder with tanh hidden
/// layers. The decoder mirrors the encoder's hidden sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Architecture {
    pub fn default_for(input_dim: usize) -> Self {
        Self { input_dim, encoder_hidden: vec![256, 128], latent_dim: 10 }
    }

    pub fn decoder_hidden(&self) -> Vec<usize> {
        self.encoder_hidden.iter().rev().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.encoder_hidden.contains(&0) {
            return Err(Error::Config(format!("architecture has a zero-width layer: {self:?}")));
        }
        Ok(())
    }
}

/// Parameter indices for one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    w: usize,
    b: usize,
}

/// Encoder and decoder parameters for one [`Architecture`].
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub architecture: Architecture,
    pub encoder: ParamSet,
    pub decoder: ParamSet,
    enc_hidden: Vec<Dense>,
    enc_mu: Dense,
    enc_log_var: Dense,
    dec_layers: Vec<Dense>,
}

pub struct BoundModel {
    encoder: BoundParams,
    decoder: BoundParams,
}

impl BoundModel {
    pub fn encoder(&self) -> &BoundParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &BoundParams {
        &self.decoder
    }
}

fn layer_names(arch: &Architecture) -> (Vec<String>, Vec<String>) {
    let mut enc: Vec<String> = (0..arch.encoder_hidden.len()).map(|i| format!("enc.{i}")).collect();
    enc.push("enc.mu".into());
    enc.push("enc.log_var".into());
    let mut dec: Vec<String> = (0..arch.encoder_hidden.len()).map(|i| format!("dec.{i}")).collect();
    dec.push("dec.out".into());
    (enc, dec)
}

fn lookup(params: &ParamSet, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Dense> {
    let find = |suffix: &str, shape: (usize, usize)| {
        let name = format!("{prefix}.{suffix}");
        let idx = params.index_of(&name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
        if params.value(idx).shape() != shape {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                params.value(idx).shape()
            )));
        }
        Ok(idx)
    };
    Ok(Dense { w: find("w", (fan_in, fan_out))?, b: find("b", (1, fan_out))? })
}

impl VaeModel {
    /// Glorot-uniform initialization from `rng`.
    pub fn init<R: Rng>(architecture: Architecture, rng: &mut R) -> Result<Self> {
        architecture.validate()?;
        let (enc_names, dec_names) = layer_names(&architecture);
        let mut encoder = ParamSet::new();
        let mut widths = vec![architecture.input_dim];
        widths.extend(&architecture.encoder_hidden);
        for (i, pair) in widths.windows(2).enumerate() {
            encoder.insert_dense(&enc_names[i], pair[0], pair[1], rng);
        }
        let last = *widths.last().unwrap();
        encoder.insert_dense("enc.mu", last, architecture.latent_dim, rng);
        encoder.insert_dense("enc.log_var", last, architecture.latent_dim, rng);

        let mut decoder = ParamSet::new();
        let mut widths = vec![architecture.latent_dim];
        widths.extend(architecture.decoder_hidden());
        widths.push(architecture.input_dim);
        for (i, pair) in widths.windows(2).enumerate() {
            decoder.insert_dense(&dec_names[i], pair[0], pair[1], rng);
        }
        Self::from_params(architecture, encoder, decoder)
    }

    /// Reassembles a model from named parameters, checking every shape.
    pub fn from_params(architecture: Architecture, encoder: ParamSet, decoder: ParamSet) -> Result<Self> {
        architecture.validate()?;
        let (enc_names, dec_names) = layer_names(&architecture);
        let mut widths = vec![architecture.input_dim];
        widths.extend(&architecture.encoder_hidden);
        let enc_hidden = widths
            .windows(2)
            .enumerate()
            .map(|(i, p)| lookup(&encoder, &enc_names[i], p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        let last = *widths.last().unwrap();
        let enc_mu = lookup(&encoder, "enc.mu", last, architecture.latent_dim)?;
        let enc_log_var = lookup(&encoder, "enc.log_var", last, architecture.latent_dim)?;
        let mut widths = vec![architecture.latent_dim];
        widths.extend(architecture.decoder_hidden());
        widths.push(architecture.input_dim);
        let dec_layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, p)| lookup(&decoder, &dec_names[i], p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { architecture, encoder, decoder, enc_hidden, enc_mu, enc_log_var, dec_layers })
    }

    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel { encoder: self.encoder.bind(g), decoder: self.decoder.bind(g) }
    }

    /// `(mu, log_var)` nodes for input node `x`.
    pub fn encoder_graph(&self, g: &mut Graph, bound: &BoundModel, x: NodeId) -> Result<(NodeId, NodeId)> {
        let p = &bound.encoder;
        let mut h = x;
        for layer in &self.enc_hidden {
            h = g.affine(h, p.node(layer.w), p.node(layer.b))?;
            h = g.tanh(h);
        }
        let mu = g.affine(h, p.node(self.enc_mu.w), p.node(self.enc_mu.b))?;
        let log_var = g.affine(h, p.node(self.enc_log_var.w), p.node(self.enc_log_var.b))?;
        Ok((mu, log_var))
    }

    /// Bernoulli logits for latent node `z`.
    pub fn decoder_graph(&self, g: &mut Graph, bound: &BoundModel, z: NodeId) -> Result<NodeId> {
        let p = &bound.decoder;
        let mut h = z;
        for (i, layer) in self.dec_layers.iter().enumerate() {
            h = g.affine(h, p.node(layer.w), p.node(layer.b))?;
            if i + 1 < self.dec_layers.len() {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.architecture.input_dim {
            return Err(Error::Shape(format!(
                "observations have width {}, model expects {}",
                x.cols(),
                self.architecture.input_dim
            )));
        }
        Ok(())
    }

    fn encoder_hidden_forward(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut h = x.clone();
        for layer in &self.enc_hidden {
            h = affine(&h, self.encoder.value(layer.w), self.encoder.value(layer.b))?.map(f64::tanh);
        }
        Ok(h)
    }

    /// Encoder means. No sampling.
    pub fn encode_mean(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(x)?;
        let h = self.encoder_hidden_forward(x)?;
        affine(&h, self.encoder.value(self.enc_mu.w), self.encoder.value(self.enc_mu.b))
    }

    pub fn encode_gaussian(&self, x: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        self.check_input(x)?;
        let h = self.encoder_hidden_forward(x)?;
        let mu = affine(&h, self.encoder.value(self.enc_mu.w), self.encoder.value(self.enc_mu.b))?;
        let lv = affine(&h, self.encoder.value(self.enc_log_var.w), self.encoder.value(self.enc_log_var.b))?;
        Ok((mu, lv))
    }

    pub fn decode_logits(&self, z: &Tensor2) -> Result<Tensor2> {
        let mut h = z.clone();
        for (i, layer) in self.dec_layers.iter().enumerate() {
            h = affine(&h, self.decoder.value(layer.w), self.decoder.value(layer.b))?;
            if i + 1 < self.dec_layers.len() {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }
}
