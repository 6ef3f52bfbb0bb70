//! Trained model plus provenance.
//!
//! File layout: one line of JSON (the header, terminated by `\n`) followed by
//! one `DTNS` f32 tensor per parameter, in the order the header lists them.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{Architecture, VaeModel};
use super::objective::ObjectiveConfig;
use super::representation::RepresentationMatrix;
use crate::grad::{sigmoid, softplus, ParamSet, Tensor2};
use crate::rng::{self, streams};
use crate::tensor_io::{read_tensor, write_tensor, Tensor};
use crate::worlds::{ObservationBatch, WorldConfig};
use crate::{Error, Result};

/// Per-step training curves. All three vectors have one entry per step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct History {
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
    pub regularizer: Vec<f64>,
}

impl History {
    pub fn with_capacity(n: usize) -> Self {
        Self { recon: Vec::with_capacity(n), kl: Vec::with_capacity(n), regularizer: Vec::with_capacity(n) }
    }

    pub fn push(&mut self, s: &super::train::StepStats) {
        self.recon.push(s.recon);
        self.kl.push(s.kl);
        self.regularizer.push(s.regularizer);
    }

    pub fn len(&self) -> usize {
        self.recon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recon.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub objective: ObjectiveConfig,
    pub world: WorldConfig,
    pub world_hash: String,
    pub seed: u64,
    pub model: VaeModel,
    pub history: History,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    architecture: Architecture,
    objective: ObjectiveConfig,
    world: WorldConfig,
    world_hash: String,
    seed: u64,
    steps: usize,
    history: History,
    encoder: Vec<(String, [usize; 2])>,
    decoder: Vec<(String, [usize; 2])>,
}

const FORMAT: &str = "untangle-checkpoint-1";

fn layout(p: &ParamSet) -> Vec<(String, [usize; 2])> {
    p.iter().map(|(n, t)| (n.to_string(), [t.rows(), t.cols()])).collect()
}

fn read_params<R: Read>(r: &mut R, entries: &[(String, [usize; 2])]) -> Result<ParamSet> {
    let mut named = Vec::with_capacity(entries.len());
    for (name, [rows, cols]) in entries {
        let t = read_tensor(r)?;
        if t.matrix_dims()? != (*rows, *cols) {
            return Err(Error::Format(format!("tensor {name} has dims {:?}, header says {rows}x{cols}", t.dims)));
        }
        named.push((name.clone(), Tensor2::from_f32(*rows, *cols, t.as_f32()?)?));
    }
    Ok(ParamSet::from_named(named))
}

impl Checkpoint {
    pub fn steps(&self) -> usize {
        self.history.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.model.architecture.latent_dim
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            architecture: self.model.architecture.clone(),
            objective: self.objective,
            world: self.world.clone(),
            world_hash: self.world_hash.clone(),
            seed: self.seed,
            steps: self.steps(),
            history: self.history.clone(),
            encoder: layout(&self.model.encoder),
            decoder: layout(&self.model.decoder),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for params in [&self.model.encoder, &self.model.decoder] {
            for (_, t) in params.iter() {
                let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
                write_tensor(w, &Tensor::f32(vec![t.rows() as u64, t.cols() as u64], data)?)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if !line.ends_with('\n') {
            return Err(Error::Format("checkpoint header is not terminated".into()));
        }
        let header: Header = serde_json::from_str(&line)?;
        if header.format != FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", header.format)));
        }
        if header.steps != header.history.len()
            || header.history.kl.len() != header.steps
            || header.history.regularizer.len() != header.steps
        {
            return Err(Error::Format(format!("history does not cover {} steps", header.steps)));
        }
        let encoder = read_params(&mut r, &header.encoder)?;
        let decoder = read_params(&mut r, &header.decoder)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", rest.len())));
        }
        Ok(Self {
            objective: header.objective,
            world: header.world,
            world_hash: header.world_hash,
            seed: header.seed,
            model: VaeModel::from_params(header.architecture, encoder, decoder)?,
            history: header.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    fn observations(&self, obs: &ObservationBatch) -> Result<Tensor2> {
        if obs.width() != self.model.architecture.input_dim {
            return Err(Error::Shape(format!(
                "observations have width {}, checkpoint expects {}",
                obs.width(),
                self.model.architecture.input_dim
            )));
        }
        Tensor2::from_f32(obs.rows(), obs.width(), obs.data())
    }

    /// Encoder means. Deterministic; rows are processed in fixed-size chunks.
    pub fn encode(&self, obs: &ObservationBatch) -> Result<RepresentationMatrix> {
        let x = self.observations(obs)?;
        let d = self.latent_dim();
        let mut data = Vec::with_capacity(obs.rows() * d);
        for start in (0..x.rows()).step_by(ENCODE_CHUNK) {
            let idx: Vec<usize> = (start..(start + ENCODE_CHUNK).min(x.rows())).collect();
            data.extend(self.model.encode_mean(&x.select_rows(&idx))?.into_data());
        }
        RepresentationMatrix::new(obs.rows(), d, data)
    }

    /// Mean reconstruction loss and KL over `obs`, one posterior sample per
    /// row drawn from the evaluation stream of `seed`.
    pub fn evaluate_elbo(&self, obs: &ObservationBatch, seed: u64) -> Result<(f64, f64)> {
        if obs.rows() == 0 {
            return Err(Error::Undefined("ELBO of an empty batch".into()));
        }
        let x = self.observations(obs)?;
        let mut noise_rng = rng::stream(seed, streams::EVAL);
        let (mut recon, mut kl) = (0.0, 0.0);
        for start in (0..x.rows()).step_by(ENCODE_CHUNK) {
            let idx: Vec<usize> = (start..(start + ENCODE_CHUNK).min(x.rows())).collect();
            let xb = x.select_rows(&idx);
            let (mu, lv) = self.model.encode_gaussian(&xb)?;
            let mut z = mu.clone();
            for (zi, l) in z.data_mut().iter_mut().zip(lv.data()) {
                let e: f64 = noise_rng.sample(StandardNormal);
                *zi += (0.5 * l).exp() * e;
            }
            let logits = self.model.decode_logits(&z)?;
            for (&l, &t) in logits.data().iter().zip(xb.data()) {
                recon += softplus(l) - t * l;
            }
            for (&m, &l) in mu.data().iter().zip(lv.data()) {
                kl += 0.5 * (l.exp() + m * m - 1.0 - l);
            }
        }
        let n = x.rows() as f64;
        let (recon, kl) = (recon / n, kl / n);
        if !recon.is_finite() || !kl.is_finite() {
            return Err(Error::Numeric(format!("non-finite ELBO terms: recon {recon}, kl {kl}")));
        }
        Ok((recon, kl))
    }

    /// Decoder means for latent codes, e.g. for inspection.
    pub fn decode(&self, z: &Tensor2) -> Result<Tensor2> {
        if z.cols() != self.latent_dim() {
            return Err(Error::Shape(format!("codes have width {}, expected {}", z.cols(), self.latent_dim())));
        }
        Ok(self.model.decode_logits(z)?.map(sigmoid))
    }
}

const ENCODE_CHUNK: usize = 1024;
