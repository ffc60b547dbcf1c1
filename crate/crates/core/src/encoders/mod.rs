//! Instance classifier, sequence encoders and the bag head.
//!
//! A forward pass scores every instance with the shared instance
//! classifier, selects a subset (see [`crate::aps`]), feeds the selected
//! features in bag order through the encoder, then applies
//! `Norm(H + X)`, mean pooling and a linear bag classifier.

mod config;
mod init;
pub mod rnn;
pub mod ssm;

pub use config::{EncoderConfig, EncoderKind, MambaConfig, ModelConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aps::{select_with, ApsResult, InstanceLogits, SelectionConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{sigmoid, Matrix, NORM_EPS};

/// Generator used for initialization, shuffling and dropout.
pub type RunRng = ChaCha8Rng;

const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `N × C`, all instances of the bag.
    pub instance_logits: Var,
    /// `λ × d` encoder input.
    pub x: Var,
    pub h: Var,
    pub h_res: Var,
    /// `1 × d`.
    pub z_bag: Var,
    /// `1 × C`.
    pub bag_logits: Var,
    pub selection: ApsResult,
    /// Instance indices in the order they were fed to the encoder.
    pub order: Vec<usize>,
}

/// Materialized intermediate values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub x: Matrix,
    pub h: Matrix,
    pub h_res: Matrix,
    pub z_bag: Vec<f64>,
    pub bag_logits: Vec<f64>,
    pub instance_logits: Matrix,
    pub order: Vec<usize>,
}

impl Forward {
    pub fn trace(&self, tape: &Tape) -> ForwardTrace {
        ForwardTrace {
            x: tape.value(self.x).clone(),
            h: tape.value(self.h).clone(),
            h_res: tape.value(self.h_res).clone(),
            z_bag: tape.value(self.z_bag).data().to_vec(),
            bag_logits: tape.value(self.bag_logits).data().to_vec(),
            instance_logits: tape.value(self.instance_logits).clone(),
            order: self.order.clone(),
        }
    }
}

/// Inference output for one bag.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub bag_logit: f64,
    pub probability: f64,
    pub instance_logits: InstanceLogits,
    pub selection: ApsResult,
}

impl Model {
    /// Randomly initialized model; identical seeds give identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = RunRng::seed_from_u64(seed);
        let d = config.dim;
        let c = config.classes;
        let enc = &config.encoder;
        let mut params = ParamStore::new();
        params.add_buffer("input.mean", Matrix::zeros(1, d));
        params.add_buffer("input.std", Matrix::filled(1, d, 1.0));
        params.add("inst.weight", init::fan_in_uniform(&mut rng, c, d, d));
        params.add("inst.bias", init::fan_in_uniform(&mut rng, 1, c, d));
        if enc.kind.is_recurrent() {
            rnn::init_params(&mut params, &mut rng, enc, d);
        } else {
            ssm::init_params(&mut params, &mut rng, enc, d);
        }
        params.add("norm.gain", Matrix::filled(1, d, 1.0));
        if enc.kind.is_recurrent() {
            params.add("norm.bias", Matrix::zeros(1, d));
        }
        params.add("cls.weight", init::fan_in_uniform(&mut rng, c, d, d));
        params.add("cls.bias", init::fan_in_uniform(&mut rng, 1, c, d));
        Ok(Model { config, params })
    }

    /// Model with every trainable entry set to zero.
    pub fn zeroed(config: ModelConfig) -> Result<Model> {
        let mut model = Model::new(config, 0)?;
        for p in model.params.iter_mut().filter(|p| p.trainable) {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(model)
    }

    /// Reassembles a model from stored tensors, checking that names and
    /// shapes match the layout `config` implies.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Model> {
        let reference = Model::new(config, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} tensors for this configuration, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (_, p) in reference.params.iter() {
            let id = params.require(&p.name)?;
            let got = params.value(id).shape();
            if got != p.value.shape() {
                return Err(Error::shape("checkpoint tensor", got, p.value.shape()));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn kind(&self) -> EncoderKind {
        self.config.encoder.kind
    }

    pub fn set_standardization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let d = self.config.dim;
        if mean.len() != d || std.len() != d {
            return Err(Error::shape(
                "standardization",
                (1, d),
                (mean.len(), std.len()),
            ));
        }
        let std: Vec<f64> = std
            .iter()
            .map(|&s| if s > STD_FLOOR { s } else { 1.0 })
            .collect();
        let m = self.params.require("input.mean")?;
        *self.params.value_mut(m) = Matrix::row_vector(mean.to_vec());
        let s = self.params.require("input.std")?;
        *self.params.value_mut(s) = Matrix::row_vector(std);
        Ok(())
    }

    /// Applies the stored per-feature standardization.
    pub fn standardize(&self, features: &Matrix) -> Result<Matrix> {
        self.check_dim(features)?;
        let mean = self.params.value(self.params.require("input.mean")?).data();
        let std = self.params.value(self.params.require("input.std")?).data();
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    fn check_dim(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.config.dim {
            return Err(Error::shape(
                "model input",
                features.shape(),
                (features.rows(), self.config.dim),
            ));
        }
        Ok(())
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        Ok(tape.param(&self.params, self.params.require(name)?))
    }

    /// Instance classifier on the tape: `features · Wᵀ + b`.
    pub fn instance_logits_var(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let w = self.p(tape, "inst.weight")?;
        let b = self.p(tape, "inst.bias")?;
        tape.affine(features, w, Some(b))
    }

    /// Instance classifier on already-standardized features.
    pub fn instance_logits(&self, features: &Matrix) -> Result<InstanceLogits> {
        self.check_dim(features)?;
        let mut tape = Tape::new();
        let x = tape.input(features.clone());
        let out = self.instance_logits_var(&mut tape, x)?;
        InstanceLogits::new(tape.value(out).clone())
    }

    pub fn encode(&self, tape: &mut Tape, x: Var, rng: Option<&mut RunRng>) -> Result<Var> {
        let enc = &self.config.encoder;
        if enc.kind.is_recurrent() {
            rnn::encode(tape, &self.params, x, enc, self.config.dim, rng)
        } else {
            ssm::encode(tape, &self.params, x, enc, self.config.dim, rng)
        }
    }

    /// `Norm(h + x)` row-wise, mean pooling, then the bag classifier.
    /// Returns `(h_res, z_bag, bag_logits)`.
    pub fn head(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, Var, Var)> {
        let sum = tape.add(h, x)?;
        let gain = self.p(tape, "norm.gain")?;
        let h_res = if self.kind().is_recurrent() {
            let bias = self.p(tape, "norm.bias")?;
            tape.layer_norm(sum, gain, bias, NORM_EPS)?
        } else {
            tape.rms_norm(sum, gain, NORM_EPS)?
        };
        let z_bag = tape.mean_rows(h_res);
        let w = self.p(tape, "cls.weight")?;
        let b = self.p(tape, "cls.bias")?;
        let logits = tape.affine(z_bag, w, Some(b))?;
        Ok((h_res, z_bag, logits))
    }

    /// Full pipeline on raw bag features. Selection runs outside the
    /// gradient path; `rng` enables dropout (training mode).
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: &Matrix,
        selection: &SelectionConfig,
        bag_seed: u64,
        rng: Option<&mut RunRng>,
    ) -> Result<Forward> {
        if features.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        let features = self.standardize(features)?;
        let all = tape.input(features.clone());
        let inst = self.instance_logits_var(tape, all)?;
        let logits = InstanceLogits::new(tape.value(inst).clone())?;
        let aps = select_with(
            selection.strategy,
            &features,
            &logits,
            &selection.weights,
            selection.lambda,
            bag_seed,
        )?;
        let order = aps.sequence_order();
        let x = tape.input(features.select_rows(&order));
        let h = self.encode(tape, x, rng)?;
        let (h_res, z_bag, bag_logits) = self.head(tape, x, h)?;
        if !tape.value(bag_logits).is_finite() {
            return Err(Error::Numeric("non-finite bag logit".into()));
        }
        Ok(Forward {
            instance_logits: inst,
            x,
            h,
            h_res,
            z_bag,
            bag_logits,
            selection: aps,
            order,
        })
    }

    pub fn predict(
        &self,
        features: &Matrix,
        selection: &SelectionConfig,
        bag_seed: u64,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, features, selection, bag_seed, None)?;
        let bag_logit = tape.scalar(fwd.bag_logits);
        Ok(Prediction {
            bag_logit,
            probability: sigmoid(bag_logit),
            instance_logits: InstanceLogits::new(tape.value(fwd.instance_logits).clone())?,
            selection: fwd.selection,
        })
    }
}
