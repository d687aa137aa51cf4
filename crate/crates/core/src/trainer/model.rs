use serde::{Deserialize, Serialize};

use super::config::Dims;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::memnet::{self, DescriptorEncoderParams, ResMemParams};
use crate::rng::Rng;
use crate::vadp::VadpParams;

/// Names of the trainable parameter blocks, in [`ModelParams::blocks`] order.
pub const BLOCK_NAMES: [&str; 12] = [
    "memory.main",
    "memory.residual",
    "memory.keys",
    "encoder.table",
    "encoder.weight",
    "encoder.bias",
    "vadp.hidden_weight",
    "vadp.hidden_bias",
    "vadp.mean_weight",
    "vadp.mean_bias",
    "vadp.logvar_weight",
    "vadp.logvar_bias",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub memory: ResMemParams,
    pub encoder: DescriptorEncoderParams,
    pub vadp: VadpParams,
}

impl ModelParams {
    pub fn init(dims: Dims, tau: f64, rng: &mut Rng) -> Result<Self> {
        let (mut memory, encoder) = memnet::init_params(dims.main, dims.residual, dims.dim, dims.vocab, rng)?;
        memory.tau = tau;
        let vadp = VadpParams::init(dims.dim, dims.hidden, rng)?;
        Ok(Self { memory, encoder, vadp })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            main: self.memory.main.rows,
            residual: self.memory.residual.rows,
            dim: self.memory.dim(),
            hidden: self.vadp.hidden(),
            vocab: self.encoder.vocab_size(),
        }
    }

    pub fn blocks(&self) -> [&Matrix; 12] {
        [
            &self.memory.main,
            &self.memory.residual,
            &self.memory.keys,
            &self.encoder.table,
            &self.encoder.weight,
            &self.encoder.bias,
            &self.vadp.hidden_weight,
            &self.vadp.hidden_bias,
            &self.vadp.mean_weight,
            &self.vadp.mean_bias,
            &self.vadp.logvar_weight,
            &self.vadp.logvar_bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.memory.main,
            &mut self.memory.residual,
            &mut self.memory.keys,
            &mut self.encoder.table,
            &mut self.encoder.weight,
            &mut self.encoder.bias,
            &mut self.vadp.hidden_weight,
            &mut self.vadp.hidden_bias,
            &mut self.vadp.mean_weight,
            &mut self.vadp.mean_bias,
            &mut self.vadp.logvar_weight,
            &mut self.vadp.logvar_bias,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|m| m.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|m| m.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::dim(self.num_parameters(), flat.len(), "flat parameters"));
        }
        let mut off = 0;
        for m in self.blocks_mut() {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Shape and slot-norm checks.
    pub fn validate(&self) -> Result<()> {
        self.memory.validate()?;
        let d = self.memory.dim();
        let e = &self.encoder;
        if e.table.cols != d || e.weight.rows != d || e.weight.cols != d || e.bias.cols != d {
            return Err(Error::dim(d, e.table.cols, "descriptor encoder width"));
        }
        if self.vadp.input_dim() != 3 * d {
            return Err(Error::dim(3 * d, self.vadp.input_dim(), "VADP input width"));
        }
        if self.blocks().iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(())
    }
}
