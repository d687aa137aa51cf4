use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{Checkpoint, LossRecord, CHECKPOINT_FORMAT};
use super::config::{AblationMode, TrainConfig};
use super::graph::{batch_loss_and_grad, batch_loss_terms};
use super::loss::LossBreakdown;
use super::model::{ModelParams, BLOCK_NAMES};
use super::optim::{adamw_step, AdamWConfig, Moments};
use crate::autodiff::{finite_difference_terms, GradReport};
use crate::dataset::{AnnotationTuple, BatchItem, BatchSampler, DescriptorVocab, EmbeddingStore};
use crate::error::{Error, Result};
use crate::par::Executor;
use crate::rng::{self, Rng, RngState};

const OPTIMIZER: &str = "adamw";

/// Blocks that receive updates under `mode`. Unused blocks are left
/// untouched, including by weight decay.
pub fn trainable_blocks(mode: AblationMode) -> [bool; 12] {
    let mut on = [true; 12];
    match mode {
        AblationMode::Full => {}
        AblationMode::NoVoiceRes => on[1] = false,
        AblationMode::NoVadp => on[6..].fill(false),
        AblationMode::NoResmem => {
            on = [false; 12];
            on[3..6].fill(true);
        }
    }
    on
}

/// One standard-normal reparameterization draw per batch item.
pub fn draw_noise(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: DescriptorVocab,
    pub params: ModelParams,
    pub moments: Vec<Moments>,
    pub step: u64,
    pub rng: Rng,
    pub history: Vec<LossRecord>,
    pub data_checksum: u64,
}

impl TrainState {
    /// Fresh parameters drawn from the configured seed.
    pub fn init(config: TrainConfig, vocab: DescriptorVocab, store: &EmbeddingStore) -> Result<Self> {
        config.validate()?;
        let dims = config.resolve_dims(store.dim(), vocab.len())?;
        let mut rng = rng::seeded(config.seed);
        let params = ModelParams::init(dims, config.tau, &mut rng)?;
        let moments = params.blocks().iter().map(|m| Moments::zeros(m.data.len())).collect();
        Ok(Self {
            config,
            vocab,
            params,
            moments,
            step: 0,
            rng,
            history: Vec::new(),
            data_checksum: store.checksum(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.validate()?;
        Ok(Self {
            rng: ck.rng.restore()?,
            config: ck.config,
            vocab: ck.vocab,
            params: ck.params,
            moments: ck.moments,
            step: ck.step,
            history: ck.loss_history,
            data_checksum: ck.data_checksum,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            moments: self.moments.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            optimizer: OPTIMIZER.to_string(),
            data_checksum: self.data_checksum,
            loss_history: self.history.clone(),
        }
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.config.learning_rate,
            beta1: self.config.beta1,
            beta2: self.config.beta2,
            weight_decay: self.config.weight_decay,
            eps: self.config.adam_eps,
        }
    }

    /// One AdamW update on `batch`. Noise for the degree predictor is drawn
    /// from the state's generator.
    pub fn training_step(&mut self, batch: &[BatchItem], exec: &Executor) -> Result<LossBreakdown> {
        let eps = draw_noise(&mut self.rng, batch.len());
        let (loss, grads) =
            batch_loss_and_grad(&self.params, batch, &eps, &self.config, exec).map_err(|e| match e {
                Error::NonFinite { node, op } => Error::Numerical(format!(
                    "non-finite value at step {} (node {node}, {op})",
                    self.step + 1
                )),
                other => other,
            })?;
        let t = self.step + 1;
        let cfg = self.adamw();
        let on = trainable_blocks(self.config.mode);
        for (i, (block, g)) in self.params.blocks_mut().into_iter().zip(&grads).enumerate() {
            if on[i] {
                adamw_step(&mut block.data, g, &mut self.moments[i], t, &cfg)?;
            }
        }
        if self.params.blocks().iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical(format!("parameters became non-finite at step {t}")));
        }
        self.params.memory.check_slots()?;
        self.step = t;
        self.history.push(LossRecord {
            step: t,
            total: loss.total,
            rec: loss.rec,
            align: loss.align,
        });
        Ok(loss)
    }

    /// Trains until `config.steps` have been taken. `store` must be the
    /// corpus the state was created with.
    pub fn run(&mut self, store: &EmbeddingStore, tuples: &[AnnotationTuple], exec: &Executor) -> Result<()> {
        if store.checksum() != self.data_checksum {
            return Err(Error::Data(
                "embedding store differs from the one this run was started on".into(),
            ));
        }
        if store.dim() != self.params.memory.dim() {
            return Err(Error::dim(self.params.memory.dim(), store.dim(), "embedding store"));
        }
        if self.step >= self.config.steps {
            return Ok(());
        }
        let sampler = BatchSampler::new(store, tuples)?;
        if let Some(e) = self.vocab_check(tuples) {
            return Err(e);
        }
        while self.step < self.config.steps {
            let batch = sampler.sample(self.config.batch_size, &mut self.rng);
            let loss = self.training_step(&batch, exec)?;
            if self.step.is_multiple_of(100) || self.step == self.config.steps {
                log::info!(
                    "step {} total {:.6} rec {:.6} align {:.6}",
                    self.step,
                    loss.total,
                    loss.rec,
                    loss.align
                );
            }
        }
        Ok(())
    }

    fn vocab_check(&self, tuples: &[AnnotationTuple]) -> Option<Error> {
        tuples
            .iter()
            .flat_map(|t| t.label.descriptors().iter().copied())
            .find_map(|id| self.vocab.check(id).err())
    }
}

/// Trains from scratch and returns the final checkpoint.
pub fn train(
    config: TrainConfig,
    vocab: DescriptorVocab,
    store: &EmbeddingStore,
    tuples: &[AnnotationTuple],
    exec: &Executor,
) -> Result<Checkpoint> {
    let mut state = TrainState::init(config, vocab, store)?;
    state.run(store, tuples, exec)?;
    Ok(state.checkpoint())
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,loss_total,loss_rec,loss_align\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.total, r.rec, r.align);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Compares tape gradients of the batch loss with central differences.
pub fn gradcheck(
    params: &ModelParams,
    batch: &[BatchItem],
    eps: &[f64],
    config: &TrainConfig,
    h: f64,
    tolerance: f64,
) -> Result<GradReport> {
    let (_, grads) = batch_loss_and_grad(params, batch, eps, config, &Executor::sequential())?;
    let theta = params.flatten();
    let mut probe = params.clone();
    let numeric = finite_difference_terms(
        |x| {
            probe.set_flat(x)?;
            batch_loss_terms(&probe, batch, eps, config)
        },
        &theta,
        h,
    )?;
    let mut analytic = Vec::with_capacity(12);
    let mut fd = Vec::with_capacity(12);
    let mut off = 0;
    for (name, g) in BLOCK_NAMES.iter().zip(grads) {
        let n = g.len();
        fd.push((name.to_string(), numeric[off..off + n].to_vec()));
        analytic.push((name.to_string(), g));
        off += n;
    }
    Ok(GradReport::compare(&analytic, &fd, tolerance))
}

/// A small, fully seeded gradient-certification problem: `D = 8`, `M = 4`,
/// `N = 2`, `V = 3`, `H = 8`, three items with Gaussian embeddings.
#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub params: ModelParams,
    pub batch: Vec<BatchItem>,
    pub eps: Vec<f64>,
    pub config: TrainConfig,
}

pub fn gradcheck_case(seed: u64, mode: AblationMode) -> Result<GradcheckCase> {
    const D: usize = 8;
    const V: usize = 3;
    let mut rng = rng::seeded(seed);
    let config = TrainConfig {
        main_slots: 4,
        residual_slots: 2,
        hidden: Some(8),
        mode,
        ..TrainConfig::default()
    };
    let params = ModelParams::init(config.resolve_dims(D, V)?, 1.0, &mut rng)?;
    let gauss = |rng: &mut Rng| -> Vec<f64> { (0..D).map(|_| StandardNormal.sample(rng)).collect() };
    let batch = (0..3)
        .map(|_| BatchItem {
            source: gauss(&mut rng),
            target: gauss(&mut rng),
            descriptor: rng.random_range(0..V),
        })
        .collect();
    let eps = draw_noise(&mut rng, 3);
    Ok(GradcheckCase {
        params,
        batch,
        eps,
        config,
    })
}
