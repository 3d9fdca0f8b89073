use super::{train_step, EquilibriumController, Norm, Optimizers, StepRecord, StepSettings};
use crate::data::{BatchSampler, Checkpoint, Dataset};
use crate::error::{Error, Result};
use crate::nn::{build_models, carry_schedule, ArchConfig, ModelParams};
use crate::optim::StallDetector;
use crate::rng::{streams, RunRng};
use crate::scalar::Scalar;

/// Everything that determines a training run besides the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub gamma: f64,
    pub lambda_k: f64,
    pub norm: Norm,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub seed: u64,
    /// Steps between checkpoints and observer calls; 0 disables them.
    pub checkpoint_interval: u64,
    /// Stalled steps before the learning rate is halved.
    pub patience: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchConfig::default(),
            gamma: 0.5,
            lambda_k: EquilibriumController::DEFAULT_LAMBDA_K,
            norm: Norm::L1,
            batch_size: 16,
            learning_rate: 1e-4,
            steps: 0,
            seed: 0,
            checkpoint_interval: 0,
            patience: StallDetector::DEFAULT_PATIENCE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        EquilibriumController::new(self.gamma, self.lambda_k)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::OutOfRange {
                what: "learning_rate",
                value: self.learning_rate,
                range: "(0, inf)",
            });
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(())
    }

    fn check_dataset(&self, dataset: &dyn Dataset) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let want = [self.arch.channels, self.arch.image_size, self.arch.image_size];
        if dataset.image_shape() != want {
            return Err(Error::Config(format!(
                "dataset images are {:?} but the model expects {want:?}",
                dataset.image_shape()
            )));
        }
        Ok(())
    }
}

/// Receives every step record, in order.
pub trait MetricsSink {
    fn record(&mut self, record: &StepRecord) -> Result<()>;
}

impl MetricsSink for Vec<StepRecord> {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

impl<S: MetricsSink + ?Sized> MetricsSink for &mut S {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        (**self).record(record)
    }
}

/// Called after every `checkpoint_interval` completed steps.
pub trait TrainObserver<T: Scalar> {
    fn on_interval(&mut self, trainer: &Trainer<T>) -> Result<()>;
}

pub struct NoObserver;

impl<T: Scalar> TrainObserver<T> for NoObserver {
    fn on_interval(&mut self, _: &Trainer<T>) -> Result<()> {
        Ok(())
    }
}

/// Complete mutable state of a run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    pub optimizers: Optimizers<T>,
    pub controller: EquilibriumController,
    pub stall: StallDetector,
    pub rng: RunRng,
    pub sampler: BatchSampler,
    /// Number of completed steps.
    pub step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig, dataset: &dyn Dataset) -> Result<Self> {
        config.validate()?;
        config.check_dataset(dataset)?;
        let params = build_models(&config.arch, config.seed)?;
        let optimizers = Optimizers::new(&params, config.learning_rate);
        Ok(Trainer {
            controller: EquilibriumController::new(config.gamma, config.lambda_k)?,
            stall: StallDetector::new(config.patience),
            rng: RunRng::new(config.seed, streams::TRAINING),
            sampler: BatchSampler::new(config.seed, dataset.len()),
            step: 0,
            params,
            optimizers,
            config,
        })
    }

    /// Continue a saved run. `steps` and `checkpoint_interval` come from
    /// `config`; everything else must agree with the checkpoint.
    pub fn resume(config: TrainConfig, checkpoint: Checkpoint<T>, dataset: &dyn Dataset) -> Result<Self> {
        config.validate()?;
        config.check_dataset(dataset)?;
        let saved = checkpoint.train_config();
        let same = TrainConfig {
            steps: config.steps,
            checkpoint_interval: config.checkpoint_interval,
            learning_rate: config.learning_rate,
            ..saved.clone()
        };
        if same != config {
            return Err(Error::Config(
                "run configuration differs from the checkpoint being resumed".into(),
            ));
        }
        if checkpoint.dataset_len != dataset.len() {
            return Err(Error::Config(format!(
                "checkpoint was trained on {} items, dataset has {}",
                checkpoint.dataset_len,
                dataset.len()
            )));
        }
        Ok(Trainer {
            sampler: BatchSampler::resume(checkpoint.seed, dataset.len(), checkpoint.sampler),
            rng: RunRng::from_state(&checkpoint.rng),
            step: checkpoint.step,
            params: checkpoint.params,
            optimizers: checkpoint.optimizers,
            controller: checkpoint.controller,
            stall: checkpoint.stall,
            config,
        })
    }

    pub fn carry(&self) -> f64 {
        if self.config.arch.use_vanishing_residuals {
            carry_schedule(self.step, self.config.arch.carry_decay_steps)
        } else {
            0.0
        }
    }

    /// Run one step and return its record.
    pub fn step_once(&mut self, dataset: &dyn Dataset) -> Result<StepRecord> {
        let settings = StepSettings {
            step: self.step,
            norm: self.config.norm,
            carry: self.carry(),
        };
        let batch = self.sampler.next_batch::<T>(dataset, self.config.batch_size)?;
        let record = train_step(
            &mut self.params,
            &mut self.optimizers,
            &mut self.controller,
            &batch,
            &mut self.rng,
            settings,
        )?;
        let lr = self.stall.maybe_decay(record.m_global, self.optimizers.learning_rate());
        self.optimizers.set_learning_rate(lr);
        self.step += 1;
        Ok(record)
    }

    /// Step until `config.steps` steps are complete.
    pub fn run(
        &mut self,
        dataset: &dyn Dataset,
        sink: &mut dyn MetricsSink,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<()> {
        while self.step < self.config.steps {
            let record = match self.step_once(dataset) {
                Ok(r) => r,
                Err(Error::Diverged(r)) => {
                    sink.record(&r)?;
                    return Err(Error::Diverged(r));
                }
                Err(e) => return Err(e),
            };
            sink.record(&record)?;
            let every = self.config.checkpoint_interval;
            if every > 0 && self.step.is_multiple_of(every) {
                observer.on_interval(self)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            params: self.params.clone(),
            optimizers: self.optimizers.clone(),
            controller: self.controller.clone(),
            stall: self.stall.clone(),
            norm: self.config.norm,
            batch_size: self.config.batch_size,
            seed: self.config.seed,
            step: self.step,
            rng: self.rng.state(),
            sampler: self.sampler.state(),
            dataset_len: self.sampler.dataset_len(),
        }
    }
}

/// Train from scratch for `config.steps` steps, streaming records into `sink`.
pub fn train_loop<T: Scalar>(
    config: &TrainConfig,
    dataset: &dyn Dataset,
    sink: &mut dyn MetricsSink,
) -> Result<Checkpoint<T>> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    trainer.run(dataset, sink, &mut NoObserver)?;
    Ok(trainer.checkpoint())
}
