//! The standard two-moons setup shared by the qualitative studies.

use crate::data::{make_synthetic, Dataset, Split, SyntheticKind};
use crate::error::Result;
use crate::model::{ModelSpec, Network};
use crate::train::{train, TrainConfig, TrajectoryRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct MoonsSetup {
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub depth: usize,
    pub width: usize,
    pub batchnorm: bool,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Epochs at which the learning rate drops by 10×.
    pub lr_drop_epochs: Vec<usize>,
}

impl Default for MoonsSetup {
    fn default() -> Self {
        MoonsSetup {
            n_train: 256,
            n_test: 4096,
            noise: 0.3,
            data_seed: 0,
            depth: 2,
            width: 128,
            batchnorm: true,
            epochs: 200,
            lr: 0.02,
            momentum: 0.9,
            lr_drop_epochs: vec![100, 150, 183],
        }
    }
}

/// A finished run of the standard setup.
pub struct MoonsRun {
    pub net: Network,
    pub train: Dataset,
    pub test: Dataset,
    pub record: TrajectoryRecord,
}

impl MoonsSetup {
    pub fn data(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            make_synthetic(SyntheticKind::TwoMoons, self.n_train, self.noise, self.data_seed, Split::Train)?,
            make_synthetic(SyntheticKind::TwoMoons, self.n_test, self.noise, self.data_seed, Split::Test)?,
        ))
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::mlp(2, self.depth, self.width, 2, true, self.batchnorm)
    }

    pub fn config(&self, batch_size: usize, weight_decay: f64, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::sgd(self.lr, self.momentum, batch_size, self.epochs);
        c.weight_decay = weight_decay;
        c.seed = seed;
        c.lr_drop_epochs = self.lr_drop_epochs.clone();
        c
    }

    /// Initialization and batch order both derive from `seed`.
    pub fn run(&self, batch_size: usize, weight_decay: f64, seed: u64) -> Result<MoonsRun> {
        let (train_set, test_set) = self.data()?;
        let (net, init) = Network::build(&self.spec(), seed)?;
        let record = train(&net, &init, &train_set, Some(&test_set), &self.config(batch_size, weight_decay, seed))?;
        Ok(MoonsRun { net, train: train_set, test: test_set, record })
    }
}
