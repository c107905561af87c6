//! Indirect feature estimator: a regression `H(x_U, x_D) -> x_I` with a
//! linear output head, used to propagate fluid changes into vitals and labs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeaturePartition};
use crate::error::{Error, Result};
use crate::metrics::{self, RegressionMetrics};
use crate::models::NetworkRecord;
use crate::nn::{BatchMode, FitOptions, Loss, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfeVariant {
    Linear,
    FeedForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfeConfig {
    pub variant: IfeVariant,
    pub hidden_nodes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for IfeConfig {
    fn default() -> Self {
        IfeConfig::feed_forward(10, 250)
    }
}

impl IfeConfig {
    pub fn linear(epochs: usize) -> Self {
        IfeConfig {
            variant: IfeVariant::Linear,
            hidden_nodes: 0,
            epochs,
            learning_rate: 0.01,
            seed: 0,
        }
    }

    pub fn feed_forward(hidden_nodes: usize, epochs: usize) -> Self {
        IfeConfig {
            variant: IfeVariant::FeedForward,
            hidden_nodes,
            ..IfeConfig::linear(epochs)
        }
    }

    pub fn with_hidden(hidden_nodes: usize, epochs: usize) -> Self {
        if hidden_nodes == 0 {
            IfeConfig::linear(epochs)
        } else {
            IfeConfig::feed_forward(hidden_nodes, epochs)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    fn validate(&self) -> Result<()> {
        match (self.variant, self.hidden_nodes) {
            (IfeVariant::Linear, h) if h != 0 => return Err(Error::InvalidConfig(format!("linear estimator with {h} hidden nodes"))),
            (IfeVariant::FeedForward, 0) => return Err(Error::InvalidConfig("feed-forward estimator needs hidden nodes".into())),
            _ => {}
        }
        if self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("epochs and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Hidden sizes {0, 3, 5, 10} at 250 epochs.
pub fn default_ife_grid(seed: u64) -> Vec<IfeConfig> {
    [0, 3, 5, 10]
        .into_iter()
        .map(|h| IfeConfig::with_hidden(h, 250).with_seed(seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IfeFile", into = "IfeFile")]
pub struct IfeModel {
    variant: IfeVariant,
    network: Network,
    u_indices: Vec<usize>,
    d_indices: Vec<usize>,
    i_indices: Vec<usize>,
    feature_names: Vec<String>,
}

impl IfeModel {
    /// `network` maps `[x_U; x_D]` (in index order) to `x_I`.
    pub fn new(variant: IfeVariant, network: Network, partition: &FeaturePartition, feature_names: Vec<String>) -> Result<Self> {
        partition.validate(feature_names.len())?;
        let n_in = partition.u_indices.len() + partition.d_indices.len();
        if network.input_dim() != n_in {
            return Err(Error::DimensionMismatch {
                expected: n_in,
                got: network.input_dim(),
            });
        }
        if network.output_dim() != partition.i_indices.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.i_indices.len(),
                got: network.output_dim(),
            });
        }
        Ok(IfeModel {
            variant,
            network,
            u_indices: partition.u_indices.clone(),
            d_indices: partition.d_indices.clone(),
            i_indices: partition.i_indices.clone(),
            feature_names,
        })
    }

    pub fn variant(&self) -> IfeVariant {
        self.variant
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn partition(&self) -> FeaturePartition {
        FeaturePartition {
            u_indices: self.u_indices.clone(),
            i_indices: self.i_indices.clone(),
            d_indices: self.d_indices.clone(),
        }
    }

    fn input(&self, x_u: &[f64], x_d: &[f64]) -> Result<Vec<f64>> {
        if x_u.len() != self.u_indices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.u_indices.len(),
                got: x_u.len(),
            });
        }
        if x_d.len() != self.d_indices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.d_indices.len(),
                got: x_d.len(),
            });
        }
        Ok(x_u.iter().chain(x_d).copied().collect())
    }

    /// Unclamped estimate of the indirect block.
    pub fn predict_indirect(&self, x_u: &[f64], x_d: &[f64]) -> Result<Vec<f64>> {
        self.network.forward(&self.input(x_u, x_d)?)
    }

    /// `|I| x |D|` Jacobian of `predict_indirect` with respect to `x_d`.
    pub fn ife_jacobian(&self, x_u: &[f64], x_d: &[f64]) -> Result<Vec<Vec<f64>>> {
        let full = self.network.jacobian(&self.input(x_u, x_d)?)?;
        let n_u = self.u_indices.len();
        Ok(full.into_iter().map(|row| row[n_u..].to_vec()).collect())
    }

    /// Same as `predict_indirect` on a full feature vector.
    pub fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x_u = FeaturePartition::gather(&self.u_indices, x);
        let x_d = FeaturePartition::gather(&self.d_indices, x);
        self.predict_indirect(&x_u, &x_d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IfeFile {
    variant: IfeVariant,
    #[serde(flatten)]
    network: NetworkRecord,
    hidden_activation: String,
    output_activation: String,
    feature_names: Vec<String>,
    u_indices: Vec<usize>,
    d_indices: Vec<usize>,
    i_indices: Vec<usize>,
}

impl From<IfeModel> for IfeFile {
    fn from(m: IfeModel) -> Self {
        IfeFile {
            variant: m.variant,
            network: NetworkRecord::from(&m.network),
            hidden_activation: "relu".into(),
            output_activation: "none".into(),
            feature_names: m.feature_names,
            u_indices: m.u_indices,
            d_indices: m.d_indices,
            i_indices: m.i_indices,
        }
    }
}

impl TryFrom<IfeFile> for IfeModel {
    type Error = Error;

    fn try_from(f: IfeFile) -> Result<Self> {
        if f.output_activation != "none" || f.hidden_activation != "relu" {
            return Err(Error::InvalidConfig(format!(
                "unsupported activations {}/{}",
                f.hidden_activation, f.output_activation
            )));
        }
        let partition = FeaturePartition {
            u_indices: f.u_indices,
            i_indices: f.i_indices,
            d_indices: f.d_indices,
        };
        IfeModel::new(f.variant, Network::try_from(f.network)?, &partition, f.feature_names)
    }
}

fn split_rows(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let p = &ds.partition;
    ds.records
        .iter()
        .map(|r| {
            let mut input = FeaturePartition::gather(&p.u_indices, &r.x);
            input.extend(FeaturePartition::gather(&p.d_indices, &r.x));
            (input, FeaturePartition::gather(&p.i_indices, &r.x))
        })
        .unzip()
}

/// Fits the estimator by minimising mean squared error over the indirect
/// block with full-batch Adam.
pub fn train_ife(train: &Dataset, cfg: &IfeConfig) -> Result<IfeModel> {
    cfg.validate()?;
    let p = &train.partition;
    if p.i_indices.is_empty() {
        return Err(Error::EmptyIndirectBlock);
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.records.iter().flat_map(|r| &r.x).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("training data contains missing or non-finite values".into()));
    }
    let (inputs, targets) = split_rows(train);
    let n_in = p.u_indices.len() + p.d_indices.len();
    let dims = match cfg.variant {
        IfeVariant::Linear => vec![n_in, p.i_indices.len()],
        IfeVariant::FeedForward => vec![n_in, cfg.hidden_nodes, p.i_indices.len()],
    };
    let mut net = Network::new(&dims, cfg.seed)?;
    net.fit(
        &inputs,
        &targets,
        Loss::MeanSquared,
        FitOptions {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            batch: BatchMode::FullBatch,
            seed: cfg.seed,
        },
    )?;
    IfeModel::new(cfg.variant, net, p, train.feature_names())
}

/// MSE and MAE pooled over every indirect feature of every record.
pub fn evaluate_ife(m: &IfeModel, ds: &Dataset) -> Result<RegressionMetrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.partition != m.partition() {
        return Err(Error::InvalidPartition("dataset partition differs from the estimator's".into()));
    }
    let (inputs, targets) = split_rows(ds);
    let preds: Vec<Vec<f64>> = inputs.iter().map(|x| m.network.forward(x)).collect::<Result<_>>()?;
    metrics::regression_metrics(&preds, &targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfeGridRow {
    pub config: IfeConfig,
    pub train: RegressionMetrics,
    pub validation: RegressionMetrics,
}

#[derive(Debug, Clone)]
pub struct IfeGridSearch {
    pub best: IfeModel,
    pub best_index: usize,
    pub table: Vec<IfeGridRow>,
}

/// Selects the estimator with the lowest validation MSE (ties: grid order).
pub fn ife_grid_search(train: &Dataset, val: &Dataset, grid: &[IfeConfig]) -> Result<IfeGridSearch> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let trained: Vec<(IfeModel, IfeGridRow)> = grid
        .par_iter()
        .map(|cfg| {
            let m = train_ife(train, cfg)?;
            let row = IfeGridRow {
                config: cfg.clone(),
                train: evaluate_ife(&m, train)?,
                validation: evaluate_ife(&m, val)?,
            };
            Ok((m, row))
        })
        .collect::<Result<_>>()?;
    let best_index = (0..trained.len())
        .min_by(|&a, &b| trained[a].1.validation.mse.total_cmp(&trained[b].1.validation.mse).then(a.cmp(&b)))
        .expect("grid is non-empty");
    let (models, table): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok(IfeGridSearch {
        best: models.into_iter().nth(best_index).expect("index in range"),
        best_index,
        table,
    })
}
