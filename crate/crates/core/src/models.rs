//! Probabilistic mortality classifier `f(x) = sigmoid(g(x))`, where `g` is
//! either a linear score (logistic regression) or a single-hidden-layer ReLU
//! network, trained with Adam on binary cross-entropy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, Metrics, THRESHOLD};
use crate::nn::{sigmoid, BatchMode, FitOptions, Loss, Network};

/// Smallest probability `predict_proba` returns; keeps outputs strictly
/// inside (0, 1) even when the logit saturates.
const PROB_FLOOR: f64 = f64::MIN_POSITIVE;
const PROB_CEIL: f64 = 1.0 - f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierVariant {
    Logistic,
    FeedForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub variant: ClassifierVariant,
    /// 0 for the logistic variant.
    pub hidden_nodes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub batch_mode: BatchMode,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::feed_forward(3, 250)
    }
}

impl ClassifierConfig {
    pub fn logistic(epochs: usize) -> Self {
        ClassifierConfig {
            variant: ClassifierVariant::Logistic,
            hidden_nodes: 0,
            epochs,
            learning_rate: 0.01,
            seed: 0,
            batch_mode: BatchMode::FullBatch,
        }
    }

    pub fn feed_forward(hidden_nodes: usize, epochs: usize) -> Self {
        ClassifierConfig {
            variant: ClassifierVariant::FeedForward,
            hidden_nodes,
            epochs,
            ..ClassifierConfig::logistic(epochs)
        }
    }

    /// Hidden size 0 is read as logistic regression.
    pub fn with_hidden(hidden_nodes: usize, epochs: usize) -> Self {
        if hidden_nodes == 0 {
            ClassifierConfig::logistic(epochs)
        } else {
            ClassifierConfig::feed_forward(hidden_nodes, epochs)
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

    pub fn validate(&self) -> Result<()> {
        match (self.variant, self.hidden_nodes) {
            (ClassifierVariant::Logistic, 0) => {}
            (ClassifierVariant::Logistic, h) => return Err(Error::InvalidConfig(format!("logistic model with {h} hidden nodes"))),
            (ClassifierVariant::FeedForward, 0) => return Err(Error::InvalidConfig("feed-forward model needs hidden nodes".into())),
            _ => {}
        }
        if self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("epochs and learning rate must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn dims(&self, inputs: usize) -> Vec<usize> {
        match self.variant {
            ClassifierVariant::Logistic => vec![inputs, 1],
            ClassifierVariant::FeedForward => vec![inputs, self.hidden_nodes, 1],
        }
    }

    pub fn param_count(&self, inputs: usize) -> usize {
        self.dims(inputs).windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Default grid: epochs {100, 150, 200, 250} x hidden nodes {0, 3, 5, 10}.
pub fn default_grid(seed: u64) -> Vec<ClassifierConfig> {
    [0, 3, 5, 10]
        .into_iter()
        .flat_map(|h| {
            [100, 150, 200, 250]
                .into_iter()
                .map(move |e| ClassifierConfig::with_hidden(h, e).with_seed(seed))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassifierFile", into = "ClassifierFile")]
pub struct ClassifierModel {
    variant: ClassifierVariant,
    network: Network,
    feature_names: Vec<String>,
    scaler_ref: Option<String>,
}

impl ClassifierModel {
    pub fn new(variant: ClassifierVariant, network: Network, feature_names: Vec<String>) -> Result<Self> {
        if network.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: network.output_dim(),
            });
        }
        let expected_layers = match variant {
            ClassifierVariant::Logistic => 1,
            ClassifierVariant::FeedForward => 2,
        };
        if network.layers().len() != expected_layers {
            return Err(Error::InvalidConfig(format!(
                "{variant:?} classifier expects {expected_layers} layer(s), got {}",
                network.layers().len()
            )));
        }
        if feature_names.len() != network.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: network.input_dim(),
                got: feature_names.len(),
            });
        }
        Ok(ClassifierModel {
            variant,
            network,
            feature_names,
            scaler_ref: None,
        })
    }

    pub fn variant(&self) -> ClassifierVariant {
        self.variant
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.network.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    pub fn scaler_ref(&self) -> Option<&str> {
        self.scaler_ref.as_deref()
    }

    pub fn set_scaler_ref(&mut self, r: Option<String>) {
        self.scaler_ref = r;
    }

    /// The pre-sigmoid score `g(x)`.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        Ok(self.network.forward(x)?[0])
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(clamp_prob(sigmoid(self.logit(x)?)))
    }

    /// Exact gradient of `predict_proba` at `x`.
    pub fn gradient_wrt_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = sigmoid(self.logit(x)?);
        self.network.input_gradient(x, &[p * (1.0 - p)])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

/// Serialised parameter layout shared by the classifier and the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub dims: Vec<usize>,
    /// One row-major `outputs x inputs` array per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&Network> for NetworkRecord {
    fn from(net: &Network) -> Self {
        NetworkRecord {
            dims: net.dims(),
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers().iter().map(|l| l.biases.clone()).collect(),
        }
    }
}

impl TryFrom<NetworkRecord> for Network {
    type Error = Error;

    fn try_from(rec: NetworkRecord) -> Result<Network> {
        if rec.dims.len() < 2 || rec.weights.len() != rec.dims.len() - 1 || rec.biases.len() != rec.weights.len() {
            return Err(Error::InvalidConfig(format!(
                "dims {:?} do not match {} weight and {} bias arrays",
                rec.dims,
                rec.weights.len(),
                rec.biases.len()
            )));
        }
        let layers = rec
            .dims
            .windows(2)
            .zip(rec.weights.into_iter().zip(rec.biases))
            .map(|(d, (weights, biases))| crate::nn::Dense {
                inputs: d[0],
                outputs: d[1],
                weights,
                biases,
            })
            .collect();
        Network::from_layers(layers)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierFile {
    variant: ClassifierVariant,
    #[serde(flatten)]
    network: NetworkRecord,
    hidden_activation: String,
    output_activation: String,
    feature_names: Vec<String>,
    scaler_ref: Option<String>,
}

impl From<ClassifierModel> for ClassifierFile {
    fn from(m: ClassifierModel) -> Self {
        ClassifierFile {
            variant: m.variant,
            network: NetworkRecord::from(&m.network),
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
            feature_names: m.feature_names,
            scaler_ref: m.scaler_ref,
        }
    }
}

impl TryFrom<ClassifierFile> for ClassifierModel {
    type Error = Error;

    fn try_from(f: ClassifierFile) -> Result<Self> {
        if f.output_activation != "sigmoid" || f.hidden_activation != "relu" {
            return Err(Error::InvalidConfig(format!(
                "unsupported activations {}/{}",
                f.hidden_activation, f.output_activation
            )));
        }
        let mut m = ClassifierModel::new(f.variant, Network::try_from(f.network)?, f.feature_names)?;
        m.scaler_ref = f.scaler_ref;
        Ok(m)
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<()> {
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("training data contains missing or non-finite values".into()));
    }
    Ok(())
}

/// Trains on raw row vectors. Returns the model and its per-epoch loss
/// history (loss before each epoch, then the final loss).
pub fn train_classifier_rows(
    rows: &[Vec<f64>],
    labels: &[u8],
    feature_names: Vec<String>,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierModel, Vec<f64>)> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    check_rows(rows)?;
    let p = feature_names.len();
    let mut net = Network::new(&cfg.dims(p), cfg.seed)?;
    let targets: Vec<Vec<f64>> = labels.iter().map(|&y| vec![f64::from(y)]).collect();
    let history = net.fit(
        rows,
        &targets,
        Loss::LogisticCrossEntropy,
        FitOptions {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            batch: cfg.batch_mode,
            seed: cfg.seed,
        },
    )?;
    Ok((ClassifierModel::new(cfg.variant, net, feature_names)?, history))
}

pub fn train_classifier(train: &Dataset, cfg: &ClassifierConfig) -> Result<ClassifierModel> {
    Ok(train_classifier_rows(&train.rows(), &train.labels(), train.feature_names(), cfg)?.0)
}

pub fn predict_rows(m: &ClassifierModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter().map(|x| m.predict_proba(x)).collect()
}

pub fn evaluate_rows(m: &ClassifierModel, rows: &[Vec<f64>], labels: &[u8]) -> Result<Metrics> {
    let scores = predict_rows(m, rows)?;
    Ok(Metrics {
        accuracy: metrics::accuracy(&scores, labels, THRESHOLD)?,
        auc: metrics::auc(&scores, labels)?,
    })
}

pub fn evaluate(m: &ClassifierModel, ds: &Dataset) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    evaluate_rows(m, &ds.rows(), &ds.labels())
}

/// Accuracy alone; defined for single-class data.
pub fn evaluate_accuracy(m: &ClassifierModel, ds: &Dataset) -> Result<f64> {
    let scores = predict_rows(m, &ds.rows())?;
    metrics::accuracy(&scores, &ds.labels(), THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: ClassifierConfig,
    pub train: Metrics,
    pub validation: Metrics,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub best: ClassifierModel,
    pub best_index: usize,
    pub table: Vec<GridRow>,
}

/// Trains every configuration (in parallel) and keeps the one with the
/// highest validation AUC; ties go to fewer parameters, then fewer epochs,
/// then grid order.
pub fn grid_search(train: &Dataset, val: &Dataset, grid: &[ClassifierConfig]) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let rows = train.rows();
    let labels = train.labels();
    let val_rows = val.rows();
    let val_labels = val.labels();
    let names = train.feature_names();

    let trained: Vec<(ClassifierModel, GridRow)> = grid
        .par_iter()
        .map(|cfg| {
            let (model, _) = train_classifier_rows(&rows, &labels, names.clone(), cfg)?;
            let row = GridRow {
                config: cfg.clone(),
                train: evaluate_rows(&model, &rows, &labels)?,
                validation: evaluate_rows(&model, &val_rows, &val_labels)?,
            };
            Ok((model, row))
        })
        .collect::<Result<_>>()?;

    let p = names.len();
    let best_index = (0..trained.len())
        .min_by(|&a, &b| {
            let (ra, rb) = (&trained[a].1, &trained[b].1);
            rb.validation
                .auc
                .total_cmp(&ra.validation.auc)
                .then(ra.config.param_count(p).cmp(&rb.config.param_count(p)))
                .then(ra.config.epochs.cmp(&rb.config.epochs))
                .then(a.cmp(&b))
        })
        .expect("grid is non-empty");
    let (models, table): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok(GridSearch {
        best: models.into_iter().nth(best_index).expect("index in range"),
        best_index,
        table,
    })
}
