//! The boosting loop: losses, gradients, bagging, shrinkage and the trained
//! [`Model`].

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BinMapper, BinnedDataset, ColumnData, Dataset};
use crate::error::{validation, Error, Result};
use crate::tree::{grow_tree, Tree};

/// Loss being minimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "binary-logloss", alias = "binary")]
    BinaryLogloss,
    #[serde(rename = "mse", alias = "regression")]
    Mse,
    #[serde(rename = "mae")]
    Mae,
}

/// Training parameters. [`Params::default`] is the stock LightGBM regime;
/// [`crate::fsl::fsl_preset`] is the few-shot regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub extra_trees: bool,
    pub num_leaves: usize,
    #[serde(alias = "learning_rate")]
    pub eta: f64,
    pub min_data_in_leaf: usize,
    pub feature_fraction: f64,
    pub bagging_fraction: f64,
    pub bagging_freq: usize,
    pub min_data_per_group: usize,
    pub cat_l2: f64,
    pub cat_smooth: f64,
    pub max_cat_to_onehot: usize,
    pub min_data_in_bin: usize,
    pub max_bin: usize,
    pub n_rounds: usize,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            extra_trees: false,
            num_leaves: 31,
            eta: 0.1,
            min_data_in_leaf: 20,
            feature_fraction: 1.0,
            bagging_fraction: 1.0,
            bagging_freq: 0,
            min_data_per_group: 100,
            cat_l2: 10.0,
            cat_smooth: 10.0,
            max_cat_to_onehot: 4,
            min_data_in_bin: 3,
            max_bin: 255,
            n_rounds: 100,
            objective: Objective::BinaryLogloss,
            seed: 0,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let fraction_ok = |f: f64| f > 0.0 && f <= 1.0;
        if self.min_data_in_leaf < 1 {
            return Err(validation("min_data_in_leaf must be at least 1"));
        }
        if self.num_leaves < 2 {
            return Err(validation("num_leaves must be at least 2"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(validation("eta must lie in (0, 1]"));
        }
        if !fraction_ok(self.feature_fraction) {
            return Err(validation("feature_fraction must lie in (0, 1]"));
        }
        if !fraction_ok(self.bagging_fraction) {
            return Err(validation("bagging_fraction must lie in (0, 1]"));
        }
        if !(self.cat_l2 >= 0.0 && self.cat_l2.is_finite()) {
            return Err(validation("cat_l2 must be a non-negative number"));
        }
        if !(self.cat_smooth >= 0.0 && self.cat_smooth.is_finite()) {
            return Err(validation("cat_smooth must be a non-negative number"));
        }
        if self.max_bin < 2 {
            return Err(validation("max_bin must be at least 2"));
        }
        if self.min_data_in_bin < 1 {
            return Err(validation("min_data_in_bin must be at least 1"));
        }
        Ok(())
    }
}

/// First and second derivative of the loss at one row. `grad` follows the
/// `score - target` sign convention, so leaves move by `-G/H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientPair {
    pub grad: f64,
    pub hess: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Margin clamp that keeps probabilities strictly inside (0, 1).
const MAX_MARGIN: f64 = 35.0;
/// Log-odds used for an all-one-class binary target.
const MAX_BASE_LOGODDS: f64 = 10.0;

pub fn compute_gradients(
    objective: Objective,
    targets: &[f64],
    scores: &[f64],
) -> Vec<GradientPair> {
    debug_assert_eq!(targets.len(), scores.len());
    targets
        .iter()
        .zip(scores)
        .map(|(&y, &s)| match objective {
            Objective::BinaryLogloss => {
                let p = sigmoid(s);
                GradientPair {
                    grad: p - y,
                    hess: p * (1.0 - p),
                }
            }
            Objective::Mse => GradientPair {
                grad: s - y,
                hess: 1.0,
            },
            Objective::Mae => GradientPair {
                grad: if s > y {
                    1.0
                } else if s < y {
                    -1.0
                } else {
                    0.0
                },
                hess: 1.0,
            },
        })
        .collect()
}

fn check_targets(objective: Objective, targets: &[f64]) -> Result<()> {
    match objective {
        Objective::BinaryLogloss => {
            if let Some(bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
                return Err(validation(format!(
                    "binary-logloss needs targets in {{0, 1}}, found {bad}"
                )));
            }
        }
        Objective::Mse | Objective::Mae => {
            if targets.iter().any(|y| !y.is_finite()) {
                return Err(validation("regression targets must be finite"));
            }
        }
    }
    Ok(())
}

/// Initial score: mean target for regression, clamped log-odds of the
/// positive rate for binary-logloss.
pub fn base_score(objective: Objective, targets: &[f64]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    match objective {
        Objective::Mse | Objective::Mae => mean,
        Objective::BinaryLogloss => {
            if mean <= 0.0 {
                -MAX_BASE_LOGODDS
            } else if mean >= 1.0 {
                MAX_BASE_LOGODDS
            } else {
                (mean / (1.0 - mean))
                    .ln()
                    .clamp(-MAX_BASE_LOGODDS, MAX_BASE_LOGODDS)
            }
        }
    }
}

/// Number of rows in each bag, `floor(bagging_fraction * n)` but at least one.
pub fn bag_size(params: &Params, n: usize) -> usize {
    ((params.bagging_fraction * n as f64).floor() as usize).clamp(1, n)
}

fn feature_sample_size(params: &Params, n_features: usize) -> usize {
    ((params.feature_fraction * n_features as f64).round() as usize).clamp(1, n_features.max(1))
}

/// Name and bin mapper of one training feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    pub mapper: BinMapper,
}

/// Per-iteration record kept alongside the trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub rows_used: usize,
    pub features_used: Vec<usize>,
}

/// A trained boosted ensemble. Serializes as a versioned model document;
/// the per-round log is not persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelDocument", try_from = "ModelDocument")]
pub struct Model {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub objective: Objective,
    pub params: Params,
    pub features: Vec<FeatureInfo>,
    pub rounds: Vec<RoundLog>,
}

/// Boosts `params.n_rounds` trees on a binned dataset.
pub fn train(bds: &BinnedDataset, params: &Params) -> Result<Model> {
    params.validate()?;
    let n = bds.n_rows();
    if n == 0 {
        return Err(validation("cannot train on an empty dataset"));
    }
    check_targets(params.objective, &bds.target)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let base = base_score(params.objective, &bds.target);
    let mut scores = vec![base; n];
    let all_rows: Vec<usize> = (0..n).collect();
    let bagging = params.bagging_freq > 0;
    let mut bag: Vec<usize> = all_rows.clone();
    let n_features = bds.n_features();
    let n_sampled = feature_sample_size(params, n_features);

    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut rounds = Vec::with_capacity(params.n_rounds);
    for iter in 0..params.n_rounds {
        let grads = compute_gradients(params.objective, &bds.target, &scores);
        if bagging && iter % params.bagging_freq == 0 {
            bag = sample(&mut rng, n, bag_size(params, n)).into_vec();
            bag.sort_unstable();
        }
        let mut features = sample(&mut rng, n_features, n_sampled).into_vec();
        features.sort_unstable();

        let tree = grow_tree(bds, &grads, &bag, &features, params, &mut rng);
        for (i, s) in scores.iter_mut().enumerate() {
            *s += params.eta * tree.predict_bins(|f| bds.features[f].bins[i]);
        }
        rounds.push(RoundLog {
            rows_used: bag.len(),
            features_used: features,
        });
        trees.push(tree);
    }

    Ok(Model {
        trees,
        base_score: base,
        objective: params.objective,
        params: params.clone(),
        features: bds
            .features
            .iter()
            .map(|f| FeatureInfo {
                name: f.name.clone(),
                mapper: f.mapper.clone(),
            })
            .collect(),
        rounds,
    })
}

const MODEL_FORMAT: &str = "fewboost-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    objective: Objective,
    base_score: f64,
    params: Params,
    features: Vec<FeatureInfo>,
    trees: Vec<Tree>,
}

impl From<Model> for ModelDocument {
    fn from(m: Model) -> Self {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            objective: m.objective,
            base_score: m.base_score,
            params: m.params,
            features: m.features,
            trees: m.trees,
        }
    }
}

impl TryFrom<ModelDocument> for Model {
    type Error = String;

    fn try_from(doc: ModelDocument) -> std::result::Result<Self, String> {
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            ));
        }
        Ok(Model {
            trees: doc.trees,
            base_score: doc.base_score,
            objective: doc.objective,
            params: doc.params,
            features: doc.features,
            rounds: Vec::new(),
        })
    }
}

impl Model {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Raw additive score `base + eta * sum(tree outputs)` from bin lookups.
    fn margin_bins(&self, bin_of: impl Fn(usize) -> u32) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_bins(&bin_of)).sum();
        self.base_score + self.params.eta * sum
    }

    fn link(&self, margin: f64) -> f64 {
        match self.objective {
            Objective::BinaryLogloss => sigmoid(margin.clamp(-MAX_MARGIN, MAX_MARGIN)),
            Objective::Mse | Objective::Mae => margin,
        }
    }

    /// Scores raw feature vectors (categoricals as codes, `NaN` missing).
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|row| {
                if row.len() != self.n_features() {
                    return Err(validation(format!(
                        "row has {} features, model expects {}",
                        row.len(),
                        self.n_features()
                    )));
                }
                Ok(self.link(self.margin_bins(|f| self.features[f].mapper.bin_of(row[f]))))
            })
            .collect()
    }

    /// Pre-link additive scores for raw feature vectors.
    pub fn predict_margin(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|row| {
                if row.len() != self.n_features() {
                    return Err(validation("row arity does not match the model"));
                }
                Ok(self.margin_bins(|f| self.features[f].mapper.bin_of(row[f])))
            })
            .collect()
    }

    /// Scores the rows of a dataset whose columns are matched to the model's
    /// features by name; categorical levels are matched by their string.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let bins = self.bin_dataset(ds)?;
        Ok((0..ds.n_rows())
            .map(|r| self.link(self.margin_bins(|f| bins[f][r])))
            .collect())
    }

    fn bin_dataset(&self, ds: &Dataset) -> Result<Vec<Vec<u32>>> {
        self.features
            .iter()
            .map(|info| {
                let j = ds.feature_index(&info.name).ok_or_else(|| {
                    validation(format!("dataset lacks model feature '{}'", info.name))
                })?;
                let col = &ds.columns()[j].data;
                Ok(match (col, &info.mapper) {
                    (ColumnData::Categorical { codes, levels }, BinMapper::Categorical { .. }) => {
                        let table: HashMap<u32, u32> = levels
                            .iter()
                            .enumerate()
                            .map(|(code, level)| (code as u32, info.mapper.bin_of_level(level)))
                            .collect();
                        codes
                            .iter()
                            .map(|c| c.map_or(info.mapper.missing_bin(), |c| table[&c]))
                            .collect()
                    }
                    (ColumnData::Numeric(values), BinMapper::Numeric { .. }) => {
                        values.iter().map(|&v| info.mapper.bin_of(v)).collect()
                    }
                    _ => {
                        return Err(validation(format!(
                            "feature '{}' changed type since training",
                            info.name
                        )))
                    }
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(Error::from)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_json(&std::fs::read_to_string(path)?)
    }
}
