//! Few-shot stacking: disjoint level-0 shot sets, a zoo of boosted
//! regressors, an MLP blender trained on the leftover rows, and thresholds
//! that turn blended scores into sell / hold / buy actions.

mod calibrate;
mod mlp;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use calibrate::{
    calibrate_thresholds, quantile, quantile_sorted, winsorize, ActionDistribution,
    ActionThresholds, WinsorBounds,
};
pub use mlp::{
    gradient_check, train_mlp, Adam, Layer, MetaRegressor, Mlp, MlpConfig, Standardizer, HIDDEN,
};

use crate::booster::{train, Model, Objective, Params};
use crate::dataset::{bin_features, Dataset};
use crate::error::{validation, Error, Result};
use crate::fsl::fsl_preset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetTransform {
    Identity,
    Winsorize { lo_q: f64, hi_q: f64 },
}

/// One level-0 model: its feature subset, target transform, booster
/// parameters and the rows it trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level0Config {
    pub name: String,
    pub feature_set: Vec<usize>,
    pub target_transform: TargetTransform,
    pub params: Params,
    #[serde(default)]
    pub shot_indices: Vec<usize>,
}

/// Disjoint shot sets plus the rows left over for the blender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotPartition {
    pub sets: Vec<Vec<usize>>,
    pub meta_pool: Vec<usize>,
}

/// Draws `m_models` disjoint uniform subsets of size `k_per_model` from
/// `0..n`. Each set and the pool are returned sorted.
pub fn partition_shots(
    n: usize,
    k_per_model: usize,
    m_models: usize,
    seed: u64,
) -> Result<ShotPartition> {
    if k_per_model == 0 || m_models == 0 {
        return Err(validation(
            "partition needs k_per_model >= 1 and at least one model",
        ));
    }
    let needed = k_per_model.saturating_mul(m_models);
    if needed > n {
        return Err(validation(format!(
            "partition capacity exceeded: {m_models} models x {k_per_model} shots = {needed} > {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sets = order[..needed]
        .chunks(k_per_model)
        .map(|c| {
            let mut s = c.to_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let mut meta_pool = order[needed..].to_vec();
    meta_pool.sort_unstable();
    Ok(ShotPartition { sets, meta_pool })
}

/// Findings of a disjointness check; empty vectors mean it passed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisjointnessAudit {
    /// `(row, first config, second config)` for rows shared by two shot sets.
    pub shared_between_configs: Vec<(usize, usize, usize)>,
    /// `(row, config)` for shot rows also in the meta pool.
    pub shared_with_meta_pool: Vec<(usize, usize)>,
}

impl DisjointnessAudit {
    pub fn passed(&self) -> bool {
        self.shared_between_configs.is_empty() && self.shared_with_meta_pool.is_empty()
    }
}

pub fn audit_disjointness(configs: &[Level0Config], meta_pool: &[usize]) -> DisjointnessAudit {
    let mut audit = DisjointnessAudit::default();
    let mut owner = std::collections::HashMap::new();
    for (c, cfg) in configs.iter().enumerate() {
        for &row in &cfg.shot_indices {
            if let Some(&first) = owner.get(&row) {
                audit.shared_between_configs.push((row, first, c));
            } else {
                owner.insert(row, c);
            }
        }
    }
    for row in meta_pool {
        if let Some(&c) = owner.get(row) {
            audit.shared_with_meta_pool.push((*row, c));
        }
    }
    audit
}

/// Indices of static indicator columns, named `I<number>` as in the
/// synthetic stock data.
pub fn static_feature_indices(ds: &Dataset) -> Vec<usize> {
    ds.feature_names()
        .iter()
        .enumerate()
        .filter(|(_, name)| {
            name.strip_prefix('I')
                .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        })
        .map(|(i, _)| i)
        .collect()
}

/// The five-model zoo: extra-trees and plain GBDT on the base features, an
/// extra-trees model on winsorized targets, one without categorical columns
/// and one with the static columns added back. `static_features` are
/// excluded from the base set. All use the few-shot preset with an MSE
/// objective and distinct seeds.
pub fn default_level0_configs(
    ds: &Dataset,
    static_features: &[usize],
    seed: u64,
) -> Vec<Level0Config> {
    let statics: HashSet<usize> = static_features.iter().copied().collect();
    let base: Vec<usize> = (0..ds.n_features())
        .filter(|j| !statics.contains(j))
        .collect();
    let no_cat: Vec<usize> = base
        .iter()
        .copied()
        .filter(|&j| !ds.columns()[j].data.is_categorical())
        .collect();
    let all: Vec<usize> = (0..ds.n_features()).collect();
    let params = |extra_trees: bool, offset: u64| Params {
        objective: Objective::Mse,
        extra_trees,
        seed: seed.wrapping_add(offset),
        ..fsl_preset()
    };
    let config = |name: &str, features: &[usize], transform, p| Level0Config {
        name: name.into(),
        feature_set: features.to_vec(),
        target_transform: transform,
        params: p,
        shot_indices: Vec::new(),
    };
    vec![
        config(
            "extra_trees_base",
            &base,
            TargetTransform::Identity,
            params(true, 0),
        ),
        config(
            "gbdt_base",
            &base,
            TargetTransform::Identity,
            params(false, 1),
        ),
        config(
            "extra_trees_winsorized",
            &base,
            TargetTransform::Winsorize {
                lo_q: 0.005,
                hi_q: 0.995,
            },
            params(true, 2),
        ),
        config(
            "extra_trees_no_categorical",
            &no_cat,
            TargetTransform::Identity,
            params(true, 3),
        ),
        config(
            "extra_trees_with_static",
            &all,
            TargetTransform::Identity,
            params(true, 4),
        ),
    ]
}

/// A trained level-0 member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level0Model {
    pub name: String,
    pub feature_names: Vec<String>,
    pub target_transform: TargetTransform,
    pub winsor_bounds: Option<WinsorBounds>,
    pub shot_indices: Vec<usize>,
    pub model: Model,
}

impl Level0Model {
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.model.predict_dataset(ds)
    }
}

fn fit_one(ds: &Dataset, cfg: &Level0Config) -> Result<Level0Model> {
    if cfg.shot_indices.is_empty() {
        return Err(validation("no shot rows assigned"));
    }
    if cfg.feature_set.is_empty() {
        return Err(validation("empty feature set"));
    }
    if let Some(&bad) = cfg.feature_set.iter().find(|&&j| j >= ds.n_features()) {
        return Err(validation(format!("feature index {bad} out of range")));
    }
    if let Some(&bad) = cfg.shot_indices.iter().find(|&&r| r >= ds.n_rows()) {
        return Err(validation(format!("row index {bad} out of range")));
    }
    let params = Params {
        objective: Objective::Mse,
        ..cfg.params.clone()
    };
    let shots = ds
        .select_rows(&cfg.shot_indices)
        .select_features(&cfg.feature_set);
    let (shots, bounds) = match cfg.target_transform {
        TargetTransform::Identity => (shots, None),
        TargetTransform::Winsorize { lo_q, hi_q } => {
            let b = WinsorBounds::fit(shots.target(), lo_q, hi_q)?;
            (shots.with_target(b.apply(shots.target()))?, Some(b))
        }
    };
    let bds = bin_features(&shots, params.max_bin, params.min_data_in_bin);
    let model = train(&bds, &params)?;
    Ok(Level0Model {
        name: cfg.name.clone(),
        feature_names: shots
            .feature_names()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        target_transform: cfg.target_transform,
        winsor_bounds: bounds,
        shot_indices: cfg.shot_indices.clone(),
        model,
    })
}

/// Trains every config on its own shots (in parallel) and returns the models
/// with their predictions on the meta pool, one column per config.
pub fn train_level0(
    ds: &Dataset,
    configs: &[Level0Config],
    meta_pool: &[usize],
) -> Result<(Vec<Level0Model>, Vec<Vec<f64>>)> {
    if meta_pool.is_empty() {
        return Err(validation(
            "meta pool is empty; lower k_per_model or the number of models",
        ));
    }
    if configs.is_empty() {
        return Err(validation("no level-0 configs"));
    }
    let audit = audit_disjointness(configs, meta_pool);
    if !audit.passed() {
        return Err(validation(format!(
            "level-0 shot sets overlap: {} shared rows between configs, {} with the meta pool",
            audit.shared_between_configs.len(),
            audit.shared_with_meta_pool.len()
        )));
    }
    let models: Vec<Level0Model> = configs
        .par_iter()
        .map(|cfg| {
            fit_one(ds, cfg).map_err(|e| Error::Config {
                name: cfg.name.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let meta = ds.select_rows(meta_pool);
    let meta_features = level0_features(&models, &meta)?;
    Ok((models, meta_features))
}

/// Row-major matrix of level-0 predictions.
pub fn level0_features(models: &[Level0Model], ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let columns: Vec<Vec<f64>> = models
        .iter()
        .map(|m| m.predict(ds))
        .collect::<Result<_>>()?;
    Ok((0..ds.n_rows())
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect())
}

/// Blends level-0 predictions and maps the score to an action.
pub fn predict_actions(
    blender: &MetaRegressor,
    thresholds: &ActionThresholds,
    level0_rows: &[Vec<f64>],
) -> Result<Vec<i8>> {
    let scores = blender.predict(level0_rows)?;
    Ok(thresholds.apply(&scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingOptions {
    pub k_per_model: usize,
    pub seed: u64,
    pub target_dist: ActionDistribution,
    pub mlp: MlpConfig,
}

impl StackingOptions {
    pub fn new(k_per_model: usize, seed: u64, target_dist: ActionDistribution) -> Self {
        StackingOptions {
            k_per_model,
            seed,
            target_dist,
            mlp: MlpConfig {
                seed,
                ..MlpConfig::default()
            },
        }
    }
}

const PIPELINE_FORMAT: &str = "fewboost-stacking";
const PIPELINE_VERSION: u32 = 1;

/// A fitted stacking pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingPipeline {
    pub format: String,
    pub version: u32,
    pub level0: Vec<Level0Model>,
    pub blender: MetaRegressor,
    pub thresholds: ActionThresholds,
    pub target_dist: ActionDistribution,
    pub meta_pool: Vec<usize>,
}

/// Fitted pipeline and the scores it gave its own meta pool.
#[derive(Debug, Clone)]
pub struct StackingFit {
    pub pipeline: StackingPipeline,
    pub partition: ShotPartition,
    pub audit: DisjointnessAudit,
    pub meta_scores: Vec<f64>,
}

impl StackingPipeline {
    /// Partitions rows, trains the level-0 zoo, fits the blender on the meta
    /// pool and calibrates thresholds on the blended meta-pool scores.
    /// Shot indices already present in `configs` are replaced.
    pub fn fit(
        ds: &Dataset,
        configs: &[Level0Config],
        opts: &StackingOptions,
    ) -> Result<StackingFit> {
        opts.target_dist.validate()?;
        let partition = partition_shots(ds.n_rows(), opts.k_per_model, configs.len(), opts.seed)?;
        let configs: Vec<Level0Config> = configs
            .iter()
            .zip(&partition.sets)
            .map(|(c, set)| Level0Config {
                shot_indices: set.clone(),
                ..c.clone()
            })
            .collect();
        let audit = audit_disjointness(&configs, &partition.meta_pool);
        let (level0, meta_features) = train_level0(ds, &configs, &partition.meta_pool)?;
        let targets: Vec<f64> = partition
            .meta_pool
            .iter()
            .map(|&r| ds.target()[r])
            .collect();
        let blender = train_mlp(&meta_features, &targets, &opts.mlp)?;
        let meta_scores = blender.predict(&meta_features)?;
        let thresholds = calibrate_thresholds(&meta_scores, &opts.target_dist)?;
        Ok(StackingFit {
            pipeline: StackingPipeline {
                format: PIPELINE_FORMAT.into(),
                version: PIPELINE_VERSION,
                level0,
                blender,
                thresholds,
                target_dist: opts.target_dist,
                meta_pool: partition.meta_pool.clone(),
            },
            partition,
            audit,
            meta_scores,
        })
    }

    pub fn predict_scores(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.blender.predict(&level0_features(&self.level0, ds)?)
    }

    pub fn predict_actions(&self, ds: &Dataset) -> Result<Vec<i8>> {
        Ok(self.thresholds.apply(&self.predict_scores(ds)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: StackingPipeline = serde_json::from_str(text)?;
        if p.format != PIPELINE_FORMAT || p.version != PIPELINE_VERSION {
            return Err(validation(format!(
                "unsupported pipeline document {} v{}",
                p.format, p.version
            )));
        }
        if p.blender.input_dim() != p.level0.len() {
            return Err(validation(
                "blender width does not match the level-0 models",
            ));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(Error::from)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        StackingPipeline::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mse;
    use crate::synth::stock_regression;
    use proptest::prelude::*;

    #[test]
    fn ten_rows_three_triples() {
        let p = partition_shots(10, 3, 3, 1).unwrap();
        assert_eq!(p.sets.len(), 3);
        assert!(p.sets.iter().all(|s| s.len() == 3));
        assert_eq!(p.meta_pool.len(), 1);
        let mut all: Vec<usize> = p.sets.concat();
        all.extend(&p.meta_pool);
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn capacity_and_empty_pool() {
        let err = partition_shots(10, 4, 3, 0).unwrap_err();
        assert!(err.to_string().contains("capacity"), "{err}");
        let p = partition_shots(9, 3, 3, 0).unwrap();
        assert!(p.meta_pool.is_empty());
        let ds = stock_regression(9, 0);
        let mut configs = default_level0_configs(&ds, &[], 0);
        configs.truncate(3);
        for (c, s) in configs.iter_mut().zip(&p.sets) {
            c.shot_indices = s.clone();
        }
        assert!(train_level0(&ds, &configs, &p.meta_pool).is_err());
    }

    proptest! {
        #[test]
        fn partition_union_has_no_duplicates(n in 1usize..200, k in 1usize..20, m in 1usize..8, seed in any::<u64>()) {
            prop_assume!(k * m <= n);
            let p = partition_shots(n, k, m, seed).unwrap();
            let union: HashSet<usize> = p.sets.iter().flatten().copied().collect();
            prop_assert_eq!(union.len(), k * m);
            prop_assert!(p.meta_pool.iter().all(|r| !union.contains(r)));
            prop_assert_eq!(p.meta_pool.len(), n - k * m);
        }
    }

    #[test]
    fn audit_flags_overlaps() {
        let ds = stock_regression(20, 0);
        let mut configs = default_level0_configs(&ds, &[], 0);
        configs.truncate(2);
        configs[0].shot_indices = vec![0, 1, 2];
        configs[1].shot_indices = vec![2, 3];
        let audit = audit_disjointness(&configs, &[3, 4]);
        assert_eq!(audit.shared_between_configs, vec![(2, 0, 1)]);
        assert_eq!(audit.shared_with_meta_pool, vec![(3, 1)]);
        assert!(train_level0(&ds, &configs, &[4]).is_err());
    }

    #[test]
    fn zoo_shape() {
        let ds = stock_regression(50, 0);
        let statics = static_feature_indices(&ds);
        assert_eq!(statics.len(), crate::synth::N_STATIC);
        let configs = default_level0_configs(&ds, &statics, 3);
        assert_eq!(configs.len(), 5);
        assert_eq!(
            configs[0].feature_set.len(),
            ds.n_features() - statics.len()
        );
        assert_eq!(
            configs[3].feature_set.len(),
            configs[0].feature_set.len() - 1
        );
        assert_eq!(configs[4].feature_set.len(), ds.n_features());
        // The first two differ only in split selection and seed.
        let mut gbdt = configs[1].params.clone();
        gbdt.extra_trees = true;
        gbdt.seed = configs[0].params.seed;
        assert_eq!(gbdt, configs[0].params);
        assert!(configs.iter().all(|c| c.params.objective == Objective::Mse));
    }

    #[test]
    fn level0_beats_loose_constant_baseline() {
        let ds = stock_regression(900, 11);
        let statics = static_feature_indices(&ds);
        let configs = default_level0_configs(&ds, &statics, 0);
        let p = partition_shots(ds.n_rows(), 120, configs.len(), 5).unwrap();
        let configs: Vec<_> = configs
            .into_iter()
            .zip(&p.sets)
            .map(|(c, s)| Level0Config {
                shot_indices: s.clone(),
                ..c
            })
            .collect();
        let (models, meta) = train_level0(&ds, &configs, &p.meta_pool).unwrap();
        assert_eq!(models.len(), 5);
        assert!(meta.iter().all(|r| r.len() == 5));
        let y: Vec<f64> = p.meta_pool.iter().map(|&r| ds.target()[r]).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let baseline = mse(&y, &vec![mean; y.len()]).unwrap().value;
        for j in 0..5 {
            let col: Vec<f64> = meta.iter().map(|r| r[j]).collect();
            let m = mse(&y, &col).unwrap().value;
            assert!(
                m.is_finite() && m <= 1.5 * baseline,
                "{}: {m} vs {baseline}",
                models[j].name
            );
        }
        let w = models[2].winsor_bounds.unwrap();
        assert!(w.lo < w.hi);
    }

    #[test]
    fn pipeline_round_trips_and_maps_actions() {
        let ds = stock_regression(400, 2);
        let configs = default_level0_configs(&ds, &static_feature_indices(&ds), 1);
        let opts = StackingOptions::new(40, 1, ActionDistribution::new(0.3, 0.4, 0.3).unwrap());
        let fit = StackingPipeline::fit(&ds, &configs, &opts).unwrap();
        assert!(fit.audit.passed());
        let p = &fit.pipeline;
        let back = StackingPipeline::from_json(&p.to_json().unwrap()).unwrap();
        let held = stock_regression(50, 99);
        assert_eq!(
            back.predict_scores(&held).unwrap(),
            p.predict_scores(&held).unwrap()
        );

        let rows = level0_features(&p.level0, &held).unwrap();
        let all_hold = ActionThresholds {
            t_low: f64::NEG_INFINITY,
            t_high: f64::INFINITY,
        };
        assert!(predict_actions(&p.blender, &all_hold, &rows)
            .unwrap()
            .iter()
            .all(|&a| a == 0));
        let all_sell = ActionThresholds {
            t_low: f64::INFINITY,
            t_high: f64::INFINITY,
        };
        assert!(predict_actions(&p.blender, &all_sell, &rows)
            .unwrap()
            .iter()
            .all(|&a| a == -1));
        assert!(predict_actions(&p.blender, &all_hold, &[vec![0.0; 4]]).is_err());
    }
}
