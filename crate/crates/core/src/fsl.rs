//! Few-shot parameter presets, stratified k-shot sampling and the benchmark
//! grid that reports AUC per (preset, shot count) cell.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::booster::{train, Objective, Params};
use crate::dataset::{bin_features, Dataset};
use crate::error::{validation, Result};
use crate::metrics::auc;

/// Parameters for training on a handful of rows: extremely randomized
/// splits, small trees, and every count-based restriction relaxed to 1.
pub fn fsl_preset() -> Params {
    Params {
        extra_trees: true,
        num_leaves: 4,
        eta: 0.05,
        min_data_in_leaf: 1,
        feature_fraction: 0.5,
        bagging_fraction: 0.5,
        bagging_freq: 1,
        min_data_per_group: 1,
        cat_l2: 0.0,
        cat_smooth: 0.0,
        max_cat_to_onehot: 100,
        min_data_in_bin: 3,
        ..Params::default()
    }
}

/// Stock LightGBM values.
pub fn default_preset() -> Params {
    Params::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub params: Params,
}

impl Preset {
    pub fn new(name: impl Into<String>, params: Params) -> Self {
        Preset {
            name: name.into(),
            params,
        }
    }

    pub fn by_name(name: &str) -> Option<Preset> {
        match name {
            "fsl" => Some(Preset::new("fsl", fsl_preset())),
            "default" => Some(Preset::new("default", default_preset())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub label: f64,
    pub count: usize,
}

/// A stratified k-shot training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSample {
    /// Selected rows, ascending.
    pub indices: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    pub class_counts: Vec<ClassCount>,
}

impl ShotSample {
    /// Rows not in the sample, ascending.
    pub fn complement(&self, n_rows: usize) -> Vec<usize> {
        let mut taken = vec![false; n_rows];
        for &i in &self.indices {
            taken[i] = true;
        }
        (0..n_rows).filter(|&i| !taken[i]).collect()
    }
}

/// Per-class quotas: largest-remainder apportionment of `k` by class size,
/// then every class raised to at least one row and capped at its size.
pub fn stratified_quotas(class_sizes: &[usize], k: usize) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    let exact: Vec<f64> = class_sizes
        .iter()
        .map(|&c| k as f64 * c as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = quotas.iter().sum();
    for &c in by_remainder.iter().take(k - assigned) {
        quotas[c] += 1;
    }

    // Every class gets at least one row, taken from the largest quota.
    for c in 0..quotas.len() {
        if quotas[c] == 0 {
            let donor = (0..quotas.len())
                .filter(|&d| quotas[d] > 1)
                .max_by(|&a, &b| quotas[a].cmp(&quotas[b]).then(b.cmp(&a)))
                .expect("k >= number of classes");
            quotas[donor] -= 1;
            quotas[c] = 1;
        }
    }
    // No class can give more rows than it has.
    for c in 0..quotas.len() {
        while quotas[c] > class_sizes[c] {
            let receiver = (0..quotas.len())
                .filter(|&d| quotas[d] < class_sizes[d])
                .max_by(|&a, &b| {
                    (class_sizes[a] - quotas[a])
                        .cmp(&(class_sizes[b] - quotas[b]))
                        .then(b.cmp(&a))
                })
                .expect("k <= n_rows");
            quotas[c] -= 1;
            quotas[receiver] += 1;
        }
    }
    quotas
}

/// Draws `k` rows stratified by target class, without replacement.
pub fn sample_k_shot(ds: &Dataset, k: usize, seed: u64) -> Result<ShotSample> {
    let n = ds.n_rows();
    if k > n {
        return Err(validation(format!(
            "k = {k} exceeds the {n} available rows"
        )));
    }
    let target = ds.target();
    if target.iter().any(|y| !y.is_finite()) {
        return Err(validation("k-shot sampling needs a finite target"));
    }
    let mut labels: Vec<f64> = target.to_vec();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    if k < labels.len() {
        return Err(validation(format!(
            "k = {k} is smaller than the {} classes",
            labels.len()
        )));
    }
    let members: Vec<Vec<usize>> = labels
        .iter()
        .map(|&l| (0..n).filter(|&i| target[i] == l).collect())
        .collect();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&sizes, k);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(k);
    for (rows, &q) in members.iter().zip(&quotas) {
        indices.extend(sample(&mut rng, rows.len(), q).into_iter().map(|i| rows[i]));
    }
    indices.sort_unstable();
    Ok(ShotSample {
        indices,
        k,
        seed,
        class_counts: labels
            .iter()
            .zip(&quotas)
            .map(|(&label, &count)| ClassCount { label, count })
            .collect(),
    })
}

/// Outcome of one (preset, k, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub auc: f64,
    /// Every tree of the model is a single leaf.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub shots: usize,
    pub results: Vec<SeedResult>,
    pub failures: Vec<SeedFailure>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub median: Option<f64>,
}

impl CellSummary {
    fn from_runs(shots: usize, runs: Vec<(u64, Result<SeedResult>)>) -> Self {
        let mut results = Vec::new();
        let mut failures = Vec::new();
        for (seed, run) in runs {
            match run {
                Ok(r) => results.push(r),
                Err(e) => failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                }),
            }
        }
        let aucs: Vec<f64> = results.iter().map(|r| r.auc).collect();
        CellSummary {
            shots,
            mean: mean(&aucs),
            sd: sample_sd(&aucs),
            median: median(&aucs),
            results,
            failures,
        }
    }

    pub fn aucs(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.auc).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRow {
    pub preset: String,
    pub cells: Vec<CellSummary>,
    /// Mean of the cell means across shot counts; `None` if any cell has no
    /// successful seed.
    pub average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub dataset: String,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rows: Vec<PresetRow>,
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn sample_sd(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Trains on a k-shot sample and scores every row outside it.
pub fn run_cell(ds: &Dataset, k: usize, seed: u64, params: &Params) -> Result<SeedResult> {
    let shot = sample_k_shot(ds, k, seed)?;
    let eval_rows = shot.complement(ds.n_rows());
    if eval_rows.is_empty() {
        return Err(validation("no rows left for evaluation"));
    }
    let params = Params {
        seed,
        ..params.clone()
    };
    let train_ds = ds.select_rows(&shot.indices);
    let bds = bin_features(&train_ds, params.max_bin, params.min_data_in_bin);
    let model = train(&bds, &params)?;
    let eval_ds = ds.select_rows(&eval_rows);
    let scores = model.predict(&eval_ds.rows())?;
    let value = auc(eval_ds.target(), &scores)?.value;
    Ok(SeedResult {
        seed,
        auc: value,
        stalled: model.trees.iter().all(|t| t.is_single_leaf()),
    })
}

/// Runs the full (preset x shots x seeds) grid. Failing seeds are recorded
/// in their cell and do not abort the grid.
pub fn run_benchmark(
    ds: &Dataset,
    dataset_name: &str,
    shots: &[usize],
    seeds: &[u64],
    presets: &[Preset],
) -> Result<BenchmarkReport> {
    if shots.is_empty() || seeds.is_empty() || presets.is_empty() {
        return Err(validation("benchmark needs shots, seeds and presets"));
    }
    for p in presets {
        p.params.validate()?;
        if p.params.objective != Objective::BinaryLogloss {
            return Err(validation(format!(
                "preset '{}' must use the binary-logloss objective",
                p.name
            )));
        }
    }

    let jobs: Vec<(usize, usize, u64)> = (0..presets.len())
        .flat_map(|p| {
            shots
                .iter()
                .flat_map(move |&k| seeds.iter().map(move |&s| (p, k, s)))
        })
        .collect();
    let mut outcomes: Vec<Result<SeedResult>> = jobs
        .par_iter()
        .map(|&(p, k, seed)| run_cell(ds, k, seed, &presets[p].params))
        .collect::<Vec<_>>();

    let mut rows = Vec::with_capacity(presets.len());
    let mut drain = outcomes.drain(..);
    for preset in presets {
        let mut cells = Vec::with_capacity(shots.len());
        for &k in shots {
            let runs = seeds
                .iter()
                .map(|&s| (s, drain.next().expect("one outcome per job")))
                .collect();
            cells.push(CellSummary::from_runs(k, runs));
        }
        let means: Option<Vec<f64>> = cells.iter().map(|c| c.mean).collect();
        rows.push(PresetRow {
            preset: preset.name.clone(),
            average: means.and_then(|m| mean(&m)),
            cells,
        });
    }
    Ok(BenchmarkReport {
        dataset: dataset_name.to_string(),
        shots: shots.to_vec(),
        seeds: seeds.to_vec(),
        rows,
    })
}

impl BenchmarkReport {
    pub fn has_failures(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.cells.iter().any(|c| !c.failures.is_empty()))
    }

    pub fn row(&self, preset: &str) -> Option<&PresetRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }

    /// Aligned text table: one line per preset, one column per shot count,
    /// then the average. Cells show the mean AUC over seeds with the
    /// standard deviation in parentheses.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Dataset".to_string(), "Method".to_string()];
        header.extend(self.shots.iter().map(|k| format!("{k}-shot")));
        header.push("Average".into());

        let mut lines = vec![header];
        for row in &self.rows {
            let mut line = vec![self.dataset.clone(), row.preset.clone()];
            for c in &row.cells {
                line.push(match (c.mean, c.sd) {
                    (Some(m), Some(sd)) if c.failures.is_empty() => format!("{m:.2} ({sd:.2})"),
                    (Some(m), Some(sd)) => format!("{m:.2} ({sd:.2})*"),
                    _ => "failed".into(),
                });
            }
            line.push(row.average.map_or("-".into(), |a| format!("{a:.3}")));
            lines.push(line);
        }

        let widths: Vec<usize> = (0..lines[0].len())
            .map(|j| lines.iter().map(|l| l[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, &w))| {
                    if j < 2 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        if self.has_failures() {
            out.push_str("* some seeds failed; see the JSON report\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn binary(labels: &[f64]) -> Dataset {
        let x: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        Dataset::from_numeric(vec![("x".into(), x)], labels.to_vec()).unwrap()
    }

    #[test]
    fn presets_match_the_table() {
        let f = fsl_preset();
        assert!(f.extra_trees);
        assert_eq!(f.num_leaves, 4);
        assert_eq!(f.eta, 0.05);
        assert_eq!(f.min_data_in_leaf, 1);
        assert_eq!(f.feature_fraction, 0.5);
        assert_eq!(f.bagging_fraction, 0.5);
        assert_eq!(f.bagging_freq, 1);
        assert_eq!(f.min_data_per_group, 1);
        assert_eq!(f.cat_l2, 0.0);
        assert_eq!(f.cat_smooth, 0.0);
        assert_eq!(f.max_cat_to_onehot, 100);
        assert_eq!(f.min_data_in_bin, 3);

        let d = default_preset();
        assert!(!d.extra_trees);
        assert_eq!(d.num_leaves, 31);
        assert_eq!(d.eta, 0.1);
        assert_eq!(d.min_data_in_leaf, 20);
        assert_eq!(d.feature_fraction, 1.0);
        assert_eq!(d.bagging_fraction, 1.0);
        assert_eq!(d.bagging_freq, 0);
        assert_eq!(d.min_data_per_group, 100);
        assert_eq!(d.cat_l2, 10.0);
        assert_eq!(d.cat_smooth, 10.0);
        assert_eq!(d.max_cat_to_onehot, 4);
        assert_eq!(d.min_data_in_bin, 3);
        assert_eq!(d.n_rounds, 100);
    }

    #[test]
    fn balanced_four_shot_takes_two_per_class() {
        let ds = binary(&[0., 1., 0., 1., 0., 1., 0., 1.]);
        let s = sample_k_shot(&ds, 4, 7).unwrap();
        assert_eq!(s.indices.len(), 4);
        assert_eq!(
            s.class_counts.iter().map(|c| c.count).collect::<Vec<_>>(),
            vec![2, 2]
        );
        let picked: Vec<f64> = s.indices.iter().map(|&i| ds.target()[i]).collect();
        assert_eq!(picked.iter().filter(|&&y| y == 1.0).count(), 2);
    }

    #[test]
    fn exhaustive_draw_takes_everything() {
        let ds = binary(&[0., 1., 1., 0., 1.]);
        let s = sample_k_shot(&ds, 5, 1).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2, 3, 4]);
        assert!(s.complement(5).is_empty());
    }

    #[test]
    fn largest_remainder_quotas() {
        // 0.9 * 8 = 7.2 and 0.1 * 8 = 0.8: floors (7, 0), the spare row goes
        // to the larger remainder.
        assert_eq!(stratified_quotas(&[90, 10], 8), vec![7, 1]);
        // 0.98 * 4 = 3.92, 0.02 * 4 = 0.08 -> (4, 0) -> minimum of one -> (3, 1).
        assert_eq!(stratified_quotas(&[98, 2], 4), vec![3, 1]);
        // Capacity: the small class cannot give three rows.
        assert_eq!(stratified_quotas(&[2, 2, 96], 10).iter().sum::<usize>(), 10);
        assert_eq!(stratified_quotas(&[1, 9], 10), vec![1, 9]);
    }

    #[test]
    fn sampling_errors() {
        let ds = binary(&[0., 1., 0.]);
        assert!(sample_k_shot(&ds, 4, 0).is_err());
        assert!(sample_k_shot(&ds, 1, 0).is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_disjoint() {
        let ds = synth::binary_classification(200, 6, 2, 3);
        for seed in 0..10 {
            let a = sample_k_shot(&ds, 16, seed).unwrap();
            assert_eq!(a, sample_k_shot(&ds, 16, seed).unwrap());
            let mut all = a.indices.clone();
            let rest = a.complement(200);
            assert_eq!(rest.len(), 184);
            all.extend(rest);
            all.sort_unstable();
            assert_eq!(all, (0..200).collect::<Vec<_>>());
        }
    }

    #[test]
    fn default_preset_cells_are_exactly_half() {
        let ds = synth::binary_classification(120, 4, 2, 9);
        let report = run_benchmark(
            &ds,
            "synthetic",
            &[4, 8, 16],
            &[0, 1],
            &[Preset::new("default", default_preset())],
        )
        .unwrap();
        let row = report.row("default").unwrap();
        for cell in &row.cells {
            assert!(cell.results.iter().all(|r| r.auc == 0.5 && r.stalled));
        }
        assert_eq!(row.average, Some(0.5));
    }

    #[test]
    fn report_shape_and_average() {
        let ds = synth::binary_classification(150, 4, 2, 1);
        let report = run_benchmark(
            &ds,
            "synthetic",
            &[4, 8, 16, 32, 64],
            &[0, 1, 2],
            &[
                Preset::new("fsl", fsl_preset()),
                Preset::new("default", default_preset()),
            ],
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_eq!(row.cells.len(), 5);
            let means: Vec<f64> = row.cells.iter().map(|c| c.mean.unwrap()).collect();
            let avg = means.iter().sum::<f64>() / 5.0;
            assert!((row.average.unwrap() - avg).abs() < 1e-15);
        }
        let table = report.to_table();
        assert!(table.lines().next().unwrap().contains("64-shot"));
        assert!(table
            .lines()
            .next()
            .unwrap()
            .trim_end()
            .ends_with("Average"));
        assert_eq!(table.lines().count(), 3);

        let single =
            run_benchmark(&ds, "s", &[8], &[5], &[Preset::new("fsl", fsl_preset())]).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].cells.len(), 1);
        assert_eq!(single.rows[0].cells[0].results.len(), 1);
    }

    #[test]
    fn failed_cells_are_marked_not_fatal() {
        let ds = synth::binary_classification(30, 3, 1, 2);
        let report = run_benchmark(
            &ds,
            "tiny",
            &[4, 30],
            &[0],
            &[Preset::new("fsl", fsl_preset())],
        )
        .unwrap();
        let row = &report.rows[0];
        assert!(row.cells[0].failures.is_empty());
        assert_eq!(row.cells[1].failures.len(), 1);
        assert_eq!(row.average, None);
        assert!(report.has_failures());
        assert!(report.to_table().contains("failed"));
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(sample_sd(&[1.0]), Some(0.0));
        assert!((sample_sd(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean(&[]), None);
    }
}
