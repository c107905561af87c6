//! Patient cohorts: CSV ingestion, mean imputation, min-max scaling and
//! stratified splitting, plus the U/I/D feature partition.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_util::ordered_map;

/// Name of the binary outcome column (1 = expired).
pub const LABEL_COLUMN: &str = "discharge_expired";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Fixed patient attributes (age, gender, ...).
    Unchangeable,
    /// Vitals and labs that respond to treatment.
    Indirect,
    /// Treatment amounts set by the physician.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub category: Category,
    #[serde(default)]
    pub units: String,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl FeatureMeta {
    pub fn new(name: impl Into<String>, category: Category, units: impl Into<String>, raw_min: f64, raw_max: f64) -> Self {
        FeatureMeta {
            name: name.into(),
            category,
            units: units.into(),
            raw_min,
            raw_max,
        }
    }
}

/// Index sets over the feature vector. Disjoint, exhaustive, with at least
/// one directly changeable feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePartition {
    pub u_indices: Vec<usize>,
    pub i_indices: Vec<usize>,
    pub d_indices: Vec<usize>,
}

impl FeaturePartition {
    pub fn new(u_indices: Vec<usize>, i_indices: Vec<usize>, d_indices: Vec<usize>) -> Result<Self> {
        let p = FeaturePartition {
            u_indices,
            i_indices,
            d_indices,
        };
        p.validate(p.len())?;
        Ok(p)
    }

    pub fn from_meta(meta: &[FeatureMeta]) -> Result<Self> {
        let pick = |c: Category| {
            meta.iter()
                .enumerate()
                .filter(|(_, m)| m.category == c)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        FeaturePartition::new(pick(Category::Unchangeable), pick(Category::Indirect), pick(Category::Direct))
    }

    pub fn len(&self) -> usize {
        self.u_indices.len() + self.i_indices.len() + self.d_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.d_indices.is_empty() {
            return Err(Error::InvalidPartition("no directly changeable features".into()));
        }
        let mut seen = vec![false; p];
        for &i in self.u_indices.iter().chain(&self.i_indices).chain(&self.d_indices) {
            match seen.get_mut(i) {
                None => return Err(Error::InvalidPartition(format!("index {i} out of range for {p} features"))),
                Some(true) => return Err(Error::InvalidPartition(format!("index {i} assigned twice"))),
                Some(s) => *s = true,
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("index {missing} has no category")));
        }
        Ok(())
    }

    pub fn gather(indices: &[usize], x: &[f64]) -> Vec<f64> {
        indices.iter().map(|&i| x[i]).collect()
    }

    /// Reassembles a full feature vector from its three blocks.
    pub fn assemble(&self, x_u: &[f64], x_i: &[f64], x_d: &[f64]) -> Result<Vec<f64>> {
        for (block, idx) in [(x_u, &self.u_indices), (x_i, &self.i_indices), (x_d, &self.d_indices)] {
            if block.len() != idx.len() {
                return Err(Error::DimensionMismatch {
                    expected: idx.len(),
                    got: block.len(),
                });
            }
        }
        let mut x = vec![0.0; self.len()];
        for (block, idx) in [(x_u, &self.u_indices), (x_i, &self.i_indices), (x_d, &self.d_indices)] {
            for (&i, &v) in idx.iter().zip(block) {
                x[i] = v;
            }
        }
        Ok(x)
    }
}

/// One patient visit. Missing cells are `NaN` until imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub x: Vec<f64>,
    pub y: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub min: f64,
    pub max: f64,
}

/// Per-feature min-max scaler. Serialises as `{feature_name: {min, max}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scaler {
    #[serde(with = "ordered_map")]
    bounds: Vec<(String, Bound)>,
}

impl Scaler {
    pub fn new(bounds: Vec<(String, Bound)>) -> Result<Self> {
        for (name, b) in &bounds {
            if !(b.max >= b.min) {
                return Err(Error::InvalidConfig(format!("scaler bound for `{name}` has max < min")));
            }
        }
        Ok(Scaler { bounds })
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.bounds.iter().map(|(n, _)| n.as_str())
    }

    pub fn bound(&self, j: usize) -> Bound {
        self.bounds[j].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bounds.iter().position(|(n, _)| n == name)
    }

    /// Maps a raw value of feature `j` into `[0, 1]`, clamping values that
    /// fall outside the fitted range. Degenerate features map to 0.
    pub fn transform(&self, j: usize, v: f64) -> f64 {
        let Bound { min, max } = self.bounds[j].1;
        if v.is_nan() {
            return v;
        }
        if max > min {
            ((v - min) / (max - min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn inverse(&self, j: usize, u: f64) -> f64 {
        let Bound { min, max } = self.bounds[j].1;
        min + u * (max - min)
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.transform(j, v)).collect()
    }

    pub fn inverse_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.inverse(j, v)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let s: Scaler = serde_json::from_str(s)?;
        Scaler::new(s.bounds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub meta: Vec<FeatureMeta>,
    pub partition: FeaturePartition,
    pub scaler: Option<Scaler>,
}

impl Dataset {
    pub fn new(records: Vec<PatientRecord>, meta: Vec<FeatureMeta>) -> Result<Self> {
        let partition = FeaturePartition::from_meta(&meta)?;
        for r in &records {
            if r.x.len() != meta.len() {
                return Err(Error::DimensionMismatch {
                    expected: meta.len(),
                    got: r.x.len(),
                });
            }
            if r.y > 1 {
                return Err(Error::InvalidConfig(format!("label {} is not binary", r.y)));
            }
        }
        Ok(Dataset {
            records,
            meta,
            partition,
            scaler: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.meta.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.y == 1).count() as f64 / self.records.len() as f64
    }

    pub fn missing_count(&self) -> usize {
        self.records.iter().map(|r| r.x.iter().filter(|v| v.is_nan()).count()).sum()
    }

    pub fn scaler(&self) -> Result<&Scaler> {
        self.scaler.as_ref().ok_or(Error::ScalerNotFitted)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            meta: self.meta.clone(),
            partition: self.partition.clone(),
            scaler: self.scaler.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.meta.iter().map(|m| m.name.as_str()).collect();
        header.push(LABEL_COLUMN);
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.x.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }).collect();
            row.push(r.y.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// Reads a raw cohort. Columns are matched to `meta` by name; the label
/// column must be present. Empty cells become `NaN`.
pub fn read_csv<R: Read>(input: R, meta: &[FeatureMeta]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();

    let by_name: HashMap<&str, usize> = meta.iter().enumerate().map(|(i, m)| (m.name.as_str(), i)).collect();
    let mut label_col = None;
    let mut targets = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        if name == LABEL_COLUMN {
            label_col = Some(c);
            targets.push(None);
        } else if let Some(&j) = by_name.get(name) {
            targets.push(Some(j));
        } else {
            return Err(Error::UnknownColumn(name.to_string()));
        }
    }
    let label_col = label_col.ok_or(Error::MissingLabelColumn)?;
    for m in meta {
        if !header.iter().any(|h| h == m.name) {
            return Err(Error::MissingColumn(m.name.clone()));
        }
    }

    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut x = vec![f64::NAN; meta.len()];
        for (c, cell) in rec.iter().enumerate() {
            let Some(j) = targets.get(c).copied().flatten() else {
                continue;
            };
            if cell.is_empty() {
                continue;
            }
            x[j] = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::NonNumericCell {
                row: row + 1,
                col: header[c].to_string(),
            })?;
        }
        let raw_label = rec.get(label_col).unwrap_or("");
        let y = match raw_label.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(Error::InvalidLabel {
                    row: row + 1,
                    value: raw_label.to_string(),
                })
            }
        };
        records.push(PatientRecord { x, y });
    }
    Dataset::new(records, meta.to_vec())
}

pub fn load_csv(path: impl AsRef<Path>, meta: &[FeatureMeta]) -> Result<Dataset> {
    read_csv(File::open(path)?, meta)
}

/// Per-feature means over observed (non-missing) values.
pub fn column_means(ds: &Dataset) -> Result<Vec<f64>> {
    (0..ds.n_features())
        .map(|j| {
            let (sum, count) = ds
                .records
                .iter()
                .map(|r| r.x[j])
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                Err(Error::AllMissingFeature(ds.meta[j].name.clone()))
            } else {
                Ok(sum / count as f64)
            }
        })
        .collect()
}

/// Fills missing cells with the supplied per-feature values (normally the
/// training-split means).
pub fn impute_with(ds: &Dataset, fill: &[f64]) -> Result<Dataset> {
    if fill.len() != ds.n_features() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_features(),
            got: fill.len(),
        });
    }
    let mut out = ds.clone();
    for r in &mut out.records {
        for (v, &m) in r.x.iter_mut().zip(fill) {
            if v.is_nan() {
                *v = m;
            }
        }
    }
    Ok(out)
}

pub fn impute_mean(ds: &Dataset) -> Result<Dataset> {
    impute_with(ds, &column_means(ds)?)
}

/// Fits min/max per feature on the (training) dataset, ignoring missing cells.
pub fn fit_scaler(ds: &Dataset) -> Result<Scaler> {
    let mut bounds = Vec::with_capacity(ds.n_features());
    for (j, m) in ds.meta.iter().enumerate() {
        let (min, max) = ds
            .records
            .iter()
            .map(|r| r.x[j])
            .filter(|v| !v.is_nan())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if min > max {
            return Err(Error::AllMissingFeature(m.name.clone()));
        }
        bounds.push((m.name.clone(), Bound { min, max }));
    }
    Scaler::new(bounds)
}

pub fn apply_scaler(ds: &Dataset, scaler: &Scaler) -> Result<Dataset> {
    if scaler.len() != ds.n_features() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_features(),
            got: scaler.len(),
        });
    }
    for (m, name) in ds.meta.iter().zip(scaler.names()) {
        if m.name != name {
            return Err(Error::UnknownColumn(name.to_string()));
        }
    }
    let mut out = ds.clone();
    for r in &mut out.records {
        r.x = scaler.transform_row(&r.x);
    }
    out.scaler = Some(scaler.clone());
    Ok(out)
}

/// Stratified assignment of row indices to `ratios.len()` parts. Within each
/// class the rows are shuffled and cut at rounded ratio boundaries; the last
/// part takes the remainder. Each part's indices are returned sorted.
pub fn stratified_indices(labels: &[u8], ratios: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Vec::new(); ratios.len()];
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = labels.iter().enumerate().filter(|(_, &y)| y == class).map(|(i, _)| i).collect();
        if members.len() < ratios.len() {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                required: ratios.len(),
            });
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let mut start = 0usize;
        for (k, r) in ratios.iter().enumerate() {
            let end = if k + 1 == ratios.len() {
                members.len()
            } else {
                (start + (n * r).round() as usize).min(members.len())
            };
            parts[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

pub fn stratified_split(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let parts = stratified_indices(&ds.labels(), &[ratios.train, ratios.validation, ratios.test], seed)?;
    Ok((ds.subset(&parts[0]), ds.subset(&parts[1]), ds.subset(&parts[2])))
}
