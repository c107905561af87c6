//! Synthetic cohort generator.
//!
//! Every feature is sampled through a piecewise-linear inverse CDF that
//! passes through its published `(min, q1, median, q3, max)` points at
//! probability levels `(0, 0.25, 0.5, 0.75, 1)`. Unchangeable and direct
//! features are drawn independently. Each indirect feature is a noisy linear
//! combination of the unchangeable and direct levels, rank-transformed back
//! to a uniform level so that its marginal still matches its summary.
//! Labels are Bernoulli draws from a logistic model on the centred levels,
//! with the intercept solved so the expected positive rate hits the target.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Category, Dataset, FeatureMeta, PatientRecord};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::serde_util::ordered_map;

/// Standard deviation of the additive noise on indirect features.
pub const INDIRECT_NOISE_SD: f64 = 0.05;
/// Number of inputs with a nonzero coefficient per indirect feature.
const INPUTS_PER_INDIRECT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Continuous,
    /// 0/1 feature; `mean` is the probability of a 1.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub category: Category,
    #[serde(default)]
    pub units: String,
    #[serde(default)]
    pub kind: FeatureKind,
    /// Coefficient of this feature's centred level in the latent mortality model.
    #[serde(default)]
    pub effect: f64,
}

impl FeatureSummary {
    fn knots(&self) -> [f64; 5] {
        [self.min, self.q1, self.median, self.q3, self.max]
    }

    /// Piecewise-linear inverse CDF through the quartile knots.
    pub fn quantile(&self, level: f64) -> f64 {
        let level = level.clamp(0.0, 1.0);
        let k = self.knots();
        let pos = level * 4.0;
        let seg = (pos.floor() as usize).min(3);
        let t = pos - seg as f64;
        k[seg] + t * (k[seg + 1] - k[seg])
    }

    fn value(&self, level: f64) -> f64 {
        match self.kind {
            FeatureKind::Continuous => self.quantile(level),
            FeatureKind::Binary => f64::from(u8::from(level > 1.0 - self.mean)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub positive_rate: f64,
    /// Seeds the indirect-feature mixing matrix, which is fixed per spec.
    #[serde(default)]
    pub structure_seed: u64,
    #[serde(with = "ordered_map")]
    pub features: Vec<(String, FeatureSummary)>,
}

/// Linear map from the unchangeable/direct levels to the indirect latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixing {
    /// Feature indices feeding the map: unchangeable first, then direct.
    pub inputs: Vec<usize>,
    /// Indirect feature indices, one row of `coefficients` each.
    pub outputs: Vec<usize>,
    pub coefficients: Vec<Vec<f64>>,
    /// `(indirect feature, direct feature)` pairs with a strong planted link.
    pub planted: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub dataset: Dataset,
    pub mixing: Mixing,
    /// Intercept of the latent mortality model.
    pub bias: f64,
    /// Per-row probability of death under the latent model.
    pub risk: Vec<f64>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::InvalidSpec(format!("positive rate {} outside (0, 1)", self.positive_rate)));
        }
        if self.features.is_empty() {
            return Err(Error::InvalidSpec("no features".into()));
        }
        for (name, f) in &self.features {
            let k = f.knots();
            if k.iter().chain([&f.mean, &f.effect]).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(format!("`{name}` has a non-finite value")));
            }
            if k.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidSpec(format!("`{name}` quantiles are not ordered: {k:?}")));
            }
            if f.kind == FeatureKind::Binary && !(f.min == 0.0 && f.max == 1.0 && (0.0..=1.0).contains(&f.mean)) {
                return Err(Error::InvalidSpec(format!(
                    "binary feature `{name}` must span {{0,1}} with mean in [0,1]"
                )));
            }
        }
        if !self.features.iter().any(|(_, f)| f.category == Category::Direct) {
            return Err(Error::InvalidSpec("no directly changeable features".into()));
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn effect_weights(&self) -> Vec<f64> {
        self.features.iter().map(|(_, f)| f.effect).collect()
    }

    pub fn meta(&self) -> Vec<FeatureMeta> {
        self.features
            .iter()
            .map(|(name, f)| FeatureMeta::new(name.clone(), f.category, f.units.clone(), f.min, f.max))
            .collect()
    }

    fn indices(&self, c: Category) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, (_, f))| f.category == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sparse mixing matrix drawn from `structure_seed`. Every indirect
    /// feature gets one planted direct input with a coefficient of magnitude
    /// in [0.3, 0.5] and a couple of further inputs with coefficients in
    /// [-0.5, 0.5].
    pub fn mixing(&self) -> Mixing {
        let mut inputs = self.indices(Category::Unchangeable);
        let n_u = inputs.len();
        inputs.extend(self.indices(Category::Direct));
        let outputs = self.indices(Category::Indirect);
        let mut rng = ChaCha8Rng::seed_from_u64(self.structure_seed);
        let n_d = inputs.len() - n_u;

        let mut coefficients = Vec::with_capacity(outputs.len());
        let mut planted = Vec::with_capacity(outputs.len());
        for &out in &outputs {
            let mut row = vec![0.0; inputs.len()];
            let anchor = n_u + rng.gen_range(0..n_d);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            row[anchor] = sign * rng.gen_range(0.3..=0.5);
            planted.push((out, inputs[anchor]));
            let extra = (INPUTS_PER_INDIRECT - 1).min(inputs.len() - 1);
            let mut added = 0;
            while added < extra {
                let k = rng.gen_range(0..inputs.len());
                if row[k] == 0.0 {
                    row[k] = rng.gen_range(-0.5..=0.5);
                    added += 1;
                }
            }
            coefficients.push(row);
        }
        Mixing {
            inputs,
            outputs,
            coefficients,
            planted,
        }
    }

    /// Built-in cohort summaries (demographics, vitals, labs) plus nine IV fluids.
    /// Extremes are reproduced as published.
    pub fn table1() -> Self {
        use Category::*;
        #[allow(clippy::too_many_arguments)]
        fn f(name: &str, units: &str, category: Category, q: [f64; 6], effect: f64) -> (String, FeatureSummary) {
            (
                name.to_string(),
                FeatureSummary {
                    min: q[0],
                    q1: q[1],
                    median: q[2],
                    mean: q[3],
                    q3: q[4],
                    max: q[5],
                    category,
                    units: units.to_string(),
                    kind: FeatureKind::Continuous,
                    effect,
                },
            )
        }
        let mut features = vec![
            f("age", "years", Unchangeable, [19.0, 56.3, 68.0, 66.4, 79.0, 89.0], 4.0),
            f("weight", "kg", Unchangeable, [0.0, 63.8, 76.8, 80.3, 90.8, 233.9], 0.0),
            (
                "gender".to_string(),
                FeatureSummary {
                    min: 0.0,
                    q1: 0.0,
                    median: 1.0,
                    mean: 0.55,
                    q3: 1.0,
                    max: 1.0,
                    category: Unchangeable,
                    units: "male=1".to_string(),
                    kind: FeatureKind::Binary,
                    effect: 0.0,
                },
            ),
            f("base_excess", "mEq/L", Indirect, [-31.0, -5.0, -2.3, -2.7, 0.0, 16.5], -2.0),
            f("blood_co2", "mEq/L", Indirect, [4.5, 19.8, 22.6, 22.8, 25.8, 44.0], 0.0),
            f("hemoglobin", "g/dL", Indirect, [6.0, 9.1, 9.9, 10.1, 11.0, 19.5], -1.5),
            f("bun", "mg/dL", Indirect, [1.0, 17.0, 29.0, 36.01, 48.2, 212.5], 2.0),
            f("temperature", "F", Indirect, [47.4, 97.5, 98.1, 98.1, 98.8, 107.2], 0.0),
            f("diastolic_bp", "mmHg", Indirect, [18.0, 50.8, 56.4, 57.1, 63.0, 90.3], -2.0),
            f("gcs", "score", Indirect, [3.0, 10.6, 13.9, 12.5, 15.0, 15.0], -5.0),
            f("heart_rate", "/min", Indirect, [46.6, 78.4, 88.2, 89.0, 98.9, 137.3], 2.5),
            f("hematocrit", "%", Indirect, [19.7, 27.8, 29.9, 30.7, 32.9, 61.6], 0.0),
            f("lactate", "mg/dL", Indirect, [0.6, 1.5, 2.0, 2.5, 2.9, 18.3], 4.0),
            f("o2_flow", "L/min", Indirect, [0.3, 2.2, 3.4, 5.1, 6.3, 100.0], 0.0),
            f("paco2", "mmHg", Indirect, [19.0, 33.6, 38.5, 39.8, 43.8, 121.0], 0.0),
            f("pao2", "mmHg", Indirect, [27.0, 83.0, 104.1, 108.1, 127.5, 350.0], 0.0),
            f("ph", "", Indirect, [2.4, 7.3, 7.4, 7.4, 7.4, 53.5], 0.0),
            f("po2", "mmHg", Indirect, [26.0, 73.3, 100.0, 103.9, 126.7, 467.0], 0.0),
            f("pt", "s", Indirect, [11.6, 13.8, 14.9, 16.6, 17.6, 55.2], 1.0),
            f("ptt", "s", Indirect, [14.9, 24.0, 27.9, 31.7, 35.4, 128.3], 0.0),
            f("platelets", "x1000/mm3", Indirect, [16.8, 145.7, 215.3, 227.5, 288.0, 985.0], -1.0),
            f("resp_rate", "/min", Indirect, [10.7, 17.7, 20.3, 20.5, 22.9, 38.1], 3.0),
            f("creatinine", "mg/dL", Indirect, [0.2, 0.8, 1.2, 1.9, 2.0, 141.9], 1.5),
            f("chloride", "mEq/L", Indirect, [84.0, 102.6, 106.2, 106.1, 109.6, 137.6], 0.0),
            f("glucose", "mg/dL", Indirect, [30.3, 107.9, 126.7, 135.4, 150.8, 447.7], 0.0),
            f("magnesium", "mEq/L", Indirect, [1.1, 1.8, 2.0, 2.0, 2.1, 18.3], 0.0),
            f("potassium", "mEq/L", Indirect, [2.7, 3.7, 4.0, 4.1, 4.3, 7.3], 1.0),
            f("sodium", "mEq/L", Indirect, [118.3, 136.9, 139.2, 139.3, 141.8, 163.1], 0.0),
            f("systolic_bp", "mmHg", Indirect, [0.0, 102.2, 109.9, 111.7, 120.7, 210.1], -3.0),
            f("wbc", "x1000/mm3", Indirect, [0.5, 8.3, 11.7, 13.2, 15.8, 97.1], 1.5),
        ];
        // Fluid volumes are not part of the published summary table; these
        // per-visit amounts are illustrative. Fluids with a harmful effect
        // are rarely given, as a sensible prescriber would.
        features.extend([
            f("d10w", "mL", Direct, [0.0, 0.0, 0.0, 20.0, 0.0, 500.0], 1.0),
            f("d5hns", "mL", Direct, [0.0, 0.0, 75.0, 160.0, 250.0, 1200.0], -1.5),
            f("d5lr", "mL", Direct, [0.0, 0.0, 50.0, 130.0, 200.0, 1000.0], -2.0),
            f("d5ns", "mL", Direct, [0.0, 0.0, 50.0, 120.0, 200.0, 1000.0], 0.0),
            f("d5w", "mL", Direct, [0.0, 0.0, 0.0, 70.0, 100.0, 1500.0], 1.5),
            f("dns", "mL", Direct, [0.0, 0.0, 0.0, 60.0, 100.0, 800.0], 0.0),
            f("hns", "mL", Direct, [0.0, 0.0, 50.0, 110.0, 150.0, 1000.0], -1.0),
            f("lr", "mL", Direct, [0.0, 150.0, 400.0, 520.0, 750.0, 2500.0], -4.0),
            f("ns", "mL", Direct, [0.0, 300.0, 700.0, 850.0, 1200.0, 4000.0], -4.0),
        ]);
        SyntheticSpec {
            positive_rate: 0.22,
            structure_seed: 2021,
            features,
        }
    }
}

/// Draws `n` patient visits. Deterministic in `(spec, n, seed)`.
pub fn generate_cohort(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<SyntheticCohort> {
    spec.validate()?;
    if n < 100 {
        return Err(Error::InvalidSpec(format!("cohort size {n} below the minimum of 100")));
    }
    let p = spec.features.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixing = spec.mixing();

    // levels[i][j] in [0,1]; binary features store their 0/1 value.
    // Input levels are stratified (one draw per 1/n bin, shuffled) so sample
    // quantiles sit on the published ones.
    let mut levels = vec![vec![0.0; p]; n];
    for &j in &mixing.inputs {
        let mut col: Vec<f64> = (0..n).map(|k| (k as f64 + rng.gen::<f64>()) / n as f64).collect();
        col.shuffle(&mut rng);
        let f = &spec.features[j].1;
        for (row, u) in levels.iter_mut().zip(col) {
            row[j] = match f.kind {
                FeatureKind::Continuous => u,
                FeatureKind::Binary => f.value(u),
            };
        }
    }

    let noise = Normal::new(0.0, INDIRECT_NOISE_SD).expect("valid noise sd");
    for (out, coefs) in mixing.outputs.iter().zip(&mixing.coefficients) {
        let latent: Vec<f64> = levels
            .iter()
            .map(|row| mixing.inputs.iter().zip(coefs).map(|(&j, c)| c * row[j]).sum::<f64>() + noise.sample(&mut rng))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]));
        for (rank, &i) in order.iter().enumerate() {
            let level = (rank as f64 + 0.5) / n as f64;
            let f = &spec.features[*out].1;
            levels[i][*out] = match f.kind {
                FeatureKind::Continuous => level,
                FeatureKind::Binary => f.value(level),
            };
        }
    }

    let weights = spec.effect_weights();
    let scores: Vec<f64> = levels
        .iter()
        .map(|row| row.iter().zip(&weights).map(|(l, w)| w * (l - 0.5)).sum())
        .collect();
    let bias = solve_intercept(&scores, spec.positive_rate);
    let risk: Vec<f64> = scores.iter().map(|s| sigmoid(s + bias)).collect();

    let records = levels
        .iter()
        .zip(&risk)
        .map(|(row, &r)| {
            let x = row
                .iter()
                .zip(&spec.features)
                .map(|(&l, (_, f))| match f.kind {
                    FeatureKind::Continuous => f.quantile(l),
                    FeatureKind::Binary => l,
                })
                .collect();
            let y = u8::from(rng.gen::<f64>() < r);
            PatientRecord { x, y }
        })
        .collect();

    Ok(SyntheticCohort {
        dataset: Dataset::new(records, spec.meta())?,
        mixing,
        bias,
        risk,
    })
}

pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    Ok(generate_cohort(spec, n, seed)?.dataset)
}

/// Intercept `b` such that the mean of `sigmoid(score + b)` equals `rate`.
fn solve_intercept(scores: &[f64], rate: f64) -> f64 {
    let mean_risk = |b: f64| scores.iter().map(|s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-100.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_risk(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// A feature-selection benchmark: `informative` uniform features drive the
/// label through a logistic model with weight `weight` each, followed by
/// `noise` uniform features the label does not depend on. All features are
/// direct and already in `[0, 1]`. Informative columns are named `inf0..`,
/// noise columns `noise0..`.
pub fn planted_dataset(n: usize, informative: usize, noise: usize, weight: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = informative + noise;
    let meta: Vec<FeatureMeta> = (0..informative)
        .map(|k| format!("inf{k}"))
        .chain((0..noise).map(|k| format!("noise{k}")))
        .map(|name| FeatureMeta::new(name, Category::Direct, "", 0.0, 1.0))
        .collect();
    let records = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..p).map(|_| rng.gen()).collect();
            let logit: f64 = x[..informative].iter().map(|v| weight * (v - 0.5)).sum();
            let y = u8::from(rng.gen::<f64>() < sigmoid(logit));
            PatientRecord { x, y }
        })
        .collect();
    Dataset::new(records, meta)
}
