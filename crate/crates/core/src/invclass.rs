//! Inverse classification: projected gradient descent over the direct
//! features, with the indirect block re-estimated by the IFE at every step.

use serde::{Deserialize, Serialize};

use crate::dataset::FeaturePartition;
use crate::error::{Error, Result};
use crate::ife::IfeModel;
use crate::models::ClassifierModel;

const BISECTION_TOL: f64 = 1e-10;
const BISECTION_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    /// Used when a caller has no per-request budget of its own.
    pub budget: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            budget: 1.0,
            step_size: 0.05,
            max_iters: 200,
            convergence_tol: 1e-6,
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0) {
            return Err(Error::NegativeBudget(self.budget));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRequest {
    pub x_u: Vec<f64>,
    /// Only used for `prob_before`.
    pub x_i_observed: Vec<f64>,
    pub x_d_physician: Vec<f64>,
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub x_d_optimized: Vec<f64>,
    pub delta: Vec<f64>,
    /// Clamped IFE estimate at `x_d_optimized`.
    pub x_i_predicted: Vec<f64>,
    /// Risk at the physician's prescription with the observed indirect block.
    pub prob_before: f64,
    /// Risk at the physician's prescription with the IFE-estimated indirect
    /// block. This is the objective value at the starting point.
    pub prob_baseline: f64,
    pub prob_after: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
    pub iters_used: usize,
}

impl RecommendationResult {
    pub fn without_trajectory(mut self) -> Self {
        self.trajectory.clear();
        self
    }
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn shrink_toward(v: &[f64], center: &[f64], lambda: f64) -> Vec<f64> {
    v.iter()
        .zip(center)
        .map(|(&vi, &ci)| {
            let d = vi - ci;
            let m = (d.abs() - lambda).max(0.0);
            (ci + d.signum() * m).clamp(0.0, 1.0)
        })
        .collect()
}

/// Euclidean projection of `v` onto `{w : |w - x_d|_1 <= b, 0 <= w <= 1}`.
pub fn project_feasible(v: &[f64], x_d: &[f64], b: f64) -> Result<Vec<f64>> {
    if v.len() != x_d.len() {
        return Err(Error::DimensionMismatch {
            expected: x_d.len(),
            got: v.len(),
        });
    }
    if !(b >= 0.0) {
        return Err(Error::NegativeBudget(b));
    }
    if b == 0.0 {
        return Ok(x_d.to_vec());
    }
    let clipped: Vec<f64> = v.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    if l1_distance(&clipped, x_d) <= b {
        return Ok(clipped);
    }
    let mut lo = 0.0;
    let mut hi = v.iter().zip(x_d).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    for _ in 0..BISECTION_MAX_ITERS {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if l1_distance(&shrink_toward(v, x_d, mid), x_d) > b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(shrink_toward(v, x_d, hi))
}

/// The composed objective `f(x_U, clamp(H(x_U, x_D)), x_D)`.
pub struct Composite<'a> {
    f: &'a ClassifierModel,
    h: &'a IfeModel,
    partition: FeaturePartition,
}

impl<'a> Composite<'a> {
    pub fn new(f: &'a ClassifierModel, h: &'a IfeModel) -> Result<Self> {
        if f.feature_names() != h.feature_names() {
            return Err(Error::InconsistentBundle(
                "classifier and IFE were trained on different feature lists".into(),
            ));
        }
        let partition = h.partition();
        if partition.i_indices.is_empty() {
            return Err(Error::EmptyIndirectBlock);
        }
        Ok(Composite { f, h, partition })
    }

    pub fn partition(&self) -> &FeaturePartition {
        &self.partition
    }

    pub fn classifier(&self) -> &ClassifierModel {
        self.f
    }

    pub fn ife(&self) -> &IfeModel {
        self.h
    }

    pub fn indirect(&self, x_u: &[f64], x_d: &[f64]) -> Result<Vec<f64>> {
        Ok(self.h.predict_indirect(x_u, x_d)?.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn probability(&self, x_u: &[f64], x_i: &[f64], x_d: &[f64]) -> Result<f64> {
        self.f.predict_proba(&self.partition.assemble(x_u, x_i, x_d)?)
    }

    pub fn objective(&self, x_u: &[f64], x_d: &[f64]) -> Result<f64> {
        let x_i = self.indirect(x_u, x_d)?;
        self.probability(x_u, &x_i, x_d)
    }

    /// Gradient of `objective` with respect to `x_d`. The clamp passes the
    /// gradient through inside `[0, 1]` and blocks it outside.
    pub fn gradient(&self, x_u: &[f64], x_d: &[f64]) -> Result<Vec<f64>> {
        let raw = self.h.predict_indirect(x_u, x_d)?;
        let x_i: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let x = self.partition.assemble(x_u, &x_i, x_d)?;
        let g = self.f.gradient_wrt_input(&x)?;
        let mut grad = FeaturePartition::gather(&self.partition.d_indices, &g);
        let jac = self.h.ife_jacobian(x_u, x_d)?;
        for (k, &idx) in self.partition.i_indices.iter().enumerate() {
            if !(0.0..=1.0).contains(&raw[k]) {
                continue;
            }
            let up = g[idx];
            for (gd, &j) in grad.iter_mut().zip(&jac[k]) {
                *gd += up * j;
            }
        }
        Ok(grad)
    }

    fn check_request(&self, req: &RecommendationRequest) -> Result<()> {
        let p = &self.partition;
        for (field, v, n) in [
            ("x_u", &req.x_u, p.u_indices.len()),
            ("x_i_observed", &req.x_i_observed, p.i_indices.len()),
            ("x_d_physician", &req.x_d_physician, p.d_indices.len()),
        ] {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteInput { field: field.into(), index });
            }
        }
        if let Some(index) = req.x_d_physician.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::OutOfUnitRange {
                field: "x_d_physician".into(),
                index,
                value: req.x_d_physician[index],
            });
        }
        if req.budget.is_nan() {
            return Err(Error::NonFiniteInput {
                field: "budget".into(),
                index: 0,
            });
        }
        if req.budget < 0.0 {
            return Err(Error::NegativeBudget(req.budget));
        }
        Ok(())
    }

    /// Runs PGD from the physician's prescription. Any `candidates` that are
    /// feasible for this request are also considered for the best iterate.
    pub fn optimize(&self, req: &RecommendationRequest, cfg: &OptimizeConfig, candidates: &[Vec<f64>]) -> Result<RecommendationResult> {
        cfg.validate()?;
        self.check_request(req)?;
        let x_u = &req.x_u;
        let center = &req.x_d_physician;
        let b = req.budget;

        let prob_before = self.probability(x_u, &req.x_i_observed, center)?;
        let prob_baseline = self.objective(x_u, center)?;

        let mut x = center.clone();
        let mut best_x = x.clone();
        let mut best = prob_baseline;
        let mut trajectory = vec![TrajectoryPoint {
            iter: 0,
            objective: prob_baseline,
        }];
        let mut converged = false;
        let mut iters_used = 0;
        for t in 1..=cfg.max_iters {
            let g = self.gradient(x_u, &x)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { iteration: t });
            }
            let step: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - cfg.step_size * gi).collect();
            let next = project_feasible(&step, center, b)?;
            let moved = x.iter().zip(&next).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            x = next;
            let obj = self.objective(x_u, &x)?;
            trajectory.push(TrajectoryPoint { iter: t, objective: obj });
            if obj < best {
                best = obj;
                best_x.clone_from(&x);
            }
            iters_used = t;
            if moved < cfg.convergence_tol {
                converged = true;
                break;
            }
        }

        for cand in candidates {
            if cand.len() != center.len() || cand.iter().any(|v| !(0.0..=1.0).contains(v)) || l1_distance(cand, center) > b {
                continue;
            }
            let obj = self.objective(x_u, cand)?;
            if obj < best {
                best = obj;
                best_x.clone_from(cand);
            }
        }

        let delta = best_x.iter().zip(center).map(|(a, c)| a - c).collect();
        Ok(RecommendationResult {
            x_i_predicted: self.indirect(x_u, &best_x)?,
            x_d_optimized: best_x,
            delta,
            prob_before,
            prob_baseline,
            prob_after: best,
            trajectory,
            converged,
            iters_used,
        })
    }
}

pub fn objective(f: &ClassifierModel, h: &IfeModel, x_u: &[f64], x_d: &[f64]) -> Result<f64> {
    Composite::new(f, h)?.objective(x_u, x_d)
}

pub fn objective_gradient(f: &ClassifierModel, h: &IfeModel, x_u: &[f64], x_d: &[f64]) -> Result<Vec<f64>> {
    Composite::new(f, h)?.gradient(x_u, x_d)
}

pub fn optimize_recommendation(f: &ClassifierModel, h: &IfeModel, req: &RecommendationRequest, cfg: &OptimizeConfig) -> Result<RecommendationResult> {
    Composite::new(f, h)?.optimize(req, cfg, &[])
}

/// Optimizes one request at each budget in ascending order. Each budget also
/// considers the previous budget's answer, which is feasible by nesting, so
/// the returned objective never increases with the budget.
pub fn optimize_budgets(
    f: &ClassifierModel,
    h: &IfeModel,
    req: &RecommendationRequest,
    budgets: &[f64],
    cfg: &OptimizeConfig,
) -> Result<Vec<RecommendationResult>> {
    let comp = Composite::new(f, h)?;
    let mut order: Vec<usize> = (0..budgets.len()).collect();
    order.sort_by(|&a, &b| budgets[a].total_cmp(&budgets[b]));
    let mut out: Vec<Option<RecommendationResult>> = vec![None; budgets.len()];
    let mut prev: Option<Vec<f64>> = None;
    for i in order {
        let r = RecommendationRequest {
            budget: budgets[i],
            ..req.clone()
        };
        let cands: Vec<Vec<f64>> = prev.iter().cloned().collect();
        let res = comp.optimize(&r, cfg, &cands)?;
        prev = Some(res.x_d_optimized.clone());
        out[i] = Some(res);
    }
    Ok(out.into_iter().map(|r| r.expect("every budget visited")).collect())
}
