//! Soft-margin RBF SVM trained with Platt's sequential minimal optimization.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Dataset, Prediction};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / (d * Var(X))` with the variance pooled over every entry.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: Gamma,
    pub kkt_tol: f64,
    pub numeric_eps: f64,
    pub max_passes_without_progress: usize,
    /// Hard cap on outer passes regardless of progress.
    pub max_passes: usize,
    /// Kernel rows kept in the LRU cache.
    pub cache_rows: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: Gamma::Scale,
            kkt_tol: 1e-3,
            numeric_eps: 1e-12,
            max_passes_without_progress: 10,
            max_passes: 100_000,
            cache_rows: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` with `y_i` in `{-1, +1}`.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub n_features: usize,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.n_features
    }

    pub fn decision_function(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * rbf(self.gamma, sv, x))
            .sum::<f64>()
            + self.bias
    }
}

/// Training output: the model plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub model: SvmModel,
    /// Dual variables for every training row.
    pub alphas: Vec<f64>,
    /// True iff no training point violates KKT by more than `kkt_tol`.
    pub converged: bool,
    pub passes: usize,
    pub max_kkt_violation: f64,
}

pub(crate) fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum();
    (-gamma * d2).exp()
}

/// The "scale" heuristic: `1 / (d * pooled variance)`.
pub fn resolve_gamma(x: &[Vec<f64>], numeric_eps: f64) -> Result<f64, ClassifierError> {
    let d = x.first().map_or(0, Vec::len);
    let count = (x.len() * d) as f64;
    if count == 0.0 {
        return Err(ClassifierError::DegenerateData("empty feature matrix".into()));
    }
    let mean = x.iter().flatten().sum::<f64>() / count;
    let var = x.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    if var <= numeric_eps {
        return Err(ClassifierError::ConstantFeatures);
    }
    Ok(1.0 / (d as f64 * var))
}

/// LRU cache of full kernel rows.
struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    capacity: usize,
    rows: HashMap<usize, (Rc<[f64]>, u64)>,
    clock: u64,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64, capacity: usize) -> Self {
        Self {
            x,
            gamma,
            capacity: capacity.max(2),
            rows: HashMap::new(),
            clock: 0,
        }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        if let Some((row, _)) = self.rows.get(&i) {
            return row[j];
        }
        rbf(self.gamma, &self.x[i], &self.x[j])
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        if let Some((row, stamp)) = self.rows.get_mut(&i) {
            *stamp = self.clock;
            return Rc::clone(row);
        }
        if self.rows.len() >= self.capacity {
            let oldest = *self.rows.iter().min_by_key(|(_, (_, s))| *s).map(|(k, _)| k).unwrap();
            self.rows.remove(&oldest);
        }
        let xi = &self.x[i];
        let row: Rc<[f64]> = self.x.iter().map(|xj| rbf(self.gamma, xi, xj)).collect();
        self.rows.insert(i, (Rc::clone(&row), self.clock));
        row
    }
}

struct Smo<'a, R: Rng> {
    y: Vec<f64>,
    alpha: Vec<f64>,
    /// `sum_j alpha_j y_j K(i, j)`, bias excluded.
    u: Vec<f64>,
    b: f64,
    c: f64,
    tol: f64,
    kernel: KernelRows<'a>,
    rng: R,
}

const STEP_EPS: f64 = 1e-12;

impl<R: Rng> Smo<'_, R> {
    fn error(&self, i: usize) -> f64 {
        self.u[i] + self.b - self.y[i]
    }

    fn is_free(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    fn violation(&self, i: usize) -> f64 {
        let r = self.error(i) * self.y[i];
        let a = self.alpha[i];
        let mut v: f64 = 0.0;
        if a < self.c {
            v = v.max(-r);
        }
        if a > 0.0 {
            v = v.max(r);
        }
        v
    }

    fn dual_objective(&self) -> f64 {
        let (sum, quad) = self
            .alpha
            .iter()
            .zip(&self.y)
            .zip(&self.u)
            .fold((0.0, 0.0), |(s, q), ((a, y), u)| (s + a, q + a * y * u));
        sum - 0.5 * quad
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.error(i1), self.error(i2));
        let s = y1 * y2;
        let c = self.c;
        let (lo, hi) = if s < 0.0 {
            ((a2 - a1).max(0.0), (c + a2 - a1).min(c))
        } else {
            ((a2 + a1 - c).max(0.0), (a2 + a1).min(c))
        };
        if hi - lo <= STEP_EPS * c {
            return false;
        }
        let k11 = self.kernel.entry(i1, i1);
        let k22 = self.kernel.entry(i2, i2);
        let k12 = self.kernel.entry(i1, i2);
        let eta = k11 + k22 - 2.0 * k12;

        let mut a2n = if eta > STEP_EPS {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Objective along the constraint line is linear; pick the better end.
            let g1 = y1 * (e1 - self.b) - a1 * k11 - s * a2 * k12;
            let g2 = y2 * (e2 - self.b) - s * a1 * k12 - a2 * k22;
            let end = |a2e: f64| {
                let a1e = a1 + s * (a2 - a2e);
                a1e * g1 + a2e * g2 + 0.5 * a1e * a1e * k11 + 0.5 * a2e * a2e * k22 + s * a2e * a1e * k12
            };
            let (lo_obj, hi_obj) = (end(lo), end(hi));
            if lo_obj < hi_obj - STEP_EPS {
                lo
            } else if lo_obj > hi_obj + STEP_EPS {
                hi
            } else {
                a2
            }
        };
        let snap = 1e-8 * c;
        if a2n < snap {
            a2n = 0.0;
        } else if a2n > c - snap {
            a2n = c;
        }
        if (a2n - a2).abs() < STEP_EPS * (a2n + a2 + STEP_EPS) {
            return false;
        }
        let mut a1n = a1 + s * (a2 - a2n);
        // Rounding can leave a1 a hair inside or outside the box; pin it to the
        // bound and move a2 so that sum(alpha * y) is unchanged.
        if a1n < snap {
            a2n += s * a1n;
            a1n = 0.0;
        } else if a1n > c - snap {
            a2n += s * (a1n - c);
            a1n = c;
        }
        a2n = a2n.clamp(0.0, c);

        let d1 = y1 * (a1n - a1);
        let d2 = y2 * (a2n - a2);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        self.b = if a1n > 0.0 && a1n < c {
            b1
        } else if a2n > 0.0 && a2n < c {
            b2
        } else {
            0.5 * (b1 + b2)
        };

        let r1 = self.kernel.row(i1);
        let r2 = self.kernel.row(i2);
        for ((u, k1), k2) in self.u.iter_mut().zip(r1.iter()).zip(r2.iter()) {
            *u += d1 * k1 + d2 * k2;
        }
        self.alpha[i1] = a1n;
        self.alpha[i2] = a2n;
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        if self.violation(i2) <= self.tol {
            return false;
        }
        let n = self.y.len();
        let e2 = self.error(i2);
        let free: Vec<usize> = (0..n).filter(|&i| self.is_free(i)).collect();
        if free.len() > 1 {
            let i1 = *free
                .iter()
                .max_by(|&&a, &&b| (self.error(a) - e2).abs().total_cmp(&(self.error(b) - e2).abs()))
                .unwrap();
            if self.take_step(i1, i2) {
                return true;
            }
        }
        if !free.is_empty() {
            let start = self.rng.gen_range(0..free.len());
            for k in 0..free.len() {
                if self.take_step(free[(start + k) % free.len()], i2) {
                    return true;
                }
            }
        }
        let start = self.rng.gen_range(0..n);
        for k in 0..n {
            let i1 = (start + k) % n;
            if !self.is_free(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }
}

/// Solves the soft-margin dual by SMO. A model is always returned; check
/// [`SvmFit::converged`] for whether the KKT tolerance was met.
pub fn svm_train(data: &Dataset, cfg: &SvmConfig, seed: u64) -> Result<SvmFit, ClassifierError> {
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(ClassifierError::InvalidConfig(format!("C must be positive, got {}", cfg.c)));
    }
    if !(cfg.kkt_tol > 0.0) {
        return Err(ClassifierError::InvalidConfig("kkt_tol must be positive".into()));
    }
    data.require_both_classes()?;
    let gamma = match cfg.gamma {
        Gamma::Scale => resolve_gamma(data.rows(), cfg.numeric_eps)?,
        Gamma::Value(g) if g > 0.0 && g.is_finite() => g,
        Gamma::Value(g) => return Err(ClassifierError::InvalidConfig(format!("gamma must be positive, got {g}"))),
    };
    let n = data.len();
    let mut smo = Smo {
        y: data.labels().iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect(),
        alpha: vec![0.0; n],
        u: vec![0.0; n],
        b: 0.0,
        c: cfg.c,
        tol: cfg.kkt_tol,
        kernel: KernelRows::new(data.rows(), gamma, cfg.cache_rows),
        rng: rng::stream(seed, 0x5eed_5e1f),
    };

    let mut examine_all = true;
    let mut unproductive = 0;
    let mut passes = 0;
    let mut objective = 0.0;
    loop {
        if passes >= cfg.max_passes || unproductive >= cfg.max_passes_without_progress {
            break;
        }
        passes += 1;
        let mut changed = 0;
        for i in 0..n {
            if (examine_all || smo.is_free(i)) && smo.examine(i) {
                changed += 1;
            }
        }
        if examine_all && changed == 0 {
            break;
        }
        if changed > 0 {
            let next = smo.dual_objective();
            if next - objective <= cfg.numeric_eps * (1.0 + objective.abs()) {
                unproductive += 1;
            } else {
                unproductive = 0;
            }
            objective = next;
        }
        if examine_all {
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
    }

    let max_kkt_violation = (0..n).map(|i| smo.violation(i)).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| smo.alpha[i] > cfg.numeric_eps).collect();
    let model = SvmModel {
        support_vectors: keep.iter().map(|&i| data.row(i).to_vec()).collect(),
        dual_coefs: keep.iter().map(|&i| smo.alpha[i] * smo.y[i]).collect(),
        bias: smo.b,
        gamma,
        c: cfg.c,
        n_features: data.dim(),
    };
    Ok(SvmFit {
        model,
        converged: max_kkt_violation <= cfg.kkt_tol,
        alphas: smo.alpha,
        passes,
        max_kkt_violation,
    })
}

/// Label 1 iff the decision value is strictly positive.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<Prediction, ClassifierError> {
    if x.len() != model.n_features {
        return Err(ClassifierError::DimMismatch {
            expected: model.n_features,
            got: x.len(),
        });
    }
    let f = model.decision_function(x);
    Ok(Prediction {
        label: u8::from(f > 0.0),
        score: f,
    })
}
