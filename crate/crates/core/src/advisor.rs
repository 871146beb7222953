//! Model selection from label cardinality `L` and sentence count `N`.
//!
//! The rule recommends the LC-only decoder when `L ≥ 20` and
//! `N > α · L^β`, and CRF+LC otherwise. The weighted residual objective
//! `Σ δ_i² · exp(-α N_i / L_i^β)` and a projected gradient-descent fit for
//! `(α, β)` are provided, together with the BiLSTM degradation ratio
//! `(L₁/L₂)^1.7 · (N₁/N₂)^0.6`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum label cardinality for which LC alone is recommended.
pub const MIN_LABELS_FOR_LC_ONLY: u64 = 20;

const DEGRADATION_LABEL_EXPONENT: f64 = 1.7;
const DEGRADATION_SIZE_EXPONENT: f64 = 0.6;

/// `L` counts the full label vocabulary including `O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetProfile {
    #[serde(rename = "L")]
    pub labels: u64,
    #[serde(rename = "N")]
    pub sentences: u64,
}

impl DatasetProfile {
    pub fn new(labels: u64, sentences: u64) -> Result<Self> {
        if labels < 2 {
            return Err(Error::invalid(format!("label cardinality must be at least 2, got {labels}")));
        }
        if sentences < 1 {
            return Err(Error::invalid("sentence count must be positive"));
        }
        Ok(DatasetProfile { labels, sentences })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvisorParams {
    pub alpha: f64,
    pub beta: f64,
}

impl AdvisorParams {
    pub const DEFAULT: AdvisorParams = AdvisorParams { alpha: 0.16, beta: 2.8 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!("alpha and beta must be positive, got ({alpha}, {beta})")));
        }
        Ok(AdvisorParams { alpha, beta })
    }

    /// `α · L^β`.
    pub fn threshold(&self, labels: u64) -> f64 {
        self.alpha * (labels as f64).powf(self.beta)
    }
}

impl Default for AdvisorParams {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Recommendation {
    #[serde(rename = "LC_ONLY")]
    LcOnly,
    #[serde(rename = "CRF_PLUS_LC")]
    CrfPlusLc,
}

impl fmt::Display for Recommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recommendation::LcOnly => "LC_ONLY",
            Recommendation::CrfPlusLc => "CRF_PLUS_LC",
        })
    }
}

pub fn recommend(profile: DatasetProfile, params: AdvisorParams) -> Recommendation {
    if profile.labels >= MIN_LABELS_FOR_LC_ONLY && profile.sentences as f64 > params.threshold(profile.labels) {
        Recommendation::LcOnly
    } else {
        Recommendation::CrfPlusLc
    }
}

/// One fitting observation: the residual `F1_best - F1_pred` on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub delta: f64,
    pub profile: DatasetProfile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
}

/// `Σ δ² exp(-α N / L^β)` and its partial derivatives in `α` and `β`.
///
/// `α` and `β` are taken raw so the objective can be evaluated on the box
/// boundary (including `α = 0`).
pub fn objective_and_gradient(observations: &[Observation], alpha: f64, beta: f64) -> Result<ObjectiveValue> {
    if observations.is_empty() {
        return Err(Error::invalid("at least one observation is required"));
    }
    let mut out = ObjectiveValue { value: 0.0, d_alpha: 0.0, d_beta: 0.0 };
    for obs in observations {
        if !obs.delta.is_finite() {
            return Err(Error::invalid("residuals must be finite"));
        }
        let l = obs.profile.labels as f64;
        let ratio = obs.profile.sentences as f64 / l.powf(beta);
        let term = obs.delta * obs.delta * (-alpha * ratio).exp();
        out.value += term;
        out.d_alpha -= term * ratio;
        out.d_beta += term * alpha * ratio * l.ln();
    }
    Ok(out)
}

/// Inclusive bounds for `α` and `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox { alpha: (0.01, 1.0), beta: (1.0, 4.0) }
    }
}

impl ParamBox {
    fn project(&self, alpha: f64, beta: f64) -> (f64, f64) {
        (alpha.clamp(self.alpha.0, self.alpha.1), beta.clamp(self.beta.0, self.beta.1))
    }

    fn contains(&self, alpha: f64, beta: f64) -> bool {
        (self.alpha.0..=self.alpha.1).contains(&alpha) && (self.beta.0..=self.beta.1).contains(&beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: AdvisorParams,
    /// `(α, β, objective)` for the initial point and every accepted step.
    pub trajectory: Vec<(f64, f64, f64)>,
}

/// Projected gradient descent on [`objective_and_gradient`] inside `bounds`.
///
/// A step that raises the objective is rejected and the step size halved,
/// so the accepted trajectory is non-increasing.
pub fn fit(
    observations: &[Observation],
    init: AdvisorParams,
    bounds: ParamBox,
    steps: usize,
    learning_rate: f64,
) -> Result<FitResult> {
    if bounds.alpha.0 > bounds.alpha.1 || bounds.beta.0 > bounds.beta.1 {
        return Err(Error::invalid("parameter box is empty"));
    }
    if !bounds.contains(init.alpha, init.beta) {
        return Err(Error::invalid("initial parameters lie outside the box"));
    }
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }

    let (mut alpha, mut beta) = (init.alpha, init.beta);
    let mut current = objective_and_gradient(observations, alpha, beta)?;
    if !current.value.is_finite() {
        return Err(Error::Numerical { batch: 0, message: format!("objective is {}", current.value) });
    }
    let mut trajectory = vec![(alpha, beta, current.value)];
    let mut lr = learning_rate;

    for step in 0..steps {
        let (a, b) = bounds.project(alpha - lr * current.d_alpha, beta - lr * current.d_beta);
        if a == alpha && b == beta {
            break;
        }
        let candidate = objective_and_gradient(observations, a, b)?;
        if !candidate.value.is_finite() {
            return Err(Error::Numerical { batch: step + 1, message: format!("objective is {}", candidate.value) });
        }
        if candidate.value > current.value {
            lr /= 2.0;
            if lr < f64::MIN_POSITIVE {
                break;
            }
            continue;
        }
        alpha = a;
        beta = b;
        current = candidate;
        trajectory.push((alpha, beta, current.value));
    }

    let params = if alpha > 0.0 && beta > 0.0 { AdvisorParams { alpha, beta } } else { init };
    Ok(FitResult { params, trajectory })
}

/// `(L₁/L₂)^1.7 · (N₁/N₂)^0.6`: how much larger the BiLSTM penalty is on
/// `p1` than on `p2`.
pub fn bilstm_degradation_ratio(p1: DatasetProfile, p2: DatasetProfile) -> f64 {
    (p1.labels as f64 / p2.labels as f64).powf(DEGRADATION_LABEL_EXPONENT)
        * (p1.sentences as f64 / p2.sentences as f64).powf(DEGRADATION_SIZE_EXPONENT)
}

/// JSON answer of the `advise` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub recommendation: Recommendation,
    pub threshold: f64,
}

pub fn advise(profile: DatasetProfile, params: AdvisorParams) -> Advice {
    Advice { recommendation: recommend(profile, params), threshold: params.threshold(profile.labels) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(l: u64, n: u64) -> DatasetProfile {
        DatasetProfile::new(l, n).unwrap()
    }

    #[test]
    fn recommend_examples() {
        let d = AdvisorParams::DEFAULT;
        assert_eq!(recommend(p(13, 3434), d), Recommendation::CrfPlusLc);
        assert_eq!(recommend(p(25, 11307), d), Recommendation::LcOnly);
        assert_eq!(recommend(p(19, 1_000_000_000), d), Recommendation::CrfPlusLc);
        // Exactly on the threshold: the comparison is strict.
        assert_eq!(recommend(p(20, 20), AdvisorParams::new(1.0, 1.0).unwrap()), Recommendation::CrfPlusLc);
        assert_eq!(recommend(p(20, 21), AdvisorParams::new(1.0, 1.0).unwrap()), Recommendation::LcOnly);
    }

    #[test]
    fn threshold_value() {
        let t = AdvisorParams::DEFAULT.threshold(25);
        assert!((t - 0.16 * 25f64.powf(2.8)).abs() < 1e-9);
        assert!(t > 1300.0 && t < 1320.0, "{t}");
    }

    #[test]
    fn profile_validation() {
        assert!(DatasetProfile::new(1, 10).is_err());
        assert!(DatasetProfile::new(5, 0).is_err());
        assert!(AdvisorParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn advice_json() {
        let json = serde_json::to_value(advise(p(13, 3434), AdvisorParams::DEFAULT)).unwrap();
        assert_eq!(json["recommendation"], "CRF_PLUS_LC");
        assert!(json["threshold"].as_f64().unwrap() > 0.0);
        let input: DatasetProfile = serde_json::from_str(r#"{"L": 25, "N": 11307}"#).unwrap();
        assert_eq!(input, p(25, 11307));
    }

    fn obs() -> Vec<Observation> {
        vec![
            Observation { delta: 0.012, profile: p(25, 3000) },
            Observation { delta: -0.004, profile: p(13, 3434) },
            Observation { delta: 0.02, profile: p(13, 11307) },
            Observation { delta: 0.007, profile: p(25, 4000) },
        ]
    }

    #[test]
    fn alpha_zero_gives_plain_sum() {
        let v = objective_and_gradient(&obs(), 0.0, 2.8).unwrap();
        let expected: f64 = obs().iter().map(|o| o.delta * o.delta).sum();
        assert!((v.value - expected).abs() < 1e-15);
    }

    #[test]
    fn objective_decays_in_alpha() {
        let one = [obs()[0]];
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let v = objective_and_gradient(&one, alpha, 2.0).unwrap().value;
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn fit_drives_alpha_to_upper_bound() {
        let data = [
            Observation { delta: 0.3, profile: p(37, 3000) },
            Observation { delta: 0.2, profile: p(25, 1000) },
            Observation { delta: -0.25, profile: p(37, 1500) },
        ];
        let bounds = ParamBox { alpha: (0.01, 1.0), beta: (2.5, 3.0) };
        let fit = fit(&data, AdvisorParams::new(0.1, 2.8).unwrap(), bounds, 2000, 100.0).unwrap();
        assert_eq!(fit.params.alpha, 1.0, "{:?}", fit.trajectory.last());
        assert!(fit.trajectory.windows(2).all(|w| w[1].2 <= w[0].2));
    }

    #[test]
    fn fit_with_zero_deltas_is_stationary() {
        let zero: Vec<_> = obs().into_iter().map(|o| Observation { delta: 0.0, ..o }).collect();
        let init = AdvisorParams::new(0.3, 2.5).unwrap();
        let fit = fit(&zero, init, ParamBox::default(), 100, 1.0).unwrap();
        assert_eq!(fit.params, init);
        assert_eq!(fit.trajectory, vec![(0.3, 2.5, 0.0)]);
    }

    #[test]
    fn fit_from_boundary_stationary_point() {
        // α at its upper bound and β at its lower bound: the gradient points
        // out of the box on both coordinates, so projection returns init.
        let init = AdvisorParams::new(1.0, 1.0).unwrap();
        let data = [Observation { delta: 0.1, profile: p(2, 1) }];
        let g = objective_and_gradient(&data, 1.0, 1.0).unwrap();
        assert!(g.d_alpha < 0.0 && g.d_beta > 0.0);
        let fit = fit(&data, init, ParamBox::default(), 10, 0.5).unwrap();
        assert_eq!(fit.params, init);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let outside = AdvisorParams::new(2.0, 2.0).unwrap();
        assert!(fit(&obs(), outside, ParamBox::default(), 10, 0.1).is_err());
        let empty = ParamBox { alpha: (1.0, 0.5), beta: (1.0, 2.0) };
        assert!(fit(&obs(), AdvisorParams::DEFAULT, empty, 10, 0.1).is_err());
        assert!(objective_and_gradient(&[], 0.1, 1.0).is_err());
    }

    #[test]
    fn degradation_ratios() {
        assert_eq!(bilstm_degradation_ratio(p(13, 100), p(13, 100)), 1.0);
        let r = bilstm_degradation_ratio(p(25, 10_000), p(13, 10_000));
        assert!((r - (25.0f64 / 13.0).powf(1.7)).abs() < 1e-12);
        assert!((r - 3.04).abs() < 0.005, "{r}");
        let r = bilstm_degradation_ratio(p(13, 2000), p(13, 1000));
        assert!((r - 1.516).abs() < 5e-4, "{r}");
    }
}
