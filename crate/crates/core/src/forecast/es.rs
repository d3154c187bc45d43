//! Simple exponential smoothing with a flat multi-step forecast.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Forecaster;

const GRID_STEPS: usize = 100;
const GOLDEN_ITERS: usize = 80;

/// Smoothing level: a fixed value in `[0, 1]`, or fitted per history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphaRepr", into = "AlphaRepr")]
pub enum SmoothingLevel {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Fixed(f64),
    Keyword(String),
}

impl TryFrom<AlphaRepr> for SmoothingLevel {
    type Error = String;

    fn try_from(r: AlphaRepr) -> Result<Self, String> {
        match r {
            AlphaRepr::Fixed(a) if (0.0..=1.0).contains(&a) => Ok(SmoothingLevel::Fixed(a)),
            AlphaRepr::Fixed(a) => Err(format!("alpha {a} outside [0, 1]")),
            AlphaRepr::Keyword(k) if k == "auto" => Ok(SmoothingLevel::Auto),
            AlphaRepr::Keyword(k) => Err(format!("unknown alpha {k:?}")),
        }
    }
}

impl From<SmoothingLevel> for AlphaRepr {
    fn from(a: SmoothingLevel) -> Self {
        match a {
            SmoothingLevel::Auto => AlphaRepr::Keyword("auto".into()),
            SmoothingLevel::Fixed(a) => AlphaRepr::Fixed(a),
        }
    }
}

/// The level is initialised with the first observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    pub alpha: SmoothingLevel,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            alpha: SmoothingLevel::Auto,
        }
    }
}

/// Final level of `l_t = alpha*y_t + (1-alpha)*l_{t-1}` with `l_0 = y_0`,
/// evaluated in error-correction form so constant input stays exact.
pub fn final_level(history: &[f64], alpha: f64) -> f64 {
    let mut level = history[0];
    for &y in &history[1..] {
        level += alpha * (y - level);
    }
    level
}

/// Sum of squared one-step-ahead errors over the history.
pub fn one_step_sse(history: &[f64], alpha: f64) -> f64 {
    let mut level = history[0];
    let mut sse = 0.0;
    for &y in &history[1..] {
        let e = y - level;
        sse += e * e;
        level += alpha * e;
    }
    sse
}

/// Smoothing level minimising one-step SSE: a 0.01 grid locates the basin,
/// golden-section search refines inside it. Never worse than the grid.
pub fn select_alpha(history: &[f64]) -> f64 {
    let step = 1.0 / GRID_STEPS as f64;
    let (mut best_a, mut best_sse) = (1.0, one_step_sse(history, 1.0));
    for i in 0..GRID_STEPS {
        let a = i as f64 * step;
        let sse = one_step_sse(history, a);
        if sse < best_sse {
            best_a = a;
            best_sse = sse;
        }
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut lo = (best_a - step).max(0.0);
    let mut hi = (best_a + step).min(1.0);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (one_step_sse(history, c), one_step_sse(history, d));
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = one_step_sse(history, c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = one_step_sse(history, d);
        }
    }
    let refined = 0.5 * (lo + hi);
    if one_step_sse(history, refined) <= best_sse {
        refined
    } else {
        best_a
    }
}

pub fn es_forecast(history: &[f64], horizon: usize, cfg: &EsConfig) -> Result<Vec<f64>> {
    let alpha = match cfg.alpha {
        SmoothingLevel::Fixed(a) => {
            if history.is_empty() {
                return Err(Error::EmptyHistory);
            }
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1]")));
            }
            a
        }
        SmoothingLevel::Auto => {
            if history.len() < 2 {
                return Err(Error::EmptyHistory);
            }
            select_alpha(history)
        }
    };
    let level = final_level(history, alpha);
    if !level.is_finite() {
        return Err(Error::NumericalDivergence(
            "exponential smoothing level".into(),
        ));
    }
    Ok(vec![level; horizon])
}

impl Forecaster for EsConfig {
    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        es_forecast(history, horizon, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixed(a: f64) -> EsConfig {
        EsConfig {
            alpha: SmoothingLevel::Fixed(a),
        }
    }

    #[test]
    fn constant_history_is_a_fixed_point() {
        for cfg in [fixed(0.3), fixed(1.0), EsConfig::default()] {
            assert_eq!(es_forecast(&[4.2; 20], 5, &cfg).unwrap(), vec![4.2; 5]);
        }
    }

    #[test]
    fn alpha_one_repeats_last_observation() {
        let h = [1.0, 7.0, -2.0, 3.5];
        assert_eq!(es_forecast(&h, 3, &fixed(1.0)).unwrap(), vec![3.5; 3]);
    }

    #[test]
    fn hand_recursion() {
        assert_eq!(
            es_forecast(&[0.0, 10.0], 4, &fixed(0.5)).unwrap(),
            vec![5.0; 4]
        );
    }

    #[test]
    fn empty_history_errors() {
        assert!(matches!(
            es_forecast(&[], 3, &fixed(0.5)),
            Err(Error::EmptyHistory)
        ));
        assert!(matches!(
            es_forecast(&[1.0], 3, &EsConfig::default()),
            Err(Error::EmptyHistory)
        ));
        assert_eq!(es_forecast(&[1.0], 2, &fixed(0.5)).unwrap(), vec![1.0; 2]);
    }

    #[test]
    fn alpha_serde_forms() {
        let c: EsConfig = serde_json::from_str(r#"{"alpha": "auto"}"#).unwrap();
        assert_eq!(c.alpha, SmoothingLevel::Auto);
        let c: EsConfig = serde_json::from_str(r#"{"alpha": 0.25}"#).unwrap();
        assert_eq!(c.alpha, SmoothingLevel::Fixed(0.25));
        assert!(serde_json::from_str::<EsConfig>(r#"{"alpha": 1.5}"#).is_err());
        assert_eq!(
            serde_json::to_string(&EsConfig::default()).unwrap(),
            r#"{"alpha":"auto"}"#
        );
    }

    #[test]
    fn random_walk_prefers_high_alpha() {
        let mut v = 0.0;
        let h: Vec<f64> = (0..200)
            .map(|i| {
                v += if (i * 7919) % 13 < 6 { 1.0 } else { -1.0 };
                v
            })
            .collect();
        assert!(select_alpha(&h) > 0.8);
    }

    proptest! {
        #[test]
        fn auto_alpha_beats_the_grid(h in prop::collection::vec(-10.0f64..40.0, 2..80)) {
            let a = select_alpha(&h);
            let sse = one_step_sse(&h, a);
            for i in 0..=100 {
                let g = i as f64 / 100.0;
                prop_assert!(sse <= one_step_sse(&h, g) + 1e-12 * (1.0 + sse));
            }
        }

        #[test]
        fn flat_continuation_is_stable(c in -5.0f64..50.0, n in 1usize..50, a in 0.01f64..1.0, k in 1usize..30) {
            let h = vec![c; n];
            let f = es_forecast(&h, k, &fixed(a)).unwrap();
            let mut extended = h.clone();
            extended.extend_from_slice(&f);
            prop_assert_eq!(es_forecast(&extended, k, &fixed(a)).unwrap(), f);
        }
    }
}
