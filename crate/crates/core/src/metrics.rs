//! Masked forecasting metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn pairs<'a>(
    pred: &'a [f64],
    target: &'a [f64],
    mask: Option<&'a [bool]>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.len() != target.len() || mask.is_some_and(|m| m.len() != pred.len()) {
        return Err(Error::Data(format!(
            "metric inputs differ in length: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .enumerate()
        .filter(move |(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (&p, &t))| (p, t)))
}

fn mean(it: impl Iterator<Item = f64>, what: &str) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in it {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(format!("{what} over an empty set")));
    }
    Ok(sum / n as f64)
}

/// Mean absolute error over entries where `mask` is true.
pub fn mae(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    mean(pairs(pred, target, mask)?.map(|(p, t)| (p - t).abs()), "mae")
}

pub fn mse(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    mean(pairs(pred, target, mask)?.map(|(p, t)| (p - t) * (p - t)), "mse")
}

pub fn rmse(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    Ok(mse(pred, target, mask)?.sqrt())
}

/// Percentage error; zero targets are skipped as well as masked ones.
pub fn mape(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let terms = pairs(pred, target, mask)?
        .filter(|&(_, t)| t != 0.0)
        .map(|(p, t)| ((p - t) / t).abs());
    Ok(100.0 * mean(terms, "mape")?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub mse: f64,
}

impl Metrics {
    /// All four metrics. MAPE is NaN when every unmasked target is zero.
    pub fn compute(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<Self> {
        let mse = mse(pred, target, mask)?;
        let mape = match mape(pred, target, mask) {
            Err(Error::UndefinedMetric(_)) => f64::NAN,
            other => other?,
        };
        Ok(Self {
            mae: mae(pred, target, mask)?,
            rmse: mse.sqrt(),
            mape,
            mse,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mae" => Some(self.mae),
            "rmse" => Some(self.rmse),
            "mape" => Some(self.mape),
            "mse" => Some(self.mse),
            _ => None,
        }
    }

    fn mean_of(items: &[Metrics]) -> Self {
        let n = items.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            mae: avg(|m| m.mae),
            rmse: avg(|m| m.rmse),
            mape: avg(|m| m.mape),
            mse: avg(|m| m.mse),
        }
    }
}

/// Per-step metrics for a forecast of `shape = [samples, H, rest…]`.
pub fn per_step(pred: &[f64], target: &[f64], mask: Option<&[bool]>, shape: &[usize]) -> Result<Vec<Metrics>> {
    if shape.len() < 2 || shape.iter().product::<usize>() != pred.len() {
        return Err(Error::Data(format!("{} values do not fit shape {shape:?}", pred.len())));
    }
    if pred.len() != target.len() || mask.is_some_and(|m| m.len() != pred.len()) {
        return Err(Error::Data("metric inputs differ in length".into()));
    }
    let horizon = shape[1];
    let inner: usize = shape[2..].iter().product();
    (0..horizon)
        .map(|h| {
            let keep: Vec<bool> = (0..pred.len())
                .map(|i| (i / inner) % horizon == h && mask.is_none_or(|m| m[i]))
                .collect();
            Metrics::compute(pred, target, Some(&keep))
        })
        .collect()
}

/// Reporting slices: steps 3, 6 and 12 plus the mean over all twelve steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSlices {
    pub step3: Metrics,
    pub step6: Metrics,
    pub step12: Metrics,
    pub avg: Metrics,
}

pub fn horizon_slices(steps: &[Metrics]) -> Result<HorizonSlices> {
    if steps.len() < 12 {
        return Err(Error::Data(format!("horizon slices need 12 steps, got {}", steps.len())));
    }
    Ok(HorizonSlices {
        step3: steps[2],
        step6: steps[5],
        step12: steps[11],
        avg: Metrics::mean_of(&steps[..12]),
    })
}

/// `100·(pruned − original)/original`: positive means the pruned model is worse.
pub fn improvement_pct(original: f64, pruned: f64) -> f64 {
    100.0 * (pruned - original) / original
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_forecast_scores_zero() {
        let y = [1.0, -2.0, 3.5];
        let m = Metrics::compute(&y, &y, None).unwrap();
        assert_eq!((m.mae, m.rmse, m.mape, m.mse), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_values() {
        let m = Metrics::compute(&[2.0, 4.0], &[1.0, 2.0], None).unwrap();
        assert_eq!(m.mae, 1.5);
        assert_eq!(m.rmse, 2.5f64.sqrt());
        // |2-1|/1 and |4-2|/2 are both 1.
        assert_eq!(m.mape, 100.0);
        assert_eq!(m.mse, 2.5);
    }

    #[test]
    fn masking_one_entry_gives_single_entry_metric() {
        let m = Metrics::compute(&[2.0, 4.0], &[1.0, 2.0], Some(&[false, true])).unwrap();
        assert_eq!(m, Metrics::compute(&[4.0], &[2.0], None).unwrap());
    }

    #[test]
    fn empty_set_is_undefined() {
        assert!(matches!(mae(&[1.0], &[1.0], Some(&[false])), Err(Error::UndefinedMetric(_))));
        assert!(matches!(mape(&[1.0], &[0.0], None), Err(Error::UndefinedMetric(_))));
        assert!(Metrics::compute(&[1.0], &[0.0], None).unwrap().mape.is_nan());
        assert!(mae(&[1.0, 2.0], &[1.0], None).is_err());
    }

    #[test]
    fn mape_skips_zero_targets_only() {
        assert_eq!(mape(&[1.0, 3.0], &[0.0, 2.0], None).unwrap(), 50.0);
        assert_eq!(mae(&[1.0, 3.0], &[0.0, 2.0], None).unwrap(), 1.0);
    }

    fn ramp_steps() -> Vec<Metrics> {
        // Two samples, 12 steps, 3 nodes; error at step h is h+1.
        let shape = [2, 12, 3];
        let target = vec![0.0; 72];
        let pred: Vec<f64> = (0..72).map(|i| ((i / 3) % 12 + 1) as f64).collect();
        per_step(&pred, &target, None, &shape).unwrap()
    }

    #[test]
    fn ramp_slices() {
        let s = horizon_slices(&ramp_steps()).unwrap();
        assert_eq!(s.avg.mae, 6.5);
        assert_eq!(s.step12.mae, 12.0);
        assert_eq!(s.step3.mae, 3.0);
        assert_eq!(s.step6.rmse, 6.0);
    }

    #[test]
    fn constant_error_slices() {
        let pred = vec![0.5; 24];
        let s = horizon_slices(&per_step(&pred, &[0.0; 24], None, &[1, 12, 2]).unwrap()).unwrap();
        for m in [s.step3, s.step6, s.step12, s.avg] {
            assert_eq!(m.mae, 0.5);
        }
        assert!(horizon_slices(&ramp_steps()[..11]).is_err());
    }

    #[test]
    fn improvement_matches_table_arithmetic() {
        let pct = improvement_pct(18.229, 18.467);
        assert!((pct - 1.306).abs() < 1e-3);
        assert!((pct - 1.307).abs() < 0.01);
        assert_eq!(improvement_pct(3.0, 3.0), 0.0);
    }
}
