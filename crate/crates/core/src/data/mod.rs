//! Series storage, chronological splits, windowing and normalisation.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, read_csv, write_csv, CsvLayout, Missing};
pub use synth::{synth_ltsf, synth_stf, SynthLtsf, SynthStf};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Raw series `[steps, N, C]` with an observation mask and calendar indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    values: Tensor,
    observed: Vec<bool>,
    timestamps: Vec<i64>,
    steps_per_day: usize,
    tod: Vec<usize>,
    dow: Vec<usize>,
}

/// Calendar indices of a Unix timestamp: `(time-of-day slot, weekday)` with Monday = 0.
pub fn calendar_of(ts: i64, steps_per_day: usize) -> (usize, usize) {
    let secs = ts.rem_euclid(SECONDS_PER_DAY);
    let tod = (secs as i128 * steps_per_day as i128 / SECONDS_PER_DAY as i128) as usize;
    // 1970-01-01 was a Thursday.
    let dow = (ts.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize;
    (tod, dow)
}

impl SeriesDataset {
    /// `observed` is `[steps·N]`, one flag per node shared across features.
    pub fn new(
        name: impl Into<String>,
        values: Tensor,
        observed: Vec<bool>,
        timestamps: Vec<i64>,
        steps_per_day: usize,
    ) -> Result<Self> {
        let [steps, n, _] = values.shape()[..] else {
            return Err(Error::Data(format!("values must be [steps, N, C], got {:?}", values.shape())));
        };
        if observed.len() != steps * n {
            return Err(Error::Data(format!("mask has {} entries, want {}", observed.len(), steps * n)));
        }
        if timestamps.len() != steps {
            return Err(Error::Data(format!("{} timestamps for {steps} steps", timestamps.len())));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!("timestamps not increasing at step {}", i + 1)));
        }
        if steps_per_day == 0 {
            return Err(Error::Data("steps_per_day must be positive".into()));
        }
        let (tod, dow) = timestamps.iter().map(|&t| calendar_of(t, steps_per_day)).unzip();
        Ok(Self {
            name: name.into(),
            values,
            observed,
            timestamps,
            steps_per_day,
            tod,
            dow,
        })
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn steps_per_day(&self) -> usize {
        self.steps_per_day
    }

    pub fn time_of_day(&self) -> &[usize] {
        &self.tod
    }

    pub fn day_of_week(&self) -> &[usize] {
        &self.dow
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Lookback/horizon slices starting at `start`; targets keep the first `c_out` features.
    pub fn window(&self, start: usize, lookback: usize, horizon: usize, c_out: usize) -> Result<WindowSample> {
        let (n, c) = (self.nodes(), self.features());
        if start + lookback + horizon > self.steps() {
            return Err(Error::Data(format!("window at {start} runs past the end")));
        }
        if c_out == 0 || c_out > c {
            return Err(Error::Data(format!("{c_out} target features from {c}")));
        }
        let data = self.values.data();
        let row = n * c;
        let x = data[start * row..(start + lookback) * row].to_vec();
        let y_start = start + lookback;
        let mut y = Vec::with_capacity(horizon * n * c_out);
        for t in y_start..y_start + horizon {
            for ni in 0..n {
                let off = (t * n + ni) * c;
                y.extend_from_slice(&data[off..off + c_out]);
            }
        }
        let mask = |from: usize, len: usize, per: usize| -> Vec<bool> {
            self.observed[from * n..(from + len) * n]
                .iter()
                .flat_map(|&o| std::iter::repeat_n(o, per))
                .collect()
        };
        Ok(WindowSample {
            start,
            x: Tensor::new(&[lookback, n, c], x)?,
            y: Tensor::new(&[horizon, n, c_out], y)?,
            tod: self.tod[start..y_start].to_vec(),
            dow: self.dow[start..y_start].to_vec(),
            x_mask: mask(start, lookback, c),
            y_mask: mask(y_start, horizon, c_out),
        })
    }
}

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub start: usize,
    /// `[T, N, C]`.
    pub x: Tensor,
    /// `[H, N, C_out]`.
    pub y: Tensor,
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
    /// Per-element observation flags for `x`.
    pub x_mask: Vec<bool>,
    /// Per-element observation flags for `y`.
    pub y_mask: Vec<bool>,
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// The 6:2:2 split.
    pub const STANDARD: Self = Self { train: 0.6, val: 0.2, test: 0.2 };
    /// The 7:1:2 split.
    pub const SEVEN_ONE_TWO: Self = Self { train: 0.7, val: 0.1, test: 0.2 };

    /// Chronological, disjoint segments covering `steps`.
    pub fn split(&self, steps: usize) -> Result<Splits> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!("invalid split ratios {self:?}")));
        }
        let total: f64 = parts.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("split ratios sum to zero".into()));
        }
        let cut = |frac: f64| ((steps as f64) * frac / total + 1e-9).floor() as usize;
        let train_end = cut(self.train);
        let val_end = (train_end + cut(self.val)).min(steps);
        Ok(Splits {
            train: 0..train_end,
            val: train_end..val_end,
            test: val_end..steps,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Window start indices inside one segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSet {
    pub starts: Vec<usize>,
    pub warning: Option<String>,
}

/// Every window of `lookback + horizon` steps that fits inside `segment`.
pub fn make_windows(segment: Range<usize>, lookback: usize, horizon: usize) -> WindowSet {
    let need = lookback + horizon;
    if segment.len() < need {
        return WindowSet {
            starts: Vec::new(),
            warning: Some(format!("segment {segment:?} is shorter than {need} steps; no windows")),
        };
    }
    WindowSet {
        starts: (segment.start..=segment.end - need).collect(),
        warning: None,
    }
}

/// Per-feature z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits on observed entries of steps in `rows`.
    pub fn fit(ds: &SeriesDataset, rows: Range<usize>) -> Result<Self> {
        let (n, c) = (ds.nodes(), ds.features());
        let data = ds.values().data();
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for k in 0..c {
            let vals: Vec<f64> = rows
                .clone()
                .flat_map(|t| (0..n).map(move |ni| (t, ni)))
                .filter(|&(t, ni)| ds.observed()[t * n + ni])
                .map(|(t, ni)| data[(t * n + ni) * c + k])
                .collect();
            if vals.is_empty() {
                return Err(Error::Data(format!("feature {k} has no observed training values")));
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            if !(var > 0.0) {
                return Err(Error::Data(format!("feature {k} has zero variance on the training rows")));
            }
            mean[k] = m;
            std[k] = var.sqrt();
        }
        Ok(Self { mean, std })
    }

    fn check(&self, t: &Tensor) -> Result<usize> {
        let c = *t.shape().last().unwrap_or(&0);
        if c == 0 || c > self.mean.len() {
            return Err(Error::Data(format!("{c} features against {} fitted", self.mean.len())));
        }
        Ok(c)
    }

    /// Normalises a tensor whose last axis holds the leading features.
    pub fn forward(&self, t: &Tensor) -> Result<Tensor> {
        let c = self.check(t)?;
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let k = i % c;
            *v = (*v - self.mean[k]) / self.std[k];
        }
        Ok(out)
    }

    /// Back to the original scale.
    pub fn inverse(&self, t: &Tensor) -> Result<Tensor> {
        let c = self.check(t)?;
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let k = i % c;
            *v = *v * self.std[k] + self.mean[k];
        }
        Ok(out)
    }
}

/// Z-scores every value with statistics from the `train` steps. Missing
/// entries become 0 (the training mean).
pub fn zscore(ds: &SeriesDataset, train: Range<usize>) -> Result<(SeriesDataset, NormStats)> {
    let stats = NormStats::fit(ds, train)?;
    let mut values = stats.forward(ds.values())?;
    let c = ds.features();
    for (i, v) in values.data_mut().iter_mut().enumerate() {
        if !ds.observed[i / c] {
            *v = 0.0;
        }
    }
    let out = SeriesDataset { values, ..ds.clone() };
    Ok((out, stats))
}
