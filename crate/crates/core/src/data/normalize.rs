use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Min/max pair for one normalized quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max < min {
            return Err(DataError::Invalid(format!("bad min/max pair ({min}, {max})")));
        }
        Ok(MinMax { min, max })
    }

    /// Range of the values, `None` when empty.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| {
            Some(match acc {
                None => MinMax { min: v, max: v },
                Some(m) => MinMax {
                    min: m.min.min(v),
                    max: m.max.max(v),
                },
            })
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    /// `(x - min) / (max - min)`; a flat range maps everything to 0.5.
    /// Values outside the fitted range are not clipped.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            x * (self.max - self.min) + self.min
        }
    }
}

pub fn minmax_normalize(xs: &[f64], stats: MinMax) -> Vec<f64> {
    if stats.is_degenerate() {
        log::warn!("flat series (min == max == {}): normalized to 0.5", stats.min);
    }
    xs.iter().map(|&x| stats.normalize(x)).collect()
}

pub fn denormalize(xs: &[f64], stats: MinMax) -> Vec<f64> {
    xs.iter().map(|&x| stats.denormalize(x)).collect()
}

/// Training-split statistics. Load stats cover the two similar-day rows and
/// the target; temperature has its own range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub load: MinMax,
    pub temperature: MinMax,
}

impl NormStats {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let stats: NormStats = serde_json::from_str(&text)?;
        MinMax::new(stats.load.min, stats.load.max)?;
        MinMax::new(stats.temperature.min, stats.temperature.max)?;
        Ok(stats)
    }
}
