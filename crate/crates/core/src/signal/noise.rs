use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{RedError, Result};

/// Signal-to-noise setting for artificial perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SnrSpec {
    /// No perturbation.
    Clean,
    Fixed { db: f64 },
    /// Drawn uniformly per record.
    Uniform { low_db: f64, high_db: f64 },
}

impl SnrSpec {
    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            SnrSpec::Clean => f64::INFINITY,
            SnrSpec::Fixed { db } => db,
            SnrSpec::Uniform { low_db, high_db } => {
                if high_db > low_db {
                    rng.random_range(low_db..high_db)
                } else {
                    low_db
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SnrSpec::Clean => Ok(()),
            SnrSpec::Fixed { db } if !db.is_nan() => Ok(()),
            SnrSpec::Uniform { low_db, high_db } if low_db.is_finite() && high_db.is_finite() && low_db <= high_db => Ok(()),
            other => Err(RedError::Config(format!("invalid snr setting {other:?}"))),
        }
    }
}

/// Adds real Gaussian noise to a `channels × len` record at `snr_db`, measured
/// against the record's power after removing each channel's mean. Values are
/// not clipped back into the normalized range.
pub fn awgn_perturb(x: &[f64], channels: usize, snr_db: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if channels == 0 || x.len() % channels != 0 || x.is_empty() {
        return Err(RedError::shape("awgn_perturb", format!("{} values in {channels} channels", x.len())));
    }
    if snr_db == f64::INFINITY {
        return Ok(x.to_vec());
    }
    if !snr_db.is_finite() {
        return Err(RedError::InvalidArgument(format!("snr {snr_db} dB")));
    }
    let len = x.len() / channels;
    let mut ac = 0.0;
    for row in x.chunks(len) {
        let mean = row.iter().sum::<f64>() / len as f64;
        ac += row.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    let p_ac = ac / x.len() as f64;
    if !(p_ac > 0.0) {
        return Err(RedError::Degenerate("record has zero AC power".into()));
    }
    let sigma = (p_ac / 10f64.powf(snr_db / 10.0)).sqrt();
    Ok(x.iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}
