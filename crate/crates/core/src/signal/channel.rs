use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{RedError, Result};

/// Discrete impulse response between transmitter and receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub taps: Vec<Complex64>,
}

impl ChannelModel {
    pub fn new(taps: Vec<Complex64>) -> Result<Self> {
        let ch = ChannelModel { taps };
        ch.validate()?;
        Ok(ch)
    }

    pub fn identity() -> Self {
        ChannelModel {
            taps: vec![Complex64::new(1.0, 0.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(RedError::InvalidArgument("channel needs at least one tap".into()));
        }
        if !(self.taps.iter().map(|t| t.norm_sqr()).sum::<f64>() > 0.0) {
            return Err(RedError::InvalidArgument("channel taps carry no energy".into()));
        }
        Ok(())
    }

    /// Causal convolution truncated to the input length.
    pub fn filter(&self, s: &[Complex64]) -> Vec<Complex64> {
        (0..s.len())
            .map(|n| {
                self.taps
                    .iter()
                    .enumerate()
                    .take(n + 1)
                    .map(|(k, h)| h * s[n - k])
                    .sum()
            })
            .collect()
    }
}

/// `r = s * h + n`, with circular complex Gaussian `n` scaled so the SNR measured
/// on the filtered signal equals `snr_db`. `f64::INFINITY` adds no noise.
pub fn apply_channel_awgn(s: &[Complex64], ch: &ChannelModel, snr_db: f64, rng: &mut impl Rng) -> Result<Vec<Complex64>> {
    ch.validate()?;
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(RedError::InvalidArgument(format!("snr {snr_db} dB")));
    }
    let mut r = ch.filter(s);
    if snr_db == f64::INFINITY || r.is_empty() {
        return Ok(r);
    }
    let p_signal = r.iter().map(|c| c.norm_sqr()).sum::<f64>() / r.len() as f64;
    let sigma = (p_signal / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    for v in &mut r {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re, im) * sigma;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::signal::clean_waveform;

    #[test]
    fn unit_tap_without_noise_is_identity() {
        let s = clean_waveform(5, 128);
        let r = apply_channel_awgn(&s, &ChannelModel::identity(), f64::INFINITY, &mut seed::rng(0, "t", 0)).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn shift_kernel_delays_by_one() {
        let s = clean_waveform(5, 64);
        let ch = ChannelModel::new(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]).unwrap();
        let r = apply_channel_awgn(&s, &ch, f64::INFINITY, &mut seed::rng(0, "t", 0)).unwrap();
        assert_eq!(r[0], Complex64::new(0.0, 0.0));
        assert_eq!(&r[1..], &s[..63]);
    }

    #[test]
    fn zero_db_noise_power_matches_signal_power() {
        let ch = ChannelModel::new(vec![Complex64::new(0.9, 0.1), Complex64::new(0.2, -0.3)]).unwrap();
        let mut ratios = Vec::new();
        for i in 0..100 {
            let s = clean_waveform(i, 512);
            let clean = ch.filter(&s);
            let noisy = apply_channel_awgn(&s, &ch, 0.0, &mut seed::rng(7, "noise", i)).unwrap();
            let ps = clean.iter().map(|c| c.norm_sqr()).sum::<f64>();
            let pn = noisy.iter().zip(&clean).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            ratios.push(pn / ps);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((0.9..=1.1).contains(&mean), "mean ratio {mean}");
    }

    #[test]
    fn empty_or_dead_taps_rejected() {
        assert!(ChannelModel::new(vec![]).is_err());
        assert!(ChannelModel::new(vec![Complex64::new(0.0, 0.0)]).is_err());
        let bad = ChannelModel { taps: vec![] };
        assert!(apply_channel_awgn(&[Complex64::new(1.0, 0.0)], &bad, 10.0, &mut seed::rng(0, "t", 0)).is_err());
    }
}
