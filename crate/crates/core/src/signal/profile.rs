use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{RedError, Result};
use crate::seed;

pub const SAMPLES_PER_SYMBOL: usize = 8;
pub const ROLL_OFF: f64 = 0.35;
const SPAN_SYMBOLS: usize = 8;
pub const MIN_BURST_LEN: usize = 64;

/// Hardware imperfections of one transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterProfile {
    pub emitter_id: u32,
    /// Linear Q/I amplitude ratio.
    pub iq_gain_imbalance: f64,
    /// Radians.
    pub iq_phase_imbalance: f64,
    /// Cycles per sample.
    pub carrier_freq_offset: f64,
    pub dc_offset_i: f64,
    pub dc_offset_q: f64,
    /// Standard deviation of the per-sample phase increment, radians.
    pub phase_noise_std: f64,
    /// Coefficient of the cubic term `a·s·|s|²`.
    pub nonlinearity_coeff: f64,
}

impl EmitterProfile {
    pub fn ideal(emitter_id: u32) -> Self {
        EmitterProfile {
            emitter_id,
            iq_gain_imbalance: 1.0,
            iq_phase_imbalance: 0.0,
            carrier_freq_offset: 0.0,
            dc_offset_i: 0.0,
            dc_offset_q: 0.0,
            phase_noise_std: 0.0,
            nonlinearity_coeff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iq_gain_imbalance > 0.0) || !(self.phase_noise_std >= 0.0) {
            return Err(RedError::InvalidArgument(format!(
                "emitter {}: gain imbalance must be > 0 and phase noise ≥ 0",
                self.emitter_id
            )));
        }
        Ok(())
    }
}

/// Unit-energy root-raised-cosine taps spanning `SPAN_SYMBOLS` symbols.
pub fn rrc_taps(sps: usize, span: usize, beta: f64) -> Vec<f64> {
    let n = span * sps + 1;
    let mid = (n / 2) as f64;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            if t == 0.0 {
                1.0 - beta + 4.0 * beta / PI
            } else if (t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-12 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                ((PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos())
                    / (PI * t * (1.0 - (4.0 * beta * t).powi(2)))
            }
        })
        .collect();
    let energy = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut h {
        *v /= energy;
    }
    h
}

/// Random QPSK, `SAMPLES_PER_SYMBOL` samples per symbol, RRC shaped, scaled to unit mean power.
pub fn clean_waveform(waveform_seed: u64, len: usize) -> Vec<Complex64> {
    let mut rng = seed::rng(waveform_seed, "symbols", 0);
    let taps = rrc_taps(SAMPLES_PER_SYMBOL, SPAN_SYMBOLS, ROLL_OFF);
    let n_sym = (len + taps.len()) / SAMPLES_PER_SYMBOL + 1;
    let mut up = vec![Complex64::new(0.0, 0.0); n_sym * SAMPLES_PER_SYMBOL];
    for k in 0..n_sym {
        let i = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let q = if rng.random::<bool>() { 1.0 } else { -1.0 };
        up[k * SAMPLES_PER_SYMBOL] = Complex64::new(i, q) * FRAC_1_SQRT_2;
    }
    // skip the filter's ramp-up so every output sample sees a full tap span
    let start = taps.len() - 1;
    let mut out: Vec<Complex64> = (0..len)
        .map(|n| {
            let center = start + n;
            taps.iter()
                .enumerate()
                .map(|(k, &h)| up[center - k] * h)
                .sum()
        })
        .collect();
    let power = out.iter().map(|c| c.norm_sqr()).sum::<f64>() / len as f64;
    let scale = 1.0 / power.sqrt();
    for c in &mut out {
        *c *= scale;
    }
    out
}

/// Clean burst passed through the profile's impairments, in order:
/// cubic nonlinearity, IQ imbalance, DC offset, CFO rotation, phase-noise walk.
pub fn synthesize_burst(profile: &EmitterProfile, waveform_seed: u64, len: usize) -> Result<Vec<Complex64>> {
    if len < MIN_BURST_LEN {
        return Err(RedError::InvalidArgument(format!(
            "burst length {len} below minimum {MIN_BURST_LEN}"
        )));
    }
    profile.validate()?;
    let mut s = clean_waveform(waveform_seed, len);
    let mut pn_rng = seed::rng(waveform_seed, "phase-noise", profile.emitter_id as u64);
    let (sin_phi, cos_phi) = profile.iq_phase_imbalance.sin_cos();
    let dc = Complex64::new(profile.dc_offset_i, profile.dc_offset_q);
    let mut theta = 0.0f64;
    for (n, x) in s.iter_mut().enumerate() {
        let mut v = *x + *x * x.norm_sqr() * profile.nonlinearity_coeff;
        v = Complex64::new(v.re, profile.iq_gain_imbalance * (v.im * cos_phi - v.re * sin_phi));
        v += dc;
        v *= Complex64::from_polar(1.0, 2.0 * PI * profile.carrier_freq_offset * n as f64);
        if profile.phase_noise_std > 0.0 {
            if n > 0 {
                theta += profile.phase_noise_std * pn_rng.sample::<f64, _>(StandardNormal);
            }
            v *= Complex64::from_polar(1.0, theta);
        }
        *x = v;
    }
    Ok(s)
}
