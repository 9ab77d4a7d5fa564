use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::channel::{apply_channel_awgn, ChannelModel};
use super::profile::{synthesize_burst, EmitterProfile, MIN_BURST_LEN};
use super::to_iq_rows;
use crate::error::{RedError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            t => Err(RedError::Format(format!("unknown split tag {t}"))),
        }
    }
}

/// Half-widths of the uniform ranges emitter impairments are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentSpread {
    /// Gain imbalance is drawn from `1 ± gain_imbalance`.
    pub gain_imbalance: f64,
    pub phase_imbalance: f64,
    pub cfo: f64,
    pub dc_offset: f64,
    /// Upper bound; drawn from `[0, phase_noise_std]`.
    pub phase_noise_std: f64,
    pub nonlinearity: f64,
    /// Channel length; the first tap is 1, later taps are small complex Gaussians.
    pub channel_taps: usize,
    pub channel_spread: f64,
    /// Minimum distance between any two emitters in spread-normalized impairment space.
    pub min_separation: f64,
}

impl Default for ImpairmentSpread {
    fn default() -> Self {
        ImpairmentSpread {
            gain_imbalance: 0.15,
            phase_imbalance: 0.15,
            cfo: 0.004,
            dc_offset: 0.15,
            phase_noise_std: 0.002,
            nonlinearity: 0.08,
            channel_taps: 3,
            channel_spread: 0.1,
            min_separation: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_known: usize,
    pub n_rogue: usize,
    pub samples_per_class: usize,
    pub length: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Recording SNR applied after the channel; `inf` records noise-free.
    pub capture_snr_db: f64,
    pub spread: ImpairmentSpread,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_known: 8,
            n_rogue: 2,
            samples_per_class: 200,
            length: 1024,
            train_fraction: 0.64,
            val_fraction: 0.16,
            capture_snr_db: 30.0,
            spread: ImpairmentSpread::default(),
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RedError::Config(m));
        if self.n_known < 2 {
            return bad(format!("need at least 2 known classes, got {}", self.n_known));
        }
        if self.n_rogue < 1 {
            return bad("need at least 1 rogue class".into());
        }
        if self.samples_per_class < 10 {
            return bad(format!("need at least 10 samples per class, got {}", self.samples_per_class));
        }
        if self.length < MIN_BURST_LEN {
            return bad(format!("record length {} below {MIN_BURST_LEN}", self.length));
        }
        let (tr, va) = (self.train_fraction, self.val_fraction);
        if !(tr > 0.0 && va > 0.0 && tr + va < 1.0) {
            return bad(format!("split fractions train={tr} val={va} must be positive and leave a test share"));
        }
        if self.capture_snr_db.is_nan() {
            return bad("capture_snr_db is NaN".into());
        }
        let s = &self.spread;
        if [s.gain_imbalance, s.phase_imbalance, s.cfo, s.dc_offset, s.phase_noise_std, s.nonlinearity, s.channel_spread, s.min_separation]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
            || s.gain_imbalance >= 1.0
            || s.channel_taps == 0
        {
            return bad(format!("invalid impairment spread {s:?}"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_known + self.n_rogue
    }

    /// `(train, val)` counts per known class; the remainder goes to test.
    pub fn split_counts(&self) -> (usize, usize) {
        let n = self.samples_per_class as f64;
        ((n * self.train_fraction).round() as usize, (n * self.val_fraction).round() as usize)
    }
}

/// Global min–max affine map into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn fit<'a>(arrays: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for a in arrays {
            for &v in a {
                any = true;
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !any {
            return Err(RedError::Degenerate("empty dataset".into()));
        }
        if !(max > min) {
            return Err(RedError::Degenerate(format!("constant dataset (min = max = {min})")));
        }
        Ok(Normalization { min, max })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

/// Normalizes all arrays in place with one global `(min, max)` and returns it.
pub fn minmax_normalize(arrays: &mut [Vec<f64>]) -> Result<Normalization> {
    let norm = Normalization::fit(arrays.iter().map(Vec::as_slice))?;
    for a in arrays.iter_mut() {
        for v in a.iter_mut() {
            *v = norm.apply(*v);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: usize,
    pub split: Split,
    /// `2 × L`, I row then Q row.
    pub data: Vec<f32>,
}

impl Record {
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IQDataset {
    pub length: usize,
    pub records: Vec<Record>,
    pub known_classes: Vec<usize>,
    pub rogue_classes: Vec<usize>,
    /// Fitted on the training split and applied to every record.
    pub normalization: Normalization,
}

impl IQDataset {
    pub const CHANNELS: usize = 2;

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn n_known(&self) -> usize {
        self.known_classes.len()
    }

    pub fn is_known(&self, label: usize) -> bool {
        self.known_classes.contains(&label)
    }

    /// Infers known classes (those with training records) and rogue classes
    /// (all others), then checks the dataset invariants.
    pub fn from_records(length: usize, records: Vec<Record>, normalization: Normalization) -> Result<Self> {
        let mut known: Vec<usize> = records.iter().filter(|r| r.split == Split::Train).map(|r| r.label).collect();
        known.sort_unstable();
        known.dedup();
        let mut rogue: Vec<usize> = records.iter().map(|r| r.label).filter(|l| known.binary_search(l).is_err()).collect();
        rogue.sort_unstable();
        rogue.dedup();
        let ds = IQDataset {
            length,
            records,
            known_classes: known,
            rogue_classes: rogue,
            normalization,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.known_classes.iter().any(|k| self.rogue_classes.contains(k)) {
            return Err(RedError::Degenerate("known and rogue classes overlap".into()));
        }
        // training code indexes centers and logits by label directly
        if self.known_classes.iter().enumerate().any(|(i, &k)| i != k) {
            return Err(RedError::Degenerate(format!(
                "known labels must be 0..K, got {:?}",
                self.known_classes
            )));
        }
        for r in &self.records {
            if r.data.len() != Self::CHANNELS * self.length {
                return Err(RedError::shape("dataset", format!("record has {} values", r.data.len())));
            }
            if self.rogue_classes.contains(&r.label) && r.split != Split::Test {
                return Err(RedError::Degenerate(format!("rogue label {} outside the test split", r.label)));
            }
        }
        Ok(())
    }
}

fn separation(a: &EmitterProfile, b: &EmitterProfile, s: &ImpairmentSpread) -> f64 {
    let scaled = |x: f64, w: f64| if w > 0.0 { x / w } else { 0.0 };
    [
        scaled(a.iq_gain_imbalance - b.iq_gain_imbalance, s.gain_imbalance),
        scaled(a.iq_phase_imbalance - b.iq_phase_imbalance, s.phase_imbalance),
        scaled(a.carrier_freq_offset - b.carrier_freq_offset, s.cfo),
        scaled(a.dc_offset_i - b.dc_offset_i, s.dc_offset),
        scaled(a.dc_offset_q - b.dc_offset_q, s.dc_offset),
        scaled(a.nonlinearity_coeff - b.nonlinearity_coeff, s.nonlinearity),
    ]
    .iter()
    .map(|v| v * v)
    .sum::<f64>()
    .sqrt()
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Draws one profile and channel per emitter; every pair of profiles is at least
/// `min_separation` apart in spread-normalized impairment space.
pub fn generate_emitters(config: &DatasetConfig) -> Result<Vec<(EmitterProfile, ChannelModel)>> {
    let s = &config.spread;
    let mut out: Vec<(EmitterProfile, ChannelModel)> = Vec::new();
    for e in 0..config.n_classes() {
        let mut rng = seed::rng(config.seed, "emitter", e as u64);
        let mut attempts = 0;
        let profile = loop {
            attempts += 1;
            let p = EmitterProfile {
                emitter_id: e as u32,
                iq_gain_imbalance: 1.0 + symmetric(&mut rng, s.gain_imbalance),
                iq_phase_imbalance: symmetric(&mut rng, s.phase_imbalance),
                carrier_freq_offset: symmetric(&mut rng, s.cfo),
                dc_offset_i: symmetric(&mut rng, s.dc_offset),
                dc_offset_q: symmetric(&mut rng, s.dc_offset),
                phase_noise_std: if s.phase_noise_std > 0.0 {
                    rng.random_range(0.0..=s.phase_noise_std)
                } else {
                    0.0
                },
                nonlinearity_coeff: symmetric(&mut rng, s.nonlinearity),
            };
            if out.iter().all(|(q, _)| separation(&p, q, s) >= s.min_separation) {
                break p;
            }
            if attempts >= 10_000 {
                return Err(RedError::Config(format!(
                    "cannot place emitter {e} at separation {} within the impairment spread",
                    s.min_separation
                )));
            }
        };
        let mut taps = vec![Complex64::new(1.0, 0.0)];
        for k in 1..s.channel_taps {
            let decay = 0.5f64.powi(k as i32 - 1);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            taps.push(Complex64::new(re, im) * (s.channel_spread * decay));
        }
        out.push((profile, ChannelModel::new(taps)?));
    }
    Ok(out)
}

/// Generates, splits and normalizes a labeled dataset. Known emitters get
/// labels `0..n_known`, rogue emitters `n_known..`; rogue records are test-only.
pub fn build_dataset(config: &DatasetConfig) -> Result<IQDataset> {
    config.validate()?;
    let emitters = generate_emitters(config)?;
    let (n_train, n_val) = config.split_counts();
    let spc = config.samples_per_class;

    let mut raw: Vec<(usize, Split, Vec<f64>)> = Vec::with_capacity(config.n_classes() * spc);
    for (class, (profile, channel)) in emitters.iter().enumerate() {
        let mut order: Vec<usize> = (0..spc).collect();
        order.shuffle(&mut seed::rng(config.seed, "split", class as u64));
        let mut split_of = vec![Split::Test; spc];
        if class < config.n_known {
            for (rank, &j) in order.iter().enumerate() {
                split_of[j] = if rank < n_train {
                    Split::Train
                } else if rank < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        for (j, split) in split_of.into_iter().enumerate() {
            let idx = (class * spc + j) as u64;
            let burst = synthesize_burst(profile, seed::derive(config.seed, "record", idx), config.length)?;
            let mut rng = seed::rng(config.seed, "capture-noise", idx);
            let received = apply_channel_awgn(&burst, channel, config.capture_snr_db, &mut rng)?;
            raw.push((class, split, to_iq_rows(&received)));
        }
    }

    let norm = Normalization::fit(raw.iter().filter(|r| r.1 == Split::Train).map(|r| r.2.as_slice()))?;
    let records = raw
        .into_iter()
        .map(|(label, split, data)| Record {
            label,
            split,
            data: data.into_iter().map(|v| norm.apply(v) as f32).collect(),
        })
        .collect();
    IQDataset::from_records(config.length, records, norm)
}
