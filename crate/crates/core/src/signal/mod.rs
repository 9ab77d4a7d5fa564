//! Synthetic IQ fingerprint simulation and the preprocessing applied before training.

mod channel;
mod dataset;
mod io;
mod noise;
mod profile;

pub use channel::{apply_channel_awgn, ChannelModel};
pub use dataset::{build_dataset, generate_emitters, minmax_normalize, DatasetConfig, IQDataset, ImpairmentSpread, Normalization, Record, Split};
pub use io::{decode_dataset, encode_dataset, read_dataset, read_metadata, write_dataset, DatasetMeta, EmitterEntry, METADATA_SUFFIX};
pub use noise::{awgn_perturb, SnrSpec};
pub use profile::{clean_waveform, rrc_taps, synthesize_burst, EmitterProfile, MIN_BURST_LEN, ROLL_OFF, SAMPLES_PER_SYMBOL};

/// Splits a complex burst into the 2×L real layout `[I₀…I_{L−1}, Q₀…Q_{L−1}]`.
pub fn to_iq_rows(burst: &[num_complex::Complex64]) -> Vec<f64> {
    let mut out: Vec<f64> = burst.iter().map(|c| c.re).collect();
    out.extend(burst.iter().map(|c| c.im));
    out
}
