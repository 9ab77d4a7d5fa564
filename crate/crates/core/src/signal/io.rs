//! Binary dataset files and their metadata sidecar.
//!
//! Layout, little-endian: `"REDS"`, u32 version, u32 record count, u32 length,
//! u32 channels, f64 norm min, f64 norm max, then per record an i32 label,
//! a u8 split tag and `length` interleaved f32 `(I, Q)` pairs. In memory a
//! record is channel-major: the I row, then the Q row.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::channel::ChannelModel;
use super::dataset::{generate_emitters, DatasetConfig, IQDataset, Normalization, Record, Split};
use super::profile::EmitterProfile;
use crate::error::{RedError, Result};

const MAGIC: &[u8; 4] = b"REDS";
const VERSION: u32 = 1;
pub const METADATA_SUFFIX: &str = ".meta.toml";

pub fn encode_dataset(ds: &IQDataset) -> Vec<u8> {
    let per = IQDataset::CHANNELS * ds.length;
    let mut out = Vec::with_capacity(36 + ds.records.len() * (5 + 4 * per));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, ds.records.len() as u32, ds.length as u32, IQDataset::CHANNELS as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.normalization.min.to_le_bytes());
    out.extend_from_slice(&ds.normalization.max.to_le_bytes());
    for r in &ds.records {
        out.extend_from_slice(&(r.label as i32).to_le_bytes());
        out.push(r.split.tag());
        let (i_row, q_row) = r.data.split_at(ds.length);
        for (i, q) in i_row.iter().zip(q_row) {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&q.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| RedError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<IQDataset> {
    let mut r = Reader { buf, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(RedError::Format("not a REDS dataset".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RedError::Format(format!("unsupported dataset version {version}")));
    }
    let n = r.u32()? as usize;
    let length = r.u32()? as usize;
    let channels = r.u32()? as usize;
    if channels != IQDataset::CHANNELS {
        return Err(RedError::Format(format!("expected 2 channels, found {channels}")));
    }
    let min = f64::from_le_bytes(r.take()?);
    let max = f64::from_le_bytes(r.take()?);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let label = i32::from_le_bytes(r.take()?);
        if label < 0 {
            return Err(RedError::Format(format!("negative label {label}")));
        }
        let split = Split::from_tag(r.take::<1>()?[0])?;
        let mut data = vec![0.0f32; channels * length];
        for t in 0..length {
            data[t] = f32::from_le_bytes(r.take()?);
            data[length + t] = f32::from_le_bytes(r.take()?);
        }
        records.push(Record {
            label: label as usize,
            split,
            data,
        });
    }
    if r.pos != buf.len() {
        return Err(RedError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    IQDataset::from_records(length, records, Normalization { min, max })
}

pub fn write_dataset(path: &Path, ds: &IQDataset) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<IQDataset> {
    decode_dataset(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterEntry {
    pub label: usize,
    pub role: String,
    pub profile: EmitterProfile,
    pub channel: ChannelModel,
}

/// Sidecar describing how a dataset file was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub master_seed: u64,
    /// How per-record seeds are derived from the master seed.
    pub record_seed_rule: String,
    pub normalization: Normalization,
    pub config: DatasetConfig,
    pub emitters: Vec<EmitterEntry>,
}

impl DatasetMeta {
    pub fn new(config: &DatasetConfig, normalization: Normalization) -> Result<Self> {
        let emitters = generate_emitters(config)?
            .into_iter()
            .enumerate()
            .map(|(label, (profile, channel))| EmitterEntry {
                label,
                role: if label < config.n_known { "known" } else { "rogue" }.into(),
                profile,
                channel,
            })
            .collect();
        Ok(DatasetMeta {
            format_version: VERSION,
            master_seed: config.seed,
            record_seed_rule: "waveform = derive(seed, \"record\", class*samples_per_class + j); capture noise = derive(seed, \"capture-noise\", same index)".into(),
            normalization,
            config: config.clone(),
            emitters,
        })
    }

    pub fn sidecar_path(dataset_path: &Path) -> PathBuf {
        let mut s = dataset_path.as_os_str().to_owned();
        s.push(METADATA_SUFFIX);
        PathBuf::from(s)
    }

    pub fn write(&self, dataset_path: &Path) -> Result<PathBuf> {
        let path = Self::sidecar_path(dataset_path);
        let text = toml::to_string_pretty(self).map_err(|e| RedError::Format(e.to_string()))?;
        fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn read_metadata(dataset_path: &Path) -> Result<DatasetMeta> {
    let text = fs::read_to_string(DatasetMeta::sidecar_path(dataset_path))?;
    toml::from_str(&text).map_err(|e| RedError::Format(e.to_string()))
}
