use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetConfig, Image, Sample, Sequence, SimError, Split};
use crate::pose_algebra::{Pose, POSE_BYTES};

pub const SEQ_MAGIC: &[u8; 4] = b"GADS";
pub const SEQ_VERSION: u32 = 1;
const FLAG_GT: u8 = 1;
const HEADER_BYTES: usize = 4 + 4 + 4 + 2 + 2 + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: Split,
    pub seed: u64,
    pub frames: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub config: DatasetConfig,
    pub sequences: Vec<ManifestEntry>,
}

pub fn sequence_file_name(index: usize) -> String {
    format!("seq_{index:04}.bin")
}

fn encode_sequence(seq: &Sequence) -> Result<Vec<u8>, SimError> {
    let first = seq.samples.first();
    let (w, h) = first.map_or((0, 0), |s| (s.image.width(), s.image.height()));
    let has_gt = first.is_some_and(|s| s.gt_gate.is_some());
    if seq.samples.iter().any(|s| s.gt_gate.is_some() != has_gt) {
        return Err(SimError::Format("labels must be present on all frames or none".into()));
    }
    if seq.samples.iter().any(|s| s.image.width() != w || s.image.height() != h) {
        return Err(SimError::Format("frames of one sequence must share a size".into()));
    }
    let frame_bytes = w * h + POSE_BYTES * if has_gt { 2 } else { 1 } + 8;
    let mut out = Vec::with_capacity(HEADER_BYTES + frame_bytes * seq.samples.len());
    out.extend_from_slice(SEQ_MAGIC);
    out.extend_from_slice(&SEQ_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.samples.len() as u32).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.push(if has_gt { FLAG_GT } else { 0 });
    for s in &seq.samples {
        out.extend_from_slice(&s.image.to_u8());
        out.extend_from_slice(&s.odom.to_le_bytes());
        if let Some(gt) = &s.gt_gate {
            out.extend_from_slice(&gt.to_le_bytes());
        }
        out.extend_from_slice(&s.time.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SimError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            SimError::Format(format!("truncated sequence file at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SimError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, SimError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn pose(&mut self) -> Result<Pose, SimError> {
        Ok(Pose::from_le_bytes(self.take(POSE_BYTES)?)?)
    }
}

/// Parsed frames of one sequence file.
pub fn decode_sequence(bytes: &[u8]) -> Result<Vec<Sample>, SimError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != SEQ_MAGIC {
        return Err(SimError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != SEQ_VERSION {
        return Err(SimError::Format(format!("unsupported version {version}")));
    }
    let frames = r.u32()? as usize;
    let (w, h) = (r.u16()? as usize, r.u16()? as usize);
    let flags = r.take(1)?[0];
    if flags & !FLAG_GT != 0 {
        return Err(SimError::Format(format!("unknown flags {flags:#04x}")));
    }
    let mut samples = Vec::with_capacity(frames.min(bytes.len()));
    for _ in 0..frames {
        let image = Image::from_u8(w, h, r.take(w * h)?)?;
        let odom = r.pose()?;
        let gt_gate = if flags & FLAG_GT != 0 { Some(r.pose()?) } else { None };
        let time = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        samples.push(Sample { image, odom, gt_gate, time });
    }
    if r.pos != bytes.len() {
        return Err(SimError::Format("trailing bytes after last frame".into()));
    }
    Ok(samples)
}

pub fn write_sequence_file(path: &Path, seq: &Sequence) -> Result<(), SimError> {
    let bytes = encode_sequence(seq)?;
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_sequence_file(path: &Path) -> Result<Vec<Sample>, SimError> {
    decode_sequence(&fs::read(path)?)
}

/// Writes `manifest.json` and one binary file per sequence.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<Manifest, SimError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.sequences.len());
    for seq in &ds.sequences {
        let file = sequence_file_name(seq.index);
        write_sequence_file(&dir.join(&file), seq)?;
        entries.push(ManifestEntry { index: seq.index, split: seq.split, seed: seq.seed, frames: seq.samples.len(), file });
    }
    let manifest = Manifest {
        format_version: SEQ_VERSION,
        master_seed: ds.master_seed,
        config: ds.config.clone(),
        sequences: entries,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, SimError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a dataset directory, checking every file against the manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset, SimError> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != SEQ_VERSION {
        return Err(SimError::Format(format!("unsupported manifest version {}", manifest.format_version)));
    }
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for e in &manifest.sequences {
        if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
            return Err(SimError::Format(format!("sequence file name {:?} must be a plain file name", e.file)));
        }
        let samples = read_sequence_file(&dir.join(&e.file))?;
        if samples.len() != e.frames {
            return Err(SimError::Format(format!("{}: {} frames, manifest says {}", e.file, samples.len(), e.frames)));
        }
        if samples.iter().any(|s| s.gt_gate.is_some() != e.split.has_gt()) {
            return Err(SimError::Format(format!("{}: label presence does not match split {:?}", e.file, e.split)));
        }
        sequences.push(Sequence { index: e.index, split: e.split, seed: e.seed, samples });
    }
    Ok(Dataset { config: manifest.config, master_seed: manifest.master_seed, sequences })
}
