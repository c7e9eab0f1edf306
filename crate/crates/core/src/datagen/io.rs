//! `VAD1` sequence files and `manifest.jsonl`.
//!
//! Layout, all little-endian: magic `VAD1`, `u32 T`, `u32 M`, `M × u32` widths,
//! `M` feature blocks of `T × width` `f32`, `T` steering `f32`, `T` speed `f32`,
//! `u32` onset frame.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Daytime, Metadata, Scenario, Sequence, Weather};
use crate::{Error, Matrix, Result};

pub const VAD1_MAGIC: &[u8; 4] = b"VAD1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub scenario: Scenario,
    pub class: usize,
    pub daytime: Daytime,
    pub weather: Weather,
    pub user: String,
    pub fps: f64,
    pub frames: usize,
    pub file: String,
}

fn encode(seq: &Sequence) -> Result<Vec<u8>> {
    let t = seq.frames;
    let u32_of =
        |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")));
    if seq.raw_steering.len() != t || seq.raw_speed.len() != t {
        return Err(Error::invalid(format!(
            "{}: sensor series length differs from frame count",
            seq.id
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(VAD1_MAGIC);
    out.extend_from_slice(&u32_of(t, "frame count")?.to_le_bytes());
    out.extend_from_slice(&u32_of(seq.modality_features.len(), "modality count")?.to_le_bytes());
    for m in &seq.modality_features {
        if m.rows() != t {
            return Err(Error::invalid(format!(
                "{}: feature block has {} rows, expected {t}",
                seq.id,
                m.rows()
            )));
        }
        out.extend_from_slice(&u32_of(m.cols(), "feature width")?.to_le_bytes());
    }
    let mut put = |values: &[f64]| {
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for m in &seq.modality_features {
        put(m.data());
    }
    put(&seq.raw_steering);
    put(&seq.raw_speed);
    out.extend_from_slice(&u32_of(seq.onset_frame, "onset frame")?.to_le_bytes());
    Ok(out)
}

/// Payload of a `VAD1` file.
struct Decoded {
    features: Vec<Matrix>,
    steering: Vec<f64>,
    speed: Vec<f64>,
    onset: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated {
                path: self.path.to_path_buf(),
                reason: format!("file ends inside {what} at byte {}", self.bytes.len()),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::Malformed {
            path: self.path.to_path_buf(),
            reason: format!("{what} size overflows"),
        })?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    if bytes.len() < 4 || &bytes[..4] != VAD1_MAGIC {
        if bytes.len() < 4 && VAD1_MAGIC.starts_with(bytes) {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                reason: "file ends inside the magic".into(),
            });
        }
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "VAD1",
        });
    }
    let mut r = Reader { bytes, pos: 4, path };
    let t = r.u32("frame count")?;
    let m = r.u32("modality count")?;
    let dims: Vec<usize> = (0..m).map(|_| r.u32("feature widths")).collect::<Result<_>>()?;
    let mut features = Vec::with_capacity(m);
    for (i, &d) in dims.iter().enumerate() {
        let n = t.checked_mul(d).ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            reason: "feature block size overflows".into(),
        })?;
        let data = r.f32s(n, &format!("feature block {i}"))?;
        features.push(Matrix::from_vec(t, d, data)?);
    }
    let steering = r.f32s(t, "steering block")?;
    let speed = r.f32s(t, "speed block")?;
    let onset = r.u32("onset frame")?;
    if r.pos != bytes.len() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(Decoded {
        features,
        steering,
        speed,
        onset,
    })
}

pub fn write_sequence_file(path: impl AsRef<Path>, seq: &Sequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(seq)?).map_err(|e| Error::io(path, e))
}

/// Reads a `VAD1` file; metadata not stored in the file comes from `record`.
pub fn read_sequence_file(path: impl AsRef<Path>, record: &ManifestRecord) -> Result<Sequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let d = decode(&bytes, path)?;
    let frames = d.steering.len();
    let mismatch = |reason: String| Error::ManifestMismatch {
        id: record.id.clone(),
        reason,
    };
    if frames != record.frames {
        return Err(mismatch(format!(
            "manifest says {} frames, file has {frames}",
            record.frames
        )));
    }
    if d.onset >= frames {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("onset frame {} outside {frames} frames", d.onset),
        });
    }
    Ok(Sequence {
        id: record.id.clone(),
        scenario: record.scenario,
        class_label: record.class,
        frames,
        fps: record.fps,
        modality_features: d.features,
        raw_steering: d.steering,
        raw_speed: d.speed,
        onset_frame: d.onset,
        metadata: Metadata {
            daytime: record.daytime,
            weather: record.weather,
            user: record.user.clone(),
        },
    })
}

fn file_name(id: &str) -> String {
    format!("{id}.vad")
}

/// Writes `manifest.jsonl` and one `VAD1` file per sequence into `dir`.
pub fn write_dataset(sequences: &[Sequence], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::new();
    for seq in sequences {
        let record = ManifestRecord {
            id: seq.id.clone(),
            scenario: seq.scenario,
            class: seq.class_label,
            daytime: seq.metadata.daytime,
            weather: seq.metadata.weather,
            user: seq.metadata.user.clone(),
            fps: seq.fps,
            frames: seq.frames,
            file: file_name(&seq.id),
        };
        write_sequence_file(dir.join(&record.file), seq)?;
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.push(b'\n');
    }
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`], in manifest order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let dir = dir.as_ref();
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.clone(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        let file = dir.join(&record.file);
        if !file.exists() {
            return Err(Error::ManifestMismatch {
                id: record.id.clone(),
                reason: format!("listed file {} is missing", record.file),
            });
        }
        out.push(read_sequence_file(file, &record)?);
    }
    Ok(out)
}
