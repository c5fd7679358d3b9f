//! Self-describing binary feature records.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"SRDF"
//! version  u16
//! params   u32 byte length, then the extraction parameters as JSON
//! count    u32 number of matrices
//! matrix   u8 name length, name (UTF-8), u8 dtype tag, u32 rows, u32 cols, raw data
//! ```
//!
//! dtype tags: 1 = f64, 2 = u8.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{ExtractionParams, MelSpectrogram, PitchContour, UtteranceFeatures};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SRDF";
pub const RECORD_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    F64(Array2<f64>),
    U8(Array2<u8>),
}

impl MatrixData {
    fn tag(&self) -> u8 {
        match self {
            MatrixData::F64(_) => 1,
            MatrixData::U8(_) => 2,
        }
    }

    fn dim(&self) -> (usize, usize) {
        match self {
            MatrixData::F64(m) => m.dim(),
            MatrixData::U8(m) => m.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub params: ExtractionParams,
    pub matrices: Vec<(String, MatrixData)>,
}

impl FeatureRecord {
    pub fn from_features(features: &UtteranceFeatures) -> Self {
        let t = features.num_frames();
        let f0 = Array2::from_shape_vec((t, 1), features.pitch.f0_hz.clone()).expect("length checked");
        let voiced = Array2::from_shape_vec(
            (t, 1),
            features.pitch.voiced.iter().map(|&v| v as u8).collect(),
        )
        .expect("length checked");
        Self {
            params: ExtractionParams::default(),
            matrices: vec![
                ("mel".into(), MatrixData::F64(features.mel.frames.clone())),
                ("f0".into(), MatrixData::F64(f0)),
                ("voiced".into(), MatrixData::U8(voiced)),
            ],
        }
    }

    pub fn from_mel(mel: &MelSpectrogram) -> Self {
        Self {
            params: ExtractionParams::default(),
            matrices: vec![("mel".into(), MatrixData::F64(mel.frames.clone()))],
        }
    }

    pub fn get(&self, name: &str) -> Option<&MatrixData> {
        self.matrices.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn f64_matrix(&self, name: &str) -> Result<&Array2<f64>> {
        match self.get(name) {
            Some(MatrixData::F64(m)) => Ok(m),
            Some(_) => Err(Error::Shape(format!("matrix {name} is not f64"))),
            None => Err(Error::Shape(format!("record has no {name} matrix"))),
        }
    }

    pub fn mel(&self) -> Result<MelSpectrogram> {
        MelSpectrogram::new(self.f64_matrix("mel")?.clone())
    }

    pub fn features(&self) -> Result<UtteranceFeatures> {
        let mel = self.mel()?;
        let f0 = self.f64_matrix("f0")?.column(0).to_vec();
        let voiced = match self.get("voiced") {
            Some(MatrixData::U8(m)) => m.column(0).iter().map(|&v| v != 0).collect(),
            _ => return Err(Error::Shape("record has no u8 voiced matrix".into())),
        };
        UtteranceFeatures::new(mel, PitchContour { f0_hz: f0, voiced })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&RECORD_VERSION.to_le_bytes());
        let params = serde_json::to_vec(&self.params).expect("params serialize");
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        out.extend_from_slice(&params);
        out.extend_from_slice(&(self.matrices.len() as u32).to_le_bytes());
        for (name, data) in &self.matrices {
            out.push(name.len() as u8);
            out.extend_from_slice(name.as_bytes());
            out.push(data.tag());
            let (r, c) = data.dim();
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            match data {
                MatrixData::F64(m) => m.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                MatrixData::U8(m) => out.extend(m.iter()),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err("not a feature record (bad magic)".into());
        }
        let version = u16::from_le_bytes(take(&mut r)?);
        if version != RECORD_VERSION {
            return Err(format!("record version {version}, expected {RECORD_VERSION}"));
        }
        let plen = u32::from_le_bytes(take(&mut r)?) as usize;
        let pbytes = take_slice(&mut r, plen)?;
        let params: ExtractionParams =
            serde_json::from_slice(pbytes).map_err(|e| format!("parameter block: {e}"))?;
        let count = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut matrices = Vec::with_capacity(count);
        for _ in 0..count {
            let [nlen] = take::<1>(&mut r)?;
            let name = String::from_utf8(take_slice(&mut r, nlen as usize)?.to_vec())
                .map_err(|_| "matrix name is not UTF-8".to_string())?;
            let [tag] = take::<1>(&mut r)?;
            let rows = u32::from_le_bytes(take(&mut r)?) as usize;
            let cols = u32::from_le_bytes(take(&mut r)?) as usize;
            let n = rows.checked_mul(cols).ok_or("matrix too large")?;
            let data = match tag {
                1 => {
                    let raw = take_slice(&mut r, n.checked_mul(8).ok_or("matrix too large")?)?;
                    let vals = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    MatrixData::F64(Array2::from_shape_vec((rows, cols), vals).unwrap())
                }
                2 => MatrixData::U8(
                    Array2::from_shape_vec((rows, cols), take_slice(&mut r, n)?.to_vec()).unwrap(),
                ),
                other => return Err(format!("unknown dtype tag {other}")),
            };
            matrices.push((name, data));
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.len()));
        }
        Ok(Self { params, matrices })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    /// Reads a record and checks it was produced with the current front end.
    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let record = Self::decode(&bytes).map_err(format)?;
        if record.params != ExtractionParams::default() {
            return Err(format("extracted with different front-end parameters".into()));
        }
        Ok(record)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> std::result::Result<(), String> {
    r.read_exact(buf).map_err(|_| "truncated record".to_string())
}

fn take<const N: usize>(r: &mut &[u8]) -> std::result::Result<[u8; N], String> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn take_slice<'a>(r: &mut &'a [u8], n: usize) -> std::result::Result<&'a [u8], String> {
    if r.len() < n {
        return Err("truncated record".into());
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}
