//! Uniformly sampled state sequences and their binary file format.
//!
//! Layout (little-endian): magic `SGNT`, `u32` version, `u32` state dimension
//! `d`, `u64` state count, `f64` start time, `f64` timestep, the states as
//! `count * d` doubles, then a `u64` byte length followed by a UTF-8 JSON
//! object of string metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"SGNT";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    dim: usize,
    data: Vec<f64>,
    pub meta: BTreeMap<String, String>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, dim: usize) -> Self {
        Trajectory {
            t0,
            dt,
            dim,
            data: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn from_states(t0: f64, dt: f64, states: &[Vec<f64>]) -> Result<Self> {
        let dim = states.first().map_or(0, Vec::len);
        let mut tr = Trajectory::new(t0, dt, dim);
        for s in states {
            tr.push(s)?;
        }
        Ok(tr)
    }

    pub fn push(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: state.len(),
            });
        }
        self.data.extend_from_slice(state);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (`N + 1`).
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// Keeps every `stride`-th state.
    pub fn subsample(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let mut out = Trajectory::new(self.t0, self.dt * stride as f64, self.dim);
        out.meta = self.meta.clone();
        for n in (0..self.len()).step_by(stride) {
            out.data.extend_from_slice(self.state(n));
        }
        out
    }

    /// Applies `f` to every state, producing a trajectory of a new dimension.
    pub fn map_states(&self, dim: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Trajectory> {
        let mut out = Trajectory::new(self.t0, self.dt, dim);
        out.meta = self.meta.clone();
        for s in self.states() {
            out.push(&f(s))?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Invalid(format!("trajectory dt must be positive, got {}", self.dt)));
        }
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "trajectory has a non-finite entry in state {}",
                i / self.dim.max(1)
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TRAJECTORY_MAGIC)?;
        w.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.t0.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Trajectory> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != TRAJECTORY_MAGIC {
            return Err(Error::Corrupt("not a trajectory file (bad magic)".into()));
        }
        let version = read_u32(r, "version")?;
        if version != TRAJECTORY_VERSION {
            return Err(Error::Version {
                found: version,
                expected: TRAJECTORY_VERSION,
            });
        }
        let dim = read_u32(r, "dimension")? as usize;
        let count = read_u64(r, "state count")? as usize;
        let t0 = read_f64(r, "t0")?;
        let dt = read_f64(r, "dt")?;
        let total = dim
            .checked_mul(count)
            .ok_or_else(|| Error::Corrupt("state block size overflows".into()))?;
        let mut bytes = vec![0u8; total * 8];
        read_exact(r, &mut bytes, "state data")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let meta_len = read_u64(r, "metadata length")? as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact(r, &mut meta, "metadata")?;
        let meta: BTreeMap<String, String> = serde_json::from_slice(&meta)
            .map_err(|e| Error::Corrupt(format!("metadata is not a JSON string map: {e}")))?;
        Ok(Trajectory {
            t0,
            dt,
            dim,
            data,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Trajectory> {
        let mut r = BufReader::new(File::open(path)?);
        Trajectory::read_from(&mut r)
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corrupt(format!("file truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, what)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let states = vec![vec![1.0, -2.0, 0.5], vec![1.5, f64::MIN_POSITIVE, -0.0]];
        Trajectory::from_states(0.25, 1e-3, &states)
            .unwrap()
            .with_meta("model", "l96")
            .with_meta("K", 36)
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"SGNT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), 1e-3);
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), 1.0);
        let meta_at = 36 + 6 * 8;
        let len = u64::from_le_bytes(buf[meta_at..meta_at + 8].try_into().unwrap()) as usize;
        assert_eq!(buf.len(), meta_at + 8 + len);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let tr = sample();
        let mut buf = Vec::new();
        tr.write_to(&mut buf).unwrap();
        let back = Trajectory::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.meta, tr.meta);
        let bits = |t: &Trajectory| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&tr));
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let err = Trajectory::read_from(&mut &buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)), "{err}");
        buf[0] = b'X';
        assert!(matches!(Trajectory::read_from(&mut buf.as_slice()), Err(Error::Corrupt(_))));
    }

    #[test]
    fn push_checks_dimension_and_validate_flags_nan() {
        let mut tr = Trajectory::new(0.0, 0.1, 2);
        assert!(tr.push(&[1.0]).is_err());
        tr.push(&[1.0, f64::NAN]).unwrap();
        assert!(tr.validate().is_err());
        assert!(Trajectory::new(0.0, 0.0, 1).validate().is_err());
    }

    #[test]
    fn subsample_keeps_every_stride() {
        let states: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64]).collect();
        let tr = Trajectory::from_states(0.0, 0.5, &states).unwrap();
        let sub = tr.subsample(3);
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.dt, 1.5);
        assert_eq!(sub.state(2), &[6.0]);
    }
}
