//! Binary trajectory container: fixed little-endian header followed by packed
//! f64 samples, time-major, variable-major (U plane then V plane), row-major.

use anyhow::{bail, Context, Result};
use lsrc_core::{Field, FieldPair};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"BKRC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajHeader {
    pub nx: u32,
    pub ny: u32,
    pub n_vars: u32,
    pub n_steps: u64,
    pub dt: f64,
    pub config_hash: [u8; 32],
}

impl TrajHeader {
    pub fn payload_bytes(&self) -> u64 {
        self.nx as u64 * self.ny as u64 * self.n_vars as u64 * self.n_steps * 8
    }
}

pub fn write_trajectory(
    path: &Path,
    states: &[FieldPair],
    dt: f64,
    config_hash: [u8; 32],
) -> Result<TrajHeader> {
    if states.is_empty() {
        bail!("refusing to write an empty trajectory");
    }
    let (nx, ny) = (states[0].nx(), states[0].ny());
    let header = TrajHeader {
        nx: nx as u32,
        ny: ny as u32,
        n_vars: 2,
        n_steps: states.len() as u64,
        dt,
        config_hash,
    };
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&header.nx.to_le_bytes())?;
    w.write_all(&header.ny.to_le_bytes())?;
    w.write_all(&header.n_vars.to_le_bytes())?;
    w.write_all(&header.n_steps.to_le_bytes())?;
    w.write_all(&header.dt.to_le_bytes())?;
    w.write_all(&header.config_hash)?;
    for s in states {
        if s.nx() != nx || s.ny() != ny {
            bail!("inconsistent field shapes in trajectory");
        }
        for field in [&s.u, &s.v] {
            for v in field.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(header)
}

pub fn read_trajectory(path: &Path) -> Result<(TrajHeader, Vec<FieldPair>)> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("not a trajectory file (bad magic)");
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        bail!("unsupported trajectory version {version}");
    }
    let nx = read_u32(&mut r)?;
    let ny = read_u32(&mut r)?;
    let n_vars = read_u32(&mut r)?;
    if n_vars != 2 {
        bail!("expected 2 variables per state, found {n_vars}");
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n_steps = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let dt = f64::from_le_bytes(b8);
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash)?;
    let header = TrajHeader {
        nx,
        ny,
        n_vars,
        n_steps,
        dt,
        config_hash,
    };

    let plane = nx as usize * ny as usize;
    let mut states = Vec::with_capacity(n_steps as usize);
    let mut buf = vec![0u8; plane * 2 * 8];
    for _ in 0..n_steps {
        r.read_exact(&mut buf)
            .context("trajectory payload shorter than its header promises")?;
        let mut vals = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let u: Vec<f64> = vals.by_ref().take(plane).collect();
        let v: Vec<f64> = vals.collect();
        states.push(FieldPair {
            u: Field::from_vec(nx as usize, ny as usize, u)?,
            v: Field::from_vec(nx as usize, ny as usize, v)?,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        bail!("trajectory payload longer than its header promises");
    }
    Ok((header, states))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lsrc_core::Field;

    fn toy_states(n: usize) -> Vec<FieldPair> {
        (0..n)
            .map(|t| FieldPair {
                u: Field::from_fn(3, 4, |i, j| (t * 100 + i * 10 + j) as f64 / 7.0),
                v: Field::from_fn(3, 4, |i, j| -((t + i + j) as f64) / 3.0),
            })
            .collect()
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bkrc");
        let states = toy_states(5);
        let header = write_trajectory(&path, &states, 0.01, [7u8; 32]).unwrap();
        assert_eq!(header.payload_bytes(), 3 * 4 * 2 * 5 * 8);

        let (back_h, back) = read_trajectory(&path).unwrap();
        assert_eq!(back_h, header);
        assert_eq!(back.len(), states.len());
        for (a, b) in states.iter().zip(&back) {
            assert_eq!(a.u.as_slice(), b.u.as_slice());
            assert_eq!(a.v.as_slice(), b.v.as_slice());
        }
        // file size = 68-byte header + payload
        let meta = std::fs::metadata(&path).unwrap();
        assert_eq!(meta.len(), 68 + header.payload_bytes());
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bkrc");
        std::fs::write(&path, b"NOPE............").unwrap();
        assert!(read_trajectory(&path).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bkrc");
        write_trajectory(&path, &toy_states(3), 0.01, [0u8; 32]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_trajectory(&path).is_err());
    }
}
