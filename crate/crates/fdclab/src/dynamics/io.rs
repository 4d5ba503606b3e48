//! Binary trajectory container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "FDCT"
//! version      u32      currently 1
//! sample_rate  f64      Hz
//! n_samples    u64
//! channels     u32      count, then per channel: u16 name length + UTF-8 name
//! clean        n_samples × channels f64, sample-major
//! measured     n_samples × channels f64, sample-major
//! labels       n_samples u8
//! ```

use super::{Sample, SensorChannel, SensorTrajectory};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Cursor, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FDCT";
const VERSION: u32 = 1;

pub fn trajectory_to_bytes(traj: &SensorTrajectory) -> Result<Vec<u8>> {
    let n = traj.len();
    if traj.measured.len() != n || traj.labels.len() != n {
        return Err(Error::shape(
            "trajectory_to_bytes",
            format!("clean/measured/labels all of length {n}"),
            format!(
                "measured {}, labels {}",
                traj.measured.len(),
                traj.labels.len()
            ),
        ));
    }
    let channels = SensorChannel::ALL;
    let mut out = Vec::with_capacity(32 + n * (channels.len() * 16 + 1));
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_f64::<LittleEndian>(traj.sample_rate)?;
    out.write_u64::<LittleEndian>(n as u64)?;
    out.write_u32::<LittleEndian>(channels.len() as u32)?;
    for ch in channels {
        let name = ch.name().as_bytes();
        out.write_u16::<LittleEndian>(name.len() as u16)?;
        out.write_all(name)?;
    }
    for sample in &traj.clean {
        for ch in channels {
            out.write_f64::<LittleEndian>(sample.channel(ch))?;
        }
    }
    for sample in &traj.measured {
        for ch in channels {
            out.write_f64::<LittleEndian>(sample.channel(ch))?;
        }
    }
    out.write_all(&traj.labels)?;
    Ok(out)
}

pub fn trajectory_from_bytes(bytes: &[u8]) -> Result<SensorTrajectory> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Archive("trajectory file shorter than header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Archive(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Archive("truncated header".into()))?;
    if version != VERSION {
        return Err(Error::Archive(format!(
            "unsupported trajectory version {version}"
        )));
    }
    let sample_rate = cur
        .read_f64::<LittleEndian>()
        .map_err(|_| Error::Archive("truncated header".into()))?;
    let n = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::Archive("truncated header".into()))? as usize;
    let n_channels = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Archive("truncated header".into()))? as usize;
    if n_channels != SensorChannel::ALL.len() {
        return Err(Error::Archive(format!(
            "expected {} channels, found {n_channels}",
            SensorChannel::ALL.len()
        )));
    }
    for ch in SensorChannel::ALL {
        let len = cur
            .read_u16::<LittleEndian>()
            .map_err(|_| Error::Archive("truncated channel table".into()))? as usize;
        let mut name = vec![0u8; len];
        cur.read_exact(&mut name)
            .map_err(|_| Error::Archive("truncated channel table".into()))?;
        if name != ch.name().as_bytes() {
            return Err(Error::Archive(format!(
                "channel name mismatch: expected {:?}, found {:?}",
                ch.name(),
                String::from_utf8_lossy(&name)
            )));
        }
    }

    let mut read_block = |what: &str| -> Result<Vec<Sample>> {
        let mut block = Vec::with_capacity(n);
        for _ in 0..n {
            let mut sample = Sample {
                state: super::AircraftState {
                    v: 0.0,
                    alpha: 0.0,
                    beta: 0.0,
                    psi: 0.0,
                    theta: 0.0,
                    phi: 0.0,
                    wx: 0.0,
                    wy: 0.0,
                    wz: 0.0,
                    x: 0.0,
                    y: 0.0,
                    z: 0.0,
                },
                loads: super::LoadFactors {
                    gx: 0.0,
                    gy: 0.0,
                    gz: 0.0,
                },
            };
            for ch in SensorChannel::ALL {
                let v = cur
                    .read_f64::<LittleEndian>()
                    .map_err(|_| Error::Archive(format!("truncated {what} block")))?;
                *sample.channel_mut(ch) = v;
            }
            block.push(sample);
        }
        Ok(block)
    };

    let clean = read_block("clean")?;
    let measured = read_block("measured")?;
    let mut labels = vec![0u8; n];
    cur.read_exact(&mut labels)
        .map_err(|_| Error::Archive("truncated label block".into()))?;

    Ok(SensorTrajectory {
        sample_rate,
        clean,
        measured,
        labels,
    })
}

pub fn write_trajectory(traj: &SensorTrajectory, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trajectory_to_bytes(traj)?)?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<SensorTrajectory> {
    let bytes = std::fs::read(path)?;
    trajectory_from_bytes(&bytes)
}
