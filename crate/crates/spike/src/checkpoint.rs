//! Versioned binary checkpoints: magic "SPIK", format version, serialized
//! hyperparameters, then every parameter tensor in declaration order as
//! 32-bit little-endian floats with a shape prefix. Round trips bit-exactly.

use crate::model::{ConvMode, HyperParams, ModelParams, WindowMode};
use crate::scalar::Scalar;
use crate::{Result, SpikeError};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SPIK";
pub const VERSION: u32 = 1;

struct Reader<R: Read> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| {
            SpikeError::Data(format!(
                "checkpoint truncated: needed {n} bytes at offset {}",
                self.offset
            ))
        })?;
        self.offset += n;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.bytes(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
}

fn write_hp<S: Scalar, W: Write>(w: &mut W, hp: &HyperParams<S>) -> Result<()> {
    for v in [
        hp.t, hp.n, hp.n_v, hp.n_s, hp.c, hp.c_prime, hp.c_k, hp.c_v, hp.h, hp.m_blocks,
        hp.n_joints, hp.k_t,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&(hp.r.as_f64() as f32).to_le_bytes())?;
    w.write_all(&[match hp.window_mode {
        WindowMode::PastOnly => 0u8,
        WindowMode::PastFuture => 1,
    }])?;
    w.write_all(&[match hp.conv_mode {
        ConvMode::Spatial => 0u8,
        ConvMode::SpatioTemporal => 1,
    }])?;
    Ok(())
}

fn read_hp<S: Scalar, R: Read>(r: &mut Reader<R>) -> Result<HyperParams<S>> {
    let mut vals = [0usize; 12];
    for v in &mut vals {
        *v = r.u32()? as usize;
    }
    let radius = S::from_f64(r.f32()? as f64);
    let window_mode = match r.u8()? {
        0 => WindowMode::PastOnly,
        1 => WindowMode::PastFuture,
        x => return Err(SpikeError::Data(format!("checkpoint: unknown window mode {x}"))),
    };
    let conv_mode = match r.u8()? {
        0 => ConvMode::Spatial,
        1 => ConvMode::SpatioTemporal,
        x => return Err(SpikeError::Data(format!("checkpoint: unknown conv mode {x}"))),
    };
    Ok(HyperParams {
        t: vals[0],
        n: vals[1],
        n_v: vals[2],
        n_s: vals[3],
        c: vals[4],
        c_prime: vals[5],
        c_k: vals[6],
        c_v: vals[7],
        h: vals[8],
        m_blocks: vals[9],
        n_joints: vals[10],
        k_t: vals[11],
        r: radius,
        window_mode,
        conv_mode,
    })
}

pub fn save_checkpoint<S: Scalar>(
    params: &ModelParams<S>,
    hp: &HyperParams<S>,
    path: &Path,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_hp(&mut w, hp)?;
    w.write_all(&(params.params.len() as u32).to_le_bytes())?;
    for p in &params.params {
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for d in &p.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in &p.data {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(ModelParams<S>, HyperParams<S>)> {
    let mut r = Reader::new(std::io::BufReader::new(std::fs::File::open(path)?));
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(SpikeError::Data(format!(
            "checkpoint: bad magic {magic:?} at offset 0, expected {MAGIC:?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(SpikeError::Data(format!(
            "checkpoint: unsupported format version {version}, expected {VERSION}"
        )));
    }
    let hp = read_hp::<S, _>(&mut r)?;
    let count = r.u32()? as usize;
    let mut params = ModelParams::<S>::init(&hp, 0);
    if count != params.params.len() {
        return Err(SpikeError::Data(format!(
            "checkpoint: {count} tensors but hyperparameters imply {}",
            params.params.len()
        )));
    }
    for p in &mut params.params {
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != p.shape {
            return Err(SpikeError::Data(format!(
                "checkpoint: tensor {} has shape {:?}, expected {:?} (offset {})",
                p.name, shape, p.shape, r.offset
            )));
        }
        for v in &mut p.data {
            *v = S::from_f64(r.f32()? as f64);
        }
        p.zero_grad();
    }
    Ok((params, hp))
}

/// Field-by-field comparison, naming the first mismatch.
pub fn check_hp_match<S: Scalar>(expected: &HyperParams<S>, loaded: &HyperParams<S>) -> Result<()> {
    let fields: [(&str, usize, usize); 12] = [
        ("T", expected.t, loaded.t),
        ("N", expected.n, loaded.n),
        ("N_v", expected.n_v, loaded.n_v),
        ("N_s", expected.n_s, loaded.n_s),
        ("C", expected.c, loaded.c),
        ("C_prime", expected.c_prime, loaded.c_prime),
        ("C_k", expected.c_k, loaded.c_k),
        ("C_v", expected.c_v, loaded.c_v),
        ("h", expected.h, loaded.h),
        ("m", expected.m_blocks, loaded.m_blocks),
        ("M", expected.n_joints, loaded.n_joints),
        ("k_t", expected.k_t, loaded.k_t),
    ];
    for (name, e, l) in fields {
        if e != l {
            return Err(SpikeError::Config(format!(
                "hyperparameter mismatch on {name}: expected {e}, checkpoint has {l}"
            )));
        }
    }
    Ok(())
}
