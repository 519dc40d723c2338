//! Checkpoint file format.
//!
//! Layout: magic `REMN`, format version u32 LE, tensor count u32 LE, then per
//! tensor: name length u16 LE + UTF-8 name, rank u8, dims as u32 LE, raw f32
//! LE data. Batch-norm running statistics and the mode bit are stored as
//! reserved-name tensors (`__running_mean.*`, `__running_var.*`, `__mode`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, ResEmoteNet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"REMN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &mut ResEmoteNet, path: &Path) -> Result<()> {
    let tensors = collect_tensors(model);
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let ctx = || path.display().to_string();
    let io = |e| Error::io(ctx(), e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, shape, data) in &tensors {
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[shape.len() as u8]).map_err(io)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path, config: ModelConfig) -> Result<ResEmoteNet> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Cursor {
        inner: BufReader::new(file),
        pos: 0,
    };

    let magic = r.bytes::<4>()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointCorrupt(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(r.bytes::<4>()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointCorrupt(format!(
            "unsupported format version {version}"
        )));
    }
    let count = u32::from_le_bytes(r.bytes::<4>()?);

    let mut stored: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.bytes::<2>()?) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.fill(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| Error::CheckpointCorrupt(format!("non-UTF-8 tensor name: {e}")))?;
        let rank = r.bytes::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.bytes::<4>()?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f32::from_le_bytes(r.bytes::<4>()?));
        }
        stored.insert(name, (shape, data));
    }

    let mut model = ResEmoteNet::build(config)?;
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let (found_shape, data) = stored
            .remove(name)
            .ok_or_else(|| Error::CheckpointCorrupt(format!("missing tensor `{name}`")))?;
        if found_shape != shape {
            return Err(Error::CheckpointShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: found_shape,
            });
        }
        Ok(data)
    };

    let mut failure = None;
    model.visit_parameters(|p| {
        if failure.is_some() {
            return;
        }
        match take(&p.name, p.value.shape()) {
            Ok(data) => p.value.data_mut().copy_from_slice(&data),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure.take() {
        return Err(e);
    }
    model.visit_running_stats(|prefix, mean, var| {
        if failure.is_some() {
            return;
        }
        let len = mean.len();
        match take(&format!("__running_mean.{prefix}"), &[len])
            .and_then(|m| take(&format!("__running_var.{prefix}"), &[len]).map(|v| (m, v)))
        {
            Ok((m, v)) => {
                mean.copy_from_slice(&m);
                var.copy_from_slice(&v);
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mode = take("__mode", &[1])?;
    model.set_mode(if mode[0] == 0.0 { Mode::Train } else { Mode::Eval });

    if let Some(extra) = stored.keys().next() {
        return Err(Error::CheckpointCorrupt(format!(
            "unexpected tensor `{extra}` for this config"
        )));
    }
    Ok(model)
}

fn collect_tensors(model: &mut ResEmoteNet) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    model.visit_parameters(|p| {
        out.push((p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec()));
    });
    model.visit_running_stats(|prefix, mean, var| {
        out.push((format!("__running_mean.{prefix}"), vec![mean.len()], mean.clone()));
        out.push((format!("__running_var.{prefix}"), vec![var.len()], var.clone()));
    });
    let mode = if model.mode() == Mode::Train { 0.0 } else { 1.0 };
    out.push(("__mode".to_string(), vec![1], vec![mode]));
    out
}

struct Cursor<R: Read> {
    inner: R,
    pos: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.pos += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(Error::CheckpointTruncated(self.pos))
            }
            Err(e) => Err(Error::io("checkpoint read", e)),
        }
    }
}
