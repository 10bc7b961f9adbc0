//! Model checkpoints: `SCGM`, u32 LE length of a `key=value` header, the
//! header text, u64 LE tensor value count, then every trainable tensor in
//! layout order followed by the batchnorm running statistics, all f64 LE.

use std::io::{Read, Write};
use std::path::Path;

use super::model::FusionModel;
use super::train::{DemographicNormalizer, Prepared};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::kv::KvMap;

const MAGIC: &[u8; 4] = b"SCGM";
const MAX_HEADER: usize = 1 << 20;
const MAX_VALUES: u64 = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub task: String,
    pub model: FusionModel,
    pub prepared: Prepared,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn triple(kv: &KvMap, key: &str) -> Result<[f64; 3]> {
    kv.get_list::<f64>(key)?
        .ok_or_else(|| Error::Format(format!("checkpoint header lacks {key}")))?
        .try_into()
        .map_err(|_| Error::Format(format!("checkpoint {key} needs 3 values")))
}

pub fn write_checkpoint(ck: &Checkpoint, mut w: impl Write) -> std::io::Result<()> {
    let mut kv = ck.model.config.to_kv();
    kv.insert("task", &ck.task);
    kv.insert("output_scale", ck.model.output_scale);
    kv.insert("pixel_scale", ck.prepared.pixel_scale);
    kv.insert("demo_min", join(&ck.prepared.normalizer.min));
    kv.insert("demo_max", join(&ck.prepared.normalizer.max));
    kv.insert("n_params", ck.model.params.len());
    let header = kv.to_text();
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let n = (ck.model.params.len() + ck.model.stats.len()) as u64;
    w.write_all(&n.to_le_bytes())?;
    let mut buf = Vec::with_capacity(n as usize * 8);
    for v in ck.model.params.iter().chain(&ck.model.stats) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(ck, &mut buf).map_err(|e| Error::io(path, e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
    if &magic != MAGIC {
        return Err(fmt("bad magic"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| fmt("truncated header length"))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_HEADER {
        return Err(fmt("header too large"));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| fmt("truncated header"))?;
    let header = String::from_utf8(header).map_err(|_| fmt("header is not UTF-8"))?;
    let kv = KvMap::parse(&header)?;

    let config = ModelConfig::default().update_from_kv(&kv)?;
    let task = kv.get_str("task").ok_or_else(|| fmt("header lacks task"))?.to_string();
    let output_scale: f64 = kv.get("output_scale")?.ok_or_else(|| fmt("header lacks output_scale"))?;
    let pixel_scale: f64 = kv.get("pixel_scale")?.ok_or_else(|| fmt("header lacks pixel_scale"))?;
    let n_params: usize = kv.get("n_params")?.ok_or_else(|| fmt("header lacks n_params"))?;
    let normalizer = DemographicNormalizer {
        min: triple(&kv, "demo_min")?,
        max: triple(&kv, "demo_max")?,
    };

    let mut model = FusionModel::new(config)?;
    model.output_scale = output_scale;
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(|_| fmt("truncated value count"))?;
    let count = u64::from_le_bytes(count);
    let expected = (model.params.len() + model.stats.len()) as u64;
    if count > MAX_VALUES || count != expected || n_params != model.params.len() {
        return Err(fmt(&format!("holds {count} values, config implies {expected}")));
    }
    let mut raw = vec![0u8; count as usize * 8];
    r.read_exact(&mut raw).map_err(|_| fmt("truncated tensors"))?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fmt("non-finite parameter"));
    }
    model.params.copy_from_slice(&values[..n_params]);
    model.stats.copy_from_slice(&values[n_params..]);
    Ok(Checkpoint {
        task,
        model,
        prepared: Prepared {
            normalizer,
            pixel_scale,
        },
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
