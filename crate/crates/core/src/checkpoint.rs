//! Binary checkpoint container.
//!
//! All integers are little-endian `u32`.
//!
//! ```text
//! magic      8 bytes "LGCDCKPT"
//! version    u32 (currently 1)
//! meta_len   u32, then meta_len bytes of UTF-8 JSON:
//!            {"model": <ModelConfig>, "vocabulary": [tokens...]}
//! count      u32 number of entries
//! entry*     sorted by name (byte order):
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, then rank dims as u32
//!   data     product(dims) little-endian f32 values
//! ```
//!
//! Entries cover every parameter and every batch-norm running statistic.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lgcd_tensor::{ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::ChangeDetector;
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"LGCDCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    vocabulary: Vec<String>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub vocabulary: Vocabulary,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

/// Serialises one entry as it appears in the file.
pub fn encode_entry(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode<T: Real>(cfg: &ModelConfig, vocab: &Vocabulary, store: &ParamStore<T>) -> Vec<u8> {
    let meta = serde_json::to_vec(&Meta {
        model: cfg.clone(),
        vocabulary: vocab.tokens().to_vec(),
    })
    .expect("metadata serialises");
    let tensors = store.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, meta.len());
    out.extend_from_slice(&meta);
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        encode_entry(&mut out, name, &t.cast::<f32>());
    }
    out
}

pub fn save<T: Real>(path: &Path, cfg: &ModelConfig, vocab: &Vocabulary, store: &ParamStore<T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(cfg, vocab, store)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format!("unsupported version {version}"));
    }
    let n = r.u32()?;
    let meta: Meta = serde_json::from_slice(r.take(n)?).map_err(|e| format!("metadata: {e}"))?;
    let vocabulary = Vocabulary::from_text(&meta.vocabulary.join("\n")).map_err(|e| e.to_string())?;
    let count = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| "entry name is not UTF-8".to_string())?.to_owned();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or("entry too large")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(format!("duplicate entry {name}"));
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Checkpoint {
        model: meta.model,
        vocabulary,
        tensors,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.to_owned(),
        msg,
    })
}

impl Checkpoint {
    /// Entry bytes of every tensor whose name starts with `prefix`, in file
    /// order.
    pub fn entry_bytes(&self, prefix: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, t) in self.tensors.range(prefix.to_owned()..).take_while(|(n, _)| n.starts_with(prefix)) {
            encode_entry(&mut out, name, t);
        }
        out
    }

    /// Rebuilds the model and a parameter store holding these values.
    pub fn restore<T: Real>(&self) -> Result<(ChangeDetector, ParamStore<T>)> {
        let mut store = ParamStore::new();
        // initial values are overwritten below
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ChangeDetector::new(&self.model, self.vocabulary.len(), &mut store, &mut rng)?;
        let expected = store.named_tensors().len();
        if expected != self.tensors.len() {
            return Err(Error::Checkpoint {
                path: Default::default(),
                msg: format!("{} entries, the model has {expected}", self.tensors.len()),
            });
        }
        for (name, t) in &self.tensors {
            store.load(name, t.cast::<T>()).map_err(|e| Error::Checkpoint {
                path: Default::default(),
                msg: e.to_string(),
            })?;
        }
        Ok((model, store))
    }
}
