//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "IRP1" | version u32 | meta_len u32 | meta JSON (UTF-8)
//! | tensor_count u32
//! | per tensor: name_len u32 | name | rank u32 | dims u64… | values f64…
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{FeatureMask, ModelConfig, ModelParams, Predictor};
use crate::numeric::Tensor;
use crate::summarize::SummarizerConfig;
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 4] = b"IRP1";
pub const VERSION: u32 = 1;

const MAX_NAME: usize = 1 << 12;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub summarizer: SummarizerConfig,
    pub features: FeatureMask,
    pub threshold: f64,
    pub vocab_digest: String,
    /// Where the vocabulary lived at save time; informational.
    #[serde(default)]
    pub vocab_path: Option<PathBuf>,
    pub seed: u64,
    /// Split fractions used for training, so evaluation can rebuild splits.
    pub fractions: (f64, f64, f64),
}

impl CheckpointMeta {
    pub fn for_predictor(p: &Predictor, seed: u64, fractions: (f64, f64, f64)) -> Self {
        CheckpointMeta {
            model: p.params.config,
            summarizer: p.summarizer,
            features: p.features,
            threshold: p.threshold,
            vocab_digest: p.vocab.digest(),
            vocab_path: None,
            seed,
            fractions,
        }
    }
}

pub fn encode(meta: &CheckpointMeta, params: &ModelParams) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&len_u32(json.len())?.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&len_u32(params.tensors.len())?.to_le_bytes());
    for (name, t) in params.named() {
        out.extend_from_slice(&len_u32(name.len())?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&len_u32(t.shape().len())?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} does not fit in u32")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointMeta, ModelParams)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).map_err(|_| Error::Checkpoint("bad magic".into()))? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {version}, expected {VERSION}"
        )));
    }
    let meta_len = c.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let count = c.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        if name_len > MAX_NAME {
            return Err(Error::Checkpoint(format!("tensor name of {name_len} bytes")));
        }
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("tensor {name:?} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(c.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
            n = n
                .checked_mul(d)
                .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
            shape.push(d);
        }
        if n.checked_mul(8).is_none_or(|b| b > c.remaining()) {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let data = c
            .take(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if c.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", c.remaining())));
    }
    let params = ModelParams::from_named(meta.model, named)?;
    Ok((meta, params))
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ModelParams) -> Result<()> {
    fs::write(path, encode(meta, params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ModelParams)> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint and pairs it with `vocab`, which must be the
/// vocabulary the checkpoint was trained with.
pub fn load_predictor(path: &Path, vocab: Vocabulary) -> Result<(Predictor, CheckpointMeta)> {
    let (meta, params) = load_checkpoint(path)?;
    attach(meta, params, vocab)
}

fn attach(meta: CheckpointMeta, params: ModelParams, vocab: Vocabulary) -> Result<(Predictor, CheckpointMeta)> {
    let digest = vocab.digest();
    if digest != meta.vocab_digest {
        return Err(Error::Checkpoint(format!(
            "vocabulary digest mismatch: checkpoint expects {}, got {digest}",
            meta.vocab_digest
        )));
    }
    if vocab.len() != params.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    let predictor = Predictor {
        params,
        vocab,
        features: meta.features,
        summarizer: meta.summarizer,
        threshold: meta.threshold,
    };
    Ok((predictor, meta))
}

/// A checkpoint resolved against its vocabulary.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub predictor: Predictor,
    pub meta: CheckpointMeta,
    pub model_version: String,
}

/// Loads a checkpoint together with its vocabulary, read from `vocab` or,
/// when absent, from the path recorded at save time.
pub fn load_model(path: &Path, vocab: Option<&Path>) -> Result<LoadedModel> {
    let bytes = fs::read(path)?;
    let (meta, params) = decode(&bytes)?;
    let vocab_path = vocab
        .map(Path::to_path_buf)
        .or_else(|| meta.vocab_path.clone())
        .ok_or_else(|| Error::Checkpoint("checkpoint records no vocabulary path".into()))?;
    let vocab = Vocabulary::read(std::io::BufReader::new(fs::File::open(&vocab_path)?))?;
    let (predictor, meta) = attach(meta, params, vocab)?;
    Ok(LoadedModel {
        predictor,
        meta,
        model_version: model_version(&bytes),
    })
}

/// Short identifier of a checkpoint's exact bytes.
pub fn model_version(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    format!("irp-{}", &hex::encode(d)[..16])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Product, Query, Reviews, Utterance};
    use crate::model::ModelConfig;

    fn small_predictor() -> Predictor {
        let vocab = Vocabulary::with_tokens(["red", "dress", "find", "product_search", "price_20"]).unwrap();
        let config = ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_len: 48,
            ..ModelConfig::new(vocab.len())
        };
        Predictor {
            params: ModelParams::init(config, 11).unwrap(),
            vocab,
            features: FeatureMask::full(),
            summarizer: SummarizerConfig::default(),
            threshold: 0.42,
        }
    }

    fn probe() -> Query {
        Query {
            utterance: Utterance::new("find red dress", "product_search").unwrap(),
            products: vec![Product {
                title: "red dress".into(),
                brand: "acme".into(),
                size: "m".into(),
                color: "red".into(),
                reviews: Reviews { count: 3, rating: 4.5 },
                price: 20.0,
                style: String::new(),
                group: String::new(),
                kind: "dress".into(),
            }],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = small_predictor();
        let meta = CheckpointMeta::for_predictor(&p, 5, (0.8, 0.1, 0.1));
        let bytes = encode(&meta, &p.params).unwrap();
        let (meta2, params2) = decode(&bytes).unwrap();
        assert_eq!(meta2, meta);
        for (a, b) in p.params.tensors.iter().zip(&params2.tensors) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let q = probe();
        let restored = Predictor {
            params: params2,
            ..p.clone()
        };
        assert_eq!(
            p.probability(&q).unwrap().to_bits(),
            restored.probability(&q).unwrap().to_bits()
        );
    }

    #[test]
    fn bad_magic() {
        let p = small_predictor();
        let mut bytes = encode(&CheckpointMeta::for_predictor(&p, 0, (0.8, 0.1, 0.1)), &p.params).unwrap();
        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
        assert!(decode(b"IR").unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn version_mismatch() {
        let p = small_predictor();
        let mut bytes = encode(&CheckpointMeta::for_predictor(&p, 0, (0.8, 0.1, 0.1)), &p.params).unwrap();
        bytes[4] = 2;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version mismatch"));
    }

    #[test]
    fn truncation_anywhere_is_detected() {
        let p = small_predictor();
        let bytes = encode(&CheckpointMeta::for_predictor(&p, 0, (0.8, 0.1, 0.1)), &p.params).unwrap();
        for cut in [5, 11, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let p = small_predictor();
        let mut bytes = encode(&CheckpointMeta::for_predictor(&p, 0, (0.8, 0.1, 0.1)), &p.params).unwrap();
        bytes.push(0);
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn vocabulary_digest_checked() {
        let p = small_predictor();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &CheckpointMeta::for_predictor(&p, 0, (0.8, 0.1, 0.1)), &p.params).unwrap();
        let (loaded, meta) = load_predictor(&path, p.vocab.clone()).unwrap();
        assert_eq!(meta.threshold, 0.42);
        assert_eq!(loaded.params, p.params);
        let other = Vocabulary::with_tokens(["blue", "dress", "find", "product_search", "price_20"]).unwrap();
        let err = load_predictor(&path, other).unwrap_err().to_string();
        assert!(err.contains("digest mismatch"), "{err}");
    }

    #[test]
    fn model_version_tracks_bytes() {
        assert_eq!(model_version(b"a"), model_version(b"a"));
        assert_ne!(model_version(b"a"), model_version(b"b"));
        assert!(model_version(b"a").starts_with("irp-"));
    }
}
