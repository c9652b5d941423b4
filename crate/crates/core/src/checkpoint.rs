//! Bit-exact model checkpoints: a JSON manifest (version, architecture,
//! vocabulary, role, provenance) next to a binary blob of named tensors.
//!
//! Blob layout per entry, sorted by name: name length (u64 LE), name
//! bytes (UTF-8), rank (u64 LE), dims (u64 LE each), then row-major
//! f32 LE data. Training runs in f64; checkpoints round to f32.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, RESERVED_TOKENS};
use crate::error::{Error, Result};
use crate::network::ArchConfig;
use crate::numerics::Tensor;
use crate::seq2seq::{ModelRole, Seq2SeqModel};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub arch: ArchConfig,
    pub role: ModelRole,
    pub vocab: Vec<String>,
    /// Config echoes and input hashes, key-sorted.
    pub provenance: BTreeMap<String, String>,
}

fn write_blob(params: &[(String, &Tensor)]) -> Vec<u8> {
    let mut entries: Vec<(&str, &Tensor)> =
        params.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    entries.sort_by_key(|(n, _)| *n);
    let mut buf = Vec::new();
    for (name, tensor) in entries {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.to_f32() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn read_blob(bytes: &[u8], origin: &str) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Integrity(format!(
                "{origin}: truncated tensor blob at byte {pos}",
                pos = *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    while pos < bytes.len() {
        let name_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| Error::Integrity(format!("{origin}: bad tensor name: {e}")))?;
        let rank = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize);
        }
        let numel: usize = shape.iter().product();
        let data_bytes = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = data_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.insert(name, Tensor::from_f32(shape, &data)?);
    }
    Ok(out)
}

/// Write `<dir>/manifest.json` and `<dir>/tensors.bin`.
pub fn save_checkpoint(
    model: &Seq2SeqModel,
    dir: &Path,
    provenance: BTreeMap<String, String>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        arch: model.arch.clone(),
        role: model.role,
        vocab: (0..model.vocab.size() as u32)
            .map(|id| model.vocab.token(id).expect("dense ids").to_string())
            .collect(),
        provenance,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(manifest_path.display().to_string(), e.to_string()))?;
    std::fs::write(&manifest_path, body)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let blob = write_blob(&model.params());
    let blob_path = dir.join(TENSORS_FILE);
    std::fs::write(&blob_path, blob).map_err(|e| Error::io(blob_path.display().to_string(), e))
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let body = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::parse(manifest_path.display().to_string(), e.to_string()))
}

/// Rebuild a model from disk. Parameters round-trip through f32.
pub fn load_checkpoint(dir: &Path) -> Result<Seq2SeqModel> {
    let manifest = load_manifest(dir)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!(
            "{}: unsupported checkpoint version {}",
            dir.display(),
            manifest.version
        )));
    }
    for (i, expect) in RESERVED_TOKENS.iter().enumerate() {
        if manifest.vocab.get(i).map(|s| s.as_str()) != Some(*expect) {
            return Err(Error::Integrity(format!(
                "{}: vocabulary lacks reserved token {expect:?} at id {i}",
                dir.display()
            )));
        }
    }
    let chars: Vec<char> = manifest.vocab[RESERVED_TOKENS.len()..]
        .iter()
        .filter_map(|t| t.chars().next())
        .collect();
    let vocab = Vocabulary::from_chars(chars);
    if vocab.size() != manifest.vocab.len() {
        return Err(Error::Integrity(format!(
            "{}: vocabulary round-trip changed size ({} vs {})",
            dir.display(),
            vocab.size(),
            manifest.vocab.len()
        )));
    }
    let mut model = Seq2SeqModel::new(manifest.arch.clone(), vocab, manifest.role, 0)?;

    let blob_path = dir.join(TENSORS_FILE);
    let mut bytes = Vec::new();
    std::fs::File::open(&blob_path)
        .map_err(|e| Error::io(blob_path.display().to_string(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(blob_path.display().to_string(), e))?;
    let tensors = read_blob(&bytes, &blob_path.display().to_string())?;
    for (name, param) in model.params_mut() {
        let loaded = tensors.get(&name).ok_or_else(|| {
            Error::Integrity(format!(
                "{}: tensor '{name}' missing from checkpoint",
                blob_path.display()
            ))
        })?;
        if loaded.shape() != param.shape() {
            return Err(Error::Integrity(format!(
                "{}: tensor '{name}' has shape {:?}, model expects {:?}",
                blob_path.display(),
                loaded.shape(),
                param.shape()
            )));
        }
        *param = loaded.clone().with_grad();
    }
    Ok(model)
}

/// Hash of a checkpoint's bytes: manifest then blob.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for file in [MANIFEST_FILE, TENSORS_FILE] {
        let path = dir.join(file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        hasher.update(&bytes);
    }
    Ok(hex_string(&hasher.finalize()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex_string(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Checkpoint directory path under an output root.
pub fn checkpoint_dir(out: &Path, name: &str) -> PathBuf {
    out.join(format!("{name}.ckpt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ScorerKind;

    fn tiny_model(seed: u64) -> Seq2SeqModel {
        let arch = ArchConfig {
            feature_dim: 4,
            enc_proj: 6,
            enc_hidden: 5,
            dec_embed: 4,
            dec_hidden: 8,
            attn_hidden: 6,
            scorer: ScorerKind::Mlp,
        };
        let vocab = Vocabulary::from_chars("ab".chars());
        Seq2SeqModel::new(arch, vocab, ModelRole::Teacher, seed).unwrap()
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "atisr-ckpt-test-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip_preserves_f32_rounded_parameters() {
        let model = tiny_model(7);
        let dir = tempdir().join("m.ckpt");
        save_checkpoint(&model, &dir, BTreeMap::new()).unwrap();
        let loaded = load_checkpoint(&dir).unwrap();
        assert_eq!(loaded.role, model.role);
        assert_eq!(loaded.arch, model.arch);
        assert_eq!(loaded.vocab, model.vocab);
        for ((n1, p1), (n2, p2)) in model.params().iter().zip(loaded.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.shape(), p2.shape());
            let expect: Vec<f64> = p1.data().iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(p2.data(), expect.as_slice(), "{n1}");
        }
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let model = tiny_model(7);
        let d1 = tempdir().join("a.ckpt");
        let d2 = tempdir().join("b.ckpt");
        save_checkpoint(&model, &d1, BTreeMap::new()).unwrap();
        save_checkpoint(&model, &d2, BTreeMap::new()).unwrap();
        assert_eq!(
            std::fs::read(d1.join(TENSORS_FILE)).unwrap(),
            std::fs::read(d2.join(TENSORS_FILE)).unwrap()
        );
        assert_eq!(checkpoint_hash(&d1).unwrap(), checkpoint_hash(&d2).unwrap());
    }

    #[test]
    fn truncated_blob_is_an_integrity_error() {
        let model = tiny_model(7);
        let dir = tempdir().join("m.ckpt");
        save_checkpoint(&model, &dir, BTreeMap::new()).unwrap();
        let blob = std::fs::read(dir.join(TENSORS_FILE)).unwrap();
        std::fs::write(dir.join(TENSORS_FILE), &blob[..blob.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&dir).unwrap_err(),
            Error::Integrity(_)
        ));
    }

    #[test]
    fn missing_checkpoint_reports_the_path() {
        let dir = tempdir().join("nope.ckpt");
        let err = load_checkpoint(&dir).unwrap_err();
        assert!(err.to_string().contains("nope.ckpt"), "{err}");
    }
}
