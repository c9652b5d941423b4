//! Dataset model: vocabulary with reserved control tokens, framed
//! feature sequences, utterances, and the on-disk manifest + feature
//! file formats.
//!
//! Feature files are "ATFX": magic, version, frame count and dimension
//! as 32-bit little-endian unsigned, then row-major 32-bit little-endian
//! IEEE-754 floats. Manifests are line-delimited JSON records
//! `{id, feature_path, frames, dim, transcript}` with paths relative to
//! the manifest's directory.

pub mod mel;
pub mod synthetic;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use mel::{mel_features, MelConfig};
pub use synthetic::{generate_synthetic, SyntheticSpec};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
/// Begin-of-block `<m>`, an incremental decoder's step-initial input.
pub const BLOCK_START_ID: TokenId = 3;
/// End-of-block `</m>`, "nothing more in this segment".
pub const BLOCK_END_ID: TokenId = 4;
pub const BLANK_ID: TokenId = 5;
pub const UNK_ID: TokenId = 6;
/// First id carrying an actual character.
pub const FIRST_CHAR_ID: TokenId = 7;

pub const RESERVED_TOKENS: [&str; 7] = ["<pad>", "<s>", "</s>", "<m>", "</m>", "<blank>", "<unk>"];

/// Ordered token table with dense, stable ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Reserved tokens followed by the given characters, sorted and
    /// deduplicated.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Vocabulary {
        let mut cs: Vec<char> = chars.into_iter().collect();
        cs.sort_unstable();
        cs.dedup();
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(cs.into_iter().map(String::from));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn char_id(&self, c: char) -> Option<TokenId> {
        self.index.get(c.to_string().as_str()).copied()
    }

    pub fn is_char(&self, id: TokenId) -> bool {
        id >= FIRST_CHAR_ID && (id as usize) < self.tokens.len()
    }

    /// Character ids for a transcript; unknown characters map to `<unk>`
    /// and are counted.
    pub fn encode_transcript(&self, transcript: &str) -> (Vec<TokenId>, usize) {
        let mut unk = 0;
        let ids = transcript
            .chars()
            .map(|c| {
                self.char_id(c).unwrap_or_else(|| {
                    unk += 1;
                    UNK_ID
                })
            })
            .collect();
        (ids, unk)
    }

    /// As `encode_transcript` but any unknown character is an error
    /// naming its position.
    pub fn encode_transcript_strict(&self, transcript: &str) -> Result<Vec<TokenId>> {
        transcript
            .chars()
            .enumerate()
            .map(|(i, c)| {
                self.char_id(c).ok_or_else(|| {
                    Error::Data(format!("character {c:?} at position {i} not in vocabulary"))
                })
            })
            .collect()
    }

    /// Characters only; control tokens are dropped.
    pub fn decode_chars(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| self.is_char(id))
            .map(|&id| self.tokens[id as usize].as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for t in &self.tokens {
            body.push_str(t);
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let tokens: Vec<String> = body.lines().map(String::from).collect();
        if tokens.len() < RESERVED_TOKENS.len() {
            return Err(Error::Integrity(format!(
                "{}: vocabulary shorter than the reserved token set",
                path.display()
            )));
        }
        for (i, expect) in RESERVED_TOKENS.iter().enumerate() {
            if tokens[i] != *expect {
                return Err(Error::Integrity(format!(
                    "{}: reserved token {i} is {:?}, expected {expect:?}",
                    path.display(),
                    tokens[i]
                )));
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Ok(Vocabulary { tokens, index })
    }
}

/// Framed features, `frames × dim`, stored at serialization precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<FeatureSequence> {
        if frames * dim != data.len() {
            return Err(Error::Dimension(format!(
                "{frames}x{dim} features need {} values, got {}",
                frames * dim,
                data.len()
            )));
        }
        Ok(FeatureSequence { frames, dim, data })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.dim],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("consistent by construction")
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureSequence,
    pub transcript: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Every distinct character appearing in any transcript.
    pub fn transcript_chars(&self) -> Vec<char> {
        let mut cs: Vec<char> = self
            .utterances
            .iter()
            .flat_map(|u| u.transcript.chars())
            .collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    }
}

const ATFX_MAGIC: &[u8; 4] = b"ATFX";
const ATFX_VERSION: u32 = 1;

pub fn write_features(path: &Path, features: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + features.data.len() * 4);
    buf.extend_from_slice(ATFX_MAGIC);
    buf.extend_from_slice(&ATFX_VERSION.to_le_bytes());
    buf.extend_from_slice(&(features.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(features.dim as u32).to_le_bytes());
    for v in &features.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let name = path.display().to_string();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(name.clone(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(name.clone(), e))?;
    if bytes.len() < 16 || &bytes[0..4] != ATFX_MAGIC {
        return Err(Error::Integrity(format!("{name}: not an ATFX feature file")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != ATFX_VERSION {
        return Err(Error::Integrity(format!(
            "{name}: unsupported feature file version {}",
            word(4)
        )));
    }
    let frames = word(8) as usize;
    let dim = word(12) as usize;
    let expect = 16 + frames * dim * 4;
    if bytes.len() != expect {
        return Err(Error::Integrity(format!(
            "{name}: {frames}x{dim} features need {expect} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureSequence::new(frames, dim, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    feature_path: String,
    frames: usize,
    dim: usize,
    transcript: String,
}

/// Write `<dir>/<split>.jsonl` plus one feature file per utterance under
/// `<dir>/features/`. Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path, split: &str) -> Result<PathBuf> {
    let features_dir = dir.join("features");
    std::fs::create_dir_all(&features_dir)
        .map_err(|e| Error::io(features_dir.display().to_string(), e))?;
    let manifest_path = dir.join(format!("{split}.jsonl"));
    let mut manifest = std::fs::File::create(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    for utt in &dataset.utterances {
        let rel = format!("features/{}.atfx", utt.id);
        write_features(&dir.join(&rel), &utt.features)?;
        let record = ManifestRecord {
            id: utt.id.clone(),
            feature_path: rel,
            frames: utt.features.frames,
            dim: utt.features.dim,
            transcript: utt.transcript.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::parse(manifest_path.display().to_string(), e.to_string()))?;
        writeln!(manifest, "{line}")
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    }
    Ok(manifest_path)
}

/// Load a manifest and all referenced feature files, validating each
/// declared shape against the file's own header.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let name = manifest_path.display().to_string();
    let body =
        std::fs::read_to_string(manifest_path).map_err(|e| Error::io(name.clone(), e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut utterances = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(name.clone(), format!("line {}: {e}", lineno + 1)))?;
        let fpath = base.join(&record.feature_path);
        let features = read_features(&fpath)?;
        if features.frames != record.frames || features.dim != record.dim {
            return Err(Error::Integrity(format!(
                "{}: manifest declares {}x{} but file holds {}x{}",
                fpath.display(),
                record.frames,
                record.dim,
                features.frames,
                features.dim
            )));
        }
        utterances.push(Utterance {
            id: record.id,
            features,
            transcript: record.transcript,
        });
    }
    Ok(Dataset { utterances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_chars("cab".chars())
    }

    #[test]
    fn reserved_ids_are_stable() {
        let v = vocab();
        assert_eq!(v.id_of("<pad>"), Some(PAD_ID));
        assert_eq!(v.id_of("<s>"), Some(BOS_ID));
        assert_eq!(v.id_of("</s>"), Some(EOS_ID));
        assert_eq!(v.id_of("<m>"), Some(BLOCK_START_ID));
        assert_eq!(v.id_of("</m>"), Some(BLOCK_END_ID));
        assert_eq!(v.id_of("<blank>"), Some(BLANK_ID));
        assert_eq!(v.id_of("<unk>"), Some(UNK_ID));
        // Characters sorted after the reserved block.
        assert_eq!(v.char_id('a'), Some(7));
        assert_eq!(v.char_id('b'), Some(8));
        assert_eq!(v.char_id('c'), Some(9));
    }

    #[test]
    fn encode_decode_round_trip() {
        let v = vocab();
        let (ids, unk) = v.encode_transcript("cabba");
        assert_eq!(unk, 0);
        assert_eq!(v.decode_chars(&ids), "cabba");
        // Unknowns map to <unk> and are counted.
        let (ids, unk) = v.encode_transcript("axe");
        assert_eq!(unk, 2);
        assert_eq!(ids, vec![7, UNK_ID, UNK_ID]);
        assert!(v.encode_transcript_strict("axe").is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempdir();
        let path = dir.join("vocab.txt");
        let v = vocab();
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(v, loaded);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempdir();
        let ds = Dataset {
            utterances: vec![
                Utterance {
                    id: "u-0".into(),
                    features: FeatureSequence::new(2, 3, vec![0.5, -1.0, 2.0, 0.25, 0.0, -7.5])
                        .unwrap(),
                    transcript: "ab".into(),
                },
                Utterance {
                    id: "u-1".into(),
                    features: FeatureSequence::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap(),
                    transcript: "c".into(),
                },
            ],
        };
        let manifest = save_dataset(&ds, &dir, "train").unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in ds.utterances.iter().zip(&loaded.utterances) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.features, b.features);
        }
    }

    #[test]
    fn truncated_feature_file_is_integrity_error() {
        let dir = tempdir();
        let ds = Dataset {
            utterances: vec![Utterance {
                id: "u-0".into(),
                features: FeatureSequence::new(4, 2, vec![0.0; 8]).unwrap(),
                transcript: "a".into(),
            }],
        };
        let manifest = save_dataset(&ds, &dir, "train").unwrap();
        let fpath = dir.join("features/u-0.atfx");
        let bytes = std::fs::read(&fpath).unwrap();
        std::fs::write(&fpath, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
        assert!(err.to_string().contains("u-0.atfx"));
    }

    #[test]
    fn missing_feature_file_names_the_path() {
        let dir = tempdir();
        let ds = Dataset {
            utterances: vec![Utterance {
                id: "u-0".into(),
                features: FeatureSequence::new(1, 1, vec![0.0]).unwrap(),
                transcript: "a".into(),
            }],
        };
        let manifest = save_dataset(&ds, &dir, "train").unwrap();
        std::fs::remove_file(dir.join("features/u-0.atfx")).unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(err.to_string().contains("u-0.atfx"), "{err}");
    }

    #[test]
    fn declared_shape_mismatch_is_integrity_error() {
        let dir = tempdir();
        let ds = Dataset {
            utterances: vec![Utterance {
                id: "u-0".into(),
                features: FeatureSequence::new(2, 2, vec![0.0; 4]).unwrap(),
                transcript: "a".into(),
            }],
        };
        let manifest = save_dataset(&ds, &dir, "train").unwrap();
        // Overwrite the feature file with a different (self-consistent) shape.
        write_features(
            &dir.join("features/u-0.atfx"),
            &FeatureSequence::new(3, 2, vec![0.0; 6]).unwrap(),
        )
        .unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "atisr-corpus-test-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
