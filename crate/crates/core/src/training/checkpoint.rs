//! Single-file checkpoints: a text manifest followed by a binary block store.
//!
//! ```text
//! ADDRTAG-CKPT 1
//! key=value
//! ...
//! <blank line>
//! blocks: u32 name length, name, u64 rows, u64 cols, rows*cols f64 (little endian)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{hex, Manifest};
use crate::embeddings::ProviderKind;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::tagger::{Architecture, ModelDims, ModelParams, TagRepr};
use crate::tags::TagVocabulary;

const MAGIC: &str = "ADDRTAG-CKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub provider: ProviderKind,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        let p = &self.params;
        let vocab = TagVocabulary::default();
        let mut m = Manifest::new();
        m.set("format_version", FORMAT_VERSION)
            .set("variant", p.arch.decoder)
            .set("adversarial", p.arch.adversarial)
            .set("tag_repr", p.tag_repr.as_str())
            .set("input_dim", p.dims.input)
            .set("hidden_dim", p.dims.hidden)
            .set("attention_dim", p.dims.attention)
            .set("tag_dim", p.dims.tag_dim)
            .set("tags", vocab.describe())
            .set("bos_index", vocab.bos_index())
            .set("pad_index", vocab.pad_index())
            .set("provider", self.meta.provider)
            .set("combiner", p.combiner.is_some())
            .set("config_hash", &self.meta.config_hash)
            .set("seed", self.meta.seed)
            .set("epoch", self.meta.epoch)
            .set("best_val_loss", self.meta.best_val_loss);
        m
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, m) in self.params.blocks() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut m = self.manifest();
        m.set("payload_bytes", payload.len())
            .set("payload_sha256", hex(&Sha256::digest(&payload)));
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n{m}\n").into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, payload) = split_file(bytes)?;
        let corrupt = |e: Error| Error::CorruptFile(e.to_string());
        let version: u32 = manifest.parse_value("format_version").map_err(corrupt)?;
        if version != FORMAT_VERSION {
            return Err(Error::ManifestMismatch(format!("unsupported format version {version}")));
        }
        let declared: usize = manifest.parse_value("payload_bytes").map_err(corrupt)?;
        if declared != payload.len() {
            return Err(Error::CorruptFile(format!(
                "payload has {} bytes, manifest declares {declared}",
                payload.len()
            )));
        }
        if manifest.require("payload_sha256").map_err(corrupt)? != hex(&Sha256::digest(payload)) {
            return Err(Error::CorruptFile("payload checksum does not match".into()));
        }

        let mismatch = |e: Error| Error::ManifestMismatch(e.to_string());
        let vocab = TagVocabulary::default();
        if manifest.require("tags").map_err(mismatch)? != vocab.describe()
            || manifest.parse_value::<usize>("bos_index").map_err(mismatch)? != vocab.bos_index()
            || manifest.parse_value::<usize>("pad_index").map_err(mismatch)? != vocab.pad_index()
        {
            return Err(Error::ManifestMismatch("tag vocabulary differs".into()));
        }
        let arch = Architecture {
            decoder: manifest.require("variant").and_then(str::parse).map_err(mismatch)?,
            adversarial: manifest.parse_value("adversarial").map_err(mismatch)?,
        };
        let tag_repr: TagRepr = manifest.require("tag_repr").and_then(str::parse).map_err(mismatch)?;
        let dims = ModelDims {
            input: manifest.parse_value("input_dim").map_err(mismatch)?,
            hidden: manifest.parse_value("hidden_dim").map_err(mismatch)?,
            attention: manifest.parse_value("attention_dim").map_err(mismatch)?,
            tag_dim: manifest.parse_value("tag_dim").map_err(mismatch)?,
        };
        let with_combiner: bool = manifest.parse_value("combiner").map_err(mismatch)?;
        let meta = CheckpointMeta {
            provider: manifest.require("provider").and_then(str::parse).map_err(mismatch)?,
            config_hash: manifest.require("config_hash").map_err(mismatch)?.to_string(),
            seed: manifest.parse_value("seed").map_err(mismatch)?,
            epoch: manifest.parse_value("epoch").map_err(mismatch)?,
            best_val_loss: manifest.parse_value("best_val_loss").map_err(mismatch)?,
        };

        let mut params = ModelParams::zeros(arch, dims, tag_repr, with_combiner);
        if params.dims != dims {
            return Err(Error::ManifestMismatch(format!(
                "tag_dim {} is inconsistent with tag_repr {}",
                dims.tag_dim,
                tag_repr.as_str()
            )));
        }
        let expected = params.expected_shapes();
        let mut reader = Reader { buf: payload, pos: 0 };
        let mut blocks = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let (found, rows, cols) = reader.block_header()?;
            if &found != name || (rows, cols) != *shape {
                return Err(Error::ManifestMismatch(format!(
                    "block {found} has shape {rows}x{cols}, manifest implies {name} {}x{}",
                    shape.0, shape.1
                )));
            }
            blocks.push(Matrix::from_vec(rows, cols, reader.values(rows * cols)?));
        }
        if reader.pos != payload.len() {
            return Err(Error::ManifestMismatch("payload holds more blocks than the manifest implies".into()));
        }
        for ((_, dst), src) in params.blocks_mut().into_iter().zip(blocks) {
            *dst = src;
        }
        Ok(Checkpoint { params, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    c.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn split_file(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::CorruptFile("missing manifest terminator".into()))?;
    let head = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::CorruptFile("manifest is not valid UTF-8".into()))?;
    let (first, rest) = head.split_once('\n').unwrap_or((head, ""));
    if first != format!("{MAGIC} {FORMAT_VERSION}") {
        return Err(Error::CorruptFile(format!("unrecognized header `{first}`")));
    }
    let manifest = Manifest::parse(rest).map_err(|e| Error::CorruptFile(e.to_string()))?;
    Ok((manifest, &bytes[end + 2..]))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptFile("payload ends inside a block".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn block_header(&mut self) -> Result<(String, usize, usize)> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::CorruptFile("block name is not valid UTF-8".into()))?;
        Ok((name, self.u64()?, self.u64()?))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::CorruptFile("block too large".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(arch: Architecture) -> Checkpoint {
        let dims = ModelDims {
            input: 6,
            hidden: 4,
            attention: 3,
            tag_dim: 2,
        };
        Checkpoint {
            params: ModelParams::init(arch, dims, false, 5),
            meta: CheckpointMeta {
                provider: ProviderKind::Fallback,
                config_hash: "abc".into(),
                seed: 5,
                epoch: 3,
                best_val_loss: 0.123456789012345,
            },
        }
    }

    #[test]
    fn round_trip_all_variants() {
        for arch in Architecture::all() {
            let c = ckpt(arch);
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn edited_dim_is_a_mismatch() {
        let bytes = ckpt(Architecture::ATTENTION).to_bytes();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        assert!(text.contains("hidden_dim=4\n"));
        let pos = bytes.windows(13).position(|w| w == b"hidden_dim=4\n").unwrap();
        let mut edited = bytes.clone();
        edited[pos + 11] = b'5';
        assert!(matches!(
            Checkpoint::from_bytes(&edited),
            Err(Error::ManifestMismatch(_))
        ));
    }

    #[test]
    fn truncation_and_damage_are_corruption() {
        let bytes = ckpt(Architecture::BASE).to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptFile(_))
            ));
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::CorruptFile(_))));
        assert!(matches!(Checkpoint::from_bytes(b"hello\n\n"), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = ckpt(Architecture::BASE_ADVERSARIAL);
        save_checkpoint(&c, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
    }
}
