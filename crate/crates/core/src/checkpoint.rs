//! Binary model checkpoints.
//!
//! Layout: the magic `MKEDG1`, a `u32` section count, then sections of
//! `u32` name length, name, `u64` payload length, payload. All integers are
//! little-endian. Sections are `config` (key=value lines), `vocab` and
//! `labels` (one entry per line) and one `param:<name>` per tensor holding a
//! `u32` rank, `u32` extents and `f32` values.

use std::path::Path;

use crate::corpus::{EmotionLabels, Vocab, RESERVED};
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::model::{check_params, from_kv, param_specs, to_kv, Model, ModelConfig};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 6] = b"MKEDG1";

fn put_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn tensor_payload(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Serializes a model. Parameters are stored as `f32`.
pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let count = 3 + model.params.len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    let config = to_kv("model", &model.config)? + &to_kv("graph", &model.graph_config)?;
    put_section(&mut out, "config", config.as_bytes());
    put_section(&mut out, "vocab", model.vocab.tokens().join("\n").as_bytes());
    put_section(&mut out, "labels", model.labels.as_slice().join("\n").as_bytes());
    for (name, t) in model.params.iter() {
        put_section(&mut out, &format!("param:{name}"), &tensor_payload(t));
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn utf8(bytes: &[u8], section: &str) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint(format!("section {section} is not UTF-8")))
}

fn decode_tensor(payload: &[u8], name: &str) -> Result<Tensor> {
    let mut r = Reader { buf: payload, pos: 0 };
    let rank = r.u32(name)? as usize;
    let shape = (0..rank)
        .map(|_| r.u32(name).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let bytes = r.take(4 * n, name)?;
    if r.pos != payload.len() {
        return Err(Error::Checkpoint(format!("parameter {name} has trailing bytes")));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))
}

/// Parses and validates checkpoint bytes.
pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic: expected \"{}\"",
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let count = r.u32("section count")?;
    let (mut config, mut vocab, mut labels) = (None, None, None);
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u32("section name length")? as usize;
        let name = utf8(r.take(len, "section name")?, "name")?;
        let plen = r.u64("section length")? as usize;
        let payload = r.take(plen, &name)?;
        match name.as_str() {
            "config" => config = Some(utf8(payload, "config")?),
            "vocab" => vocab = Some(utf8(payload, "vocab")?),
            "labels" => labels = Some(utf8(payload, "labels")?),
            other => match other.strip_prefix("param:") {
                Some(p) => {
                    params.insert(p, decode_tensor(payload, p)?)?;
                }
                None => return Err(Error::Checkpoint(format!("unknown section {other:?}"))),
            },
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last section".into()));
    }
    let missing = |s: &str| Error::Checkpoint(format!("missing {s} section"));
    let config_text = config.ok_or_else(|| missing("config"))?;
    let model_cfg: ModelConfig = from_kv("model", &config_text)?;
    let graph_cfg: GraphConfig = from_kv("graph", &config_text)?;
    model_cfg
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid config: {e}")))?;

    let tokens: Vec<String> = vocab
        .ok_or_else(|| missing("vocab"))?
        .split('\n')
        .map(String::from)
        .collect();
    if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
        return Err(Error::Checkpoint(
            "vocabulary does not start with the reserved tokens".into(),
        ));
    }
    let vocab = Vocab::from_tokens(tokens[RESERVED.len()..].iter().cloned());
    if vocab.len() != tokens.len() || vocab.len() != model_cfg.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries, config expects {}",
            tokens.len(),
            model_cfg.vocab_size
        )));
    }
    let labels_text = labels.ok_or_else(|| missing("labels"))?;
    let labels = EmotionLabels::new(labels_text.split('\n')).map_err(|e| Error::Checkpoint(format!("labels: {e}")))?;
    if labels.len() != model_cfg.num_emotions {
        return Err(Error::Checkpoint(format!(
            "{} labels, config expects {}",
            labels.len(),
            model_cfg.num_emotions
        )));
    }
    check_params(&model_cfg, &params)?;
    // Store order follows the parameter list regardless of section order.
    let mut ordered = ParamStore::new();
    for spec in param_specs(&model_cfg) {
        let t = params.by_name(&spec.name).expect("checked above").clone();
        ordered.insert(spec.name, t)?;
    }
    Ok(Model {
        config: model_cfg,
        graph_config: graph_cfg,
        vocab,
        labels,
        params: ordered,
    })
}

/// Writes through a temporary file in the same directory, then renames.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 8,
            max_positions: 8,
            max_utterances: 2,
            ..Default::default()
        };
        let vocab = Vocab::from_tokens(["a", "b", "c"]);
        let labels = EmotionLabels::new(["x", "y"]).unwrap();
        Model::new(cfg, GraphConfig::default(), vocab, labels, 3, None).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = decode_model(&encode_model(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }

    #[test]
    fn wrong_magic_names_expected() {
        let mut bytes = encode_model(&model()).unwrap();
        bytes[5] = b'2';
        let err = decode_model(&bytes).unwrap_err().to_string();
        assert!(err.contains("\"MKEDG1\""), "{err}");
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = encode_model(&model()).unwrap();
        for cut in [3, 8, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_model(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut m = model();
        m.config.ffn_dim = 16;
        let err = decode_model(&encode_model(&m).unwrap()).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn vocab_size_is_checked() {
        let mut m = model();
        m.vocab = Vocab::from_tokens(["a", "b"]);
        assert!(decode_model(&encode_model(&m).unwrap()).is_err());
    }
}
