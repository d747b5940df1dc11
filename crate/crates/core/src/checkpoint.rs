//! Model persistence: a human-readable config header followed by binary
//! parameter records.
//!
//! Layout: the line `vibra checkpoint v1`, the model config as `key =
//! value` lines, one blank line, then for every parameter (and each
//! batchnorm's running statistics) a record of
//! `[u32 name length][name bytes][u32 rank][u32 dims…][f64 values…]`, all
//! little-endian. Values are stored as 64-bit floats regardless of the
//! crate's arithmetic width, so checkpoints round-trip bit-exactly in the
//! default build and load portably in others.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::Real;

const MAGIC: &str = "vibra checkpoint v1";

/// Writes the model's config, parameters, and batchnorm running statistics
/// to `path`. Two models with identical configs and values produce
/// byte-identical files.
pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC.as_bytes());
    bytes.push(b'\n');
    bytes.extend_from_slice(model.config().to_kv_string().as_bytes());
    bytes.push(b'\n');
    for (name, values, dims) in records_of(model) {
        write_record(&mut bytes, &name, &dims, &values);
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Rebuilds the model a checkpoint describes. Every parameter the config
/// implies must be present with the right shape; anything extra, missing,
/// or misshapen is an error naming the offending record.
pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = fs::read(path)?;
    let split = find_blank_line(&bytes).ok_or_else(|| {
        Error::contract("checkpoint has no header/body separator; file is corrupt or truncated")
    })?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::contract("checkpoint header is not valid UTF-8"))?;
    let (magic, config_text) = header.split_once('\n').ok_or_else(|| {
        Error::contract("checkpoint header is missing its config section")
    })?;
    if magic != MAGIC {
        return Err(Error::contract(format!(
            "unrecognized checkpoint signature `{magic}`; expected `{MAGIC}`"
        )));
    }
    let config = ModelConfig::from_kv_str(config_text)?;
    let model = Model::new(&config, 0)?;

    let mut cursor = Cursor::new(&bytes[split + 2..]);
    for (name, _, dims) in records_of(&model) {
        let record = cursor.read_record()?;
        if record.name != name {
            return Err(Error::contract(format!(
                "checkpoint record `{}` arrived where `{name}` was expected",
                record.name
            )));
        }
        if record.dims != dims {
            return Err(Error::contract(format!(
                "checkpoint parameter `{name}` has shape {:?} but the model expects {dims:?}",
                record.dims
            )));
        }
        store(&model, &name, &record.values)?;
    }
    if !cursor.is_empty() {
        return Err(Error::contract(format!(
            "checkpoint holds {} unexpected trailing bytes",
            cursor.remaining()
        )));
    }
    Ok(model)
}

/// Every persisted record, in fixed order: parameters first, then each
/// batchnorm's running mean and variance.
fn records_of(model: &Model) -> Vec<(String, Vec<Real>, Vec<usize>)> {
    let mut records: Vec<(String, Vec<Real>, Vec<usize>)> = model
        .named_parameters()
        .into_iter()
        .map(|(name, t)| {
            let dims = t.shape().to_vec();
            (name, t.to_vec(), dims)
        })
        .collect();
    for (name, norm) in model.named_norms() {
        let channels = norm.channels();
        records.push((
            format!("{name}.running_mean"),
            norm.running_mean(),
            vec![channels],
        ));
        records.push((
            format!("{name}.running_var"),
            norm.running_var(),
            vec![channels],
        ));
    }
    records
}

fn store(model: &Model, name: &str, values: &[Real]) -> Result<()> {
    if let Some(stat) = name
        .strip_suffix(".running_mean")
        .map(|base| (base, true))
        .or_else(|| name.strip_suffix(".running_var").map(|base| (base, false)))
    {
        let (base, is_mean) = stat;
        let (_, norm) = model
            .named_norms()
            .into_iter()
            .find(|(n, _)| n == base)
            .ok_or_else(|| Error::contract(format!("no batchnorm named `{base}`")))?;
        let mut mean = norm.running_mean();
        let mut var = norm.running_var();
        if is_mean {
            mean = values.to_vec();
        } else {
            var = values.to_vec();
        }
        norm.set_running_stats(&mean, &var)?;
        return Ok(());
    }
    let params = model.named_parameters();
    let (_, tensor) = params
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))?;
    tensor.apply_update(|w| w.copy_from_slice(values))
}

fn write_record(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[Real]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f64).to_le_bytes());
    }
}

fn find_blank_line(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n")
}

struct Record {
    name: String,
    dims: Vec<usize>,
    values: Vec<Real>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Cursor<'a> {
        Cursor { bytes, at: 0 }
    }

    fn is_empty(&self) -> bool {
        self.at >= self.bytes.len()
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::contract(
                "checkpoint ends mid-record; file is corrupt or truncated",
            ));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn read_record(&mut self) -> Result<Record> {
        let name_len = self.read_u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| Error::contract("checkpoint record name is not valid UTF-8"))?
            .to_string();
        let rank = self.read_u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.read_u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let b = self.take(8)?;
            values.push(f64::from_le_bytes([
                b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
            ]) as Real);
        }
        Ok(Record { name, dims, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_length: 128,
            embed_channels: 4,
            num_blocks: 1,
            num_classes: 3,
            classifier_hidden: 8,
            ..ModelConfig::default()
        }
    }

    fn random_input(seed: u64, len: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Real> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(data, &[1, 1, len]).unwrap()
    }

    #[test]
    fn round_trip_preserves_config_parameters_and_norm_stats() -> Result<()> {
        let dir = tempfile::tempdir()?;
        let path = dir.path().join("model.ckpt");
        let model = Model::new(&small_config(), 77)?;
        let x = random_input(1, 128);
        model.forward(&x, Mode::Train)?;
        save(&model, &path)?;

        let loaded = load(&path)?;
        assert_eq!(loaded.config(), model.config());
        for ((name_a, a), (name_b, b)) in model
            .named_parameters()
            .iter()
            .zip(loaded.named_parameters().iter())
        {
            assert_eq!(name_a, name_b);
            let bits = |t: &Tensor| t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "parameter {name_a}");
        }
        for ((name_a, norm_a), (_, norm_b)) in
            model.named_norms().iter().zip(loaded.named_norms().iter())
        {
            assert_eq!(norm_a.running_mean(), norm_b.running_mean(), "{name_a}");
            assert_eq!(norm_a.running_var(), norm_b.running_var(), "{name_a}");
        }

        let original = model.forward(&x, Mode::Eval)?.to_vec();
        let reloaded = loaded.forward(&x, Mode::Eval)?.to_vec();
        let bits = |v: &[Real]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&original), bits(&reloaded));
        Ok(())
    }

    #[test]
    fn identical_models_write_identical_bytes() -> Result<()> {
        let dir = tempfile::tempdir()?;
        let path_a = dir.path().join("a.ckpt");
        let path_b = dir.path().join("b.ckpt");
        save(&Model::new(&small_config(), 5)?, &path_a)?;
        save(&Model::new(&small_config(), 5)?, &path_b)?;
        assert_eq!(fs::read(&path_a)?, fs::read(&path_b)?);

        let path_c = dir.path().join("c.ckpt");
        save(&Model::new(&small_config(), 6)?, &path_c)?;
        assert_ne!(fs::read(&path_a)?, fs::read(&path_c)?);
        Ok(())
    }

    #[test]
    fn truncated_and_tampered_files_are_rejected() -> Result<()> {
        let dir = tempfile::tempdir()?;
        let path = dir.path().join("model.ckpt");
        save(&Model::new(&small_config(), 2)?, &path)?;
        let bytes = fs::read(&path)?;

        let cut = dir.path().join("cut.ckpt");
        fs::write(&cut, &bytes[..bytes.len() - 9])?;
        assert!(load(&cut).is_err());

        let renamed = dir.path().join("renamed.ckpt");
        let mut tampered = bytes.clone();
        let separator = find_blank_line(&bytes).unwrap();
        // First byte of the first record's name ("embed.conv.weight").
        tampered[separator + 2 + 4] = b'x';
        fs::write(&renamed, tampered)?;
        let err = match load(&renamed) {
            Ok(_) => panic!("tampered checkpoint must not load"),
            Err(e) => e,
        };
        assert!(
            err.to_string().contains("embed.conv.weight"),
            "mismatch should name the expected record: {err}"
        );

        let scribble = dir.path().join("scribble.ckpt");
        fs::write(&scribble, b"not a checkpoint at all")?;
        assert!(load(&scribble).is_err());
        Ok(())
    }

    #[test]
    fn trailing_garbage_is_reported() -> Result<()> {
        let dir = tempfile::tempdir()?;
        let path = dir.path().join("model.ckpt");
        save(&Model::new(&small_config(), 2)?, &path)?;
        let mut bytes = fs::read(&path)?;
        bytes.extend_from_slice(&[0u8; 16]);
        fs::write(&path, bytes)?;
        let err = match load(&path) {
            Ok(_) => panic!("oversized checkpoint must not load"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("trailing"), "{err}");
        Ok(())
    }

    #[test]
    fn ablated_models_round_trip_their_reduced_parameter_sets() -> Result<()> {
        let dir = tempfile::tempdir()?;
        for ablation in ["non_msa", "non_fft", "non_farel"] {
            let config = ModelConfig {
                ablation: ablation.parse()?,
                ..small_config()
            };
            let path = dir.path().join(format!("{ablation}.ckpt"));
            let model = Model::new(&config, 4)?;
            save(&model, &path)?;
            let loaded = load(&path)?;
            assert_eq!(loaded.config().ablation, config.ablation);
            assert_eq!(
                loaded.named_parameters().len(),
                model.named_parameters().len()
            );
        }
        Ok(())
    }
}
