//! `.ssgk` checkpoints.
//!
//! Layout: `b"SSGK"`, format version `u32` LE, header length `u32` LE, a
//! UTF-8 JSON header, then every tensor as `f32` LE values, back to back in
//! directory order. Directory offsets count from the start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ssgan_tensor::{AdamState, Prng, RunningStats, Tensor};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::models::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, NetState};

pub const MAGIC: &[u8; 4] = b"SSGK";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: TrainConfig,
    pub generator: Option<Generator>,
    pub discriminator: Discriminator,
    pub adam_g: BTreeMap<String, AdamState>,
    pub adam_d: BTreeMap<String, AdamState>,
    pub noise_rng_state: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rank: usize,
    extents: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    step: u64,
    config_hash: String,
    config: TrainConfig,
    noise_rng_state: u64,
    generator_spec: Option<GeneratorSpec>,
    discriminator_spec: DiscriminatorSpec,
    /// Adam step counters per network and parameter.
    adam_steps: BTreeMap<String, BTreeMap<String, u64>>,
    tensors: Vec<TensorEntry>,
}

fn push_net(out: &mut Vec<(String, Tensor<f32>)>, prefix: &str, st: &NetState, adam: &BTreeMap<String, AdamState>) -> Result<()> {
    for (name, t) in &st.params {
        out.push((format!("{prefix}/param/{name}"), t.clone()));
    }
    for (name, rs) in &st.running {
        out.push((format!("{prefix}/running/{name}/mean"), Tensor::from_vec(&[rs.mean.len()], rs.mean.clone())?));
        out.push((format!("{prefix}/running/{name}/var"), Tensor::from_vec(&[rs.var.len()], rs.var.clone())?));
    }
    for (name, s) in adam {
        out.push((format!("{prefix}/adam/{name}/m"), s.m.clone()));
        out.push((format!("{prefix}/adam/{name}/v"), s.v.clone()));
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    if let Some(g) = &ckpt.generator {
        push_net(&mut tensors, "generator", &g.state, &ckpt.adam_g)?;
    }
    push_net(&mut tensors, "discriminator", &ckpt.discriminator.state, &ckpt.adam_d)?;
    let steps = |a: &BTreeMap<String, AdamState>| a.iter().map(|(k, s)| (k.clone(), s.t)).collect();
    let mut adam_steps = BTreeMap::new();
    if ckpt.generator.is_some() {
        adam_steps.insert("generator".to_string(), steps(&ckpt.adam_g));
    }
    adam_steps.insert("discriminator".to_string(), steps(&ckpt.adam_d));
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                rank: t.dims().len(),
                extents: t.dims().to_vec(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let header = Header {
        step: ckpt.step,
        config_hash: ckpt.config.hash(),
        config: ckpt.config.clone(),
        noise_rng_state: ckpt.noise_rng_state,
        generator_spec: ckpt.generator.as_ref().map(|g| g.spec.clone()),
        discriminator_spec: ckpt.discriminator.spec.clone(),
        adam_steps,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Contract(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Loads a checkpoint and compares its config hash with `expected`. A
/// mismatch is returned (and logged) as a warning, not an error.
pub fn load_checkpoint_checked(path: &Path, expected: &TrainConfig) -> Result<(Checkpoint, Option<String>)> {
    let ckpt = load_checkpoint(path)?;
    let (have, want) = (ckpt.config.hash(), expected.hash());
    let warning = (have != want).then(|| {
        let msg = format!(
            "{}: config hash {} differs from the current config {}",
            path.display(),
            &have[..12],
            &want[..12]
        );
        log::warn!("{msg}");
        msg
    });
    Ok((ckpt, warning))
}

struct Payload<'a> {
    path: &'a Path,
    tensors: BTreeMap<String, Tensor<f32>>,
}

impl Payload<'_> {
    fn take(&mut self, name: &str, dims: &[usize]) -> Result<Tensor<f32>> {
        let t = self
            .tensors
            .remove(name)
            .ok_or_else(|| Error::format(self.path, 0, format!("tensor count mismatch: `{name}` missing")))?;
        if t.dims() != dims {
            return Err(Error::format(
                self.path,
                0,
                format!("`{name}` has extents {:?}, network expects {dims:?}", t.dims()),
            ));
        }
        Ok(t)
    }

    fn fill(&mut self, prefix: &str, st: &mut NetState, steps: Option<&BTreeMap<String, u64>>) -> Result<BTreeMap<String, AdamState>> {
        for (name, t) in st.params.iter_mut() {
            *t = self.take(&format!("{prefix}/param/{name}"), t.dims())?;
        }
        for (name, rs) in st.running.iter_mut() {
            let c = rs.mean.len();
            *rs = RunningStats {
                mean: self.take(&format!("{prefix}/running/{name}/mean"), &[c])?.into_vec(),
                var: self.take(&format!("{prefix}/running/{name}/var"), &[c])?.into_vec(),
            };
        }
        let mut adam = BTreeMap::new();
        for (name, &t) in steps.into_iter().flatten() {
            let dims = st
                .params
                .get(name)
                .ok_or_else(|| Error::format(self.path, 0, format!("optimizer state for unknown parameter `{name}`")))?
                .dims()
                .to_vec();
            let m = self.take(&format!("{prefix}/adam/{name}/m"), &dims)?;
            let v = self.take(&format!("{prefix}/adam/{name}/v"), &dims)?;
            adam.insert(name.clone(), AdamState { m, v, t });
        }
        Ok(adam)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < PREAMBLE {
        return Err(Error::format(path, bytes.len(), "truncated preamble"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, 0, "bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let header_len = u32_at(8) as usize;
    if bytes.len() - PREAMBLE < header_len {
        return Err(Error::format(path, bytes.len(), "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + header_len])
        .map_err(|e| Error::format(path, PREAMBLE, format!("header: {e}")))?;
    if header.config.hash() != header.config_hash {
        return Err(Error::format(path, PREAMBLE, "config hash does not match the embedded config"));
    }
    let payload = &bytes[PREAMBLE + header_len..];
    let base = PREAMBLE + header_len;
    let mut expected = 0usize;
    let mut tensors = BTreeMap::new();
    for e in &header.tensors {
        if e.rank != e.extents.len() || e.offset != expected {
            return Err(Error::format(path, base + expected, format!("bad directory entry `{}`", e.name)));
        }
        let n = e
            .extents
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(path, base + expected, format!("`{}` extents overflow", e.name)))?;
        let end = expected
            .checked_add(n)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| Error::format(path, base + payload.len(), format!("truncated payload in `{}`", e.name)))?;
        let data: Vec<f32> = payload[expected..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&e.extents, data).map_err(|err| Error::format(path, base + expected, err.to_string()))?;
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(Error::format(path, base + expected, format!("duplicate tensor `{}`", e.name)));
        }
        expected = end;
    }
    if expected != payload.len() {
        return Err(Error::format(path, base + expected, "trailing bytes after the last tensor"));
    }

    let mut p = Payload { path, tensors };
    let mut rng = Prng::new(0);
    let (generator, adam_g) = match &header.generator_spec {
        Some(spec) => {
            let mut g = Generator::build(spec.clone(), &mut rng)?;
            let adam = p.fill("generator", &mut g.state, header.adam_steps.get("generator"))?;
            (Some(g), adam)
        }
        None => (None, BTreeMap::new()),
    };
    let mut d = Discriminator::build(header.discriminator_spec.clone(), &mut rng)?;
    let adam_d = p.fill("discriminator", &mut d.state, header.adam_steps.get("discriminator"))?;
    if let Some(extra) = p.tensors.keys().next() {
        return Err(Error::format(path, PREAMBLE, format!("tensor count mismatch: unexpected `{extra}`")));
    }
    Ok(Checkpoint {
        step: header.step,
        config: header.config,
        generator,
        discriminator: d,
        adam_g,
        adam_d,
        noise_rng_state: header.noise_rng_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Mode;
    use crate::train::{Trainer, TrainMode};

    fn tiny() -> Checkpoint {
        let cfg = TrainConfig {
            selection: crate::data::ChannelSelection::Red,
            ..Default::default()
        };
        let (mut t, _) = Trainer::new(cfg).unwrap();
        // Non-trivial optimizer state without a full step.
        let grads: BTreeMap<String, Tensor<f32>> = t
            .discriminator
            .state
            .params
            .iter()
            .take(3)
            .map(|(k, v)| (k.clone(), v.map(|x| x + 0.5)))
            .collect();
        t.adam_d.step(&mut t.discriminator.state.params, &grads).unwrap();
        t.step = 7;
        t.checkpoint()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let c = tiny();
        let bytes = encode_checkpoint(&c).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("t")).unwrap();
        assert_eq!(back, c);
        let g = c.generator.as_ref().unwrap();
        let z = g.sample_noise(2, &mut Prng::new(1)).unwrap();
        let a = g.generate(&z, Mode::Infer).unwrap().0;
        let b = back.generator.as_ref().unwrap().generate(&z, Mode::Infer).unwrap().0;
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn baseline_has_no_generator_section() {
        let cfg = TrainConfig {
            mode: TrainMode::SupervisedBaseline,
            ..Default::default()
        };
        let c = Trainer::new(cfg).unwrap().0.checkpoint();
        let back = decode_checkpoint(&encode_checkpoint(&c).unwrap(), Path::new("t")).unwrap();
        assert!(back.generator.is_none());
        assert_eq!(back, c);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_checkpoint(&tiny()).unwrap();
        let p = Path::new("t");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Format { offset: 4, .. })));
        for cut in [0, 5, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut], p).is_err(), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(decode_checkpoint(&long, p).is_err());
    }

    #[test]
    fn hash_mismatch_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ssgk");
        let c = tiny();
        save_checkpoint(&path, &c).unwrap();
        let (_, w) = load_checkpoint_checked(&path, &c.config).unwrap();
        assert!(w.is_none());
        let other = TrainConfig { seed: 99, ..c.config.clone() };
        let (loaded, w) = load_checkpoint_checked(&path, &other).unwrap();
        assert!(w.unwrap().contains("config hash"));
        assert_eq!(loaded, c);
    }
}
