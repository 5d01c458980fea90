//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `KAEMCKPT`, a little-endian u32 version, a u32
//! section count, then sections of (u16 name length, name, u8 kind, u64
//! payload length, payload). Kinds: 0 = UTF-8 text, 1 = f64 array, 2 = u64
//! array, all little-endian.

use std::path::Path;

use crate::config::Config;
use crate::error::{KaemError, Result};
use crate::model::Kaem;
use crate::trainer::{AdamState, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KAEMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_TEXT: u8 = 0;
const KIND_F64: u8 = 1;
const KIND_U64: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: Config,
    pub output_dim: usize,
    /// Updates completed. Random streams are keyed by (seed, update, ...),
    /// so seed and counter are the whole RNG state.
    pub update: u64,
    pub prior_params: Vec<f64>,
    pub prior_structure: Vec<f64>,
    pub gen_params: Vec<f64>,
    pub gen_structure: Vec<f64>,
    pub adam: AdamState,
}

enum Section {
    Text(String),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(KaemError::Truncated(format!(
                "checkpoint ends inside {what} (needs {n} bytes at offset {})",
                self.pos
            )));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn put_section(out: &mut Vec<u8>, name: &str, s: &Section) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    let (kind, payload): (u8, Vec<u8>) = match s {
        Section::Text(t) => (KIND_TEXT, t.as_bytes().to_vec()),
        Section::F64(v) => (KIND_F64, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
        Section::U64(v) => (KIND_U64, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
    };
    out.push(kind);
    out.extend((payload.len() as u64).to_le_bytes());
    out.extend(payload);
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: t.config.clone(),
            output_dim: t.model.generator.output_dim(),
            update: t.update,
            prior_params: t.model.prior.params(),
            prior_structure: t.model.prior.structure(),
            gen_params: t.model.generator.params(),
            gen_structure: t.model.generator.structure(),
            adam: t.adam.clone(),
        }
    }

    /// A fresh untrained model wrapped as a checkpoint.
    pub fn fresh(config: &Config, output_dim: usize) -> Result<Self> {
        let t = Trainer::new(config.clone(), Kaem::new(config, output_dim)?)?;
        Ok(Self::from_trainer(&t))
    }

    pub fn model(&self) -> Result<Kaem> {
        let mut m = Kaem::new(&self.config, self.output_dim)?;
        m.prior.set_structure(&self.prior_structure)?;
        m.generator.set_structure(&self.gen_structure)?;
        m.prior.set_params(&self.prior_params)?;
        m.generator.set_params(&self.gen_params)?;
        Ok(m)
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let model = self.model()?;
        let mut t = Trainer::new(self.config, model)?;
        if self.adam.m.len() != t.model.num_params() {
            return Err(KaemError::DimensionMismatch {
                expected: t.model.num_params(),
                got: self.adam.m.len(),
            });
        }
        t.adam = self.adam;
        t.update = self.update;
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sections = [
            ("config", Section::Text(self.config.to_text())),
            (
                "meta",
                Section::U64(vec![self.output_dim as u64, self.update, self.adam.step]),
            ),
            ("rng", Section::U64(vec![self.config.seed, self.update])),
            ("prior.params", Section::F64(self.prior_params.clone())),
            (
                "prior.structure",
                Section::F64(self.prior_structure.clone()),
            ),
            ("gen.params", Section::F64(self.gen_params.clone())),
            ("gen.structure", Section::F64(self.gen_structure.clone())),
            ("adam.m", Section::F64(self.adam.m.clone())),
            ("adam.v", Section::F64(self.adam.v.clone())),
        ];
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend(self.version.to_le_bytes());
        out.extend((sections.len() as u32).to_le_bytes());
        for (name, s) in &sections {
            put_section(&mut out, name, s);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = Reader { b, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(KaemError::Parse("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(KaemError::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let count = r.u32("section count")?;
        let mut sections = std::collections::HashMap::new();
        for _ in 0..count {
            let nlen = r.u16("section name length")? as usize;
            let name = String::from_utf8(r.take(nlen, "section name")?.to_vec())
                .map_err(|_| KaemError::Parse("section name is not UTF-8".into()))?;
            let kind = r.take(1, "section kind")?[0];
            let len = r.u64("section length")? as usize;
            let payload = r.take(len, &name)?;
            let s = match kind {
                KIND_TEXT => Section::Text(
                    String::from_utf8(payload.to_vec())
                        .map_err(|_| KaemError::Parse(format!("{name}: not UTF-8")))?,
                ),
                KIND_F64 | KIND_U64 if len % 8 != 0 => {
                    return Err(KaemError::Parse(format!(
                        "{name}: length {len} not a multiple of 8"
                    )))
                }
                KIND_F64 => Section::F64(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                KIND_U64 => Section::U64(
                    payload
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                k => {
                    return Err(KaemError::Parse(format!(
                        "{name}: unknown section kind {k}"
                    )))
                }
            };
            sections.insert(name, s);
        }
        let mut get = |name: &str| {
            sections
                .remove(name)
                .ok_or_else(|| KaemError::Parse(format!("checkpoint lacks section '{name}'")))
        };
        let text = |s: Section, n: &str| match s {
            Section::Text(t) => Ok(t),
            _ => Err(KaemError::Parse(format!("{n}: expected text"))),
        };
        let f64s = |s: Section, n: &str| match s {
            Section::F64(v) => Ok(v),
            _ => Err(KaemError::Parse(format!("{n}: expected f64 array"))),
        };
        let u64s = |s: Section, n: &str| match s {
            Section::U64(v) => Ok(v),
            _ => Err(KaemError::Parse(format!("{n}: expected u64 array"))),
        };
        let config = Config::parse(&text(get("config")?, "config")?)?;
        let meta = u64s(get("meta")?, "meta")?;
        if meta.len() != 3 {
            return Err(KaemError::Parse("meta: expected 3 values".into()));
        }
        let m = f64s(get("adam.m")?, "adam.m")?;
        let v = f64s(get("adam.v")?, "adam.v")?;
        Ok(Self {
            version,
            config,
            output_dim: meta[0] as usize,
            update: meta[1],
            prior_params: f64s(get("prior.params")?, "prior.params")?,
            prior_structure: f64s(get("prior.structure")?, "prior.structure")?,
            gen_params: f64s(get("gen.params")?, "gen.params")?,
            gen_structure: f64s(get("gen.structure")?, "gen.structure")?,
            adam: AdamState {
                m,
                v,
                step: meta[2],
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GeneratorKind;

    fn cfg() -> Config {
        Config {
            prior_q: 3,
            prior_p: 2,
            prior_grid_size: 6,
            prior_quad_nodes: 40,
            gen_grid_size: 5,
            seed: 9,
            ..Config::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [GeneratorKind::Kan, GeneratorKind::Mlp] {
            let c = Checkpoint::fresh(
                &Config {
                    gen_kind: kind,
                    ..cfg()
                },
                4,
            )
            .unwrap();
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back, c);
            let m = back.model().unwrap();
            assert_eq!(m.prior.params(), c.prior_params);
            assert_eq!(m.generator.params(), c.gen_params);
            assert_eq!(Checkpoint::from_trainer(&back.into_trainer().unwrap()), c);
        }
    }

    #[test]
    fn truncation_and_version_errors() {
        let b = Checkpoint::fresh(&cfg(), 4).unwrap().to_bytes();
        for cut in [0, 7, 12, 20, b.len() / 2, b.len() - 1] {
            assert!(Checkpoint::from_bytes(&b[..cut]).is_err(), "{cut}");
        }
        let mut v = b.clone();
        v[8..12].copy_from_slice(&7u32.to_le_bytes());
        let e = Checkpoint::from_bytes(&v).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = Checkpoint::fresh(&cfg(), 2).unwrap();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }
}
