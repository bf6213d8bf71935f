//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//! `PATN`, version u16, config block (u32 length + UTF-8 `key = value`
//! text), parameter count u32, then per parameter a name (u32 length +
//! UTF-8), rank u8, extents u32 each and the payload. An optional
//! optimizer section follows: `ADAM`, step u64, completed epochs u32 and,
//! per parameter in the same order, the first and second moments.
//!
//! Payloads are f32 or f64 as named by the `precision` key of the config
//! block, so a file holds the training state without rounding.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pointattn_core::model::ModelParams;
use pointattn_core::train::AdamState;
use pointattn_core::{Real, Tensor};

use crate::config::{Precision, RunConfig};
use crate::error::{usage, Error, Result};

pub const MAGIC: &[u8; 4] = b"PATN";
pub const VERSION: u16 = 1;
const ADAM_MAGIC: &[u8; 4] = b"ADAM";

/// Optimizer state needed to resume a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Resume {
    pub step: u64,
    pub epoch: u32,
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Weights at the stored precision, widened to f64.
    pub params: ModelParams<f64>,
    pub resume: Option<Resume>,
}

impl Checkpoint {
    pub fn new<T: Real>(config: &RunConfig, params: &ModelParams<T>, adam: Option<(&AdamState<T>, usize)>) -> Self {
        let resume = adam.map(|(a, epoch)| Resume {
            step: a.step,
            epoch: epoch as u32,
            moments: a
                .moments
                .iter()
                .map(|(k, (m, v))| (k.clone(), (cast_vec(m), cast_vec(v))))
                .collect(),
        });
        Checkpoint {
            config: config.clone(),
            params: rounded(params.cast(), config.precision),
            resume: resume.map(|mut r| {
                if config.precision == Precision::F32 {
                    for (m, v) in r.moments.values_mut() {
                        round_f32(m);
                        round_f32(v);
                    }
                }
                r
            }),
        }
    }

    /// Optimizer state at precision `T`, or `None` for weights-only files.
    pub fn adam<T: Real>(&self) -> Option<AdamState<T>> {
        let r = self.resume.as_ref()?;
        let mut state = AdamState::new(&self.params.cast::<T>());
        state.step = r.step;
        state.moments = r
            .moments
            .iter()
            .map(|(k, (m, v))| (k.clone(), (cast_vec(m), cast_vec(v))))
            .collect();
        Some(state)
    }

    pub fn encode(&self) -> Vec<u8> {
        let wide = self.config.precision == Precision::F64;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.push(t.rank() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            put_vals(&mut out, t.data(), wide);
        }
        if let Some(r) = &self.resume {
            out.extend_from_slice(ADAM_MAGIC);
            out.extend_from_slice(&r.step.to_le_bytes());
            out.extend_from_slice(&r.epoch.to_le_bytes());
            for (name, _) in self.params.iter() {
                let (m, v) = &r.moments[name];
                put_vals(&mut out, m, wide);
                put_vals(&mut out, v, wide);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(String::from("byte 0: bad magic, expected PATN"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(format!("byte 4: unsupported version {version}"));
        }
        let text = r.string()?;
        let config = RunConfig::from_text(&text).map_err(|e| format!("config block: {e}"))?;
        let wide = config.precision == Precision::F64;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        let mut order = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos;
            let name = r.string()?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let data = r.vals(len, wide)?;
            let t = Tensor::new(&shape, data).map_err(|e| format!("byte {at}: parameter {name}: {e}"))?;
            order.push(name.clone());
            tensors.insert(name, t);
        }
        let params = ModelParams::from_tensors(&config.model, tensors)
            .map_err(|e| format!("weights do not match the stored configuration: {e}"))?;
        let resume = if r.pos == bytes.len() {
            None
        } else {
            if r.take(4)? != ADAM_MAGIC {
                return Err(format!("byte {}: bad optimizer section", r.pos - 4));
            }
            let step = u64::from_le_bytes(r.array()?);
            let epoch = r.u32()?;
            let mut moments = BTreeMap::new();
            for name in order {
                let len = params.get(&name).expect("decoded").len();
                let m = r.vals(len, wide)?;
                let v = r.vals(len, wide)?;
                moments.insert(name, (m, v));
            }
            Some(Resume { step, epoch, moments })
        };
        if r.pos != bytes.len() {
            return Err(format!("byte {}: trailing data", r.pos));
        }
        Ok(Checkpoint { config, params, resume })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|msg| Error::format(path, msg))
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Rejects running with `other` when its network differs from the stored one.
    pub fn check_model(&self, other: &RunConfig) -> Result<()> {
        if self.config.model != other.model {
            return Err(usage!(
                "checkpoint network configuration differs from the requested one:\n{}",
                describe_diff(&self.config, other)
            ));
        }
        Ok(())
    }
}

/// Lines `key: stored -> requested` for every differing key.
fn describe_diff(a: &RunConfig, b: &RunConfig) -> String {
    crate::config::SCHEMA
        .iter()
        .filter_map(|k| {
            let (x, y) = (a.get(k.name)?, b.get(k.name)?);
            (x != y).then(|| format!("  {}: {} -> {}", k.name, x, y))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rounds to what an encode/decode round trip at `precision` would give.
fn rounded(mut p: ModelParams<f64>, precision: Precision) -> ModelParams<f64> {
    if precision == Precision::F32 {
        for (_, t) in p.iter_mut() {
            round_f32(t.data_mut());
        }
    }
    p
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

fn cast_vec<A: Real, B: Real>(v: &[A]) -> Vec<B> {
    v.iter().map(|&x| B::of(x.as_f64())).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_vals<T: Real>(out: &mut Vec<u8>, data: &[T], wide: bool) {
    for &v in data {
        if wide {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        } else {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format!("byte {}: truncated", self.pos));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| format!("byte {at}: invalid UTF-8"))
    }

    fn vals(&mut self, n: usize, wide: bool) -> std::result::Result<Vec<f64>, String> {
        let width = if wide { 8 } else { 4 };
        let raw = self.take(n.checked_mul(width).ok_or("length overflow")?)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| {
                if wide {
                    f64::from_le_bytes(c.try_into().expect("8 bytes"))
                } else {
                    f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
                }
            })
            .collect())
    }
}
