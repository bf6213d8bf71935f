//! Run configuration: `key = value` lines with `#` comments, validated
//! against a fixed schema. Later sources win: built-in defaults, then the
//! file, then `--set` overrides. `preset` is applied before any other key.

use std::fmt::Write as _;
use std::path::Path;

use pointattn_core::model::ModelConfig;
use pointattn_core::train::TrainConfig;
use pointattn_core::ChamferVariant;

use crate::error::{usage, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// One documented configuration key.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: &'static str,
    pub doc: &'static str,
}

const fn key(name: &'static str, kind: &'static str, doc: &'static str) -> Key {
    Key { name, kind, doc }
}

pub const SCHEMA: &[Key] = &[
    key("preset", "desk|toy|completion3d|pcn", "model preset applied before every other key"),
    key("n_points", "int", "points in each partial input"),
    key("embed_width", "int", "per-point embedding width"),
    key("gdp_ratios", "int,int,int", "down-sampling ratio of the three encoder stages"),
    key("code_width", "int", "width of the global shape code"),
    key("seed_coarse", "int", "coarse points decoded from the shape code"),
    key("seed_width", "int", "feature width of the coarse points"),
    key("seed_count", "int", "seed points kept after merging with the input"),
    key("gen_width", "int", "per-point feature width in the point generators"),
    key("gen1_ratios", "int,int,int", "self-attention up-sampling ratios of the first generator"),
    key("gen2_ratios", "int,int,int", "self-attention up-sampling ratios of the second generator"),
    key("split_base", "int", "split factor applied on top of the generator ratios"),
    key("heads", "int", "attention heads"),
    key("disable_gdp", "bool", "replace encoder cross-attention by plain FPS down-sampling"),
    key("disable_encoder_sfa", "bool", "drop the encoder self-attention stages"),
    key("fps_seed", "none|int", "none starts every FPS at row 0, an int randomizes the start row"),
    key("epochs", "int", "training epochs"),
    key("batch_size", "int", "samples per optimizer step; short last batches are padded cyclically"),
    key("lr", "real", "initial learning rate"),
    key("lr_decay", "real", "learning-rate factor applied every lr_decay_every epochs"),
    key("lr_decay_every", "int", "epochs between learning-rate decays"),
    key("loss_weights", "real,real,real", "weights of the three Chamfer terms, coarse to fine"),
    key("variant", "l1|l2", "Chamfer distance used by the training loss"),
    key("seed", "int", "seed for initialization and batch order"),
    key("checkpoint_every", "int", "epochs between checkpoints (one is always written at the end)"),
    key("val_every", "int", "every k-th pair is held out for validation; 0 validates on the training pairs"),
    key("precision", "f32|f64", "floating-point width used for training"),
];

/// Schema documentation appended to `--help`.
pub fn schema_help() -> String {
    let defaults = RunConfig::default();
    let mut out = String::from("Configuration keys (`key = value` in --config files or --set key=value):\n");
    for k in SCHEMA {
        let _ = writeln!(
            out,
            "  {:<20} {:<26} {} [default: {}]",
            k.name,
            k.kind,
            k.doc,
            defaults.get(k.name).expect("schema key")
        );
    }
    out
}

/// Merged model, training and data-split settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub val_every: usize,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: String::from("desk"),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            val_every: 10,
            precision: Precision::F32,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| usage!("{key}: invalid value {v:?}"))
}

fn parse_triple<T: std::str::FromStr + Copy + Default>(key: &str, v: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(usage!("{key}: expected three comma-separated values, got {v:?}"));
    }
    let mut out = [T::default(); 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_num(key, p)?;
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(usage!("{key}: expected true or false, got {v:?}")),
    }
}

fn triple<T: std::fmt::Display>(t: &[T; 3]) -> String {
    format!("{},{},{}", t[0], t[1], t[2])
}

impl RunConfig {
    /// Current value of `key` in its file syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        Some(match key {
            "preset" => self.preset.clone(),
            "n_points" => m.n_points.to_string(),
            "embed_width" => m.embed_width.to_string(),
            "gdp_ratios" => triple(&m.gdp_ratios),
            "code_width" => m.code_width.to_string(),
            "seed_coarse" => m.seed_coarse.to_string(),
            "seed_width" => m.seed_width.to_string(),
            "seed_count" => m.seed_count.to_string(),
            "gen_width" => m.gen_width.to_string(),
            "gen1_ratios" => triple(&m.gen_ratios[0]),
            "gen2_ratios" => triple(&m.gen_ratios[1]),
            "split_base" => m.split_base.to_string(),
            "heads" => m.heads.to_string(),
            "disable_gdp" => m.disable_gdp.to_string(),
            "disable_encoder_sfa" => m.disable_encoder_sfa.to_string(),
            "fps_seed" => m.fps_seed.map_or_else(|| String::from("none"), |s| s.to_string()),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "lr_decay" => t.lr_decay.to_string(),
            "lr_decay_every" => t.lr_decay_every.to_string(),
            "loss_weights" => triple(&t.loss_weights),
            "variant" => String::from(t.variant.name()),
            "seed" => t.seed.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "val_every" => self.val_every.to_string(),
            "precision" => String::from(match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }),
            _ => return None,
        })
    }

    /// Sets one key from its file syntax. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "preset" => {
                let Some(model) = ModelConfig::preset(v) else {
                    return Err(usage!("preset: unknown preset {v:?}"));
                };
                self.preset = v.to_string();
                *m = model;
            }
            "n_points" => m.n_points = parse_num(key, v)?,
            "embed_width" => m.embed_width = parse_num(key, v)?,
            "gdp_ratios" => m.gdp_ratios = parse_triple(key, v)?,
            "code_width" => m.code_width = parse_num(key, v)?,
            "seed_coarse" => m.seed_coarse = parse_num(key, v)?,
            "seed_width" => m.seed_width = parse_num(key, v)?,
            "seed_count" => m.seed_count = parse_num(key, v)?,
            "gen_width" => m.gen_width = parse_num(key, v)?,
            "gen1_ratios" => m.gen_ratios[0] = parse_triple(key, v)?,
            "gen2_ratios" => m.gen_ratios[1] = parse_triple(key, v)?,
            "split_base" => m.split_base = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "disable_gdp" => m.disable_gdp = parse_bool(key, v)?,
            "disable_encoder_sfa" => m.disable_encoder_sfa = parse_bool(key, v)?,
            "fps_seed" => m.fps_seed = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "epochs" => t.epochs = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "lr_decay" => t.lr_decay = parse_num(key, v)?,
            "lr_decay_every" => t.lr_decay_every = parse_num(key, v)?,
            "loss_weights" => t.loss_weights = parse_triple(key, v)?,
            "variant" => {
                t.variant = ChamferVariant::parse(v).ok_or_else(|| usage!("variant: expected l1 or l2, got {v:?}"))?
            }
            "seed" => t.seed = parse_num(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, v)?,
            "val_every" => self.val_every = parse_num(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(usage!("precision: expected f32 or f64, got {v:?}")),
                }
            }
            _ => return Err(usage!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Applies `(key, value)` pairs in order, the last `preset` first.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some((_, p)) = pairs.iter().rev().find(|(k, _)| k == "preset") {
            cfg.set("preset", p)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults < `file` < `overrides` (each `key=value`).
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            pairs = parse_pairs(&text).map_err(|e| usage!("{}: {e}", path.display()))?;
        }
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                return Err(usage!("--set expects key=value, got {o:?}"));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    /// Every key in schema order, one `key = value` line each.
    pub fn to_text(&self) -> String {
        SCHEMA
            .iter()
            .map(|k| format!("{} = {}\n", k.name, self.get(k.name).expect("schema key")))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text).map_err(Error::Usage)?)
    }
}

/// Splits `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value", i + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(format!("line {}: empty key or value", i + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("lr", "0.00037").unwrap();
        cfg.set("fps_seed", "9").unwrap();
        cfg.set("precision", "f64").unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn precedence_and_preset_first() {
        let pairs = vec![
            ("heads".to_string(), "1".to_string()),
            ("preset".to_string(), "toy".to_string()),
            ("epochs".to_string(), "3".to_string()),
            ("epochs".to_string(), "5".to_string()),
        ];
        let cfg = RunConfig::from_pairs(&pairs).unwrap();
        assert_eq!(cfg.model.heads, 1);
        assert_eq!(cfg.model.n_points, ModelConfig::toy().n_points);
        assert_eq!(cfg.train.epochs, 5);
    }

    #[test]
    fn comments_and_errors() {
        let pairs = parse_pairs("# header\n\nlr = 0.1 # trailing\n").unwrap();
        assert_eq!(pairs, vec![("lr".to_string(), "0.1".to_string())]);
        assert!(parse_pairs("lr 0.1").unwrap_err().starts_with("line 1"));
        assert!(matches!(RunConfig::from_text("bogus = 1"), Err(Error::Usage(_))));
        assert!(RunConfig::from_text("heads = 3").is_err());
        assert!(RunConfig::from_text("lr = -1").is_err());
    }

    #[test]
    fn help_lists_every_key() {
        let help = schema_help();
        for k in SCHEMA {
            assert!(help.contains(k.name));
        }
    }
}
