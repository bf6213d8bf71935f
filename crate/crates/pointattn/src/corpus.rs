//! On-disk datasets: `<dir>/manifest.json` plus one `.pcb` file per cloud,
//! paths relative to the manifest. Any converter that writes this layout can
//! feed the trainer.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pointattn_core::data::{generate_pair, PartialMethod, ShapeKind};
use pointattn_core::PointCloud;

use crate::error::{usage, Error, Result};
use crate::formats::{decode_pcb, encode_pcb};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub category: String,
    pub partial_path: String,
    pub complete_path: String,
    pub seed: u64,
    /// Hex SHA-256 of the partial file; checked on load when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub categories: Vec<String>,
    pub n_partial: usize,
    pub m_complete: usize,
    pub entries: Vec<Entry>,
}

/// One loaded (partial, complete) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub category: String,
    pub seed: u64,
    pub partial: PointCloud<f32>,
    pub complete: PointCloud<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub pairs: Vec<Pair>,
}

/// What to synthesize.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub per_category: usize,
    pub seed: u64,
    pub n_partial: usize,
    pub m_complete: usize,
    pub method: PartialMethod,
    pub categories: Vec<String>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            per_category: 50,
            seed: 0,
            n_partial: 512,
            m_complete: 2048,
            method: PartialMethod::Mixed,
            categories: ShapeKind::NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Seed of pair `index` of category `cat` in a corpus seeded by `seed`.
pub fn pair_seed(seed: u64, cat: usize, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add((cat as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((index as u64).wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates pairs in memory, in manifest order. Pure in `spec`.
pub fn synthesize(spec: &CorpusSpec) -> Result<Vec<Pair>> {
    if spec.per_category == 0 || spec.categories.is_empty() {
        return Err(usage!("corpus needs at least one category and one pair per category"));
    }
    if spec.n_partial == 0 || spec.n_partial > spec.m_complete {
        return Err(usage!(
            "need 0 < n ({}) <= m ({})",
            spec.n_partial,
            spec.m_complete
        ));
    }
    let mut jobs = Vec::new();
    for (c, name) in spec.categories.iter().enumerate() {
        let Some(kind) = ShapeKind::category(name) else {
            return Err(usage!("unknown category {name:?}, expected one of {:?}", ShapeKind::NAMES));
        };
        for i in 0..spec.per_category {
            jobs.push((name.clone(), kind, i, pair_seed(spec.seed, c, i)));
        }
    }
    jobs.into_par_iter()
        .map(|(name, kind, i, seed)| {
            let p = generate_pair(kind, seed, spec.n_partial, spec.m_complete, spec.method)?;
            Ok(Pair {
                id: format!("{name}_{i:04}"),
                category: name,
                seed,
                partial: p.partial.cast(),
                complete: p.complete.cast(),
            })
        })
        .collect()
}

/// Synthesizes a corpus into `out` and returns it as a later load would.
pub fn build_corpus(spec: &CorpusSpec, out: &Path) -> Result<Corpus> {
    let pairs = synthesize(spec)?;
    for sub in ["partial", "complete"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let entries = pairs
        .par_iter()
        .map(|p| {
            let partial_path = format!("partial/{}.pcb", p.id);
            let complete_path = format!("complete/{}.pcb", p.id);
            let pb = encode_pcb(&p.partial);
            let cb = encode_pcb(&p.complete);
            write(&out.join(&partial_path), &pb)?;
            write(&out.join(&complete_path), &cb)?;
            Ok(Entry {
                id: p.id.clone(),
                category: p.category.clone(),
                partial_path,
                complete_path,
                seed: p.seed,
                partial_sha256: Some(sha256_hex(&pb)),
                complete_sha256: Some(sha256_hex(&cb)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        categories: spec.categories.clone(),
        n_partial: spec.n_partial,
        m_complete: spec.m_complete,
        entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&out.join(MANIFEST), text.as_bytes())?;
    Ok(Corpus { manifest, pairs })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_checked(dir: &Path, rel: &str, digest: Option<&str>, want: usize) -> Result<PointCloud<f32>> {
    let path: PathBuf = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if let Some(d) = digest {
        if sha256_hex(&bytes) != d {
            return Err(Error::format(&path, "checksum mismatch"));
        }
    }
    let cloud = decode_pcb(&bytes).map_err(|m| Error::format(&path, m))?;
    if cloud.len() != want {
        return Err(Error::format(&path, format!("{} points, manifest says {}", cloud.len(), want)));
    }
    Ok(cloud)
}

/// Reads and validates every file referenced by `<dir>/manifest.json`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(&mpath, format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.entries.is_empty() {
        return Err(Error::format(&mpath, "no entries"));
    }
    let pairs = manifest
        .entries
        .par_iter()
        .map(|e| {
            if !manifest.categories.contains(&e.category) {
                return Err(Error::format(&mpath, format!("entry {}: unknown category {}", e.id, e.category)));
            }
            Ok(Pair {
                id: e.id.clone(),
                category: e.category.clone(),
                seed: e.seed,
                partial: read_checked(dir, &e.partial_path, e.partial_sha256.as_deref(), manifest.n_partial)?,
                complete: read_checked(dir, &e.complete_path, e.complete_sha256.as_deref(), manifest.m_complete)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { manifest, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            per_category: 2,
            n_partial: 32,
            m_complete: 64,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn build_then_load_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let built = build_corpus(&small(), dir.path()).unwrap();
        assert_eq!(built.pairs.len(), 12);
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, built);
    }

    #[test]
    fn synthesis_is_pure() {
        assert_eq!(synthesize(&small()).unwrap(), synthesize(&small()).unwrap());
        let mut other = small();
        other.seed = 1;
        assert_ne!(synthesize(&other).unwrap(), synthesize(&small()).unwrap());
    }

    #[test]
    fn missing_and_corrupt_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let built = build_corpus(&small(), dir.path()).unwrap();
        let victim = &built.manifest.entries[3];
        let path = dir.path().join(&victim.complete_path);
        let mut bytes = fs::read(&path).unwrap();
        bytes[20] ^= 1;
        fs::write(&path, &bytes).unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains(&victim.complete_path) && err.contains("checksum"), "{err}");
        fs::remove_file(&path).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains(&victim.complete_path));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small();
        s.categories = vec!["teapot".into()];
        assert!(synthesize(&s).is_err());
        let mut s = small();
        s.n_partial = 65;
        assert!(synthesize(&s).is_err());
    }
}
