use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// What a completed stage consumed and produced, by content hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub completed_unix_s: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "run_manifest.json";

    pub fn load(out_dir: &Path) -> Result<Self> {
        let p = out_dir.join(Self::FILE_NAME);
        if !p.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).with_context(|| format!("reading {}", p.display()))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join(Self::FILE_NAME), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// Hashes of every file under `root/rel`, keyed by path relative to `root`
/// with `/` separators, in sorted order.
pub fn hash_tree(root: &Path, rel: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join(rel)];
    while let Some(dir) = stack.pop() {
        if !dir.exists() {
            continue;
        }
        for e in std::fs::read_dir(&dir)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p
                    .strip_prefix(root)
                    .expect("walk stays under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, sha256_file(&p)?);
            }
        }
    }
    Ok(out)
}

/// Recorded files that are missing or whose content changed.
pub fn stale_files(root: &Path, files: &BTreeMap<String, String>) -> Vec<String> {
    files
        .iter()
        .filter(|(rel, want)| sha256_file(&root.join(rel)).map_or(true, |got| &got != *want))
        .map(|(rel, _)| rel.clone())
        .collect()
}
