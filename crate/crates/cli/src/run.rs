//! Run directory layout and the hash manifest.
//!
//! Each stage writes into its own subdirectory and records the files it read
//! and wrote in `run.manifest` as `stage role path sha256` lines, replacing
//! its previous entries.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::fail::{input, io, Result};

pub const MANIFEST: &str = "run.manifest";
pub const CONFIG: &str = "pipeline.conf";

/// Bundle directories from newest to oldest stage.
pub const BUNDLES: [&str; 3] = ["gnet", "compressed", "model"];

pub struct RunDir {
    pub root: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub stage: String,
    pub role: String,
    pub path: String,
    pub hash: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(MANIFEST).is_file() {
            return Err(input(format!("{} is not a run directory (no {MANIFEST})", root.display())));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&p, text).map_err(|e| io(&p, e))?;
        Ok(p)
    }

    /// Fresh empty subdirectory for a stage's output.
    pub fn clean_dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        Ok(p)
    }

    /// Newest bundle directory present.
    pub fn latest_bundle(&self) -> Result<PathBuf> {
        BUNDLES
            .iter()
            .map(|b| self.path(b))
            .find(|p| p.join("manifest").is_file())
            .ok_or_else(|| input(format!("no model bundle in {}; run `train` first", self.root.display())))
    }

    pub fn entries(&self) -> Result<Vec<Entry>> {
        let p = self.path(MANIFEST);
        if !p.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let f: Vec<&str> = l.split_whitespace().collect();
                match f.as_slice() {
                    [stage, role, path, hash] => Ok(Entry {
                        stage: stage.to_string(),
                        role: role.to_string(),
                        path: path.to_string(),
                        hash: hash.to_string(),
                    }),
                    _ => Err(input(format!("{}:{}: malformed manifest line", p.display(), i + 1))),
                }
            })
            .collect()
    }

    /// Relative path of `p` inside the run, or the path as given.
    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    /// Files under `p`, recursively, in sorted order.
    fn files(p: &Path) -> Result<Vec<PathBuf>> {
        if p.is_file() {
            return Ok(vec![p.to_path_buf()]);
        }
        let mut out = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| io(p, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| io(p, e)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            out.extend(Self::files(&e)?);
        }
        Ok(out)
    }

    /// Replaces `stage`'s manifest entries with hashes of `inputs` and
    /// `outputs` (files or directories).
    pub fn record(&self, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let mut entries: Vec<Entry> = self.entries()?.into_iter().filter(|e| e.stage != stage).collect();
        for (role, list) in [("input", inputs), ("output", outputs)] {
            for p in list {
                for f in Self::files(p)? {
                    entries.push(Entry {
                        stage: stage.to_string(),
                        role: role.to_string(),
                        path: self.relative(&f),
                        hash: sha256_file(&f)?,
                    });
                }
            }
        }
        let text: String = entries
            .iter()
            .map(|e| format!("{} {} {} {}\n", e.stage, e.role, e.path, e.hash))
            .collect();
        self.write(MANIFEST, &text)?;
        Ok(())
    }

    /// Resolves a manifest path, relative to the run or absolute.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}
