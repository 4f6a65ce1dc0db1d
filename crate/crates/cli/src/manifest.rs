//! Pair manifests: one JSON record per line, paths relative to the manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deformkit::TriMesh;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    /// Defaults to `pair<line>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub source: PathBuf,
    pub target: PathBuf,
    pub split: Split,
    /// Ground-truth map `source → target`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_map: Option<PathBuf>,
    /// Predicted map to evaluate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
}

/// A loaded record with resolved paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub name: String,
    pub source: PathBuf,
    pub target: PathBuf,
    pub split: Split,
    pub gt_map: Option<PathBuf>,
    pub map: Option<PathBuf>,
}

impl Pair {
    pub fn load_meshes(&self) -> Result<(TriMesh, TriMesh)> {
        let s = TriMesh::load(&self.source).with_context(|| format!("pair {}: source", self.name))?;
        let t = TriMesh::load(&self.target).with_context(|| format!("pair {}: target", self.name))?;
        Ok((s, t))
    }

    pub fn same_connectivity(&self, s: &TriMesh, t: &TriMesh) -> Result<()> {
        if s.num_vertices() != t.num_vertices() || s.faces() != t.faces() {
            bail!(
                "pair {}: source has {} vertices and {} faces, target has {} and {}; this mode needs shared connectivity",
                self.name,
                s.num_vertices(),
                s.num_faces(),
                t.num_vertices(),
                t.num_faces()
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub pairs: Vec<Pair>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let r: PairRecord =
                serde_json::from_str(line).with_context(|| format!("manifest line {}", i + 1))?;
            let name = r.name.unwrap_or_else(|| format!("pair{}", i + 1));
            let resolve = |p: PathBuf| -> Result<PathBuf> {
                let full = if p.is_absolute() { p } else { base.join(p) };
                if !full.exists() {
                    bail!("manifest line {} ({name}): {} does not exist", i + 1, full.display());
                }
                Ok(full)
            };
            pairs.push(Pair {
                source: resolve(r.source)?,
                target: resolve(r.target)?,
                gt_map: r.gt_map.map(resolve).transpose()?,
                map: r.map.map(resolve).transpose()?,
                split: r.split,
                name,
            });
        }
        if pairs.is_empty() {
            bail!("manifest has no pairs");
        }
        Ok(Self { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Pairs of one split, or all pairs when none has that split.
    pub fn split_or_all(&self, split: Split) -> Vec<&Pair> {
        let some: Vec<&Pair> = self.pairs.iter().filter(|p| p.split == split).collect();
        if some.is_empty() {
            self.pairs.iter().collect()
        } else {
            some
        }
    }
}

/// Serializes records as manifest lines.
pub fn write_manifest(records: &[PairRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}
