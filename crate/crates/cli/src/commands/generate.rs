//! `generate`: a seeded synthetic dataset of posed creature pairs.

use std::path::Path;

use anyhow::{ensure, Result};
use deformkit::shapes::{self, CreatureParams, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure_dir, write_file};
use crate::manifest::{write_manifest, PairRecord, Split};
use crate::mapio;

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub pairs: usize,
    pub around: usize,
    pub along: usize,
    /// Largest joint angle of a pose, radians.
    pub max_angle: f64,
    /// Fraction of pairs held out as the test split.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            pairs: 6,
            around: 24,
            along: 30,
            max_angle: 0.6,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Each pair is one creature in two poses, sharing connectivity, with the
/// identity ground-truth map. Writes OBJ files, maps and `manifest.jsonl`.
pub fn run(opts: &GenerateOptions, out: &Path) -> Result<()> {
    ensure!(opts.pairs > 0, "pairs must be positive");
    ensure!(opts.around >= 3 && opts.along >= 2, "resolution is too small");
    ensure!((0.0..1.0).contains(&opts.test_fraction), "test fraction must be in [0, 1)");
    ensure_dir(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_test = (opts.pairs as f64 * opts.test_fraction).round() as usize;
    let mut records = Vec::with_capacity(opts.pairs);
    for i in 0..opts.pairs {
        let p = CreatureParams {
            around: opts.around,
            along: opts.along,
            detail_seed: rng.random(),
            ..Default::default()
        };
        let rest = shapes::creature(&p);
        let a = shapes::pose(&rest, p.length, &Pose::random(rng.random(), opts.max_angle));
        let b = shapes::pose(&rest, p.length, &Pose::random(rng.random(), opts.max_angle));
        let name = format!("pair{i:03}");
        let (sa, sb, sg) = (format!("{name}_a.obj"), format!("{name}_b.obj"), format!("{name}_gt.txt"));
        a.save(out.join(&sa))?;
        b.save(out.join(&sb))?;
        let gt: Vec<usize> = (0..rest.num_vertices()).collect();
        write_file(&out.join(&sg), mapio::format_p2p(&gt))?;
        records.push(PairRecord {
            name: Some(name),
            source: sa.into(),
            target: sb.into(),
            split: if i >= opts.pairs - n_test { Split::Test } else { Split::Train },
            gt_map: Some(sg.into()),
            map: None,
        });
    }
    write_file(&out.join("manifest.jsonl"), write_manifest(&records))
}
