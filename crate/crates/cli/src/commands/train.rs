//! `train`: supervised, editing (rotation-signal) and zero-shot unsupervised
//! regimes.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use deformkit::metrics::evaluate_map;
use deformkit::net::adam::Adam;
use deformkit::net::checkpoint::Checkpoint;
use deformkit::net::signal::SignalMode;
use deformkit::net::supervised::TrainSample;
use deformkit::net::train::{train_supervised, EpochRecord};
use deformkit::net::unsupervised::{
    refined_map, soft_argmax_map, train_unsupervised, ShapeData, UnsupervisedModel,
};
use deformkit::net::Ljn;
use serde::Serialize;

use super::{ensure_dir, json_lines, load_checkpoint, write_file};
use crate::config::RunConfig;
use crate::manifest::{Manifest, Pair, Split};
use crate::mapio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Supervised,
    Unsupervised,
    Editing,
}

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LOG: &str = "train_log.jsonl";

pub fn run(cfg: &RunConfig, manifest: &Manifest, mode: TrainMode, resume: Option<&Path>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    match mode {
        TrainMode::Supervised => supervised(cfg, manifest, SignalMode::Spectral, resume, out),
        TrainMode::Editing => supervised(cfg, manifest, SignalMode::Rotation, resume, out),
        TrainMode::Unsupervised => unsupervised(cfg, manifest, resume, out),
    }
}

fn supervised(cfg: &RunConfig, manifest: &Manifest, mode: SignalMode, resume: Option<&Path>, out: &Path) -> Result<()> {
    let pairs = manifest.split_or_all(Split::Train);
    let mut meshes = Vec::with_capacity(pairs.len());
    let mut mismatched = Vec::new();
    for p in &pairs {
        let (s, t) = p.load_meshes()?;
        if let Err(e) = p.same_connectivity(&s, &t) {
            mismatched.push(e.to_string());
        }
        meshes.push((s, t));
    }
    if !mismatched.is_empty() {
        bail!("{} of {} pairs do not fit this mode:\n  {}", mismatched.len(), pairs.len(), mismatched.join("\n  "));
    }
    let (mut net, mut adam, start) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let adam = ck.adam.unwrap_or_else(|| Adam::new(ck.net.mlp.params().len()));
            (ck.net, adam, ck.epoch)
        }
        None => {
            let net = Ljn::new(cfg.network.clone())?;
            let adam = Adam::new(net.mlp.params().len());
            (net, adam, 0)
        }
    };
    let mut samples = Vec::with_capacity(pairs.len());
    for (p, (s, t)) in pairs.iter().zip(&meshes) {
        let sample = TrainSample::new(p.name.clone(), s, t, mode, net.config.k_feat, &cfg.train.k_choices)
            .with_context(|| format!("pair {}", p.name))?;
        samples.push(sample);
    }
    log::info!("training on {} pairs for {} epochs", samples.len(), cfg.train.epochs);
    let ck_path = out.join(CHECKPOINT);
    let log_path = out.join(LOG);
    let mut lines = String::new();
    let log = train_supervised(&mut net, &samples, &cfg.train, &cfg.weights, &mut adam, |rec, net, adam| {
        log::info!("epoch {}: loss {:.6e}", start + rec.epoch + 1, rec.total);
        let ck = Checkpoint {
            net: net.clone(),
            weights: cfg.weights,
            epoch: start + rec.epoch + 1,
            adam: Some(adam.clone()),
            extractor: None,
        };
        ck.save(&ck_path)?;
        lines.push_str(&json_lines(std::slice::from_ref(rec)));
        std::fs::write(&log_path, &lines).map_err(|e| deformkit::Error::Io {
            path: log_path.clone(),
            source: e,
        })
    })?;
    report_loss(&log);
    Ok(())
}

fn report_loss(log: &[EpochRecord]) {
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        log::info!("loss {:.6e} -> {:.6e}", first.total, last.total);
    }
}

#[derive(Serialize)]
struct PairSummary<'a> {
    pair: &'a str,
    stage: &'a str,
    #[serde(flatten)]
    report: deformkit::metrics::MapReport,
}

/// Zero-shot optimization on each pair, each in its own directory.
fn unsupervised(cfg: &RunConfig, manifest: &Manifest, resume: Option<&Path>, out: &Path) -> Result<()> {
    for p in &manifest.pairs {
        unsupervised_pair(cfg, p, resume, &out.join(&p.name)).with_context(|| format!("pair {}", p.name))?;
    }
    Ok(())
}

fn unsupervised_pair(cfg: &RunConfig, pair: &Pair, resume: Option<&Path>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (s, t) = pair.load_meshes()?;
    let net = match resume {
        Some(path) => load_checkpoint(path)?.net,
        None => Ljn::new(cfg.network.clone())?,
    };
    let kb = ShapeData::basis_size(&net.config);
    let a = ShapeData::new(&s, kb, cfg.unsupervised.wks_energies)?;
    let b = ShapeData::new(&t, kb, cfg.unsupervised.wks_energies)?;
    let mut model = UnsupervisedModel::new(net, &cfg.unsupervised, &a, &b)?;
    let initial = soft_argmax_map(&model, &a, &b, &cfg.unsupervised)?;
    let log = train_unsupervised(&mut model, &a, &b, &cfg.unsupervised, &cfg.weights, |rec, _| {
        log::info!("iteration {}: loss {:.6e}", rec.iteration, rec.total);
        Ok(())
    })?;
    let map = refined_map(&model, &a, &b, &cfg.unsupervised, cfg.recovery)?;
    let ck = Checkpoint {
        net: model.net.clone(),
        weights: cfg.weights,
        epoch: log.len(),
        adam: None,
        extractor: Some(model.extractor.clone()),
    };
    ck.save(out.join(CHECKPOINT))?;
    write_file(&out.join(LOG), json_lines(&log))?;
    write_file(&out.join("initial_map.txt"), mapio::format_p2p(&initial))?;
    write_file(&out.join("map.txt"), mapio::format_p2p(&map))?;
    let gt = pair.gt_map.as_deref().map(mapio::read_p2p).transpose()?;
    let reports = [("initial", &initial), ("refined", &map)]
        .into_iter()
        .map(|(stage, m)| {
            Ok(PairSummary {
                pair: &pair.name,
                stage,
                report: evaluate_map(&s, &t, m, gt.as_deref())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(&out.join("report.jsonl"), json_lines(&reports))?;
    Ok(())
}
