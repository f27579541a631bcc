//! The three-stage training schedule: spatial pretraining of the appearance
//! path, temporal pretraining of the motion path, then end-to-end training
//! of the full network.
//!
//! Determinism contract: with a fixed seed, parameter initialisation, data
//! order and scale draws are all derived from (seed, stage, epoch), so a run
//! is bit-reproducible and a resumed run continues the exact trajectory.

use super::checkpoint::{Checkpoint, Stage};
use super::config::RunConfig;
use crate::data::ClipSample;
use crate::decoder::{bce_loss, total_loss};
use crate::encoder::{clip_flow_normalizer, flow_to_input};
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamGrads};
use crate::model::Network;
use crate::nn::{ParamStore, Sgd};
use crate::synth;
use crate::tensor::{resize_bilinear, resize_nearest, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Snap a scaled size to the nearest multiple of 32 (the deepest stride), so
/// every multi-scale input stays valid for the encoders.
pub fn snap_size(base: usize, scale: f64) -> usize {
    let snapped = ((base as f64 * scale) / 32.0).round() as usize;
    snapped.max(1) * 32
}

/// One training-ready sample: the RGB frame, the colour-encoded flow and the
/// binary mask, all at a common square size.
#[derive(Clone)]
pub(super) struct PreparedSample {
    pub app: Tensor,
    pub motion: Tensor,
    pub mask: Tensor,
}

/// Rescale a clip jointly: frames bilinearly, flow bilinearly with its
/// displacement values scaled by the resize ratio, masks with nearest
/// neighbour so they stay binary. The flow normaliser is recomputed per clip
/// at the target size.
pub(super) fn prepare_clip(samples: &[ClipSample], size: usize) -> Result<Vec<PreparedSample>> {
    let scaled_flows: Vec<Tensor> = samples
        .iter()
        .map(|s| {
            let (_, h, w) = s.flow.chw();
            let mut f = resize_bilinear(&s.flow, size, size);
            let (sx, sy) = (size as f64 / w as f64, size as f64 / h as f64);
            let n = size * size;
            for v in &mut f.data_mut()[..n] {
                *v *= sx;
            }
            for v in &mut f.data_mut()[n..] {
                *v *= sy;
            }
            f
        })
        .collect();
    let norm = clip_flow_normalizer(&scaled_flows);
    samples
        .iter()
        .zip(scaled_flows)
        .map(|(s, flow)| {
            Ok(PreparedSample {
                app: resize_bilinear(&s.appearance, size, size),
                motion: flow_to_input(&flow, norm)?,
                mask: resize_nearest(&s.gt_mask, size, size),
            })
        })
        .collect()
}

/// Per-stage dataset, prepared once for every distinct snapped size.
pub(super) struct StageData {
    pub sizes: Vec<usize>,
    pub by_size: BTreeMap<usize, Vec<PreparedSample>>,
}

impl StageData {
    fn build(clips: &[Vec<ClipSample>], base: usize, scales: &[f64]) -> Result<StageData> {
        let mut sizes: Vec<usize> = scales.iter().map(|&s| snap_size(base, s)).collect();
        let mut uniq = sizes.clone();
        uniq.sort_unstable();
        uniq.dedup();
        let mut by_size = BTreeMap::new();
        for &size in &uniq {
            let mut all = Vec::new();
            for clip in clips {
                all.extend(prepare_clip(clip, size)?);
            }
            by_size.insert(size, all);
        }
        sizes.sort_unstable();
        Ok(StageData { sizes, by_size })
    }

    fn len(&self) -> usize {
        self.by_size.values().next().map_or(0, |v| v.len())
    }
}

fn stream_rng(seed: u64, stage: Stage, epoch: usize, salt: u8) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = match stage {
        Stage::SpatialPretrain => 0,
        Stage::TemporalPretrain => 1,
        Stage::Joint => 2,
    };
    key[9..17].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[17] = salt;
    ChaCha8Rng::from_seed(key)
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub stage_checkpoints: BTreeMap<String, PathBuf>,
    /// (stage tag, epoch, mean loss over the epoch's steps)
    pub epoch_losses: Vec<(String, usize, f64)>,
}

/// Train from scratch.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    train_resume(cfg, None)
}

/// Train, optionally resuming from a checkpoint whose trajectory hash
/// matches the given config.
pub fn train_resume(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut log = std::fs::File::create(cfg.out_dir.join("train_log.txt"))?;

    // datasets per stage
    let load = |split: &str| synth::load_split(&cfg.corpus, split);
    let spatial_clips = load("pretrain-spatial")?;
    let temporal_clips = load("pretrain-temporal")?;
    let joint_clips = load("train")?;

    let spatial = StageData::build(&spatial_clips, cfg.input_size, &cfg.multi_scale)?;
    let temporal = StageData::build(&temporal_clips, cfg.input_size, &cfg.multi_scale)?;
    let joint = StageData::build(&joint_clips, cfg.input_size, &cfg.multi_scale)?;

    // model
    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network::build(&mut store, &mut init_rng, &cfg.model_config())?;

    let (resume_stage, resume_epoch, resume_momentum) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config.trajectory_hash() != cfg.trajectory_hash() {
                return Err(Error::config(
                    "checkpoint was produced by a different configuration; refusing to resume",
                ));
            }
            ckpt.restore(&mut store)?;
            (ckpt.stage, ckpt.epoch, Some(ckpt.momentum))
        }
        None => (Stage::SpatialPretrain, 0, None),
    };

    let mut outcome = TrainOutcome {
        final_checkpoint: cfg.out_dir.join("checkpoint_final.bin"),
        stage_checkpoints: BTreeMap::new(),
        epoch_losses: Vec::new(),
    };

    for stage in Stage::ALL {
        let (data, total_epochs) = match stage {
            Stage::SpatialPretrain => (&spatial, cfg.epochs.spatial),
            Stage::TemporalPretrain => (&temporal, cfg.epochs.temporal),
            Stage::Joint => (&joint, cfg.epochs.joint),
        };
        let start_epoch = if stage < resume_stage {
            total_epochs // already trained, skip
        } else if stage == resume_stage {
            resume_epoch.min(total_epochs)
        } else {
            0
        };
        if total_epochs > 0 && start_epoch < total_epochs && data.len() == 0 {
            return Err(Error::config(format!(
                "stage {} has epochs configured but its split is empty",
                stage.tag()
            )));
        }

        let mut sgd = Sgd::new(cfg.optimizer, store.len());
        if stage == resume_stage {
            if let Some(m) = &resume_momentum {
                *sgd.velocity_mut() = m.clone();
            }
        }

        for epoch in start_epoch..total_epochs {
            sgd.set_epoch(epoch);
            let mean_loss =
                run_epoch(cfg, &net, &mut store, &mut sgd, data, stage, epoch, &mut log)?;
            outcome.epoch_losses.push((stage.tag().to_string(), epoch, mean_loss));
            Checkpoint::capture(cfg, &store, &sgd, stage, epoch + 1)
                .save(&cfg.out_dir.join("checkpoint_last.bin"))?;
        }

        // stages that were already complete when resuming keep their
        // original checkpoint files
        if stage >= resume_stage {
            let stage_path = cfg.out_dir.join(format!("checkpoint_{}.bin", stage.tag()));
            Checkpoint::capture(cfg, &store, &sgd, stage, total_epochs).save(&stage_path)?;
            outcome.stage_checkpoints.insert(stage.tag().to_string(), stage_path);
        }
    }

    // final checkpoint: the joint-stage result
    let joint_path = outcome.stage_checkpoints[Stage::Joint.tag()].clone();
    std::fs::copy(&joint_path, &outcome.final_checkpoint)?;

    // run report
    let report_path = cfg.out_dir.join("run_report.txt");
    let mut report = String::new();
    let model_cfg = cfg.model_config();
    let cost = crate::flops::analyze(&model_cfg, cfg.input_size);
    report.push_str(&format!(
        "parameters: {} total; forward flops at {1}x{1}: {2:.4} G\n",
        cost.total.params,
        cfg.input_size,
        cost.total.flops / 1e9
    ));
    report.push_str(&crate::flops::bpm_reference_note(&model_cfg, cfg.input_size));
    for (tag, epoch, loss) in &outcome.epoch_losses {
        report.push_str(&format!("{tag} epoch {epoch}: mean loss {loss:.6}\n"));
    }
    std::fs::write(report_path, report)?;
    Ok(outcome)
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    cfg: &RunConfig,
    net: &Network,
    store: &mut ParamStore,
    sgd: &mut Sgd,
    data: &StageData,
    stage: Stage,
    epoch: usize,
    log: &mut std::fs::File,
) -> Result<f64> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.seed, stage, epoch, 0));
    let mut scale_rng = stream_rng(cfg.seed, stage, epoch, 1);

    let mut loss_acc = 0.0;
    let mut steps = 0usize;
    for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
        // one scale per step, drawn from the configured list
        let size = data.sizes[scale_rng.random_range(0..data.sizes.len())];
        let samples = &data.by_size[&size];

        let results: Vec<Result<(f64, ParamGrads)>> = batch
            .par_iter()
            .map(|&idx| -> Result<(f64, ParamGrads)> {
                let sample = &samples[idx];
                let mut g = Graph::new();
                let loss = match stage {
                    Stage::SpatialPretrain => {
                        let x = g.input(sample.app.clone());
                        let s = net.forward_appearance(&mut g, store, x)?;
                        bce_loss(&mut g, s, &sample.mask, cfg.loss_reduction)?
                    }
                    Stage::TemporalPretrain => {
                        let m = g.input(sample.motion.clone());
                        let s = net.forward_motion(&mut g, store, m)?;
                        bce_loss(&mut g, s, &sample.mask, cfg.loss_reduction)?
                    }
                    Stage::Joint => {
                        let x = g.input(sample.app.clone());
                        let m = g.input(sample.motion.clone());
                        let preds = net.forward_full(&mut g, store, x, m)?;
                        total_loss(
                            &mut g,
                            preds.s_appearance,
                            preds.s_motion,
                            &sample.mask,
                            cfg.loss_reduction,
                        )?
                    }
                };
                let value = g.value(loss).data()[0];
                g.backward(loss)?;
                Ok((value, g.param_grads(store)))
            })
            .collect();

        let mut grads = ParamGrads::zeros(store.len());
        let mut batch_loss = 0.0;
        for r in results {
            let (value, g) = r?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at stage {} epoch {epoch} step {step}",
                    stage.tag()
                )));
            }
            batch_loss += value;
            grads.accumulate(&g);
        }
        let bs = batch.len() as f64;
        grads.scale(1.0 / bs);
        sgd.step(store, &grads);
        let mean = batch_loss / bs;
        loss_acc += mean;
        steps += 1;
        writeln!(
            log,
            "stage={} epoch={} step={} size={} loss={:.6} lr={:.6}",
            stage.tag(),
            epoch,
            step,
            size,
            mean,
            sgd.current_lr()
        )?;
    }
    Ok(if steps == 0 { 0.0 } else { loss_acc / steps as f64 })
}
