//! Inference over a corpus split plus metric reporting and PR-curve export.

use super::checkpoint::Checkpoint;
use super::train::prepare_clip;
use crate::data::write_mask;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{self, FrameMetrics, MetricReport};
use crate::model::Network;
use crate::nn::ParamStore;
use crate::synth;
use crate::tensor::resize_bilinear;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub struct EvalOutcome {
    pub report: MetricReport,
    pub runtime_s_per_frame: f64,
    pub n_frames: usize,
}

/// Run the checkpointed model over every usable frame of a split: the
/// selected prediction map is binarised at 0.5 for the region/contour
/// metrics and kept non-binary for the saliency metrics. Predicted maps are
/// written alongside the report when an output directory is given.
pub fn evaluate(
    ckpt: &Checkpoint,
    corpus: &Path,
    split: &str,
    out_dir: Option<&Path>,
) -> Result<EvalOutcome> {
    let cfg = &ckpt.config;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network::build(&mut store, &mut rng, &cfg.model_config())?;
    ckpt.restore(&mut store)?;

    let manifest = synth::CorpusManifest::load(&synth::manifest_path(corpus))?;
    let clip_ids = manifest.split(split)?.to_vec();
    if clip_ids.is_empty() {
        return Err(Error::config(format!("split {split} is empty")));
    }

    struct ClipEval {
        frames: Vec<FrameMetrics>,
        preds: Vec<(usize, crate::tensor::Tensor)>,
        seconds: f64,
    }

    let evals: Vec<ClipEval> = clip_ids
        .par_iter()
        .map(|id| -> Result<ClipEval> {
            let samples = crate::data::load_clip(&corpus.join(id))?;
            let prepared = prepare_clip(&samples, cfg.input_size)?;
            let mut frames = Vec::with_capacity(samples.len());
            let mut preds = Vec::with_capacity(samples.len());
            let mut seconds = 0.0;
            for (sample, prep) in samples.iter().zip(&prepared) {
                let started = Instant::now();
                let mut g = Graph::new();
                let x = g.input(prep.app.clone());
                let m = g.input(prep.motion.clone());
                let out = net.forward_full(&mut g, &store, x, m)?;
                let selected = net.select_prediction(&mut g, &out)?;
                seconds += started.elapsed().as_secs_f64();

                let (_, gh, gw) = sample.gt_mask.chw();
                let pred = resize_bilinear(g.value(selected), gh, gw);
                let tol = metrics::default_tol_radius(gh, gw);
                frames.push(metrics::evaluate_frame(
                    id,
                    sample.frame_index,
                    &pred,
                    &sample.gt_mask,
                    tol,
                )?);
                preds.push((sample.frame_index, pred));
            }
            Ok(ClipEval { frames, preds, seconds })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_frames: usize = evals.iter().map(|e| e.frames.len()).sum();
    let total_seconds: f64 = evals.iter().map(|e| e.seconds).sum();

    if let Some(dir) = out_dir {
        for (id, eval) in clip_ids.iter().zip(&evals) {
            for (t, pred) in &eval.preds {
                write_mask(pred, &dir.join("pred_prob").join(id).join(format!("{t:05}.png")), None)?;
                write_mask(
                    pred,
                    &dir.join("pred_bin").join(id).join(format!("{t:05}.png")),
                    Some(0.5),
                )?;
            }
        }
    }

    let report = metrics::aggregate(evals.into_iter().flat_map(|e| e.frames).collect())?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report).map_err(|e| Error::config(e.to_string()))?,
        )?;
        write_pr_csv(&report, &dir.join("pr_curve.csv"))?;
    }

    Ok(EvalOutcome {
        report,
        runtime_s_per_frame: total_seconds / n_frames.max(1) as f64,
        n_frames,
    })
}

fn write_pr_csv(report: &MetricReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "threshold,precision,recall")?;
    for (t, &(p, r)) in report.pr_curve.iter().enumerate() {
        writeln!(f, "{t},{p},{r}")?;
    }
    Ok(())
}

/// Run the checkpointed model on a single frame/flow pair from disk and
/// return the selected prediction map at the frame's native resolution.
pub fn predict_frame(ckpt: &Checkpoint, frame: &Path, flow: &Path) -> Result<crate::Tensor> {
    let cfg = &ckpt.config;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network::build(&mut store, &mut rng, &cfg.model_config())?;
    ckpt.restore(&mut store)?;

    let appearance = crate::data::read_frame(frame)?;
    let (_, h, w) = appearance.chw();
    let sample = crate::data::ClipSample {
        clip_id: String::new(),
        frame_index: 0,
        appearance,
        flow: crate::data::read_flow(flow)?,
        gt_mask: crate::tensor::Tensor::zeros(&[1, h, w]),
    };
    let prepared = prepare_clip(std::slice::from_ref(&sample), cfg.input_size)?;
    let mut g = Graph::new();
    let x = g.input(prepared[0].app.clone());
    let m = g.input(prepared[0].motion.clone());
    let out = net.forward_full(&mut g, &store, x, m)?;
    let selected = net.select_prediction(&mut g, &out)?;
    Ok(resize_bilinear(g.value(selected), h, w))
}

/// Export one labelled PR series per report into a single CSV.
pub fn export_pr(series: &[(String, &MetricReport)], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "variant,threshold,precision,recall")?;
    for (name, report) in series {
        for (t, &(p, r)) in report.pr_curve.iter().enumerate() {
            writeln!(f, "{name},{t},{p},{r}")?;
        }
    }
    Ok(())
}
