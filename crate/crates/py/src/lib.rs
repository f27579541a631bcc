//! Python bindings: corpus generation, training, evaluation, single-frame
//! prediction and the metric suite on flat float buffers.

use fslab_core::error::Error as CoreError;
use fslab_core::harness::{self, Checkpoint, RunConfig};
use fslab_core::metrics;
use fslab_core::synth::{self, CorpusOptions};
use fslab_core::tensor::Tensor;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::collections::HashMap;
use std::path::PathBuf;

fn to_py_err(err: CoreError) -> PyErr {
    match err {
        CoreError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn map_tensor(data: Vec<f64>, h: usize, w: usize) -> PyResult<Tensor> {
    if data.len() != h * w {
        return Err(PyValueError::new_err(format!(
            "expected {} values for a {h}x{w} map, got {}",
            h * w,
            data.len()
        )));
    }
    Ok(Tensor::from_vec(&[1, h, w], data))
}

/// Generate a synthetic moving-shapes corpus. Returns the clip ids per split.
#[pyfunction]
#[pyo3(signature = (out_dir, clips=30, seed=7, frames=8, size=64, split_ratios=None, force=false))]
fn gen_corpus(
    out_dir: PathBuf,
    clips: usize,
    seed: u64,
    frames: usize,
    size: usize,
    split_ratios: Option<[f64; 4]>,
    force: bool,
) -> PyResult<HashMap<String, Vec<String>>> {
    let opts = CorpusOptions {
        n_clips: clips,
        n_frames: frames,
        height: size,
        width: size,
        split_ratios: split_ratios.unwrap_or(synth::DEFAULT_SPLIT_RATIOS),
        force,
    };
    let manifest = synth::build_corpus(seed, &out_dir, &opts).map_err(to_py_err)?;
    Ok(manifest.splits.into_iter().collect())
}

/// Run the three-stage training schedule from a JSON config file. Returns
/// the path of the final checkpoint.
#[pyfunction]
#[pyo3(signature = (config_path, resume=None))]
fn train(config_path: PathBuf, resume: Option<PathBuf>) -> PyResult<String> {
    let cfg = RunConfig::load(&config_path).map_err(to_py_err)?;
    let outcome = harness::train_resume(&cfg, resume.as_deref()).map_err(to_py_err)?;
    Ok(outcome.final_checkpoint.display().to_string())
}

/// Evaluate a checkpoint on a corpus split; returns the dataset-level
/// metrics (and writes the full report when `out_dir` is given).
#[pyfunction]
#[pyo3(signature = (checkpoint, split="val", corpus=None, out_dir=None))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    split: &str,
    corpus: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let ckpt = Checkpoint::load(&checkpoint).map_err(to_py_err)?;
    let corpus = corpus.unwrap_or_else(|| ckpt.config.corpus.clone());
    let eval = harness::evaluate(&ckpt, &corpus, split, out_dir.as_deref()).map_err(to_py_err)?;
    let d = eval.report.dataset;
    let out = PyDict::new(py);
    out.set_item("mean_j", d.mean_j)?;
    out.set_item("mean_f", d.mean_f)?;
    out.set_item("mae", d.mae)?;
    out.set_item("f_beta_max", d.f_beta_max)?;
    out.set_item("e_measure_max", d.e_measure_max)?;
    out.set_item("s_measure", d.s_measure)?;
    out.set_item("n_frames", eval.n_frames)?;
    out.set_item("runtime_s_per_frame", eval.runtime_s_per_frame)?;
    Ok(out)
}

/// Run a checkpoint on one frame/flow pair; returns the prediction map as a
/// flat row-major list plus its (height, width).
#[pyfunction]
fn predict(checkpoint: PathBuf, frame: PathBuf, flow: PathBuf) -> PyResult<(Vec<f64>, (usize, usize))> {
    let ckpt = Checkpoint::load(&checkpoint).map_err(to_py_err)?;
    let pred = harness::predict_frame(&ckpt, &frame, &flow).map_err(to_py_err)?;
    let (_, h, w) = pred.chw();
    Ok((pred.into_data(), (h, w)))
}

/// Every frame-level metric for a prediction map against a binary mask.
#[pyfunction]
#[pyo3(signature = (prediction, mask, height, width, tol_radius=None))]
fn evaluate_maps<'py>(
    py: Python<'py>,
    prediction: Vec<f64>,
    mask: Vec<f64>,
    height: usize,
    width: usize,
    tol_radius: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = map_tensor(prediction, height, width)?;
    let g = map_tensor(mask, height, width)?;
    let tol = tol_radius.unwrap_or_else(|| metrics::default_tol_radius(height, width));
    let fm = metrics::evaluate_frame("frame", 0, &s, &g, tol).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("j", fm.j)?;
    out.set_item("f", fm.f)?;
    out.set_item("mae", fm.mae)?;
    out.set_item("f_beta_max", fm.f_beta_max)?;
    out.set_item("e_measure_max", fm.e_measure_max)?;
    out.set_item("s_measure", fm.s_measure)?;
    Ok(out)
}

/// Precision/recall at each of the 256 thresholds.
#[pyfunction]
fn pr_curve(
    prediction: Vec<f64>,
    mask: Vec<f64>,
    height: usize,
    width: usize,
) -> PyResult<Vec<(f64, f64)>> {
    let s = map_tensor(prediction, height, width)?;
    let g = map_tensor(mask, height, width)?;
    metrics::pr_curve(&s, &g).map_err(to_py_err)
}

/// Colour-wheel encoding of a flow field ((u, v) planes, row-major) into a
/// flat RGB raster of shape [3, height, width].
#[pyfunction]
fn flow_to_rgb(flow: Vec<f64>, height: usize, width: usize, normalizer: f64) -> PyResult<Vec<f64>> {
    if flow.len() != 2 * height * width {
        return Err(PyValueError::new_err("flow must hold 2*height*width values"));
    }
    let t = Tensor::from_vec(&[2, height, width], flow);
    let rgb = fslab_core::encoder::flow_to_input(&t, normalizer).map_err(to_py_err)?;
    Ok(rgb.into_data())
}

#[pymodule]
fn fslab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_maps, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(flow_to_rgb, m)?)?;
    Ok(())
}
