//! Python bindings: architecture inspection, features, SpecAugment, training and inference.
//! Maps cross the boundary as lists of rows (`frames × 64` floats).

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ddcnn_core::augment::{spec_augment as augment_map, MaskValue, SpecAugmentConfig};
use ddcnn_core::datasets::{synth_clip, synth_samples, Dataset, SceneClass};
use ddcnn_core::features::{load_wav, log_mel, LogMelConfig, MelSpectrogram, MEL_BINS};
use ddcnn_core::models::{self as core_models, ModelKind};
use ddcnn_core::nn::DisoutSpec;
use ddcnn_core::rng::{stream, Stream};
use ddcnn_core::tensor::Tensor;
use ddcnn_core::train::{evaluate, train, EvalReport, TrainConfig};

fn to_py(e: impl Into<ddcnn_core::Error>) -> PyErr {
    let e = e.into();
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        3 => PyRuntimeError::new_err(e.to_string()),
        _ => PyIOError::new_err(e.to_string()),
    }
}

fn kind(name: &str) -> PyResult<ModelKind> {
    ModelKind::from_name(name).map_err(to_py)
}

fn class(name: &str) -> PyResult<SceneClass> {
    SceneClass::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown scene class {name:?}")))
}

fn rows(map: &MelSpectrogram) -> Vec<Vec<f32>> {
    map.rows().map(<[f32]>::to_vec).collect()
}

fn flatten(map: Vec<Vec<f32>>) -> PyResult<(usize, Vec<f32>)> {
    let frames = map.len();
    if map.iter().any(|r| r.len() != MEL_BINS) {
        return Err(PyValueError::new_err(format!("every row must hold {MEL_BINS} mel bins")));
    }
    Ok((frames, map.into_iter().flatten().collect()))
}

/// Rows of the architecture table: `(label, output shape with -1 batch, params)`.
#[pyfunction]
fn architecture(model: &str) -> PyResult<Vec<(String, Vec<i64>, usize)>> {
    let rows = kind(model)?.build(DisoutSpec::default()).table_rows(640, 64).map_err(to_py)?;
    Ok(rows.into_iter().map(|r| (r.label, r.shape, r.params)).collect())
}

#[pyfunction]
fn count_params(model: &str) -> PyResult<usize> {
    Ok(kind(model)?.build(DisoutSpec::default()).count_params())
}

#[pyfunction]
#[pyo3(signature = (model, height = 640, width = 64))]
fn count_macs(model: &str, height: usize, width: usize) -> PyResult<u64> {
    kind(model)?
        .build(DisoutSpec::default())
        .count_macs(height, width)
        .map_err(to_py)
}

/// 640×64 log-mel map of a 48 kHz WAV file.
#[pyfunction]
fn log_mel_file(path: &str) -> PyResult<Vec<Vec<f32>>> {
    let clip = load_wav(path).map_err(to_py)?;
    Ok(rows(&log_mel(&clip, &LogMelConfig::default()).map_err(to_py)?))
}

/// 640×64 log-mel map of one synthetic clip.
#[pyfunction]
#[pyo3(signature = (scene, index = 0, seed = 42))]
fn synthetic_log_mel(scene: &str, index: usize, seed: u64) -> PyResult<Vec<Vec<f32>>> {
    let clip = synth_clip(class(scene)?, index, seed);
    Ok(rows(&log_mel(&clip, &LogMelConfig::default()).map_err(to_py)?))
}

/// Masked copy of a 640×64 map. `mask_value=None` fills with the map mean.
#[pyfunction]
#[pyo3(signature = (map, seed, freq_mask_param = 16, num_freq_masks = 2, time_mask_param = 80, num_time_masks = 2, mask_value = None))]
fn spec_augment(
    map: Vec<Vec<f32>>,
    seed: u64,
    freq_mask_param: usize,
    num_freq_masks: usize,
    time_mask_param: usize,
    num_time_masks: usize,
    mask_value: Option<f32>,
) -> PyResult<Vec<Vec<f32>>> {
    let (frames, data) = flatten(map)?;
    let values = Tensor::from_vec([1, frames, MEL_BINS], data).map_err(to_py)?;
    let x = MelSpectrogram::from_values(values, &LogMelConfig::default());
    let cfg = SpecAugmentConfig {
        freq_mask_param,
        num_freq_masks,
        time_mask_param,
        num_time_masks,
        mask_value: mask_value.map_or(MaskValue::Mean, MaskValue::Constant),
    };
    let y = augment_map(&x, &cfg, &mut stream(seed, Stream::Augment)).map_err(to_py)?;
    Ok(rows(&y))
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("loss", r.loss)?;
    d.set_item("confusion", r.confusion.map(|row| row.to_vec()).to_vec())?;
    for c in SceneClass::ALL {
        d.set_item(format!("{c}_accuracy"), r.class_accuracy[c.index()])?;
        d.set_item(format!("{c}_loss"), r.class_loss[c.index()])?;
    }
    d.set_item("table", r.to_table())?;
    Ok(d)
}

#[pyclass(name = "Model", module = "ddcnn")]
struct PyModel {
    inner: core_models::Model<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (name = "ddcnn", seed = 42))]
    fn new(name: &str, seed: u64) -> PyResult<Self> {
        let inner = core_models::Model::init(kind(name)?.build(DisoutSpec::default()), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: core_models::load_checkpoint(path).map_err(to_py)?.model })
    }

    #[pyo3(signature = (path, step = 0, seed = 0))]
    fn save(&self, path: &str, step: u64, seed: u64) -> PyResult<()> {
        core_models::save_checkpoint(path, &self.inner, step, seed).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec.name.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Eval-mode logits, one `[3]` row per map. All maps must share a frame count.
    fn predict(&self, py: Python<'_>, maps: Vec<Vec<Vec<f32>>>) -> PyResult<Vec<Vec<f32>>> {
        if maps.is_empty() {
            return Ok(Vec::new());
        }
        let n = maps.len();
        let mut frames = None;
        let mut data = Vec::new();
        for m in maps {
            let (f, flat) = flatten(m)?;
            if *frames.get_or_insert(f) != f {
                return Err(PyValueError::new_err("maps in one batch must have equal frame counts"));
            }
            data.extend(flat);
        }
        let x = Tensor::from_vec([n, 1, frames.unwrap(), MEL_BINS], data).map_err(to_py)?;
        let logits = py.detach(|| self.inner.predict(&x)).map_err(to_py)?;
        Ok(logits.data().chunks(3).map(<[f32]>::to_vec).collect())
    }

    /// Scores the model on synthetic clips generated from `seed`.
    #[pyo3(signature = (n_per_class, seed = 42, crop_frames = 0))]
    fn evaluate_synthetic<'py>(
        &self,
        py: Python<'py>,
        n_per_class: usize,
        seed: u64,
        crop_frames: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let report = py
            .detach(|| -> ddcnn_core::Result<EvalReport> {
                let samples = synth_samples(n_per_class, seed, &LogMelConfig::default())?;
                Ok(evaluate(&self.inner, &samples, crop_frames)?)
            })
            .map_err(to_py)?;
        report_dict(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, params={})", self.inner.spec.name, self.inner.param_count())
    }
}

/// Trains on a seeded synthetic set with an 80/20 stratified split. Returns the
/// best-by-validation model and the per-epoch metrics.
#[pyfunction]
#[pyo3(signature = (n_per_class, model = "ddcnn", epochs = 30, crop_frames = 160, seed = 42))]
fn train_synthetic<'py>(
    py: Python<'py>,
    n_per_class: usize,
    model: &str,
    epochs: usize,
    crop_frames: usize,
    seed: u64,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let cfg = TrainConfig { model: kind(model)?, epochs, crop_frames, seed, ..TrainConfig::default() };
    let outcome = py
        .detach(|| -> ddcnn_core::Result<_> {
            let samples = synth_samples(n_per_class, seed, &LogMelConfig::default())?;
            let data = Dataset::stratified(samples, cfg.val_fraction, seed);
            Ok(train(&data, &cfg, |_| {})?)
        })
        .map_err(to_py)?;
    let log = outcome
        .log
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("epoch", m.epoch)?;
            d.set_item("train_loss", m.train_loss)?;
            d.set_item("train_acc", m.train_acc)?;
            d.set_item("val_loss", m.val_loss)?;
            d.set_item("val_acc", m.val_acc)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyModel { inner: outcome.best.model }, log))
}

#[pymodule]
fn ddcnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(architecture, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(count_macs, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel_file, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(spec_augment, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    m.add("SCENES", SceneClass::ALL.map(|c| c.name()).to_vec())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::ffi::c_str;

    #[test]
    fn counts_and_table() {
        assert_eq!(count_params("ddcnn").unwrap(), 127_491);
        assert_eq!(count_params("cnn5").unwrap(), 4_305_859);
        assert!(count_macs("ddcnn", 640, 64).unwrap() < count_macs("cnn5", 640, 64).unwrap());
        let rows = architecture("ddcnn").unwrap();
        assert_eq!(rows.len(), 13);
        assert_eq!(rows[10], ("Disout-11".to_string(), vec![-1, 256, 40, 4], 0));
    }

    #[test]
    fn maps_must_have_64_bins() {
        assert!(flatten(vec![vec![0.0; 64], vec![0.0; 63]]).is_err());
        assert_eq!(flatten(vec![vec![1.0; 64]; 3]).unwrap().0, 3);
        let m = synthetic_log_mel("indoor", 0, 1).unwrap();
        let same = spec_augment(m.clone(), 0, 0, 2, 0, 2, None).unwrap();
        assert_eq!(same, m);
    }

    #[test]
    fn module_imports_and_runs() {
        Python::initialize();
        Python::attach(|py| {
            let module = PyModule::new(py, "ddcnn").unwrap();
            ddcnn(&module).unwrap();
            let locals = PyDict::new(py);
            locals.set_item("ddcnn", module).unwrap();
            py.run(
                c_str!(
                    "m = ddcnn.Model('cnn3', seed=1)\n\
                     x = [[0.0] * 64 for _ in range(64)]\n\
                     out = m.predict([x, x])\n\
                     assert len(out) == 2 and len(out[0]) == 3\n\
                     assert ddcnn.SCENES == ['indoor', 'outdoor', 'transportation']\n\
                     try:\n    ddcnn.count_params('nope')\n    raise SystemExit(1)\n\
                     except ValueError:\n    pass\n"
                ),
                None,
                Some(&locals),
            )
            .unwrap();
        });
    }
}
