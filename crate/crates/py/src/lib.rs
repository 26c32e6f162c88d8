//! Python bindings: scene loading, synthetic scenes, fusion and evaluation,
//! plus the pure geometry and embedding kernels.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ovmap_core::config::Config;
use ovmap_core::context_embedding::{self, EmbeddingWeights};
use ovmap_core::fusion;
use ovmap_core::gateway::MockGateway;
use ovmap_core::geometry::{self, Vec3};
use ovmap_core::io;
use ovmap_core::labeling::{self, SegMetrics};
use ovmap_core::pipeline;
use ovmap_core::synth::{generate_queries, synth_scene, SynthSceneSpec};

create_exception!(ovmap, OvmapError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    OvmapError::new_err(e.to_string())
}

fn config(path: Option<PathBuf>) -> PyResult<Config> {
    match path {
        Some(p) => Config::load(&p).map_err(err),
        None => Ok(Config::default()),
    }
}

fn points(raw: &[[f64; 3]]) -> Vec<Vec3> {
    raw.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()
}

fn metrics_dict<'py>(py: Python<'py>, m: &SegMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("miou", m.miou)?;
    d.set_item("macc", m.macc)?;
    d.set_item("fmiou", m.fmiou)?;
    d.set_item("per_class_iou", m.per_class_iou.clone())?;
    d.set_item("per_class_acc", m.per_class_acc.clone())?;
    d.set_item("unmatched_gt", m.unmatched_gt)?;
    Ok(d)
}

/// A scene loaded from its manifest.
#[pyclass(frozen)]
struct Scene {
    inner: io::Scene,
}

#[pymethods]
impl Scene {
    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        io::load_scene(&manifest).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn scene_id(&self) -> String {
        self.inner.manifest.scene_id.clone()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.frames.len()
    }

    #[getter]
    fn num_masks(&self) -> usize {
        self.inner.masks.iter().map(Vec::len).sum()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn gt_classes(&self) -> Vec<String> {
        self.inner.gt.iter().map(|g| g.class.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({:?}, frames={}, dim={})",
            self.inner.manifest.scene_id,
            self.inner.frames.len(),
            self.inner.dim
        )
    }
}

/// A fused object map.
#[pyclass(frozen)]
struct ObjectMap {
    inner: io::ObjectMap,
}

#[pymethods]
impl ObjectMap {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_object_map(&path).map(|inner| Self { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_object_map(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config_hash.clone()
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.inner.voxel_size
    }

    /// `(id, min, max, point count)` per object.
    fn boxes(&self) -> Vec<(u32, [f64; 3], [f64; 3], usize)> {
        self.inner
            .objects
            .iter()
            .map(|o| {
                let b = o.bounding_box();
                (o.id, b.min.into(), b.max.into(), o.points.len())
            })
            .collect()
    }

    fn embedding(&self, index: usize) -> PyResult<Vec<f32>> {
        self.inner
            .objects
            .get(index)
            .map(|o| o.embedding.clone())
            .ok_or_else(|| err(format!("no object at index {index}")))
    }

    fn __len__(&self) -> usize {
        self.inner.objects.len()
    }

    fn __repr__(&self) -> String {
        self.inner.summary()
    }
}

/// Renders a synthetic scene into `out` and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, seed=0, objects=5, frames=6, layout="random"))]
fn synth(out: PathBuf, seed: u64, objects: usize, frames: usize, layout: &str) -> PyResult<PathBuf> {
    let spec = match layout {
        "random" => SynthSceneSpec::random(seed, objects, frames),
        "retrieval" => SynthSceneSpec::retrieval(seed),
        other => return Err(err(format!("unknown layout {other:?}"))),
    };
    let queries: Vec<_> = generate_queries(&spec).iter().map(|q| q.record(&spec.scene_id)).collect();
    synth_scene(&spec).and_then(|s| s.write(&out, &queries)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (scene, config=None))]
fn fuse(py: Python<'_>, scene: &Scene, config: Option<PathBuf>) -> PyResult<ObjectMap> {
    let cfg = self::config(config)?;
    let (inner, _) = py.detach(|| pipeline::fuse(&scene.inner, &cfg, None)).map_err(err)?;
    Ok(ObjectMap { inner })
}

/// Segmentation metrics with the offline embedder.
#[pyfunction]
#[pyo3(signature = (map, scene, config=None))]
fn segment_eval<'py>(
    py: Python<'py>,
    map: &ObjectMap,
    scene: &Scene,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = self::config(config)?;
    let embedder = MockGateway::new(scene.inner.dim, cfg.mock_embed_seed);
    let r = py
        .detach(|| pipeline::segment_eval(&map.inner, &scene.inner, &cfg, &embedder))
        .map_err(err)?;
    let d = metrics_dict(py, &r.metrics)?;
    d.set_item("classes", r.classes)?;
    d.set_item("predicted_objects", r.predicted_objects)?;
    d.set_item("gt_instances", r.gt_instances)?;
    d.set_item("transfer", metrics_dict(py, &r.transfer)?)?;
    Ok(d)
}

#[pyfunction]
fn merge_criterion(iov_ab: f64, iov_ba: f64, gamma: f64, delta: f64) -> bool {
    fusion::merge_criterion(iov_ab, iov_ba, gamma, delta)
}

/// Containment ratios of two point sets after voxelization.
#[pyfunction]
fn voxel_iov(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>, voxel_size: f64) -> PyResult<(f64, f64)> {
    let va = geometry::voxelize(&points(&a), voxel_size).map_err(err)?;
    let vb = geometry::voxelize(&points(&b), voxel_size).map_err(err)?;
    geometry::voxel_iov(&va, &vb).map_err(err)
}

/// Mask, bbox, large, huge and surroundings crop embeddings in that order.
#[pyfunction]
#[pyo3(signature = (crops, weights=None))]
fn aggregate_embedding(crops: [Vec<f32>; 5], weights: Option<[f64; 5]>) -> PyResult<Vec<f32>> {
    let w = match weights {
        Some(w) => EmbeddingWeights::from_array(w).map_err(err)?,
        None => EmbeddingWeights::default(),
    };
    context_embedding::aggregate_embedding(&crops, &w).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred_points, pred_labels, gt_points, gt_labels, radius=0.05))]
fn compute_metrics<'py>(
    py: Python<'py>,
    pred_points: Vec<[f64; 3]>,
    pred_labels: Vec<usize>,
    gt_points: Vec<[f64; 3]>,
    gt_labels: Vec<usize>,
    radius: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if pred_points.len() != pred_labels.len() || gt_points.len() != gt_labels.len() {
        return Err(err("points and labels differ in length"));
    }
    let pred: Vec<(Vec3, usize)> = points(&pred_points).into_iter().zip(pred_labels).collect();
    let gt: Vec<(Vec3, usize)> = points(&gt_points).into_iter().zip(gt_labels).collect();
    let m = labeling::compute_metrics(&pred, &gt, radius).map_err(err)?;
    metrics_dict(py, &m)
}

#[pymodule]
pub fn ovmap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OvmapError", m.py().get_type::<OvmapError>())?;
    m.add_class::<Scene>()?;
    m.add_class::<ObjectMap>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(segment_eval, m)?)?;
    m.add_function(wrap_pyfunction!(merge_criterion, m)?)?;
    m.add_function(wrap_pyfunction!(voxel_iov, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_embedding, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    Ok(())
}
