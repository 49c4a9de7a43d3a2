//! Python bindings: bit-plane cuboids, the context model, the codec,
//! training and inpainting.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use tcae::coder::{self, QuantizedPmf};
use tcae::codec::{self, CodecStats};
use tcae::corpus::{self, CorpusKind};
use tcae::inpaint::Region;
use tcae::tensor::Rng;
use tcae::train::{self, StopReason, TrainConfig};
use tcae::{Error, ModelConfig, Schedule};

create_exception!(tcae, TcaeError, PyException, "Raised for container, model-file and decoding failures.");

fn err(e: Error) -> PyErr {
    match e {
        Error::Shape(_) | Error::InvalidArgument(_) | Error::Distribution(_) | Error::Image(_) | Error::Corpus(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => TcaeError::new_err(e.to_string()),
    }
}

fn schedule(name: &str) -> PyResult<Schedule> {
    name.parse().map_err(err)
}

/// Integer symbols laid out `[depth, height, width]`.
#[pyclass(module = "tcae", name = "SymbolCuboid", from_py_object)]
#[derive(Clone)]
pub struct PySymbolCuboid {
    inner: tcae::SymbolCuboid,
}

#[pymethods]
impl PySymbolCuboid {
    #[new]
    fn new(width: usize, height: usize, depth: usize, alphabet: usize, symbols: Vec<u16>) -> PyResult<Self> {
        let inner = tcae::SymbolCuboid::from_symbols(width, height, depth, alphabet, symbols).map_err(err)?;
        Ok(Self { inner })
    }

    /// Bit planes of an 8-bit gray image, most significant plane first.
    #[staticmethod]
    fn from_image(width: usize, height: usize, pixels: Vec<u8>) -> PyResult<Self> {
        let img = tcae::GrayImage::new(width, height, pixels).map_err(err)?;
        Ok(Self { inner: tcae::to_bitplanes(&img) })
    }

    /// Parses a binary PGM (P5, maxval 255).
    #[staticmethod]
    fn from_pgm(data: &[u8]) -> PyResult<Self> {
        let img = tcae::pgm::decode_pgm(data).map_err(err)?;
        Ok(Self { inner: tcae::to_bitplanes(&img) })
    }

    /// Pixels of the gray image this bit-plane cuboid encodes.
    fn to_image<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let img = tcae::from_bitplanes(&self.inner).map_err(err)?;
        Ok(PyBytes::new(py, &img.pixels))
    }

    fn to_pgm<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let img = tcae::from_bitplanes(&self.inner).map_err(err)?;
        Ok(PyBytes::new(py, &tcae::pgm::encode_pgm(&img)))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn alphabet(&self) -> usize {
        self.inner.alphabet()
    }

    #[getter]
    fn symbols(&self) -> Vec<u16> {
        self.inner.symbols().to_vec()
    }

    fn __getitem__(&self, pos: (usize, usize, usize)) -> PyResult<u16> {
        let (i, j, k) = pos;
        if i >= self.inner.width() || j >= self.inner.height() || k >= self.inner.depth() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("position {pos:?} out of range")));
        }
        Ok(self.inner.get(pos))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "SymbolCuboid(width={}, height={}, depth={}, alphabet={})",
            self.inner.width(),
            self.inner.height(),
            self.inner.depth(),
            self.inner.alphabet()
        )
    }
}

#[pyclass(module = "tcae", name = "ContextModel", from_py_object)]
#[derive(Clone)]
pub struct PyContextModel {
    inner: tcae::ContextModel,
}

#[pymethods]
impl PyContextModel {
    #[new]
    #[pyo3(signature = (alphabet=2, depth=8, schedule="raster", groups=8, residual_blocks=4, seed=0))]
    fn new(alphabet: usize, depth: usize, schedule: &str, groups: usize, residual_blocks: usize, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::new(alphabet, depth, self::schedule(schedule)?)
            .with_groups(groups)
            .with_residual_blocks(residual_blocks);
        Ok(Self { inner: tcae::ContextModel::init(cfg, seed).map_err(err)? })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: tcae::ContextModel::from_bytes(data).map_err(err)? })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    /// Same weights, masks of the other schedule.
    fn with_schedule(&self, schedule: &str) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_schedule(self::schedule(schedule)?).map_err(err)? })
    }

    #[getter]
    fn schedule(&self) -> String {
        self.inner.config().schedule.to_string()
    }

    #[getter]
    fn alphabet(&self) -> usize {
        self.inner.config().alphabet
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.config().depth
    }

    #[getter]
    fn groups(&self) -> usize {
        self.inner.config().groups
    }

    #[getter]
    fn residual_blocks(&self) -> usize {
        self.inner.config().residual_blocks
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }

    /// Flat probabilities laid out `[alphabet, depth, height, width]`.
    fn forward(&self, py: Python<'_>, x: &PySymbolCuboid) -> PyResult<Vec<f64>> {
        let probs = py.detach(|| self.inner.forward(&x.inner)).map_err(err)?;
        Ok(probs.values().to_vec())
    }

    /// PMF at `(i, j, k)` given the context of `x`.
    fn pmf(&self, py: Python<'_>, x: &PySymbolCuboid, pos: (usize, usize, usize)) -> PyResult<Vec<f64>> {
        let (w, h, c) = (x.inner.width(), x.inner.height(), x.inner.depth());
        if pos.0 >= w || pos.1 >= h || pos.2 >= c {
            return Err(PyValueError::new_err(format!("position {pos:?} outside {w}x{h}x{c}")));
        }
        let probs = py.detach(|| self.inner.forward(&x.inner)).map_err(err)?;
        Ok(probs.pmf(pos))
    }

    /// Cross-entropy of `x` under the model, in bits.
    fn loss(&self, py: Python<'_>, x: &PySymbolCuboid) -> PyResult<f64> {
        py.detach(|| tcae::loss(&self.inner.forward(&x.inner)?, &x.inner)).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "ContextModel(alphabet={}, depth={}, schedule='{}', groups={}, residual_blocks={})",
            c.alphabet, c.depth, c.schedule, c.groups, c.residual_blocks
        )
    }
}

fn stats_dict<'py>(py: Python<'py>, s: &CodecStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("passes", s.passes)?;
    d.set_item("pmf_digest", s.pmf_digest)?;
    d.set_item("payload_bits", s.payload_bits)?;
    Ok(d)
}

/// Compresses `x`; returns `(container, stats)`.
#[pyfunction]
#[pyo3(signature = (x, model, schedule=None, tile=codec::DEFAULT_TILE))]
fn encode<'py>(
    py: Python<'py>,
    x: &PySymbolCuboid,
    model: &PyContextModel,
    schedule: Option<&str>,
    tile: usize,
) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyDict>)> {
    let schedule = match schedule {
        Some(s) => self::schedule(s)?,
        None => model.inner.config().schedule,
    };
    let (bytes, stats) = py.detach(|| codec::encode(&x.inner, &model.inner, schedule, tile)).map_err(err)?;
    Ok((PyBytes::new(py, &bytes), stats_dict(py, &stats)?))
}

/// Restores a container; returns `(cuboid, stats)`.
#[pyfunction]
fn decode<'py>(py: Python<'py>, data: &[u8], model: &PyContextModel) -> PyResult<(PySymbolCuboid, Bound<'py, PyDict>)> {
    let (x, stats) = py.detach(|| codec::decode(data, &model.inner)).map_err(err)?;
    Ok((PySymbolCuboid { inner: x }, stats_dict(py, &stats)?))
}

/// Integer counts summing to 2^16, every symbol at least 1.
#[pyfunction]
fn quantize(probs: Vec<f64>) -> PyResult<Vec<u32>> {
    Ok(QuantizedPmf::quantize(&probs).map_err(err)?.counts())
}

fn pmfs(counts: &[Vec<u32>]) -> PyResult<Vec<QuantizedPmf>> {
    counts.iter().map(|c| QuantizedPmf::from_counts(c).map_err(err)).collect()
}

/// Arithmetic-codes `symbols[n]` under the quantized PMF `counts[n]`.
#[pyfunction]
fn ac_encode<'py>(py: Python<'py>, symbols: Vec<usize>, counts: Vec<Vec<u32>>) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = coder::ac_encode(&symbols, &pmfs(&counts)?).map_err(err)?;
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
fn ac_decode(data: &[u8], counts: Vec<Vec<u32>>) -> PyResult<Vec<usize>> {
    let pmfs = pmfs(&counts)?;
    coder::ac_decode(data, pmfs.len(), |n, _| pmfs[n].clone()).map_err(err)
}

/// Trains `model` on `corpus`; returns `(model, history, stop_reason)`.
#[pyfunction]
#[pyo3(signature = (model, corpus, batch_size=4, max_steps=2000, eval_interval=200, patience=3, crop=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_model<'py>(
    py: Python<'py>,
    model: &PyContextModel,
    corpus: Vec<PySymbolCuboid>,
    batch_size: usize,
    max_steps: usize,
    eval_interval: usize,
    patience: usize,
    crop: Option<usize>,
    seed: u64,
) -> PyResult<(PyContextModel, Vec<Bound<'py, PyDict>>, &'static str)> {
    let cfg = TrainConfig { batch_size, max_steps, eval_interval, patience, crop, seed, ..TrainConfig::default() };
    let corpus: Vec<_> = corpus.into_iter().map(|c| c.inner).collect();
    let model = model.inner.clone();
    let out = py.detach(|| train::train(model, &corpus, &cfg)).map_err(err)?;
    let history = out
        .history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("bits_per_symbol", r.bits_per_symbol)?;
            d.set_item("lr", r.lr)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    let stop = match out.stop {
        StopReason::MaxSteps => "max_steps",
        StopReason::Plateau => "plateau",
    };
    Ok((PyContextModel { inner: out.model }, history, stop))
}

/// Mean bits per symbol of `model` over `data`.
#[pyfunction]
fn bits_per_symbol(py: Python<'_>, model: &PyContextModel, data: Vec<PySymbolCuboid>) -> PyResult<f64> {
    let data: Vec<_> = data.into_iter().map(|c| c.inner).collect();
    py.detach(|| train::bits_per_symbol(&model.inner, &data)).map_err(err)
}

/// Resamples `region = (x, y, w, h)` of a gray image from a raster model.
#[pyfunction]
#[pyo3(signature = (model, width, height, pixels, region=None, seed=0))]
fn inpaint<'py>(
    py: Python<'py>,
    model: &PyContextModel,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    region: Option<(usize, usize, usize, usize)>,
    seed: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    let img = tcae::GrayImage::new(width, height, pixels).map_err(err)?;
    let region = match region {
        Some((x, y, w, h)) => Region { x, y, w, h },
        None => Region::bottom_right_ninth(width, height),
    };
    let out = py
        .detach(|| tcae::inpaint::inpaint(&img, region, &model.inner, &mut Rng::new(seed)))
        .map_err(err)?;
    Ok(PyBytes::new(py, &out.pixels))
}

/// Synthetic square gray images as `(size, size, pixels)` triples.
#[pyfunction]
#[pyo3(signature = (kind, count, size, seed=0, flip=0.1))]
fn generate_corpus<'py>(
    py: Python<'py>,
    kind: &str,
    count: usize,
    size: usize,
    seed: u64,
    flip: f64,
) -> PyResult<Vec<(usize, usize, Bound<'py, PyBytes>)>> {
    let kind = CorpusKind::parse(kind, flip).map_err(err)?;
    let images = corpus::generate(kind, count, size, seed).map_err(err)?;
    Ok(images.iter().map(|img| (img.width, img.height, PyBytes::new(py, &img.pixels))).collect())
}

#[pymodule(name = "tcae")]
pub fn tcae_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("TcaeError", m.py().get_type::<TcaeError>())?;
    m.add("LR_LADDER", train::LR_LADDER.to_vec())?;
    m.add_class::<PySymbolCuboid>()?;
    m.add_class::<PyContextModel>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(ac_encode, m)?)?;
    m.add_function(wrap_pyfunction!(ac_decode, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(bits_per_symbol, m)?)?;
    m.add_function(wrap_pyfunction!(inpaint, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    Ok(())
}
