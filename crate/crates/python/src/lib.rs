//! Python module `padshield`: machines, traces, simulation and metrics.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use padshield::defenses::front::{
    front_reference as front_ref, gen_maybenot_front, gen_pipelined_front, FrontParams, Slicing,
};
use padshield::defenses::regulator::{
    gen_regulator_client, gen_regulator_relay, regulator_reference as regulator_ref,
    RegulatorParams,
};
use padshield::defenses::surakav::{
    burst_thresholds as thresholds, gen_surakav_machines, surakav_reference as surakav_ref,
    BurstSequence, SurakavParams,
};
use padshield::metrics;
use padshield::synth::{web_trace, WebTraceParams};
use padshield::trace::strip_trailing_padding;
use padshield::{Direction, Machine, SimConfig, Trace, TraceEvent};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A padding state machine.
#[pyclass(name = "Machine", module = "padshield", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyMachine(Arc<Machine>);

#[pymethods]
impl PyMachine {
    /// Parses the MBN1 text form.
    #[staticmethod]
    fn from_mbn(text: &str) -> PyResult<Self> {
        Machine::deserialize(text)
            .map(|m| Self(Arc::new(m)))
            .map_err(value_err)
    }

    fn to_mbn(&self) -> String {
        self.0.serialize()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.0.len()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Machine(states={}, start={})", self.0.len(), self.0.start())
    }
}

fn direction(sign: i8) -> PyResult<Direction> {
    match sign {
        1 => Ok(Direction::Outgoing),
        -1 => Ok(Direction::Incoming),
        other => Err(PyValueError::new_err(format!(
            "direction must be 1 or -1, got {other}"
        ))),
    }
}

/// Timestamped cells seen from the client.
#[pyclass(name = "Trace", module = "padshield", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrace(Trace);

#[pymethods]
impl PyTrace {
    /// `events` holds `(time_s, direction, is_padding)` with direction 1 for
    /// outgoing and -1 for incoming.
    #[new]
    #[pyo3(signature = (events, id = String::new()))]
    fn new(events: Vec<(f64, i8, bool)>, id: String) -> PyResult<Self> {
        let events = events
            .into_iter()
            .map(|(t, d, p)| Ok(TraceEvent::new(t, direction(d)?, p)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self(Trace::new(id, events)))
    }

    #[staticmethod]
    #[pyo3(signature = (text, id = String::new()))]
    fn parse(text: &str, id: String) -> PyResult<Self> {
        Trace::parse(id, text).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Trace::load(path).map(Self).map_err(value_err)
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn events(&self) -> Vec<(f64, i8, bool)> {
        self.0
            .events
            .iter()
            .map(|e| (e.time, e.direction.sign(), e.is_padding))
            .collect()
    }

    /// Cells in one direction (1 or -1), padding or not.
    fn count(&self, direction_sign: i8, padding: bool) -> PyResult<usize> {
        Ok(self.0.count(direction(direction_sign)?, padding))
    }

    fn strip_trailing_padding(&self) -> PyResult<Self> {
        strip_trailing_padding(&self.0).map(Self).map_err(value_err)
    }

    fn to_defended_string(&self) -> String {
        self.0.to_defended_string()
    }

    fn to_undefended_string(&self) -> String {
        self.0.to_undefended_string()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Trace(id={:?}, events={})", self.0.id, self.0.len())
    }
}

fn slicing(name: &str) -> PyResult<Slicing> {
    name.parse().map_err(PyValueError::new_err)
}

/// FRONT machine; pipelined when `pipelines` is 2 or more, with `psi`
/// states per pipeline.
#[pyfunction]
#[pyo3(signature = (n, w_min, w_max, psi, pipelines = None, slicing_name = "equal-time"))]
fn front_machine(
    n: u32,
    w_min: f64,
    w_max: f64,
    psi: u32,
    pipelines: Option<u32>,
    slicing_name: &str,
) -> PyResult<PyMachine> {
    let p = FrontParams {
        n,
        w_min,
        w_max,
        psi,
    };
    let s = slicing(slicing_name)?;
    let m = match pipelines {
        Some(k) => gen_pipelined_front(&p, k, psi, s),
        None => gen_maybenot_front(&p, s),
    }
    .map_err(value_err)?;
    Ok(PyMachine(Arc::new(m)))
}

/// RegulaTor `(relay, client)` machines.
#[pyfunction]
#[pyo3(signature = (r, d, t, u, omega = 20, send_states = None))]
fn regulator_machines(
    r: f64,
    d: f64,
    t: f64,
    u: f64,
    omega: u32,
    send_states: Option<u32>,
) -> PyResult<(PyMachine, PyMachine)> {
    let p = RegulatorParams {
        r,
        d,
        t,
        n: 0,
        u,
        c: f64::INFINITY,
        omega,
        send_states,
    };
    let relay = gen_regulator_relay(&p).map_err(value_err)?;
    let client = gen_regulator_client(u).map_err(value_err)?;
    Ok((PyMachine(Arc::new(relay)), PyMachine(Arc::new(client))))
}

/// Surakav `(client, relay)` machines replaying alternating burst sizes.
#[pyfunction]
#[pyo3(signature = (bursts, max_bursts = 8000, send_timeout_us = 5.0))]
fn surakav_machines(
    bursts: Vec<u32>,
    max_bursts: usize,
    send_timeout_us: f64,
) -> PyResult<(PyMachine, PyMachine)> {
    let reference = BurstSequence::new(bursts).map_err(value_err)?;
    let pair = gen_surakav_machines(&reference, max_bursts, send_timeout_us).map_err(value_err)?;
    Ok((
        PyMachine(Arc::new(pair.client)),
        PyMachine(Arc::new(pair.relay)),
    ))
}

fn arcs(ms: &[PyMachine]) -> Vec<Arc<Machine>> {
    ms.iter().map(|m| Arc::clone(&m.0)).collect()
}

/// Runs the machines over `base` and returns the defended trace.
#[pyfunction]
#[pyo3(signature = (base, client = Vec::new(), relay = Vec::new(), seed = 0, delay_us = 10_000, drop_stalled = false))]
fn simulate(
    py: Python<'_>,
    base: &PyTrace,
    client: Vec<PyMachine>,
    relay: Vec<PyMachine>,
    seed: u64,
    delay_us: u64,
    drop_stalled: bool,
) -> PyResult<PyTrace> {
    let cfg = SimConfig {
        one_way_delay_us: delay_us,
        drop_stalled,
        ..SimConfig::with_seed(seed)
    };
    let (client, relay) = (arcs(&client), arcs(&relay));
    let base = base.0.clone();
    py.detach(|| padshield::simulate(&base, &client, &relay, &cfg))
        .map(PyTrace)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (base, n, w_min, w_max, seed = 0))]
fn front_reference(base: &PyTrace, n: u32, w_min: f64, w_max: f64, seed: u64) -> PyResult<PyTrace> {
    let p = FrontParams {
        n,
        w_min,
        w_max,
        psi: 1,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    front_ref(&base.0, &p, &p, &mut rng)
        .map(PyTrace)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (base, r, d, t, n, u, c, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn regulator_reference(
    base: &PyTrace,
    r: f64,
    d: f64,
    t: f64,
    n: u32,
    u: f64,
    c: f64,
    seed: u64,
) -> PyResult<PyTrace> {
    let p = RegulatorParams {
        r,
        d,
        t,
        n,
        u,
        c,
        omega: 1,
        send_states: None,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    regulator_ref(&base.0, &p, &mut rng)
        .map(PyTrace)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (base, bursts, delta, q = None, seed = 0))]
fn surakav_reference(
    base: &PyTrace,
    bursts: Vec<u32>,
    delta: f64,
    q: Option<f64>,
    seed: u64,
) -> PyResult<PyTrace> {
    let reference = BurstSequence::new(bursts).map_err(value_err)?;
    let p = SurakavParams {
        delta,
        q,
        ..SurakavParams::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    surakav_ref(&base.0, &reference, &p, &mut rng)
        .map(PyTrace)
        .map_err(value_err)
}

/// Burst sizes of a trace, starting with an outgoing burst.
#[pyfunction]
fn trace_bursts(trace: &PyTrace) -> PyResult<Vec<u32>> {
    BurstSequence::from_trace(&trace.0)
        .map(|b| b.sizes().to_vec())
        .map_err(value_err)
}

#[pyfunction]
fn burst_thresholds(b: u32, delta: f64) -> (u32, u32) {
    thresholds(b, delta)
}

/// `(upload, download)` byte counts per window.
#[pyfunction]
fn aggregate(trace: &PyTrace, window_ms: u32) -> PyResult<(Vec<u64>, Vec<u64>)> {
    let s = metrics::aggregate(&trace.0, window_ms).map_err(value_err)?;
    Ok((s.upload, s.download))
}

#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&a, &b).map_err(value_err)
}

#[pyfunction]
fn lcss(a: Vec<i64>, b: Vec<i64>) -> PyResult<f64> {
    metrics::lcss(&a, &b).map_err(value_err)
}

/// Overhead percentages; `None` where undefined.
#[pyfunction]
fn overhead(
    defended: &PyTrace,
    base: &PyTrace,
) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let r = metrics::overhead(&defended.0, &base.0);
    (r.send_bw, r.recv_bw, r.overall_bw, r.latency)
}

/// A synthetic page load.
#[pyfunction]
#[pyo3(signature = (seed = 0, id = String::from("synthetic")))]
fn synthetic_trace(seed: u64, id: String) -> PyTrace {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    PyTrace(web_trace(&id, &WebTraceParams::default(), &mut rng))
}

#[pymodule]
#[pyo3(name = "padshield")]
fn padshield_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMachine>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(front_machine, m)?)?;
    m.add_function(wrap_pyfunction!(regulator_machines, m)?)?;
    m.add_function(wrap_pyfunction!(surakav_machines, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(front_reference, m)?)?;
    m.add_function(wrap_pyfunction!(regulator_reference, m)?)?;
    m.add_function(wrap_pyfunction!(surakav_reference, m)?)?;
    m.add_function(wrap_pyfunction!(trace_bursts, m)?)?;
    m.add_function(wrap_pyfunction!(burst_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(lcss, m)?)?;
    m.add_function(wrap_pyfunction!(overhead, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_trace, m)?)?;
    Ok(())
}
