//! Fixed-step RK4 simulation of linear and dq models, trajectory metrics,
//! and the six-area test system with its leader/follower split.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::GainMatrix;
use crate::dq::{
    convert_controls, dq_derivatives, dq_outputs, BaseVariant, DqBoundary, DqControls, DqError, DqParams, DqState,
    ModelVariant,
};
use crate::linear::{
    build_linear_statespace, AcBusParams, CostWeights, DcLineParams, GridStructure, LinearGridParams, LinearModelError,
    StateSpace,
};
use crate::poset::{classify_structure, Poset, StructureClass};
use crate::topology::{BusId, Converter, GridGraph, Line, Orientation, TopologyError};

/// Any state entry above this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state diverged at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter: {0}")]
    MissingParameter(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dq(#[from] DqError),
    #[error(transparent)]
    Linear(#[from] LinearModelError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Record every k-th step (1 keeps all of them).
    #[serde(default = "one_usize")]
    pub sample_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one_usize() -> usize {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 1e-4, horizon: 10.0, sample_every: 1, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<usize, SimError> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) || self.sample_every == 0 {
            return Err(SimError::InvalidConfig("need dt > 0, horizon >= dt, sample_every >= 1".into()));
        }
        Ok((self.horizon / self.dt).round() as usize)
    }
}

/// Sampled trajectory; row `k` of each matrix belongs to `times[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: Option<DMatrix<f64>>,
    pub outputs: Option<DMatrix<f64>>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_column(&self, label: &str) -> Option<Vec<f64>> {
        let j = self.state_labels.iter().position(|l| l == label)?;
        Some(self.states.column(j).iter().copied().collect())
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.states.row(self.len() - 1).transpose()
    }
}

fn rows_to_matrix(rows: &[DVector<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c])
}

fn check_finite(x: &DVector<f64>, t: f64) -> Result<(), SimError> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT) {
        Ok(())
    } else {
        Err(SimError::NonFiniteState { t })
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<E>(
    f: &mut impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
    t: f64,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, E> {
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// RK4 step matrix of `ẋ = Mx`: `I + hM + (hM)²/2 + (hM)³/6 + (hM)⁴/24`.
/// Applying it is the same arithmetic as running the four stages.
pub fn rk4_propagator(m: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let hm = m * h;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut p = term.clone();
    for k in 1..=4 {
        term = &term * &hm / k as f64;
        p += &term;
    }
    p
}

/// Closed-loop `ẋ = (A + BK)x` (or `ẋ = Ax`) from `x0`.
pub fn simulate_linear(
    ss: &StateSpace,
    gain: Option<&GainMatrix>,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    let steps = cfg.validate()?;
    let n = ss.n_states();
    if x0.len() != n {
        return Err(SimError::DimensionMismatch(format!("x0 has {} entries, system has {n} states", x0.len())));
    }
    if let Some(g) = gain {
        if g.k.shape() != (ss.n_inputs(), n) {
            return Err(SimError::DimensionMismatch(format!(
                "K is {:?}, expected {:?}",
                g.k.shape(),
                (ss.n_inputs(), n)
            )));
        }
    }
    let m = match gain {
        Some(g) if ss.n_inputs() > 0 => &ss.a + &ss.b * &g.k,
        _ => ss.a.clone(),
    };
    let p = rk4_propagator(&m, cfg.dt);
    let mut x = x0.clone();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if k % cfg.sample_every == 0 || k == steps {
            check_finite(&x, t)?;
            times.push(t);
            rows.push(x.clone());
        }
        if k < steps {
            x = &p * &x;
        }
    }
    let states = rows_to_matrix(&rows, n);
    let inputs = gain.map(|g| states.clone() * g.k.transpose());
    Ok(Trace {
        times,
        states,
        inputs,
        outputs: None,
        state_labels: ss.state_labels.iter().map(|l| l.to_string()).collect(),
        input_labels: if gain.is_some() { ss.input_labels.clone() } else { Vec::new() },
        output_labels: Vec::new(),
    })
}

/// Switching signal implied by the controls, for output computation.
fn modulation(
    variant: ModelVariant,
    params: &DqParams,
    state: &DqState,
    controls: &DqControls,
) -> Result<(f64, f64), DqError> {
    match controls {
        DqControls::CurrentSetpoint { .. } => Ok((params.operating_modulation[0], params.operating_modulation[1])),
        c => {
            let mut full = variant;
            full.base = BaseVariant::Full;
            Ok(convert_controls(c, full, params, state)?.components())
        }
    }
}

/// One converter with prescribed controls and boundary signals. Outputs
/// per step are `(ζ, P_dc, P_ac, Q_ac)`.
pub fn simulate_dq(
    variant: ModelVariant,
    params: &DqParams,
    controls: &dyn Fn(f64, &DqState) -> DqControls,
    boundary: &dyn Fn(f64) -> DqBoundary,
    x0: DqState,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    let steps = cfg.validate()?;
    params.validate()?;
    let timescale = variant.base == BaseVariant::Timescale;
    let to_state = |x: &DVector<f64>| DqState { i_d: x[0], i_q: x[1], v_dc: x[2] };
    // with currents as inputs the current states track their setpoints
    let pin = |t: f64, s: DqState| -> DqState {
        if let (true, DqControls::CurrentSetpoint { d, q }) = (timescale, controls(t, &s)) {
            DqState { i_d: d, i_q: q, ..s }
        } else {
            s
        }
    };
    let mut rhs = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>, DqError> {
        let s = pin(t, to_state(x));
        let d = dq_derivatives(variant, params, &s, &controls(t, &s), &boundary(t))?;
        Ok(DVector::from_vec(vec![d.di_d, d.di_q, d.dv_dc]))
    };
    let mut x = DVector::from_vec(vec![x0.i_d, x0.i_q, x0.v_dc]);
    let (mut times, mut rows, mut outs, mut ins) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let s = pin(t, to_state(&x));
        x = DVector::from_vec(vec![s.i_d, s.i_q, s.v_dc]);
        if k % cfg.sample_every == 0 || k == steps {
            check_finite(&x, t)?;
            let c = controls(t, &s);
            let (md, mq) = modulation(variant, params, &s, &c)?;
            let o = dq_outputs(&s, md, mq, &boundary(t));
            times.push(t);
            rows.push(x.clone());
            let (cd, cq) = c.components();
            ins.push(DVector::from_vec(vec![cd, cq]));
            outs.push(DVector::from_vec(vec![o.zeta, o.p_dc, o.p_ac, o.q_ac]));
        }
        if k < steps {
            x = rk4_step(&mut rhs, t, &x, cfg.dt)?;
        }
    }
    Ok(Trace {
        times,
        states: rows_to_matrix(&rows, 3),
        inputs: Some(rows_to_matrix(&ins, 2)),
        outputs: Some(rows_to_matrix(&outs, 4)),
        state_labels: vec!["i_d".into(), "i_q".into(), "v_dc".into()],
        input_labels: vec!["u_d".into(), "u_q".into()],
        output_labels: vec!["zeta".into(), "p_dc".into(), "p_ac".into(), "q_ac".into()],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceMetrics {
    /// First time after which `|x| ≤ 0.1 |x(0)|` holds for good; infinite
    /// if the final sample is still outside the band.
    pub settling_time: Vec<f64>,
    pub peak: Vec<f64>,
    /// Trapezoid integral of `xᵀQx + uᵀRu`.
    pub cost: f64,
}

pub const SETTLING_BAND: f64 = 0.1;

pub fn settling_time(times: &[f64], x: &[f64]) -> f64 {
    let band = SETTLING_BAND * x[0].abs();
    match x.iter().rposition(|v| v.abs() > band) {
        None => times[0],
        Some(k) if k + 1 == x.len() => f64::INFINITY,
        Some(k) => times[k + 1],
    }
}

pub fn trace_metrics(trace: &Trace, q: Option<&DMatrix<f64>>, r: Option<&DMatrix<f64>>) -> TraceMetrics {
    let n = trace.states.ncols();
    let mut settling = Vec::with_capacity(n);
    let mut peak = Vec::with_capacity(n);
    for j in 0..n {
        let col: Vec<f64> = trace.states.column(j).iter().copied().collect();
        settling.push(settling_time(&trace.times, &col));
        peak.push(col.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let running = |k: usize| -> f64 {
        let x = trace.states.row(k).transpose();
        let mut c = match q {
            Some(q) => (x.transpose() * q * &x)[(0, 0)],
            None => x.dot(&x),
        };
        if let Some(u) = &trace.inputs {
            let u = u.row(k).transpose();
            c += match r {
                Some(r) => (u.transpose() * r * &u)[(0, 0)],
                None => u.dot(&u),
            };
        }
        c
    };
    let mut cost = 0.0;
    for k in 1..trace.len() {
        cost += 0.5 * (running(k - 1) + running(k)) * (trace.times[k] - trace.times[k - 1]);
    }
    TraceMetrics { settling_time: settling, peak, cost }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: u32,
    pub to: u32,
    pub inductance: Option<f64>,
    pub resistance: Option<f64>,
}

/// Electrical data for the six-area test system. The topology itself is
/// fixed; see [`build_test_system`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSystemSpec {
    #[serde(default)]
    pub description: String,
    #[serde(default = "ten")]
    pub inertia: f64,
    #[serde(default = "tenth")]
    pub damping: f64,
    #[serde(default = "one_f64")]
    pub nominal_dc_voltage: f64,
    /// Converter-side DC capacitance by DC bus id (11..=18).
    pub capacitance: BTreeMap<u32, f64>,
    pub mtdc_lines: Vec<LineSpec>,
    pub link_line: LineSpec,
    #[serde(default)]
    pub initial_frequencies: BTreeMap<u32, f64>,
    #[serde(default)]
    pub cost: CostWeights,
}

fn ten() -> f64 {
    10.0
}

fn tenth() -> f64 {
    0.1
}

fn one_f64() -> f64 {
    1.0
}

/// Built test system with its leader/follower designation.
#[derive(Clone, Debug)]
pub struct TestSystem {
    pub grid: GridGraph,
    pub params: LinearGridParams,
    pub ss: StateSpace,
    pub structure: GridStructure,
    /// Quotient nodes of AC1, AC6 and the link.
    pub leader: BTreeSet<usize>,
    /// Input columns of the two link converters.
    pub leader_inputs: BTreeSet<usize>,
    /// Two-element poset leader ⪯ follower and its class.
    pub coarse_poset: Poset,
    pub coarse_class: StructureClass,
    pub x0: DVector<f64>,
}

pub const MTDC_BUSES: std::ops::RangeInclusive<u32> = 11..=16;
pub const LINK_BUSES: [u32; 2] = [17, 18];
pub const LINK_CONVERTERS: [&str; 2] = ["VSC7", "VSC8"];

fn line_params(spec: &LineSpec) -> Result<DcLineParams, SimError> {
    let name = format!("{}-{}", spec.from.min(spec.to), spec.from.max(spec.to));
    let inductance = spec.inductance.ok_or_else(|| SimError::MissingParameter(format!("DC line {name} inductance")))?;
    let resistance = spec.resistance.ok_or_else(|| SimError::MissingParameter(format!("DC line {name} resistance")))?;
    Ok(DcLineParams { inductance, resistance })
}

/// Six single-inertia AC areas, a six-terminal MTDC grid (VSC1..VSC6,
/// VSCk between AC k and DC bus 10+k) and a point-to-point link between
/// AC1 and AC6 (VSC7 at DC bus 17, VSC8 at 18). The leader is AC1, the
/// link and AC6; VSC1 and VSC6 form the boundary into the MTDC grid.
pub fn build_test_system(spec: &TestSystemSpec) -> Result<TestSystem, SimError> {
    if spec.mtdc_lines.len() != 10 {
        return Err(SimError::InvalidParameter(format!("MTDC grid needs 10 lines, got {}", spec.mtdc_lines.len())));
    }
    for l in &spec.mtdc_lines {
        if !MTDC_BUSES.contains(&l.from) || !MTDC_BUSES.contains(&l.to) {
            return Err(SimError::InvalidParameter(format!("MTDC line {}-{} leaves buses 11..16", l.from, l.to)));
        }
    }
    let (l1, l2) = (spec.link_line.from.min(spec.link_line.to), spec.link_line.from.max(spec.link_line.to));
    if [l1, l2] != LINK_BUSES {
        return Err(SimError::InvalidParameter("link line must join buses 17 and 18".into()));
    }
    let b = BusId;
    let mut convs: Vec<Converter> = (1..=6u32)
        .map(|k| {
            let o = if k == 1 || k == 6 { Orientation::AcToDc } else { Orientation::DcToAc };
            Converter::new(format!("VSC{k}"), b(k), b(10 + k)).oriented(o)
        })
        .collect();
    convs.push(Converter::new("VSC7", b(1), b(17)).oriented(Orientation::AcToDc));
    convs.push(Converter::new("VSC8", b(6), b(18)).oriented(Orientation::DcToAc));
    let mut dc_lines: Vec<Line> = spec.mtdc_lines.iter().map(|l| Line::new(b(l.from), b(l.to))).collect();
    dc_lines.push(Line::new(b(17), b(18)));
    let grid = GridGraph::new((1..=6).map(b), (11..=18).map(b), vec![], dc_lines, convs)?;

    let mut params = LinearGridParams::default();
    for k in 1..=6 {
        params.ac_buses.insert(b(k), AcBusParams { inertia: spec.inertia, damping: spec.damping, injection: 0.0 });
    }
    for k in 11..=18 {
        let c =
            spec.capacitance.get(&k).ok_or_else(|| SimError::MissingParameter(format!("DC bus {k} capacitance")))?;
        params.dc_buses.insert(b(k), *c);
    }
    for l in spec.mtdc_lines.iter().chain(std::iter::once(&spec.link_line)) {
        params.dc_lines.insert(Line::new(b(l.from), b(l.to)).key(), line_params(l)?);
    }
    for c in grid.converters() {
        params.converters.insert(c.name.clone(), spec.nominal_dc_voltage);
    }
    let ss = build_linear_statespace(&grid, &params, &spec.cost)?;
    let structure = GridStructure::of(&grid)?;

    let node = |label: &str| structure.quotient.node_by_label(label).expect("fixed topology");
    let link = structure.map.ac_count + structure.map.dc_component[&b(17)];
    let leader: BTreeSet<usize> = [node("AC1"), node("AC6"), link].into();
    let leader_inputs: BTreeSet<usize> =
        LINK_CONVERTERS.iter().map(|n| ss.input_index(n).expect("link converter")).collect();
    let group_of: Vec<usize> = (0..structure.poset.len()).map(|e| usize::from(!leader.contains(&e))).collect();
    let coarse_poset =
        structure.poset.coarsen(&group_of, vec!["leader".into(), "follower".into()]).map_err(LinearModelError::from)?;
    let coarse_class = classify_structure(&coarse_poset);

    let mut x0 = DVector::zeros(ss.n_states());
    for (bus, w) in &spec.initial_frequencies {
        let i = ss
            .state_index(&format!("omega[{bus}]"))
            .ok_or_else(|| SimError::InvalidParameter(format!("no frequency state for AC bus {bus}")))?;
        x0[i] = *w;
    }
    Ok(TestSystem { grid, params, ss, structure, leader, leader_inputs, coarse_poset, coarse_class, x0 })
}
