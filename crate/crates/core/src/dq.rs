//! Averaged dq-frame model of one voltage-sourced converter, its control
//! substitutions and voltage/timescale approximations, and the directed
//! coupling graph among the converter and its adjacent bus signals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::LocalLoop;

/// Smallest |v_dc| or |i| an inverse substitution may divide by.
pub const DIVISION_GUARD: f64 = 1e-6;
/// Jacobian entries at or below this magnitude count as structural zeros.
pub const COUPLING_THRESHOLD: f64 = 1e-8;
pub const COUPLING_SAMPLES: usize = 20;
/// Resampling threshold for currents in the ρ variant.
const RHO_SAMPLE_GUARD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DqError {
    #[error("guard violation: {0}")]
    GuardViolation(String),
    #[error("variant {variant} expects {expected} controls, got {got}")]
    VariantMismatch { variant: String, expected: &'static str, got: &'static str },
    #[error("division guard: {0}")]
    DivisionGuard(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Sign convention for the `ωL` cross terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossCoupling {
    /// `+ωL i_q` in the d equation and `+ωL i_d` in the q equation.
    #[default]
    Symmetric,
    /// `+ωL i_q` and `−ωL i_d`, the usual rotating-frame form.
    Antisymmetric,
}

impl CrossCoupling {
    fn q_sign(self) -> f64 {
        match self {
            CrossCoupling::Symmetric => 1.0,
            CrossCoupling::Antisymmetric => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqParams {
    pub l: f64,
    pub r: f64,
    pub c_dc: f64,
    pub omega: f64,
    #[serde(default)]
    pub cross: CrossCoupling,
    /// AC voltage held on the d axis when the AC voltage is regulated.
    #[serde(default = "unit")]
    pub held_v_d: f64,
    /// DC voltage seen by the converter when the DC voltage is regulated.
    #[serde(default = "unit")]
    pub held_v_dc: f64,
    /// Operating-point switching signal used to form ζ when the currents
    /// are inputs.
    #[serde(default = "default_modulation")]
    pub operating_modulation: [f64; 2],
}

fn unit() -> f64 {
    1.0
}

fn default_modulation() -> [f64; 2] {
    [1.0, 0.0]
}

impl Default for DqParams {
    fn default() -> Self {
        DqParams {
            l: 0.1,
            r: 0.01,
            c_dc: 0.5,
            omega: 1.0,
            cross: CrossCoupling::Symmetric,
            held_v_d: 1.0,
            held_v_dc: 1.0,
            operating_modulation: default_modulation(),
        }
    }
}

impl DqParams {
    pub fn validate(&self) -> Result<(), DqError> {
        if !(self.l > 0.0 && self.c_dc > 0.0 && self.r >= 0.0 && self.omega > 0.0) {
            return Err(DqError::InvalidParams("need L > 0, C_dc > 0, R >= 0, omega > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DqState {
    pub i_d: f64,
    pub i_q: f64,
    pub v_dc: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DqBoundary {
    pub v_d: f64,
    pub v_q: f64,
    /// Current from the converter into the DC node.
    pub i_line: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DqControls {
    M { d: f64, q: f64 },
    Beta { d: f64, q: f64 },
    Rho { d: f64, q: f64 },
    CurrentSetpoint { d: f64, q: f64 },
}

impl DqControls {
    fn kind(&self) -> &'static str {
        match self {
            DqControls::M { .. } => "m",
            DqControls::Beta { .. } => "beta",
            DqControls::Rho { .. } => "rho",
            DqControls::CurrentSetpoint { .. } => "current-setpoint",
        }
    }

    pub fn components(&self) -> (f64, f64) {
        match *self {
            DqControls::M { d, q } | DqControls::Beta { d, q } | DqControls::Rho { d, q } => (d, q),
            DqControls::CurrentSetpoint { d, q } => (d, q),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseVariant {
    Full,
    BetaSub,
    RhoSub,
    Timescale,
}

impl BaseVariant {
    fn expected_controls(self) -> &'static str {
        match self {
            BaseVariant::Full => "m",
            BaseVariant::BetaSub => "beta",
            BaseVariant::RhoSub => "rho",
            BaseVariant::Timescale => "current-setpoint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelVariant {
    pub base: BaseVariant,
    #[serde(default)]
    pub const_ac_voltage: bool,
    #[serde(default)]
    pub const_dc_voltage: bool,
}

impl ModelVariant {
    pub const fn new(base: BaseVariant) -> Self {
        ModelVariant { base, const_ac_voltage: false, const_dc_voltage: false }
    }

    pub const fn const_ac(mut self) -> Self {
        self.const_ac_voltage = true;
        self
    }

    pub const fn const_dc(mut self) -> Self {
        self.const_dc_voltage = true;
        self
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.base)?;
        if self.const_ac_voltage {
            f.write_str("+ConstAc")?;
        }
        if self.const_dc_voltage {
            f.write_str("+ConstDc")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqDerivatives {
    pub di_d: f64,
    pub di_q: f64,
    pub dv_dc: f64,
}

/// Voltages the converter equations actually see under the variant.
fn effective_inputs(
    variant: ModelVariant,
    params: &DqParams,
    state: &DqState,
    boundary: &DqBoundary,
) -> (f64, f64, f64) {
    let (v_d, v_q) = if variant.const_ac_voltage { (params.held_v_d, 0.0) } else { (boundary.v_d, boundary.v_q) };
    let v_dc = if variant.const_dc_voltage { params.held_v_dc } else { state.v_dc };
    (v_d, v_q, v_dc)
}

fn mismatch(variant: ModelVariant, controls: &DqControls) -> DqError {
    DqError::VariantMismatch {
        variant: variant.to_string(),
        expected: variant.base.expected_controls(),
        got: controls.kind(),
    }
}

/// `m → β`, inverted from the β-substituted current equations.
fn m_to_beta(params: &DqParams, i_d: f64, i_q: f64, v_dc: f64, m: (f64, f64)) -> (f64, f64) {
    let wl = params.omega * params.l;
    (0.5 * v_dc * m.0 - wl * i_q, 0.5 * v_dc * m.1 - params.cross.q_sign() * wl * i_d)
}

fn beta_to_m(params: &DqParams, i_d: f64, i_q: f64, v_dc: f64, beta: (f64, f64)) -> Result<(f64, f64), DqError> {
    if v_dc.abs() < DIVISION_GUARD {
        return Err(DqError::DivisionGuard(format!("v_dc = {v_dc:e}")));
    }
    let wl = params.omega * params.l;
    Ok((2.0 * (beta.0 + wl * i_q) / v_dc, 2.0 * (beta.1 + params.cross.q_sign() * wl * i_d) / v_dc))
}

/// ζ from currents and switching signal.
pub fn zeta(i_d: f64, i_q: f64, m_d: f64, m_q: f64) -> f64 {
    0.75 * (i_d * m_d + i_q * m_q)
}

/// ζ from the ρ substitution.
pub fn zeta_rho(rho_d: f64, rho_q: f64) -> f64 {
    0.75 * (rho_d + rho_q)
}

/// DC-side converter current under the variant.
pub fn converter_current(
    variant: ModelVariant,
    params: &DqParams,
    state: &DqState,
    controls: &DqControls,
    boundary: &DqBoundary,
) -> Result<f64, DqError> {
    let (_, _, v_dc) = effective_inputs(variant, params, state, boundary);
    match (variant.base, *controls) {
        (BaseVariant::Full, DqControls::M { d, q }) => Ok(zeta(state.i_d, state.i_q, d, q)),
        (BaseVariant::BetaSub, DqControls::Beta { d, q }) => {
            let m = beta_to_m(params, state.i_d, state.i_q, v_dc, (d, q))?;
            Ok(zeta(state.i_d, state.i_q, m.0, m.1))
        }
        (BaseVariant::RhoSub, DqControls::Rho { d, q }) => Ok(zeta_rho(d, q)),
        (BaseVariant::Timescale, DqControls::CurrentSetpoint { d, q }) => {
            let [md, mq] = params.operating_modulation;
            Ok(zeta(d, q, md, mq))
        }
        _ => Err(mismatch(variant, controls)),
    }
}

pub fn dq_derivatives(
    variant: ModelVariant,
    params: &DqParams,
    state: &DqState,
    controls: &DqControls,
    boundary: &DqBoundary,
) -> Result<DqDerivatives, DqError> {
    let (v_d, v_q, v_dc) = effective_inputs(variant, params, state, boundary);
    let (i_d, i_q) = (state.i_d, state.i_q);
    let wl = params.omega * params.l;
    let s = params.cross.q_sign();
    let (ld, lq) = match (variant.base, *controls) {
        (BaseVariant::Full, DqControls::M { d, q }) => {
            (v_d + wl * i_q - params.r * i_d - 0.5 * v_dc * d, v_q + s * wl * i_d - params.r * i_q - 0.5 * v_dc * q)
        }
        (BaseVariant::BetaSub, DqControls::Beta { d, q }) => (v_d - params.r * i_d - d, v_q - params.r * i_q - q),
        (BaseVariant::RhoSub, DqControls::Rho { d, q }) => {
            if i_d.abs() < DIVISION_GUARD || i_q.abs() < DIVISION_GUARD {
                return Err(DqError::GuardViolation(format!("rho variant needs |i_d|, |i_q| >= {DIVISION_GUARD:e}")));
            }
            (
                v_d + wl * i_q - params.r * i_d - v_dc * d / (2.0 * i_d),
                v_q + s * wl * i_d - params.r * i_q - v_dc * q / (2.0 * i_q),
            )
        }
        (BaseVariant::Timescale, DqControls::CurrentSetpoint { .. }) => (0.0, 0.0),
        _ => return Err(mismatch(variant, controls)),
    };
    let dv_dc = if variant.const_dc_voltage {
        0.0
    } else {
        (converter_current(variant, params, state, controls, boundary)? - boundary.i_line) / params.c_dc
    };
    Ok(DqDerivatives { di_d: ld / params.l, di_q: lq / params.l, dv_dc })
}

/// Re-expresses `from` in the control coordinates of `to_variant` at the
/// given state. The DC voltage entering β is the one the variant uses.
pub fn convert_controls(
    from: &DqControls,
    to_variant: ModelVariant,
    params: &DqParams,
    state: &DqState,
) -> Result<DqControls, DqError> {
    let v_dc = if to_variant.const_dc_voltage { params.held_v_dc } else { state.v_dc };
    let (i_d, i_q) = (state.i_d, state.i_q);
    let m = match *from {
        DqControls::M { d, q } => (d, q),
        DqControls::Beta { d, q } => beta_to_m(params, i_d, i_q, v_dc, (d, q))?,
        DqControls::Rho { d, q } => {
            if i_d.abs() < DIVISION_GUARD || i_q.abs() < DIVISION_GUARD {
                return Err(DqError::DivisionGuard(format!("rho inverse needs |i_d|, |i_q| >= {DIVISION_GUARD:e}")));
            }
            (d / i_d, q / i_q)
        }
        DqControls::CurrentSetpoint { .. } => {
            return Err(DqError::VariantMismatch {
                variant: to_variant.to_string(),
                expected: to_variant.base.expected_controls(),
                got: from.kind(),
            })
        }
    };
    match to_variant.base {
        BaseVariant::Full => Ok(DqControls::M { d: m.0, q: m.1 }),
        BaseVariant::BetaSub => {
            let (d, q) = m_to_beta(params, i_d, i_q, v_dc, m);
            Ok(DqControls::Beta { d, q })
        }
        BaseVariant::RhoSub => Ok(DqControls::Rho { d: i_d * m.0, q: i_q * m.1 }),
        BaseVariant::Timescale => Err(DqError::VariantMismatch {
            variant: to_variant.to_string(),
            expected: "current-setpoint",
            got: from.kind(),
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqOutputs {
    pub zeta: f64,
    pub p_dc: f64,
    pub p_ac: f64,
    pub q_ac: f64,
}

pub fn dq_outputs(state: &DqState, m_d: f64, m_q: f64, boundary: &DqBoundary) -> DqOutputs {
    let z = zeta(state.i_d, state.i_q, m_d, m_q);
    DqOutputs {
        zeta: z,
        p_dc: state.v_dc * z,
        p_ac: 0.75 * (boundary.v_d * state.i_d + boundary.v_q * state.i_q),
        q_ac: 0.75 * (-boundary.v_d * state.i_q + boundary.v_q * state.i_d),
    }
}

/// Real power into the converter's internal terminal `v_t = ½ v_dc m`.
pub fn internal_terminal_power(state: &DqState, m_d: f64, m_q: f64) -> f64 {
    let (vt_d, vt_q) = (0.5 * state.v_dc * m_d, 0.5 * state.v_dc * m_q);
    1.5 * (vt_d * state.i_d + vt_q * state.i_q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    VD,
    VQ,
    ID,
    IQ,
    VDc,
    ILine,
}

impl Signal {
    pub const ALL: [Signal; 6] = [Signal::VD, Signal::VQ, Signal::ID, Signal::IQ, Signal::VDc, Signal::ILine];

    fn index(self) -> usize {
        self as usize
    }

    pub fn is_ac_side(self) -> bool {
        matches!(self, Signal::VD | Signal::VQ)
    }

    pub fn is_dc_side(self) -> bool {
        matches!(self, Signal::VDc | Signal::ILine)
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signal::VD => "v_d",
            Signal::VQ => "v_q",
            Signal::ID => "i_d",
            Signal::IQ => "i_q",
            Signal::VDc => "v_dc",
            Signal::ILine => "i_line",
        })
    }
}

/// Directed couplings `a → b`: the evolution of `b` depends on `a`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingGraph {
    pub physical: BTreeSet<(Signal, Signal)>,
    pub loops: BTreeSet<(Signal, Signal)>,
}

impl CouplingGraph {
    pub fn edges(&self) -> BTreeSet<(Signal, Signal)> {
        self.physical.union(&self.loops).copied().collect()
    }

    pub fn reaches(&self, from: impl Fn(Signal) -> bool, to: impl Fn(Signal) -> bool) -> bool {
        let edges = self.edges();
        let mut seen: BTreeSet<Signal> = Signal::ALL.into_iter().filter(|&s| from(s)).collect();
        let mut stack: Vec<Signal> = seen.iter().copied().collect();
        while let Some(u) = stack.pop() {
            for &(a, b) in &edges {
                if a == u && seen.insert(b) {
                    stack.push(b);
                }
            }
        }
        seen.into_iter().any(|s| to(s) && !from(s))
    }
}

/// Dashed edges added by local control loops.
pub fn loop_edges(loops: &BTreeSet<LocalLoop>) -> BTreeSet<(Signal, Signal)> {
    let mut out = BTreeSet::new();
    for l in loops {
        match l {
            LocalLoop::DcVoltage => {
                out.insert((Signal::VDc, Signal::ID));
            }
            LocalLoop::PowerTransferDcSide => {
                out.insert((Signal::ILine, Signal::ID));
            }
            LocalLoop::ReactivePower => {
                out.insert((Signal::VD, Signal::IQ));
                out.insert((Signal::VQ, Signal::IQ));
            }
            LocalLoop::PowerTransferAcSide => {
                out.insert((Signal::VD, Signal::ID));
                out.insert((Signal::VQ, Signal::ID));
            }
        }
    }
    out
}

/// Right-hand side over the six signals. The adjacent grids are stood in
/// for by first-order responses: each AC voltage component follows the
/// matching converter current, and the DC line current follows the
/// capacitor voltage (or equals ζ when the DC voltage is regulated).
fn extended_rhs(
    variant: ModelVariant,
    params: &DqParams,
    controls: &DqControls,
    z: &[f64; 6],
) -> Result<[f64; 6], DqError> {
    let state = DqState { i_d: z[2], i_q: z[3], v_dc: z[4] };
    let boundary = DqBoundary { v_d: z[0], v_q: z[1], i_line: z[5] };
    let controls = match variant.base {
        BaseVariant::Timescale => DqControls::CurrentSetpoint { d: z[2], q: z[3] },
        _ => *controls,
    };
    let der = dq_derivatives(variant, params, &state, &controls, &boundary)?;
    let i_line = if variant.const_dc_voltage {
        converter_current(variant, params, &state, &controls, &boundary)?
    } else {
        z[4] - z[5]
    };
    Ok([z[2] - z[0], z[3] - z[1], der.di_d, der.di_q, der.dv_dc, i_line])
}

fn sample_point(variant: ModelVariant, rng: &mut ChaCha8Rng) -> ([f64; 6], DqControls) {
    loop {
        let mut z = [0.0; 6];
        for (k, v) in z.iter_mut().enumerate() {
            *v = if k == 4 { rng.gen_range(0.5..1.5) } else { rng.gen_range(-1.0..1.0) };
        }
        let (cd, cq) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let controls = match variant.base {
            BaseVariant::Full => DqControls::M { d: cd, q: cq },
            BaseVariant::BetaSub => DqControls::Beta { d: cd, q: cq },
            BaseVariant::RhoSub => DqControls::Rho { d: cd, q: cq },
            BaseVariant::Timescale => DqControls::CurrentSetpoint { d: z[2], q: z[3] },
        };
        if variant.base == BaseVariant::RhoSub && (z[2].abs() < RHO_SAMPLE_GUARD || z[3].abs() < RHO_SAMPLE_GUARD) {
            continue;
        }
        return (z, controls);
    }
}

/// Physical edges by central-difference Jacobian sampling, plus loop edges.
pub fn coupling_graph_with(
    variant: ModelVariant,
    loops: &BTreeSet<LocalLoop>,
    params: &DqParams,
    seed: u64,
    samples: usize,
) -> Result<CouplingGraph, DqError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut physical = BTreeSet::new();
    let h = 1e-6;
    let mut params = params.clone();
    for _ in 0..samples {
        let (z, controls) = sample_point(variant, &mut rng);
        // the operating point is part of the sample when currents are inputs
        if variant.base == BaseVariant::Timescale {
            params.operating_modulation = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        }
        let params = &params;
        for a in Signal::ALL {
            let (mut zp, mut zm) = (z, z);
            zp[a.index()] += h;
            zm[a.index()] -= h;
            let (fp, fm) =
                (extended_rhs(variant, params, &controls, &zp)?, extended_rhs(variant, params, &controls, &zm)?);
            for b in Signal::ALL {
                if a != b && ((fp[b.index()] - fm[b.index()]) / (2.0 * h)).abs() > COUPLING_THRESHOLD {
                    physical.insert((a, b));
                }
            }
        }
    }
    Ok(CouplingGraph { physical, loops: loop_edges(loops) })
}

pub fn coupling_graph(variant: ModelVariant, loops: &BTreeSet<LocalLoop>) -> Result<CouplingGraph, DqError> {
    coupling_graph_with(variant, loops, &DqParams::default(), 0, COUPLING_SAMPLES)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionType {
    NotPartitioned,
    OneWayAcToDc,
    OneWayDcToAc,
    Full,
}

impl fmt::Display for PartitionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub fn classify_coupling(g: &CouplingGraph) -> PartitionType {
    let ac_to_dc = g.reaches(Signal::is_ac_side, Signal::is_dc_side);
    let dc_to_ac = g.reaches(Signal::is_dc_side, Signal::is_ac_side);
    match (ac_to_dc, dc_to_ac) {
        (true, true) => PartitionType::NotPartitioned,
        (true, false) => PartitionType::OneWayAcToDc,
        (false, true) => PartitionType::OneWayDcToAc,
        (false, false) => PartitionType::Full,
    }
}

pub fn partition_type(variant: ModelVariant, loops: &BTreeSet<LocalLoop>) -> Result<PartitionType, DqError> {
    Ok(classify_coupling(&coupling_graph(variant, loops)?))
}

/// Every base variant with every combination of the two voltage flags.
pub fn all_variants() -> Vec<ModelVariant> {
    let mut out = Vec::new();
    for base in [BaseVariant::Full, BaseVariant::BetaSub, BaseVariant::RhoSub, BaseVariant::Timescale] {
        for (ac, dc) in [(false, false), (true, false), (false, true), (true, true)] {
            out.push(ModelVariant { base, const_ac_voltage: ac, const_dc_voltage: dc });
        }
    }
    out
}

/// Partition type of every variant without loops.
pub fn partition_table() -> Result<BTreeMap<ModelVariant, PartitionType>, DqError> {
    all_variants().into_iter().map(|v| Ok((v, partition_type(v, &BTreeSet::new())?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use BaseVariant::*;
    use Signal::*;

    const FULL: ModelVariant = ModelVariant::new(Full);

    fn none() -> BTreeSet<LocalLoop> {
        BTreeSet::new()
    }

    #[test]
    fn zero_point_is_an_equilibrium() {
        let d = dq_derivatives(
            FULL,
            &DqParams::default(),
            &DqState::default(),
            &DqControls::M { d: 0.0, q: 0.0 },
            &DqBoundary::default(),
        )
        .unwrap();
        assert_eq!((d.di_d, d.di_q, d.dv_dc), (0.0, 0.0, 0.0));
    }

    #[test]
    fn beta_equilibrium() {
        let p = DqParams::default();
        let s = DqState { i_d: 0.3, i_q: -0.2, v_dc: 1.1 };
        let bd = DqBoundary { v_d: 0.9, v_q: 0.1, i_line: 0.0 };
        let c = DqControls::Beta { d: bd.v_d - p.r * s.i_d, q: bd.v_q - p.r * s.i_q };
        let d = dq_derivatives(ModelVariant::new(BetaSub), &p, &s, &c, &bd).unwrap();
        assert_eq!((d.di_d, d.di_q), (0.0, 0.0));
    }

    #[test]
    fn zeta_coefficient() {
        let o = dq_outputs(&DqState { i_d: 1.0, i_q: 0.0, v_dc: 0.0 }, 1.0, 0.0, &DqBoundary::default());
        assert_eq!(o.zeta, 0.75);
        let o = dq_outputs(&DqState::default(), 0.0, 0.0, &DqBoundary::default());
        assert_eq!((o.zeta, o.p_dc, o.p_ac, o.q_ac), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn mismatched_controls_and_guards() {
        let p = DqParams::default();
        let err =
            dq_derivatives(FULL, &p, &DqState::default(), &DqControls::Beta { d: 0.0, q: 0.0 }, &DqBoundary::default());
        assert!(matches!(err, Err(DqError::VariantMismatch { .. })));
        let err = dq_derivatives(
            ModelVariant::new(Timescale),
            &p,
            &DqState::default(),
            &DqControls::M { d: 0.0, q: 0.0 },
            &DqBoundary::default(),
        );
        assert!(matches!(err, Err(DqError::VariantMismatch { .. })));
        let s = DqState { i_d: 0.0, i_q: 0.5, v_dc: 1.0 };
        let err = dq_derivatives(
            ModelVariant::new(RhoSub),
            &p,
            &s,
            &DqControls::Rho { d: 0.1, q: 0.1 },
            &DqBoundary::default(),
        );
        assert!(matches!(err, Err(DqError::GuardViolation(_))));
        let err = convert_controls(&DqControls::Rho { d: 0.1, q: 0.1 }, FULL, &p, &s);
        assert!(matches!(err, Err(DqError::DivisionGuard(_))));
        let s0 = DqState { i_d: 0.0, i_q: 0.0, v_dc: 1.0 };
        let b = convert_controls(&DqControls::M { d: 0.0, q: 0.0 }, ModelVariant::new(BetaSub), &p, &s0).unwrap();
        assert_eq!(b, DqControls::Beta { d: 0.0, q: 0.0 });
        let s_low = DqState { i_d: 0.2, i_q: 0.2, v_dc: 0.0 };
        let err = convert_controls(&DqControls::Beta { d: 0.1, q: 0.1 }, FULL, &p, &s_low);
        assert!(matches!(err, Err(DqError::DivisionGuard(_))));
    }

    #[test]
    fn const_dc_holds_voltage_and_counts_zeta_into_line() {
        let v = FULL.const_dc();
        let d = dq_derivatives(
            v,
            &DqParams::default(),
            &DqState { i_d: 0.5, i_q: 0.1, v_dc: 3.0 },
            &DqControls::M { d: 0.7, q: 0.2 },
            &DqBoundary { v_d: 1.0, v_q: 0.0, i_line: 0.4 },
        )
        .unwrap();
        assert_eq!(d.dv_dc, 0.0);
        let g = coupling_graph(v, &none()).unwrap();
        assert!(!g.physical.contains(&(VDc, ID)) && !g.physical.contains(&(VDc, IQ)));
        assert!(g.physical.contains(&(ID, ILine)));
    }

    #[test]
    fn full_variant_is_two_way_coupled() {
        let g = coupling_graph(FULL, &none()).unwrap();
        assert!(g.physical.contains(&(VDc, ID)) && g.physical.contains(&(ID, VDc)));
        assert!(g.physical.contains(&(ID, IQ)) && g.physical.contains(&(IQ, ID)));
        assert_eq!(classify_coupling(&g), PartitionType::NotPartitioned);
    }

    #[test]
    fn timescale_has_no_edge_across_the_boundary() {
        let g = coupling_graph(ModelVariant::new(Timescale), &none()).unwrap();
        assert!(g
            .physical
            .iter()
            .all(|&(a, b)| !(a.is_ac_side() && b.is_dc_side() || a.is_dc_side() && b.is_ac_side())));
        assert!(g.physical.iter().all(|&(_, b)| b != ID && b != IQ));
    }

    #[test]
    fn partition_directions() {
        use PartitionType::*;
        let one = |l: LocalLoop| BTreeSet::from([l]);
        let cases = [
            (FULL, none(), NotPartitioned),
            (ModelVariant::new(BetaSub), none(), OneWayAcToDc),
            (ModelVariant::new(RhoSub), none(), OneWayDcToAc),
            (FULL.const_dc(), none(), OneWayAcToDc),
            (FULL.const_ac(), none(), OneWayDcToAc),
            (FULL.const_ac().const_dc(), none(), Full),
            (ModelVariant::new(BetaSub).const_ac(), none(), Full),
            (ModelVariant::new(Timescale), none(), Full),
            (ModelVariant::new(Timescale), one(LocalLoop::DcVoltage), OneWayDcToAc),
            (ModelVariant::new(Timescale), one(LocalLoop::ReactivePower), OneWayAcToDc),
            (ModelVariant::new(Timescale), one(LocalLoop::PowerTransferDcSide), OneWayDcToAc),
            (ModelVariant::new(Timescale), one(LocalLoop::PowerTransferAcSide), OneWayAcToDc),
        ];
        for (v, loops, expect) in cases {
            assert_eq!(partition_type(v, &loops).unwrap(), expect, "{v} {loops:?}");
        }
    }

    #[test]
    fn rho_with_const_dc_is_full() {
        assert_eq!(partition_type(ModelVariant::new(RhoSub).const_dc(), &none()).unwrap(), PartitionType::Full);
    }

    #[test]
    fn antisymmetric_cross_terms_conserve_power_at_steady_state() {
        // R = 0, dq currents at equilibrium: bus power (3/2)(v·i) equals
        // internal-terminal power exactly in antisymmetric mode
        let p = DqParams { r: 0.0, cross: CrossCoupling::Antisymmetric, ..DqParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s =
                DqState { i_d: rng.gen_range(-1.0..1.0), i_q: rng.gen_range(-1.0..1.0), v_dc: rng.gen_range(0.5..1.5) };
            let bd = DqBoundary { v_d: rng.gen_range(-1.0..1.0), v_q: rng.gen_range(-1.0..1.0), i_line: 0.0 };
            // choose m so that di = 0
            let wl = p.omega * p.l;
            let m_d = 2.0 * (bd.v_d + wl * s.i_q) / s.v_dc;
            let m_q = 2.0 * (bd.v_q - wl * s.i_d) / s.v_dc;
            let d = dq_derivatives(FULL, &p, &s, &DqControls::M { d: m_d, q: m_q }, &bd).unwrap();
            assert!(d.di_d.abs() < 1e-12 && d.di_q.abs() < 1e-12);
            let bus = 1.5 * (bd.v_d * s.i_d + bd.v_q * s.i_q);
            let dc = dq_outputs(&s, m_d, m_q, &bd).p_dc;
            assert!((bus - dc).abs() < 1e-12, "{bus} vs {dc}");
            // the symmetric-mode equilibrium leaves a 3ωL i_d i_q gap
            let mq_sym = 2.0 * (bd.v_q + wl * s.i_d) / s.v_dc;
            let gap = 0.75 * s.v_dc * (mq_sym - m_q) * s.i_q;
            let dc_sym = dq_outputs(&s, m_d, mq_sym, &bd).p_dc;
            assert!((dc_sym - bus - gap).abs() < 1e-12);
            assert!((gap - 3.0 * wl * s.i_d * s.i_q).abs() < 1e-12);
        }
    }

    fn arb_point() -> impl Strategy<Value = (DqState, DqBoundary, f64, f64)> {
        (-1.0..1.0f64, -1.0..1.0f64, 0.5..1.5f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_map(|(id, iq, v, vd, vq, il, md, mq)| {
                (DqState { i_d: id, i_q: iq, v_dc: v }, DqBoundary { v_d: vd, v_q: vq, i_line: il }, md, mq)
            })
    }

    proptest! {
        #[test]
        fn beta_round_trip((s, _, bd_, bq) in arb_point(), anti in any::<bool>(), cdc in any::<bool>()) {
            let p = DqParams { cross: if anti { CrossCoupling::Antisymmetric } else { CrossCoupling::Symmetric }, ..DqParams::default() };
            let mut v = ModelVariant::new(BetaSub);
            v.const_dc_voltage = cdc;
            let beta = DqControls::Beta { d: bd_, q: bq };
            let mut full = FULL;
            full.const_dc_voltage = cdc;
            let m = convert_controls(&beta, full, &p, &s).unwrap();
            let back = convert_controls(&m, v, &p, &s).unwrap();
            let (a, b) = (beta.components(), back.components());
            prop_assert!((a.0 - b.0).abs() <= 1e-12 && (a.1 - b.1).abs() <= 1e-12);
        }

        #[test]
        fn internal_terminal_power_identity((s, _, md, mq) in arb_point()) {
            let lhs = internal_terminal_power(&s, md, mq);
            let rhs = s.v_dc * zeta(s.i_d, s.i_q, md, mq);
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn coupling_graph_is_structural(seed in any::<u64>(), k in 0usize..16) {
            let v = all_variants()[k];
            let a = coupling_graph_with(v, &none(), &DqParams::default(), seed, COUPLING_SAMPLES).unwrap();
            let b = coupling_graph_with(v, &none(), &DqParams::default(), seed.wrapping_add(1), COUPLING_SAMPLES).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
