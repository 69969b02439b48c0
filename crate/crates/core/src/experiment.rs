//! Centralized versus leader-follower control of the six-area test system.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::control::{
    leader_follower_poset, synthesize_centralized, synthesize_leader_follower, verify_controller_structure,
    ControlError, SynthesisReport,
};
use crate::linear::{StateKind, StateSpace};
use crate::sim::{
    build_test_system, settling_time, simulate_linear, trace_metrics, SimConfig, SimError, TestSystem, TestSystemSpec,
    Trace, SETTLING_BAND,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Horizon long enough for the controlled runs to settle while the
/// uncontrolled frequencies (time constant J/D = 100 s) do not.
pub fn experiment_config() -> SimConfig {
    SimConfig { dt: 1e-4, horizon: 60.0, sample_every: 100, seed: 0 }
}

#[derive(Clone, Debug, Serialize)]
pub struct ControllerSummary {
    pub h2_norm: f64,
    pub spectral_abscissa: f64,
    pub riccati_residual: f64,
    pub cost: f64,
}

impl ControllerSummary {
    fn new(r: &SynthesisReport, cost: f64) -> Self {
        ControllerSummary {
            h2_norm: r.h2_norm,
            spectral_abscissa: r.closed_loop_spectral_abscissa,
            riccati_residual: r.riccati_residual,
            cost,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelRow {
    pub label: String,
    pub uncontrolled: f64,
    pub centralized: f64,
    pub leader_follower: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub n_states: usize,
    pub n_inputs: usize,
    pub centralized: ControllerSummary,
    pub leader_follower: ControllerSummary,
    /// Largest |K| entry in a link-converter row outside the leader columns.
    pub link_rows_off_leader_max: f64,
    pub leader_follower_structure_ok: bool,
    /// Settling time of each initially perturbed frequency.
    pub settling: Vec<ChannelRow>,
    /// Time for max |ω| over all areas to fall below 10% of its initial peak.
    pub max_frequency_settling: ChannelRow,
    /// Peak deviation of link voltages and current.
    pub link_peaks: Vec<ChannelRow>,
    /// Smallest perturbed peak |ω| over the largest unperturbed one, under
    /// the leader-follower controller.
    pub perturbed_to_unperturbed_peak_ratio: f64,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn both_stable(&self) -> bool {
        self.centralized.spectral_abscissa < 0.0 && self.leader_follower.spectral_abscissa < 0.0
    }

    pub fn h2_ordered(&self) -> bool {
        self.leader_follower.h2_norm >= self.centralized.h2_norm
    }

    pub fn controlled_settles_faster(&self) -> bool {
        self.settling.iter().all(|r| r.centralized < r.uncontrolled && r.leader_follower < r.uncontrolled)
    }

    pub fn link_peaks_ordered(&self) -> bool {
        self.link_peaks.iter().all(|r| r.leader_follower >= r.centralized)
    }
}

fn frequency_columns(ss: &StateSpace) -> Vec<usize> {
    (0..ss.n_states()).filter(|&i| ss.state_labels[i].kind == StateKind::Frequency).collect()
}

fn max_abs_settling(trace: &Trace, cols: &[usize]) -> f64 {
    let env: Vec<f64> =
        (0..trace.len()).map(|k| cols.iter().map(|&j| trace.states[(k, j)].abs()).fold(0.0, f64::max)).collect();
    settling_time(&trace.times, &env)
}

fn link_columns(ts: &TestSystem) -> Vec<usize> {
    ["v[17]", "v[18]", "i[17-18]"].iter().map(|l| ts.ss.state_index(l).expect("link state")).collect()
}

pub fn run_experiment(spec: &TestSystemSpec, cfg: &SimConfig) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let ts = build_test_system(spec)?;
    let ss = &ts.ss;
    let central = synthesize_centralized(ss)?;
    let lf = synthesize_leader_follower(ss, &ts.leader, &ts.leader_inputs)?;

    let structure_ok = verify_controller_structure(&lf.gain, &leader_follower_poset())?.member;
    let sp = &ss.state_partition;
    let lead_cols: Vec<usize> = (0..ss.n_states())
        .filter(|&i| sp.block_of_index(i).is_some_and(|blk| ts.leader.contains(&sp.elements[blk])))
        .collect();
    let mut off_leader: f64 = 0.0;
    for &row in &ts.leader_inputs {
        for col in (0..ss.n_states()).filter(|c| !lead_cols.contains(c)) {
            off_leader = off_leader.max(lf.gain.k[(row, col)].abs());
        }
    }

    let open = simulate_linear(ss, None, &ts.x0, cfg)?;
    let tc = simulate_linear(ss, Some(&central.gain), &ts.x0, cfg)?;
    let tl = simulate_linear(ss, Some(&lf.gain), &ts.x0, cfg)?;
    let (q, r) = (ss.q(), ss.r());
    let mc = trace_metrics(&tc, Some(&q), Some(&r));
    let ml = trace_metrics(&tl, Some(&q), Some(&r));
    let mo = trace_metrics(&open, Some(&q), None);

    let row = |j: usize, f: &dyn Fn(&crate::sim::TraceMetrics) -> f64| ChannelRow {
        label: ss.state_labels[j].to_string(),
        uncontrolled: f(&mo),
        centralized: f(&mc),
        leader_follower: f(&ml),
    };
    let freq = frequency_columns(ss);
    let perturbed: Vec<usize> = freq.iter().copied().filter(|&j| ts.x0[j] != 0.0).collect();
    let quiet: Vec<usize> = freq.iter().copied().filter(|&j| ts.x0[j] == 0.0).collect();
    let settling = perturbed.iter().map(|&j| row(j, &|m| m.settling_time[j])).collect();
    let link_peaks = link_columns(&ts).into_iter().map(|j| row(j, &|m| m.peak[j])).collect();
    let min_perturbed = perturbed.iter().map(|&j| ml.peak[j]).fold(f64::INFINITY, f64::min);
    let max_quiet = quiet.iter().map(|&j| ml.peak[j]).fold(0.0, f64::max);
    let max_frequency_settling = ChannelRow {
        label: format!("max|omega| within {SETTLING_BAND} of initial"),
        uncontrolled: max_abs_settling(&open, &freq),
        centralized: max_abs_settling(&tc, &freq),
        leader_follower: max_abs_settling(&tl, &freq),
    };

    Ok(ExperimentReport {
        n_states: ss.n_states(),
        n_inputs: ss.n_inputs(),
        centralized: ControllerSummary::new(&central, mc.cost),
        leader_follower: ControllerSummary::new(&lf, ml.cost),
        link_rows_off_leader_max: off_leader,
        leader_follower_structure_ok: structure_ok,
        settling,
        max_frequency_settling,
        link_peaks,
        perturbed_to_unperturbed_peak_ratio: if max_quiet > 0.0 { min_perturbed / max_quiet } else { f64::INFINITY },
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
