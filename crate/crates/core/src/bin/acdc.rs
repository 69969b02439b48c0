use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use acdc_grid::control::{
    synthesize_centralized, synthesize_leader_follower, verify_controller_structure, ControlError, SynthesisReport,
};
use acdc_grid::dq::{
    classify_coupling, coupling_graph_with, BaseVariant, DqError, DqParams, ModelVariant, COUPLING_SAMPLES,
};
use acdc_grid::experiment::{experiment_config, run_experiment, ExperimentError};
use acdc_grid::io::{
    export_dot, from_json, load_grid, read_text, to_json, trace_to_csv, write_text, ControllerDoc, DotLevel,
    FileDigest, InitialStateDoc, IoError, ParsedGrid, PosetDoc, RunManifest, StateSpaceDoc,
};
use acdc_grid::linear::{build_linear_statespace_with, verify_structure, GridStructure, LinearModelError, StateSpace};
use acdc_grid::poset::{classify_structure, in_block_incidence_algebra_tol, Poset, PosetError, StructureClass};
use acdc_grid::sim::{simulate_linear, trace_metrics, SimConfig, SimError, TestSystemSpec};
use acdc_grid::topology::{
    build_quotient_graph, connected_components, count_acyclic_orientations, enumerate_acyclic_orientations, BusKind,
    LocalLoop, Orientation, OrientationStrategy, TopologyError,
};

// stdout writes ignore errors so a closed pipe (`acdc ... | head`) ends quietly
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! outraw {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

const DEFAULT_TEST_SYSTEM: &str = include_str!("../../grids/test_system_params.json");

#[derive(Parser)]
#[command(name = "acdc", version, about = "Information structure and structured control of AC/DC grids")]
struct Cli {
    /// Seed for randomized steps (orientation priorities, coupling samples).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Numerical tolerance override where a command has one.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Also write the run manifest here.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Index,
    DcFirst,
    Seeded,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Centralized,
    LeaderFollower,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Bus,
    Subgrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum LoopArg {
    ReactivePower,
    DcVoltage,
    PowerTransferDcSide,
    PowerTransferAcSide,
}

impl From<LoopArg> for LocalLoop {
    fn from(l: LoopArg) -> Self {
        match l {
            LoopArg::ReactivePower => LocalLoop::ReactivePower,
            LoopArg::DcVoltage => LocalLoop::DcVoltage,
            LoopArg::PowerTransferDcSide => LocalLoop::PowerTransferDcSide,
            LoopArg::PowerTransferAcSide => LocalLoop::PowerTransferAcSide,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Subgrids, quotient graph and structure class.
    Analyze { grid: PathBuf },
    /// Orient free converters acyclically.
    Orient {
        grid: PathBuf,
        #[arg(long, value_enum, default_value = "index")]
        strategy: Strategy,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Number of acyclic orientations of the quotient graph.
    CountOrientations {
        grid: PathBuf,
        /// Cross-check by brute-force enumeration.
        #[arg(long)]
        enumerate: bool,
    },
    /// Linear state-space model and its structure report.
    BuildSs {
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// LQR state feedback.
    Synthesize {
        grid: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Leader subgrid labels, e.g. `AC1,DC2`.
        #[arg(long, value_delimiter = ',')]
        leader: Vec<String>,
        /// Converters restricted to leader feedback; defaults to those owned by leader subgrids.
        #[arg(long, value_delimiter = ',')]
        leader_inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the linear model, open loop or with a controller file.
    Simulate {
        grid: PathBuf,
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        x0: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        sample_every: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a controller's sparsity against its declared structure.
    Verify {
        grid: PathBuf,
        #[arg(long)]
        controller: PathBuf,
    },
    /// Coupling graph and partition type of a converter model variant.
    DqCouplings {
        /// `Full`, `BetaSub`, `RhoSub` or `Timescale`, optionally with `+ConstAc` / `+ConstDc`.
        #[arg(long)]
        variant: String,
        #[arg(long, value_enum, value_delimiter = ',')]
        loops: Vec<LoopArg>,
    },
    /// Graphviz rendering of the grid.
    ExportDot {
        grid: PathBuf,
        #[arg(long, value_enum, default_value = "bus")]
        level: Level,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Centralized versus leader-follower control of the six-area test system.
    Experiment {
        /// Test-system parameter file; the shipped placeholder data by default.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Input(String),
    #[error("infeasible orientation: {0}")]
    Infeasible(String),
    #[error("structure violation: {0}")]
    Structure(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(IoError::Io { .. }) => 1,
            CliError::Io(_) | CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Structure(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::CycleForced
            | TopologyError::CoOrientationConflict { .. }
            | TopologyError::NotOrientable(_)
            | TopologyError::LoopConflict { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<PosetError> for CliError {
    fn from(e: PosetError) -> Self {
        CliError::Structure(e.to_string())
    }
}

impl From<LinearModelError> for CliError {
    fn from(e: LinearModelError) -> Self {
        match e {
            LinearModelError::UnorientedConverter(_) | LinearModelError::CyclicQuotient => {
                CliError::Infeasible(e.to_string())
            }
            LinearModelError::Topology(t) => t.into(),
            LinearModelError::Poset(p) => p.into(),
            LinearModelError::SingularResolvent { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::LeaderNotSelfContained(_) => CliError::Structure(e.to_string()),
            ControlError::InvalidCost(_) | ControlError::DimensionMismatch(_) => CliError::Input(e.to_string()),
            ControlError::Poset(p) => p.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::MissingParameter(_) | SimError::InvalidParameter(_) | SimError::InvalidConfig(_) => {
                CliError::Input(e.to_string())
            }
            SimError::DimensionMismatch(_) => CliError::Input(e.to_string()),
            SimError::Linear(l) => l.into(),
            SimError::Topology(t) => t.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DqError> for CliError {
    fn from(e: DqError) -> Self {
        match e {
            DqError::VariantMismatch { .. } | DqError::InvalidParams(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Sim(s) => s.into(),
            ExperimentError::Control(c) => c.into(),
        }
    }
}

/// Files a run read and wrote, for the manifest.
#[derive(Default)]
struct Run {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn grid(&mut self, path: &Path) -> Result<ParsedGrid, CliError> {
        self.inputs.push(path.to_path_buf());
        Ok(load_grid(path)?)
    }

    fn read(&mut self, path: &Path) -> Result<String, CliError> {
        self.inputs.push(path.to_path_buf());
        Ok(read_text(path)?)
    }

    fn write(&mut self, path: &Path, text: &str) -> Result<(), CliError> {
        write_text(path, text)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn emit(&mut self, path: Option<&Path>, text: &str) -> Result<(), CliError> {
        match path {
            Some(p) => self.write(p, text),
            None => {
                outraw!("{text}");
                Ok(())
            }
        }
    }
}

/// `DC1` → `DC subgrid 1`.
fn subgrid_name(label: &str) -> String {
    match label.split_at_checked(2) {
        Some((kind @ ("AC" | "DC"), k)) if k.chars().all(|c| c.is_ascii_digit()) => format!("{kind} subgrid {k}"),
        _ => label.to_string(),
    }
}

fn describe(class: &StructureClass, poset: &Poset) -> String {
    match class {
        StructureClass::LeaderFollower { leader } => {
            format!("LeaderFollower, leader = {}", subgrid_name(poset.label(*leader)))
        }
        StructureClass::Coordinated { coordinator } => {
            let names: Vec<String> = coordinator.iter().map(|&c| subgrid_name(poset.label(c))).collect();
            format!("Coordinated, coordinator = {{{}}}", names.join(", "))
        }
        other => other.to_string(),
    }
}

fn analyze(run: &mut Run, path: &Path) -> Result<(), CliError> {
    let parsed = run.grid(path)?;
    let g = &parsed.grid;
    let map = connected_components(g);
    let list = |kind: BusKind, count: usize, prefix: &str| -> String {
        (0..count)
            .map(|k| {
                let buses: Vec<String> = map.buses_of(kind, k).iter().map(|b| b.to_string()).collect();
                format!("{prefix}{}: {}", k + 1, buses.join(" "))
            })
            .collect::<Vec<_>>()
            .join("; ")
    };
    if !parsed.document.name.is_empty() {
        out!("grid: {}", parsed.document.name);
    }
    out!("AC subgrids: {} ({})", map.ac_count, list(BusKind::Ac, map.ac_count, "AC"));
    out!("DC subgrids: {} ({})", map.dc_count, list(BusKind::Dc, map.dc_count, "DC"));
    let oriented = g.converters().iter().filter(|c| c.orientation.is_assigned()).count();
    out!("converters: {} ({} oriented)", g.converters().len(), oriented);
    let free = g.with_orientations(&vec![Orientation::Unassigned; g.converters().len()]);
    let undirected = build_quotient_graph(&free, &map)?;
    out!(
        "quotient graph: {} nodes, {} edges, {}",
        undirected.len(),
        undirected.underlying_edges.len(),
        if undirected.is_bipartite() { "bipartite" } else { "not bipartite" }
    );
    if oriented < g.converters().len() {
        out!("structure: undetermined ({} unoriented converters)", g.converters().len() - oriented);
        return Ok(());
    }
    let cyclic = match build_quotient_graph(g, &map) {
        Ok(q) => !q.is_dag(),
        Err(TopologyError::CoOrientationConflict { .. }) => true,
        Err(e) => return Err(e.into()),
    };
    if cyclic {
        out!("structure: not poset-causal (directed cycle in the quotient graph)");
        return Ok(());
    }
    let gs = GridStructure::of(g)?;
    let class = classify_structure(&gs.poset);
    out!("structure: {}", describe(&class, &gs.poset));
    Ok(())
}

fn statespace(parsed: &ParsedGrid) -> Result<StateSpace, CliError> {
    Ok(build_linear_statespace_with(&parsed.grid, parsed.require_params()?, &parsed.cost, parsed.disturbance)?)
}

fn leader_sets(
    ss: &StateSpace,
    gs: &GridStructure,
    leader: &[String],
    leader_inputs: &[String],
) -> Result<(BTreeSet<usize>, BTreeSet<usize>), CliError> {
    let lead: BTreeSet<usize> = if leader.is_empty() {
        match classify_structure(&gs.poset) {
            StructureClass::LeaderFollower { leader } => [leader].into(),
            _ => return Err(CliError::Input("grid is not two-subgrid leader-follower; pass --leader".into())),
        }
    } else {
        leader
            .iter()
            .map(|l| gs.quotient.node_by_label(l).ok_or_else(|| CliError::Input(format!("no subgrid {l}"))))
            .collect::<Result<_, _>>()?
    };
    if !gs.poset.is_up_closed(&lead) {
        return Err(CliError::Structure("leader must contain every subgrid upstream of it".into()));
    }
    let inputs = if leader_inputs.is_empty() {
        // inputs owned by a leader subgrid
        let ip = &ss.input_partition;
        (0..ss.n_inputs()).filter(|&i| ip.block_of_index(i).is_some_and(|b| lead.contains(&ip.elements[b]))).collect()
    } else {
        leader_inputs
            .iter()
            .map(|n| ss.input_index(n).ok_or_else(|| CliError::Input(format!("no converter input {n}"))))
            .collect::<Result<_, _>>()?
    };
    Ok((lead, inputs))
}

fn controller_doc(mode: &str, ss: &StateSpace, r: &SynthesisReport) -> ControllerDoc {
    ControllerDoc {
        mode: mode.to_string(),
        k: (&r.gain.k).into(),
        input_labels: ss.input_labels.clone(),
        state_labels: ss.state_labels.iter().map(|l| l.to_string()).collect(),
        row_partition: r.gain.row_partition.clone(),
        col_partition: r.gain.col_partition.clone(),
        row_order: r.gain.row_order.clone(),
        col_order: r.gain.col_order.clone(),
        declared_structure: r.gain.declared_structure.as_ref().map(PosetDoc::from),
        riccati_residual: r.riccati_residual,
        closed_loop_spectral_abscissa: r.closed_loop_spectral_abscissa,
        h2_norm: r.h2_norm,
    }
}

fn load_controller(run: &mut Run, path: &Path, ss: &StateSpace) -> Result<ControllerDoc, CliError> {
    let doc: ControllerDoc = from_json(&run.read(path)?)?;
    let labels: Vec<String> = ss.state_labels.iter().map(|l| l.to_string()).collect();
    if doc.state_labels != labels || doc.input_labels != ss.input_labels {
        return Err(CliError::Input("controller labels do not match the grid's state space".into()));
    }
    Ok(doc)
}

fn parse_variant(s: &str) -> Result<ModelVariant, CliError> {
    let mut parts = s.split('+');
    let base = match parts.next().unwrap_or("").to_ascii_lowercase().as_str() {
        "full" => BaseVariant::Full,
        "betasub" | "beta" => BaseVariant::BetaSub,
        "rhosub" | "rho" => BaseVariant::RhoSub,
        "timescale" => BaseVariant::Timescale,
        other => return Err(CliError::Input(format!("unknown base variant {other:?}"))),
    };
    let mut v = ModelVariant::new(base);
    for p in parts {
        match p.to_ascii_lowercase().as_str() {
            "constac" => v = v.const_ac(),
            "constdc" => v = v.const_dc(),
            other => return Err(CliError::Input(format!("unknown variant modifier {other:?}"))),
        }
    }
    Ok(v)
}

fn execute(cli: &Cli, run: &mut Run) -> Result<(), CliError> {
    match &cli.command {
        Command::Analyze { grid } => analyze(run, grid),
        Command::Orient { grid, strategy, out } => {
            let parsed = run.grid(grid)?;
            let s = match strategy {
                Strategy::Index => OrientationStrategy::IndexOrder,
                Strategy::DcFirst => OrientationStrategy::DcFirst,
                Strategy::Seeded => OrientationStrategy::Seeded(cli.seed),
            };
            let oriented = acdc_grid::topology::orient_converters(&parsed.grid, s)?;
            run.emit(out.as_deref(), &to_json(&parsed.document.with_orientations_of(&oriented)))
        }
        Command::CountOrientations { grid, enumerate } => {
            let parsed = run.grid(grid)?;
            // the count concerns the undirected quotient graph
            let free = vec![Orientation::Unassigned; parsed.grid.converters().len()];
            let g = parsed.grid.with_orientations(&free);
            let q = build_quotient_graph(&g, &connected_components(&g))?;
            let count = count_acyclic_orientations(&q)?;
            out!("{count}");
            if *enumerate {
                let brute = enumerate_acyclic_orientations(&q)?.len() as u128;
                out!("enumerated: {brute}");
                if brute != count as u128 {
                    return Err(CliError::Numerical(format!("enumeration found {brute}, count gave {count}")));
                }
            }
            Ok(())
        }
        Command::BuildSs { grid, out } => {
            let parsed = run.grid(grid)?;
            let ss = statespace(&parsed)?;
            run.write(out, &to_json(&StateSpaceDoc::from(&ss)))?;
            let gs = GridStructure::of(&parsed.grid)?;
            let report = verify_structure(&ss, &gs.poset)?;
            out!("states: {}, inputs: {}", ss.n_states(), ss.n_inputs());
            out!("A block diagonal: {}", report.a_block_diagonal);
            out!("A in incidence algebra: {}", report.a_membership.member);
            out!("B in incidence algebra: {}", report.b_membership.member);
            if !report.pass() {
                return Err(CliError::Structure("state-space model is not poset-causal".into()));
            }
            Ok(())
        }
        Command::Synthesize { grid, mode, leader, leader_inputs, out } => {
            let parsed = run.grid(grid)?;
            let ss = statespace(&parsed)?;
            let (name, report) = match mode {
                Mode::Centralized => ("centralized", synthesize_centralized(&ss)?),
                Mode::LeaderFollower => {
                    let gs = GridStructure::of(&parsed.grid)?;
                    let (lead, inputs) = leader_sets(&ss, &gs, leader, leader_inputs)?;
                    ("leader-follower", synthesize_leader_follower(&ss, &lead, &inputs)?)
                }
            };
            run.write(out, &to_json(&controller_doc(name, &ss, &report)))?;
            out!("mode: {name}");
            out!("H2 norm: {}", report.h2_norm);
            out!("riccati residual: {:e}", report.riccati_residual);
            out!("closed-loop spectral abscissa: {}", report.closed_loop_spectral_abscissa);
            Ok(())
        }
        Command::Simulate { grid, controller, x0, dt, horizon, sample_every, out } => {
            let parsed = run.grid(grid)?;
            let ss = statespace(&parsed)?;
            let gain = match controller {
                Some(p) => Some(load_controller(run, p, &ss)?.gain()?),
                None => None,
            };
            let x0: InitialStateDoc = from_json(&run.read(x0)?)?;
            let x0 = x0.resolve(&ss)?;
            let cfg = SimConfig { dt: *dt, horizon: *horizon, sample_every: *sample_every, seed: cli.seed };
            let trace = simulate_linear(&ss, gain.as_ref(), &x0, &cfg)?;
            run.write(out, &trace_to_csv(&trace)?)?;
            let metrics = trace_metrics(&trace, Some(&ss.q()), Some(&ss.r()));
            let mpath = out.with_extension("metrics.json");
            run.write(&mpath, &to_json(&metrics))?;
            out!("steps recorded: {}", trace.len());
            out!("quadratic cost: {}", metrics.cost);
            Ok(())
        }
        Command::Verify { grid, controller } => {
            let parsed = run.grid(grid)?;
            let ss = statespace(&parsed)?;
            let doc = load_controller(run, controller, &ss)?;
            let gain = doc.gain()?;
            let poset = match &gain.declared_structure {
                Some(p) => p.clone(),
                None => GridStructure::of(&parsed.grid)?.poset,
            };
            let membership = match cli.tol {
                Some(tol) => in_block_incidence_algebra_tol(
                    &gain.permuted(),
                    &gain.row_partition,
                    &gain.col_partition,
                    &poset,
                    tol,
                )?,
                None => verify_controller_structure(&gain, &poset)?,
            };
            if membership.member {
                out!("controller structure: ok");
                Ok(())
            } else {
                for v in &membership.violations {
                    out!(
                        "violation: input block {} / state block {} (max |K| = {:e})",
                        v.row_block,
                        v.col_block,
                        v.max_abs
                    );
                }
                Err(CliError::Structure(format!("{} forbidden gain blocks are nonzero", membership.violations.len())))
            }
        }
        Command::DqCouplings { variant, loops } => {
            let v = parse_variant(variant)?;
            let loops: BTreeSet<LocalLoop> = loops.iter().map(|&l| l.into()).collect();
            let g = coupling_graph_with(v, &loops, &DqParams::default(), cli.seed, COUPLING_SAMPLES)?;
            for (a, b) in g.edges() {
                out!("{a} -> {b}");
            }
            out!("partition: {:?}", classify_coupling(&g));
            Ok(())
        }
        Command::ExportDot { grid, level, out } => {
            let parsed = run.grid(grid)?;
            let level = match level {
                Level::Bus => DotLevel::Bus,
                Level::Subgrid => DotLevel::Subgrid,
            };
            run.emit(out.as_deref(), &export_dot(&parsed.grid, level))
        }
        Command::Experiment { params, out } => {
            let text = match params {
                Some(p) => run.read(p)?,
                None => DEFAULT_TEST_SYSTEM.to_string(),
            };
            let spec: TestSystemSpec = from_json(&text)?;
            let mut report = run_experiment(&spec, &experiment_config())?;
            out!("states: {}, inputs: {}", report.n_states, report.n_inputs);
            out!("H2 centralized: {}", report.centralized.h2_norm);
            out!("H2 leader-follower: {}", report.leader_follower.h2_norm);
            for r in &report.settling {
                out!(
                    "settling {}: uncontrolled {}, centralized {}, leader-follower {}",
                    r.label,
                    r.uncontrolled,
                    r.centralized,
                    r.leader_follower
                );
            }
            for r in &report.link_peaks {
                out!("peak {}: centralized {:e}, leader-follower {:e}", r.label, r.centralized, r.leader_follower);
            }
            if let Some(p) = out {
                // wall-clock time would make the file irreproducible
                report.runtime_seconds = 0.0;
                run.write(p, &to_json(&report))?;
            }
            Ok(())
        }
    }
}

fn write_manifest(cli: &Cli, run: &Run) -> Result<(), CliError> {
    let target = match (&cli.manifest, run.outputs.first()) {
        (Some(p), _) => p.clone(),
        (None, Some(first)) => RunManifest::manifest_path(first),
        (None, None) => return Ok(()),
    };
    let mut m = RunManifest::new(std::env::args().skip(1).collect(), cli.seed, cli.tol);
    for p in &run.inputs {
        m.inputs.push(FileDigest::of(p)?);
    }
    for p in &run.outputs {
        m.outputs.push(FileDigest::of(p)?);
    }
    write_text(&target, &to_json(&m))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut run = Run::default();
    match execute(&cli, &mut run).and_then(|()| write_manifest(&cli, &run)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
