//! Adaptive solve–estimate–mark–refine driver and command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::axioms::{
    self, apriori_from_values, convergence_from_etas, doerfler_fit_from_etas, pair_totals,
    reduction_from_totals, stability_from_totals, AprioriCheck, AxiomAudit, LevelRecord,
    PairAudit, PairTotals, DEFAULT_C_CAP, DEFAULT_Q_RED, DEFAULT_TAIL_TARGET,
};
use crate::bem::{self, BoundaryData, P0Density, SingleLayerSystem};
use crate::boundary_mesh::BoundaryMesh;
use crate::error::{Error, Result};
use crate::marking::{mark, verify_marking_condition, IndicatorField, MarkingConfig, Strategy};
use crate::mesh2d::Mesh2D;
use crate::obstacle::{self, AffineObstacle, ObstacleProblem, ObstacleSolution};
use crate::poisson::{self, DiscreteFunction, Load};
use crate::refinement::{MeshId, RefinementMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Poisson,
    Obstacle,
    Symm,
}

impl Problem {
    pub fn parse(name: &str) -> Result<Problem> {
        match name {
            "poisson" => Ok(Problem::Poisson),
            "obstacle" => Ok(Problem::Obstacle),
            "symm" => Ok(Problem::Symm),
            other => Err(Error::config(format!(
                "unknown problem `{other}` (expected poisson, obstacle, or symm)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Poisson => "poisson",
            Problem::Obstacle => "obstacle",
            Problem::Symm => "symm",
        }
    }
}

/// Computational domain: a triangulated area for the volume problems, a
/// closed polygonal curve for the boundary-integral problem.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    UnitSquare,
    LShape,
    BoundarySquare { side: f64, per_side: usize },
    BoundaryPolygon { sides: usize, radius: f64 },
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::UnitSquare => "unit_square",
            Domain::LShape => "l_shape",
            Domain::BoundarySquare { .. } => "square",
            Domain::BoundaryPolygon { .. } => "polygon",
        }
    }
}

/// Right-hand side of a run: a constant, or (for the boundary problem) the
/// potential of the unit density on the initial mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoadSpec {
    Constant(f64),
    UnitPotential,
}

/// Stopping rule; exactly one of the three criteria must be active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub eta_tol: f64,
    pub max_elements: usize,
    pub max_levels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub domain: Domain,
    pub load: LoadSpec,
    pub obstacle: AffineObstacle,
    pub marking: MarkingConfig,
    pub stop: StopRule,
}

const CONFIG_KEYS: [&str; 15] = [
    "problem",
    "domain",
    "f",
    "chi",
    "chi_x",
    "chi_y",
    "side",
    "per_side",
    "sides",
    "radius",
    "strategy",
    "theta",
    "eta_tol",
    "max_elements",
    "max_levels",
];

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::config(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

fn parse_float(map: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::config(format!("key `{key}`: `{v}` is not a number"))),
    }
}

fn parse_count(map: &BTreeMap<String, String>, key: &str, default: usize) -> Result<usize> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::config(format!("key `{key}`: `{v}` is not a count"))),
    }
}

impl RunConfig {
    /// Parses a flat `key = value` run description. Blank lines and `#`
    /// comments are skipped; `problem`, `domain`, and `strategy` are
    /// required, everything else has a default. Keys that do not apply to
    /// the chosen problem or domain are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let map = parse_kv(text)?;
        for key in map.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) && key != "deterministic" {
                return Err(Error::config(format!("unknown key `{key}`")));
            }
        }
        if let Some(v) = map.get("deterministic") {
            if v != "true" {
                return Err(Error::config("determinism cannot be disabled"));
            }
        }
        let problem = Problem::parse(
            map.get("problem")
                .ok_or_else(|| Error::config("missing key `problem`"))?,
        )?;
        let domain_name = map
            .get("domain")
            .ok_or_else(|| Error::config("missing key `domain`"))?;
        let reject = |keys: &[&str], why: &str| -> Result<()> {
            for k in keys {
                if map.contains_key(*k) {
                    return Err(Error::config(format!("key `{k}` only applies to {why}")));
                }
            }
            Ok(())
        };
        let domain = match (problem, domain_name.as_str()) {
            (Problem::Poisson | Problem::Obstacle, "unit_square") => Domain::UnitSquare,
            (Problem::Poisson | Problem::Obstacle, "l_shape") => Domain::LShape,
            (Problem::Symm, "square") => Domain::BoundarySquare {
                side: parse_float(&map, "side", 0.4)?,
                per_side: parse_count(&map, "per_side", 1)?,
            },
            (Problem::Symm, "polygon") => Domain::BoundaryPolygon {
                sides: parse_count(&map, "sides", 64)?,
                radius: parse_float(&map, "radius", 0.25)?,
            },
            (p, other) => {
                return Err(Error::config(format!(
                    "domain `{other}` does not apply to the {} problem",
                    p.name()
                )))
            }
        };
        match domain {
            Domain::UnitSquare | Domain::LShape => {
                reject(&["side", "per_side", "sides", "radius"], "boundary domains")?
            }
            Domain::BoundarySquare { .. } => reject(&["sides", "radius"], "domain `polygon`")?,
            Domain::BoundaryPolygon { .. } => reject(&["side", "per_side"], "domain `square`")?,
        }
        let load = match map.get("f").map(String::as_str) {
            None => LoadSpec::Constant(1.0),
            Some("unit_potential") => {
                if problem != Problem::Symm {
                    return Err(Error::config(
                        "load `unit_potential` only applies to the symm problem",
                    ));
                }
                LoadSpec::UnitPotential
            }
            Some(v) => LoadSpec::Constant(
                v.parse()
                    .map_err(|_| Error::config(format!("key `f`: `{v}` is not a number")))?,
            ),
        };
        if problem != Problem::Obstacle {
            reject(&["chi", "chi_x", "chi_y"], "the obstacle problem")?;
        }
        let obstacle = AffineObstacle {
            a: parse_float(&map, "chi_x", 0.0)?,
            b: parse_float(&map, "chi_y", 0.0)?,
            c: parse_float(&map, "chi", -1.0)?,
        };
        let strategy = Strategy::parse(
            map.get("strategy")
                .ok_or_else(|| Error::config("missing key `strategy`"))?,
        )?;
        let marking = MarkingConfig { strategy, theta: parse_float(&map, "theta", 0.5)? };
        marking.validate()?;
        let stop = StopRule {
            eta_tol: parse_float(&map, "eta_tol", 0.0)?,
            max_elements: parse_count(&map, "max_elements", 0)?,
            max_levels: parse_count(&map, "max_levels", 0)?,
        };
        if stop.eta_tol < 0.0 || !stop.eta_tol.is_finite() {
            return Err(Error::config("key `eta_tol` must be finite and nonnegative"));
        }
        let active = usize::from(stop.eta_tol > 0.0)
            + usize::from(stop.max_elements > 0)
            + usize::from(stop.max_levels > 0);
        if active != 1 {
            return Err(Error::config(
                "exactly one of eta_tol, max_elements, max_levels must be positive",
            ));
        }
        Ok(RunConfig { problem, domain, load, obstacle, marking, stop })
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&read_file(path)?)
    }

    /// Canonical `key = value` rendering; parsing it back reproduces the
    /// configuration exactly.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "problem = {}", self.problem.name());
        let _ = writeln!(out, "domain = {}", self.domain.name());
        match self.domain {
            Domain::BoundarySquare { side, per_side } => {
                let _ = writeln!(out, "side = {side}");
                let _ = writeln!(out, "per_side = {per_side}");
            }
            Domain::BoundaryPolygon { sides, radius } => {
                let _ = writeln!(out, "sides = {sides}");
                let _ = writeln!(out, "radius = {radius}");
            }
            Domain::UnitSquare | Domain::LShape => {}
        }
        match self.load {
            LoadSpec::Constant(c) => {
                let _ = writeln!(out, "f = {c}");
            }
            LoadSpec::UnitPotential => {
                let _ = writeln!(out, "f = unit_potential");
            }
        }
        if self.problem == Problem::Obstacle {
            let _ = writeln!(out, "chi = {}", self.obstacle.c);
            let _ = writeln!(out, "chi_x = {}", self.obstacle.a);
            let _ = writeln!(out, "chi_y = {}", self.obstacle.b);
        }
        let _ = writeln!(out, "strategy = {}", self.marking.strategy.name());
        let _ = writeln!(out, "theta = {}", self.marking.theta);
        let _ = writeln!(out, "eta_tol = {}", self.stop.eta_tol);
        let _ = writeln!(out, "max_elements = {}", self.stop.max_elements);
        let _ = writeln!(out, "max_levels = {}", self.stop.max_levels);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The aggregated estimator fell below `eta_tol` (or vanished exactly).
    Tolerance,
    MaxElements,
    MaxLevels,
    /// The marking strategy selected nothing.
    Converged,
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::Tolerance => "eta_tol",
            StopReason::MaxElements => "max_elements",
            StopReason::MaxLevels => "max_levels",
            StopReason::Converged => "converged",
        }
    }
}

/// One row of the run log.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub level: usize,
    pub n_elements: usize,
    pub n_dofs: usize,
    pub eta: f64,
    pub eta_marked: f64,
    pub n_marked: usize,
    pub energy: f64,
    pub diff_next: Option<f64>,
    pub wall_ms: f64,
}

/// Full outcome of an adaptive run: audit-ready level records, the log rows,
/// and a text dump of every mesh.
#[derive(Debug)]
pub struct RunLog {
    pub config: RunConfig,
    pub records: Vec<LevelRecord>,
    pub summaries: Vec<LevelSummary>,
    pub mesh_texts: Vec<String>,
    pub stop_reason: StopReason,
}

pub const RUN_LOG_HEADER: &str =
    "level,n_elements,n_dofs,eta,eta_marked,n_marked,energy,diff_next,wall_ms";
pub const PAIRS_HEADER: &str = "pair,eta_kept_coarse,eta_kept_fine,eta_new_sq,eta_refined_sq,diff";

impl RunLog {
    /// The run log as CSV. All columns except `wall_ms` are reproducible
    /// byte for byte across repeated runs of the same configuration.
    pub fn run_log_csv(&self) -> String {
        let mut out = String::from(RUN_LOG_HEADER);
        out.push('\n');
        for s in &self.summaries {
            let diff = s.diff_next.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.level,
                s.n_elements,
                s.n_dofs,
                s.eta,
                s.eta_marked,
                s.n_marked,
                s.energy,
                diff,
                s.wall_ms
            );
        }
        out
    }

    pub fn etas(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.eta).collect()
    }
}

/// One problem family plugged into the adaptive loop. `advance` refines by
/// the marked set, re-solves on the fine mesh (warm-started from the carried
/// coarse solution), and reports the energy norm of the solution update.
trait AdaptiveState {
    fn n_elements(&self) -> usize;
    fn n_dofs(&self) -> usize;
    fn mesh_id(&self) -> MeshId;
    fn mesh_text(&self) -> String;
    fn estimate(&self) -> Result<IndicatorField>;
    fn energy(&self) -> f64;
    fn advance(&mut self, marked: &[usize]) -> Result<(RefinementMap, f64)>;
}

struct PoissonState {
    mesh: Mesh2D,
    f: Load,
    u: DiscreteFunction,
}

impl PoissonState {
    fn new(mesh: Mesh2D, f: Load) -> Result<PoissonState> {
        let u = poisson::solve(&mesh, &f, None)?;
        Ok(PoissonState { mesh, f, u })
    }
}

impl AdaptiveState for PoissonState {
    fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    fn n_dofs(&self) -> usize {
        self.u.space.n_dofs
    }

    fn mesh_id(&self) -> MeshId {
        self.mesh.id
    }

    fn mesh_text(&self) -> String {
        self.mesh.to_text()
    }

    fn estimate(&self) -> Result<IndicatorField> {
        poisson::estimate_residual(&self.mesh, &self.f, &self.u)
    }

    fn energy(&self) -> f64 {
        poisson::energy_norm_sq(&self.mesh, &self.u)
    }

    fn advance(&mut self, marked: &[usize]) -> Result<(RefinementMap, f64)> {
        let (fine, map) = self.mesh.refine_nvb(marked)?;
        let guess = poisson::prolong(&self.u, &map, &fine)?;
        let u_fine = poisson::solve(&fine, &self.f, Some(&guess))?;
        let diff = poisson::energy_norm_diff(&fine, &u_fine, &self.u, &map)?;
        self.mesh = fine;
        self.u = u_fine;
        Ok((map, diff))
    }
}

struct ObstacleState {
    mesh: Mesh2D,
    prob: ObstacleProblem,
    sol: ObstacleSolution,
}

impl ObstacleState {
    fn new(mesh: Mesh2D, prob: ObstacleProblem) -> Result<ObstacleState> {
        let sol = obstacle::solve_obstacle(&mesh, &prob, None)?;
        Ok(ObstacleState { mesh, prob, sol })
    }
}

impl AdaptiveState for ObstacleState {
    fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    fn n_dofs(&self) -> usize {
        self.sol.u.space.n_dofs
    }

    fn mesh_id(&self) -> MeshId {
        self.mesh.id
    }

    fn mesh_text(&self) -> String {
        self.mesh.to_text()
    }

    fn estimate(&self) -> Result<IndicatorField> {
        obstacle::estimate_obstacle(&self.mesh, &self.prob, &self.sol.u)
    }

    /// −2·E(u): increases as the variational energy E decreases under
    /// refinement, so successive solution increments telescope into it.
    fn energy(&self) -> f64 {
        -2.0 * self.sol.energy
    }

    fn advance(&mut self, marked: &[usize]) -> Result<(RefinementMap, f64)> {
        let (fine, map) = self.mesh.refine_nvb(marked)?;
        let guess = poisson::prolong(&self.sol.u, &map, &fine)?;
        let sol_fine = obstacle::solve_obstacle(&fine, &self.prob, Some(&guess))?;
        let diff = poisson::energy_norm_diff(&fine, &sol_fine.u, &self.sol.u, &map)?;
        self.mesh = fine;
        self.sol = sol_fine;
        Ok((map, diff))
    }
}

struct SymmState {
    mesh: BoundaryMesh,
    data: BoundaryData,
    system: SingleLayerSystem,
    density: P0Density,
    energy: f64,
}

impl SymmState {
    fn new(mesh: BoundaryMesh, data: BoundaryData) -> Result<SymmState> {
        let system = bem::build_system(&mesh, &data);
        let density = bem::solve_symm(&system)?;
        let energy = bem::energy(&system, &density)?;
        Ok(SymmState { mesh, data, system, density, energy })
    }
}

impl AdaptiveState for SymmState {
    fn n_elements(&self) -> usize {
        self.mesh.n_segments()
    }

    fn n_dofs(&self) -> usize {
        self.mesh.n_segments()
    }

    fn mesh_id(&self) -> MeshId {
        self.mesh.id
    }

    fn mesh_text(&self) -> String {
        self.mesh.to_text()
    }

    fn estimate(&self) -> Result<IndicatorField> {
        bem::estimate_weaksing(&self.mesh, &self.data, &self.density)
    }

    fn energy(&self) -> f64 {
        self.energy
    }

    fn advance(&mut self, marked: &[usize]) -> Result<(RefinementMap, f64)> {
        let (fine, map) = self.mesh.refine(marked)?;
        let system = bem::build_system_incremental(&fine, &self.data, &self.system, &map)?;
        let density = bem::solve_symm(&system)?;
        let carried = bem::carry_density(&self.density, &map)?;
        let update = P0Density {
            mesh: fine.id,
            coefficients: density
                .coefficients
                .iter()
                .zip(&carried.coefficients)
                .map(|(new, old)| new - old)
                .collect(),
        };
        let diff = bem::energy(&system, &update)?.max(0.0).sqrt();
        self.energy = bem::energy(&system, &density)?;
        self.mesh = fine;
        self.system = system;
        self.density = density;
        Ok((map, diff))
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Solve–estimate–mark–refine until the stopping rule fires or the marking
/// comes back empty. Every marked set is verified against its strategy's
/// marking condition. Per-level wall time covers estimation, marking, and
/// the refine/solve producing the next level; the initial solve is charged
/// to level 0.
fn drive<S: AdaptiveState>(mut state: S, config: &RunConfig, setup_ms: f64) -> Result<RunLog> {
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut mesh_texts = Vec::new();
    let mut level = 0usize;
    let mut carry_ms = setup_ms;
    let stop_reason;
    loop {
        let t0 = Instant::now();
        let indicators = state.estimate()?;
        let eta = indicators.total();
        let n_elements = state.n_elements();
        let n_dofs = state.n_dofs();
        let energy = state.energy();
        let mesh = state.mesh_id();
        mesh_texts.push(state.mesh_text());

        let stop = if config.stop.eta_tol > 0.0 && eta <= config.stop.eta_tol {
            Some(StopReason::Tolerance)
        } else if eta == 0.0 {
            Some(StopReason::Tolerance)
        } else if config.stop.max_elements > 0 && n_elements >= config.stop.max_elements {
            Some(StopReason::MaxElements)
        } else if config.stop.max_levels > 0 && level + 1 >= config.stop.max_levels {
            Some(StopReason::MaxLevels)
        } else {
            None
        };
        let marked = match stop {
            Some(_) => Vec::new(),
            None => {
                let m = mark(&indicators, &config.marking)?;
                let check = verify_marking_condition(&indicators, &m, &config.marking);
                if !check.holds {
                    return Err(Error::numeric(format!(
                        "marking condition violated at level {level}: \
                         largest unmarked indicator {} exceeds bound {}",
                        check.lhs, check.rhs
                    )));
                }
                m
            }
        };
        let eta_marked = indicators.sum_squares(&marked).sqrt();
        let n_marked = marked.len();

        if stop.is_some() || marked.is_empty() {
            let wall_ms = carry_ms + elapsed_ms(t0);
            records.push(LevelRecord {
                level,
                mesh,
                indicators,
                energy,
                marked,
                map_to_next: None,
                diff_to_next: None,
            });
            summaries.push(LevelSummary {
                level,
                n_elements,
                n_dofs,
                eta,
                eta_marked,
                n_marked,
                energy,
                diff_next: None,
                wall_ms,
            });
            stop_reason = stop.unwrap_or(StopReason::Converged);
            break;
        }

        let (map, diff) = state.advance(&marked)?;
        let wall_ms = carry_ms + elapsed_ms(t0);
        carry_ms = 0.0;
        records.push(LevelRecord {
            level,
            mesh,
            indicators,
            energy,
            marked,
            map_to_next: Some(map),
            diff_to_next: Some(diff),
        });
        summaries.push(LevelSummary {
            level,
            n_elements,
            n_dofs,
            eta,
            eta_marked,
            n_marked,
            energy,
            diff_next: Some(diff),
            wall_ms,
        });
        level += 1;
    }
    Ok(RunLog { config: config.clone(), records, summaries, mesh_texts, stop_reason })
}

fn fem_mesh(config: &RunConfig) -> Result<Mesh2D> {
    match config.domain {
        Domain::UnitSquare => Ok(Mesh2D::unit_square()),
        Domain::LShape => Ok(Mesh2D::l_shape()),
        _ => Err(Error::config("volume problems need a triangulated domain")),
    }
}

fn fem_load(config: &RunConfig) -> Result<Load> {
    match config.load {
        LoadSpec::Constant(c) => Ok(Load::constant(c)),
        LoadSpec::UnitPotential => {
            Err(Error::config("load `unit_potential` only applies to the symm problem"))
        }
    }
}

pub fn run_adaptive(config: &RunConfig) -> Result<RunLog> {
    let t0 = Instant::now();
    match config.problem {
        Problem::Poisson => {
            let state = PoissonState::new(fem_mesh(config)?, fem_load(config)?)?;
            drive(state, config, elapsed_ms(t0))
        }
        Problem::Obstacle => {
            let prob = ObstacleProblem { f: fem_load(config)?, chi: config.obstacle };
            let state = ObstacleState::new(fem_mesh(config)?, prob)?;
            drive(state, config, elapsed_ms(t0))
        }
        Problem::Symm => {
            let mesh = match config.domain {
                Domain::BoundarySquare { side, per_side } => BoundaryMesh::square(side, per_side)?,
                Domain::BoundaryPolygon { sides, radius } => {
                    BoundaryMesh::regular_polygon(sides, radius)?
                }
                _ => return Err(Error::config("the symm problem needs a boundary domain")),
            };
            let data = match config.load {
                LoadSpec::Constant(c) => BoundaryData::constant(c),
                LoadSpec::UnitPotential => {
                    let ones = P0Density {
                        mesh: mesh.id,
                        coefficients: vec![1.0; mesh.n_segments()],
                    };
                    bem::potential_data(&mesh, &ones)?
                }
            };
            let state = SymmState::new(mesh, data)?;
            drive(state, config, elapsed_ms(t0))
        }
    }
}

/// Least-squares slope of log(eta) against log(#elements) over the last
/// `window` levels; needs one level more than the window.
pub fn rate_from_points(n_elements: &[usize], etas: &[f64], window: usize) -> Result<f64> {
    if window < 2 {
        return Err(Error::precondition("rate window must span at least two levels"));
    }
    if n_elements.len() != etas.len() {
        return Err(Error::precondition("element counts and estimator values differ in length"));
    }
    if n_elements.len() < window + 1 {
        return Err(Error::precondition(format!(
            "rate estimate needs at least {} levels, got {}",
            window + 1,
            n_elements.len()
        )));
    }
    let lo = n_elements.len() - window;
    if etas[lo..].iter().any(|&e| e <= 0.0) {
        return Err(Error::precondition("estimator vanished inside the rate window"));
    }
    let xs: Vec<f64> = n_elements[lo..].iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = etas[lo..].iter().map(|&e| e.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if sxx == 0.0 {
        return Err(Error::precondition("element counts do not vary inside the rate window"));
    }
    Ok(sxy / sxx)
}

pub fn estimate_rate(log: &RunLog, window: usize) -> Result<f64> {
    let ns: Vec<usize> = log.summaries.iter().map(|s| s.n_elements).collect();
    rate_from_points(&ns, &log.etas(), window)
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read `{}`: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::config(format!("cannot write `{}`: {e}", path.display())))
}

fn mesh_file_name(level: usize) -> String {
    format!("mesh_{level:03}.txt")
}

fn pairs_csv(records: &[LevelRecord]) -> Result<String> {
    let mut out = String::from(PAIRS_HEADER);
    out.push('\n');
    for l in 0..records.len().saturating_sub(1) {
        let t = pair_totals(&records[l], &records[l + 1])?;
        let _ = writeln!(
            out,
            "{}-{},{},{},{},{},{}",
            l,
            l + 1,
            t.eta_kept_coarse,
            t.eta_kept_fine,
            t.eta_new_sq,
            t.eta_refined_sq,
            t.diff
        );
    }
    Ok(out)
}

/// Writes a run directory: the echoed configuration, the run log, the
/// per-pair estimator aggregates, and one mesh file per level.
pub fn write_run(log: &RunLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config(format!("cannot create `{}`: {e}", dir.display())))?;
    write_file(&dir.join("config.txt"), &log.config.echo())?;
    write_file(&dir.join("run_log.csv"), &log.run_log_csv())?;
    write_file(&dir.join("pairs.csv"), &pairs_csv(&log.records)?)?;
    for (level, text) in log.mesh_texts.iter().enumerate() {
        write_file(&dir.join(mesh_file_name(level)), text)?;
    }
    Ok(())
}

fn csv_rows<'a>(text: &'a str, header: &str, what: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        _ => return Err(Error::input(1, format!("{what}: expected header `{header}`"))),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        rows.push((idx + 1, line.split(',').collect()));
    }
    Ok(rows)
}

fn field_f64(fields: &[&str], pos: usize, line: usize) -> Result<f64> {
    fields[pos]
        .parse()
        .map_err(|_| Error::input(line, format!("`{}` is not a number", fields[pos])))
}

fn field_usize(fields: &[&str], pos: usize, line: usize) -> Result<usize> {
    fields[pos]
        .parse()
        .map_err(|_| Error::input(line, format!("`{}` is not a count", fields[pos])))
}

pub fn parse_run_log(text: &str) -> Result<Vec<LevelSummary>> {
    let mut out = Vec::new();
    for (line, fields) in csv_rows(text, RUN_LOG_HEADER, "run log")? {
        if fields.len() != 9 {
            return Err(Error::input(line, format!("expected 9 fields, got {}", fields.len())));
        }
        out.push(LevelSummary {
            level: field_usize(&fields, 0, line)?,
            n_elements: field_usize(&fields, 1, line)?,
            n_dofs: field_usize(&fields, 2, line)?,
            eta: field_f64(&fields, 3, line)?,
            eta_marked: field_f64(&fields, 4, line)?,
            n_marked: field_usize(&fields, 5, line)?,
            energy: field_f64(&fields, 6, line)?,
            diff_next: if fields[7].is_empty() { None } else { Some(field_f64(&fields, 7, line)?) },
            wall_ms: field_f64(&fields, 8, line)?,
        });
    }
    Ok(out)
}

fn parse_pairs(text: &str) -> Result<Vec<PairTotals>> {
    let mut out = Vec::new();
    for (i, (line, fields)) in csv_rows(text, PAIRS_HEADER, "pair table")?.into_iter().enumerate() {
        if fields.len() != 6 {
            return Err(Error::input(line, format!("expected 6 fields, got {}", fields.len())));
        }
        let label = format!("{}-{}", i, i + 1);
        if fields[0] != label {
            return Err(Error::input(line, format!("expected pair `{label}`, got `{}`", fields[0])));
        }
        out.push(PairTotals {
            eta_kept_coarse: field_f64(&fields, 1, line)?,
            eta_kept_fine: field_f64(&fields, 2, line)?,
            eta_new_sq: field_f64(&fields, 3, line)?,
            eta_refined_sq: field_f64(&fields, 4, line)?,
            diff: field_f64(&fields, 5, line)?,
        });
    }
    Ok(out)
}

fn trivial_audit() -> AxiomAudit {
    AxiomAudit {
        q_red: DEFAULT_Q_RED,
        c_cap: DEFAULT_C_CAP,
        pairs: Vec::new(),
        c_stab_fit: 0.0,
        c_red_fit: 0.0,
        apriori: AprioriCheck {
            increments: Vec::new(),
            cumulative: Vec::new(),
            energy_gain: 0.0,
            pass: true,
        },
        doerfler: None,
        convergence: None,
        pass: true,
    }
}

/// Re-runs the estimator audits from a run directory's artifacts. A
/// single-level run has nothing to check and passes trivially.
pub fn audit_run_dir(dir: &Path) -> Result<AxiomAudit> {
    let config = RunConfig::parse(&read_file(&dir.join("config.txt"))?)?;
    let summaries = parse_run_log(&read_file(&dir.join("run_log.csv"))?)?;
    let totals = parse_pairs(&read_file(&dir.join("pairs.csv"))?)?;
    if summaries.len() < 2 {
        return Ok(trivial_audit());
    }
    if totals.len() + 1 != summaries.len() {
        return Err(Error::precondition(format!(
            "pair table has {} rows for {} levels",
            totals.len(),
            summaries.len()
        )));
    }
    let mut pairs = Vec::with_capacity(totals.len());
    for (l, t) in totals.iter().enumerate() {
        let stab = stability_from_totals(t.eta_kept_coarse, t.eta_kept_fine, t.diff, DEFAULT_C_CAP);
        let red = reduction_from_totals(
            t.eta_new_sq,
            t.eta_refined_sq,
            DEFAULT_Q_RED,
            t.diff,
            DEFAULT_C_CAP,
        );
        pairs.push(PairAudit {
            coarse_level: l,
            fine_level: l + 1,
            slack: stab.slack,
            c_stab: stab.c_est,
            residual: red.residual,
            c_red: red.c_est,
            diff: t.diff,
            pass: stab.pass && red.pass,
        });
    }
    let energies: Vec<f64> = summaries.iter().map(|s| s.energy).collect();
    let diffs: Vec<f64> = totals.iter().map(|t| t.diff).collect();
    let etas: Vec<f64> = summaries.iter().map(|s| s.eta).collect();
    let apriori = apriori_from_values(&energies, &diffs)?;
    let doerfler = match config.marking.strategy {
        Strategy::DoerflerSorted | Strategy::DoerflerMin => {
            Some(doerfler_fit_from_etas(&etas, &diffs, &config.marking, None, DEFAULT_C_CAP)?)
        }
        _ => None,
    };
    let convergence = if etas.len() >= 6 {
        Some(convergence_from_etas(&etas, DEFAULT_TAIL_TARGET)?)
    } else {
        None
    };
    let pass = pairs.iter().all(|p| p.pass)
        && apriori.pass
        && doerfler.as_ref().map_or(true, |f| f.pass);
    let c_stab_fit = pairs_max(&pairs, |p| p.c_stab);
    let c_red_fit = pairs_max(&pairs, |p| p.c_red);
    Ok(AxiomAudit {
        q_red: DEFAULT_Q_RED,
        c_cap: DEFAULT_C_CAP,
        pairs,
        c_stab_fit,
        c_red_fit,
        apriori,
        doerfler,
        convergence,
        pass,
    })
}

fn pairs_max(pairs: &[PairAudit], pick: impl Fn(&PairAudit) -> Option<f64>) -> f64 {
    pairs.iter().filter_map(pick).fold(0.0_f64, f64::max)
}

fn parse_flags(args: &[String], allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let name = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::config(format!("unexpected argument `{arg}`")))?;
        if !allowed.contains(&name) {
            return Err(Error::config(format!("unknown flag `{arg}`")));
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| Error::config(format!("flag `{arg}` needs a value")))?;
        if out.insert(name.to_string(), value.clone()).is_some() {
            return Err(Error::config(format!("duplicate flag `{arg}`")));
        }
        i += 2;
    }
    Ok(out)
}

fn required_flag<'a>(flags: &'a BTreeMap<String, String>, name: &str) -> Result<&'a str> {
    flags
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| Error::config(format!("missing flag `--{name}`")))
}

fn dispatch(args: &[String]) -> Result<i32> {
    let command = args.first().map(String::as_str).ok_or_else(|| {
        Error::config("missing subcommand: expected run, audit, rates, or dump-mesh")
    })?;
    let rest = &args[1..];
    match command {
        "run" => {
            let flags = parse_flags(rest, &["config", "out"])?;
            let config = RunConfig::from_file(&PathBuf::from(required_flag(&flags, "config")?))?;
            let out = PathBuf::from(required_flag(&flags, "out")?);
            let log = run_adaptive(&config)?;
            write_run(&log, &out)?;
            let last = log.summaries.last().expect("a run always has a first level");
            println!(
                "{} levels, {} elements, eta {}",
                log.summaries.len(),
                last.n_elements,
                last.eta
            );
            println!("stopped by {}", log.stop_reason.name());
            Ok(0)
        }
        "audit" => {
            let flags = parse_flags(rest, &["out"])?;
            let dir = PathBuf::from(required_flag(&flags, "out")?);
            let audit = audit_run_dir(&dir)?;
            write_file(&dir.join("axiom_report.csv"), &axioms::axiom_report_csv(&audit))?;
            println!("audit: {}", if audit.pass { "pass" } else { "fail" });
            Ok(if audit.pass { 0 } else { 4 })
        }
        "rates" => {
            let flags = parse_flags(rest, &["out", "window"])?;
            let dir = PathBuf::from(required_flag(&flags, "out")?);
            let window = match flags.get("window") {
                None => 8,
                Some(v) => v.parse().map_err(|_| {
                    Error::config(format!("flag `--window`: `{v}` is not a count"))
                })?,
            };
            let summaries = parse_run_log(&read_file(&dir.join("run_log.csv"))?)?;
            let ns: Vec<usize> = summaries.iter().map(|s| s.n_elements).collect();
            let etas: Vec<f64> = summaries.iter().map(|s| s.eta).collect();
            let slope = rate_from_points(&ns, &etas, window)?;
            println!("{slope}");
            Ok(0)
        }
        "dump-mesh" => {
            let flags = parse_flags(rest, &["out", "level"])?;
            let dir = PathBuf::from(required_flag(&flags, "out")?);
            let level = match flags.get("level") {
                None => 0,
                Some(v) => v.parse().map_err(|_| {
                    Error::config(format!("flag `--level`: `{v}` is not a count"))
                })?,
            };
            print!("{}", read_file(&dir.join(mesh_file_name(level)))?);
            Ok(0)
        }
        other => Err(Error::config(format!(
            "unknown subcommand `{other}` (expected run, audit, rates, or dump-mesh)"
        ))),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solver { .. } | Error::Numeric(_) => 3,
        _ => 2,
    }
}

/// Command-line entry point. Exit codes: 0 success, 2 bad configuration or
/// usage, 3 solver failure, 4 failed audit.
pub fn cli_main(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
