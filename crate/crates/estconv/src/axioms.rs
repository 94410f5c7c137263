//! Numeric audits of the estimator properties that drive adaptive
//! convergence: stability on kept elements, reduction on refined elements,
//! a-priori convergence of the discrete solutions, the geometric-limit
//! recurrence, and the marking-driven contraction fit.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::marking::{IndicatorField, MarkingConfig, Strategy};
use crate::refinement::{MeshId, RefinementMap};

pub const DEFAULT_C_CAP: f64 = 10.0;
pub const DEFAULT_Q_RED: f64 = FRAC_1_SQRT_2;
pub const DEFAULT_TAIL_TARGET: f64 = 0.1;

const STABILITY_TOL: f64 = 1e-12;
const REDUCTION_TOL: f64 = 1e-12;
const APRIORI_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-13;
const BOUND_TOL: f64 = 1e-12;
const FIT_TOL: f64 = 1e-10;

/// One adaptive level: indicators, an energy surrogate whose increments
/// bound the squared solution increments, the marked set, and the link to
/// the next level.
#[derive(Clone, Debug)]
pub struct LevelRecord {
    pub level: usize,
    pub mesh: MeshId,
    pub indicators: IndicatorField,
    pub energy: f64,
    pub marked: Vec<usize>,
    pub map_to_next: Option<RefinementMap>,
    pub diff_to_next: Option<f64>,
}

impl LevelRecord {
    /// Aggregated estimator of the level, the l2 total of the indicators.
    pub fn eta(&self) -> f64 {
        self.indicators.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StabilityCheck {
    pub slack: f64,
    pub c_est: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ReductionCheck {
    pub residual: f64,
    pub c_est: Option<f64>,
    pub pass: bool,
}

fn l2_over(values: &[f64], ids: impl Iterator<Item = usize>) -> f64 {
    ids.map(|i| values[i] * values[i]).sum::<f64>().sqrt()
}

fn chained_map<'a>(coarse: &'a LevelRecord, fine: &LevelRecord) -> Result<&'a RefinementMap> {
    let map = coarse
        .map_to_next
        .as_ref()
        .ok_or_else(|| Error::precondition("coarse record carries no refinement map"))?;
    validate_map(map, coarse, fine)?;
    Ok(map)
}

fn validate_map(map: &RefinementMap, coarse: &LevelRecord, fine: &LevelRecord) -> Result<()> {
    if map.coarse != coarse.mesh || map.fine != fine.mesh {
        return Err(Error::precondition(
            "records are not chained by the refinement map",
        ));
    }
    if coarse.indicators.mesh != coarse.mesh || fine.indicators.mesh != fine.mesh {
        return Err(Error::precondition("indicators do not belong to their record's mesh"));
    }
    if coarse.indicators.len() != map.n_coarse_elements
        || fine.indicators.len() != map.n_fine_elements
    {
        return Err(Error::precondition("indicator lengths disagree with the refinement map"));
    }
    Ok(())
}

fn required_diff(rec: &LevelRecord) -> Result<f64> {
    rec.diff_to_next
        .ok_or_else(|| Error::precondition("record carries no solution increment"))
}

/// Stability from precomputed aggregates: the l2 totals of the indicators
/// over kept elements on both levels and the solution increment.
pub fn stability_from_totals(
    kept_coarse: f64,
    kept_fine: f64,
    diff: f64,
    c_cap: f64,
) -> StabilityCheck {
    let slack = kept_fine - kept_coarse;
    let c_est = (diff > 1e-14).then(|| slack.max(0.0) / diff);
    StabilityCheck { slack, c_est, pass: slack <= c_cap * diff + STABILITY_TOL }
}

/// Reduction from precomputed aggregates: the squared indicator sums over
/// new fine elements and refined coarse elements and the solution increment.
pub fn reduction_from_totals(
    new_sq: f64,
    refined_sq: f64,
    q: f64,
    diff: f64,
    c_cap: f64,
) -> ReductionCheck {
    let residual = new_sq - q * refined_sq;
    let c_est = (diff > 1e-14).then(|| residual.max(0.0) / (diff * diff));
    ReductionCheck { residual, c_est, pass: residual <= c_cap * diff * diff + REDUCTION_TOL }
}

/// The aggregates entering the stability and reduction checks of one
/// refinement step, as kept by run artifacts.
#[derive(Clone, Copy, Debug)]
pub struct PairTotals {
    pub eta_kept_coarse: f64,
    pub eta_kept_fine: f64,
    pub eta_new_sq: f64,
    pub eta_refined_sq: f64,
    pub diff: f64,
}

/// Computes the stability/reduction aggregates of a chained record pair.
pub fn pair_totals(coarse: &LevelRecord, fine: &LevelRecord) -> Result<PairTotals> {
    let map = chained_map(coarse, fine)?;
    let diff = required_diff(coarse)?;
    let classes = map.classify();
    Ok(PairTotals {
        eta_kept_coarse: l2_over(coarse.indicators.values(), map.kept.iter().map(|&(c, _)| c)),
        eta_kept_fine: l2_over(fine.indicators.values(), map.kept.iter().map(|&(_, f)| f)),
        eta_new_sq: classes.new_fine.iter().map(|&i| fine.indicators.values()[i].powi(2)).sum(),
        eta_refined_sq: classes
            .refined_coarse
            .iter()
            .map(|&i| coarse.indicators.values()[i].powi(2))
            .sum(),
        diff,
    })
}

fn stability_core(
    coarse: &IndicatorField,
    fine: &IndicatorField,
    map: &RefinementMap,
    diff: f64,
    c_cap: f64,
) -> StabilityCheck {
    let kept_fine = l2_over(fine.values(), map.kept.iter().map(|&(_, f)| f));
    let kept_coarse = l2_over(coarse.values(), map.kept.iter().map(|&(c, _)| c));
    stability_from_totals(kept_coarse, kept_fine, diff, c_cap)
}

fn reduction_core(
    coarse: &IndicatorField,
    fine: &IndicatorField,
    map: &RefinementMap,
    q: f64,
    diff: f64,
    c_cap: f64,
) -> ReductionCheck {
    let classes = map.classify();
    let new_sq: f64 = classes.new_fine.iter().map(|&i| fine.values()[i].powi(2)).sum();
    let refined_sq: f64 =
        classes.refined_coarse.iter().map(|&i| coarse.values()[i].powi(2)).sum();
    reduction_from_totals(new_sq, refined_sq, q, diff, c_cap)
}

/// Stability on kept elements: the aggregated fine indicator over kept
/// elements may exceed the coarse one by at most a multiple of the solution
/// increment.
pub fn check_stability(
    coarse: &LevelRecord,
    fine: &LevelRecord,
    c_cap: f64,
) -> Result<StabilityCheck> {
    let map = chained_map(coarse, fine)?;
    let diff = required_diff(coarse)?;
    Ok(stability_core(&coarse.indicators, &fine.indicators, map, diff, c_cap))
}

/// Reduction on refined elements: the squared indicators of new elements
/// must fall below `q` times the squared indicators of their parents, up to
/// a multiple of the squared solution increment.
pub fn check_reduction(
    coarse: &LevelRecord,
    fine: &LevelRecord,
    q: f64,
    c_cap: f64,
) -> Result<ReductionCheck> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::precondition(format!(
            "reduction factor must lie in (0,1), got {q}"
        )));
    }
    let map = chained_map(coarse, fine)?;
    let diff = required_diff(coarse)?;
    Ok(reduction_core(&coarse.indicators, &fine.indicators, map, q, diff, c_cap))
}

/// Composes the per-level maps between two levels and aggregates the
/// solution increments over the span (exact for nested Galerkin solutions).
pub fn span_between(
    records: &[LevelRecord],
    from: usize,
    to: usize,
) -> Result<(RefinementMap, f64)> {
    if from >= to || to >= records.len() {
        return Err(Error::precondition(format!(
            "invalid level span {from}..{to} over {} records",
            records.len()
        )));
    }
    let mut map = chained_map(&records[from], &records[from + 1])?.clone();
    let mut diff_sq = required_diff(&records[from])?.powi(2);
    for k in from + 1..to {
        let next = chained_map(&records[k], &records[k + 1])?;
        map = map.compose(next)?;
        diff_sq += required_diff(&records[k])?.powi(2);
    }
    Ok((map, diff_sq.sqrt()))
}

pub fn check_stability_span(
    records: &[LevelRecord],
    from: usize,
    to: usize,
    c_cap: f64,
) -> Result<StabilityCheck> {
    let (map, diff) = span_between(records, from, to)?;
    Ok(stability_core(&records[from].indicators, &records[to].indicators, &map, diff, c_cap))
}

pub fn check_reduction_span(
    records: &[LevelRecord],
    from: usize,
    to: usize,
    q: f64,
    c_cap: f64,
) -> Result<ReductionCheck> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::precondition(format!(
            "reduction factor must lie in (0,1), got {q}"
        )));
    }
    let (map, diff) = span_between(records, from, to)?;
    Ok(reduction_core(&records[from].indicators, &records[to].indicators, &map, q, diff, c_cap))
}

#[derive(Clone, Debug)]
pub struct AprioriCheck {
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub energy_gain: f64,
    pub pass: bool,
}

/// A-priori convergence from the raw per-level data: `increments` are the
/// energy norms of the solution updates (one fewer than the levels) and the
/// energy gain is taken between the last and first level.
pub fn apriori_from_values(energies: &[f64], increments: &[f64]) -> Result<AprioriCheck> {
    if energies.len() < 2 || increments.len() + 1 != energies.len() {
        return Err(Error::precondition(
            "a-priori check needs at least two levels with one increment per step",
        ));
    }
    let increments = increments.to_vec();
    let mut cumulative = Vec::with_capacity(increments.len());
    let mut acc = 0.0;
    for d in &increments {
        acc += d * d;
        cumulative.push(acc);
    }
    let energy_gain = energies[energies.len() - 1] - energies[0];
    let sum_ok = acc <= energy_gain + APRIORI_TOL;
    let trend_ok = if increments.len() >= 6 {
        let early: f64 = increments[..3].iter().sum();
        let late: f64 = increments[increments.len() - 3..].iter().sum();
        late <= early + 1e-12
    } else {
        true
    };
    Ok(AprioriCheck { increments, cumulative, energy_gain, pass: sum_ok && trend_ok })
}

/// A-priori convergence of the discrete solutions: the squared increments
/// telescope into the energy gain, and late increments do not exceed early
/// ones.
pub fn check_apriori(records: &[LevelRecord]) -> Result<AprioriCheck> {
    if records.len() < 2 {
        return Err(Error::precondition("a-priori check needs at least two levels"));
    }
    let energies: Vec<f64> = records.iter().map(|r| r.energy).collect();
    let mut increments = Vec::with_capacity(records.len() - 1);
    for rec in &records[..records.len() - 1] {
        increments.push(required_diff(rec)?);
    }
    apriori_from_values(&energies, &increments)
}

#[derive(Clone, Debug)]
pub struct ContractionCheck {
    pub holds: bool,
    pub bound: Vec<f64>,
}

/// Geometric-limit recurrence: if a_{l+1} <= rho*a_l + b_l throughout, then
/// a_l stays below the explicit bound rho^l*a_0 + sum_{j<l} rho^(l-1-j)*b_j.
pub fn contraction_limit_check(a: &[f64], rho: f64, b: &[f64]) -> Result<ContractionCheck> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::precondition(format!(
            "contraction factor must lie in (0,1), got {rho}"
        )));
    }
    if a.len() != b.len() {
        return Err(Error::precondition(format!(
            "sequence lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::precondition("sequences must be nonnegative and finite"));
    }
    if a.is_empty() {
        return Ok(ContractionCheck { holds: true, bound: Vec::new() });
    }
    let holds = (0..a.len() - 1).all(|l| a[l + 1] <= rho * a[l] + b[l] + STEP_TOL);
    let mut bound = Vec::with_capacity(a.len());
    bound.push(a[0]);
    for l in 0..a.len() - 1 {
        bound.push(rho * bound[l] + b[l]);
    }
    if holds {
        for (l, (&al, &bl)) in a.iter().zip(&bound).enumerate() {
            if al > bl + BOUND_TOL {
                return Err(Error::numeric(format!(
                    "recurrence holds but a_{l} = {al} exceeds its bound {bl}"
                )));
            }
        }
    }
    Ok(ContractionCheck { holds, bound })
}

pub const CONTRACTION_DELTAS: [f64; 5] = [0.5, 0.25, 0.1, 0.05, 0.01];

/// Contraction factor implied by bulk marking with parameter `theta` and
/// quadratic-term weight `delta`.
pub fn doerfler_rho(theta: f64, delta: f64) -> f64 {
    (1.0 + delta) - ((1.0 + delta) - DEFAULT_Q_RED) * theta
}

#[derive(Clone, Debug)]
pub struct DoerflerFit {
    pub delta: f64,
    pub rho: f64,
    pub b: Vec<f64>,
    pub pass: bool,
}

/// Fits the contraction inequality eta_{l+1}^2 <= rho*eta_l^2 + b_l implied
/// by bulk marking: `delta` is the largest tabulated value keeping rho below
/// one (or a caller-pinned one), and the clipped remainders b_l must be
/// controlled by the squared solution increments.
pub fn doerfler_fit_from_etas(
    etas: &[f64],
    diffs: &[f64],
    marking: &MarkingConfig,
    delta_override: Option<f64>,
    c_cap: f64,
) -> Result<DoerflerFit> {
    if !matches!(marking.strategy, Strategy::DoerflerSorted | Strategy::DoerflerMin) {
        return Err(Error::config(format!(
            "contraction fit requires a bulk marking strategy, run used {}",
            marking.strategy.name()
        )));
    }
    let theta = marking.theta;
    let delta = match delta_override {
        Some(d) => {
            if !(doerfler_rho(theta, d) < 1.0) {
                return Err(Error::config(format!(
                    "delta {d} gives contraction factor {} >= 1 at theta {theta}",
                    doerfler_rho(theta, d)
                )));
            }
            d
        }
        None => CONTRACTION_DELTAS
            .iter()
            .copied()
            .find(|&d| doerfler_rho(theta, d) < 1.0)
            .ok_or_else(|| {
                Error::config(format!("no tabulated delta contracts at theta {theta}"))
            })?,
    };
    let rho = doerfler_rho(theta, delta);
    if etas.len() < 2 || diffs.len() + 1 != etas.len() {
        return Err(Error::precondition(
            "contraction fit needs at least two levels with one increment per step",
        ));
    }
    let etas_sq: Vec<f64> = etas.iter().map(|e| e * e).collect();
    let mut b = Vec::with_capacity(etas.len() - 1);
    let mut pass = true;
    for l in 0..etas.len() - 1 {
        let bl = (etas_sq[l + 1] - rho * etas_sq[l]).max(0.0);
        let d = diffs[l];
        if bl > c_cap * d * d + FIT_TOL {
            pass = false;
        }
        b.push(bl);
    }
    Ok(DoerflerFit { delta, rho, b, pass })
}

/// Record-based front end of [`doerfler_fit_from_etas`].
pub fn fit_doerfler_contraction(
    records: &[LevelRecord],
    marking: &MarkingConfig,
    delta_override: Option<f64>,
    c_cap: f64,
) -> Result<DoerflerFit> {
    if records.len() < 2 {
        return Err(Error::precondition("contraction fit needs at least two levels"));
    }
    let etas: Vec<f64> = records.iter().map(LevelRecord::eta).collect();
    let mut diffs = Vec::with_capacity(records.len() - 1);
    for rec in &records[..records.len() - 1] {
        diffs.push(required_diff(rec)?);
    }
    doerfler_fit_from_etas(&etas, &diffs, marking, delta_override, c_cap)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvergenceReport {
    pub tail_ratio: f64,
    pub decayed: bool,
}

/// Plain estimator convergence: the last aggregated indicator against the
/// largest among the first three levels.
pub fn convergence_from_etas(etas: &[f64], target: f64) -> Result<ConvergenceReport> {
    if etas.len() < 6 {
        return Err(Error::precondition(format!(
            "convergence report needs at least six levels, got {}",
            etas.len()
        )));
    }
    let head = etas[..3].iter().copied().fold(0.0_f64, f64::max);
    let last = etas[etas.len() - 1];
    let tail_ratio = if head == 0.0 {
        if last == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        last / head
    };
    Ok(ConvergenceReport { tail_ratio, decayed: tail_ratio <= target })
}

/// Record-based front end of [`convergence_from_etas`].
pub fn estimator_convergence_report(
    records: &[LevelRecord],
    target: f64,
) -> Result<ConvergenceReport> {
    let etas: Vec<f64> = records.iter().map(LevelRecord::eta).collect();
    convergence_from_etas(&etas, target)
}

#[derive(Clone, Debug)]
pub struct PairAudit {
    pub coarse_level: usize,
    pub fine_level: usize,
    pub slack: f64,
    pub c_stab: Option<f64>,
    pub residual: f64,
    pub c_red: Option<f64>,
    pub diff: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct AxiomAudit {
    pub q_red: f64,
    pub c_cap: f64,
    pub pairs: Vec<PairAudit>,
    pub c_stab_fit: f64,
    pub c_red_fit: f64,
    pub apriori: AprioriCheck,
    pub doerfler: Option<DoerflerFit>,
    pub convergence: Option<ConvergenceReport>,
    pub pass: bool,
}

/// Runs every per-pair and whole-run audit over a level sequence. The
/// contraction fit applies only to bulk-marking runs; the convergence report
/// needs at least six levels. Neither gates `pass` unless applicable.
pub fn audit_records(
    records: &[LevelRecord],
    q: f64,
    c_cap: f64,
    marking: Option<&MarkingConfig>,
    delta_override: Option<f64>,
) -> Result<AxiomAudit> {
    if records.len() < 2 {
        return Err(Error::precondition("audit needs at least two levels"));
    }
    let mut pairs = Vec::with_capacity(records.len() - 1);
    for l in 0..records.len() - 1 {
        let stab = check_stability(&records[l], &records[l + 1], c_cap)?;
        let red = check_reduction(&records[l], &records[l + 1], q, c_cap)?;
        pairs.push(PairAudit {
            coarse_level: records[l].level,
            fine_level: records[l + 1].level,
            slack: stab.slack,
            c_stab: stab.c_est,
            residual: red.residual,
            c_red: red.c_est,
            diff: required_diff(&records[l])?,
            pass: stab.pass && red.pass,
        });
    }
    let c_stab_fit = pairs.iter().filter_map(|p| p.c_stab).fold(0.0_f64, f64::max);
    let c_red_fit = pairs.iter().filter_map(|p| p.c_red).fold(0.0_f64, f64::max);
    let apriori = check_apriori(records)?;
    let doerfler = match marking {
        Some(m) if matches!(m.strategy, Strategy::DoerflerSorted | Strategy::DoerflerMin) => {
            Some(fit_doerfler_contraction(records, m, delta_override, c_cap)?)
        }
        _ => None,
    };
    let convergence = if records.len() >= 6 {
        Some(estimator_convergence_report(records, DEFAULT_TAIL_TARGET)?)
    } else {
        None
    };
    let pass = pairs.iter().all(|p| p.pass)
        && apriori.pass
        && doerfler.as_ref().map_or(true, |f| f.pass);
    Ok(AxiomAudit {
        q_red: q,
        c_cap,
        pairs,
        c_stab_fit,
        c_red_fit,
        apriori,
        doerfler,
        convergence,
        pass,
    })
}

/// Renders the per-pair audit table as CSV; undefined fitted constants
/// (vanishing increment) print as empty fields.
pub fn axiom_report_csv(audit: &AxiomAudit) -> String {
    let mut out = String::from("pair,slack,C_stab_est,residual,C_red_est,d,pass\n");
    for p in &audit.pairs {
        let c_stab = p.c_stab.map(|v| v.to_string()).unwrap_or_default();
        let c_red = p.c_red.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{}-{},{},{},{},{},{},{}\n",
            p.coarse_level, p.fine_level, p.slack, c_stab, p.residual, c_red, p.diff, p.pass
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh2d::Mesh2D;
    use crate::poisson::{self, Load};
    use crate::refinement::fresh_mesh_id;
    use rand::{RngExt, SeedableRng};

    fn synthetic(etas: &[f64], diffs: &[f64]) -> Vec<LevelRecord> {
        etas.iter()
            .enumerate()
            .map(|(l, &eta)| {
                let mesh = fresh_mesh_id();
                LevelRecord {
                    level: l,
                    mesh,
                    indicators: IndicatorField::new(mesh, vec![eta]).unwrap(),
                    energy: 0.0,
                    marked: Vec::new(),
                    map_to_next: None,
                    diff_to_next: diffs.get(l).copied(),
                }
            })
            .collect()
    }

    fn frozen_poisson_pair(marked: &[usize]) -> (LevelRecord, LevelRecord) {
        let mesh = Mesh2D::l_shape();
        let (mesh, _) = mesh.refine_all().unwrap();
        let f = Load::constant(1.0);
        let u = poisson::solve(&mesh, &f, None).unwrap();
        let eta_coarse = poisson::estimate_residual(&mesh, &f, &u).unwrap();
        let (fine, map) = mesh.refine_nvb(marked).unwrap();
        let carried = poisson::prolong(&u, &map, &fine).unwrap();
        let eta_fine = poisson::estimate_residual(&fine, &f, &carried).unwrap();
        let coarse_rec = LevelRecord {
            level: 0,
            mesh: mesh.id,
            indicators: eta_coarse,
            energy: poisson::energy_norm_sq(&mesh, &u),
            marked: marked.to_vec(),
            map_to_next: Some(map),
            diff_to_next: Some(0.0),
        };
        let fine_rec = LevelRecord {
            level: 1,
            mesh: fine.id,
            indicators: eta_fine,
            energy: poisson::energy_norm_sq(&fine, &carried),
            marked: Vec::new(),
            map_to_next: None,
            diff_to_next: None,
        };
        (coarse_rec, fine_rec)
    }

    #[test]
    fn test_frozen_solution_passes_stability_and_reduction_tightly() {
        let (coarse, fine) = frozen_poisson_pair(&[0, 3, 7]);
        let stab = check_stability(&coarse, &fine, DEFAULT_C_CAP).unwrap();
        assert!(stab.pass);
        assert!(stab.slack <= 1e-12, "slack {}", stab.slack);
        assert!(stab.c_est.is_none());
        let red = check_reduction(&coarse, &fine, DEFAULT_Q_RED, DEFAULT_C_CAP).unwrap();
        assert!(red.pass);
        assert!(red.residual <= 1e-12, "residual {}", red.residual);
    }

    #[test]
    fn test_refining_nothing_gives_zero_slack_and_residual() {
        let (coarse, fine) = frozen_poisson_pair(&[]);
        let stab = check_stability(&coarse, &fine, DEFAULT_C_CAP).unwrap();
        assert_eq!(stab.slack, 0.0);
        assert!(stab.pass);
        let red = check_reduction(&coarse, &fine, DEFAULT_Q_RED, DEFAULT_C_CAP).unwrap();
        assert_eq!(red.residual, 0.0);
        assert!(red.pass);
    }

    #[test]
    fn test_refining_everything_leaves_the_kept_terms_empty() {
        let mesh = Mesh2D::unit_square();
        let f = Load::constant(1.0);
        let u = poisson::solve(&mesh, &f, None).unwrap();
        let eta = poisson::estimate_residual(&mesh, &f, &u).unwrap();
        let (fine, map) = mesh.refine_all().unwrap();
        let carried = poisson::prolong(&u, &map, &fine).unwrap();
        let eta_fine = poisson::estimate_residual(&fine, &f, &carried).unwrap();
        let coarse_rec = LevelRecord {
            level: 0,
            mesh: mesh.id,
            indicators: eta,
            energy: 0.0,
            marked: vec![0, 1],
            map_to_next: Some(map),
            diff_to_next: Some(0.0),
        };
        let fine_rec = LevelRecord {
            level: 1,
            mesh: fine.id,
            indicators: eta_fine,
            energy: 0.0,
            marked: Vec::new(),
            map_to_next: None,
            diff_to_next: None,
        };
        let stab = check_stability(&coarse_rec, &fine_rec, DEFAULT_C_CAP).unwrap();
        assert_eq!(stab.slack, 0.0);
        assert!(stab.pass);
    }

    #[test]
    fn test_unchained_records_are_rejected() {
        let (coarse, _) = frozen_poisson_pair(&[0]);
        let (other_coarse, other_fine) = frozen_poisson_pair(&[1]);
        assert!(check_stability(&coarse, &other_fine, DEFAULT_C_CAP).is_err());
        assert!(check_reduction(&other_coarse, &other_fine, 1.5, DEFAULT_C_CAP).is_err());
        let mut no_map = coarse.clone();
        no_map.map_to_next = None;
        assert!(check_stability(&no_map, &other_fine, DEFAULT_C_CAP).is_err());
    }

    #[test]
    fn test_multi_step_audit_composes_maps() {
        let mesh = Mesh2D::l_shape();
        let f = Load::constant(1.0);
        let u0 = poisson::solve(&mesh, &f, None).unwrap();
        let eta0 = poisson::estimate_residual(&mesh, &f, &u0).unwrap();
        let (mid, map0) = mesh.refine_nvb(&[0, 2]).unwrap();
        let u1 = poisson::prolong(&u0, &map0, &mid).unwrap();
        let eta1 = poisson::estimate_residual(&mid, &f, &u1).unwrap();
        let (fine, map1) = mid.refine_nvb(&[1, 4]).unwrap();
        let u2 = poisson::prolong(&u1, &map1, &fine).unwrap();
        let eta2 = poisson::estimate_residual(&fine, &f, &u2).unwrap();
        let records = vec![
            LevelRecord {
                level: 0,
                mesh: mesh.id,
                indicators: eta0,
                energy: 0.0,
                marked: vec![0, 2],
                map_to_next: Some(map0),
                diff_to_next: Some(0.0),
            },
            LevelRecord {
                level: 1,
                mesh: mid.id,
                indicators: eta1,
                energy: 0.0,
                marked: vec![1, 4],
                map_to_next: Some(map1),
                diff_to_next: Some(0.0),
            },
            LevelRecord {
                level: 2,
                mesh: fine.id,
                indicators: eta2,
                energy: 0.0,
                marked: Vec::new(),
                map_to_next: None,
                diff_to_next: None,
            },
        ];
        let stab = check_stability_span(&records, 0, 2, DEFAULT_C_CAP).unwrap();
        assert!(stab.pass);
        assert!(stab.slack <= 1e-12, "slack {}", stab.slack);
        let red = check_reduction_span(&records, 0, 2, DEFAULT_Q_RED, DEFAULT_C_CAP).unwrap();
        assert!(red.pass);
        assert!(red.residual <= 1e-12, "residual {}", red.residual);
    }

    #[test]
    fn test_apriori_matches_the_energy_gain_on_a_nested_run() {
        let mut mesh = Mesh2D::l_shape();
        let f = Load::constant(1.0);
        let mut u = poisson::solve(&mesh, &f, None).unwrap();
        let mut records = Vec::new();
        for level in 0..5 {
            let eta = poisson::estimate_residual(&mesh, &f, &u).unwrap();
            let (fine, map) = mesh.refine_all().unwrap();
            let u_fine = poisson::solve(&fine, &f, Some(&poisson::prolong(&u, &map, &fine).unwrap())).unwrap();
            let diff = poisson::energy_norm_diff(&fine, &u_fine, &u, &map).unwrap();
            records.push(LevelRecord {
                level,
                mesh: mesh.id,
                indicators: eta,
                energy: poisson::energy_norm_sq(&mesh, &u),
                marked: Vec::new(),
                map_to_next: Some(map),
                diff_to_next: Some(diff),
            });
            mesh = fine;
            u = u_fine;
        }
        let eta = poisson::estimate_residual(&mesh, &f, &u).unwrap();
        records.push(LevelRecord {
            level: 5,
            mesh: mesh.id,
            indicators: eta,
            energy: poisson::energy_norm_sq(&mesh, &u),
            marked: Vec::new(),
            map_to_next: None,
            diff_to_next: None,
        });
        let apriori = check_apriori(&records).unwrap();
        assert!(apriori.pass);
        let total = *apriori.cumulative.last().unwrap();
        assert!(
            (total - apriori.energy_gain).abs() <= 1e-8,
            "sum of squared increments {total} vs energy gain {}",
            apriori.energy_gain
        );
    }

    #[test]
    fn test_apriori_trivial_and_error_cases() {
        let records = synthetic(&[1.0, 1.0], &[0.0]);
        let check = check_apriori(&records).unwrap();
        assert!(check.pass);
        assert_eq!(check.increments, vec![0.0]);
        assert!(check_apriori(&records[..1]).is_err());
        let unmeasured = synthetic(&[1.0, 1.0, 1.0], &[0.0]);
        assert!(check_apriori(&unmeasured).is_err());
    }

    #[test]
    fn test_contraction_recurrence_with_dyadic_data_is_exact() {
        let rho = 0.5;
        let mut a = vec![1.0];
        let mut b = Vec::new();
        for l in 0..20 {
            b.push(0.5_f64.powi(l));
            a.push(rho * a[l as usize] + b[l as usize]);
        }
        b.push(0.0);
        let check = contraction_limit_check(&a, rho, &b).unwrap();
        assert!(check.holds);
        for (al, bl) in a.iter().zip(&check.bound) {
            assert_eq!(al, bl);
        }
    }

    #[test]
    fn test_contraction_bound_is_geometric_when_b_vanishes() {
        let a: Vec<f64> = (0..10).map(|l| 5.0 * 0.9_f64.powi(l)).collect();
        let b = vec![0.0; 10];
        let check = contraction_limit_check(&a, 0.9, &b).unwrap();
        assert!(check.holds);
        for (l, bound) in check.bound.iter().enumerate() {
            assert!((bound - 5.0 * 0.9_f64.powi(l as i32)).abs() <= 1e-12);
        }
    }

    #[test]
    fn test_contraction_detects_a_violation() {
        let a = vec![1.0, 1.0, 1.0];
        let b = vec![0.0; 3];
        let check = contraction_limit_check(&a, 0.5, &b).unwrap();
        assert!(!check.holds);
    }

    #[test]
    fn test_contraction_rejects_bad_arguments() {
        assert!(contraction_limit_check(&[1.0], 1.0, &[0.0]).is_err());
        assert!(contraction_limit_check(&[1.0], 0.0, &[0.0]).is_err());
        assert!(contraction_limit_check(&[1.0, 1.0], 0.5, &[0.0]).is_err());
        assert!(contraction_limit_check(&[-1.0], 0.5, &[0.0]).is_err());
    }

    #[test]
    fn test_contraction_bound_is_idempotent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let rho = rng.random_range(0.05..0.95);
            let n = rng.random_range(2..30);
            let a0 = rng.random_range(0.0..10.0);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut a = vec![a0];
            for l in 0..n - 1 {
                a.push(rho * a[l] + b[l] * rng.random_range(0.0..1.0));
            }
            let check = contraction_limit_check(&a, rho, &b).unwrap();
            assert!(check.holds);
            let again = contraction_limit_check(&check.bound, rho, &b).unwrap();
            assert!(again.holds);
            assert_eq!(again.bound, check.bound);
        }
    }

    fn doerfler_config(theta: f64) -> MarkingConfig {
        MarkingConfig { strategy: Strategy::DoerflerSorted, theta }
    }

    #[test]
    fn test_contraction_factor_formula() {
        assert_eq!(doerfler_rho(1.0, 0.5), DEFAULT_Q_RED);
        assert_eq!(doerfler_rho(1.0, 0.01), DEFAULT_Q_RED);
        let rho = doerfler_rho(0.5, 0.1);
        assert!((rho - 0.90355).abs() < 1e-5, "rho {rho}");
    }

    #[test]
    fn test_fit_picks_the_largest_contracting_delta() {
        let records = synthetic(&[1.0, 0.9, 0.8], &[0.5, 0.4]);
        let fit =
            fit_doerfler_contraction(&records, &doerfler_config(0.5), None, DEFAULT_C_CAP)
                .unwrap();
        assert_eq!(fit.delta, 0.25);
        assert!(fit.rho < 1.0);
        let pinned =
            fit_doerfler_contraction(&records, &doerfler_config(0.5), Some(0.1), DEFAULT_C_CAP)
                .unwrap();
        assert!((pinned.rho - 0.90355).abs() < 1e-5);
    }

    #[test]
    fn test_fit_requires_bulk_marking_and_a_contracting_delta() {
        let records = synthetic(&[1.0, 0.9], &[0.5]);
        let config = MarkingConfig { strategy: Strategy::Maximum, theta: 0.5 };
        assert!(matches!(
            fit_doerfler_contraction(&records, &config, None, DEFAULT_C_CAP),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            fit_doerfler_contraction(&records, &doerfler_config(0.5), Some(0.5), DEFAULT_C_CAP),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn test_fit_accepts_a_contracting_estimator_sequence() {
        let rho = doerfler_rho(0.5, 0.25);
        let etas: Vec<f64> = (0..8).map(|l| 0.9_f64 * rho.sqrt().powi(l)).collect();
        let diffs = vec![0.0; 7];
        let records = synthetic(&etas, &diffs);
        let fit =
            fit_doerfler_contraction(&records, &doerfler_config(0.5), None, DEFAULT_C_CAP)
                .unwrap();
        assert!(fit.pass);
        assert!(fit.b.iter().all(|&bl| bl <= 1e-10));
        let a_sq: Vec<f64> = records.iter().map(|r| r.eta().powi(2)).collect();
        let mut b = fit.b.clone();
        b.push(0.0);
        assert!(contraction_limit_check(&a_sq, fit.rho, &b).unwrap().holds);
    }

    #[test]
    fn test_convergence_report_examples() {
        let etas: Vec<f64> = (0..12).map(|l| 0.8_f64.powi(l)).collect();
        let records = synthetic(&etas, &vec![0.0; 12]);
        let report = estimator_convergence_report(&records, DEFAULT_TAIL_TARGET).unwrap();
        assert!(report.decayed);
        assert!((report.tail_ratio - 0.8_f64.powi(11)).abs() < 1e-12);

        let flat = synthetic(&[1.0; 6], &[0.0; 6]);
        assert!(!estimator_convergence_report(&flat, DEFAULT_TAIL_TARGET).unwrap().decayed);

        let zero = synthetic(&[0.0; 6], &[0.0; 6]);
        let report = estimator_convergence_report(&zero, DEFAULT_TAIL_TARGET).unwrap();
        assert!(report.decayed);
        assert_eq!(report.tail_ratio, 0.0);

        assert!(estimator_convergence_report(&flat[..5], DEFAULT_TAIL_TARGET).is_err());
    }

    #[test]
    fn test_audit_records_aggregates_everything() {
        let (coarse, fine) = frozen_poisson_pair(&[2, 5]);
        let records = vec![coarse, fine];
        let audit = audit_records(&records, DEFAULT_Q_RED, DEFAULT_C_CAP, None, None).unwrap();
        assert!(audit.pass);
        assert_eq!(audit.pairs.len(), 1);
        assert!(audit.doerfler.is_none());
        assert!(audit.convergence.is_none());
        let csv = axiom_report_csv(&audit);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "pair,slack,C_stab_est,residual,C_red_est,d,pass");
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 7);
        assert!(row.starts_with("0-1,"));
        assert!(row.ends_with(",true"));
    }
}
