//! Elementwise error indicators and the strategies that turn them into
//! marked-element sets.
//!
//! Four strategies are provided: threshold against the maximum indicator,
//! threshold against the equidistributed average, and two bulk-chasing
//! variants that collect a sorted prefix of indicators until the marked set
//! carries a θ-fraction of the total. Every strategy breaks ties by element
//! id so runs reproduce bit-for-bit, and an all-zero field marks nothing,
//! which the adaptive driver reads as convergence.

use crate::error::{Error, Result};
use crate::refinement::MeshId;

/// Nonnegative per-element indicator values with a cached total.
#[derive(Clone, Debug)]
pub struct IndicatorField {
    pub mesh: MeshId,
    values: Vec<f64>,
    total: f64,
}

impl IndicatorField {
    pub fn new(mesh: MeshId, values: Vec<f64>) -> Result<IndicatorField> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::numeric(format!(
                    "indicator for element {i} is {v}; values must be finite and nonnegative"
                )));
            }
        }
        let total = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(IndicatorField { mesh, values, total })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// (Σ_T η(T)²)^{1/2} over all elements.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// Σ η(T)² over the given elements.
    pub fn sum_squares(&self, ids: &[usize]) -> f64 {
        ids.iter().map(|&i| self.values[i] * self.values[i]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Maximum,
    Equidistribution,
    DoerflerSorted,
    DoerflerMin,
}

impl Strategy {
    pub fn parse(name: &str) -> Result<Strategy> {
        match name {
            "maximum" => Ok(Strategy::Maximum),
            "equidistribution" => Ok(Strategy::Equidistribution),
            "doerfler_sorted" => Ok(Strategy::DoerflerSorted),
            "doerfler_min" => Ok(Strategy::DoerflerMin),
            other => Err(Error::config(format!(
                "unknown marking strategy '{other}' (expected maximum, \
                 equidistribution, doerfler_sorted, or doerfler_min)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Maximum => "maximum",
            Strategy::Equidistribution => "equidistribution",
            Strategy::DoerflerSorted => "doerfler_sorted",
            Strategy::DoerflerMin => "doerfler_min",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkingConfig {
    pub strategy: Strategy,
    pub theta: f64,
}

impl MarkingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.strategy {
            Strategy::Maximum | Strategy::Equidistribution => {
                (0.0..=1.0).contains(&self.theta)
            }
            Strategy::DoerflerSorted | Strategy::DoerflerMin => {
                self.theta > 0.0 && self.theta <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "theta = {} out of range for strategy {}",
                self.theta,
                self.strategy.name()
            )))
        }
    }
}

/// Marks every element whose indicator reaches (1 − θ) times the maximum.
pub fn mark_maximum(ind: &IndicatorField, theta: f64) -> Vec<usize> {
    let max = ind.max();
    if max == 0.0 {
        return Vec::new();
    }
    let threshold = (1.0 - theta) * max;
    (0..ind.len()).filter(|&i| ind.values[i] >= threshold).collect()
}

/// Marks every element whose indicator reaches (1 − θ) times the
/// equidistributed share η / #elements.
pub fn mark_equidistribution(ind: &IndicatorField, theta: f64) -> Vec<usize> {
    if ind.total() == 0.0 || ind.is_empty() {
        return Vec::new();
    }
    let threshold = (1.0 - theta) * ind.total() / ind.len() as f64;
    (0..ind.len()).filter(|&i| ind.values[i] >= threshold).collect()
}

/// Bulk chasing: the shortest descending-sorted prefix with
/// θ·η² ≤ Σ_{T marked} η(T)². Sorting descends by value with ties by id, so
/// the largest unmarked indicator never exceeds the smallest marked one.
/// The prefix is also a minimal-cardinality admissible set: no set of fewer
/// elements can carry more indicator mass than the prefix of the same size.
pub fn mark_doerfler(ind: &IndicatorField, theta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ind.len()).collect();
    order.sort_by(|&a, &b| {
        ind.values[b]
            .partial_cmp(&ind.values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    // Accumulating the target in the same sorted order makes θ = 1
    // terminate exactly at the last positive indicator.
    let total_sq: f64 = order.iter().map(|&i| ind.values[i] * ind.values[i]).sum();
    if total_sq == 0.0 {
        return Vec::new();
    }
    let target = theta * total_sq;
    let mut marked = Vec::new();
    let mut acc = 0.0;
    for &i in &order {
        if ind.values[i] == 0.0 {
            break;
        }
        acc += ind.values[i] * ind.values[i];
        marked.push(i);
        if acc >= target {
            break;
        }
    }
    marked
}

/// Runs the configured strategy. The returned ids are sorted for the two
/// threshold strategies and sorted by descending indicator for the bulk
/// variants.
pub fn mark(ind: &IndicatorField, config: &MarkingConfig) -> Result<Vec<usize>> {
    config.validate()?;
    Ok(match config.strategy {
        Strategy::Maximum => mark_maximum(ind, config.theta),
        Strategy::Equidistribution => mark_equidistribution(ind, config.theta),
        Strategy::DoerflerSorted | Strategy::DoerflerMin => mark_doerfler(ind, config.theta),
    })
}

/// Outcome of the abstract marking-condition check: the largest unmarked
/// indicator, the strategy's comparison bound, and whether lhs ≤ rhs held.
#[derive(Clone, Copy, Debug)]
pub struct MarkingCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Verifies that no unmarked indicator exceeds the strategy's bound
/// M(η(ℳ)): the identity for the threshold strategies and the sorted bulk
/// variant, and √((1−θ)/θ)·η(ℳ) for the minimal bulk variant, which only
/// guarantees the bulk inequality itself.
pub fn verify_marking_condition(
    ind: &IndicatorField,
    marked: &[usize],
    config: &MarkingConfig,
) -> MarkingCheck {
    let mut is_marked = vec![false; ind.len()];
    for &m in marked {
        is_marked[m] = true;
    }
    let lhs = (0..ind.len())
        .filter(|&i| !is_marked[i])
        .map(|i| ind.values[i])
        .fold(0.0, f64::max);
    let eta_marked = ind.sum_squares(marked).sqrt();
    let rhs = match config.strategy {
        Strategy::Maximum | Strategy::Equidistribution | Strategy::DoerflerSorted => eta_marked,
        Strategy::DoerflerMin => ((1.0 - config.theta) / config.theta).sqrt() * eta_marked,
    };
    MarkingCheck { holds: lhs <= rhs + 1e-13, lhs, rhs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refinement::fresh_mesh_id;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn field(values: &[f64]) -> IndicatorField {
        IndicatorField::new(fresh_mesh_id(), values.to_vec()).unwrap()
    }

    #[test]
    fn test_maximum_fixture() {
        let ind = field(&[4.0, 3.0, 1.0]);
        assert_eq!(mark_maximum(&ind, 0.5), vec![0, 1]);
        assert_eq!(mark_maximum(&ind, 0.0), vec![0]);
        assert_eq!(mark_maximum(&ind, 1.0), vec![0, 1, 2]);
    }

    #[test]
    fn test_equidistribution_fixture() {
        let ind = field(&[4.0, 3.0, 1.0]);
        // Total √26 ≈ 5.0990, threshold (1 - 0.5)·√26/3 ≈ 0.84984: all pass.
        assert_eq!(mark_equidistribution(&ind, 0.5), vec![0, 1, 2]);
        let single = field(&[2.5]);
        for theta in [0.0, 0.3, 1.0] {
            assert_eq!(mark_equidistribution(&single, theta), vec![0]);
        }
    }

    #[test]
    fn test_doerfler_fixture() {
        let ind = field(&[3.0, 2.0, 2.0, 1.0]);
        // η² = 18, θ = 0.5 needs 9; the top indicator alone carries 9.
        assert_eq!(mark_doerfler(&ind, 0.5), vec![0]);
        // θ = 1 marks exactly the elements with positive indicator.
        let with_zero = field(&[3.0, 0.0, 2.0]);
        assert_eq!(mark_doerfler(&with_zero, 1.0), vec![0, 2]);
    }

    #[test]
    fn test_all_zero_field_marks_nothing() {
        let ind = field(&[0.0, 0.0, 0.0]);
        let thetas = [0.2, 0.5, 1.0];
        for theta in thetas {
            assert!(mark_maximum(&ind, theta).is_empty());
            assert!(mark_equidistribution(&ind, theta).is_empty());
            assert!(mark_doerfler(&ind, theta).is_empty());
        }
    }

    #[test]
    fn test_verify_fixture_fails_on_bad_set() {
        let ind = field(&[3.0, 2.0]);
        let config = MarkingConfig { strategy: Strategy::DoerflerSorted, theta: 0.5 };
        let check = verify_marking_condition(&ind, &[1], &config);
        assert!(!check.holds);
        assert_eq!(check.lhs, 3.0);
        assert_eq!(check.rhs, 2.0);
    }

    #[test]
    fn test_verify_holds_vacuously_when_all_marked() {
        let ind = field(&[3.0, 2.0]);
        let config = MarkingConfig { strategy: Strategy::Maximum, theta: 0.0 };
        let check = verify_marking_condition(&ind, &[0, 1], &config);
        assert!(check.holds);
        assert_eq!(check.lhs, 0.0);
    }

    #[test]
    fn test_theta_range_validation() {
        let bad = MarkingConfig { strategy: Strategy::DoerflerSorted, theta: 0.0 };
        assert!(bad.validate().is_err());
        let bad2 = MarkingConfig { strategy: Strategy::Maximum, theta: 1.5 };
        assert!(bad2.validate().is_err());
        let ok = MarkingConfig { strategy: Strategy::Maximum, theta: 0.0 };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn test_negative_indicator_rejected() {
        assert!(IndicatorField::new(fresh_mesh_id(), vec![1.0, -0.5]).is_err());
        assert!(IndicatorField::new(fresh_mesh_id(), vec![f64::NAN]).is_err());
    }

    #[test]
    fn test_every_strategy_passes_its_own_verifier() {
        let mut rng = StdRng::seed_from_u64(42);
        let strategies = [
            Strategy::Maximum,
            Strategy::Equidistribution,
            Strategy::DoerflerSorted,
            Strategy::DoerflerMin,
        ];
        for trial in 0..200 {
            let n = rng.random_range(1..40);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let ind = field(&values);
            for strategy in strategies {
                let theta = match strategy {
                    Strategy::Maximum | Strategy::Equidistribution => rng.random_range(0.0..=1.0),
                    _ => rng.random_range(0.05..=1.0),
                };
                let config = MarkingConfig { strategy, theta };
                let marked = mark(&ind, &config).unwrap();
                let check = verify_marking_condition(&ind, &marked, &config);
                assert!(
                    check.holds,
                    "trial {trial} strategy {} theta {theta}: lhs {} > rhs {}",
                    strategy.name(),
                    check.lhs,
                    check.rhs
                );
                if let Strategy::DoerflerSorted | Strategy::DoerflerMin = strategy {
                    let bulk = ind.sum_squares(&marked);
                    assert!(theta * ind.total() * ind.total() <= bulk + 1e-12);
                }
            }
        }
    }

    #[test]
    fn test_doerfler_min_matches_brute_force_cardinality() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..120 {
            let n = rng.random_range(1..=12);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let theta: f64 = rng.random_range(0.05..=1.0);
            let ind = field(&values);
            let marked = mark_doerfler(&ind, theta);
            let total_sq: f64 = values.iter().map(|v| v * v).sum();
            if total_sq == 0.0 {
                assert!(marked.is_empty());
                continue;
            }
            let target = theta * total_sq;
            let mut best = usize::MAX;
            for mask in 0u32..(1 << n) {
                let sum: f64 = (0..n)
                    .filter(|&i| mask & (1 << i) != 0)
                    .map(|i| values[i] * values[i])
                    .sum();
                if sum >= target {
                    best = best.min(mask.count_ones() as usize);
                }
            }
            assert_eq!(
                marked.len(),
                best,
                "values {values:?} theta {theta}: prefix size {} vs brute force {best}",
                marked.len()
            );
        }
    }

    #[test]
    fn test_scale_invariance_of_marked_sets() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..30);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let theta = rng.random_range(0.1..0.9);
            for strategy in [Strategy::Maximum, Strategy::Equidistribution, Strategy::DoerflerSorted] {
                let config = MarkingConfig { strategy, theta };
                let base = mark(&field(&values), &config).unwrap();
                for c in [1e-8, 1e8] {
                    let scaled: Vec<f64> = values.iter().map(|v| c * v).collect();
                    let got = mark(&field(&scaled), &config).unwrap();
                    assert_eq!(got, base, "strategy {} scale {c}", strategy.name());
                }
            }
        }
    }

    #[test]
    fn test_threshold_strategies_monotone_in_theta() {
        let mut rng = StdRng::seed_from_u64(99);
        let values: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..2.0)).collect();
        let ind = field(&values);
        for strategy in [Strategy::Maximum, Strategy::Equidistribution] {
            let mut previous: Vec<usize> = Vec::new();
            for k in 0..=10 {
                let theta = k as f64 / 10.0;
                let config = MarkingConfig { strategy, theta };
                let marked = mark(&ind, &config).unwrap();
                for m in &previous {
                    assert!(marked.contains(m), "theta {theta} dropped element {m}");
                }
                previous = marked;
            }
        }
    }
}
