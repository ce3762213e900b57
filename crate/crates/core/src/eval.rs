//! MAE, NDCG@N and the per-scenario report built with the clip procedure.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;

use crate::data::Scenario;
use crate::error::{Error, Result};

/// Mean absolute error of `(prediction, actual)` pairs, predictions clamped
/// to `range` first.
pub fn mae(pairs: &[(f64, f64)], range: (f64, f64)) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("MAE of an empty list".into()));
    }
    let total: f64 = pairs.iter().map(|&(p, y)| (p.clamp(range.0, range.1) - y).abs()).sum();
    Ok(total / pairs.len() as f64)
}

/// DCG of `gains_in_rank_order[..n]` with the discount `1 / log(rank + 1)`.
fn dcg(ratings_in_rank_order: &[f64], n: usize, log: &impl Fn(f64) -> f64) -> f64 {
    ratings_in_rank_order
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, &y)| (2f64.powf(y) - 1.0) / log(i as f64 + 2.0))
        .sum()
}

/// NDCG@N with a caller-chosen logarithm. Ranking is by prediction,
/// descending; ties keep their original order.
pub fn ndcg_at_n_with_log(pairs: &[(f64, f64)], n: usize, log: impl Fn(f64) -> f64) -> Result<f64> {
    if n == 0 || n > pairs.len() {
        return Err(Error::UndefinedMetric(format!("NDCG@{n} over {} records", pairs.len())));
    }
    let mut ranked: Vec<usize> = (0..pairs.len()).collect();
    ranked.sort_by(|&a, &b| pairs[b].0.total_cmp(&pairs[a].0));
    let by_prediction: Vec<f64> = ranked.iter().map(|&i| pairs[i].1).collect();
    let mut ideal: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, n, &log);
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(&by_prediction, n, &log) / idcg)
}

/// NDCG@N with base-2 logarithms.
pub fn ndcg_at_n(pairs: &[(f64, f64)], n: usize) -> Result<f64> {
    ndcg_at_n_with_log(pairs, n, f64::log2)
}

/// Mean NDCG@N over consecutive clips of length `n`, the trailing partial
/// clip dropped. `None` when there is not a single full clip.
pub fn clip_ndcg(pairs: &[(f64, f64)], n: usize) -> Result<Option<(f64, usize)>> {
    if n == 0 {
        return Err(Error::Config("NDCG cutoff must be at least 1".into()));
    }
    let clips: Vec<&[(f64, f64)]> = pairs.chunks_exact(n).collect();
    if clips.is_empty() {
        return Ok(None);
    }
    let total = clips.iter().map(|c| ndcg_at_n(c, n)).sum::<Result<f64>>()?;
    Ok(Some((total / clips.len() as f64, clips.len())))
}

/// One evaluated query record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedResult {
    pub scenario: Scenario,
    pub prediction: f64,
    pub actual: f64,
}

/// Metrics for one scenario (or for all records when `scenario` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub scenario: Option<Scenario>,
    pub count: usize,
    pub mae: Option<f64>,
    /// NDCG per cutoff; `None` with fewer records than the cutoff.
    pub ndcg: BTreeMap<usize, Option<f64>>,
}

impl ScenarioMetrics {
    fn compute(scenario: Option<Scenario>, pairs: &[(f64, f64)], ns: &[usize], range: (f64, f64)) -> Result<Self> {
        let mae = if pairs.is_empty() { None } else { Some(mae(pairs, range)?) };
        let ndcg = ns
            .iter()
            .map(|&n| Ok((n, clip_ndcg(pairs, n)?.map(|(v, _)| v))))
            .collect::<Result<_>>()?;
        Ok(Self {
            scenario,
            count: pairs.len(),
            mae,
            ndcg,
        })
    }

    pub fn label(&self) -> &'static str {
        self.scenario.map_or("all", Scenario::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Always the four scenarios, in W-W, W-C, C-W, C-C order.
    pub scenarios: Vec<ScenarioMetrics>,
    pub overall: ScenarioMetrics,
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl MetricsReport {
    pub fn get(&self, scenario: Scenario) -> &ScenarioMetrics {
        self.scenarios
            .iter()
            .find(|m| m.scenario == Some(scenario))
            .expect("report holds every scenario")
    }

    fn rows(&self) -> impl Iterator<Item = &ScenarioMetrics> {
        self.scenarios.iter().chain(std::iter::once(&self.overall))
    }

    /// `scenario,metric,N,value,count` rows; absent values are `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,metric,N,value,count\n");
        for m in self.rows() {
            let _ = writeln!(out, "{},MAE,,{},{}", m.label(), fmt_metric(m.mae), m.count);
            for (n, v) in &m.ndcg {
                let _ = writeln!(out, "{},NDCG,{n},{},{}", m.label(), fmt_metric(*v), m.count);
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<9}{:>8}{:>10}", "scenario", "count", "MAE")?;
        for n in self.overall.ndcg.keys() {
            write!(f, "{:>10}", format!("NDCG@{n}"))?;
        }
        writeln!(f)?;
        for m in self.rows() {
            write!(f, "{:<9}{:>8}{:>10}", m.label(), m.count, fmt_metric(m.mae.map(|v| (v * 1e4).round() / 1e4)))?;
            for v in m.ndcg.values() {
                write!(f, "{:>10}", fmt_metric(v.map(|v| (v * 1e4).round() / 1e4)))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Per-scenario MAE and clip-averaged NDCG for every cutoff in `ns`.
/// Records keep the order they are given in.
pub fn scenario_metrics(results: &[TaggedResult], ns: &[usize], range: (f64, f64)) -> Result<MetricsReport> {
    if let Some(r) = results.iter().find(|r| !r.prediction.is_finite()) {
        return Err(Error::Divergence(format!("non-finite prediction {} in {}", r.prediction, r.scenario)));
    }
    let scenarios = Scenario::ALL
        .into_iter()
        .map(|s| {
            let pairs: Vec<(f64, f64)> = results
                .iter()
                .filter(|r| r.scenario == s)
                .map(|r| (r.prediction, r.actual))
                .collect();
            ScenarioMetrics::compute(Some(s), &pairs, ns, range)
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<(f64, f64)> = results.iter().map(|r| (r.prediction, r.actual)).collect();
    Ok(MetricsReport {
        scenarios,
        overall: ScenarioMetrics::compute(None, &all, ns, range)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const RANGE: (f64, f64) = (1.0, 5.0);

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[(3.0, 3.0), (5.0, 5.0)], RANGE).unwrap(), 0.0);
        assert_eq!(mae(&[(3.0, 4.0), (4.0, 4.0)], RANGE).unwrap(), 0.5);
        assert_eq!(mae(&[(9.0, 5.0), (-2.0, 1.0)], RANGE).unwrap(), 0.0);
        assert!(matches!(mae(&[], RANGE), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_n(&[(3.0, 2.0), (2.0, 1.0), (1.0, 0.5)], 3).unwrap(), 1.0);
        assert_eq!(ndcg_at_n(&[(0.3, 4.0)], 1).unwrap(), 1.0);
        // Actuals [3, 5] ranked in that order.
        let dcg = 7.0 / 2f64.log2() + 31.0 / 3f64.log2();
        let idcg = 31.0 + 7.0 / 3f64.log2();
        assert_abs_diff_eq!(dcg, 26.558, epsilon = 1e-3);
        assert_abs_diff_eq!(idcg, 35.417, epsilon = 1e-3);
        let v = ndcg_at_n(&[(2.0, 3.0), (1.0, 5.0)], 2).unwrap();
        assert_abs_diff_eq!(v, 0.7499, epsilon = 1e-3);
        assert_abs_diff_eq!(v, dcg / idcg, epsilon = 1e-12);
        assert!(ndcg_at_n(&[(1.0, 1.0)], 2).is_err());
        assert!(ndcg_at_n(&[(1.0, 1.0)], 0).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        // Equal predictions: the first record ranks first.
        let a = ndcg_at_n(&[(1.0, 1.0), (1.0, 5.0)], 1).unwrap();
        let b = ndcg_at_n(&[(1.0, 5.0), (1.0, 1.0)], 1).unwrap();
        assert!(a < 1.0);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn clip_counts() {
        let pairs: Vec<(f64, f64)> = (0..7).map(|i| (i as f64, i as f64)).collect();
        let (v, clips) = clip_ndcg(&pairs, 3).unwrap().unwrap();
        assert_eq!((v, clips), (1.0, 2));
        assert_eq!(clip_ndcg(&pairs[..2], 3).unwrap(), None);
    }

    #[test]
    fn planted_clips_match_brute_force() {
        let mut rng = Rng::new(12);
        let pairs: Vec<(f64, f64)> = (0..40).map(|_| (rng.uniform(0.0, 5.0), (1 + rng.below(5)) as f64)).collect();
        let (v, clips) = clip_ndcg(&pairs, 4).unwrap().unwrap();
        assert_eq!(clips, 10);
        let mut total = 0.0;
        for c in 0..10 {
            let clip = &pairs[4 * c..4 * c + 4];
            let mut order: Vec<usize> = (0..4).collect();
            order.sort_by(|&a, &b| clip[b].0.partial_cmp(&clip[a].0).unwrap());
            let mut ideal: Vec<f64> = clip.iter().map(|p| p.1).collect();
            ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let gain = |y: f64, r: usize| (2f64.powf(y) - 1.0) / ((r + 2) as f64).log2();
            let dcg: f64 = order.iter().enumerate().map(|(r, &i)| gain(clip[i].1, r)).sum();
            let idcg: f64 = ideal.iter().enumerate().map(|(r, &y)| gain(y, r)).sum();
            total += dcg / idcg;
        }
        assert_abs_diff_eq!(v, total / 10.0, epsilon = 1e-12);
    }

    #[test]
    fn report_structure_and_conservation() {
        let mut rng = Rng::new(4);
        let results: Vec<TaggedResult> = (0..50)
            .map(|i| TaggedResult {
                scenario: Scenario::ALL[(i * 7 % 11) % 3],
                prediction: rng.uniform(0.0, 6.0),
                actual: (1 + rng.below(5)) as f64,
            })
            .collect();
        let report = scenario_metrics(&results, &[3], RANGE).unwrap();
        assert_eq!(report.scenarios.len(), 4);
        assert_eq!(report.scenarios.iter().map(|m| m.count).sum::<usize>(), 50);
        assert_eq!(report.overall.count, 50);
        let cc = report.get(Scenario::ColdUserColdItem);
        assert_eq!((cc.count, cc.mae, cc.ndcg[&3]), (0, None, None));
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 5 * 2);
        assert!(csv.contains("C-C,NDCG,3,NA,0"));
        for m in report.rows().filter(|m| m.count >= 3) {
            let v = m.ndcg[&3].unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    fn pairs_strategy() -> impl Strategy<Value = (Vec<(f64, f64)>, usize)> {
        (1usize..12).prop_flat_map(|len| {
            (
                prop::collection::vec((-5.0f64..5.0, 1u8..=5), len)
                    .prop_map(|v| v.into_iter().map(|(p, y)| (p, y as f64)).collect()),
                1..=len,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn ndcg_log_base_invariance((pairs, n) in pairs_strategy()) {
            let base2 = ndcg_at_n_with_log(&pairs, n, f64::log2).unwrap();
            let natural = ndcg_at_n_with_log(&pairs, n, f64::ln).unwrap();
            prop_assert!((base2 - natural).abs() <= 1e-12);
        }

        #[test]
        fn ndcg_monotone_transform_invariance((pairs, n) in pairs_strategy()) {
            let moved: Vec<(f64, f64)> = pairs.iter().map(|&(p, y)| (2.0 * p + 1.0, y)).collect();
            let a = ndcg_at_n(&pairs, n).unwrap();
            let b = ndcg_at_n(&moved, n).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn mae_detects_translation(ys in prop::collection::vec(2.5f64..4.5, 1..20), delta in 0.0f64..1.0) {
            let under: Vec<(f64, f64)> = ys.iter().map(|&y| (y - 0.5, y)).collect();
            let shifted: Vec<(f64, f64)> = under.iter().map(|&(p, y)| (p - delta, y)).collect();
            let diff = mae(&shifted, RANGE).unwrap() - mae(&under, RANGE).unwrap();
            prop_assert!((diff - delta).abs() < 1e-12);
        }
    }
}
