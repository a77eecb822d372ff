//! Batch experiment harness around the `anonle` protocol library: seeded
//! sweeps over graph families, CSV/JSON emission, scaling fits, and the
//! wrong-size demonstration on a long cycle.

use std::fs;
use std::path::Path;

use anonle::error::{Error, Result};
use anonle::graph::{gen_complete, gen_cycle, gen_erdos_renyi, gen_random_regular, load_edge_list};
use anonle::known_n::{elect_known_n, KnownNParams};
use anonle::metrics::{GraphMetrics, Rational};
use anonle::revocable::{run_revocable, PotentialMode, RevocableConfig};
use anonle::PortGraph;
use serde::{Deserialize, Serialize};

/// Graph family selector shared by the spec file and the CLI flags.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFamily {
    Cycle,
    Complete,
    RandomRegular,
    ErdosRenyi,
    EdgeList,
}

impl std::str::FromStr for GraphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(GraphFamily::Cycle),
            "complete" => Ok(GraphFamily::Complete),
            "random_regular" => Ok(GraphFamily::RandomRegular),
            "erdos_renyi" => Ok(GraphFamily::ErdosRenyi),
            "edge_list" => Ok(GraphFamily::EdgeList),
            other => Err(Error::InvalidParameter(format!("unknown graph family '{other}'"))),
        }
    }
}

impl std::fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GraphFamily::Cycle => "cycle",
            GraphFamily::Complete => "complete",
            GraphFamily::RandomRegular => "random_regular",
            GraphFamily::ErdosRenyi => "erdos_renyi",
            GraphFamily::EdgeList => "edge_list",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct GraphSpec {
    pub family: GraphFamily,
    pub sizes: Vec<usize>,
    /// Degree for `random_regular`.
    #[serde(default)]
    pub degree: Option<usize>,
    /// Edge probability for `erdos_renyi`.
    #[serde(default)]
    pub p: Option<f64>,
    /// File path for `edge_list`.
    #[serde(default)]
    pub path: Option<String>,
}

impl GraphSpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<PortGraph> {
        match self.family {
            GraphFamily::Cycle => gen_cycle(n),
            GraphFamily::Complete => gen_complete(n),
            GraphFamily::RandomRegular => {
                let d = self.degree.ok_or_else(|| {
                    Error::InvalidParameter("random_regular requires a degree".into())
                })?;
                gen_random_regular(n, d, seed)
            }
            GraphFamily::ErdosRenyi => {
                let p = self
                    .p
                    .ok_or_else(|| Error::InvalidParameter("erdos_renyi requires p".into()))?;
                gen_erdos_renyi(n, p, seed)
            }
            GraphFamily::EdgeList => {
                let path = self.path.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("edge_list requires a path".into())
                })?;
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::InvalidParameter(format!("reading {path}: {e}")))?;
                load_edge_list(&text)
            }
        }
    }
}

/// Protocol parameter overrides; unset fields fall back to defaults.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct ParamOverrides {
    // known_n
    #[serde(default)]
    pub c: Option<u64>,
    #[serde(default)]
    pub x_multiplier: Option<f64>,
    // revocable
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub r_scale: Option<f64>,
    #[serde(default)]
    pub f_scale: Option<f64>,
    #[serde(default)]
    pub k_max: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    KnownN,
    Revocable,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct OutputSpec {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub trials: u64,
    pub seed_base: u64,
    pub graph: GraphSpec,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Validation("trials must be >= 1".into()));
        }
        if self.graph.sizes.is_empty() {
            return Err(Error::Validation("at least one graph size is required".into()));
        }
        if !self.graph.sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("graph sizes must be sorted ascending".into()));
        }
        Ok(())
    }
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("reading {}: {e}", path.display())))?;
    let spec: ExperimentSpec = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0);
        Error::Parse { line, msg: e.message().to_string() }
    })?;
    spec.validate()?;
    Ok(spec)
}

/// One CSV row; fixed schema across both protocols.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRow {
    pub protocol: String,
    pub family: String,
    pub n: usize,
    pub seed: u64,
    pub rounds: u64,
    pub rounds_accounted: u64,
    pub messages: u64,
    pub bits: u64,
    pub leaders: usize,
    pub flags: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub trials: u64,
    pub mean_messages: f64,
    pub stddev_messages: f64,
    pub mean_bits: f64,
    pub mean_rounds: f64,
    pub mean_rounds_accounted: f64,
    /// Fraction of trials that did not end with exactly one leader.
    pub failure_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub protocol: Protocol,
    pub family: String,
    pub trials: u64,
    pub seed_base: u64,
    pub per_size: Vec<SizeSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<TrialRow>,
    pub summary: ExperimentSummary,
}

fn approx_rational(x: f64) -> Rational {
    let num = ((x * 4096.0).round() as u64).max(1);
    Rational::new(num, 4096)
}

/// Derive the known-n parameters for one graph from its measured metrics.
pub fn known_n_params_for(g: &PortGraph, ov: &ParamOverrides) -> Result<KnownNParams> {
    let metrics = GraphMetrics::compute(g)?;
    let phi = match &metrics.conductance {
        anonle::metrics::MetricValue::Exact { value } => *value,
        est => approx_rational(est.lower_bound().max(1e-6)),
    };
    KnownNParams::new(
        g.node_count() as u64,
        metrics.t_mix,
        phi,
        ov.c.unwrap_or(4),
        ov.x_multiplier.unwrap_or(2.0 / 3.0),
    )
}

fn revocable_config_for(g: &PortGraph, ov: &ParamOverrides) -> Result<RevocableConfig> {
    let n = g.node_count();
    let i_g = if n >= 2 && n <= 20 {
        Some(anonle::metrics::isoperimetric_exact(g)?)
    } else {
        None
    };
    Ok(RevocableConfig {
        epsilon: ov.epsilon.unwrap_or(1.0),
        xi: ov.xi.unwrap_or(0.1),
        i_g,
        r_scale: ov.r_scale.unwrap_or(1.0),
        f_scale: ov.f_scale.unwrap_or(1.0),
        mode: PotentialMode::Fixed,
        k_max_override: ov.k_max,
    })
}

/// Run all trials of a spec sequentially in deterministic order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut per_size = Vec::new();
    for &n in &spec.graph.sizes {
        // Protocol parameters are family-level quantities: measure them on
        // the first trial's graph and reuse across seeds of the same size.
        let mut cached_known: Option<KnownNParams> = None;
        let deterministic = matches!(spec.graph.family, GraphFamily::Cycle | GraphFamily::Complete);
        let base_graph = spec.graph.build(n, spec.seed_base)?;
        let mut size_rows = Vec::new();
        for trial in 0..spec.trials {
            let seed = spec.seed_base + trial;
            let graph = if deterministic {
                base_graph.clone()
            } else {
                spec.graph.build(n, seed.wrapping_mul(0x9E37_79B9))?
            };
            let row = match spec.protocol {
                Protocol::KnownN => {
                    let params = match (&cached_known, deterministic) {
                        (Some(p), _) => p.clone(),
                        _ => {
                            let p = known_n_params_for(&graph, &spec.params)?;
                            cached_known = Some(p.clone());
                            p
                        }
                    };
                    let out = elect_known_n(&graph, &params, seed)?;
                    TrialRow {
                        protocol: "known_n".into(),
                        family: spec.graph.family.to_string(),
                        n,
                        seed,
                        rounds: out.rounds,
                        rounds_accounted: out.metrics.rounds_accounted,
                        messages: out.metrics.messages_sent,
                        bits: out.metrics.bits_sent,
                        leaders: out.leaders.len(),
                        flags: out.flags.join(";"),
                    }
                }
                Protocol::Revocable => {
                    let cfg = revocable_config_for(&graph, &spec.params)?;
                    let out = run_revocable(&graph, &cfg, seed)?;
                    let rounds: u64 = out.snapshots.iter().map(|s| s.rounds_logical).sum();
                    let accounted: u64 = out.snapshots.iter().map(|s| s.rounds_accounted).sum();
                    let messages: u64 = out.snapshots.iter().map(|s| s.messages).sum();
                    let bits: u64 = out.snapshots.iter().map(|s| s.bits).sum();
                    TrialRow {
                        protocol: "revocable".into(),
                        family: spec.graph.family.to_string(),
                        n,
                        seed,
                        rounds,
                        rounds_accounted: accounted,
                        messages,
                        bits,
                        leaders: out.final_leaders.len(),
                        flags: out.flags.join(";"),
                    }
                }
            };
            size_rows.push(row);
        }
        per_size.push(summarize_size(n, &size_rows));
        rows.extend(size_rows);
    }
    Ok(ExperimentResult {
        rows,
        summary: ExperimentSummary {
            protocol: spec.protocol.clone(),
            family: spec.graph.family.to_string(),
            trials: spec.trials,
            seed_base: spec.seed_base,
            per_size,
        },
    })
}

fn summarize_size(n: usize, rows: &[TrialRow]) -> SizeSummary {
    let t = rows.len() as f64;
    let mean = |f: &dyn Fn(&TrialRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / t;
    let mean_messages = mean(&|r| r.messages as f64);
    let var = rows
        .iter()
        .map(|r| (r.messages as f64 - mean_messages).powi(2))
        .sum::<f64>()
        / t;
    SizeSummary {
        n,
        trials: rows.len() as u64,
        mean_messages,
        stddev_messages: var.sqrt(),
        mean_bits: mean(&|r| r.bits as f64),
        mean_rounds: mean(&|r| r.rounds as f64),
        mean_rounds_accounted: mean(&|r| r.rounds_accounted as f64),
        failure_rate: rows.iter().filter(|r| r.leaders != 1).count() as f64 / t,
    }
}

pub fn write_csv(rows: &[TrialRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::InvalidParameter(format!("opening {}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidParameter(format!("writing csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::InvalidParameter(format!("flushing csv: {e}")))?;
    Ok(())
}

pub fn write_summary(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::InvalidParameter(format!("serializing summary: {e}")))?;
    fs::write(path, text)
        .map_err(|e| Error::InvalidParameter(format!("writing {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub points: Vec<(f64, f64)>,
    /// Slope of the log-log least-squares line.
    pub exponent: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log(metric)` against `log(size)`.
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("scaling fit needs at least 2 points".into()));
    }
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::InvalidParameter("scaling fit needs positive values".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("all sizes identical; slope undefined".into()));
    }
    let exponent = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    if !exponent.is_finite() {
        return Err(Error::NumericalFailure("non-finite fitted exponent".into()));
    }
    Ok(ScalingFit { points: points.to_vec(), exponent, r_squared })
}

/// Fit directly from experiment rows: group by size, fit mean messages.
pub fn fit_rows(rows: &[TrialRow]) -> Result<ScalingFit> {
    let mut by_n: std::collections::BTreeMap<usize, Vec<u64>> = Default::default();
    for r in rows {
        by_n.entry(r.n).or_default().push(r.messages);
    }
    let points: Vec<(f64, f64)> = by_n
        .into_iter()
        .map(|(n, ms)| (n as f64, ms.iter().sum::<u64>() as f64 / ms.len() as f64))
        .collect();
    scaling_fit(&points)
}

#[derive(Debug, Clone, Serialize)]
pub struct PumpingReport {
    pub n_claimed: usize,
    pub n_actual: usize,
    pub trials: u64,
    pub not_one_leader: u64,
    pub zero_leader: u64,
    pub multi_leader: u64,
    pub frequency: f64,
}

/// Run the known-n protocol with parameters computed for a small cycle on
/// a much longer one: the size assumption is load-bearing, and breaking it
/// breaks irrevocable election observably.
pub fn pumping_wheel_demo(
    n_claimed: usize,
    n_actual: usize,
    trials: u64,
    seed: u64,
) -> Result<PumpingReport> {
    if n_actual != n_claimed && n_actual < 4 * n_claimed {
        return Err(Error::InvalidParameter(format!(
            "n_actual = {n_actual} must equal n_claimed or be >= 4 * {n_claimed}"
        )));
    }
    let claimed = gen_cycle(n_claimed)?;
    let metrics = GraphMetrics::compute(&claimed)?;
    let phi = match &metrics.conductance {
        anonle::metrics::MetricValue::Exact { value } => *value,
        est => approx_rational(est.lower_bound().max(1e-6)),
    };
    let params = KnownNParams::new(n_claimed as u64, metrics.t_mix, phi, 4, 2.0 / 3.0)?;
    let actual = gen_cycle(n_actual)?;
    let mut not_one = 0;
    let mut zero = 0;
    let mut multi = 0;
    for trial in 0..trials {
        let out = elect_known_n(&actual, &params, seed + trial)?;
        match out.leaders.len() {
            1 => {}
            0 => {
                zero += 1;
                not_one += 1;
            }
            _ => {
                multi += 1;
                not_one += 1;
            }
        }
    }
    Ok(PumpingReport {
        n_claimed,
        n_actual,
        trials,
        not_one_leader: not_one,
        zero_leader: zero,
        multi_leader: multi,
        frequency: not_one as f64 / trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_two_points_exact_half() {
        let fit = scaling_fit(&[(64.0, 100.0), (256.0, 200.0)]).unwrap();
        assert!((fit.exponent - 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_constant_metric_zero_slope() {
        let fit = scaling_fit(&[(64.0, 7.0), (128.0, 7.0), (256.0, 7.0)]).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(scaling_fit(&[(64.0, 100.0)]).is_err());
        assert!(scaling_fit(&[(64.0, 0.0), (128.0, 1.0)]).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec {
            protocol: Protocol::KnownN,
            trials: 0,
            seed_base: 1,
            graph: GraphSpec {
                family: GraphFamily::Cycle,
                sizes: vec![8, 16],
                degree: None,
                p: None,
                path: None,
            },
            params: Default::default(),
            output: Default::default(),
        };
        assert!(spec.validate().is_err());
        spec.trials = 1;
        assert!(spec.validate().is_ok());
        spec.graph.sizes = vec![16, 8];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
protocol = "known_n"
trials = 2
seed_base = 7

[graph]
family = "cycle"
sizes = [8, 16]

[params]
c = 4
"#;
        let spec: ExperimentSpec = toml::from_str(text).unwrap();
        assert!(spec.validate().is_ok());
        assert_eq!(spec.params.c, Some(4));
        assert_eq!(spec.graph.family, GraphFamily::Cycle);
    }

    #[test]
    fn experiment_rows_deterministic() {
        let spec = ExperimentSpec {
            protocol: Protocol::KnownN,
            trials: 3,
            seed_base: 5,
            graph: GraphSpec {
                family: GraphFamily::Cycle,
                sizes: vec![8],
                degree: None,
                p: None,
                path: None,
            },
            params: Default::default(),
            output: Default::default(),
        };
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.rows.len(), 3);
        let ser = |r: &ExperimentResult| {
            r.rows
                .iter()
                .map(|row| serde_json::to_string(row).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(ser(&a), ser(&b));
    }

    #[test]
    fn pumping_demo_preconditions() {
        assert!(pumping_wheel_demo(8, 16, 1, 0).is_err());
        let same = pumping_wheel_demo(8, 8, 5, 1).unwrap();
        assert_eq!(same.trials, 5);
    }
}
