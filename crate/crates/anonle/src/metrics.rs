//! Graph quantities that parameterize the protocols: conductance, the
//! isoperimetric number, and the mixing time of the lazy simple random walk.
//!
//! Every exact quantity is a rational computed by exhaustive cut
//! enumeration (capped); above the caps only spectral estimates are
//! offered.

use crate::error::{Error, Result};
use crate::graph::PortGraph;
use num::rational::Ratio;
use serde::Serialize;

/// Largest n for exhaustive cut enumeration.
pub const EXHAUSTIVE_CUT_CAP: usize = 20;
/// Largest n for dense mixing-time linear algebra.
pub const DENSE_MATRIX_CAP: usize = 4096;
/// Constant in the mixing-time sanity band `t_mix <= C * log2(n) / phi^2`.
pub const MIXING_BAND_C: f64 = 64.0;

pub type Rational = Ratio<u64>;

/// Exact graph conductance: min over nonempty proper cuts S of
/// `|boundary(S)| / min(Vol(S), Vol(complement))`.
pub fn conductance_exact(g: &PortGraph) -> Result<Rational> {
    min_over_cuts(g, |boundary, s_size, vol_s, g| {
        let _ = s_size;
        let vol_all = 2 * g.edge_count() as u64;
        Ratio::new(boundary, vol_s.min(vol_all - vol_s))
    })
}

/// Exact isoperimetric number: min over cuts with `|S| <= n/2` of
/// `|boundary(S)| / |S|`.
pub fn isoperimetric_exact(g: &PortGraph) -> Result<Rational> {
    let n = g.node_count() as u64;
    min_over_cuts(g, move |boundary, s_size, _vol_s, _g| {
        if 2 * s_size <= n {
            Ratio::new(boundary, s_size)
        } else {
            Ratio::new(u64::MAX, 1)
        }
    })
}

/// Exact Markov-chain conductance of the lazy simple random walk, from the
/// definition over stationary flows (pi_i = deg_i / 2m, p_ij = 1 / 2deg_i).
pub fn markov_conductance_lazy_exact(g: &PortGraph) -> Result<Rational> {
    let m4 = 4 * g.edge_count() as u64;
    let m2 = 2 * g.edge_count() as u64;
    min_over_cuts(g, move |boundary, _s_size, vol_s, _g| {
        // Each cut edge carries flow 1/(4m) in either direction; the chain
        // is reversible so both directions of the definition coincide.
        let fwd = Ratio::new(boundary, m4) / Ratio::new(vol_s, m2);
        let bwd = Ratio::new(boundary, m4) / Ratio::new(m2 - vol_s, m2);
        fwd.max(bwd)
    })
}

/// Exact Markov-chain conductance of the symmetric diffusion matrix with
/// off-diagonal entries `share` on edges: min over cuts of
/// `share * |boundary(S)| / min(|S|, n - |S|)`.
pub fn diffusion_conductance_exact(g: &PortGraph, share: Rational) -> Result<Rational> {
    let n = g.node_count() as u64;
    min_over_cuts(g, move |boundary, s_size, _vol_s, _g| {
        share * Ratio::new(boundary, s_size.min(n - s_size))
    })
}

fn min_over_cuts<F>(g: &PortGraph, cost: F) -> Result<Rational>
where
    F: Fn(u64, u64, u64, &PortGraph) -> Rational,
{
    let n = g.node_count();
    if n > EXHAUSTIVE_CUT_CAP {
        return Err(Error::CapExceeded {
            what: "node count for exhaustive cut enumeration",
            cap: EXHAUSTIVE_CUT_CAP,
            got: n,
            hint: "use conductance_spectral_bounds instead",
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter("cut metrics need n >= 2".into()));
    }
    let masks: Vec<u32> = (0..n)
        .map(|v| g.neighbors(v).iter().fold(0u32, |acc, nb| acc | (1 << nb.node)))
        .collect();
    let degs: Vec<u64> = (0..n).map(|v| g.degree(v) as u64).collect();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut best: Option<Rational> = None;
    for s in 1..full {
        let mut boundary = 0u64;
        let mut vol = 0u64;
        let mut bits = s;
        while bits != 0 {
            let v = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            boundary += (masks[v] & !s).count_ones() as u64;
            vol += degs[v];
        }
        let c = cost(boundary, s.count_ones() as u64, vol, g);
        best = Some(match best {
            Some(b) if b <= c => b,
            _ => c,
        });
    }
    Ok(best.unwrap())
}

/// Apply one lazy simple-random-walk step to a distribution (row vector):
/// stay with probability 1/2, else move to a uniform neighbor.
pub fn lazy_walk_apply(g: &PortGraph, x: &[f64], y: &mut [f64]) {
    for v in 0..g.node_count() {
        y[v] = 0.5 * x[v];
    }
    for u in 0..g.node_count() {
        let share = 0.5 * x[u] / g.degree(u) as f64;
        for nb in g.neighbors(u) {
            y[nb.node] += share;
        }
    }
}

/// Cheeger-type sandwich on the walk conductance of the lazy walk:
/// `(1 - lambda)/2 <= phi <= sqrt(2 (1 - lambda))` where `lambda` is the
/// second-largest eigenvalue of the lazy transition matrix, found by power
/// iteration with the stationary component deflated.
pub fn conductance_spectral_bounds(g: &PortGraph) -> Result<(f64, f64)> {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 2_000_000;
    let n = g.node_count();
    if n == 1 {
        return Ok((0.5, f64::sqrt(2.0)));
    }
    let m2 = (2 * g.edge_count()) as f64;
    let pi: Vec<f64> = (0..n).map(|v| g.degree(v) as f64 / m2).collect();
    // Deterministic start vector, then project out the stationary component
    // (right eigenvector 1 with left eigenvector pi).
    let mut x: Vec<f64> = (0..n)
        .map(|v| ((v as u64).wrapping_mul(2654435761) % 1009) as f64 / 1009.0 - 0.5)
        .collect();
    let mut y = vec![0.0; n];
    let project = |x: &mut [f64], pi: &[f64]| {
        let c: f64 = pi.iter().zip(x.iter()).map(|(p, v)| p * v).sum();
        for v in x.iter_mut() {
            *v -= c;
        }
    };
    project(&mut x, &pi);
    let mut lambda_prev = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-300 {
            // Deflated operator annihilated the vector: lambda = 0.
            return Ok((0.5, f64::sqrt(2.0)));
        }
        for v in x.iter_mut() {
            *v /= norm;
        }
        lazy_walk_apply(g, &x, &mut y);
        project(&mut y, &pi);
        let lambda: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        if (lambda - lambda_prev).abs() < TOL {
            let lambda = lambda.clamp(0.0, 1.0 - 1e-15);
            return Ok(((1.0 - lambda) / 2.0, (2.0 * (1.0 - lambda)).sqrt()));
        }
        lambda_prev = lambda;
        std::mem::swap(&mut x, &mut y);
    }
    Err(Error::NumericalFailure(format!(
        "power iteration did not converge to {TOL} within {MAX_ITERS} iterations"
    )))
}

/// Mixing time of the lazy simple random walk: the minimum `t` such that
/// from every Dirac start the distribution after `t` steps is within
/// `1/(2n)` of stationary in the max norm.
pub fn mixing_time_lazy(g: &PortGraph) -> Result<u64> {
    let n = g.node_count();
    if n > DENSE_MATRIX_CAP {
        return Err(Error::CapExceeded {
            what: "node count for dense mixing-time computation",
            cap: DENSE_MATRIX_CAP,
            got: n,
            hint: "mixing time above the cap is not offered",
        });
    }
    let m2 = (2 * g.edge_count().max(1)) as f64;
    let pi: Vec<f64> = (0..n).map(|v| g.degree(v) as f64 / m2).collect();
    // Tiny absolute slack so exact boundary cases (deviation == 1/2n as a
    // rational) are not missed to rounding.
    let eps = 1.0 / (2.0 * n as f64) + 1e-12;
    // One row per Dirac start.
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let mut r = vec![0.0; n];
            r[v] = 1.0;
            r
        })
        .collect();
    let mut scratch = vec![0.0; n];
    let cap: u64 = 1000 + 100 * (n as u64).pow(2);
    for t in 1..=cap {
        for row in rows.iter_mut() {
            lazy_walk_apply(g, row, &mut scratch);
            std::mem::swap(row, &mut scratch);
        }
        let ok = rows.iter().all(|row| {
            row.iter().zip(pi.iter()).all(|(p, q)| (p - q).abs() <= eps)
        });
        if ok {
            return Ok(t);
        }
    }
    Err(Error::NumericalFailure(format!(
        "mixing time exceeded iteration cap {cap} for n = {n}"
    )))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MetricValue {
    Exact {
        #[serde(serialize_with = "ser_rational")]
        value: Rational,
    },
    SpectralEstimate { lower: f64, upper: f64 },
}

impl MetricValue {
    pub fn as_f64(&self) -> f64 {
        match self {
            MetricValue::Exact { value } => *value.numer() as f64 / *value.denom() as f64,
            MetricValue::SpectralEstimate { lower, upper } => 0.5 * (lower + upper),
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match self {
            MetricValue::Exact { value } => *value.numer() as f64 / *value.denom() as f64,
            MetricValue::SpectralEstimate { lower, .. } => *lower,
        }
    }
}

pub fn ser_rational<S: serde::Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

/// Bundle of the protocol-relevant quantities for one graph.
#[derive(Debug, Clone, Serialize)]
pub struct GraphMetrics {
    pub n: usize,
    pub m: usize,
    pub conductance: MetricValue,
    pub isoperimetric: MetricValue,
    pub t_mix: u64,
}

impl GraphMetrics {
    /// Compute everything this library can offer for `g`, exact where the
    /// caps allow and spectral estimates otherwise.
    pub fn compute(g: &PortGraph) -> Result<Self> {
        let n = g.node_count();
        let t_mix = mixing_time_lazy(g)?;
        let (conductance, isoperimetric) = if n <= EXHAUSTIVE_CUT_CAP && n >= 2 {
            (
                MetricValue::Exact { value: conductance_exact(g)? },
                MetricValue::Exact { value: isoperimetric_exact(g)? },
            )
        } else {
            // Walk-conductance bounds; for the lazy walk phi = Phi/2, so
            // graph conductance lies in [2*lower, 2*upper].
            let (lo, hi) = conductance_spectral_bounds(g)?;
            let max_deg = (0..n).map(|v| g.degree(v)).max().unwrap_or(1) as f64;
            (
                MetricValue::SpectralEstimate { lower: (2.0 * lo).min(1.0), upper: (2.0 * hi).min(1.0) },
                // i(G) >= Phi and i(G) <= Phi * max_deg scaled from the cut
                // that realizes either quantity.
                MetricValue::SpectralEstimate { lower: 2.0 * lo, upper: 2.0 * hi * max_deg },
            )
        };
        Ok(GraphMetrics { n, m: g.edge_count(), conductance, isoperimetric, t_mix })
    }

    /// Sanity-band checks from known mixing/conductance relations; returned
    /// as warnings, never failures.
    pub fn sanity_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let phi = self.conductance.as_f64();
        if phi > 0.0 {
            let lo = 1.0 / phi;
            let hi = MIXING_BAND_C * (self.n.max(2) as f64).log2() / (phi * phi);
            let t = self.t_mix as f64;
            if t < lo || t > hi {
                out.push(format!(
                    "t_mix = {t} outside sanity band [{lo:.3}, {hi:.3}] for phi = {phi:.4}"
                ));
            }
        }
        if let (MetricValue::Exact { value: i }, MetricValue::Exact { value: phi }) =
            (&self.isoperimetric, &self.conductance)
        {
            if i < phi {
                out.push(format!("i(G) = {i} below conductance {phi}"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_complete, gen_cycle, gen_erdos_renyi, PortGraph};

    fn k2() -> PortGraph {
        PortGraph::from_edges(2, &[(0, 1)]).unwrap()
    }

    #[test]
    fn conductance_known_values() {
        assert_eq!(conductance_exact(&gen_complete(4).unwrap()).unwrap(), Ratio::new(2, 3));
        assert_eq!(conductance_exact(&gen_cycle(4).unwrap()).unwrap(), Ratio::new(1, 2));
        assert_eq!(conductance_exact(&gen_cycle(8).unwrap()).unwrap(), Ratio::new(1, 4));
    }

    #[test]
    fn isoperimetric_known_values() {
        assert_eq!(isoperimetric_exact(&gen_cycle(8).unwrap()).unwrap(), Ratio::new(1, 2));
        assert_eq!(isoperimetric_exact(&gen_complete(4).unwrap()).unwrap(), Ratio::new(2, 1));
        assert_eq!(isoperimetric_exact(&k2()).unwrap(), Ratio::new(1, 1));
    }

    #[test]
    fn cap_errors() {
        let g = gen_cycle(21).unwrap();
        assert!(matches!(conductance_exact(&g), Err(Error::CapExceeded { .. })));
    }

    /// Independent re-implementation with a different enumeration order
    /// (recursive subset construction, boundary from the edge list).
    fn naive_cut_min(g: &PortGraph, iso: bool) -> Rational {
        fn rec(
            g: &PortGraph,
            edges: &[(usize, usize)],
            v: usize,
            members: &mut Vec<usize>,
            best: &mut Option<Rational>,
            iso: bool,
        ) {
            let n = g.node_count();
            if v == n {
                if members.is_empty() || members.len() == n {
                    return;
                }
                if iso && 2 * members.len() > n {
                    return;
                }
                let inside = |x: usize| members.contains(&x);
                let boundary =
                    edges.iter().filter(|&&(a, b)| inside(a) != inside(b)).count() as u64;
                let denom = if iso {
                    members.len() as u64
                } else {
                    let vol: u64 = members.iter().map(|&x| g.degree(x) as u64).sum();
                    vol.min(2 * g.edge_count() as u64 - vol)
                };
                let c = Ratio::new(boundary, denom);
                *best = Some(best.map_or(c, |b| b.min(c)));
                return;
            }
            // Descend "excluded" first: opposite order from the bitmask scan.
            rec(g, edges, v + 1, members, best, iso);
            members.push(v);
            rec(g, edges, v + 1, members, best, iso);
            members.pop();
        }
        let edges = g.edges();
        let mut best = None;
        rec(g, &edges, 0, &mut Vec::new(), &mut best, iso);
        best.unwrap()
    }

    #[test]
    fn exhaustive_agrees_with_naive_oracle() {
        let mut graphs = vec![gen_cycle(5).unwrap(), gen_complete(6).unwrap()];
        for seed in 0..6 {
            graphs.push(gen_erdos_renyi(7, 0.45, seed).unwrap());
        }
        for g in &graphs {
            assert_eq!(conductance_exact(g).unwrap(), naive_cut_min(g, false));
            assert_eq!(isoperimetric_exact(g).unwrap(), naive_cut_min(g, true));
        }
    }

    #[test]
    fn spectral_bounds_k2() {
        let (lo, hi) = conductance_spectral_bounds(&k2()).unwrap();
        assert!((lo - 0.5).abs() < 1e-9);
        assert!((hi - f64::sqrt(2.0)).abs() < 1e-9);
    }

    #[test]
    fn spectral_sandwich_holds() {
        let mut graphs = vec![gen_cycle(4).unwrap(), gen_cycle(8).unwrap()];
        for seed in 0..5 {
            graphs.push(gen_erdos_renyi(9, 0.4, seed).unwrap());
        }
        for g in &graphs {
            let phi = markov_conductance_lazy_exact(g).unwrap();
            let phi = *phi.numer() as f64 / *phi.denom() as f64;
            let (lo, hi) = conductance_spectral_bounds(g).unwrap();
            assert!(lo <= phi + 1e-9 && phi <= hi + 1e-9, "{lo} <= {phi} <= {hi}");
        }
    }

    #[test]
    fn lazy_markov_conductance_is_half_graph_conductance() {
        for g in [gen_cycle(6).unwrap(), gen_complete(5).unwrap()] {
            let phi_g = conductance_exact(&g).unwrap();
            let phi_p = markov_conductance_lazy_exact(&g).unwrap();
            assert_eq!(phi_p * Ratio::new(2, 1), phi_g);
        }
    }

    #[test]
    fn mixing_time_small_exact() {
        assert_eq!(mixing_time_lazy(&k2()).unwrap(), 1);
        assert_eq!(mixing_time_lazy(&gen_complete(3).unwrap()).unwrap(), 1);
    }

    #[test]
    fn mixing_time_cycle_scaling() {
        let t8 = mixing_time_lazy(&gen_cycle(8).unwrap()).unwrap();
        let t16 = mixing_time_lazy(&gen_cycle(16).unwrap()).unwrap();
        let ratio = t16 as f64 / t8 as f64;
        assert!((3.0..=5.0).contains(&ratio), "t16/t8 = {ratio}");
    }

    #[test]
    fn mixing_monotone_under_densification() {
        // K8 minus a perfect matching vs K8: adding the matching back may
        // only speed up mixing.
        let n = 8;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if !(v == u + 4) {
                    edges.push((u, v));
                }
            }
        }
        let sparse = PortGraph::from_edges(n, &edges).unwrap();
        let dense = gen_complete(n).unwrap();
        assert!(mixing_time_lazy(&dense).unwrap() <= mixing_time_lazy(&sparse).unwrap());
    }

    #[test]
    fn metrics_json_shape() {
        let m = GraphMetrics::compute(&gen_complete(4).unwrap()).unwrap();
        let j = serde_json::to_value(&m).unwrap();
        assert_eq!(j["n"], 4);
        assert_eq!(j["m"], 6);
        assert_eq!(j["conductance"]["value"], "2/3");
        assert_eq!(j["conductance"]["method"], "exact");
        assert!(j["t_mix"].as_u64().unwrap() >= 1);
    }

    #[test]
    fn sanity_band_quiet_on_normal_graphs() {
        for g in [gen_cycle(8).unwrap(), gen_complete(6).unwrap()] {
            let m = GraphMetrics::compute(&g).unwrap();
            assert!(m.sanity_warnings().is_empty(), "{:?}", m.sanity_warnings());
        }
    }
}
