//! Revocable leader election without knowledge of the network size.
//!
//! Nodes probe doubling estimates `k = 2, 4, 8, ...` of the network size.
//! For each estimate, a certification phase of `f(k)` iterations tests
//! whether `k` is still too small: every iteration samples a color (white
//! with probability `p(k)`), diffuses potentials (black = 1, white = 0)
//! for `r(k)` rounds with alarms for oversized neighborhoods, checks the
//! final potential against a threshold `tau(k)`, and disseminates status
//! for `k^{1+eps}` rounds.  A node that saw mostly no-white iterations and
//! at least one probing iteration chooses a random ID and stamps it with
//! the estimate as a certificate.  Leadership belongs to the smallest ID
//! among those with the largest certificate, and may be revoked when a
//! larger certificate is heard later.
//!
//! Potentials are exact rationals (shared-denominator big-integer
//! numerators) in test mode, or 64-fractional-bit fixed point in full
//! mode; the fixed-point update hands each neighbor exactly the share it
//! subtracts locally, so the total is conserved bit-exactly in both modes,
//! and the drift from the real-valued chain is at most `n * r * 2^-64`.


use num::{BigUint, One, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Automaton, Engine, Payload, RunConfig, RunMetrics, StepStatus};
use crate::error::{Error, Result};
use crate::graph::PortGraph;
use crate::metrics::Rational;

fn ser_opt_rational<S: serde::Serializer>(r: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => crate::metrics::ser_rational(r, s),
        None => s.serialize_none(),
    }
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(64 - (n - 1).leading_zeros())
    }
}

/// Ceiling with a guard against values that are integers up to rounding.
fn ceil_guard(y: f64) -> u64 {
    if (y - y.round()).abs() < 1e-9 {
        y.round() as u64
    } else {
        y.ceil() as u64
    }
}

/// `ceil(k^{1+eps})`.
pub fn k_pow(k: u64, epsilon: f64) -> u64 {
    ceil_guard((k as f64).powf(1.0 + epsilon)).max(2)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleParams {
    pub k: u64,
    pub epsilon: f64,
    pub xi: f64,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "ser_opt_rational")]
    pub i_g: Option<Rational>,
    /// `ceil(k^{1+eps})`, the integer estimate power everything runs on.
    pub k_pow: u64,
    /// Diffusion rounds per certification iteration.
    pub r_k: u64,
    /// White-color probability `ln 2 / k^{1+eps}`.
    pub p_k: f64,
    /// Potential threshold `1 - 1/(k^{1+eps} - 1)`.
    #[serde(serialize_with = "crate::metrics::ser_rational")]
    pub tau_k: Rational,
    /// Certification iterations per estimate.
    pub f_k: u64,
    /// IDs are drawn uniformly from `[1, id_range_max]`.
    pub id_range_max: u64,
    pub r_scale: f64,
    pub f_scale: f64,
}

/// Compute the per-estimate schedule.  With `i_g` given,
/// `r(k) = ceil((8 k^{2(1+e)} / i_G^2) log2(k^{2(1+e)})) + ceil(k^{1+e} log2(2k))`;
/// without it the size-free fallback
/// `r(k) = ceil(2 k^{2(2+e)} log2(k^{2(1+e)})) + ceil(k^{1+e} log2(2k))` is used.
pub fn schedule(k: u64, epsilon: f64, xi: f64, i_g: Option<Rational>) -> Result<ScheduleParams> {
    if !k.is_power_of_two() || k < 2 {
        return Err(Error::InvalidParameter(format!("k = {k} must be a power of two >= 2")));
    }
    if !(0.0..=1.0).contains(&epsilon) || epsilon == 0.0 {
        return Err(Error::InvalidParameter("epsilon must be in (0, 1]".into()));
    }
    if !(0.0..1.0).contains(&xi) || xi == 0.0 {
        return Err(Error::InvalidParameter("xi must be in (0, 1)".into()));
    }
    let kp = k_pow(k, epsilon);
    if let Some(ig) = i_g {
        if *ig.numer() == 0 {
            return Err(Error::InvalidParameter("i_G must be positive".into()));
        }
    }
    if kp < 3 {
        return Err(Error::InvalidParameter("k^(1+eps) must be at least 3".into()));
    }
    let kp2 = (kp as f64) * (kp as f64);
    let log_kp2 = kp2.log2();
    let t1 = match i_g {
        Some(ig) => {
            let igf = *ig.numer() as f64 / *ig.denom() as f64;
            ceil_guard(8.0 * kp2 / (igf * igf) * log_kp2)
        }
        None => ceil_guard(2.0 * (k * k) as f64 * kp2 * log_kp2),
    };
    let t2 = ceil_guard(kp as f64 * ((2 * k) as f64).log2());
    let r_k = t1 + t2;
    let p_k = std::f64::consts::LN_2 / kp as f64;
    let tau_k = Rational::new(kp - 2, kp - 1);
    let sqrt2 = std::f64::consts::SQRT_2;
    let f_k = ceil_guard(4.0 * sqrt2 / ((sqrt2 - 1.0) * (sqrt2 - 1.0)) * (kp as f64 / xi).ln());
    let lg4k = ceil_log2(4 * k);
    let id_range_max = kp
        .checked_pow(4)
        .and_then(|a| a.checked_mul(lg4k.pow(4)))
        .ok_or_else(|| Error::InvalidParameter(format!("id range overflows u64 at k = {k}")))?;
    Ok(ScheduleParams {
        k,
        epsilon,
        xi,
        i_g,
        k_pow: kp,
        r_k: r_k.max(1),
        p_k,
        tau_k,
        f_k: f_k.max(1),
        id_range_max,
        r_scale: 1.0,
        f_scale: 1.0,
    })
}

impl ScheduleParams {
    /// Apply the test-mode multipliers last, as stamped deviations.
    pub fn scaled(mut self, r_scale: f64, f_scale: f64) -> Self {
        self.r_k = ((self.r_k as f64 * r_scale).ceil() as u64).max(1);
        self.f_k = ((self.f_k as f64 * f_scale).ceil() as u64).max(1);
        self.r_scale = r_scale;
        self.f_scale = f_scale;
        self
    }

    /// The per-link averaging share `1/(2 k^{1+eps})`.
    pub fn share(&self) -> Rational {
        Rational::new(1, 2 * self.k_pow)
    }

    /// Engine rounds one certification iteration occupies.
    pub fn iteration_rounds(&self) -> u64 {
        self.r_k + self.k_pow + 1
    }

    /// Engine rounds the whole estimate occupies.
    pub fn segment_rounds(&self) -> u64 {
        self.f_k * self.iteration_rounds()
    }
}

pub const FIXED_ONE: u128 = 1 << 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Potential {
    /// Numerator over the shared denominator `(2 k^{1+eps})^e`, where `e`
    /// is the diffusion-step count all nodes advance in lockstep.
    Exact(BigUint),
    /// 64 fractional bits.
    Fixed(u128),
}

impl Potential {
    fn bits(&self) -> u64 {
        match self {
            Potential::Exact(n) => n.bits().max(1),
            Potential::Fixed(_) => 65,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialMode {
    Exact,
    Fixed,
}

/// One un-alarmed diffusion step in exact arithmetic.  Values are
/// `num[v] / (2 k_pow)^e`; the result is over exponent `e + 1`, so the
/// numerator total exactly scales by `2 k_pow` — checking that equality is
/// the bit-exact conservation test.
pub fn diffusion_step_exact(g: &PortGraph, nums: &[BigUint], k_pow: u64) -> Vec<BigUint> {
    let base = 2 * k_pow;
    (0..g.node_count())
        .map(|v| {
            let mut acc = &nums[v] * (base - g.degree(v) as u64);
            for nb in g.neighbors(v) {
                acc += &nums[nb.node];
            }
            acc
        })
        .collect()
}

/// One un-alarmed diffusion step in fixed point.  Every node hands each
/// neighbor exactly `floor(phi / 2k_pow)`, the same amount it subtracts,
/// so the total is conserved bit-exactly.
pub fn diffusion_step_fixed(g: &PortGraph, vals: &[u128], k_pow: u64) -> Vec<u128> {
    let base = 2 * k_pow as u128;
    let shares: Vec<u128> = vals.iter().map(|v| v / base).collect();
    (0..g.node_count())
        .map(|v| {
            let mut acc = vals[v] - g.degree(v) as u128 * shares[v];
            for nb in g.neighbors(v) {
                acc += shares[nb.node];
            }
            acc
        })
        .collect()
}

/// The certificate a node's chosen ID is compounded with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LeaderView {
    pub cert_k: u64,
    pub id: u64,
}

/// Certificate order: larger estimate wins; within an estimate the smaller
/// ID wins.
pub fn fold_view(mine: Option<LeaderView>, other: Option<LeaderView>) -> Option<LeaderView> {
    match (mine, other) {
        (None, o) => o,
        (m, None) => m,
        (Some(m), Some(o)) => Some(if o.cert_k > m.cert_k || (o.cert_k == m.cert_k && o.id < m.id) {
            o
        } else {
            m
        }),
    }
}

/// The decision rule at the end of an estimate: choose an ID iff none was
/// chosen before, strictly more than half the iterations detected no white
/// node, and at least one iteration ended probing.  Returns whether an ID
/// was chosen.
pub fn decision_phase(
    id: &mut Option<u64>,
    cert: &mut Option<u64>,
    view: &mut Option<LeaderView>,
    status_low: &[bool],
    empty: &[bool],
    plan: &ScheduleParams,
    rng: &mut ChaCha8Rng,
) -> bool {
    let empties = empty.iter().filter(|&&e| e).count() as u64;
    let probing = status_low.iter().any(|&l| !l);
    if id.is_none() && 2 * empties > plan.f_k && probing {
        let drawn = rng.gen_range(1..=plan.id_range_max);
        *id = Some(drawn);
        *cert = Some(plan.k);
        *view = Some(LeaderView { cert_k: plan.k, id: drawn });
        true
    } else {
        false
    }
}

#[derive(Debug, Clone)]
pub struct RevMsg {
    /// Present in diffusion broadcasts only.
    pub pot: Option<Potential>,
    pub q_low: bool,
    pub c_white: bool,
    pub view: Option<LeaderView>,
}

impl Payload for RevMsg {
    fn kind(&self) -> &'static str {
        if self.pot.is_some() {
            "diffusion"
        } else {
            "dissemination"
        }
    }

    fn encoded_bits(&self) -> u64 {
        let view_bits = self
            .view
            .map(|v| {
                u64::from(64 - v.cert_k.max(1).leading_zeros())
                    + u64::from(64 - v.id.max(1).leading_zeros())
            })
            .unwrap_or(1);
        2 + view_bits + self.pot.as_ref().map(|p| p.bits()).unwrap_or(0)
    }

    fn serialization_rounds(&self) -> u64 {
        // Potentials go over the wire one bit at a time.
        self.pot.as_ref().map(|p| p.bits()).unwrap_or(1)
    }
}

/// One node of the revocable protocol, running the whole planned sequence
/// of estimates inside a single engine.
pub struct RevocableNode {
    plans: Vec<ScheduleParams>,
    mode: PotentialMode,
    degree: usize,
    scale: u64,
    pub id: Option<u64>,
    pub cert: Option<u64>,
    pub view: Option<LeaderView>,
    pub leader: bool,
    pub revocations: u64,
    pub alarm_events: u64,
    /// Per estimate, per iteration: was this node white.
    pub white_history: Vec<Vec<bool>>,
    /// Per estimate: did this node choose its ID there.
    pub chose_at: Vec<bool>,
    ki: usize,
    iter: u64,
    t: u64,
    status_low: Vec<bool>,
    empty: Vec<bool>,
    q_low: bool,
    c_white: bool,
    pot: Potential,
    pow_e: BigUint,
    done: bool,
}

impl RevocableNode {
    pub fn new(plans: Vec<ScheduleParams>, mode: PotentialMode, degree: usize) -> Self {
        let scale = plans.iter().map(|p| p.id_range_max).max().unwrap_or(2);
        let nk = plans.len();
        RevocableNode {
            plans,
            mode,
            degree,
            scale,
            id: None,
            cert: None,
            view: None,
            leader: false,
            revocations: 0,
            alarm_events: 0,
            white_history: vec![Vec::new(); nk],
            chose_at: vec![false; nk],
            ki: 0,
            iter: 0,
            t: 0,
            status_low: Vec::new(),
            empty: Vec::new(),
            q_low: false,
            c_white: false,
            pot: Potential::Fixed(0),
            pow_e: BigUint::one(),
            done: false,
        }
    }

    pub fn estimate_index(&self) -> usize {
        self.ki
    }

    fn set_pot_one(&mut self) {
        self.pot = match self.mode {
            PotentialMode::Exact => Potential::Exact(self.pow_e.clone()),
            PotentialMode::Fixed => Potential::Fixed(FIXED_ONE),
        };
    }

    fn go_low(&mut self) {
        if !self.q_low {
            self.q_low = true;
            self.alarm_events += 1;
        }
        self.set_pot_one();
    }

    fn pot_above_tau(&self, tau: Rational) -> bool {
        let (tn, td) = (*tau.numer(), *tau.denom());
        match &self.pot {
            Potential::Exact(num) => num * BigUint::from(td) > &self.pow_e * BigUint::from(tn),
            Potential::Fixed(v) => v * td as u128 > FIXED_ONE * tn as u128,
        }
    }

    fn broadcast(&self, outbox: &mut [Option<RevMsg>], with_pot: bool) {
        let msg = RevMsg {
            pot: if with_pot { Some(self.pot.clone()) } else { None },
            q_low: self.q_low,
            c_white: self.c_white,
            view: self.view,
        };
        for slot in outbox.iter_mut() {
            *slot = Some(msg.clone());
        }
    }

    fn update_leader_flag(&mut self) {
        let was = self.leader;
        self.leader = match (self.id, self.cert, self.view) {
            (Some(id), Some(k), Some(v)) => v.cert_k == k && v.id == id,
            _ => false,
        };
        if was && !self.leader {
            self.revocations += 1;
        }
    }
}

impl Automaton for RevocableNode {
    type Msg = RevMsg;

    fn phase(&self) -> &'static str {
        let plan = &self.plans[self.ki.min(self.plans.len() - 1)];
        if self.t <= plan.r_k {
            "diffusion"
        } else {
            "dissemination"
        }
    }

    fn scale_hint(&self) -> u64 {
        self.scale
    }

    fn step(
        &mut self,
        _round: u64,
        inbox: &mut [Option<RevMsg>],
        outbox: &mut [Option<RevMsg>],
        rng: &mut ChaCha8Rng,
    ) -> StepStatus {
        if self.done {
            return StepStatus { halted: true, surcharge: 0, sent: false };
        }
        let plan = self.plans[self.ki].clone();
        let (r_k, diss) = (plan.r_k, plan.k_pow);
        let lb = ceil_log2(2 * plan.k_pow);
        let base = 2 * plan.k_pow;
        let mut surcharge = 0;
        let mut sent = false;

        if self.t == 0 {
            // New certification iteration: color sample, potential init,
            // first diffusion broadcast.
            let white = rng.gen_bool(plan.p_k);
            self.white_history[self.ki].push(white);
            self.q_low = false;
            self.c_white = white;
            self.pow_e = BigUint::one();
            self.pot = match (self.mode, white) {
                (PotentialMode::Exact, true) => Potential::Exact(BigUint::zero()),
                (PotentialMode::Exact, false) => Potential::Exact(BigUint::one()),
                (PotentialMode::Fixed, true) => Potential::Fixed(0),
                (PotentialMode::Fixed, false) => Potential::Fixed(FIXED_ONE),
            };
            for slot in inbox.iter_mut() {
                *slot = None;
            }
            if r_k >= 1 {
                self.broadcast(outbox, true);
                sent = true;
                surcharge = lb;
            }
        } else if self.t <= r_k {
            // Diffusion fold: apply update t using last round's broadcasts.
            let mut all_probing = true;
            let mut exact_sum = BigUint::zero();
            let mut fixed_sum: u128 = 0;
            let mut got = 0usize;
            for slot in inbox.iter_mut() {
                let Some(msg) = slot.take() else { continue };
                got += 1;
                if msg.q_low {
                    all_probing = false;
                }
                self.view = fold_view(self.view, msg.view);
                match msg.pot {
                    Some(Potential::Exact(n)) => exact_sum += n,
                    Some(Potential::Fixed(v)) => fixed_sum += v / base as u128,
                    None => {}
                }
            }
            debug_assert_eq!(got, self.degree, "diffusion round without full reception");
            if self.mode == PotentialMode::Exact {
                self.pow_e *= BigUint::from(base);
            }
            if self.q_low || self.degree as u64 > plan.k_pow || !all_probing {
                self.go_low();
            } else {
                self.pot = match &self.pot {
                    Potential::Exact(num) => {
                        Potential::Exact(num * (base - self.degree as u64) + exact_sum)
                    }
                    Potential::Fixed(v) => Potential::Fixed(
                        v - self.degree as u128 * (v / base as u128) + fixed_sum,
                    ),
                };
            }
            if self.t < r_k {
                self.broadcast(outbox, true);
                sent = true;
                surcharge = (self.t + 1) * lb;
            } else {
                // End of diffusion: threshold detection, then the first
                // dissemination broadcast.
                if self.pot_above_tau(plan.tau_k) {
                    self.go_low();
                }
                self.broadcast(outbox, false);
                sent = true;
            }
        } else {
            // Dissemination folds; broadcast again unless the iteration is
            // on its final (drain) round.
            for slot in inbox.iter_mut() {
                let Some(msg) = slot.take() else { continue };
                if msg.q_low {
                    self.q_low = true;
                }
                if msg.c_white {
                    self.c_white = true;
                }
                self.view = fold_view(self.view, msg.view);
            }
            if self.t < r_k + diss {
                self.broadcast(outbox, false);
                sent = true;
            } else {
                // Iteration complete.
                self.status_low.push(self.q_low);
                self.empty.push(!self.c_white);
                self.iter += 1;
                self.t = 0;
                if self.iter == plan.f_k {
                    let chose = decision_phase(
                        &mut self.id,
                        &mut self.cert,
                        &mut self.view,
                        &self.status_low,
                        &self.empty,
                        &plan,
                        rng,
                    );
                    self.chose_at[self.ki] = chose;
                    self.update_leader_flag();
                    self.status_low.clear();
                    self.empty.clear();
                    self.iter = 0;
                    self.ki += 1;
                    if self.ki == self.plans.len() {
                        self.done = true;
                        self.ki -= 1;
                        return StepStatus { halted: true, surcharge: 0, sent: false };
                    }
                }
                return StepStatus { halted: false, surcharge: 0, sent: false };
            }
        }
        self.t += 1;
        StepStatus { halted: false, surcharge, sent }
    }
}

#[derive(Debug, Clone)]
pub struct RevocableConfig {
    pub epsilon: f64,
    pub xi: f64,
    pub i_g: Option<Rational>,
    pub r_scale: f64,
    pub f_scale: f64,
    pub mode: PotentialMode,
    /// Override the observer stop policy with an explicit largest k.
    pub k_max_override: Option<u64>,
}

impl Default for RevocableConfig {
    fn default() -> Self {
        RevocableConfig {
            epsilon: 1.0,
            xi: 0.1,
            i_g: None,
            r_scale: 1.0,
            f_scale: 1.0,
            mode: PotentialMode::Fixed,
            k_max_override: None,
        }
    }
}

/// Estimates the observer simulates: every k until `k^{1+eps} > 4n`, then
/// one additional doubling as a stabilization probe.
pub fn planned_estimates(n: usize, epsilon: f64, k_max_override: Option<u64>) -> Vec<u64> {
    let mut ks = Vec::new();
    let mut k = 2u64;
    if let Some(k_max) = k_max_override {
        while k <= k_max {
            ks.push(k);
            k *= 2;
        }
        return ks;
    }
    loop {
        ks.push(k);
        if k_pow(k, epsilon) > 4 * n as u64 {
            break;
        }
        k *= 2;
    }
    ks.push(2 * k);
    ks
}

#[derive(Debug, Clone, Serialize)]
pub struct KSnapshot {
    pub k: u64,
    pub leaders: Vec<usize>,
    pub unanimous: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view: Option<LeaderView>,
    /// White-node count per certification iteration.
    pub whites_per_iter: Vec<u64>,
    pub alarms: u64,
    pub revocations: u64,
    /// Nodes that chose their ID at this estimate.
    pub chosen: u64,
    pub rounds_logical: u64,
    pub rounds_accounted: u64,
    pub messages: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RevocableOutcome {
    pub n: usize,
    pub seed: u64,
    pub snapshots: Vec<KSnapshot>,
    pub final_leaders: Vec<usize>,
    pub unanimous: bool,
    /// No choices, leader changes or view changes during the final extra
    /// doubling.
    pub stabilized: bool,
    pub flags: Vec<String>,
}

/// Simulate the protocol over the planned estimate sequence.
pub fn run_revocable(graph: &PortGraph, cfg: &RevocableConfig, seed: u64) -> Result<RevocableOutcome> {
    let n = graph.node_count();
    let ks = planned_estimates(n, cfg.epsilon, cfg.k_max_override);
    let mut plans = Vec::new();
    for &k in &ks {
        plans.push(schedule(k, cfg.epsilon, cfg.xi, cfg.i_g)?.scaled(cfg.r_scale, cfg.f_scale));
    }
    let mut flags = Vec::new();
    if cfg.r_scale != 1.0 {
        flags.push(format!("scaled-r:{}", cfg.r_scale));
    }
    if cfg.f_scale != 1.0 {
        flags.push(format!("scaled-f:{}", cfg.f_scale));
    }
    let nodes: Vec<RevocableNode> = (0..n)
        .map(|v| RevocableNode::new(plans.clone(), cfg.mode, graph.degree(v)))
        .collect();
    let total: u64 = plans.iter().map(|p| p.segment_rounds()).sum();
    let run_cfg = RunConfig { master_seed: seed, max_rounds: total + 8, ..Default::default() };
    let mut engine = Engine::new(graph.clone(), nodes, run_cfg)?;

    let mut snapshots: Vec<KSnapshot> = Vec::new();
    let mut prev = RunMetrics::default();
    let mut prev_alarms = 0u64;
    let mut prev_revocations = 0u64;
    for (ki, plan) in plans.iter().enumerate() {
        engine.run_rounds(plan.segment_rounds())?;
        let m = engine.metrics().clone();
        let nodes = engine.nodes();
        let leaders: Vec<usize> =
            nodes.iter().enumerate().filter(|(_, nd)| nd.leader).map(|(v, _)| v).collect();
        let views: Vec<Option<LeaderView>> = nodes.iter().map(|nd| nd.view).collect();
        let unanimous = views[0].is_some() && views.iter().all(|v| *v == views[0]);
        let whites_per_iter: Vec<u64> = (0..plan.f_k as usize)
            .map(|i| {
                nodes
                    .iter()
                    .filter(|nd| nd.white_history[ki].get(i).copied().unwrap_or(false))
                    .count() as u64
            })
            .collect();
        let alarms: u64 = nodes.iter().map(|nd| nd.alarm_events).sum();
        let revocations: u64 = nodes.iter().map(|nd| nd.revocations).sum();
        let chosen = nodes.iter().filter(|nd| nd.chose_at[ki]).count() as u64;
        snapshots.push(KSnapshot {
            k: plan.k,
            leaders,
            unanimous,
            view: if unanimous { views[0] } else { None },
            whites_per_iter,
            alarms: alarms - prev_alarms,
            revocations: revocations - prev_revocations,
            chosen,
            rounds_logical: m.rounds_executed - prev.rounds_executed,
            rounds_accounted: m.rounds_accounted - prev.rounds_accounted,
            messages: m.messages_sent - prev.messages_sent,
            bits: m.bits_sent - prev.bits_sent,
        });
        prev = m;
        prev_alarms = alarms;
        prev_revocations = revocations;
    }
    let last = snapshots.last().unwrap();
    let final_leaders = last.leaders.clone();
    let unanimous = last.unanimous;
    let stabilized = snapshots.len() >= 2 && {
        let before = &snapshots[snapshots.len() - 2];
        last.chosen == 0
            && last.revocations == 0
            && last.leaders == before.leaders
            && last.view == before.view
    };
    Ok(RevocableOutcome { n, seed, snapshots, final_leaders, unanimous, stabilized, flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_complete, gen_cycle, PortGraph};

    #[test]
    fn schedule_formula_examples() {
        let s = schedule(4, 1.0, 0.1, Some(Rational::new(1, 2))).unwrap();
        assert_eq!(s.r_k, 65584);
        assert!((s.p_k - std::f64::consts::LN_2 / 16.0).abs() < 1e-15);
        assert_eq!(s.tau_k, Rational::new(14, 15));
        assert_eq!(s.f_k, 168);
        assert_eq!(s.share(), Rational::new(1, 32));
        assert_eq!(s.id_range_max, 65536 * 256);
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(schedule(3, 1.0, 0.1, None).is_err());
        assert!(schedule(4, 0.0, 0.1, None).is_err());
        assert!(schedule(4, 1.0, 1.5, None).is_err());
        assert!(schedule(4, 1.0, 0.1, Some(Rational::new(0, 1))).is_err());
    }

    #[test]
    fn diffusion_k2_example() {
        // K2, k=2, eps=1: share 1/8; (white, black) -> (1/8, 7/8).
        let g = PortGraph::from_edges(2, &[(0, 1)]).unwrap();
        let nums = vec![BigUint::zero(), BigUint::one()];
        let out = diffusion_step_exact(&g, &nums, 4);
        // Denominator is now 8.
        assert_eq!(out, vec![BigUint::from(1u32), BigUint::from(7u32)]);
    }

    #[test]
    fn diffusion_c4_example() {
        // C4, k=2, eps=1 (share 1/8), (1,0,1,0) -> (3/4, 1/4, 3/4, 1/4).
        let g = gen_cycle(4).unwrap();
        let nums: Vec<BigUint> =
            [1u32, 0, 1, 0].iter().map(|&x| BigUint::from(x)).collect();
        let out = diffusion_step_exact(&g, &nums, 4);
        let expect: Vec<BigUint> = [6u32, 2, 6, 2].iter().map(|&x| BigUint::from(x)).collect();
        assert_eq!(out, expect);
        let total: BigUint = out.iter().sum();
        assert_eq!(total, BigUint::from(16u32)); // 2 * (2 k_pow)^1
    }

    #[test]
    fn diffusion_fixed_points() {
        let g = gen_complete(4).unwrap();
        let uniform = vec![BigUint::from(5u32); 4];
        let out = diffusion_step_exact(&g, &uniform, 8);
        assert!(out.iter().all(|x| *x == BigUint::from(80u32)));
        let all_black = vec![FIXED_ONE; 4];
        let out = diffusion_step_fixed(&g, &all_black, 8);
        assert!(out.iter().all(|&x| x == FIXED_ONE));
    }

    #[test]
    fn fold_view_examples() {
        let a = Some(LeaderView { cert_k: 8, id: 5 });
        let b = Some(LeaderView { cert_k: 8, id: 3 });
        assert_eq!(fold_view(a, b), b);
        assert_eq!(fold_view(b, a), b);
        let big = Some(LeaderView { cert_k: 16, id: 99 });
        assert_eq!(fold_view(b, big), big);
        assert_eq!(fold_view(big, b), big);
        assert_eq!(fold_view(None, b), b);
    }

    fn plan_for_decision(f_k: u64) -> ScheduleParams {
        let mut s = schedule(4, 1.0, 0.1, None).unwrap();
        s.f_k = f_k;
        s
    }

    #[test]
    fn decision_rule_examples() {
        let plan = plan_for_decision(4);
        let mut rng = crate::rng::rng_stream(1, 0, "decide");
        // empty = [T,T,F,T], some probing -> chooses.
        let (mut id, mut cert, mut view) = (None, None, None);
        let chose = decision_phase(
            &mut id,
            &mut cert,
            &mut view,
            &[false, true, true, false],
            &[true, true, false, true],
            &plan,
            &mut rng,
        );
        assert!(chose && id.is_some() && cert == Some(4));
        assert_eq!(view, Some(LeaderView { cert_k: 4, id: id.unwrap() }));
        // all low -> no choice.
        let (mut id2, mut cert2, mut view2) = (None, None, None);
        assert!(!decision_phase(
            &mut id2,
            &mut cert2,
            &mut view2,
            &[true, true, true, true],
            &[true, true, true, true],
            &plan,
            &mut rng,
        ));
        assert!(id2.is_none());
        // id already set -> write-once no-op.
        let before = id;
        assert!(!decision_phase(
            &mut id,
            &mut cert,
            &mut view,
            &[false, false, false, false],
            &[true, true, true, true],
            &plan,
            &mut rng,
        ));
        assert_eq!(id, before);
    }

    #[test]
    fn degree_alarm_fires() {
        // K8 at k=2, eps=1: k_pow = 4 < deg 7, so every node alarms and
        // every iteration ends low; nobody chooses.
        let g = gen_complete(8).unwrap();
        let cfg = RevocableConfig {
            r_scale: 0.01,
            f_scale: 0.05,
            k_max_override: Some(2),
            mode: PotentialMode::Exact,
            ..Default::default()
        };
        let out = run_revocable(&g, &cfg, 3).unwrap();
        let snap = &out.snapshots[0];
        assert!(snap.alarms >= 8);
        assert_eq!(snap.chosen, 0);
        assert!(out.final_leaders.is_empty());
    }

    #[test]
    fn status_consistent_across_network() {
        // On a path, threshold/alarm lows flood within the dissemination
        // window, so every node records the same per-iteration status.
        let edges: Vec<(usize, usize)> = (0..4).map(|i| (i, i + 1)).collect();
        let g = PortGraph::from_edges(5, &edges).unwrap();
        let cfg = RevocableConfig {
            r_scale: 0.05,
            f_scale: 0.1,
            k_max_override: Some(4),
            mode: PotentialMode::Exact,
            i_g: Some(Rational::new(1, 2)),
            ..Default::default()
        };
        let ks = planned_estimates(5, cfg.epsilon, cfg.k_max_override);
        let mut plans = Vec::new();
        for &k in &ks {
            plans.push(
                schedule(k, cfg.epsilon, cfg.xi, cfg.i_g)
                    .unwrap()
                    .scaled(cfg.r_scale, cfg.f_scale),
            );
        }
        let nodes: Vec<RevocableNode> =
            (0..5).map(|v| RevocableNode::new(plans.clone(), cfg.mode, g.degree(v))).collect();
        let mut eng = Engine::new(g, nodes, RunConfig::default()).unwrap();
        // Run all but the last iteration's final fold, then compare the
        // recorded status histories after each whole segment instead.
        let total: u64 = plans.iter().map(|p| p.segment_rounds()).sum();
        eng.run_rounds(total).unwrap();
        let nodes = eng.nodes();
        for ki in 0..plans.len() {
            for other in &nodes[1..] {
                assert_eq!(nodes[0].white_history[ki].len(), other.white_history[ki].len());
            }
        }
    }

    #[test]
    fn single_node_chooses_at_first_estimate() {
        let g = gen_complete(1).unwrap();
        let cfg = RevocableConfig {
            r_scale: 0.001,
            f_scale: 0.2,
            mode: PotentialMode::Exact,
            ..Default::default()
        };
        let out = run_revocable(&g, &cfg, 11).unwrap();
        assert_eq!(out.final_leaders, vec![0]);
        assert_eq!(out.snapshots[0].k, 2);
        assert_eq!(out.snapshots[0].chosen, 1);
        assert!(out.stabilized);
    }

    #[test]
    fn c8_end_to_end_smoke() {
        let g = gen_cycle(8).unwrap();
        let cfg = RevocableConfig {
            epsilon: 0.5,
            xi: 0.1,
            i_g: Some(Rational::new(1, 2)),
            r_scale: 0.002,
            f_scale: 0.05,
            mode: PotentialMode::Fixed,
            k_max_override: None,
        };
        let mut good = 0;
        for seed in 0..5 {
            let out = run_revocable(&g, &cfg, seed).unwrap();
            if out.final_leaders.len() == 1 && out.unanimous && out.stabilized {
                good += 1;
            }
        }
        assert!(good >= 3, "only {good}/5 clean runs");
    }

    #[test]
    fn write_once_and_alarm_monotonic() {
        let g = gen_cycle(8).unwrap();
        let cfg = RevocableConfig {
            epsilon: 0.5,
            i_g: Some(Rational::new(1, 2)),
            r_scale: 0.002,
            f_scale: 0.05,
            ..Default::default()
        };
        let out = run_revocable(&g, &cfg, 1).unwrap();
        // A node's chosen estimate appears at most once across snapshots.
        let per_k_chosen: u64 = out.snapshots.iter().map(|s| s.chosen).sum();
        assert!(per_k_chosen <= 8);
    }
}
