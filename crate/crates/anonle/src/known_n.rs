//! Irrevocable leader election for a known network size.
//!
//! Each node draws a random ID from `{1..n^4}` and self-selects as a
//! candidate with probability `c ln n / n`.  Candidates grow bounded
//! "territories" by cautious broadcast (a tree-growing broadcast that only
//! extends from sparse branches, gated by doubling subtree-size thresholds
//! and capped at `x * t_mix * Phi` nodes), then emit `x` lazy random walks
//! carrying their ID.  Walk IDs merge by max wherever they meet.  Finally
//! every territory convergecasts the largest walk ID it saw up its tree;
//! a candidate that never hears a larger ID than its own raises its flag.
//!
//! The parallel cautious broadcasts are multiplexed into super-rounds of
//! `4c log n` sub-round slots; every message is tagged with the thread
//! (candidate) ID, so slot assignment is purely local and first-come
//! first-served.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Automaton, Engine, Payload, RunConfig, RunMetrics, StepStatus};
use crate::error::{Error, Result};
use crate::graph::PortGraph;
use crate::metrics::Rational;
use crate::rng::rng_stream;

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(64 - (n - 1).leading_zeros())
    }
}

fn bit_width(v: u64) -> u64 {
    u64::from(64 - v.max(1).leading_zeros())
}

/// `x = ceil( mult * sqrt( n * ceil(log2 n) / (phi * t_mix) ) )`.
pub fn choose_x(n: u64, phi: Rational, t_mix: u64, x_multiplier: f64) -> u64 {
    let num = (n * ceil_log2(n).max(1) * phi.denom()) as f64;
    let den = (phi.numer() * t_mix) as f64;
    let y = x_multiplier * (num / den).sqrt();
    let x = if (y - y.round()).abs() < 1e-9 { y.round() } else { y.ceil() };
    (x as u64).max(1)
}

#[derive(Debug, Clone, Serialize)]
pub struct KnownNParams {
    /// Linear upper bound on the network size the protocol is told.
    pub n_known: u64,
    pub t_mix: u64,
    #[serde(serialize_with = "crate::metrics::ser_rational")]
    pub phi: Rational,
    pub c: u64,
    /// Walk count / territory parameter; derived via [`choose_x`].
    pub x: u64,
    pub x_multiplier: f64,
    /// Initialize every node's running max to its own ID, exactly as the
    /// literal pseudocode does, instead of using the 0 sentinel for
    /// non-candidates.
    pub strict_idmax_init: bool,
}

impl KnownNParams {
    pub fn new(n_known: u64, t_mix: u64, phi: Rational, c: u64, x_multiplier: f64) -> Result<Self> {
        if n_known == 0 || t_mix == 0 || c == 0 || x_multiplier <= 0.0 {
            return Err(Error::InvalidParameter(
                "n_known, t_mix, c and x_multiplier must be positive".into(),
            ));
        }
        if *phi.numer() == 0 {
            return Err(Error::InvalidParameter("phi must be positive".into()));
        }
        let x = choose_x(n_known, phi, t_mix, x_multiplier);
        let p = KnownNParams { n_known, t_mix, phi, c, x, x_multiplier, strict_idmax_init: false };
        if n_known > 1 {
            debug_assert!(p.walk_length() >= 1 && p.territory_cap() >= 1);
            debug_assert!(p.candidate_prob() > 0.0 && p.candidate_prob() <= 1.0);
        }
        Ok(p)
    }

    pub fn id_space_max(&self) -> u64 {
        self.n_known.pow(4)
    }

    pub fn candidate_prob(&self) -> f64 {
        (self.c as f64 * (self.n_known as f64).ln() / self.n_known as f64).min(1.0)
    }

    /// Sub-rounds per super-round; also the cap on concurrent threads.
    pub fn superround_width(&self) -> u64 {
        4 * self.c * ceil_log2(self.n_known)
    }

    /// Length of the broadcast phase in super-rounds, of the walk phase in
    /// rounds, and of the convergecast phase in rounds.
    pub fn walk_length(&self) -> u64 {
        self.c * self.t_mix * ceil_log2(self.n_known)
    }

    pub fn territory_cap(&self) -> u64 {
        let r = self.phi * Rational::new(self.x * self.t_mix, 1);
        r.ceil().to_integer().max(1)
    }
}

/// Pre-sampled per-node role.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Role {
    pub candidate: bool,
    pub id: u64,
}

/// Draw ID and candidate flag from the node's dedicated stream.
pub fn sample_role(rng: &mut ChaCha8Rng, params: &KnownNParams) -> Role {
    let id = rng.gen_range(1..=params.id_space_max());
    let candidate = rng.gen_bool(params.candidate_prob());
    Role { candidate, id }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcastBody {
    /// Source-ID offer; the ID itself is the thread tag.
    Offer,
    /// Confirmed subtree size reported toward the root.
    Size(u64),
    Activate,
    Deactivate,
    Stop,
}

#[derive(Debug, Clone)]
pub enum KnownMsg {
    Bcast { thread: u64, body: BcastBody },
    Walk { id_max: u64, count: u64 },
    Conv { id_max: u64 },
}

impl Payload for KnownMsg {
    fn kind(&self) -> &'static str {
        match self {
            KnownMsg::Bcast { body: BcastBody::Offer, .. } => "offer",
            KnownMsg::Bcast { body: BcastBody::Size(_), .. } => "size",
            KnownMsg::Bcast { body: BcastBody::Activate, .. } => "activate",
            KnownMsg::Bcast { body: BcastBody::Deactivate, .. } => "deactivate",
            KnownMsg::Bcast { body: BcastBody::Stop, .. } => "stop",
            KnownMsg::Walk { .. } => "walk",
            KnownMsg::Conv { .. } => "conv",
        }
    }

    fn encoded_bits(&self) -> u64 {
        match self {
            // 3 tag bits for the body kind plus the thread ID.
            KnownMsg::Bcast { thread, body } => {
                3 + bit_width(*thread)
                    + match body {
                        BcastBody::Size(s) => bit_width(*s),
                        _ => 0,
                    }
            }
            KnownMsg::Walk { id_max, count } => bit_width(*id_max) + bit_width(*count),
            KnownMsg::Conv { id_max } => bit_width(*id_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    Active,
    Passive,
    Stop,
}

/// Per-node state of one cautious-broadcast thread.
#[derive(Debug, Clone)]
pub struct CautiousState {
    pub source_id: u64,
    pub is_source: bool,
    pub parent: Option<usize>,
    pub status: SearchStatus,
    /// Current doubling threshold `2^i`.
    pub threshold: u64,
    /// Untried ports (never sent to or received from on this thread).
    pub avail: Vec<usize>,
    /// Last confirmed size reported by each child port.
    pub child_size: BTreeMap<usize, u64>,
    /// What we believe each child's status is; drives activate/deactivate.
    pub child_status: BTreeMap<usize, SearchStatus>,
    /// Receptions buffered since this thread's last sub-round slot.
    pending: Vec<(usize, BcastBody)>,
    stop_done: bool,
}

impl CautiousState {
    pub fn new_source(source_id: u64, degree: usize) -> Self {
        CautiousState {
            source_id,
            is_source: true,
            parent: None,
            status: SearchStatus::Active,
            threshold: 1,
            avail: (0..degree).collect(),
            child_size: BTreeMap::new(),
            child_status: BTreeMap::new(),
            pending: Vec::new(),
            stop_done: false,
        }
    }

    pub fn new_member(source_id: u64, degree: usize) -> Self {
        CautiousState { is_source: false, status: SearchStatus::Passive, ..Self::new_source(source_id, degree) }
    }

    /// Buffer a reception until this thread's next slot.
    pub fn receive(&mut self, port: usize, body: BcastBody) {
        self.pending.push((port, body));
    }

    pub fn confirmed_subtree(&self) -> u64 {
        1 + self.child_size.values().sum::<u64>()
    }

    pub fn in_tree(&self) -> bool {
        self.is_source || self.parent.is_some()
    }

    /// One slot of the thread: fold buffered receptions, then prepare this
    /// super-round's transmissions.  Returns `(port, body)` sends.
    pub fn execute(&mut self, cap: u64, rng: &mut ChaCha8Rng) -> Vec<(usize, BcastBody)> {
        let mut out = Vec::new();
        if self.stop_done {
            self.pending.clear();
            return out;
        }
        // Process receptions; port order gives the lowest-port parent
        // tie-break when several offers arrived together.
        self.pending.sort_by_key(|&(p, _)| p);
        let mut got_stop = false;
        for (port, body) in std::mem::take(&mut self.pending) {
            self.avail.retain(|&q| q != port);
            match body {
                BcastBody::Stop => got_stop = true,
                BcastBody::Offer => {
                    if !self.is_source && self.parent.is_none() {
                        self.parent = Some(port);
                        self.status = SearchStatus::Active;
                    }
                }
                BcastBody::Size(s) => {
                    self.child_size.insert(port, s);
                    // The child went passive when it reported; remembering
                    // that is what makes the parent re-activate it below.
                    self.child_status.insert(port, SearchStatus::Passive);
                }
                BcastBody::Activate => {
                    if self.parent == Some(port) {
                        self.status = SearchStatus::Active;
                    }
                }
                BcastBody::Deactivate => {
                    if self.parent == Some(port) {
                        self.status = SearchStatus::Passive;
                    }
                }
            }
        }
        if !self.in_tree() {
            return out;
        }
        // Prepare transmissions.
        let subtree = self.confirmed_subtree();
        if got_stop || self.threshold >= cap || subtree >= cap {
            self.status = SearchStatus::Stop;
            self.stop_done = true;
            for (&p, st) in self.child_status.iter_mut() {
                out.push((p, BcastBody::Stop));
                *st = SearchStatus::Stop;
            }
            if let Some(p) = self.parent {
                out.push((p, BcastBody::Stop));
            }
            return out;
        }
        if subtree >= self.threshold {
            // Threshold crossing: report up, double, silence the subtree.
            while subtree >= self.threshold {
                self.threshold *= 2;
            }
            if let Some(p) = self.parent {
                out.push((p, BcastBody::Size(subtree)));
                self.status = SearchStatus::Passive;
            }
            for (&p, st) in self.child_status.iter_mut() {
                if *st == SearchStatus::Active {
                    out.push((p, BcastBody::Deactivate));
                    *st = SearchStatus::Passive;
                }
            }
        } else if self.is_source || self.status == SearchStatus::Active {
            // Legitimate growth: wake passive children and probe one fresh
            // port chosen uniformly without replacement.
            for (&p, st) in self.child_status.iter_mut() {
                if *st == SearchStatus::Passive {
                    out.push((p, BcastBody::Activate));
                    *st = SearchStatus::Active;
                }
            }
            if !self.avail.is_empty() {
                let i = rng.gen_range(0..self.avail.len());
                let p = self.avail.swap_remove(i);
                out.push((p, BcastBody::Offer));
            }
        }
        out
    }
}

/// Deterministic phase layout in engine rounds, shared by every node.
#[derive(Debug, Clone, Copy)]
struct PhasePlan {
    width: u64,
    bcast_end: u64,
    walk_start: u64,
    walk_end: u64,
    conv_start: u64,
    conv_end: u64,
    final_round: u64,
}

impl PhasePlan {
    fn new(p: &KnownNParams) -> Self {
        let width = p.superround_width();
        let len = p.walk_length();
        let bcast_end = width * len;
        // One quiet round between phases lets in-flight messages of the
        // previous phase land before the next one starts transmitting.
        let walk_start = bcast_end + 2;
        let walk_end = walk_start + len - 1;
        let conv_start = walk_end + 2;
        let conv_end = conv_start + len - 1;
        PhasePlan { width, bcast_end, walk_start, walk_end, conv_start, conv_end, final_round: conv_end + 1 }
    }

    fn total_rounds(&self) -> u64 {
        self.final_round
    }
}

/// One node of the known-n protocol, runnable under the engine.
pub struct KnownNode {
    params: KnownNParams,
    plan: PhasePlan,
    pub candidate: bool,
    pub id: u64,
    degree: usize,
    threads: Vec<CautiousState>,
    tindex: BTreeMap<u64, usize>,
    id_max: u64,
    resident: u64,
    out_counts: Vec<u64>,
    sent_tokens: u64,
    parent_ports: Vec<usize>,
    conv_last_sent: Vec<Option<u64>>,
    pub leader: bool,
    cur_phase: &'static str,
}

impl KnownNode {
    pub fn new(params: KnownNParams, role: Role, degree: usize) -> Self {
        let plan = PhasePlan::new(&params);
        let id_max = if role.candidate || params.strict_idmax_init { role.id } else { 0 };
        let mut node = KnownNode {
            plan,
            candidate: role.candidate,
            id: role.id,
            degree,
            threads: Vec::new(),
            tindex: BTreeMap::new(),
            id_max,
            resident: 0,
            out_counts: vec![0; degree],
            sent_tokens: 0,
            parent_ports: Vec::new(),
            conv_last_sent: Vec::new(),
            leader: false,
            cur_phase: "broadcast",
            params,
        };
        if node.candidate {
            node.add_thread(node.id, true);
        }
        node
    }

    pub fn id_max_seen(&self) -> u64 {
        self.id_max
    }

    pub fn resident_walk_count(&self) -> u64 {
        self.resident
    }

    pub fn tokens_sent_last_round(&self) -> u64 {
        self.sent_tokens
    }

    pub fn threads(&self) -> &[CautiousState] {
        &self.threads
    }

    fn add_thread(&mut self, thread: u64, source: bool) -> Option<usize> {
        if self.threads.len() as u64 >= self.plan.width {
            // No free sub-round slot; the thread cannot be scheduled here.
            return None;
        }
        let st = if source {
            CautiousState::new_source(thread, self.degree)
        } else {
            CautiousState::new_member(thread, self.degree)
        };
        self.threads.push(st);
        let idx = self.threads.len() - 1;
        self.tindex.insert(thread, idx);
        Some(idx)
    }

    fn fold_bcast(&mut self, round: u64, port: usize, thread: u64, body: BcastBody) {
        if round > self.plan.bcast_end {
            return;
        }
        let idx = match self.tindex.get(&thread) {
            Some(&i) => i,
            None => match self.add_thread(thread, false) {
                Some(i) => i,
                None => return,
            },
        };
        // Thread identity is carried on every message, so a slot can never
        // see two different source IDs.
        debug_assert_eq!(self.threads[idx].source_id, thread);
        self.threads[idx].receive(port, body);
    }

    fn broadcast_round(
        &mut self,
        round: u64,
        outbox: &mut [Option<KnownMsg>],
        rng: &mut ChaCha8Rng,
    ) -> bool {
        let slot = ((round - 1) % self.plan.width) as usize;
        let cap = self.params.territory_cap();
        let Some(ts) = self.threads.get_mut(slot) else { return false };
        let thread = ts.source_id;
        let sends = ts.execute(cap, rng);
        let mut sent = false;
        for (p, body) in sends {
            outbox[p] = Some(KnownMsg::Bcast { thread, body });
            sent = true;
        }
        sent
    }

    fn walk_round(
        &mut self,
        round: u64,
        outbox: &mut [Option<KnownMsg>],
        rng: &mut ChaCha8Rng,
    ) -> bool {
        self.sent_tokens = 0;
        if round == self.plan.walk_start {
            // Candidates launch all x walks at once, one uniform port each.
            if self.candidate {
                for _ in 0..self.params.x {
                    self.out_counts[rng.gen_range(0..self.degree)] += 1;
                }
            }
        } else {
            // Each resident token stays put with probability 1/2, else
            // leaves through a uniform port.
            let resident = self.resident;
            for _ in 0..resident {
                if !rng.gen_bool(0.5) {
                    self.out_counts[rng.gen_range(0..self.degree)] += 1;
                    self.resident -= 1;
                }
            }
        }
        let mut sent = false;
        for p in 0..self.degree {
            if self.out_counts[p] > 0 {
                outbox[p] = Some(KnownMsg::Walk { id_max: self.id_max, count: self.out_counts[p] });
                self.sent_tokens += self.out_counts[p];
                self.out_counts[p] = 0;
                sent = true;
            }
        }
        sent
    }

    fn conv_round(&mut self, round: u64, outbox: &mut [Option<KnownMsg>]) -> bool {
        if round == self.plan.conv_start {
            let mut ports: Vec<usize> =
                self.threads.iter().filter_map(|t| t.parent).collect();
            ports.sort_unstable();
            ports.dedup();
            self.parent_ports = ports;
            self.conv_last_sent = vec![None; self.degree];
        }
        let mut sent = false;
        for &p in &self.parent_ports {
            if self.conv_last_sent[p] != Some(self.id_max) {
                outbox[p] = Some(KnownMsg::Conv { id_max: self.id_max });
                self.conv_last_sent[p] = Some(self.id_max);
                sent = true;
            }
        }
        sent
    }
}

impl Automaton for KnownNode {
    type Msg = KnownMsg;

    fn phase(&self) -> &'static str {
        self.cur_phase
    }

    fn scale_hint(&self) -> u64 {
        self.params.id_space_max()
    }

    fn step(
        &mut self,
        round: u64,
        inbox: &mut [Option<KnownMsg>],
        outbox: &mut [Option<KnownMsg>],
        rng: &mut ChaCha8Rng,
    ) -> StepStatus {
        for p in 0..inbox.len() {
            let Some(msg) = inbox[p].take() else { continue };
            match msg {
                KnownMsg::Bcast { thread, body } => self.fold_bcast(round, p, thread, body),
                KnownMsg::Walk { id_max, count } => {
                    self.id_max = self.id_max.max(id_max);
                    self.resident += count;
                }
                KnownMsg::Conv { id_max } => self.id_max = self.id_max.max(id_max),
            }
        }
        let plan = self.plan;
        let (sent, halted) = if round <= plan.bcast_end {
            self.cur_phase = "broadcast";
            (self.broadcast_round(round, outbox, rng), false)
        } else if round >= plan.walk_start && round <= plan.walk_end {
            self.cur_phase = "walk";
            (self.walk_round(round, outbox, rng), false)
        } else if round >= plan.conv_start && round <= plan.conv_end {
            self.cur_phase = "convergecast";
            (self.conv_round(round, outbox), false)
        } else if round >= plan.final_round {
            self.leader = self.candidate && self.id == self.id_max;
            (false, true)
        } else {
            // Quiet drain round between phases.
            (false, false)
        };
        StepStatus { halted, surcharge: 0, sent }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq, Eq)]
pub struct PhaseReport {
    pub rounds: u64,
    pub messages: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElectionOutcome {
    pub n: usize,
    /// Nodes that raised the leader flag.
    pub leaders: Vec<usize>,
    pub leader_ids: Vec<u64>,
    /// Number of candidates sampled (before any overflow demotion).
    pub candidates: usize,
    /// Largest walk ID present anywhere at the end.
    pub winner_id: u64,
    /// whp-failure events observed in this run.
    pub flags: Vec<String>,
    /// Informed-node count per candidate thread.
    pub territories: BTreeMap<u64, u64>,
    /// Whether each candidate's territory was reached by the winning ID.
    pub walk_hits: BTreeMap<u64, bool>,
    pub rounds: u64,
    pub phases: BTreeMap<&'static str, PhaseReport>,
    pub metrics: RunMetrics,
}

/// Run the full protocol on `graph` with roles sampled from `seed`.
pub fn elect_known_n(graph: &PortGraph, params: &KnownNParams, seed: u64) -> Result<ElectionOutcome> {
    elect_known_n_with_roles(graph, params, seed, None)
}

/// As [`elect_known_n`], but allowing rigged roles for failure-path tests.
pub fn elect_known_n_with_roles(
    graph: &PortGraph,
    params: &KnownNParams,
    seed: u64,
    roles: Option<Vec<Role>>,
) -> Result<ElectionOutcome> {
    let n = graph.node_count();
    let mut flags = Vec::new();
    if n == 1 || params.n_known == 1 {
        // Degenerate single-node network: leader immediately, no phases.
        return Ok(ElectionOutcome {
            n,
            leaders: vec![0],
            leader_ids: vec![1],
            candidates: 1,
            winner_id: 1,
            flags,
            territories: BTreeMap::new(),
            walk_hits: BTreeMap::new(),
            rounds: 0,
            phases: BTreeMap::new(),
            metrics: RunMetrics::default(),
        });
    }
    let mut roles = match roles {
        Some(r) => {
            if r.len() != n {
                return Err(Error::InvalidParameter(format!("{} roles for {n} nodes", r.len())));
            }
            r
        }
        None => (0..n)
            .map(|v| sample_role(&mut rng_stream(seed, v as u64, "role"), params))
            .collect(),
    };

    let sampled: usize = roles.iter().filter(|r| r.candidate).count();
    let mut cand_ids: Vec<u64> =
        roles.iter().filter(|r| r.candidate).map(|r| r.id).collect();
    cand_ids.sort_unstable();
    if cand_ids.windows(2).any(|w| w[0] == w[1]) {
        flags.push("duplicate-id".into());
    }
    if sampled == 0 {
        flags.push("no-leader".into());
        return Ok(ElectionOutcome {
            n,
            leaders: Vec::new(),
            leader_ids: Vec::new(),
            candidates: 0,
            winner_id: 0,
            flags,
            territories: BTreeMap::new(),
            walk_hits: BTreeMap::new(),
            rounds: 0,
            phases: BTreeMap::new(),
            metrics: RunMetrics::default(),
        });
    }
    let width = params.superround_width() as usize;
    if sampled > width {
        // Keep the first `width` threads in candidate-ID order; demote the
        // rest so the multiplexing stays collision-free.
        flags.push("multiplex-overflow".into());
        let cutoff = cand_ids[width - 1];
        let mut kept = 0;
        for r in roles.iter_mut() {
            if r.candidate {
                if r.id <= cutoff && kept < width {
                    kept += 1;
                } else {
                    r.candidate = false;
                }
            }
        }
    }

    let nodes: Vec<KnownNode> = (0..n)
        .map(|v| KnownNode::new(params.clone(), roles[v], graph.degree(v)))
        .collect();
    let plan = PhasePlan::new(params);
    let cfg = RunConfig {
        master_seed: seed,
        max_rounds: plan.total_rounds() + 8,
        ..Default::default()
    };
    let mut engine = Engine::new(graph.clone(), nodes, cfg)?;
    engine.run_until_halt()?;
    let (nodes, metrics) = engine.finish();

    let winner_id = nodes.iter().map(|nd| nd.id_max_seen()).max().unwrap_or(0);
    let mut territories: BTreeMap<u64, u64> = BTreeMap::new();
    for nd in &nodes {
        for t in nd.threads() {
            if t.in_tree() {
                *territories.entry(t.source_id).or_insert(0) += 1;
            }
        }
    }
    let mut walk_hits = BTreeMap::new();
    let mut leaders = Vec::new();
    let mut leader_ids = Vec::new();
    for (v, nd) in nodes.iter().enumerate() {
        if nd.candidate {
            walk_hits.insert(nd.id, nd.id_max_seen() == winner_id);
        }
        if nd.leader {
            leaders.push(v);
            leader_ids.push(nd.id);
        }
    }
    let len = params.walk_length();
    let mut phases = BTreeMap::new();
    for (name, rounds) in
        [("broadcast", plan.bcast_end), ("walk", len), ("convergecast", len)]
    {
        let pm = metrics.per_phase.get(name).copied().unwrap_or_default();
        phases.insert(name, PhaseReport { rounds, messages: pm.messages, bits: pm.bits });
    }
    Ok(ElectionOutcome {
        n,
        leaders,
        leader_ids,
        candidates: sampled,
        winner_id,
        flags,
        territories,
        walk_hits,
        rounds: metrics.rounds_executed,
        phases,
        metrics,
    })
}
