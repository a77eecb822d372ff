//! Deterministic synchronous message-passing simulator with CONGEST bit
//! accounting.
//!
//! Execution is lockstep: in every round each live node reads the messages
//! delivered at the start of the round (one slot per port), then writes at
//! most one message per port; the engine delivers those writes at the start
//! of the next round.  Nothing a node writes in round `t` can be observed by
//! any node before round `t + 1`.
//!
//! Every delivered message is charged against the per-link bit budget
//! `B = 4 * ceil(log2(scale))`, where `scale` is declared by the protocol
//! (typically the size of its identifier space).  A payload may declare
//! that it is serialized over several rounds; the budget check then applies
//! to `ceil(bits / rounds)` and the protocol is responsible for actually
//! spreading its schedule accordingly (see the `surcharge` mechanism).

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::PortGraph;
use crate::rng::rng_stream;

/// Anything that can travel over a link.
pub trait Payload {
    /// Short stable label used in accounting and error messages.
    fn kind(&self) -> &'static str;
    /// Width of the wire encoding in bits.
    fn encoded_bits(&self) -> u64;
    /// Number of consecutive rounds the encoding is spread over; the budget
    /// check divides `encoded_bits` by this.
    fn serialization_rounds(&self) -> u64 {
        1
    }
}

/// What a node reports back from one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStatus {
    /// Node is finished; it will not be stepped again.
    pub halted: bool,
    /// Extra accounted rounds this logical round stands for (e.g. bit-serial
    /// transmissions).  The engine adds the maximum over all nodes.
    pub surcharge: u64,
    /// Node wrote at least one outbox slot; lets the engine skip scanning
    /// quiet nodes.
    pub sent: bool,
}

/// A per-node protocol state machine.
pub trait Automaton {
    type Msg: Payload + Clone;

    /// Label of the node's current protocol phase, for per-phase accounting.
    fn phase(&self) -> &'static str;

    /// Size scale the protocol operates at; determines the bit budget.
    fn scale_hint(&self) -> u64;

    /// One synchronous round.  `inbox[p]` holds the message delivered on
    /// port `p` this round (take it if needed); writing `Some` into
    /// `outbox[p]` sends on port `p`.  Both slices have length `deg(v)`.
    fn step(
        &mut self,
        round: u64,
        inbox: &mut [Option<Self::Msg>],
        outbox: &mut [Option<Self::Msg>],
        rng: &mut ChaCha8Rng,
    ) -> StepStatus;
}

#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Hard stop; exceeding it sets `timed_out` instead of running forever.
    pub max_rounds: u64,
    /// Disable to measure protocols that intentionally overrun the budget.
    pub enforce_budget: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { master_seed: 0, max_rounds: 10_000_000, enforce_budget: true }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq, Eq)]
pub struct PhaseMetrics {
    pub messages: u64,
    pub bits: u64,
}

/// Cost and progress accounting for one run.
#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct RunMetrics {
    /// Rounds the simulator actually executed.
    pub rounds_executed: u64,
    /// Rounds charged to the protocol, including surcharges for bit-serial
    /// transmissions.
    pub rounds_accounted: u64,
    pub messages_sent: u64,
    pub bits_sent: u64,
    /// Message/bit totals keyed by the sender's phase at send time.
    pub per_phase: BTreeMap<&'static str, PhaseMetrics>,
    pub timed_out: bool,
}

pub struct Engine<A: Automaton> {
    graph: PortGraph,
    cfg: RunConfig,
    nodes: Vec<A>,
    halted: Vec<bool>,
    live: usize,
    inboxes: Vec<Vec<Option<A::Msg>>>,
    outboxes: Vec<Vec<Option<A::Msg>>>,
    /// (node, port) slots currently holding a delivered message, so clearing
    /// costs O(messages) rather than O(sum of degrees).
    filled: Vec<(usize, usize)>,
    rngs: Vec<ChaCha8Rng>,
    budget: u64,
    round: u64,
    metrics: RunMetrics,
}

impl<A: Automaton> Engine<A> {
    pub fn new(graph: PortGraph, nodes: Vec<A>, cfg: RunConfig) -> Result<Self> {
        let n = graph.node_count();
        if nodes.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} automatons for {} nodes",
                nodes.len(),
                n
            )));
        }
        let scale = nodes
            .iter()
            .map(|a| a.scale_hint())
            .max()
            .unwrap_or(2)
            .max(n as u64)
            .max(2);
        let budget = 4 * u64::from(scale.next_power_of_two().trailing_zeros().max(1));
        let inboxes: Vec<Vec<Option<A::Msg>>> =
            (0..n).map(|v| (0..graph.degree(v)).map(|_| None).collect()).collect();
        let outboxes = inboxes.clone();
        let rngs = (0..n).map(|v| rng_stream(cfg.master_seed, v as u64, "step")).collect();
        Ok(Engine {
            graph,
            cfg,
            halted: vec![false; n],
            live: n,
            nodes,
            inboxes,
            outboxes,
            filled: Vec::new(),
            rngs,
            budget,
            round: 0,
            metrics: RunMetrics::default(),
        })
    }

    pub fn graph(&self) -> &PortGraph {
        &self.graph
    }

    pub fn budget_bits(&self) -> u64 {
        self.budget
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn nodes(&self) -> &[A] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [A] {
        &mut self.nodes
    }

    pub fn all_halted(&self) -> bool {
        self.live == 0
    }

    /// Execute one synchronous round: step every live node against the
    /// messages delivered for this round, then deliver this round's sends
    /// for the next one.
    pub fn step_round(&mut self) -> Result<()> {
        self.round += 1;
        let mut surcharge = 0u64;
        let mut senders: Vec<usize> = Vec::new();
        for v in 0..self.nodes.len() {
            if self.halted[v] {
                continue;
            }
            let status = self.nodes[v].step(
                self.round,
                &mut self.inboxes[v],
                &mut self.outboxes[v],
                &mut self.rngs[v],
            );
            if status.halted {
                self.halted[v] = true;
                self.live -= 1;
            }
            surcharge = surcharge.max(status.surcharge);
            if status.sent {
                senders.push(v);
            }
        }
        // Clear this round's deliveries before writing next round's.
        for (v, p) in self.filled.drain(..) {
            self.inboxes[v][p] = None;
        }
        for v in senders {
            for p in 0..self.graph.degree(v) {
                let Some(msg) = self.outboxes[v][p].take() else { continue };
                let bits = msg.encoded_bits();
                if self.cfg.enforce_budget {
                    let per_round = bits.div_ceil(msg.serialization_rounds().max(1));
                    if per_round > self.budget {
                        return Err(Error::BudgetViolation {
                            round: self.round,
                            node: v,
                            port: p,
                            kind: msg.kind(),
                            bits: per_round,
                            budget: self.budget,
                        });
                    }
                }
                self.metrics.messages_sent += 1;
                self.metrics.bits_sent += bits;
                let ph = self.metrics.per_phase.entry(self.nodes[v].phase()).or_default();
                ph.messages += 1;
                ph.bits += bits;
                let nb = self.graph.neighbors(v)[p];
                if self.inboxes[nb.node][nb.back_port].is_none() {
                    self.filled.push((nb.node, nb.back_port));
                }
                self.inboxes[nb.node][nb.back_port] = Some(msg);
            }
        }
        self.metrics.rounds_executed += 1;
        self.metrics.rounds_accounted += 1 + surcharge;
        Ok(())
    }

    pub fn run_rounds(&mut self, rounds: u64) -> Result<()> {
        for _ in 0..rounds {
            if self.all_halted() {
                break;
            }
            self.step_round()?;
        }
        Ok(())
    }

    /// Run until every node has halted or the configured round cap is hit.
    pub fn run_until_halt(&mut self) -> Result<()> {
        while !self.all_halted() {
            if self.round >= self.cfg.max_rounds {
                self.metrics.timed_out = true;
                break;
            }
            self.step_round()?;
        }
        Ok(())
    }

    /// Tear down, handing back the final node states and accounting.
    pub fn finish(self) -> (Vec<A>, RunMetrics) {
        (self.nodes, self.metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_complete, gen_cycle};

    #[derive(Clone)]
    struct Tok(u64);

    impl Payload for Tok {
        fn kind(&self) -> &'static str {
            "tok"
        }
        fn encoded_bits(&self) -> u64 {
            self.0
        }
    }

    /// Sends a token of `bits` bits on every port for `sends` rounds, then
    /// halts; records the rounds at which anything arrived.
    struct Chatter {
        bits: u64,
        sends: u64,
        arrivals: Vec<u64>,
    }

    impl Automaton for Chatter {
        type Msg = Tok;
        fn phase(&self) -> &'static str {
            "chatter"
        }
        fn scale_hint(&self) -> u64 {
            1 << 8
        }
        fn step(
            &mut self,
            round: u64,
            inbox: &mut [Option<Tok>],
            outbox: &mut [Option<Tok>],
            _rng: &mut ChaCha8Rng,
        ) -> StepStatus {
            if inbox.iter().any(|s| s.is_some()) {
                self.arrivals.push(round);
            }
            if round <= self.sends {
                for slot in outbox.iter_mut() {
                    *slot = Some(Tok(self.bits));
                }
                StepStatus { halted: false, surcharge: 0, sent: true }
            } else {
                // Linger one round so the final deliveries are observed.
                StepStatus { halted: round > self.sends + 1, surcharge: 0, sent: false }
            }
        }
    }

    fn chatters(n: usize, bits: u64, sends: u64) -> Vec<Chatter> {
        (0..n).map(|_| Chatter { bits, sends, arrivals: Vec::new() }).collect()
    }

    #[test]
    fn single_node_halts_immediately() {
        let g = gen_complete(1).unwrap();
        let mut eng = Engine::new(g, chatters(1, 8, 0), RunConfig::default()).unwrap();
        eng.run_until_halt().unwrap();
        let m = eng.metrics();
        assert_eq!(m.messages_sent, 0);
        assert_eq!(m.rounds_executed, 2);
        assert!(!m.timed_out);
    }

    #[test]
    fn two_node_echo_counts_messages() {
        let g = gen_complete(2).unwrap();
        let mut eng = Engine::new(g, chatters(2, 8, 3), RunConfig::default()).unwrap();
        eng.run_until_halt().unwrap();
        let m = eng.metrics().clone();
        assert_eq!(m.messages_sent, 6);
        assert_eq!(m.bits_sent, 48);
        assert_eq!(m.per_phase["chatter"].messages, 6);
    }

    #[test]
    fn delivery_is_next_round() {
        let g = gen_complete(2).unwrap();
        let mut eng = Engine::new(g, chatters(2, 8, 1), RunConfig::default()).unwrap();
        eng.run_until_halt().unwrap();
        let (nodes, _) = eng.finish();
        // Sent in round 1, observed in round 2 on both sides.
        assert_eq!(nodes[0].arrivals, vec![2]);
        assert_eq!(nodes[1].arrivals, vec![2]);
    }

    #[test]
    fn budget_enforced() {
        // scale_hint 2^8 and n = 2 give B = 4 * 8 = 32 bits.
        let g = gen_complete(2).unwrap();
        let mut eng = Engine::new(g, chatters(2, 40, 1), RunConfig::default()).unwrap();
        let err = eng.run_until_halt().unwrap_err();
        assert!(matches!(
            err,
            Error::BudgetViolation { bits: 40, budget: 32, round: 1, .. }
        ));
    }

    #[test]
    fn budget_allows_serialized_payloads() {
        struct Wide;
        #[derive(Clone)]
        struct WideTok;
        impl Payload for WideTok {
            fn kind(&self) -> &'static str {
                "wide"
            }
            fn encoded_bits(&self) -> u64 {
                100
            }
            fn serialization_rounds(&self) -> u64 {
                4
            }
        }
        impl Automaton for Wide {
            type Msg = WideTok;
            fn phase(&self) -> &'static str {
                "wide"
            }
            fn scale_hint(&self) -> u64 {
                1 << 8
            }
            fn step(
                &mut self,
                round: u64,
                _inbox: &mut [Option<WideTok>],
                outbox: &mut [Option<WideTok>],
                _rng: &mut ChaCha8Rng,
            ) -> StepStatus {
                if round == 1 {
                    outbox[0] = Some(WideTok);
                    StepStatus { halted: false, surcharge: 3, sent: true }
                } else {
                    StepStatus { halted: true, surcharge: 0, sent: false }
                }
            }
        }
        let g = gen_complete(2).unwrap();
        let mut eng = Engine::new(g, vec![Wide, Wide], RunConfig::default()).unwrap();
        // 100 bits over 4 rounds is 25 bits/round, under B = 32.
        eng.run_until_halt().unwrap();
        let m = eng.metrics();
        assert_eq!(m.bits_sent, 200);
        assert_eq!(m.rounds_executed, 2);
        // Round 1 carries the serialization surcharge once (max over nodes).
        assert_eq!(m.rounds_accounted, 5);
    }

    #[test]
    fn replay_is_byte_identical() {
        let run = || {
            let g = gen_cycle(6).unwrap();
            let mut eng =
                Engine::new(g, chatters(6, 8, 5), RunConfig { master_seed: 9, ..Default::default() })
                    .unwrap();
            eng.run_until_halt().unwrap();
            serde_json::to_string(eng.metrics()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn max_rounds_sets_timeout() {
        struct Forever;
        impl Automaton for Forever {
            type Msg = Tok;
            fn phase(&self) -> &'static str {
                "forever"
            }
            fn scale_hint(&self) -> u64 {
                2
            }
            fn step(
                &mut self,
                _round: u64,
                _inbox: &mut [Option<Tok>],
                _outbox: &mut [Option<Tok>],
                _rng: &mut ChaCha8Rng,
            ) -> StepStatus {
                StepStatus::default()
            }
        }
        let g = gen_complete(2).unwrap();
        let cfg = RunConfig { max_rounds: 17, ..Default::default() };
        let mut eng = Engine::new(g, vec![Forever, Forever], cfg).unwrap();
        eng.run_until_halt().unwrap();
        assert!(eng.metrics().timed_out);
        assert_eq!(eng.metrics().rounds_executed, 17);
    }
}
