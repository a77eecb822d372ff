//! Anonymous, undirected, port-numbered graphs.
//!
//! A [`PortGraph`] is the only world model the protocols ever see: each node
//! knows its degree and a local numbering of its incident links, nothing
//! else.  Port numbers are 1..deg(v) in the usual presentation; internally
//! they are 0-based indices into the adjacency row of the node.

use crate::error::{Error, Result};
use crate::rng::rng_stream;
use rand::seq::SliceRandom;
use rand::Rng;

/// One endpoint of a link as seen from a node: the neighbor and the port
/// the neighbor uses for the reciprocal direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    /// Port index at `node` that maps back to us.
    pub back_port: usize,
}

/// Undirected, connected, port-numbered graph.
///
/// Invariants (checked by [`PortGraph::validate`], established by every
/// constructor):
/// - reciprocity: if `adj[u][p] = (v, q)` then `adj[v][q] = (u, p)`;
/// - connected, no self-loops, no duplicate edges;
/// - ports at node `v` are exactly the indices `0..deg(v)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortGraph {
    adj: Vec<Vec<Neighbor>>,
    edge_count: usize,
}

impl PortGraph {
    /// Build a graph from an edge list over nodes `0..n`.
    ///
    /// Ports are assigned per node in the order edges appear in `edges`,
    /// which makes construction deterministic.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("graph must have at least one node".into()));
        }
        let mut adj: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({u}, {v}) references a node >= n = {n}"
                )));
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop at node {u}")));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::Validation(format!("duplicate edge ({u}, {v})")));
            }
            let pu = adj[u].len();
            let pv = adj[v].len();
            adj[u].push(Neighbor { node: v, back_port: pv });
            adj[v].push(Neighbor { node: u, back_port: pu });
        }
        let g = PortGraph { adj, edge_count: edges.len() };
        if !g.is_connected() {
            return Err(Error::Validation("graph is disconnected".into()));
        }
        g.validate()?;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Neighbors of `v` in port order.
    pub fn neighbors(&self, v: usize) -> &[Neighbor] {
        &self.adj[v]
    }

    /// Endpoint reached from `v` through port `p` (0-based).
    pub fn port_target(&self, v: usize, p: usize) -> Neighbor {
        self.adj[v][p]
    }

    /// Sum of degrees over `nodes`.
    pub fn volume<I: IntoIterator<Item = usize>>(&self, nodes: I) -> usize {
        nodes.into_iter().map(|v| self.degree(v)).sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, row) in self.adj.iter().enumerate() {
            for nb in row {
                if u < nb.node {
                    out.push((u, nb.node));
                }
            }
        }
        out
    }

    fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for nb in &self.adj[v] {
                if !seen[nb.node] {
                    seen[nb.node] = true;
                    count += 1;
                    stack.push(nb.node);
                }
            }
        }
        count == n
    }

    /// Re-check all structural invariants.
    pub fn validate(&self) -> Result<()> {
        let mut m2 = 0usize;
        for (u, row) in self.adj.iter().enumerate() {
            let mut targets = std::collections::HashSet::new();
            for (p, nb) in row.iter().enumerate() {
                m2 += 1;
                if nb.node == u {
                    return Err(Error::Validation(format!("self-loop at node {u}")));
                }
                if !targets.insert(nb.node) {
                    return Err(Error::Validation(format!(
                        "duplicate edge between {u} and {}",
                        nb.node
                    )));
                }
                let back = self
                    .adj
                    .get(nb.node)
                    .and_then(|r| r.get(nb.back_port))
                    .ok_or_else(|| Error::Validation(format!("dangling port {u}:{p}")))?;
                if back.node != u || back.back_port != p {
                    return Err(Error::Validation(format!(
                        "reciprocity violated on link {u}:{p} <-> {}:{}",
                        nb.node, nb.back_port
                    )));
                }
            }
        }
        if m2 != 2 * self.edge_count {
            return Err(Error::Validation("edge count inconsistent with adjacency".into()));
        }
        if !self.is_connected() {
            return Err(Error::Validation("graph is disconnected".into()));
        }
        Ok(())
    }
}

/// Cycle `C_n` with port 0 clockwise and port 1 counter-clockwise at every
/// node.
pub fn gen_cycle(n: usize) -> Result<PortGraph> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("cycle needs n >= 3, got {n}")));
    }
    let mut adj = Vec::with_capacity(n);
    for i in 0..n {
        adj.push(vec![
            Neighbor { node: (i + 1) % n, back_port: 1 },
            Neighbor { node: (i + n - 1) % n, back_port: 0 },
        ]);
    }
    let g = PortGraph { adj, edge_count: n };
    debug_assert!(g.validate().is_ok());
    Ok(g)
}

/// Complete graph `K_n`; at each node neighbors are sorted by index.
pub fn gen_complete(n: usize) -> Result<PortGraph> {
    if n == 0 {
        return Err(Error::InvalidParameter("complete graph needs n >= 1".into()));
    }
    if n == 1 {
        return PortGraph::from_edges(1, &[]);
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            edges.push((u, v));
        }
    }
    from_sorted_edges(n, edges)
}

/// Random `d`-regular graph via the pairing model; retries with derived
/// sub-seeds until a simple connected graph comes out.
pub fn gen_random_regular(n: usize, d: usize, seed: u64) -> Result<PortGraph> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("need n >= 1 and d >= 1".into()));
    }
    if n * d % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "n*d must be even (handshake lemma), got n = {n}, d = {d}"
        )));
    }
    if d >= n {
        return Err(Error::InvalidParameter(format!("need d < n, got n = {n}, d = {d}")));
    }
    const ATTEMPTS: u64 = 200;
    for attempt in 0..ATTEMPTS {
        let mut rng = rng_stream(seed, attempt, "gen_random_regular");
        let mut stubs: Vec<usize> = (0..n * d).map(|s| s / d).collect();
        stubs.shuffle(&mut rng);
        let mut edges = Vec::with_capacity(n * d / 2);
        let mut seen = std::collections::HashSet::new();
        let mut ok = true;
        for pair in stubs.chunks(2) {
            let (u, v) = (pair[0], pair[1]);
            if u == v || !seen.insert((u.min(v), u.max(v))) {
                ok = false;
                break;
            }
            edges.push((u, v));
        }
        if !ok {
            continue;
        }
        if let Ok(g) = from_sorted_edges(n, edges) {
            return Ok(g);
        }
    }
    Err(Error::GenerationFailure(format!(
        "no simple connected {d}-regular graph on {n} nodes within {ATTEMPTS} attempts"
    )))
}

/// Erdos-Renyi G(n, p); retries with derived sub-seeds until connected.
pub fn gen_erdos_renyi(n: usize, p_edge: f64, seed: u64) -> Result<PortGraph> {
    if n == 0 || !(0.0..=1.0).contains(&p_edge) {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1 and p in [0, 1], got n = {n}, p = {p_edge}"
        )));
    }
    const ATTEMPTS: u64 = 200;
    for attempt in 0..ATTEMPTS {
        let mut rng = rng_stream(seed, attempt, "gen_erdos_renyi");
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(p_edge) {
                    edges.push((u, v));
                }
            }
        }
        if let Ok(g) = from_sorted_edges(n, edges) {
            return Ok(g);
        }
    }
    Err(Error::GenerationFailure(format!(
        "no connected G({n}, {p_edge}) sample within {ATTEMPTS} attempts"
    )))
}

/// Parse an edge-list text: one "u v" pair per line, 0-based indices,
/// `#` starts a comment.  Ports are assigned per node in order of first
/// appearance of each incident edge.
pub fn load_edge_list(text: &str) -> Result<PortGraph> {
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut max_node = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.ok_or(())
                .and_then(|t| t.parse::<usize>().map_err(|_| ()))
                .map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("expected `u v`, got `{line}`"),
                })
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("trailing tokens in `{line}`"),
            });
        }
        if u == v {
            return Err(Error::Parse { line: line_no, msg: format!("self-loop at node {u}") });
        }
        if edges.iter().any(|&(a, b)| (a, b) == (u, v) || (a, b) == (v, u)) {
            return Err(Error::Parse { line: line_no, msg: format!("duplicate edge ({u}, {v})") });
        }
        max_node = max_node.max(u).max(v);
        edges.push((u, v));
    }
    if edges.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no edges in input".into() });
    }
    PortGraph::from_edges(max_node + 1, &edges)
}

/// Build with the generator port rule: at each node, neighbors sorted by
/// construction index get ports 0..deg in that order.
fn from_sorted_edges(n: usize, mut edges: Vec<(usize, usize)>) -> Result<PortGraph> {
    edges.sort_unstable_by_key(|&(u, v)| (u.min(v), u.max(v)));
    // Feeding edges sorted lexicographically makes each node's port order
    // equal to its sorted neighbor order.
    let mut by_node: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in &edges {
        let (a, b) = (u.min(v), u.max(v));
        by_node[a].push(b);
        by_node[b].push(a);
    }
    let mut adj: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
    for (u, mut nbrs) in by_node.into_iter().enumerate() {
        nbrs.sort_unstable();
        for v in nbrs {
            adj[u].push(Neighbor { node: v, back_port: usize::MAX });
        }
    }
    // Fix up back ports.
    for u in 0..n {
        for p in 0..adj[u].len() {
            let v = adj[u][p].node;
            let q = adj[v].iter().position(|nb| nb.node == u).unwrap();
            adj[u][p].back_port = q;
        }
    }
    let g = PortGraph { adj, edge_count: edges.len() };
    if !g.is_connected() {
        return Err(Error::Validation("graph is disconnected".into()));
    }
    g.validate()?;
    Ok(g)
}
