//! Binary labeling by s-t minimum cut (Dinic's algorithm).

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

struct Arc {
    to: usize,
    cap: f64,
}

struct FlowGraph {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    /// Arc `u -> v` with capacity `cap` and its reverse with capacity `rev_cap`.
    fn add(&mut self, u: usize, v: usize, cap: f64, rev_cap: f64) {
        self.adj[u].push(self.arcs.len());
        self.arcs.push(Arc { to: v, cap });
        self.adj[v].push(self.arcs.len());
        self.arcs.push(Arc { to: u, cap: rev_cap });
    }

    fn levels(&self, s: usize) -> Vec<i64> {
        let mut level = vec![-1; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let arc = &self.arcs[a];
                if arc.cap > EPS && level[arc.to] < 0 {
                    level[arc.to] = level[u] + 1;
                    queue.push_back(arc.to);
                }
            }
        }
        level
    }

    /// Saturate every s-t path of the level graph.
    fn blocking_flow(&mut self, s: usize, t: usize, level: &[i64]) {
        let mut next = vec![0; self.adj.len()];
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let f = path
                    .iter()
                    .map(|&a| self.arcs[a].cap)
                    .fold(f64::INFINITY, f64::min);
                for &a in &path {
                    self.arcs[a].cap -= f;
                    self.arcs[a ^ 1].cap += f;
                }
                let k = path
                    .iter()
                    .position(|&a| self.arcs[a].cap <= EPS)
                    .unwrap_or(0);
                path.truncate(k);
                u = path.last().map_or(s, |&a| self.arcs[a].to);
                continue;
            }
            let mut advanced = false;
            while next[u] < self.adj[u].len() {
                let a = self.adj[u][next[u]];
                let arc = &self.arcs[a];
                if arc.cap > EPS && level[arc.to] == level[u] + 1 {
                    path.push(a);
                    u = arc.to;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                if u == s {
                    return;
                }
                path.pop();
                let tail = path.last().map_or(s, |&a| self.arcs[a].to);
                next[tail] += 1;
                u = tail;
            }
        }
    }

    fn max_flow(&mut self, s: usize, t: usize) {
        loop {
            let level = self.levels(s);
            if level[t] < 0 {
                return;
            }
            self.blocking_flow(s, t, &level);
        }
    }
}

/// Minimize `Σ_i cost_i(label_i) + Σ_(i,j) w_ij [label_i != label_j]` over binary labels.
///
/// `unary[i] = (cost of label 0, cost of label 1)`; `edges` are undirected with
/// nonnegative weights. Returns `true` for label 1.
pub fn binary_min_cut(unary: &[(f64, f64)], edges: &[(usize, usize, f64)]) -> Vec<bool> {
    let n = unary.len();
    let (s, t) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    for (i, &(c0, c1)) in unary.iter().enumerate() {
        let m = c0.min(c1);
        // Source side is label 0: cutting s->i assigns label 1 and pays c1.
        if c1 - m > 0.0 {
            g.add(s, i, c1 - m, 0.0);
        }
        if c0 - m > 0.0 {
            g.add(i, t, c0 - m, 0.0);
        }
    }
    for &(i, j, w) in edges {
        if w > 0.0 {
            g.add(i, j, w, w);
        }
    }
    g.max_flow(s, t);
    let reach = g.levels(s);
    (0..n).map(|i| reach[i] < 0).collect()
}
