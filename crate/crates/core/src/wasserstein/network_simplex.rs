//! Transportation simplex on the complete bipartite graph.
//!
//! The basis is a spanning tree of `n + m - 1` cells. Pricing is Dantzig's
//! rule; after a run of degenerate pivots the solver falls back to Bland's
//! rule (first improving cell, smallest leaving index) until the next
//! non-degenerate pivot, which rules out cycling.

use std::collections::VecDeque;

const DEGENERATE_STREAK: usize = 32;

#[derive(Debug, Clone)]
pub(crate) struct TransportSolution {
    /// Row-major `n x m` flow.
    pub flow: Vec<f64>,
    pub cost: f64,
    pub pivots: usize,
}

pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> TransportSolution {
    let n = supply.len();
    let m = demand.len();
    assert_eq!(cost.len(), n * m);
    assert!(n > 0 && m > 0);

    let max_cost = cost.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
    let eps = 1e-13 * max_cost;

    let mut basis = northwest_corner(n, m, supply, demand);
    let mut in_basis = vec![false; n * m];
    for &c in &basis {
        in_basis[c] = true;
    }
    let mut flow = tree_flows(n, m, &basis, supply, demand);

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut pivots = 0usize;
    let mut degenerate_run = 0usize;
    let max_pivots = 50 * (n + m) * (n + m) + 1000;

    loop {
        potentials(n, m, &basis, cost, &mut u, &mut v);

        let bland = degenerate_run >= DEGENERATE_STREAK;
        let mut entering: Option<(usize, f64)> = None;
        'price: for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            for j in 0..m {
                let cell = i * m + j;
                if in_basis[cell] {
                    continue;
                }
                let r = row[j] - u[i] - v[j];
                if r < -eps {
                    if bland {
                        entering = Some((cell, r));
                        break 'price;
                    }
                    if entering.is_none_or(|(_, best)| r < best) {
                        entering = Some((cell, r));
                    }
                }
            }
        }
        let Some((enter, _)) = entering else { break };
        if pivots >= max_pivots {
            log::warn!("transportation simplex hit the pivot limit ({max_pivots})");
            break;
        }

        // Tree path from row node of `enter` to its column node.
        let (ei, ej) = (enter / m, enter % m);
        let path = tree_path(n, m, &basis, ei, n + ej);
        // Edges along the path alternate -, +, -, ... starting at the row.
        let mut theta = f64::INFINITY;
        let mut leave_pos = usize::MAX;
        for (k, &pos) in path.iter().enumerate() {
            if k % 2 == 0 {
                let f = flow[basis[pos]];
                let better = f < theta - 1e-15
                    || (f <= theta + 1e-15 && leave_pos != usize::MAX && basis[pos] < basis[leave_pos]);
                if leave_pos == usize::MAX || better {
                    theta = f;
                    leave_pos = pos;
                }
            }
        }
        let theta = theta.max(0.0);
        for (k, &pos) in path.iter().enumerate() {
            let c = basis[pos];
            if k % 2 == 0 {
                flow[c] -= theta;
            } else {
                flow[c] += theta;
            }
        }
        flow[enter] = theta;
        let leaving = basis[leave_pos];
        flow[leaving] = 0.0;
        in_basis[leaving] = false;
        in_basis[enter] = true;
        basis[leave_pos] = enter;

        pivots += 1;
        if theta <= 1e-15 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
    }

    // Recompute flows from the final tree so the marginals hold to rounding.
    let mut flow = tree_flows(n, m, &basis, supply, demand);
    for f in &mut flow {
        if *f < 0.0 {
            *f = 0.0;
        }
    }
    let total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    TransportSolution { flow, cost: total, pivots }
}

fn northwest_corner(n: usize, m: usize, supply: &[f64], demand: &[f64]) -> Vec<usize> {
    let mut ra = supply.to_vec();
    let mut rb = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut cells = Vec::with_capacity(n + m - 1);
    loop {
        cells.push(i * m + j);
        let q = ra[i].min(rb[j]).max(0.0);
        ra[i] -= q;
        rb[j] -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    cells
}

/// Node ids: rows `0..n`, columns `n..n+m`.
fn adjacency(n: usize, m: usize, basis: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n + m];
    for (pos, &c) in basis.iter().enumerate() {
        let (i, j) = (c / m, c % m);
        adj[i].push((n + j, pos));
        adj[n + j].push((i, pos));
    }
    adj
}

fn potentials(n: usize, m: usize, basis: &[usize], cost: &[f64], u: &mut [f64], v: &mut [f64]) {
    let adj = adjacency(n, m, basis);
    let mut seen = vec![false; n + m];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    u[0] = 0.0;
    while let Some(a) = queue.pop_front() {
        for &(b, pos) in &adj[a] {
            if seen[b] {
                continue;
            }
            seen[b] = true;
            let c = cost[basis[pos]];
            if a < n {
                v[b - n] = c - u[a];
            } else {
                u[b] = c - v[a - n];
            }
            queue.push_back(b);
        }
    }
}

/// Basis positions on the tree path from node `from` to node `to`, in order.
fn tree_path(n: usize, m: usize, basis: &[usize], from: usize, to: usize) -> Vec<usize> {
    let adj = adjacency(n, m, basis);
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
    let mut seen = vec![false; n + m];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(a) = queue.pop_front() {
        if a == to {
            break;
        }
        for &(b, pos) in &adj[a] {
            if !seen[b] {
                seen[b] = true;
                parent[b] = Some((a, pos));
                queue.push_back(b);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = to;
    while cur != from {
        let (p, pos) = parent[cur].expect("basis is a spanning tree");
        path.push(pos);
        cur = p;
    }
    path.reverse();
    path
}

/// Flows on a spanning tree are fixed by the marginals; peel leaves.
fn tree_flows(n: usize, m: usize, basis: &[usize], supply: &[f64], demand: &[f64]) -> Vec<f64> {
    let adj = adjacency(n, m, basis);
    let mut residual: Vec<f64> = supply.iter().chain(demand.iter()).copied().collect();
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut used = vec![false; basis.len()];
    let mut flow = vec![0.0; n * m];
    let mut leaves: Vec<usize> = (0..n + m).filter(|&a| degree[a] == 1).collect();
    while let Some(a) = leaves.pop() {
        if degree[a] != 1 {
            continue;
        }
        let Some(&(b, pos)) = adj[a].iter().find(|(_, pos)| !used[*pos]) else { continue };
        used[pos] = true;
        let f = residual[a];
        flow[basis[pos]] = f;
        residual[a] = 0.0;
        residual[b] -= f;
        degree[a] -= 1;
        degree[b] -= 1;
        if degree[b] == 1 {
            leaves.push(b);
        }
    }
    flow
}
