//! Discrete optimal transport between mixture weights, solved exactly with
//! the transportation simplex, and the affine maps between coupled Gaussian
//! components.

use serde::{Deserialize, Serialize};

use crate::divergence::GaussianPrior;
use crate::error::{Error, Result};
use crate::mixture::Component;

const MARGINAL_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 100_000;

/// A feasible (and, from [`solve_ot`], optimal) transport plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// `pi[k][l]` is the mass moved from source component `k` to target `l`.
    pub pi: Vec<Vec<f64>>,
    pub cost: f64,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl Coupling {
    pub fn rows(&self) -> usize {
        self.pi.len()
    }

    pub fn cols(&self) -> usize {
        self.col_marginal.len()
    }

    /// Cells carrying positive mass, as `(k, l, mass)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pi.iter().enumerate().flat_map(|(k, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, m)| **m > 0.0)
                .map(move |(l, m)| (k, l, *m))
        })
    }
}

/// Squared 2-Wasserstein distance between two Gaussians:
/// `(mu_i - mu_j)^2 + (sd_i - sd_j)^2`.
pub fn component_cost(ci: &GaussianPrior, cj: &GaussianPrior) -> f64 {
    let dm = ci.mu() - cj.mu();
    let ds = ci.sd() - cj.sd();
    dm * dm + ds * ds
}

/// Cost matrix between the components of two mixtures.
pub fn cost_matrix(source: &[Component], target: &[Component]) -> Vec<Vec<f64>> {
    source
        .iter()
        .map(|a| {
            target
                .iter()
                .map(|b| {
                    let dm = a.mu - b.mu;
                    let ds = a.sd() - b.sd();
                    dm * dm + ds * ds
                })
                .collect()
        })
        .collect()
}

/// The monotone map pushing `N(ci.mu, ci.var)` forward onto
/// `N(cj.mu, cj.var)`.
pub fn monge_map(ci: &GaussianPrior, cj: &GaussianPrior, x: f64) -> f64 {
    cj.mu() + cj.sd() / ci.sd() * (x - ci.mu())
}

fn check_marginal(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Marginal(format!("{name} weights are empty")));
    }
    if let Some(bad) = w.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::Marginal(format!("{name} weight {bad} is negative or not finite")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > MARGINAL_TOL {
        return Err(Error::Marginal(format!("{name} weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Minimum-cost coupling of `weights_i` and `weights_j` under `cost`.
///
/// Starts from the northwest-corner basis and pivots on the first cell (in
/// row-major order) with negative reduced cost; ties for the leaving cell
/// are broken the same way. Stops when every reduced cost is non-negative.
pub fn solve_ot(weights_i: &[f64], weights_j: &[f64], cost: &[Vec<f64>]) -> Result<Coupling> {
    check_marginal("source", weights_i)?;
    check_marginal("target", weights_j)?;
    let (k, l) = (weights_i.len(), weights_j.len());
    if cost.len() != k || cost.iter().any(|row| row.len() != l) {
        return Err(Error::Param(format!("cost matrix must be {k} x {l}")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Param("cost matrix has non-finite entries".into()));
    }

    let mut flow = vec![vec![0.0; l]; k];
    let mut basic = vec![vec![false; l]; k];
    northwest_corner(weights_i, weights_j, &mut flow, &mut basic);

    let scale = cost.iter().flatten().fold(1.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-12 * scale;

    for _ in 0..MAX_PIVOTS {
        let (u, v) = potentials(cost, &basic);
        let entering = (0..k)
            .flat_map(|r| (0..l).map(move |c| (r, c)))
            .find(|&(r, c)| !basic[r][c] && cost[r][c] - u[r] - v[c] < -tol);
        let Some((er, ec)) = entering else {
            let total = (0..k)
                .flat_map(|r| (0..l).map(move |c| (r, c)))
                .map(|(r, c)| flow[r][c] * cost[r][c])
                .sum();
            return Ok(Coupling {
                pi: flow,
                cost: total,
                row_marginal: weights_i.to_vec(),
                col_marginal: weights_j.to_vec(),
            });
        };

        let cycle = pivot_cycle(&basic, er, ec);
        // Odd positions of the cycle lose mass.
        let mut step = f64::INFINITY;
        let mut leaving = None;
        for &(r, c) in cycle.iter().skip(1).step_by(2) {
            let x = flow[r][c];
            let better = match leaving {
                None => true,
                Some((lr, lc)) => x < step || (x == step && (r, c) < (lr, lc)),
            };
            if better {
                step = x;
                leaving = Some((r, c));
            }
        }
        let (lr, lc) = leaving.expect("a pivot cycle has at least two donor cells");
        for (idx, &(r, c)) in cycle.iter().enumerate() {
            if idx % 2 == 0 {
                flow[r][c] += step;
            } else {
                flow[r][c] -= step;
            }
        }
        flow[lr][lc] = 0.0;
        basic[lr][lc] = false;
        basic[er][ec] = true;
    }
    Err(Error::Convergence(format!(
        "transportation simplex did not terminate within {MAX_PIVOTS} pivots"
    )))
}

fn northwest_corner(a: &[f64], b: &[f64], flow: &mut [Vec<f64>], basic: &mut [Vec<bool>]) {
    let (k, l) = (a.len(), b.len());
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let (mut r, mut c) = (0, 0);
    loop {
        let x = supply[r].min(demand[c]).max(0.0);
        flow[r][c] = x;
        basic[r][c] = true;
        supply[r] -= x;
        demand[c] -= x;
        if r == k - 1 && c == l - 1 {
            break;
        }
        // Exactly one index advances per cell, which yields k + l - 1 basic
        // cells even when a step is degenerate.
        if r == k - 1 {
            c += 1;
        } else if c == l - 1 || supply[r] <= demand[c] {
            r += 1;
        } else {
            c += 1;
        }
    }
}

/// Dual potentials with `u[0] = 0` and `u[r] + v[c] = cost[r][c]` on the basis.
fn potentials(cost: &[Vec<f64>], basic: &[Vec<bool>]) -> (Vec<f64>, Vec<f64>) {
    let (k, l) = (cost.len(), cost[0].len());
    let mut u: Vec<Option<f64>> = vec![None; k];
    let mut v: Vec<Option<f64>> = vec![None; l];
    u[0] = Some(0.0);
    let mut stack = vec![Node::Row(0)];
    while let Some(node) = stack.pop() {
        match node {
            Node::Row(r) => {
                let ur = u[r].expect("row potential set before visiting");
                for c in 0..l {
                    if basic[r][c] && v[c].is_none() {
                        v[c] = Some(cost[r][c] - ur);
                        stack.push(Node::Col(c));
                    }
                }
            }
            Node::Col(c) => {
                let vc = v[c].expect("column potential set before visiting");
                for r in 0..k {
                    if basic[r][c] && u[r].is_none() {
                        u[r] = Some(cost[r][c] - vc);
                        stack.push(Node::Row(r));
                    }
                }
            }
        }
    }
    (
        u.into_iter().map(|x| x.unwrap_or(0.0)).collect(),
        v.into_iter().map(|x| x.unwrap_or(0.0)).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Row(usize),
    Col(usize),
}

/// The unique cycle formed by adding cell `(er, ec)` to the basis tree,
/// starting at the entering cell and alternating row and column moves.
fn pivot_cycle(basic: &[Vec<bool>], er: usize, ec: usize) -> Vec<(usize, usize)> {
    let (k, l) = (basic.len(), basic[0].len());
    // Path in the basis tree from column `ec` to row `er`.
    let mut parent: Vec<Option<Node>> = vec![None; k + l];
    let id = |n: Node| match n {
        Node::Row(r) => r,
        Node::Col(c) => k + c,
    };
    let start = Node::Col(ec);
    let goal = Node::Row(er);
    let mut seen = vec![false; k + l];
    seen[id(start)] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        let next: Vec<Node> = match node {
            Node::Row(r) => (0..l).filter(|&c| basic[r][c]).map(Node::Col).collect(),
            Node::Col(c) => (0..k).filter(|&r| basic[r][c]).map(Node::Row).collect(),
        };
        for n in next {
            if !seen[id(n)] {
                seen[id(n)] = true;
                parent[id(n)] = Some(node);
                queue.push_back(n);
            }
        }
    }

    let mut path = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = parent[id(cur)].expect("basis is a spanning tree");
        path.push(cur);
    }
    // path: Row(er), Col(..), Row(..), ..., Col(ec). Consecutive nodes are cells.
    let mut cycle = vec![(er, ec)];
    for w in path.windows(2) {
        let cell = match (w[0], w[1]) {
            (Node::Row(r), Node::Col(c)) | (Node::Col(c), Node::Row(r)) => (r, c),
            _ => unreachable!("tree path alternates rows and columns"),
        };
        cycle.push(cell);
    }
    cycle
}
