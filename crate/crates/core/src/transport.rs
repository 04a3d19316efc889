//! Exact Earth Mover's Distance between weighted point sets.
//!
//! The transportation problem is solved with the transportation simplex
//! (northwest-corner start, MODI pivoting, Bland's rule). Unequal total
//! masses are handled as a partial match: the total flow equals the smaller
//! mass sum, implemented with a zero-cost dummy source or sink.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::MixtureModel;

const PIVOT_TOL: f64 = 1e-12;

/// Weighted point set: component means and their masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    positions: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl Signature {
    pub fn new(positions: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if positions.is_empty() || positions.len() != masses.len() {
            return Err(Error::InvalidInput(format!(
                "signature needs matching non-empty positions and masses (got {} and {})",
                positions.len(),
                masses.len()
            )));
        }
        let dim = positions[0].len();
        if let Some(p) = positions.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signature position is not finite".into()));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidInput(format!("signature mass {m} is not positive")));
        }
        Ok(Self { positions, masses })
    }

    /// Means and weights of the mixture's components.
    pub fn from_model(model: &MixtureModel) -> Result<Self> {
        Self::new(
            model.components.iter().map(|c| c.mean.clone()).collect(),
            model.weights().collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Pairwise Euclidean distances, row-major `sources x sinks`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundDistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl GroundDistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMatrix {
    pub rows: usize,
    pub cols: usize,
    pub flows: Vec<f64>,
    pub total_flow: f64,
}

impl FlowMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.flows[i * self.cols + j]
    }

    /// `Σ f_ij ε_ij`.
    pub fn work(&self, dist: &GroundDistanceMatrix) -> f64 {
        self.flows.iter().zip(&dist.values).map(|(f, d)| f * d).sum()
    }
}

pub fn ground_distances(a: &Signature, b: &Signature) -> Result<GroundDistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let values = a
        .positions
        .iter()
        .flat_map(|p| {
            b.positions.iter().map(move |q| {
                p.iter()
                    .zip(q)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    Ok(GroundDistanceMatrix {
        rows: a.len(),
        cols: b.len(),
        values,
    })
}

/// Minimum-cost flow moving `min(Σa, Σb)` mass from `a` to `b` under the
/// costs in `dist`, which must be the (metric) ground distance of the two
/// signatures: mass at coincident positions is matched up front.
pub fn solve_transport(a: &Signature, b: &Signature, dist: &GroundDistanceMatrix) -> Result<FlowMatrix> {
    let (m, n) = (a.len(), b.len());
    if dist.rows != m || dist.cols != n || dist.values.len() != m * n {
        return Err(Error::InvalidInput(format!(
            "distance matrix is {}x{}, signatures are {m}x{n}",
            dist.rows, dist.cols
        )));
    }
    let mut flows = vec![0.0; m * n];
    let mut supply = a.masses.clone();
    let mut demand = b.masses.clone();

    for i in 0..m {
        for j in 0..n {
            if dist.get(i, j) == 0.0 && a.positions[i] == b.positions[j] {
                let f = supply[i].min(demand[j]);
                if f > 0.0 {
                    flows[i * n + j] += f;
                    supply[i] -= f;
                    demand[j] -= f;
                }
            }
        }
    }

    let rows: Vec<usize> = (0..m).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| demand[j] > 0.0).collect();
    if !rows.is_empty() && !cols.is_empty() {
        let mut problem = Balanced::new(
            rows.iter().map(|&i| supply[i]).collect(),
            cols.iter().map(|&j| demand[j]).collect(),
            |r, c| dist.get(rows[r], cols[c]),
        );
        problem.solve();
        for (r, &i) in rows.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                flows[i * n + j] += problem.flow(r, c);
            }
        }
    }
    let total_flow = flows.iter().sum();
    Ok(FlowMatrix {
        rows: m,
        cols: n,
        flows,
        total_flow,
    })
}

/// Optimal work divided by total flow.
pub fn emd(a: &Signature, b: &Signature) -> Result<f64> {
    let dist = ground_distances(a, b)?;
    let flow = solve_transport(a, b, &dist)?;
    assert!(flow.total_flow > 0.0, "positive masses always move some flow");
    Ok(flow.work(&dist) / flow.total_flow)
}

/// A balanced transportation problem over a spanning-tree basis.
struct Balanced {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    /// Basic cells as flat indices into `m x n`; always `m + n - 1` of them.
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    real_rows: usize,
    real_cols: usize,
}

impl Balanced {
    /// Adds a zero-cost dummy row or column when the totals differ.
    fn new(mut supply: Vec<f64>, mut demand: Vec<f64>, cost: impl Fn(usize, usize) -> f64) -> Self {
        let (real_rows, real_cols) = (supply.len(), demand.len());
        let s: f64 = supply.iter().sum();
        let d: f64 = demand.iter().sum();
        let gap = s - d;
        let scale = s.max(d);
        if gap > PIVOT_TOL * scale {
            demand.push(gap);
        } else if -gap > PIVOT_TOL * scale {
            supply.push(-gap);
        }
        let (m, n) = (supply.len(), demand.len());
        let cost = (0..m * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                if i < real_rows && j < real_cols {
                    cost(i, j)
                } else {
                    0.0
                }
            })
            .collect();
        let mut problem = Balanced {
            m,
            n,
            cost,
            flow: vec![0.0; m * n],
            basis: Vec::with_capacity(m + n - 1),
            is_basic: vec![false; m * n],
            real_rows,
            real_cols,
        };
        problem.northwest_corner(supply, demand);
        problem
    }

    fn flow(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.real_rows && j < self.real_cols);
        self.flow[i * self.n + j]
    }

    fn northwest_corner(&mut self, mut supply: Vec<f64>, mut demand: Vec<f64>) {
        let (mut i, mut j) = (0, 0);
        loop {
            let k = i * self.n + j;
            let row_done = supply[i] <= demand[j];
            let x = supply[i].min(demand[j]);
            self.flow[k] = x;
            self.basis.push(k);
            self.is_basic[k] = true;
            if i == self.m - 1 && j == self.n - 1 {
                break;
            }
            if (row_done && i < self.m - 1) || j == self.n - 1 {
                demand[j] -= x;
                supply[i] = 0.0;
                i += 1;
            } else {
                supply[i] -= x;
                demand[j] = 0.0;
                j += 1;
            }
        }
        debug_assert_eq!(self.basis.len(), self.m + self.n - 1);
    }

    /// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on basic cells.
    fn potentials(&self, adjacency: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let mut u = vec![f64::NAN; m];
        let mut v = vec![f64::NAN; n];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &k in &adjacency[node] {
                let (i, j) = (k / n, k % n);
                if node < m {
                    if v[j].is_nan() {
                        v[j] = self.cost[k] - u[i];
                        stack.push(m + j);
                    }
                } else if u[i].is_nan() {
                    u[i] = self.cost[k] - v[j];
                    stack.push(i);
                }
            }
        }
        (u, v)
    }

    /// Basic cells on the tree path from row node `i` to column node `j`,
    /// in walking order starting at row `i`.
    fn tree_path(&self, adjacency: &[Vec<usize>], i: usize, j: usize) -> Vec<usize> {
        let (m, n) = (self.m, self.n);
        let target = m + j;
        let mut via: Vec<Option<usize>> = vec![None; m + n];
        let mut seen = vec![false; m + n];
        seen[i] = true;
        let mut stack = vec![i];
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &k in &adjacency[node] {
                let other = if node < m { m + k % n } else { k / n };
                if !seen[other] {
                    seen[other] = true;
                    via[other] = Some(k);
                    stack.push(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != i {
            let k = via[node].expect("basis is a spanning tree");
            path.push(k);
            node = if node < m { m + k % n } else { k / n };
        }
        path.reverse();
        path
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &k in &self.basis {
            adj[k / self.n].push(k);
            adj[self.m + k % self.n].push(k);
        }
        adj
    }

    fn solve(&mut self) {
        let (m, n) = (self.m, self.n);
        let cost_scale = self.cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
        let tol = PIVOT_TOL * cost_scale;
        let max_pivots = 50 * (m + n) * (m + n) + 1000;
        for _ in 0..max_pivots {
            let adjacency = self.adjacency();
            let (u, v) = self.potentials(&adjacency);
            // Bland: lowest-index improving cell enters
            let entering =
                (0..m * n).find(|&k| !self.is_basic[k] && self.cost[k] - u[k / n] - v[k % n] < -tol);
            let Some(enter) = entering else {
                return;
            };
            let (ei, ej) = (enter / n, enter % n);
            // cycle: enter(+), then the path from column ej back to row ei
            // alternates (-, +, -, ...)
            let path = self.tree_path(&adjacency, ei, ej);
            let minus: Vec<usize> = path.iter().rev().step_by(2).copied().collect();
            let plus: Vec<usize> = path.iter().rev().skip(1).step_by(2).copied().collect();
            let theta = minus.iter().map(|&k| self.flow[k]).fold(f64::INFINITY, f64::min);
            let leave = *minus
                .iter()
                .filter(|&&k| self.flow[k] == theta)
                .min()
                .expect("cycle has a decreasing cell");
            self.flow[enter] = theta;
            for &k in &plus {
                self.flow[k] += theta;
            }
            for &k in &minus {
                self.flow[k] = (self.flow[k] - theta).max(0.0);
            }
            self.flow[leave] = 0.0;
            self.is_basic[leave] = false;
            self.is_basic[enter] = true;
            let slot = self.basis.iter().position(|&k| k == leave).unwrap();
            self.basis[slot] = enter;
        }
        log::warn!("transportation simplex hit its pivot limit on a {m}x{n} instance");
    }
}
