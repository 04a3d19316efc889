#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scenechange::{GaussianComponent, MixtureModel, PointCloud};

/// Minimum of `Σ c_ij f_ij` over the partial transportation polytope
/// (`f >= 0`, row sums <= a, column sums <= b, total = min(Σa, Σb)), found by
/// enumerating every vertex: each choice of `mn - 1` tight inequalities
/// together with the total-flow equality.
pub fn lp_vertex_min(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let vars = m * n;
    let total = a.iter().sum::<f64>().min(b.iter().sum::<f64>());
    // inequality rows g·f <= h
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..m {
        let mut g = vec![0.0; vars];
        (0..n).for_each(|j| g[i * n + j] = 1.0);
        rows.push((g, a[i]));
    }
    for j in 0..n {
        let mut g = vec![0.0; vars];
        (0..m).for_each(|i| g[i * n + j] = 1.0);
        rows.push((g, b[j]));
    }
    for v in 0..vars {
        let mut g = vec![0.0; vars];
        g[v] = -1.0;
        rows.push((g, 0.0));
    }
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(vars - 1);
    combinations(rows.len(), vars - 1, 0, &mut chosen, &mut |set| {
        let mut mat = DMatrix::zeros(vars, vars);
        let mut rhs = DVector::zeros(vars);
        for (r, &k) in set.iter().enumerate() {
            for v in 0..vars {
                mat[(r, v)] = rows[k].0[v];
            }
            rhs[r] = rows[k].1;
        }
        for v in 0..vars {
            mat[(vars - 1, v)] = 1.0;
        }
        rhs[vars - 1] = total;
        let lu = mat.lu();
        if lu.determinant().abs() < 1e-12 {
            return;
        }
        let Some(f) = lu.solve(&rhs) else { return };
        let feasible = rows.iter().all(|(g, h)| {
            let lhs: f64 = g.iter().zip(f.iter()).map(|(x, y)| x * y).sum();
            lhs <= h + 1e-9
        });
        if feasible {
            let obj: f64 = f.iter().zip(cost).map(|(x, c)| x * c).sum();
            best = best.min(obj);
        }
    });
    best
}

fn combinations(n: usize, k: usize, start: usize, chosen: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    for i in start..n {
        if n - i < k - chosen.len() {
            break;
        }
        chosen.push(i);
        combinations(n, k, i + 1, chosen, visit);
        chosen.pop();
    }
}

/// Isotropic Gaussian blobs around `centers`, `per_blob` points each.
pub fn blobs(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], sigma: f64, per_blob: usize) -> PointCloud {
    let dim = centers[0].len();
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut cloud = PointCloud::new(dim).unwrap();
    for c in centers {
        for _ in 0..per_blob {
            let p: Vec<f64> = c.iter().map(|x| x + noise.sample(rng)).collect();
            cloud.push(&p).unwrap();
        }
    }
    cloud
}

/// `count` centers in `[0, extent]^dim`, pairwise at least `separation` apart.
pub fn separated_centers(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    extent: f64,
    separation: f64,
) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::new();
    while centers.len() < count {
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..extent)).collect();
        if centers.iter().all(|o| dist(o, &c) >= separation) {
            centers.push(c);
        }
    }
    centers
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A mixture with `k` isotropic components at random positions and random
/// positive weights.
pub fn random_model(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> MixtureModel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let components = raw
        .iter()
        .map(|w| {
            let mean = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            GaussianComponent::isotropic(w / total, mean, rng.random_range(0.01..0.2))
        })
        .collect();
    MixtureModel::new(dim, components).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
