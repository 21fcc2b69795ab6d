use crate::network::FacilityNetwork;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenOptions {
    /// Convergence threshold on the infinity norm of successive iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

/// Principal eigenpair of the binary adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSolution {
    pub lambda: f64,
    /// Non-negative, unit Euclidean norm, in node order.
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// `‖Av − λv‖∞` for the unit vector.
    pub residual: f64,
}

/// Eigenvector centrality from the binary adjacency matrix, rescaled so the
/// largest entry in the network is exactly 1.
///
/// Power iteration runs on `A + I`, which shares eigenvectors with `A` and
/// keeps bipartite graphs from oscillating, separately on each connected
/// component, starting from all ones. Isolated nodes get 0. The result is the
/// limit of power iteration on the whole network: only components whose
/// eigenvalue equals the largest (to a relative 1e-9) keep non-zero
/// centrality, each weighted by the projection of the all-ones start vector
/// onto its eigenvector. Iterating per component avoids the very slow
/// convergence a whole-network iteration shows when two components have
/// nearly equal eigenvalues.
///
/// A component has converged when successive iterates or the residual
/// `‖Av − λv‖∞` fall to `tol`.
pub fn eigenvector_centrality(net: &FacilityNetwork, opts: EigenOptions) -> Result<(EigenSolution, Vec<f64>)> {
    let n = net.node_count();
    if n == 0 {
        return Err(Error::Model(format!("network {} has no nodes", net.partition_key())));
    }
    let adj = net.neighbors();
    let components = components(&adj);
    if components.is_empty() {
        let uniform = 1.0 / (n as f64).sqrt();
        let solution = EigenSolution {
            lambda: 0.0,
            vector: vec![uniform; n],
            iterations: 0,
            residual: 0.0,
        };
        return Ok((solution, vec![0.0; n]));
    }

    let mut x = vec![0.0; n];
    let mut per_component = Vec::with_capacity(components.len());
    let mut iterations = 0;
    for nodes in &components {
        let (lambda, iters) = power_iteration(&adj, nodes, &mut x, opts)?;
        iterations = iterations.max(iters);
        per_component.push(lambda);
    }
    let top = per_component.iter().copied().fold(0.0, f64::max);
    let cutoff = top - 1e-9 * top.max(1.0);
    for (nodes, &lambda) in components.iter().zip(&per_component) {
        // component vectors have unit norm; weight tied ones by their
        // overlap with the all-ones start vector
        let weight = if lambda >= cutoff {
            nodes.iter().map(|&i| x[i]).sum::<f64>()
        } else {
            0.0
        };
        for &i in nodes {
            x[i] *= weight;
        }
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut x {
        *v /= norm;
    }

    let ax: Vec<f64> = (0..n).map(|i| adj[i].iter().map(|&(j, _)| x[j]).sum()).collect();
    let lambda: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
    let residual = x
        .iter()
        .zip(&ax)
        .map(|(v, av)| (av - lambda * v).abs())
        .fold(0.0, f64::max);
    let max = x.iter().copied().fold(0.0, f64::max);
    let scaled = x.iter().map(|v| v / max).collect();
    Ok((
        EigenSolution {
            lambda,
            vector: x,
            iterations,
            residual,
        },
        scaled,
    ))
}

/// Connected components with at least one edge, each in ascending node order.
fn components(adj: &[Vec<(usize, u32)>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    let mut out = Vec::new();
    for root in 0..adj.len() {
        if seen[root] || adj[root].is_empty() {
            continue;
        }
        seen[root] = true;
        let mut nodes = vec![root];
        let mut k = 0;
        while k < nodes.len() {
            for &(j, _) in &adj[nodes[k]] {
                if !seen[j] {
                    seen[j] = true;
                    nodes.push(j);
                }
            }
            k += 1;
        }
        nodes.sort_unstable();
        out.push(nodes);
    }
    out
}

/// Unit Perron vector of one component, written into `x` at its nodes.
/// Returns the eigenvalue and the iteration count.
fn power_iteration(
    adj: &[Vec<(usize, u32)>],
    nodes: &[usize],
    x: &mut [f64],
    opts: EigenOptions,
) -> Result<(f64, usize)> {
    let start = 1.0 / (nodes.len() as f64).sqrt();
    for &i in nodes {
        x[i] = start;
    }
    let mut next = vec![0.0; nodes.len()];
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        // next = (A + I) x, so A x = next − x
        for (slot, &i) in next.iter_mut().zip(nodes) {
            *slot = x[i] + adj[i].iter().map(|&(j, _)| x[j]).sum::<f64>();
        }
        let lambda: f64 = nodes.iter().zip(&next).map(|(&i, y)| x[i] * (y - x[i])).sum();
        residual = nodes
            .iter()
            .zip(&next)
            .map(|(&i, y)| (y - x[i] - lambda * x[i]).abs())
            .fold(0.0, f64::max);
        if residual <= opts.tol {
            return Ok((lambda, iter));
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut diff = 0.0f64;
        for (y, &i) in next.iter().zip(nodes) {
            let v = y / norm;
            diff = diff.max((v - x[i]).abs());
            x[i] = v;
        }
        if diff <= opts.tol {
            return Ok((lambda, iter));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}
