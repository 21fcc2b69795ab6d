//! Node-level network measures and their summaries.
//!
//! All per-node vectors are aligned with [`FacilityNetwork::nodes`].

mod eigen;
mod summary;

pub use eigen::{eigenvector_centrality, EigenOptions, EigenSolution};
pub use summary::{
    degree_distribution_by_case_status, describe, hub_table, network_summary, state_summaries, two_sample_t,
    write_degree_distribution, write_hubs, write_network_summary, write_state_summaries, write_t_test,
    DegreeDistribution, Describe, Histogram, HubRow, StateSummary, SummaryLine, WelchTest,
};

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::network::FacilityNetwork;
use crate::{Error, Result};

/// Number of neighbors, `k_i = Σ_j a_ij`.
pub fn degree(net: &FacilityNetwork) -> Vec<u32> {
    let mut k = vec![0u32; net.node_count()];
    for (i, j, _) in net.edges() {
        k[i] += 1;
        k[j] += 1;
    }
    k
}

/// Weighted sum of connections, `s_i = Σ_j w_ij a_ij`.
pub fn strength(net: &FacilityNetwork) -> Vec<u64> {
    let mut s = vec![0u64; net.node_count()];
    for (i, j, w) in net.edges() {
        s[i] += u64::from(w);
        s[j] += u64::from(w);
    }
    s
}

/// Neighbor degree weighted by shared devices,
/// `k̄ʷ_i = (1/s_i) Σ_j w_ij a_ij k_j`; 0 for isolated nodes.
pub fn weighted_avg_neighbor_degree(net: &FacilityNetwork) -> Vec<f64> {
    let k = degree(net);
    let s = strength(net);
    let mut acc = vec![0u64; net.node_count()];
    for (i, j, w) in net.edges() {
        acc[i] += u64::from(w) * u64::from(k[j]);
        acc[j] += u64::from(w) * u64::from(k[i]);
    }
    acc.iter()
        .zip(&s)
        .map(|(&num, &den)| if den == 0 { 0.0 } else { num as f64 / den as f64 })
        .collect()
}

/// One facility's row of network measures.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkMetrics {
    pub facility_id: String,
    /// Partition key (state code, or `ALL`).
    pub state: String,
    pub degree: u32,
    pub strength: u64,
    pub wand: f64,
    pub eigencentrality: f64,
}

/// Metrics for every node of every network, networks in the given order.
/// Partitions are processed in parallel; the output order is fixed.
pub fn metrics_table(nets: &[FacilityNetwork], opts: EigenOptions) -> Result<Vec<NetworkMetrics>> {
    let per_net: Vec<Result<Vec<NetworkMetrics>>> = nets
        .par_iter()
        .map(|net| {
            let k = degree(net);
            let s = strength(net);
            let wand = weighted_avg_neighbor_degree(net);
            let (solution, v) = eigenvector_centrality(net, opts)?;
            log::debug!(
                "{}: lambda {:.6} after {} iterations, residual {:e}",
                net.partition_key(),
                solution.lambda,
                solution.iterations,
                solution.residual
            );
            Ok(net
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, id)| NetworkMetrics {
                    facility_id: id.clone(),
                    state: net.partition_key().to_owned(),
                    degree: k[i],
                    strength: s[i],
                    wand: wand[i],
                    eigencentrality: v[i],
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for rows in per_net {
        out.extend(rows?);
    }
    Ok(out)
}

const METRIC_COLUMNS: [&str; 6] = ["facility_id", "state", "degree", "strength", "wand", "eigencentrality"];

pub fn write_metrics<W: Write>(sink: W, rows: &[NetworkMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(METRIC_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.facility_id.as_str(),
            &r.state,
            &r.degree.to_string(),
            &r.strength.to_string(),
            &r.wand.to_string(),
            &r.eigencentrality.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("metrics output", e))?;
    Ok(())
}

pub fn read_metrics<R: Read>(source: R) -> Result<Vec<NetworkMetrics>> {
    let mut reader = csv::Reader::from_reader(source);
    if reader.headers()?.iter().ne(METRIC_COLUMNS) {
        return Err(Error::Input(format!(
            "metrics header must be {}",
            METRIC_COLUMNS.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |c: usize| Error::Input(format!("metrics line {line}: bad {}", METRIC_COLUMNS[c]));
        out.push(NetworkMetrics {
            facility_id: row[0].to_owned(),
            state: row[1].to_owned(),
            degree: row[2].parse().map_err(|_| bad(2))?,
            strength: row[3].parse().map_err(|_| bad(3))?,
            wand: row[4].parse().map_err(|_| bad(4))?,
            eigencentrality: row[5].parse().map_err(|_| bad(5))?,
        });
    }
    Ok(out)
}
