//! Undirected weighted facility networks built from shared qualifying devices.

mod export;

pub use export::{
    networks_from_edge_list, read_cross_state, read_edge_list, write_cross_state, write_dot, write_edge_list,
    write_graphml, EdgeRow,
};

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::ingest::Facility;
use crate::spatial::VisitAssignment;
use crate::{Error, Result};

/// Partition key used for the single national network.
pub const NATIONAL_KEY: &str = "ALL";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Partition {
    /// One network per state; cross-state device pairs are reported apart.
    #[default]
    ByState,
    National,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "state" | "by_state" => Ok(Partition::ByState),
            "national" | "all" => Ok(Partition::National),
            other => Err(Error::Config(format!("unknown partition {other:?}"))),
        }
    }
}

/// Undirected graph over the facilities of one partition. Edges are keyed by
/// node index pairs `(i, j)` with `i < j`; weights are device counts.
#[derive(Clone, Debug, PartialEq)]
pub struct FacilityNetwork {
    partition_key: String,
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeMap<(usize, usize), u32>,
}

impl FacilityNetwork {
    pub fn new(partition_key: impl Into<String>, nodes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, id) in nodes.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateFacility(id.clone()));
            }
        }
        Ok(Self {
            partition_key: partition_key.into(),
            nodes,
            index,
            edges: BTreeMap::new(),
        })
    }

    /// Builds a network from index-based edges; repeated pairs accumulate.
    pub fn from_index_edges(
        partition_key: impl Into<String>,
        nodes: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize, u32)>,
    ) -> Result<Self> {
        let mut net = Self::new(partition_key, nodes)?;
        for (i, j, w) in edges {
            net.add_weight_at(i, j, w)?;
        }
        Ok(net)
    }

    pub fn partition_key(&self) -> &str {
        &self.partition_key
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_index(&self, facility_id: &str) -> Option<usize> {
        self.index.get(facility_id).copied()
    }

    /// Edges as `(i, j, w)` with `i < j`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn weight(&self, i: usize, j: usize) -> u32 {
        let key = (i.min(j), i.max(j));
        self.edges.get(&key).copied().unwrap_or(0)
    }

    pub fn add_weight(&mut self, a: &str, b: &str, w: u32) -> Result<()> {
        let i = self.node_index(a).ok_or_else(|| Error::UnknownFacility(a.to_owned()))?;
        let j = self.node_index(b).ok_or_else(|| Error::UnknownFacility(b.to_owned()))?;
        self.add_weight_at(i, j, w)
    }

    fn add_weight_at(&mut self, i: usize, j: usize, w: u32) -> Result<()> {
        let n = self.nodes.len();
        if i >= n || j >= n {
            return Err(Error::Model(format!("edge ({i}, {j}) outside {n} nodes")));
        }
        if i == j {
            return Err(Error::Model(format!("self-loop on {}", self.nodes[i])));
        }
        if w == 0 {
            return Ok(());
        }
        *self.edges.entry((i.min(j), i.max(j))).or_default() += w;
        Ok(())
    }

    /// Adjacency lists `(neighbor, weight)` in node order.
    pub fn neighbors(&self) -> Vec<Vec<(usize, u32)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (i, j, w) in self.edges() {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

/// A device pair observation that spans two states.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CrossStateLink {
    pub state_a: String,
    pub facility_a: String,
    pub state_b: String,
    pub facility_b: String,
    pub devices: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkSet {
    /// Sorted by partition key.
    pub networks: Vec<FacilityNetwork>,
    /// Facility pairs in different states sharing qualifying devices. Empty
    /// under [`Partition::National`].
    pub cross_state: Vec<CrossStateLink>,
}

/// Empty networks holding every facility, one per partition, nodes sorted by
/// facility id.
pub fn empty_networks(facilities: &[Facility], partition: Partition) -> Result<Vec<FacilityNetwork>> {
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for f in facilities {
        let key = match partition {
            Partition::ByState => f.state.as_str(),
            Partition::National => NATIONAL_KEY,
        };
        groups.entry(key).or_default().push(f.facility_id.clone());
    }
    groups
        .into_iter()
        .map(|(key, mut nodes)| {
            nodes.sort();
            FacilityNetwork::new(key, nodes)
        })
        .collect()
}

/// Builds the facility networks. The edge weight between two facilities is
/// the number of distinct devices that qualify at both.
pub fn build_networks(
    assignments: &[VisitAssignment],
    facilities: &[Facility],
    partition: Partition,
) -> Result<NetworkSet> {
    let state_of: HashMap<&str, &str> = facilities
        .iter()
        .map(|f| (f.facility_id.as_str(), f.state.as_str()))
        .collect();
    for a in assignments {
        if !state_of.contains_key(a.facility_id.as_str()) {
            return Err(Error::UnknownFacility(a.facility_id.clone()));
        }
    }

    let mut per_device: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for a in assignments.iter().filter(|a| a.qualifies) {
        per_device.entry(&a.device_id).or_default().push(&a.facility_id);
    }

    let mut networks = empty_networks(facilities, partition)?;
    let slot: HashMap<String, usize> = networks
        .iter()
        .enumerate()
        .map(|(k, n)| (n.partition_key().to_owned(), k))
        .collect();
    let mut cross: BTreeMap<(&str, &str), u32> = BTreeMap::new();

    for mut sites in per_device.into_values() {
        sites.sort_unstable();
        sites.dedup();
        for (x, a) in sites.iter().enumerate() {
            for b in &sites[x + 1..] {
                let (sa, sb) = (state_of[a], state_of[b]);
                let key = match partition {
                    Partition::National => NATIONAL_KEY,
                    Partition::ByState if sa == sb => sa,
                    Partition::ByState => {
                        *cross.entry((a, b)).or_default() += 1;
                        continue;
                    }
                };
                networks[slot[key]].add_weight(a, b, 1)?;
            }
        }
    }

    let mut cross_state: Vec<CrossStateLink> = cross
        .into_iter()
        .map(|((a, b), devices)| CrossStateLink {
            state_a: state_of[a].to_owned(),
            facility_a: a.to_owned(),
            state_b: state_of[b].to_owned(),
            facility_b: b.to_owned(),
            devices,
        })
        .collect();
    cross_state.sort();
    Ok(NetworkSet { networks, cross_state })
}

/// Dense binary adjacency `A` and weight matrix `W`.
pub fn adjacency_view(net: &FacilityNetwork) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = net.node_count();
    let mut a = DMatrix::zeros(n, n);
    let mut w = DMatrix::zeros(n, n);
    for (i, j, weight) in net.edges() {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
        w[(i, j)] = f64::from(weight);
        w[(j, i)] = f64::from(weight);
    }
    (a, w)
}
