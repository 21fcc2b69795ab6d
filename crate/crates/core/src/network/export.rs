use std::collections::HashMap;
use std::io::{Read, Write};

use super::{empty_networks, CrossStateLink, FacilityNetwork, NetworkSet, Partition};
use crate::ingest::Facility;
use crate::{Error, Result};

const EDGE_COLUMNS: [&str; 4] = ["state", "facility_i", "facility_j", "weight"];
const CROSS_COLUMNS: [&str; 5] = ["state_a", "facility_a", "state_b", "facility_b", "devices"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeRow {
    pub partition: String,
    pub facility_i: String,
    pub facility_j: String,
    pub weight: u32,
}

/// Delimited edge list: `state,facility_i,facility_j,weight`, one row per
/// edge, networks in order.
pub fn write_edge_list<W: Write>(sink: W, networks: &[FacilityNetwork]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(EDGE_COLUMNS)?;
    for net in networks {
        let nodes = net.nodes();
        for (i, j, weight) in net.edges() {
            w.write_record([net.partition_key(), &nodes[i], &nodes[j], &weight.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("edge list output", e))?;
    Ok(())
}

pub fn read_edge_list<R: Read>(source: R) -> Result<Vec<EdgeRow>> {
    let mut reader = csv::Reader::from_reader(source);
    if reader.headers()?.iter().ne(EDGE_COLUMNS) {
        return Err(Error::Input(format!(
            "edge list header must be {}",
            EDGE_COLUMNS.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let weight = row[3]
            .parse::<u32>()
            .ok()
            .filter(|&w| w >= 1)
            .ok_or_else(|| Error::Input(format!("edge list line {line}: bad weight {:?}", &row[3])))?;
        out.push(EdgeRow {
            partition: row[0].to_owned(),
            facility_i: row[1].to_owned(),
            facility_j: row[2].to_owned(),
            weight,
        });
    }
    Ok(out)
}

/// Rebuilds networks over the registry from an edge list.
pub fn networks_from_edge_list(
    edges: &[EdgeRow],
    facilities: &[Facility],
    partition: Partition,
) -> Result<Vec<FacilityNetwork>> {
    let mut networks = empty_networks(facilities, partition)?;
    let slot: HashMap<String, usize> = networks
        .iter()
        .enumerate()
        .map(|(k, n)| (n.partition_key().to_owned(), k))
        .collect();
    for e in edges {
        let k = *slot
            .get(&e.partition)
            .ok_or_else(|| Error::Input(format!("edge list partition {:?} has no facilities", e.partition)))?;
        networks[k].add_weight(&e.facility_i, &e.facility_j, e.weight)?;
    }
    Ok(networks)
}

pub fn write_cross_state<W: Write>(sink: W, links: &[CrossStateLink]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CROSS_COLUMNS)?;
    for l in links {
        w.write_record([
            l.state_a.as_str(),
            &l.facility_a,
            &l.state_b,
            &l.facility_b,
            &l.devices.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("cross-state output", e))?;
    Ok(())
}

pub fn read_cross_state<R: Read>(source: R) -> Result<Vec<CrossStateLink>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        out.push(CrossStateLink {
            state_a: row[0].to_owned(),
            facility_a: row[1].to_owned(),
            state_b: row[2].to_owned(),
            facility_b: row[3].to_owned(),
            devices: row[4]
                .parse()
                .map_err(|_| Error::Input(format!("bad device count {:?}", &row[4])))?,
        });
    }
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// GraphML document for one network, with `weight` as an edge attribute and
/// the partition key as a node attribute.
pub fn write_graphml<W: Write>(mut sink: W, net: &FacilityNetwork) -> Result<()> {
    let io = |e| Error::io("graphml output", e);
    let mut doc = String::new();
    doc.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    doc.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    doc.push_str("  <key id=\"state\" for=\"node\" attr.name=\"state\" attr.type=\"string\"/>\n");
    doc.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"int\"/>\n");
    doc.push_str(&format!(
        "  <graph id=\"{}\" edgedefault=\"undirected\">\n",
        xml_escape(net.partition_key())
    ));
    let state = xml_escape(net.partition_key());
    for id in net.nodes() {
        doc.push_str(&format!(
            "    <node id=\"{}\"><data key=\"state\">{state}</data></node>\n",
            xml_escape(id)
        ));
    }
    let nodes = net.nodes();
    for (k, (i, j, w)) in net.edges().enumerate() {
        doc.push_str(&format!(
            "    <edge id=\"e{k}\" source=\"{}\" target=\"{}\"><data key=\"weight\">{w}</data></edge>\n",
            xml_escape(&nodes[i]),
            xml_escape(&nodes[j])
        ));
    }
    doc.push_str("  </graph>\n</graphml>\n");
    sink.write_all(doc.as_bytes()).map_err(io)
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz description of one network, for external layout tools.
pub fn write_dot<W: Write>(mut sink: W, net: &FacilityNetwork) -> Result<()> {
    let mut doc = format!("graph {} {{\n", dot_quote(net.partition_key()));
    for id in net.nodes() {
        doc.push_str(&format!("  {};\n", dot_quote(id)));
    }
    let nodes = net.nodes();
    for (i, j, w) in net.edges() {
        doc.push_str(&format!(
            "  {} -- {} [weight={w}, penwidth={w}];\n",
            dot_quote(&nodes[i]),
            dot_quote(&nodes[j])
        ));
    }
    doc.push_str("}\n");
    sink.write_all(doc.as_bytes()).map_err(|e| Error::io("dot output", e))
}

impl NetworkSet {
    pub fn edge_rows(&self) -> Vec<EdgeRow> {
        self.networks
            .iter()
            .flat_map(|net| {
                net.edges().map(move |(i, j, weight)| EdgeRow {
                    partition: net.partition_key().to_owned(),
                    facility_i: net.nodes()[i].clone(),
                    facility_j: net.nodes()[j].clone(),
                    weight,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FacilityNetwork {
        FacilityNetwork::from_index_edges(
            "CT",
            vec!["A".into(), "B&C".into(), "D\"".into()],
            [(0, 1, 2), (1, 2, 1)],
        )
        .unwrap()
    }

    #[test]
    fn edge_list_round_trip() {
        let net = sample();
        let mut buf = Vec::new();
        write_edge_list(&mut buf, std::slice::from_ref(&net)).unwrap();
        let rows = read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 2);
        let facilities: Vec<_> = net.nodes().iter().map(|id| Facility::new(id, "CT", "09001")).collect();
        let rebuilt = networks_from_edge_list(&rows, &facilities, Partition::ByState).unwrap();
        assert_eq!(rebuilt, vec![net]);
    }

    #[test]
    fn graphml_escapes_and_carries_weight() {
        let mut buf = Vec::new();
        write_graphml(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("<node id=\"B&amp;C\">"));
        assert!(text.contains("target=\"D&quot;\""));
        assert!(text.contains("<data key=\"weight\">2</data>"));
        assert_eq!(text.matches("<edge ").count(), 2);
    }

    #[test]
    fn dot_output() {
        let mut buf = Vec::new();
        write_dot(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("graph \"CT\" {"));
        assert!(text.contains("\"A\" -- \"B&C\" [weight=2, penwidth=2];"));
        assert!(text.contains("\"D\\\"\""));
    }

    #[test]
    fn edge_list_rejects_zero_weight() {
        let text = "state,facility_i,facility_j,weight\nCT,A,B,0\n";
        assert!(read_edge_list(text.as_bytes()).is_err());
    }
}
