use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Direction of travel along the corridor. Nodes are listed west to east,
/// so an edge from a lower to a higher node index is eastbound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    Eastbound,
    Westbound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub length_miles: f64,
    pub heading: Heading,
}

/// Static node and edge structure of a signalized corridor.
///
/// Every physical link is stored as two directed edges with the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorTopology {
    node_ids: Vec<String>,
    edges: Vec<Edge>,
    index: HashMap<(usize, usize), usize>,
}

impl CorridorTopology {
    /// Builds a topology from directed `(from, to, miles)` triples and checks
    /// every invariant: valid endpoints, no self-loops, no duplicates, a
    /// reverse edge of equal positive length for every edge.
    pub fn new(node_ids: Vec<String>, directed: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(Error::Topology("corridor has no nodes".into()));
        }
        let mut seen = HashMap::new();
        for (k, id) in node_ids.iter().enumerate() {
            if seen.insert(id.as_str(), k).is_some() {
                return Err(Error::Topology(format!("duplicate node id {id:?}")));
            }
        }

        let mut edges = Vec::with_capacity(directed.len());
        let mut index = HashMap::with_capacity(directed.len());
        for (from, to, length_miles) in directed {
            if from >= n || to >= n {
                return Err(Error::Topology(format!(
                    "edge ({from}, {to}) references a node outside 0..{n}"
                )));
            }
            if from == to {
                return Err(Error::Topology(format!(
                    "self-loop at node {}",
                    node_ids[from]
                )));
            }
            if !(length_miles.is_finite() && length_miles > 0.0) {
                return Err(Error::Topology(format!(
                    "edge {} -> {} has non-positive length {length_miles}",
                    node_ids[from], node_ids[to]
                )));
            }
            if index.insert((from, to), edges.len()).is_some() {
                return Err(Error::Topology(format!(
                    "duplicate edge {} -> {}",
                    node_ids[from], node_ids[to]
                )));
            }
            let heading = if from < to {
                Heading::Eastbound
            } else {
                Heading::Westbound
            };
            edges.push(Edge {
                from,
                to,
                length_miles,
                heading,
            });
        }

        for e in &edges {
            match index.get(&(e.to, e.from)) {
                None => {
                    return Err(Error::Topology(format!(
                        "missing reverse edge for {} -> {}",
                        node_ids[e.from], node_ids[e.to]
                    )))
                }
                Some(&r) if edges[r].length_miles != e.length_miles => {
                    return Err(Error::Topology(format!(
                        "link {} <-> {} has unequal lengths {} and {}",
                        node_ids[e.from], node_ids[e.to], e.length_miles, edges[r].length_miles
                    )))
                }
                Some(_) => {}
            }
        }

        Ok(Self {
            node_ids,
            edges,
            index,
        })
    }

    /// A west-to-east chain with one link per consecutive pair.
    pub fn chain(node_ids: Vec<String>, link_miles: &[f64]) -> Result<Self> {
        if link_miles.len() + 1 != node_ids.len() {
            return Err(Error::Topology(format!(
                "chain of {} nodes needs {} link lengths, got {}",
                node_ids.len(),
                node_ids.len().saturating_sub(1),
                link_miles.len()
            )));
        }
        let mut directed = Vec::with_capacity(2 * link_miles.len());
        for (i, &len) in link_miles.iter().enumerate() {
            directed.push((i, i + 1, len));
            directed.push((i + 1, i, len));
        }
        Self::new(node_ids, directed)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        self.index.get(&(from, to)).copied()
    }

    pub fn link_length(&self, from: usize, to: usize) -> Option<f64> {
        self.edge_index(from, to).map(|k| self.edges[k].length_miles)
    }

    /// Serializes to the line-oriented topology format read by
    /// [`load_topology`]. Each physical link is written once.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "nodes: {}", self.node_ids.join(" "));
        for e in &self.edges {
            if e.from < e.to {
                let _ = writeln!(
                    out,
                    "link {} {} {}",
                    self.node_ids[e.from], self.node_ids[e.to], e.length_miles
                );
            }
        }
        out
    }
}

/// Reads a topology file.
///
/// Format: a `nodes: <id> <id> ...` header (ids listed west to east,
/// whitespace or comma separated), then `link <a> <b> <miles>` lines for
/// bidirectional links. `arc <a> <b> <miles>` adds a single direction and
/// must be paired with its reverse. `#` starts a comment.
pub fn load_topology(path: impl AsRef<Path>) -> Result<CorridorTopology> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_topology(&text, path)
}

pub fn parse_topology(text: &str, path: &Path) -> Result<CorridorTopology> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };

    let mut node_ids: Option<Vec<String>> = None;
    let mut directed = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("nodes:") {
            if node_ids.is_some() {
                return Err(parse_err(lineno, "duplicate nodes header".into()));
            }
            let ids: Vec<String> = rest
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect();
            node_ids = Some(ids);
            continue;
        }

        let fields: Vec<&str> = line.split_whitespace().collect();
        let (kind, both) = match fields[0] {
            "link" => ("link", true),
            "arc" => ("arc", false),
            other => return Err(parse_err(lineno, format!("unknown directive {other:?}"))),
        };
        let ids = node_ids
            .as_ref()
            .ok_or_else(|| parse_err(lineno, format!("{kind} before nodes header")))?;
        if fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected `{kind} <id_i> <id_j> <miles>`"),
            ));
        }
        let lookup = |id: &str| {
            ids.iter()
                .position(|n| n == id)
                .ok_or_else(|| parse_err(lineno, format!("unknown node {id:?}")))
        };
        let a = lookup(fields[1])?;
        let b = lookup(fields[2])?;
        let miles: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad length {:?}", fields[3])))?;
        directed.push((a, b, miles));
        if both {
            directed.push((b, a, miles));
        }
    }

    let node_ids = node_ids.ok_or_else(|| parse_err(0, "missing `nodes:` header".into()))?;
    if node_ids.len() < 2 {
        return Err(Error::Topology(format!(
            "a corridor needs at least 2 intersections, got {}",
            node_ids.len()
        )));
    }
    CorridorTopology::new(node_ids, directed)
}
