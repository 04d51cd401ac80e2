//! Line-oriented text format.
//!
//! ```text
//! navgraph v1 <node_count> <spacing_m>
//! N <id> <x> <y> <z> <floor> <building|->
//! E <from> <to> M <bearing_deg>
//! E <from> <to> L <dest_floor>
//! ```
//!
//! `#` starts a comment. Bearings are written with one decimal.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{Edge, EdgeKind, GraphError, NavGraph, Node, NodeId};

fn field<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, GraphError> {
    let tok = tok.ok_or_else(|| GraphError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| GraphError::Parse {
        line,
        msg: format!("invalid {what} '{tok}'"),
    })
}

pub fn parse_graph(text: &str) -> Result<NavGraph, GraphError> {
    let mut header: Option<(usize, f64)> = None;
    let mut nodes: Vec<Node> = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let tag = toks.next().unwrap_or_default();
        if header.is_none() {
            if tag != "navgraph" || toks.next() != Some("v1") {
                return Err(GraphError::Parse {
                    line,
                    msg: "expected header 'navgraph v1 <node_count> <spacing_m>'".into(),
                });
            }
            let count: usize = field(toks.next(), line, "node count")?;
            let spacing: f64 = field(toks.next(), line, "node spacing")?;
            header = Some((count, spacing));
            continue;
        }
        match tag {
            "N" => {
                let id: u32 = field(toks.next(), line, "node id")?;
                let x: f64 = field(toks.next(), line, "x")?;
                let y: f64 = field(toks.next(), line, "y")?;
                let z: f64 = field(toks.next(), line, "z")?;
                let floor: u32 = field(toks.next(), line, "floor")?;
                let building = match toks.next() {
                    Some("-") => None,
                    other => Some(field::<u8>(other, line, "building")?),
                };
                if id as usize != nodes.len() {
                    return Err(GraphError::Parse {
                        line,
                        msg: format!("node id {id} out of order, expected {}", nodes.len()),
                    });
                }
                nodes.push(Node {
                    id: NodeId(id),
                    position: [x, y, z],
                    floor,
                    building,
                    is_elevator_adjacent: false,
                });
            }
            "E" => {
                let from: u32 = field(toks.next(), line, "edge source")?;
                let to: u32 = field(toks.next(), line, "edge target")?;
                let kind = match toks.next() {
                    Some("M") => EdgeKind::Move {
                        bearing_deg: field(toks.next(), line, "bearing")?,
                    },
                    Some("L") => EdgeKind::Elevator {
                        destination_floor: field(toks.next(), line, "destination floor")?,
                    },
                    other => {
                        return Err(GraphError::Parse {
                            line,
                            msg: format!("unknown edge kind {:?}", other.unwrap_or("")),
                        })
                    }
                };
                edges.push(Edge {
                    from: NodeId(from),
                    to: NodeId(to),
                    kind,
                    length_m: 0.0,
                });
            }
            other => {
                return Err(GraphError::Parse {
                    line,
                    msg: format!("unknown record '{other}'"),
                })
            }
        }
        if toks.next().is_some() {
            return Err(GraphError::Parse {
                line,
                msg: "trailing fields".into(),
            });
        }
    }
    let (count, spacing) = header.ok_or(GraphError::Parse {
        line: 0,
        msg: "missing header".into(),
    })?;
    if count != nodes.len() {
        return Err(GraphError::Parse {
            line: text.lines().count(),
            msg: format!("header declares {count} nodes, found {}", nodes.len()),
        });
    }
    NavGraph::new(nodes, edges, spacing)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<NavGraph, GraphError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
    parse_graph(&text)
}

pub fn write_graph(graph: &NavGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "navgraph v1 {} {}", graph.node_count(), graph.node_spacing_m());
    for n in graph.nodes() {
        let b = n.building.map_or_else(|| "-".to_string(), |b| b.to_string());
        let [x, y, z] = n.position;
        let _ = writeln!(out, "N {} {x} {y} {z} {} {b}", n.id, n.floor);
    }
    for e in graph.all_edges() {
        match e.kind {
            EdgeKind::Move { bearing_deg } => {
                let _ = writeln!(out, "E {} {} M {:.1}", e.from, e.to, bearing_deg);
            }
            EdgeKind::Elevator { destination_floor } => {
                let _ = writeln!(out, "E {} {} L {}", e.from, e.to, destination_floor);
            }
        }
    }
    out
}

pub fn save_graph(graph: &NavGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    fs::write(path, write_graph(graph)).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH3: &str = "\
# three nodes in a row
navgraph v1 3 1
N 0 0 0 0 0 -
N 1 1 0 0 0 -
N 2 2 0 0 0 -
E 0 1 M 0.0
E 1 0 M 180.0
E 1 2 M 0.0   # trailing comment
E 2 1 M 180.0
";

    #[test]
    fn minimal_path_file() {
        let g = parse_graph(PATH3).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 4);
    }

    #[test]
    fn unknown_node_is_an_invariant_error() {
        let text = format!("{PATH3}E 2 999 M 0.0\n");
        let err = parse_graph(&text).unwrap_err();
        assert!(matches!(err, GraphError::Invariant { invariant: "edge endpoints exist", .. }), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let text = PATH3.replace("N 1 1 0 0 0 -", "N 1 one 0 0 0 -");
        match parse_graph(&text).unwrap_err() {
            GraphError::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bearing_quantised_on_save() {
        let g = parse_graph(&PATH3.replace("E 0 1 M 0.0", "E 0 1 M 0.04")).unwrap();
        assert!(write_graph(&g).contains("E 0 1 M 0.0\n"));
    }
}
