//! Plain-text network specification files.
//!
//! Two document forms are accepted. The explicit form lists a characteristic
//! table and one line per link:
//!
//! ```text
//! network
//! nodes 4
//! grid 2 2
//! position 0 0 0
//! char 0 pwl V=0.5 eps=0.00001 r=800
//! link 0 1 1 0
//! link 1 ground 1 0
//! end
//! ```
//!
//! `link <tail> <head> <capacitance> <char-id>` takes node indices or the
//! word `ground`. The `grid` and `position` lines are optional layout
//! metadata. The shorthand form builds a default grid in one line:
//!
//! ```text
//! grid 3 3 source 0 1
//! ```
//!
//! Serialization always emits the explicit form; parse -> serialize -> parse
//! reproduces the identical graph.

use std::fmt::Write as _;

use thiserror::Error;

use crate::characteristic::{parse_characteristic, CharacteristicError, LinkCharacteristic};
use crate::network::{build_grid_with_source, LinkSpec, NetworkError, NetworkGraph, Terminal};

#[derive(Debug, Error)]
pub enum NetFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Characteristic {
        line: usize,
        source: CharacteristicError,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn syntax(line: usize, message: impl Into<String>) -> NetFileError {
    NetFileError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_terminal(token: &str, line: usize) -> Result<Terminal, NetFileError> {
    if token == "ground" {
        Ok(Terminal::Ground)
    } else {
        token
            .parse::<usize>()
            .map(Terminal::Node)
            .map_err(|_| syntax(line, format!("expected node index or `ground`, got `{token}`")))
    }
}

fn terminal_text(t: Terminal) -> String {
    match t {
        Terminal::Node(i) => i.to_string(),
        Terminal::Ground => "ground".to_string(),
    }
}

/// Parses either document form into a validated graph.
pub fn parse_network(text: &str) -> Result<NetworkGraph, NetFileError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| syntax(0, "empty network document"))?;
    let head: Vec<&str> = first.split_whitespace().collect();
    match head.as_slice() {
        ["network"] => {}
        ["grid", rows, cols, "source", sr, sc] => {
            let parse = |t: &str, what: &str| {
                t.parse::<usize>()
                    .map_err(|_| syntax(first_no, format!("bad {what} `{t}`")))
            };
            return Ok(build_grid_with_source(
                parse(rows, "row count")?,
                parse(cols, "column count")?,
                parse(sr, "source row")?,
                parse(sc, "source column")?,
            )?);
        }
        _ => {
            return Err(syntax(
                first_no,
                "document must start with `network` or `grid R C source SR SC`",
            ))
        }
    }

    let mut node_count: Option<usize> = None;
    let mut grid_dims: Option<(usize, usize)> = None;
    let mut chars: Vec<LinkCharacteristic> = Vec::new();
    let mut raw_links: Vec<(Terminal, Terminal, f64, usize)> = Vec::new();
    let mut positions: Vec<(usize, usize, usize)> = Vec::new();
    let mut ended = false;

    for (no, line) in lines {
        if ended {
            return Err(syntax(no, "content after `end`"));
        }
        let mut toks = line.split_whitespace();
        match toks.next().unwrap() {
            "nodes" => {
                let t = toks.next().ok_or_else(|| syntax(no, "nodes: missing count"))?;
                node_count = Some(
                    t.parse()
                        .map_err(|_| syntax(no, format!("bad node count `{t}`")))?,
                );
            }
            "grid" => {
                let mut dim = || -> Result<usize, NetFileError> {
                    let t = toks
                        .next()
                        .ok_or_else(|| syntax(no, "grid: expected `grid ROWS COLS`"))?;
                    t.parse()
                        .map_err(|_| syntax(no, format!("bad grid dimension `{t}`")))
                };
                grid_dims = Some((dim()?, dim()?));
            }
            "position" => {
                let mut field = || -> Result<usize, NetFileError> {
                    let t = toks
                        .next()
                        .ok_or_else(|| syntax(no, "position: expected `position NODE ROW COL`"))?;
                    t.parse()
                        .map_err(|_| syntax(no, format!("bad position field `{t}`")))
                };
                positions.push((field()?, field()?, field()?));
            }
            "char" => {
                let id: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| syntax(no, "char: expected `char ID SPEC...`"))?;
                if id != chars.len() {
                    return Err(syntax(no, format!("characteristic ids must be sequential, expected {}", chars.len())));
                }
                let spec: Vec<&str> = toks.collect();
                let c = parse_characteristic(&spec.join(" "))
                    .map_err(|source| NetFileError::Characteristic { line: no, source })?;
                chars.push(c);
            }
            "link" => {
                let tail = parse_terminal(
                    toks.next().ok_or_else(|| syntax(no, "link: missing tail"))?,
                    no,
                )?;
                let head = parse_terminal(
                    toks.next().ok_or_else(|| syntax(no, "link: missing head"))?,
                    no,
                )?;
                let cap_tok = toks
                    .next()
                    .ok_or_else(|| syntax(no, "link: missing capacitance"))?;
                let cap: f64 = cap_tok
                    .parse()
                    .map_err(|_| syntax(no, format!("bad capacitance `{cap_tok}`")))?;
                let id_tok = toks
                    .next()
                    .ok_or_else(|| syntax(no, "link: missing characteristic id"))?;
                let cid: usize = id_tok
                    .parse()
                    .map_err(|_| syntax(no, format!("bad characteristic id `{id_tok}`")))?;
                raw_links.push((tail, head, cap, cid));
            }
            "end" => ended = true,
            other => return Err(syntax(no, format!("unknown directive `{other}`"))),
        }
    }
    if !ended {
        return Err(syntax(0, "missing `end`"));
    }
    let node_count = node_count.ok_or_else(|| syntax(0, "missing `nodes` line"))?;

    let specs = raw_links
        .into_iter()
        .enumerate()
        .map(|(k, (tail, head, cap, cid))| {
            let characteristic = *chars
                .get(cid)
                .ok_or_else(|| syntax(0, format!("link {k} references unknown characteristic {cid}")))?;
            Ok(LinkSpec {
                tail,
                head,
                capacitance: cap,
                characteristic,
            })
        })
        .collect::<Result<Vec<_>, NetFileError>>()?;

    let positions = if positions.is_empty() {
        None
    } else {
        let mut table = vec![(0usize, 0usize); node_count];
        for (node, row, col) in positions {
            if node >= node_count {
                return Err(syntax(0, format!("position for unknown node {node}")));
            }
            table[node] = (row, col);
        }
        Some(table)
    };

    Ok(NetworkGraph::with_layout(
        node_count, specs, positions, grid_dims,
    )?)
}

/// Emits the explicit document form.
pub fn serialize_network(graph: &NetworkGraph) -> String {
    let mut out = String::new();
    out.push_str("network\n");
    let _ = writeln!(out, "nodes {}", graph.node_count());
    if let Some((rows, cols)) = graph.grid_dims() {
        let _ = writeln!(out, "grid {rows} {cols}");
    }
    if let Some(positions) = graph.positions() {
        for (node, (row, col)) in positions.iter().enumerate() {
            let _ = writeln!(out, "position {node} {row} {col}");
        }
    }
    // characteristic table in first-use order, deduplicated bitwise
    let mut table: Vec<LinkCharacteristic> = Vec::new();
    let mut char_id = Vec::with_capacity(graph.link_count());
    for c in graph.characteristics() {
        let id = table.iter().position(|t| t == c).unwrap_or_else(|| {
            table.push(*c);
            table.len() - 1
        });
        char_id.push(id);
    }
    for (id, c) in table.iter().enumerate() {
        let _ = writeln!(out, "char {id} {c}");
    }
    for link in graph.links() {
        let _ = writeln!(
            out,
            "link {} {} {} {}",
            terminal_text(link.tail),
            terminal_text(link.head),
            graph.capacitances()[link.id],
            char_id[link.id]
        );
    }
    out.push_str("end\n");
    out
}
