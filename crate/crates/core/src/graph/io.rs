use std::io::{BufRead, Write};

use super::{Graph, GraphError};

/// Writes `# nodes=N` followed by one `i j` line per edge (`i < j`, sorted).
pub fn write_edge_list(g: &Graph, mut out: impl Write) -> Result<(), GraphError> {
    writeln!(out, "# nodes={}", g.n())?;
    for &(i, j) in g.edges() {
        writeln!(out, "{i} {j}")?;
    }
    Ok(())
}

pub fn read_edge_list(input: impl BufRead) -> Result<Graph, GraphError> {
    let mut n = None;
    let mut edges = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("nodes=") {
                n = Some(v.trim().parse::<usize>().map_err(|e| GraphError::Parse {
                    line: lineno,
                    msg: format!("bad node count: {e}"),
                })?);
            }
            continue;
        }
        let mut parts = t.split_whitespace();
        let mut next = || -> Result<usize, GraphError> {
            parts
                .next()
                .ok_or_else(|| GraphError::Parse {
                    line: lineno,
                    msg: "expected two node indices".into(),
                })?
                .parse()
                .map_err(|e| GraphError::Parse {
                    line: lineno,
                    msg: format!("bad node index: {e}"),
                })
        };
        let (i, j) = (next()?, next()?);
        edges.push((i, j));
    }
    let n = n.ok_or(GraphError::Parse {
        line: 1,
        msg: "missing '# nodes=N' header".into(),
    })?;
    Graph::from_edges(n, edges)
}
