//! Text formats: edge lists, observations, centroids, trace CSV and plot data.
//!
//! Lines starting with `#` are comments everywhere; writers use them to embed
//! the configuration that produced the file.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use qkmeans_core::exactmath::{Fraction, FractionVector};
use qkmeans_core::graph::{Digraph, GraphError};
use qkmeans_core::kmeans::CentroidSet;
use qkmeans_core::sim::{ConsensusTrace, KMeansTrace};
use qkmeans_core::BigInt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Content(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn line_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Line { line, message: message.into() }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// `# config: {json}` header line.
pub fn config_comment(config_json: &str) -> String {
    format!("# config: {config_json}\n")
}

/// Reads the JSON embedded by [`config_comment`], if present.
pub fn embedded_config(text: &str) -> Option<&str> {
    text.lines().find_map(|l| l.strip_prefix("# config: "))
}

/// Parses `n m` followed by `m` lines `j i`, meaning an edge from sender `i`
/// to receiver `j`.
pub fn parse_edge_list(text: &str) -> Result<Digraph, FormatError> {
    let mut lines = content_lines(text);
    let (header_line, header) = lines.next().ok_or_else(|| FormatError::Content("empty edge list".into()))?;
    let (n, m) = parse_pair(header_line, header, "header `n m`")?;
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(m);
    for (line, text) in lines {
        let (receiver, sender) = parse_pair(line, text, "edge `j i`")?;
        if receiver >= n || sender >= n {
            return Err(line_err(line, format!("node out of range for n = {n}")));
        }
        if receiver == sender {
            return Err(line_err(line, format!("self-loop at node {receiver}")));
        }
        if !seen.insert((receiver, sender)) {
            return Err(line_err(line, format!("duplicate edge {receiver} {sender}")));
        }
        edges.push((receiver, sender));
    }
    if edges.len() != m {
        return Err(FormatError::Content(format!("header declares {m} edges, found {}", edges.len())));
    }
    Ok(Digraph::from_edges(n, edges)?)
}

fn parse_pair(line: usize, text: &str, what: &str) -> Result<(usize, usize), FormatError> {
    let mut it = text.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(line_err(line, format!("expected {what} as non-negative integers"))),
        },
        _ => Err(line_err(line, format!("expected {what}"))),
    }
}

pub fn write_edge_list(g: &Digraph, config_json: &str) -> String {
    let mut out = config_comment(config_json);
    let _ = writeln!(out, "{} {}", g.node_count(), g.edge_count());
    for (receiver, sender) in g.edges() {
        let _ = writeln!(out, "{receiver} {sender}");
    }
    out
}

/// Parses a decimal token exactly and rounds `value * scale` to the nearest
/// integer, halves away from zero.
pub fn quantize(token: &str, scale: u64) -> Option<BigInt> {
    let (negative, body) = match token.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, token.strip_prefix('+').unwrap_or(token)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numerator: BigInt = if digits.is_empty() { BigInt::from(0) } else { digits.parse().ok()? };
    let denominator = BigInt::from(10).pow(frac_part.len() as u32);
    let scaled = numerator * BigInt::from(scale);
    let rounded = (scaled * 2u8 + &denominator) / (denominator * 2u8);
    Some(if negative { -rounded } else { rounded })
}

/// One line per node, `d` numbers each, quantized at `scale`.
pub fn parse_observations(text: &str, scale: u64) -> Result<Vec<Vec<BigInt>>, FormatError> {
    let mut rows = Vec::new();
    for (line, text) in content_lines(text) {
        let row = text
            .split_whitespace()
            .map(|t| quantize(t, scale).ok_or_else(|| line_err(line, format!("not a number: {t:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(line_err(line, format!("expected {first} values, found {}", row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FormatError::Content("no observations".into()));
    }
    Ok(rows)
}

pub fn write_observations(rows: &[Vec<BigInt>], config_json: &str) -> String {
    let mut out = config_comment(config_json);
    for row in rows {
        let cells: Vec<String> = row.iter().map(BigInt::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

/// `k` lines of `d` tokens, each `num/den` or an integer, multiplied by
/// `scale`.
pub fn parse_centroids(text: &str, scale: u64) -> Result<CentroidSet, FormatError> {
    let factor = Fraction::from_integer(scale);
    let mut centroids: Vec<FractionVector> = Vec::new();
    for (line, text) in content_lines(text) {
        let comps = text
            .split_whitespace()
            .map(|t| {
                let f: Fraction = t.parse().map_err(|_| line_err(line, format!("not a fraction: {t:?}")))?;
                Ok(Fraction::new(f.numer() * factor.numer(), f.denom().clone()).expect("positive denominator"))
            })
            .collect::<Result<Vec<_>, FormatError>>()?;
        if let Some(first) = centroids.first().map(FractionVector::dim) {
            if comps.len() != first {
                return Err(line_err(line, format!("expected {first} values, found {}", comps.len())));
            }
        }
        if comps.is_empty() {
            return Err(line_err(line, "empty centroid"));
        }
        centroids.push(FractionVector::from_components(&comps).reduced());
    }
    if centroids.is_empty() {
        return Err(FormatError::Content("no centroids".into()));
    }
    Ok(CentroidSet::initial(centroids))
}

fn fraction_tokens(v: &FractionVector) -> String {
    v.components().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_centroids(set: &CentroidSet, config_json: &str) -> String {
    let mut out = config_comment(config_json);
    for c in &set.centroids {
        let _ = writeln!(out, "{}", fraction_tokens(c));
    }
    out
}

/// `(a/b;c/d)` for a centroid inside a CSV cell.
pub fn tuple(v: &FractionVector) -> String {
    format!("({v})")
}

/// Per-round trace: `T,steps,messages,F_num,F_den,c_1..c_k`. Row `T = 0`
/// holds the initial centroids.
pub fn trace_csv(trace: &KMeansTrace, config_json: &str) -> String {
    let mut out = config_comment(config_json);
    let labels: Vec<String> = (1..=trace.k).map(|c| format!("c_{c}")).collect();
    let _ = writeln!(out, "T,steps,messages,F_num,F_den,{}", labels.join(","));
    for (t, (centroids, f)) in trace.centroid_sequence.iter().zip(&trace.objective).enumerate() {
        let (steps, messages) = match t {
            0 => (0, 0),
            _ => {
                let r = &trace.rounds[t - 1];
                (r.steps, r.consensus_messages + r.extrema_messages)
            }
        };
        let f = f.reduced();
        let cells: Vec<String> = centroids.centroids.iter().map(tuple).collect();
        let _ = writeln!(out, "{t},{steps},{messages},{},{},{}", f.numer(), f.denom(), cells.join(","));
    }
    out
}

/// Objective curve for plotting; `F_approx` is a float projection.
pub fn objective_csv(trace: &KMeansTrace, config_json: &str) -> String {
    let mut out = config_comment(config_json);
    out.push_str("T,F_num,F_den,F_approx\n");
    for (t, f) in trace.objective.iter().enumerate() {
        let f = f.reduced();
        let _ = writeln!(out, "{t},{},{},{}", f.numer(), f.denom(), f.to_f64());
    }
    out
}

/// Centroid trajectory polylines: one row per cluster per round, exact value
/// plus float coordinates `x_1..x_d`.
pub fn trajectories_csv(trace: &KMeansTrace, config_json: &str) -> String {
    let mut out = config_comment(config_json);
    let coords: Vec<String> = (1..=trace.dim).map(|i| format!("x_{i}_approx")).collect();
    let _ = writeln!(out, "cluster,T,centroid,{}", coords.join(","));
    for cluster in 0..trace.k {
        for (t, set) in trace.centroid_sequence.iter().enumerate() {
            let c = &set.centroids[cluster];
            let xs: Vec<String> = c.to_f64().iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{},{t},{},{}", cluster + 1, tuple(c), xs.join(","));
        }
    }
    out
}

/// Final assignment of every node.
pub fn assignments_csv(trace: &KMeansTrace, observations: &[Vec<BigInt>], config_json: &str) -> String {
    let mut out = config_comment(config_json);
    let coords: Vec<String> = (1..=trace.dim).map(|i| format!("x_{i}")).collect();
    let _ = writeln!(out, "node,{},cluster", coords.join(","));
    for (node, (x, c)) in observations.iter().zip(&trace.final_assignments).enumerate() {
        let xs: Vec<String> = x.iter().map(BigInt::to_string).collect();
        let _ = writeln!(out, "{node},{},{}", xs.join(","), c + 1);
    }
    out
}

/// Message log of a consensus run.
pub fn consensus_messages_csv(trace: &ConsensusTrace, config_json: &str) -> String {
    let mut out = config_comment(config_json);
    out.push_str("step,sender,receiver,z,y\n");
    for m in &trace.messages {
        let ys: Vec<String> = m.y.iter().map(BigInt::to_string).collect();
        let _ = writeln!(out, "{},{},{},{},({})", m.step, m.sender, m.receiver, m.z, ys.join(";"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_round_trip() {
        let g = Digraph::from_edges(3, [(1, 0), (2, 1), (0, 2), (0, 1)]).unwrap();
        let text = write_edge_list(&g, "{}");
        assert_eq!(embedded_config(&text), Some("{}"));
        assert_eq!(parse_edge_list(&text).unwrap(), g);
        assert!(text.contains("\n3 4\n"));
    }

    #[test]
    fn edge_list_errors_carry_line_numbers() {
        assert_eq!(
            parse_edge_list("2 1\n0 0\n").unwrap_err(),
            FormatError::Line { line: 2, message: "self-loop at node 0".into() }
        );
        assert!(matches!(parse_edge_list("3 1\n0 5\n"), Err(FormatError::Line { line: 2, .. })));
        assert!(matches!(parse_edge_list("3 2\n0 1\n0 1\n"), Err(FormatError::Line { line: 3, .. })));
        assert!(matches!(parse_edge_list("3 2\n0 1\n"), Err(FormatError::Content(_))));
        assert!(matches!(parse_edge_list("# only\n"), Err(FormatError::Content(_))));
        assert!(matches!(parse_edge_list("3\n"), Err(FormatError::Line { line: 1, .. })));
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize("7", 1), Some(BigInt::from(7)));
        assert_eq!(quantize("-7", 3), Some(BigInt::from(-21)));
        assert_eq!(quantize("2.25", 10), Some(BigInt::from(23)));
        assert_eq!(quantize("-2.25", 10), Some(BigInt::from(-23)));
        assert_eq!(quantize("0.4", 1), Some(BigInt::from(0)));
        assert_eq!(quantize(".5", 1), Some(BigInt::from(1)));
        assert_eq!(quantize("1e3", 1), None);
        assert_eq!(quantize("-", 1), None);
    }

    #[test]
    fn observations_and_centroids() {
        let rows = parse_observations("# x\n1 2\n3 4\n", 1).unwrap();
        assert_eq!(rows, vec![vec![BigInt::from(1), BigInt::from(2)], vec![BigInt::from(3), BigInt::from(4)]]);
        assert!(matches!(parse_observations("1 2\n3\n", 1), Err(FormatError::Line { line: 2, .. })));
        assert_eq!(parse_observations(&write_observations(&rows, "{}"), 1).unwrap(), rows);

        let set = parse_centroids("1/2 3\n-4 5/3\n", 2).unwrap();
        assert_eq!(set.centroids[0].to_string(), "1/1;6/1");
        assert_eq!(set.centroids[1].to_string(), "-8/1;10/3");
        assert_eq!(parse_centroids(&write_centroids(&set, "{}"), 1).unwrap(), set);
        assert!(parse_centroids("1/0\n", 1).is_err());
    }
}
