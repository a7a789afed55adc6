//! Line-oriented text formats.
//!
//! Topology: `u v capacity delay_ms`. Demand: `i j rate`. Blank lines and
//! anything after `#` are ignored.

use super::{Channel, DemandMatrix, GraphError, NodeId, Topology};
use std::fmt::Write;

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(k, line)| {
        let body = line.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then(|| (k + 1, body.split_whitespace().collect()))
    })
}

fn field<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, GraphError> {
    tok.parse().map_err(|_| GraphError::Parse { line, msg: format!("bad {what} '{tok}'") })
}

impl Topology {
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut channels = Vec::new();
        for (line, toks) in data_lines(text) {
            if toks.len() != 4 {
                return Err(GraphError::Parse {
                    line,
                    msg: format!("expected 'u v capacity delay_ms', got {} fields", toks.len()),
                });
            }
            let u: NodeId = field(toks[0], line, "node id")?;
            let v: NodeId = field(toks[1], line, "node id")?;
            let cap: f64 = field(toks[2], line, "capacity")?;
            let delay_ms: f64 = field(toks[3], line, "delay")?;
            channels.push(Channel::new(u, v, cap, delay_ms / 1000.0));
        }
        Topology::from_channels(channels)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# u v capacity delay_ms\n");
        for c in self.channels() {
            let _ = writeln!(s, "{} {} {} {}", c.u, c.v, c.capacity, c.delay * 1000.0);
        }
        s
    }
}

impl DemandMatrix {
    /// `inf` is accepted as a rate and marks an uncapped pair.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut d = DemandMatrix::new();
        for (line, toks) in data_lines(text) {
            if toks.len() != 3 {
                return Err(GraphError::Parse {
                    line,
                    msg: format!("expected 'i j rate', got {} fields", toks.len()),
                });
            }
            let i: NodeId = field(toks[0], line, "node id")?;
            let j: NodeId = field(toks[1], line, "node id")?;
            let r: f64 = field(toks[2], line, "rate")?;
            d.add(i, j, r).map_err(|e| GraphError::Parse { line, msg: e.to_string() })?;
        }
        Ok(d)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# i j rate\n");
        for ((i, j), r) in self.iter() {
            let _ = writeln!(s, "{i} {j} {r}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_round_trip() {
        let text = "# five nodes\n1 2 100 30\n\n2 3 50 30 # comment\n";
        let t = Topology::parse(text).unwrap();
        assert_eq!(t.channels().len(), 2);
        assert!((t.channel(0).delay - 0.03).abs() < 1e-12);
        let again = Topology::parse(&t.to_text()).unwrap();
        assert_eq!(again.channels(), t.channels());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(Topology::parse("1 2 100\n"), Err(GraphError::Parse { line: 1, .. })));
        assert!(matches!(Topology::parse("\n1 x 1 1\n"), Err(GraphError::Parse { line: 2, .. })));
        assert!(matches!(DemandMatrix::parse("1 2 -3\n"), Err(GraphError::Parse { line: 1, .. })));
        assert!(matches!(Topology::parse("1 2 0 30\n"), Err(GraphError::NonPositive { .. })));
    }

    #[test]
    fn demand_round_trip_with_uncapped() {
        let d = DemandMatrix::parse("1 2 3.5\n2 1 inf\n1 2 0.5\n").unwrap();
        assert_eq!(d.get(1, 2), 4.0);
        assert!(d.get(2, 1).is_infinite());
        assert_eq!(DemandMatrix::parse(&d.to_text()).unwrap(), d);
    }
}
