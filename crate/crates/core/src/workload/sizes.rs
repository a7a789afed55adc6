use super::WorkloadError;
use rand::Rng;
use std::path::Path;

const SYNTHETIC: &str = include_str!("../../../../data/tx_sizes_synthetic.csv");

/// Empirical size distribution: increasing amounts with their cumulative
/// probabilities, the last equal to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDistribution {
    points: Vec<(f64, f64)>,
}

impl SizeDistribution {
    /// Builds from (amount, weight) pairs; equal amounts merge.
    pub fn from_weights(pairs: &[(f64, f64)]) -> Result<Self, WorkloadError> {
        if pairs.is_empty() {
            return Err(WorkloadError::EmptyFile);
        }
        let mut sorted: Vec<(f64, f64)> = pairs.to_vec();
        if sorted.iter().any(|&(a, w)| !(a > 0.0 && a.is_finite() && w >= 0.0 && w.is_finite())) {
            return Err(WorkloadError::Malformed { line: 0, msg: "amounts must be positive, weights nonnegative".into() });
        }
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = sorted.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(WorkloadError::Malformed { line: 0, msg: "weights sum to zero".into() });
        }
        let mut points: Vec<(f64, f64)> = Vec::new();
        let mut acc = 0.0;
        for (a, w) in sorted {
            acc += w / total;
            match points.last_mut() {
                Some(last) if last.0 == a => last.1 = acc,
                _ => points.push((a, acc)),
            }
        }
        points.last_mut().unwrap().1 = 1.0;
        Ok(SizeDistribution { points })
    }

    pub fn constant(amount: f64) -> Self {
        SizeDistribution { points: vec![(amount, 1.0)] }
    }

    /// Parses one amount per line, or `amount,probability` per line. `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| WorkloadError::Malformed { line: i + 1, msg: format!("`{s}`: {e}") })
            };
            let pair = match fields.as_slice() {
                [a] => (num(a)?, 1.0),
                [a, p] => (num(a)?, num(p)?),
                _ => return Err(WorkloadError::Malformed { line: i + 1, msg: "expected 1 or 2 fields".into() }),
            };
            if !(pair.0 > 0.0) || pair.1 < 0.0 {
                return Err(WorkloadError::Malformed { line: i + 1, msg: "amount must be positive".into() });
            }
            pairs.push(pair);
        }
        Self::from_weights(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkloadError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The bundled synthetic heavy-tailed distribution.
    pub fn synthetic_default() -> Self {
        Self::parse(SYNTHETIC).expect("bundled size file parses")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Inverse-CDF sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let i = self.points.partition_point(|&(_, c)| c < u);
        self.points[i.min(self.points.len() - 1)].0
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        self.points
            .iter()
            .map(|&(a, c)| {
                let m = a * (c - prev);
                prev = c;
                m
            })
            .sum()
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let i = self.points.partition_point(|&(_, c)| c < q);
        self.points[i.min(self.points.len() - 1)].0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_amount() {
        let d = SizeDistribution::parse("25\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| d.sample(&mut rng) == 25.0));
    }

    #[test]
    fn two_amounts_monte_carlo_mean() {
        let d = SizeDistribution::parse("10\n30\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 20.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn bundled_is_heavy_tailed() {
        let d = SizeDistribution::synthetic_default();
        assert!(d.quantile(0.5) < d.mean());
        assert!(d.mean() > 60.0 && d.mean() < 100.0);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(SizeDistribution::parse("# nothing\n"), Err(WorkloadError::EmptyFile)));
        assert!(matches!(SizeDistribution::parse("1\nabc\n"), Err(WorkloadError::Malformed { line: 2, .. })));
        assert!(matches!(SizeDistribution::parse("1,2,3\n"), Err(WorkloadError::Malformed { line: 1, .. })));
        assert!(matches!(SizeDistribution::parse("-4\n"), Err(WorkloadError::Malformed { line: 1, .. })));
    }
}
