use serde::{Deserialize, Serialize};

/// A point on the compute/loss frontier and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub flops: f64,
    pub loss: f64,
    pub run_id: String,
    pub step: usize,
}

/// Indices of the non-dominated points, sorted by compute, with loss
/// strictly decreasing. A point is dominated when another has no more
/// compute and no more loss and is strictly better in one; exact
/// duplicates keep their first occurrence.
pub fn frontier_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.0.total_cmp(&pb.0)
            .then(pa.1.total_cmp(&pb.1))
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for i in order {
        if points[i].1 < best {
            best = points[i].1;
            out.push(i);
        }
    }
    out
}

/// The Pareto frontier of `(compute, loss)` pairs.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    frontier_indices(points)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// Frontier over tagged points.
pub fn pareto_points(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let raw: Vec<(f64, f64)> = points.iter().map(|p| (p.flops, p.loss)).collect();
    frontier_indices(&raw)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Quadratic dominance check, then de-duplication.
    fn brute(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut keep: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| {
                !points
                    .iter()
                    .any(|q| q.0 <= p.0 && q.1 <= p.1 && (q.0 < p.0 || q.1 < p.1))
            })
            .copied()
            .collect();
        keep.sort_by(|a, b| a.0.total_cmp(&b.0));
        keep.dedup();
        keep
    }

    #[test]
    fn small_examples() {
        assert_eq!(
            pareto_frontier(&[(1.0, 10.0), (2.0, 5.0), (3.0, 7.0)]),
            vec![(1.0, 10.0), (2.0, 5.0)]
        );
        assert_eq!(pareto_frontier(&[(4.0, 2.0)]), vec![(4.0, 2.0)]);
        assert_eq!(
            pareto_frontier(&[(1.0, 3.0), (2.0, 3.0), (1.0, 3.0)]),
            vec![(1.0, 3.0)]
        );
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.gen_range(1..200);
            // coarse grid so ties occur
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0..30) as f64, rng.gen_range(0..30) as f64))
                .collect();
            assert_eq!(pareto_frontier(&pts), brute(&pts));
        }
    }

    #[test]
    fn order_and_duplication_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(f64, f64)> = (0..60)
            .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        let base = pareto_frontier(&pts);
        let mut shuffled: Vec<_> = pts.iter().rev().copied().collect();
        shuffled.extend_from_slice(&pts[..20]);
        assert_eq!(pareto_frontier(&shuffled), base);
        for w in base.windows(2) {
            assert!(w[0].0 < w[1].0 && w[0].1 > w[1].1);
        }
    }
}
