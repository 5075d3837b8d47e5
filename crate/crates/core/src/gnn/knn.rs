use crate::error::{Error, Result};
use crate::geometry::Point;

/// `k` neighbour rows per point, the point itself first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    pub k: usize,
    /// Row-major `P×k`.
    pub indices: Vec<usize>,
}

impl NeighborGraph {
    pub fn n_points(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// Brute-force Euclidean k-nearest neighbours, self included.
///
/// Each row starts with the point itself; the remaining `k − 1` neighbours
/// are ordered by distance, ties going to the lower index.
pub fn knn(coords: &[Point], k: usize) -> Result<NeighborGraph> {
    let n = coords.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in coords.iter().enumerate() {
        cand.clear();
        cand.extend(coords.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| {
            let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
            (dx * dx + dy * dy, j)
        }));
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k - 1 < cand.len() && k > 1 {
            cand.select_nth_unstable_by(k - 2, by_dist);
        }
        let nearest = &mut cand[..k - 1];
        nearest.sort_by(by_dist);
        indices.push(i);
        indices.extend(nearest.iter().map(|&(_, j)| j));
    }
    Ok(NeighborGraph { k, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_k_is_permutation() {
        let pts: Vec<Point> = (0..6).map(|i| [(i * 7 % 5) as f64, i as f64 * 0.3]).collect();
        let g = knn(&pts, 6).unwrap();
        for i in 0..6 {
            let mut row = g.row(i).to_vec();
            assert_eq!(row[0], i);
            row.sort();
            assert_eq!(row, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn collinear_tie_goes_to_lower_index() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let g = knn(&pts, 2).unwrap();
        assert_eq!(g.row(1), &[1, 0]);
        assert!(knn(&pts, 4).is_err());
        assert!(knn(&pts, 0).is_err());
    }

    #[test]
    fn matches_full_sort() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Point> = (0..50).map(|_| [r.random_range(0.0..10.0), r.random_range(0.0..10.0)]).collect();
        let g = knn(&pts, 5).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(j, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.iter().take(5).map(|&(_, j)| j).collect();
            assert_eq!(g.row(i), want.as_slice());
        }
    }
}
