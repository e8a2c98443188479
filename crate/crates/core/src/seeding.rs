//! Seed selection by farthest-point sampling in three regimes: random
//! Euclidean (variance probe), deterministic Euclidean, and deterministic
//! graph-geodesic with a double-sweep start.
//!
//! Deterministic modes break ties on position (lexicographic `x, y, z`) and
//! then on vertex index, so the chosen seeds follow the geometry rather than
//! the vertex numbering. Distances within a relative `1e-12` of the maximum
//! count as tied, which absorbs summation-order rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::pool;
use crate::descriptors::DescriptorMatrix;
use crate::error::{Error, Result};
use crate::mesh::{dist, lex_cmp, EdgeGraph, Mesh, Point};

const TIE_REL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    EuclideanRandom,
    EuclideanDeterministic,
    GeodesicDeterministic,
}

impl SeedMode {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, SeedMode::EuclideanRandom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub indices: Vec<usize>,
    pub mode: SeedMode,
    pub rng_seed: Option<u64>,
}

impl SeedSet {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.indices.len() * 8);
        for &i in &self.indices {
            bytes.extend_from_slice(&(i as u64).to_le_bytes());
        }
        crate::rng::digest_bytes(&bytes)
    }
}

/// Index of the maximum of `values` among `eligible` vertices, with
/// tolerant ties resolved by position then index.
fn argmax_tiebreak(values: &[f64], eligible: &[bool], positions: &[Point]) -> Option<usize> {
    let max = values
        .iter()
        .zip(eligible)
        .filter(|(_, &e)| e)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let floor = max - TIE_REL * max.abs();
    let mut best: Option<usize> = None;
    for v in 0..values.len() {
        if !eligible[v] || values[v] < floor {
            continue;
        }
        best = match best {
            None => Some(v),
            Some(b) => match lex_cmp(&positions[v], &positions[b]) {
                std::cmp::Ordering::Less => Some(v),
                _ => Some(b),
            },
        };
    }
    best
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        Err(Error::TooMany { requested: k, available: n })
    } else {
        Ok(())
    }
}

/// Farthest-point iteration from `first`, with `distance_from(v)` giving the
/// distance field of one new seed.
fn farthest_point_loop<F>(first: usize, k: usize, positions: &[Point], mut distance_from: F) -> Vec<usize>
where
    F: FnMut(usize) -> Vec<f64>,
{
    let n = positions.len();
    let mut chosen = vec![first];
    let mut eligible = vec![true; n];
    eligible[first] = false;
    let mut mind = distance_from(first);
    while chosen.len() < k {
        let next = argmax_tiebreak(&mind, &eligible, positions).expect("k <= n");
        debug_assert!((0..n).all(|v| !eligible[v] || mind[v] <= mind[next] * (1.0 + TIE_REL) + 1e-300));
        chosen.push(next);
        eligible[next] = false;
        let d = distance_from(next);
        for (m, dv) in mind.iter_mut().zip(d) {
            *m = m.min(dv);
        }
    }
    chosen
}

fn euclid_field(positions: &[Point], from: Point) -> Vec<f64> {
    positions.iter().map(|&p| dist(p, from)).collect()
}

/// First deterministic Euclidean seed: farthest vertex from the vertex centroid.
pub fn euclidean_first_seed(positions: &[Point]) -> usize {
    let n = positions.len() as f64;
    let mut c = [0.0; 3];
    for p in positions {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let c = c.map(|x| x / n);
    let d = euclid_field(positions, c);
    argmax_tiebreak(&d, &vec![true; positions.len()], positions).expect("non-empty mesh")
}

pub fn fps_euclidean_deterministic(mesh: &Mesh, k: usize) -> Result<SeedSet> {
    let pos = &mesh.vertices;
    check_k(k, pos.len())?;
    let first = euclidean_first_seed(pos);
    let indices = farthest_point_loop(first, k, pos, |v| euclid_field(pos, pos[v]));
    Ok(SeedSet { indices, mode: SeedMode::EuclideanDeterministic, rng_seed: None })
}

pub fn fps_euclidean_random(mesh: &Mesh, k: usize, rng_seed: u64) -> Result<SeedSet> {
    let pos = &mesh.vertices;
    check_k(k, pos.len())?;
    let mut r = crate::rng::from_seed(rng_seed);
    let first = r.gen_range(0..pos.len());
    let indices = farthest_point_loop(first, k, pos, |v| euclid_field(pos, pos[v]));
    Ok(SeedSet { indices, mode: SeedMode::EuclideanRandom, rng_seed: Some(rng_seed) })
}

/// Farthest vertex from `source` on the graph, with the deterministic tie rule.
fn graph_farthest(graph: &EdgeGraph, source: usize, positions: &[Point]) -> usize {
    let d = graph.dijkstra(&[source]);
    argmax_tiebreak(&d, &vec![true; d.len()], positions).expect("non-empty graph")
}

/// Double-sweep diameter endpoint starting from the deterministic
/// Euclidean first seed.
pub fn double_sweep_endpoint(positions: &[Point], graph: &EdgeGraph) -> (usize, usize) {
    let start = euclidean_first_seed(positions);
    let a = graph_farthest(graph, start, positions);
    let b = graph_farthest(graph, a, positions);
    (a, b)
}

/// Deterministic graph-geodesic farthest-point sampling over explicit
/// positions (used for tie-breaks) and an edge graph.
pub fn fps_geodesic_points(positions: &[Point], graph: &EdgeGraph, k: usize) -> Result<SeedSet> {
    check_k(k, positions.len())?;
    graph.ensure_connected()?;
    let (_, first) = double_sweep_endpoint(positions, graph);
    let indices = farthest_point_loop(first, k, positions, |v| graph.dijkstra(&[v]));
    Ok(SeedSet { indices, mode: SeedMode::GeodesicDeterministic, rng_seed: None })
}

pub fn fps_geodesic_deterministic(mesh: &Mesh, graph: &EdgeGraph, k: usize) -> Result<SeedSet> {
    fps_geodesic_points(&mesh.vertices, graph, k)
}

/// Dispatch on mode. `rng_seed` is ignored by deterministic modes.
pub fn select_seeds(mesh: &Mesh, graph: &EdgeGraph, mode: SeedMode, k: usize, rng_seed: u64) -> Result<SeedSet> {
    match mode {
        SeedMode::EuclideanRandom => fps_euclidean_random(mesh, k, rng_seed),
        SeedMode::EuclideanDeterministic => fps_euclidean_deterministic(mesh, k),
        SeedMode::GeodesicDeterministic => fps_geodesic_deterministic(mesh, graph, k),
    }
}

/// Outcome of mapping a permuted run back onto the original vertex order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PermutationAlignment {
    pub relative_error: f64,
    pub global_cosine: f64,
}

/// Compare descriptors of a mesh with those of its relabeled copy, where
/// `permutation[i]` is the copy's index of original vertex `i`.
pub fn align_descriptors_after_permutation(
    original: &DescriptorMatrix,
    permuted: &DescriptorMatrix,
    permutation: &[usize],
) -> Result<PermutationAlignment> {
    let n = original.n_rows();
    if permuted.n_rows() != n || permutation.len() != n || original.dim() != permuted.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{} with {} map entries",
            n,
            original.dim(),
            permuted.n_rows(),
            permuted.dim(),
            permutation.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &j) in permutation.iter().enumerate() {
        for (a, b) in original.row(i).iter().zip(permuted.row(j)) {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    let relative_error = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    let ga = pool(original);
    let gb = pool(permuted);
    let global_cosine = crate::evaluation::cosine(&ga.vector, &gb.vector);
    Ok(PermutationAlignment { relative_error, global_cosine })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::icosphere;
    use rand::seq::SliceRandom;

    fn line_mesh(points: &[Point]) -> Mesh {
        Mesh::new(points.to_vec(), vec![[0, 1, 2]])
    }

    #[test]
    fn first_euclidean_seed_by_hand() {
        let m = line_mesh(&[[0., 0., 0.], [2., 0., 0.], [-1., 0., 0.]]);
        let s = fps_euclidean_deterministic(&m, 1).unwrap();
        assert_eq!(s.indices, vec![1]);
        assert_eq!(s.rng_seed, None);
    }

    #[test]
    fn exhaustion_and_bounds() {
        let m = icosphere(1);
        let s = fps_euclidean_deterministic(&m, m.n_vertices()).unwrap();
        let mut idx = s.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..m.n_vertices()).collect::<Vec<_>>());
        assert!(fps_euclidean_deterministic(&m, m.n_vertices() + 1).is_err());
        assert!(fps_euclidean_random(&m, m.n_vertices() + 1, 1).is_err());
    }

    #[test]
    fn antipodal_tie_goes_to_lexicographic_smaller() {
        // Centroid at the origin; (-1,0,0) and (1,0,0) tie, y-axis points are nearer.
        let m = Mesh::new(
            vec![[1., 0., 0.], [-1., 0., 0.], [0., 0.5, 0.], [0., -0.5, 0.]],
            vec![[0, 2, 1], [0, 1, 3]],
        );
        let s = fps_euclidean_deterministic(&m, 1).unwrap();
        assert_eq!(s.indices, vec![1]);
    }

    #[test]
    fn random_mode_is_seeded() {
        let m = icosphere(2);
        let a = fps_euclidean_random(&m, 8, 5).unwrap();
        let b = fps_euclidean_random(&m, 8, 5).unwrap();
        assert_eq!(a, b);
        let firsts: std::collections::BTreeSet<usize> = (0..5)
            .map(|s| fps_euclidean_random(&m, 1, s).unwrap().indices[0])
            .collect();
        assert!(firsts.len() >= 2);

        let two = line_mesh(&[[0., 0., 0.], [1., 0., 0.], [0., 1., 0.]]);
        for s in 0..4 {
            let mut got = fps_euclidean_random(&two, 3, s).unwrap().indices;
            got.sort_unstable();
            assert_eq!(got, vec![0, 1, 2]);
        }
    }

    #[test]
    fn path_graph_double_sweep() {
        let pos: Vec<Point> = (0..4).map(|i| [i as f64, 0., 0.]).collect();
        let g = EdgeGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        assert_eq!(double_sweep_endpoint(&pos, &g), (3, 0));
        assert_eq!(fps_geodesic_points(&pos, &g, 1).unwrap().indices, vec![0]);
        assert_eq!(fps_geodesic_points(&pos, &g, 2).unwrap().indices, vec![0, 3]);
    }

    #[test]
    fn cycle_graph_picks_antipodes() {
        let n = 8;
        let pos: Vec<Point> = (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        let edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        let g = EdgeGraph::from_edges(n, &edges);
        let s = fps_geodesic_points(&pos, &g, 2).unwrap().indices;
        let gap = (s[0] as i64 - s[1] as i64).rem_euclid(n as i64);
        assert_eq!(gap.min(n as i64 - gap), 4);
    }

    #[test]
    fn disconnected_graph_is_reported() {
        let pos: Vec<Point> = (0..4).map(|i| [i as f64, 0., 0.]).collect();
        let g = EdgeGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        assert!(matches!(
            fps_geodesic_points(&pos, &g, 2),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn deterministic_modes_follow_vertex_relabeling() {
        let m = icosphere(3);
        let mut perm: Vec<usize> = (0..m.n_vertices()).collect();
        perm.shuffle(&mut crate::rng::from_seed(21));
        let pm = m.permuted(&perm);
        let e0 = fps_euclidean_deterministic(&m, 24).unwrap();
        let e1 = fps_euclidean_deterministic(&pm, 24).unwrap();
        assert_eq!(e0.indices.iter().map(|&i| perm[i]).collect::<Vec<_>>(), e1.indices);
        let g0 = fps_geodesic_deterministic(&m, &EdgeGraph::from_mesh(&m), 24).unwrap();
        let g1 = fps_geodesic_deterministic(&pm, &EdgeGraph::from_mesh(&pm), 24).unwrap();
        assert_eq!(g0.indices.iter().map(|&i| perm[i]).collect::<Vec<_>>(), g1.indices);
    }
}
