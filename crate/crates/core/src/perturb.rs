//! Synthetic perturbations for the robustness protocol: Gaussian vertex
//! jitter, shortest-edge-first decimation, and plane-cut partiality.

use std::collections::{BTreeSet, BinaryHeap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{cross, dot, preprocess, sub, EdgeGraph, Mesh, Point};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Noise,
    Decimation,
    Partial,
}

impl PerturbKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbKind::Noise => "noise",
            PerturbKind::Decimation => "decimation",
            PerturbKind::Partial => "partial",
        }
    }
}

impl std::str::FromStr for PerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(PerturbKind::Noise),
            "decimation" => Ok(PerturbKind::Decimation),
            "partial" => Ok(PerturbKind::Partial),
            _ => Err(Error::InvalidArgument(format!("unknown perturbation '{s}'"))),
        }
    }
}

/// Stream seed for one (shape, kind, severity) perturbation.
pub fn perturbation_seed(global_seed: u64, shape_id: &str, kind: PerturbKind, severity: f64) -> u64 {
    rng::hash64(global_seed, &[shape_id, kind.as_str(), &format!("{severity:e}")])
}

/// Perturb a preprocessed mesh; the output is preprocessed again.
pub fn perturb(mesh: &Mesh, kind: PerturbKind, severity: f64, rng_seed: u64) -> Result<Mesh> {
    let mut r = rng::from_seed(rng_seed);
    let out = match kind {
        PerturbKind::Noise => {
            if severity < 0.0 || !severity.is_finite() {
                return Err(Error::InvalidArgument(format!("noise severity {severity}")));
            }
            add_noise(mesh, severity, &mut r)
        }
        PerturbKind::Decimation => {
            check_fraction(severity)?;
            decimate(mesh, severity)
        }
        PerturbKind::Partial => {
            check_fraction(severity)?;
            partial(mesh, severity, &mut r)?
        }
    };
    if out.faces.is_empty() {
        return Err(Error::EmptyMesh(format!("{} after {}", mesh.shape_id, kind.as_str())));
    }
    let mut p = preprocess(&out)?;
    p.shape_id = mesh.shape_id.clone();
    p.label = mesh.label.clone();
    p.split = mesh.split.clone();
    Ok(p)
}

fn check_fraction(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("severity {s} not in (0, 1)")))
    }
}

fn add_noise<R: Rng>(mesh: &Mesh, sigma: f64, r: &mut R) -> Mesh {
    let mut out = mesh.clone();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    for p in &mut out.vertices {
        for x in p.iter_mut() {
            *x += normal.sample(r);
        }
    }
    out
}

#[derive(PartialEq)]
struct EdgeItem(f64, usize, usize);

impl Eq for EdgeItem {}

impl PartialOrd for EdgeItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EdgeItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then(other.1.cmp(&self.1))
            .then(other.2.cmp(&self.2))
    }
}

/// Collapse shortest edges to their midpoint until roughly `fraction` of the
/// faces are gone. Collapses violating the link condition or flipping an
/// incident face normal are skipped.
pub fn decimate(mesh: &Mesh, fraction: f64) -> Mesh {
    let mut pos: Vec<Point> = mesh.vertices.clone();
    let mut faces: Vec<[usize; 3]> = mesh.faces.clone();
    let mut alive = vec![true; faces.len()];
    let mut incident: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); pos.len()];
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            incident[v].insert(fi);
        }
    }
    let target = ((1.0 - fraction) * faces.len() as f64).round() as usize;
    let mut n_alive = faces.len();

    let len = |pos: &[Point], a: usize, b: usize| crate::mesh::dist(pos[a], pos[b]);
    let mut heap = BinaryHeap::new();
    for f in &faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let (a, b) = (a.min(b), a.max(b));
            heap.push(EdgeItem(len(&pos, a, b), a, b));
        }
    }

    let neighbors = |faces: &[[usize; 3]], incident: &[BTreeSet<usize>], v: usize| {
        let mut s = BTreeSet::new();
        for &fi in &incident[v] {
            for &u in &faces[fi] {
                if u != v {
                    s.insert(u);
                }
            }
        }
        s
    };

    while n_alive > target {
        let Some(EdgeItem(l, a, b)) = heap.pop() else { break };
        if incident[a].is_empty() || incident[b].is_empty() {
            continue;
        }
        if (len(&pos, a, b) - l).abs() > 0.0 {
            continue; // stale entry
        }
        let shared: Vec<usize> = incident[a].intersection(&incident[b]).copied().collect();
        if shared.len() != 2 {
            continue;
        }
        // Link condition: the only common neighbours are the two opposite vertices.
        let na = neighbors(&faces, &incident, a);
        let nb = neighbors(&faces, &incident, b);
        if na.intersection(&nb).count() != 2 {
            continue;
        }
        let mid = [
            0.5 * (pos[a][0] + pos[b][0]),
            0.5 * (pos[a][1] + pos[b][1]),
            0.5 * (pos[a][2] + pos[b][2]),
        ];
        let mut flips = false;
        for &v in &[a, b] {
            for &fi in &incident[v] {
                if shared.contains(&fi) {
                    continue;
                }
                let f = faces[fi];
                let before = tri_normal(&pos, f, None);
                let after = tri_normal(&pos, f, Some((v, mid)));
                if dot(before, after) <= 0.0 {
                    flips = true;
                    break;
                }
            }
            if flips {
                break;
            }
        }
        if flips {
            continue;
        }
        pos[a] = mid;
        for &fi in &shared {
            alive[fi] = false;
            n_alive -= 1;
            for &v in &faces[fi] {
                incident[v].remove(&fi);
            }
        }
        let moved: Vec<usize> = incident[b].iter().copied().collect();
        for fi in moved {
            for v in faces[fi].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            incident[a].insert(fi);
        }
        incident[b].clear();
        for u in neighbors(&faces, &incident, a) {
            let (x, y) = (a.min(u), a.max(u));
            heap.push(EdgeItem(len(&pos, x, y), x, y));
        }
    }

    let faces: Vec<[usize; 3]> = faces
        .into_iter()
        .zip(alive)
        .filter_map(|(f, a)| a.then_some(f))
        .collect();
    let mut out = Mesh { vertices: pos, faces, ..mesh.clone() };
    out.compact();
    out
}

fn tri_normal(pos: &[Point], f: [usize; 3], moved: Option<(usize, Point)>) -> Point {
    let p = |i: usize| match moved {
        Some((v, q)) if v == i => q,
        _ => pos[i],
    };
    cross(sub(p(f[1]), p(f[0])), sub(p(f[2]), p(f[0])))
}

/// Cut with a random plane so that about `keep` of the vertices survive,
/// then retain the largest connected component.
fn partial<R: Rng>(mesh: &Mesh, keep: f64, r: &mut R) -> Result<Mesh> {
    let mut dir: Point = [0.0; 3];
    loop {
        for x in dir.iter_mut() {
            *x = StandardNormal.sample(r);
        }
        if crate::mesh::norm(dir) > 1e-6 {
            break;
        }
    }
    let proj: Vec<f64> = mesh.vertices.iter().map(|&p| dot(p, dir)).collect();
    let mut sorted = proj.clone();
    sorted.sort_by(f64::total_cmp);
    let n_keep = ((keep * proj.len() as f64).round() as usize).clamp(1, proj.len());
    let threshold = sorted[n_keep - 1];
    let faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .filter(|f| f.iter().all(|&v| proj[v] <= threshold))
        .copied()
        .collect();
    if faces.is_empty() {
        return Err(Error::EmptyMesh(format!("{} after partial cut", mesh.shape_id)));
    }
    let mut cut = Mesh { faces, ..mesh.clone() };
    cut.compact();
    Ok(largest_component(&cut))
}

/// Keep only faces of the largest vertex-connected component.
pub fn largest_component(mesh: &Mesh) -> Mesh {
    let g = EdgeGraph::from_mesh(mesh);
    let n = g.len();
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        let mut stack = vec![s];
        comp[s] = id;
        while let Some(v) = stack.pop() {
            size += 1;
            for u in g.neighbors(v) {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    stack.push(u);
                }
            }
        }
        sizes.push(size);
    }
    // First largest wins ties.
    let best = (0..sizes.len()).fold(0, |b, i| if sizes[i] > sizes[b] { i } else { b });
    let faces = mesh.faces.iter().filter(|f| comp[f[0]] == best).copied().collect();
    let mut out = Mesh { faces, ..mesh.clone() };
    out.compact();
    out
}

/// Unique undirected edges of a mesh (used by manifold checks in tests).
pub fn edge_set(mesh: &Mesh) -> HashSet<(usize, usize)> {
    mesh.faces
        .iter()
        .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::icosphere;

    #[test]
    fn zero_noise_is_identity() {
        let m = icosphere(2);
        let p = perturb(&m, PerturbKind::Noise, 0.0, 7).unwrap();
        for (a, b) in m.vertices.iter().zip(&p.vertices) {
            assert!(crate::mesh::dist(*a, *b) < 1e-12);
        }
    }

    #[test]
    fn perturbation_is_deterministic() {
        let m = icosphere(2);
        for kind in [PerturbKind::Noise, PerturbKind::Decimation, PerturbKind::Partial] {
            let severity = if kind == PerturbKind::Noise { 0.01 } else { 0.5 };
            let s = perturbation_seed(13, "sphere", kind, severity);
            let a = perturb(&m, kind, severity, s).unwrap();
            let b = perturb(&m, kind, severity, s).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn partial_keeps_fraction_single_component() {
        let m = icosphere(3);
        let p = perturb(&m, PerturbKind::Partial, 0.8, 99).unwrap();
        let expect = 0.8 * m.n_vertices() as f64;
        assert!((p.n_vertices() as f64 - expect).abs() <= 0.1 * expect, "{}", p.n_vertices());
        assert_eq!(EdgeGraph::from_mesh(&p).component_count(), 1);
    }

    #[test]
    fn decimation_hits_face_budget() {
        let m = icosphere(4);
        let p = perturb(&m, PerturbKind::Decimation, 0.6, 1).unwrap();
        let expect = 0.4 * m.n_faces() as f64;
        assert!((p.n_faces() as f64 - expect).abs() <= 0.05 * expect, "{}", p.n_faces());
        assert_eq!(EdgeGraph::from_mesh(&p).component_count(), 1);
        // Still a closed manifold: every edge shared by exactly two faces.
        assert_eq!(p.euler_characteristic(), 2);
        let mut counts = std::collections::HashMap::new();
        for f in &p.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn bad_severity_is_rejected() {
        let m = icosphere(1);
        assert!(perturb(&m, PerturbKind::Partial, 1.0, 1).is_err());
        assert!(perturb(&m, PerturbKind::Decimation, 0.0, 1).is_err());
        assert!(perturb(&m, PerturbKind::Noise, -0.1, 1).is_err());
    }
}
