//! Triangle meshes: ASCII OFF/OBJ ingestion, area normalization, connectivity
//! hashing, edge graphs and dataset manifests.

use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Faces whose pre-normalization area falls below this are dropped.
pub const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
    pub shape_id: String,
    pub label: String,
    pub split: String,
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Total order on positions: lexicographic `(x, y, z)`.
#[inline]
pub fn lex_cmp(a: &Point, b: &Point) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Self {
        Mesh {
            vertices,
            faces,
            shape_id: String::new(),
            label: String::new(),
            split: String::new(),
        }
    }

    pub fn with_meta(mut self, shape_id: &str, label: &str, split: &str) -> Self {
        self.shape_id = shape_id.to_string();
        self.label = label.to_string();
        self.split = split.to_string();
        self
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() || self.faces.is_empty() {
            return Err(Error::EmptyMesh(format!(
                "{} vertices, {} faces",
                self.vertices.len(),
                self.faces.len()
            )));
        }
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(Error::IndexOutOfRange { face: fi, index: i, n });
                }
            }
        }
        Ok(())
    }

    pub fn face_area(&self, f: &[usize; 3]) -> f64 {
        let [a, b, c] = f.map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn face_normal(&self, f: &[usize; 3]) -> Point {
        let [a, b, c] = f.map(|i| self.vertices[i]);
        cross(sub(b, a), sub(c, a))
    }

    pub fn total_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted centroid of the surface.
    pub fn area_centroid(&self) -> Point {
        let mut c = [0.0; 3];
        let mut total = 0.0;
        for f in &self.faces {
            let a = self.face_area(f);
            let [p, q, r] = f.map(|i| self.vertices[i]);
            for k in 0..3 {
                c[k] += a * (p[k] + q[k] + r[k]) / 3.0;
            }
            total += a;
        }
        c.map(|x| x / total)
    }

    /// Unweighted mean of vertex positions.
    pub fn vertex_centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.vertices {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|x| x / n)
    }

    pub fn euler_characteristic(&self) -> i64 {
        let edges: BTreeSet<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        self.vertices.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// Drop vertices no face references, remapping face indices.
    /// Returns the old index of each kept vertex.
    pub fn compact(&mut self) -> Vec<usize> {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = kept.len();
                kept.push(i);
            }
        }
        if kept.len() != self.vertices.len() {
            self.vertices = kept.iter().map(|&i| self.vertices[i]).collect();
            for f in &mut self.faces {
                *f = f.map(|i| remap[i]);
            }
        }
        kept
    }

    /// Apply a vertex relabeling: new vertex `perm[i]` is old vertex `i`.
    pub fn permuted(&self, perm: &[usize]) -> Mesh {
        let mut vertices = vec![[0.0; 3]; self.vertices.len()];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = self.vertices[old];
        }
        let faces = self.faces.iter().map(|f| f.map(|i| perm[i])).collect();
        Mesh { vertices, faces, ..self.clone() }
    }
}

/// Parse an ASCII OFF or OBJ file. Polygon faces are fan-triangulated.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|s| s.to_ascii_lowercase())
        .unwrap_or_default();
    let mut mesh = if ext == "obj" {
        parse_obj(reader)?
    } else {
        parse_off(reader)?
    };
    mesh.shape_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Ok(mesh)
}

fn fan(face_no: usize, idx: &[usize], out: &mut Vec<[usize; 3]>) -> Result<()> {
    if idx.len() < 3 {
        return Err(Error::NonTriangulable { face: face_no, arity: idx.len() });
    }
    for j in 1..idx.len() - 1 {
        out.push([idx[0], idx[j], idx[j + 1]]);
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn parse_off<R: BufRead>(reader: R) -> Result<Mesh> {
    // Token stream with line numbers, comments stripped.
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| parse_err(ln + 1, e.to_string()))?;
        let body = line.split('#').next().unwrap_or("");
        tokens.extend(body.split_whitespace().map(|t| (ln + 1, t.to_string())));
    }
    let mut it = tokens.into_iter().peekable();
    let (ln, head) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut counts: Vec<usize> = Vec::new();
    if head != "OFF" {
        // "OFF" may be glued to the counts or missing in some exporters.
        match head.strip_prefix("OFF") {
            Some(rest) if rest.is_empty() => {}
            _ => {
                let c = head
                    .parse()
                    .map_err(|_| parse_err(ln, format!("expected OFF header, got '{head}'")))?;
                counts.push(c);
            }
        }
    }
    let mut last_line = ln;
    let mut next = |what: &str| -> Result<(usize, String)> {
        let t = it
            .next()
            .ok_or_else(|| parse_err(last_line, format!("unexpected end of file reading {what}")))?;
        last_line = t.0;
        Ok(t)
    };
    while counts.len() < 3 {
        let (l, t) = next("header counts")?;
        counts.push(t.parse().map_err(|_| parse_err(l, format!("bad count '{t}'")))?);
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut p = [0.0; 3];
        for x in &mut p {
            let (l, t) = next("vertex")?;
            *x = t.parse().map_err(|_| parse_err(l, format!("bad coordinate '{t}'")))?;
        }
        vertices.push(p);
    }
    let mut faces = Vec::with_capacity(nf);
    // Face lines may carry trailing colour values; read per line.
    let mut pending: Vec<(usize, String)> = Vec::new();
    for (l, t) in it {
        pending.push((l, t));
    }
    let mut lines: Vec<Vec<String>> = Vec::new();
    let mut cur_line = usize::MAX;
    for (l, t) in pending {
        if l != cur_line {
            lines.push(Vec::new());
            cur_line = l;
        }
        lines.last_mut().unwrap().push(t);
    }
    if lines.len() < nf {
        return Err(parse_err(
            last_line,
            format!("expected {nf} faces, found {}", lines.len()),
        ));
    }
    for (fi, toks) in lines.iter().take(nf).enumerate() {
        let arity: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(last_line, format!("bad face arity '{}'", toks[0])))?;
        if toks.len() < arity + 1 {
            return Err(parse_err(last_line, format!("face {fi} is truncated")));
        }
        let idx: Vec<usize> = toks[1..=arity]
            .iter()
            .map(|t| t.parse().map_err(|_| parse_err(last_line, format!("bad index '{t}'"))))
            .collect::<Result<_>>()?;
        fan(fi, &idx, &mut faces)?;
    }
    let mesh = Mesh::new(vertices, faces);
    mesh.validate()?;
    Ok(mesh)
}

pub fn parse_obj<R: BufRead>(reader: R) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_no = 0;
    for (ln, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| parse_err(ln + 1, e.to_string()))?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for x in &mut p {
                    let t = toks.next().ok_or_else(|| parse_err(ln + 1, "truncated vertex"))?;
                    *x = t.parse().map_err(|_| parse_err(ln + 1, format!("bad coordinate '{t}'")))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let n = vertices.len() as i64;
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|_| parse_err(ln + 1, format!("bad index '{t}'")))?;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 {
                            return Err(parse_err(ln + 1, format!("index '{t}' out of range")));
                        }
                        Ok(i as usize)
                    })
                    .collect::<Result<_>>()?;
                fan(face_no, &idx, &mut faces)?;
                face_no += 1;
            }
            _ => {}
        }
    }
    let mesh = Mesh::new(vertices, faces);
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_off(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "OFF").unwrap();
    writeln!(s, "{} {} 0", mesh.vertices.len(), mesh.faces.len()).unwrap();
    for p in &mesh.vertices {
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
    }
    for f in &mesh.faces {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Center at the area-weighted centroid and scale to unit total area.
/// Faces with area below [`DEGENERATE_AREA`] are dropped first and
/// vertices left unreferenced are removed.
pub fn preprocess(mesh: &Mesh) -> Result<Mesh> {
    mesh.validate()?;
    let mut out = mesh.clone();
    let before = out.faces.len();
    out.faces.retain(|f| mesh.face_area(f) >= DEGENERATE_AREA);
    if out.faces.is_empty() {
        return Err(Error::AllFacesDegenerate(before));
    }
    if out.faces.len() < before {
        log::warn!(
            "{}: dropped {} degenerate faces",
            mesh.shape_id,
            before - out.faces.len()
        );
    }
    let kept = out.compact();
    if kept.len() < mesh.vertices.len() {
        log::warn!(
            "{}: removed {} unreferenced vertices",
            mesh.shape_id,
            mesh.vertices.len() - kept.len()
        );
    }
    let c = out.area_centroid();
    let scale = 1.0 / out.total_area().sqrt();
    for p in &mut out.vertices {
        *p = [(p[0] - c[0]) * scale, (p[1] - c[1]) * scale, (p[2] - c[2]) * scale];
    }
    Ok(out)
}

/// Digest of the connectivity alone. Each face is rotated so its smallest
/// index leads (orientation kept), then the face list is sorted.
pub fn topology_hash(mesh: &Mesh) -> String {
    let mut faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .map(|f| {
            let k = (0..3).min_by_key(|&k| f[k]).unwrap();
            [f[k], f[(k + 1) % 3], f[(k + 2) % 3]]
        })
        .collect();
    faces.sort_unstable();
    let mut bytes = Vec::with_capacity(8 + faces.len() * 24);
    bytes.extend_from_slice(&(mesh.vertices.len() as u64).to_le_bytes());
    for f in faces {
        for i in f {
            bytes.extend_from_slice(&(i as u64).to_le_bytes());
        }
    }
    crate::rng::digest_bytes(&bytes)
}

/// Weighted vertex adjacency of the mesh edge graph.
#[derive(Clone, Debug)]
pub struct EdgeGraph {
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

impl EdgeGraph {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let n = mesh.vertices.len();
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for f in &mesh.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            let w = dist(mesh.vertices[a], mesh.vertices[b]);
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        EdgeGraph { adjacency }
    }

    /// Build from explicit undirected weighted edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for adj in &mut adjacency {
            adj.sort_by(|x, y| x.0.cmp(&y.0));
        }
        EdgeGraph { adjacency }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().map(|&(u, _)| u)
    }

    pub fn component_count(&self) -> usize {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for u in self.neighbors(v) {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        count
    }

    pub fn ensure_connected(&self) -> Result<()> {
        match self.component_count() {
            1 => Ok(()),
            c => Err(Error::Disconnected { components: c }),
        }
    }

    /// Multi-source Dijkstra. Unreached vertices stay at `f64::INFINITY`.
    pub fn dijkstra(&self, sources: &[usize]) -> Vec<f64> {
        let mut d = vec![f64::INFINITY; self.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            d[s] = 0.0;
            heap.push(HeapItem(0.0, s));
        }
        while let Some(HeapItem(du, u)) = heap.pop() {
            if du > d[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = du + w;
                if nd < d[v] {
                    d[v] = nd;
                    heap.push(HeapItem(nd, v));
                }
            }
        }
        d
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // Min-heap on distance, then index.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub shape_id: String,
    pub label: String,
    #[serde(default)]
    pub split: String,
}

/// A dataset listing, stored as JSON lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dataset_name: String,
    pub records: Vec<ManifestRecord>,
    /// Directory relative record paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(dataset_name: &str, records: Vec<ManifestRecord>, root: PathBuf) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for r in &records {
            if !ids.insert(r.shape_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate shape_id '{}' in manifest",
                    r.shape_id
                )));
            }
        }
        Ok(Manifest { dataset_name: dataset_name.to_string(), records, root })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| parse_err(ln + 1, e.to_string()))?;
            records.push(rec);
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
            .to_string();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(&name, records, root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            let line = serde_json::to_string(r)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn resolve(&self, rec: &ManifestRecord) -> PathBuf {
        let p = Path::new(&rec.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Load and preprocess one record, attaching its metadata.
    pub fn load_record(&self, rec: &ManifestRecord) -> Result<Mesh> {
        let raw = load_mesh(&self.resolve(rec))?;
        let mesh = preprocess(&raw)?;
        Ok(mesh.with_meta(&rec.shape_id, &rec.label, &rec.split))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const TETRA: &str = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    fn cube() -> Mesh {
        let v = vec![
            [0., 0., 0.], [1., 0., 0.], [1., 1., 0.], [0., 1., 0.],
            [0., 0., 1.], [1., 0., 1.], [1., 1., 1.], [0., 1., 1.],
        ];
        let quads = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [2, 3, 7, 6], [1, 2, 6, 5], [0, 4, 7, 3]];
        let mut faces = Vec::new();
        for (i, q) in quads.iter().enumerate() {
            fan(i, q, &mut faces).unwrap();
        }
        Mesh::new(v, faces)
    }

    #[test]
    fn parses_tetrahedron() {
        let m = parse_off(Cursor::new(TETRA)).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_faces(), 4);
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn quad_is_fan_split() {
        let src = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = parse_off(Cursor::new(src)).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn truncated_is_parse_error() {
        let src = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1";
        assert!(matches!(parse_off(Cursor::new(src)), Err(Error::Parse { .. })));
        let src = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1";
        assert!(matches!(parse_off(Cursor::new(src)), Err(Error::Parse { .. })));
    }

    #[test]
    fn two_vertex_face_is_rejected() {
        let src = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n";
        assert!(matches!(parse_off(Cursor::new(src)), Err(Error::NonTriangulable { .. })));
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let src = "OFF\n0 0 0\n";
        assert!(matches!(parse_off(Cursor::new(src)), Err(Error::EmptyMesh(_))));
    }

    #[test]
    fn obj_with_slashes_and_negative_indices() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\nf -3 -1 -2\n";
        let m = parse_obj(Cursor::new(src)).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 1]]);
    }

    #[test]
    fn cube_normalizes_to_unit_area() {
        let m = cube();
        assert!((m.total_area() - 6.0).abs() < 1e-12);
        let p = preprocess(&m).unwrap();
        assert!((p.total_area() - 1.0).abs() < 1e-9);
        let s = 1.0 / 6f64.sqrt();
        for (a, b) in m.vertices.iter().zip(&p.vertices) {
            for k in 0..3 {
                assert!((b[k] - (a[k] - 0.5) * s).abs() < 1e-12);
            }
        }
        let c = p.area_centroid();
        assert!(norm(c) < 1e-9);
    }

    #[test]
    fn preprocess_is_idempotent_and_translation_invariant() {
        let p = preprocess(&cube()).unwrap();
        let q = preprocess(&p).unwrap();
        for (a, b) in p.vertices.iter().zip(&q.vertices) {
            assert!(dist(*a, *b) < 1e-12);
        }
        let mut moved = cube();
        for v in &mut moved.vertices {
            *v = [v[0] * 3.0 + 5.0, v[1] * 3.0 + 5.0, v[2] * 3.0 + 5.0];
        }
        let r = preprocess(&moved).unwrap();
        for (a, b) in p.vertices.iter().zip(&r.vertices) {
            assert!(dist(*a, *b) < 1e-9);
        }
    }

    #[test]
    fn degenerate_faces_dropped() {
        let mut m = cube();
        m.vertices.push([0.5, 0.5, 0.5]);
        m.faces.push([8, 8, 0]);
        let p = preprocess(&m).unwrap();
        assert_eq!(p.n_faces(), 12);
        assert_eq!(p.n_vertices(), 8);

        let flat = Mesh::new(vec![[0.; 3], [1., 0., 0.], [2., 0., 0.]], vec![[0, 1, 2]]);
        assert!(matches!(preprocess(&flat), Err(Error::AllFacesDegenerate(1))));
    }

    #[test]
    fn topology_hash_ignores_geometry() {
        let m = cube();
        let mut j = m.clone();
        for v in &mut j.vertices {
            v[0] += 0.01;
        }
        assert_eq!(topology_hash(&m), topology_hash(&j));

        // Flip the diagonal of the first quad [0,3,2,1]: (0,3,2),(0,2,1) -> (0,3,1),(3,2,1).
        let mut flipped = m.clone();
        flipped.faces[0] = [0, 3, 1];
        flipped.faces[1] = [3, 2, 1];
        assert_ne!(topology_hash(&m), topology_hash(&flipped));
    }

    #[test]
    fn edge_graph_is_symmetric_and_connected() {
        let m = preprocess(&cube()).unwrap();
        let g = EdgeGraph::from_mesh(&m);
        for (u, adj) in g.adjacency.iter().enumerate() {
            for &(v, w) in adj {
                assert!(w > 0.0);
                assert!(g.adjacency[v].iter().any(|&(x, y)| x == u && y == w));
            }
        }
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn manifest_roundtrip_and_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let off = dir.path().join("t.off");
        std::fs::write(&off, TETRA).unwrap();
        let rec = ManifestRecord {
            path: "t.off".into(),
            shape_id: "t".into(),
            label: "a".into(),
            split: "train".into(),
        };
        let man = Manifest::new("d", vec![rec.clone()], dir.path().to_path_buf()).unwrap();
        let p = dir.path().join("d.jsonl");
        man.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back.records, man.records);
        let mesh = back.load_record(&back.records[0]).unwrap();
        assert_eq!(mesh.label, "a");
        assert!((mesh.total_area() - 1.0).abs() < 1e-9);
        assert!(Manifest::new("d", vec![rec.clone(), rec], dir.path().into()).is_err());
    }
}
