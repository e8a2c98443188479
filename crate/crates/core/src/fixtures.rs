//! Deterministic synthetic meshes and ground-truth pairs.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{norm, preprocess, write_off, Manifest, ManifestRecord, Mesh, Point};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Icosphere,
    Torus,
    BumpySphere,
    TwoClassBlobs,
    RegisteredPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    /// Subdivision level for sphere-like kinds, ring multiplier for the torus.
    pub resolution: usize,
    pub deformation_seed: u64,
    /// Amplitude of the smooth radial deformation (0 = none).
    pub deformation_scale: f64,
    /// Registered pairs only: relabel the copy's vertices at random.
    pub permute: bool,
}

impl FixtureSpec {
    pub fn new(kind: FixtureKind, resolution: usize) -> Self {
        FixtureSpec {
            kind,
            resolution,
            deformation_seed: 0,
            deformation_scale: 0.0,
            permute: false,
        }
    }
}

/// A generated mesh, plus for registered pairs the copy and the map
/// `gt[source vertex] = target vertex`.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub mesh: Mesh,
    pub pair: Option<(Mesh, Vec<usize>)>,
}

pub fn make_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    let min_res = match spec.kind {
        FixtureKind::Torus => 1,
        _ => 0,
    };
    if spec.resolution < min_res || spec.resolution > 7 {
        return Err(Error::InvalidArgument(format!(
            "fixture resolution {} out of range",
            spec.resolution
        )));
    }
    let base = match spec.kind {
        FixtureKind::Icosphere | FixtureKind::RegisteredPair => raw_icosphere(spec.resolution),
        FixtureKind::Torus => raw_torus(spec.resolution),
        FixtureKind::BumpySphere => {
            let mut m = raw_icosphere(spec.resolution);
            bump(&mut m, 0.25, 6, spec.deformation_seed ^ 0xB0B);
            m
        }
        FixtureKind::TwoClassBlobs => {
            let mut m = raw_icosphere(spec.resolution);
            for p in &mut m.vertices {
                let z = p[2];
                let s = 1.0 + 0.5 * (2.0 * z * z - 1.0);
                *p = p.map(|x| x * s);
            }
            m
        }
    };
    let name = format!("{:?}", spec.kind).to_lowercase();
    let mut mesh = base;
    if spec.kind != FixtureKind::RegisteredPair && spec.deformation_scale > 0.0 {
        deform(&mut mesh, spec.deformation_scale, spec.deformation_seed);
    }
    let mesh = preprocess(&mesh)?.with_meta(&name, &name, "all");
    if spec.kind != FixtureKind::RegisteredPair {
        return Ok(Fixture { mesh, pair: None });
    }
    let mut copy = mesh.clone();
    if spec.deformation_scale > 0.0 {
        deform(&mut copy, spec.deformation_scale, spec.deformation_seed);
        copy = preprocess(&copy)?;
    }
    let n = copy.n_vertices();
    let gt: Vec<usize> = if spec.permute {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng::stream(spec.deformation_seed, &["fixture", "permute"]));
        p
    } else {
        (0..n).collect()
    };
    let mut target = copy.permuted(&gt);
    if spec.permute {
        target.faces.shuffle(&mut rng::stream(spec.deformation_seed, &["fixture", "faces"]));
    }
    target.shape_id = format!("{name}_copy");
    Ok(Fixture { mesh, pair: Some((target, gt)) })
}

/// Preprocessed icosphere with `subdiv` midpoint subdivisions.
pub fn icosphere(subdiv: usize) -> Mesh {
    preprocess(&raw_icosphere(subdiv))
        .expect("icosphere is non-degenerate")
        .with_meta("icosphere", "sphere", "all")
}

/// Preprocessed torus fixture.
pub fn torus(resolution: usize) -> Mesh {
    preprocess(&raw_torus(resolution))
        .expect("torus is non-degenerate")
        .with_meta("torus", "torus", "all")
}

fn raw_icosphere(subdiv: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Point> = vec![
        [-1., t, 0.], [1., t, 0.], [-1., -t, 0.], [1., -t, 0.],
        [0., -1., t], [0., 1., t], [0., -1., -t], [0., 1., -t],
        [t, 0., -1.], [t, 0., 1.], [-t, 0., -1.], [-t, 0., 1.],
    ];
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let unit = |p: Point| {
        let n = norm(p);
        p.map(|x| x / n)
    };
    for p in &mut v {
        *p = unit(*p);
    }
    for _ in 0..subdiv {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Point>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let p = [
                    (v[a][0] + v[b][0]) / 2.0,
                    (v[a][1] + v[b][1]) / 2.0,
                    (v[a][2] + v[b][2]) / 2.0,
                ];
                v.push(unit(p));
                v.len() - 1
            })
        };
        let mut nf = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            nf.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = nf;
    }
    Mesh::new(v, f)
}

fn raw_torus(resolution: usize) -> Mesh {
    let (nu, nv) = (12 * resolution, 6 * resolution);
    let (big, small) = (1.0, 0.4);
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let a = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let b = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let r = big + small * b.cos();
            v.push([r * a.cos(), r * a.sin(), small * b.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut f = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    Mesh::new(v, f)
}

/// Low-frequency basis on the unit direction (degree ≤ 2 harmonics).
fn harmonic_basis(d: Point) -> [f64; 8] {
    let [x, y, z] = d;
    [x, y, z, x * y, y * z, z * x, x * x - y * y, 3.0 * z * z - 1.0]
}

/// Smooth radial deformation `p ← p (1 + scale · g(p/|p|))` with random
/// coefficients on a degree-2 harmonic basis.
pub fn deform(mesh: &mut Mesh, scale: f64, seed: u64) {
    let mut r = rng::stream(seed, &["fixture", "deform"]);
    let coef: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
    for p in &mut mesh.vertices {
        let n = norm(*p);
        if n == 0.0 {
            continue;
        }
        let d = p.map(|x| x / n);
        let g: f64 = harmonic_basis(d).iter().zip(&coef).map(|(b, c)| b * c).sum();
        let s = 1.0 + scale * g;
        *p = p.map(|x| x * s);
    }
}

/// Gaussian bumps at `count` random directions.
fn bump(mesh: &mut Mesh, amplitude: f64, count: usize, seed: u64) {
    let mut r = rng::stream(seed, &["fixture", "bump"]);
    let centers: Vec<Point> = (0..count)
        .map(|_| {
            let p: Point = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let n = norm(p).max(1e-9);
            p.map(|x| x / n)
        })
        .collect();
    for p in &mut mesh.vertices {
        let n = norm(*p);
        let d = p.map(|x| x / n);
        let mut s = 1.0;
        for c in &centers {
            let cosang = crate::mesh::dot(d, *c);
            s += amplitude * (-(1.0 - cosang) / 0.05).exp();
        }
        *p = p.map(|x| x * s);
    }
}

/// Class-structured synthetic retrieval set. Class `i` is a distinct base
/// shape and each member a smooth deformation of it.
pub fn make_retrieval_set(
    classes: usize,
    per_class: usize,
    deformation_scale: f64,
    rng_seed: u64,
    resolution: usize,
) -> Result<Vec<Mesh>> {
    if classes < 2 || per_class < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes and 2 members".into()));
    }
    let mut out = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let base = match c {
            0 => raw_icosphere(resolution),
            1 => raw_torus(resolution.max(1) + 1),
            _ => {
                let mut m = raw_icosphere(resolution);
                bump(&mut m, 0.35, 2 + c, rng::hash64(rng_seed, &["class", &c.to_string()]));
                m
            }
        };
        let label = format!("class{c:02}");
        for j in 0..per_class {
            let mut m = base.clone();
            if deformation_scale > 0.0 {
                let s = rng::hash64(rng_seed, &["member", &label, &j.to_string()]);
                deform(&mut m, deformation_scale, s);
            }
            let id = format!("{label}_{j:02}");
            out.push(preprocess(&m)?.with_meta(&id, &label, "all"));
        }
    }
    Ok(out)
}

/// Write meshes as OFF files plus a JSON-lines manifest into `dir`.
pub fn write_dataset(meshes: &[Mesh], dir: &Path, name: &str) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(meshes.len());
    for m in meshes {
        let file = format!("{}.off", m.shape_id);
        write_off(m, &dir.join(&file))?;
        records.push(ManifestRecord {
            path: file,
            shape_id: m.shape_id.clone(),
            label: m.label.clone(),
            split: m.split.clone(),
        });
    }
    let manifest = Manifest::new(name, records, dir.to_path_buf())?;
    manifest.save(&dir.join(format!("{name}.jsonl")))?;
    Ok(manifest)
}
