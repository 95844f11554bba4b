//! Object models: triangle meshes, point clouds, surface sampling and ASCII PLY.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh<T: Real> {
    pub vertices: Vec<Vector3<T>>,
    pub faces: Vec<[usize; 3]>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn new(vertices: Vec<Vector3<T>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.iter().flatten().any(|&i| i >= vertices.len()) {
            return Err(Error::Format("face references a missing vertex".into()));
        }
        Ok(Self { vertices, faces })
    }

    pub fn triangle(&self, f: usize) -> [Vector3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> T {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a)).norm() * T::lit(0.5)
    }

    pub fn area(&self) -> T {
        (0..self.faces.len()).fold(T::zero(), |s, f| s + self.face_area(f))
    }

    /// UV sphere centered at the origin.
    pub fn uv_sphere(radius: T, segments: usize, rings: usize) -> Self {
        let mut vertices = vec![Vector3::new(T::zero(), T::zero(), radius)];
        for i in 1..rings {
            let theta = std::f64::consts::PI * i as f64 / rings as f64;
            for j in 0..segments {
                let phi = std::f64::consts::TAU * j as f64 / segments as f64;
                let v = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                vertices.push(v.map(T::lit) * radius);
            }
        }
        vertices.push(Vector3::new(T::zero(), T::zero(), -radius));
        let south = vertices.len() - 1;
        let ring = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
        let mut faces = Vec::new();
        for j in 0..segments {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
            faces.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
        }
        for i in 1..rings - 1 {
            for j in 0..segments {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, c, b]);
                faces.push([b, c, d]);
            }
        }
        Self { vertices, faces }
    }

    /// Axis-aligned box with the given half extents.
    pub fn cuboid(half: Vector3<T>) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let s = |bit: usize| if i >> bit & 1 == 1 { T::one() } else { -T::one() };
            vertices.push(Vector3::new(half.x * s(0), half.y * s(1), half.z * s(2)));
        }
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3], // -z
            [4, 5, 6],
            [5, 7, 6], // +z
            [0, 1, 4],
            [1, 5, 4], // -y
            [2, 6, 3],
            [3, 6, 7], // +y
            [0, 4, 2],
            [2, 4, 6], // -x
            [1, 3, 5],
            [3, 7, 5], // +x
        ];
        Self { vertices, faces }
    }

    /// Closed cylinder along z.
    pub fn cylinder(radius: T, half_height: T, segments: usize) -> Self {
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for j in 0..segments {
            let phi = std::f64::consts::TAU * j as f64 / segments as f64;
            let (x, y) = (T::lit(phi.cos()) * radius, T::lit(phi.sin()) * radius);
            vertices.push(Vector3::new(x, y, half_height));
            vertices.push(Vector3::new(x, y, -half_height));
        }
        let top = vertices.len();
        vertices.push(Vector3::new(T::zero(), T::zero(), half_height));
        vertices.push(Vector3::new(T::zero(), T::zero(), -half_height));
        let mut faces = Vec::new();
        for j in 0..segments {
            let k = (j + 1) % segments;
            let (t0, b0, t1, b1) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
            faces.push([t0, b0, t1]);
            faces.push([t1, b0, b1]);
            faces.push([top, t0, t1]);
            faces.push([top + 1, b1, b0]);
        }
        Self { vertices, faces }
    }
}

/// Anything points can be drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceModel<T: Real> {
    Mesh(TriangleMesh<T>),
    Cloud(Vec<Vector3<T>>),
}

/// Uniform point in a triangle from two unit-interval variates.
#[inline]
pub fn point_in_triangle<T: Real>(tri: &[Vector3<T>; 3], u: f64, v: f64) -> Vector3<T> {
    let su = u.sqrt();
    let (a, b) = (T::lit(1.0 - su), T::lit(su * (1.0 - v)));
    let c = T::lit(su * v);
    tri[0] * a + tri[1] * b + tri[2] * c
}

/// Draws `n` surface points. Meshes are sampled uniformly by area; point
/// clouds are subsampled without replacement, or with replacement when `n`
/// exceeds the cloud size.
pub fn sample_surface_points<T: Real>(model: &SurfaceModel<T>, n: usize, seed: u64) -> Result<Vec<Vector3<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        SurfaceModel::Mesh(mesh) => {
            if mesh.faces.is_empty() {
                return Err(Error::Empty("mesh has no faces".into()));
            }
            let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f).as_f64()).collect();
            let pick = WeightedIndex::new(&areas).map_err(|e| Error::Geometry(format!("degenerate mesh: {e}")))?;
            Ok((0..n)
                .map(|_| {
                    let f = pick.sample(&mut rng);
                    let (u, v): (f64, f64) = (rng.random(), rng.random());
                    point_in_triangle(&mesh.triangle(f), u, v)
                })
                .collect())
        }
        SurfaceModel::Cloud(points) => {
            if points.is_empty() {
                return Err(Error::Empty("point cloud is empty".into()));
            }
            if n <= points.len() {
                Ok(rand::seq::index::sample(&mut rng, points.len(), n).into_iter().map(|i| points[i]).collect())
            } else {
                Ok((0..n).map(|_| points[rng.random_range(0..points.len())]).collect())
            }
        }
    }
}

/// Largest pairwise distance.
pub fn diameter<T: Real>(points: &[Vector3<T>]) -> T {
    let mut d = T::zero();
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max((a - b).norm_squared());
        }
    }
    d.sqrt()
}

pub fn write_ply<T: Real, W: Write>(vertices: &[Vector3<T>], faces: &[[usize; 3]], mut w: W) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if !faces.is_empty() {
        writeln!(w, "element face {}", faces.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")?;
    for v in vertices {
        writeln!(w, "{} {} {}", v.x.as_f64(), v.y.as_f64(), v.z.as_f64())?;
    }
    for f in faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an ASCII PLY with `x y z` vertex properties (other properties are
/// ignored) and optional triangle faces.
pub fn read_ply<T: Real, R: BufRead>(r: R) -> Result<SurfaceModel<T>> {
    let bad = |m: &str| Error::Format(format!("PLY: {m}"));
    let mut lines = r.lines();
    let mut next = || -> Result<String> { lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(Error::from) };
    if next()?.trim() != "ply" {
        return Err(bad("missing magic"));
    }
    let (mut n_vert, mut n_face) = (0usize, 0usize);
    let mut vprops: Vec<String> = Vec::new();
    let mut current = String::new();
    loop {
        let line = next()?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii PLY is supported")),
            ["element", name, count] => {
                let c = count.parse().map_err(|_| bad("bad element count"))?;
                current = name.to_string();
                match *name {
                    "vertex" => n_vert = c,
                    "face" => n_face = c,
                    _ if c > 0 => return Err(bad("unsupported element")),
                    _ => {}
                }
            }
            ["property", .., name] if current == "vertex" => vprops.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let idx = |n: &str| vprops.iter().position(|p| p == n).ok_or_else(|| bad("vertex lacks x/y/z"));
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let mut vertices = Vec::with_capacity(n_vert);
    for _ in 0..n_vert {
        let line = next()?;
        let vals: Vec<f64> =
            line.split_whitespace().map(|s| s.parse::<f64>().map_err(|_| bad("bad vertex value"))).collect::<Result<_>>()?;
        if vals.len() < vprops.len() {
            return Err(bad("short vertex line"));
        }
        vertices.push(Vector3::new(T::lit(vals[ix]), T::lit(vals[iy]), T::lit(vals[iz])));
    }
    let mut faces = Vec::with_capacity(n_face);
    for _ in 0..n_face {
        let line = next()?;
        let vals: Vec<usize> =
            line.split_whitespace().map(|s| s.parse::<usize>().map_err(|_| bad("bad face index"))).collect::<Result<_>>()?;
        if vals.len() != 4 || vals[0] != 3 {
            return Err(bad("only triangle faces are supported"));
        }
        faces.push([vals[1], vals[2], vals[3]]);
    }
    if faces.is_empty() {
        Ok(SurfaceModel::Cloud(vertices))
    } else {
        Ok(SurfaceModel::Mesh(TriangleMesh::new(vertices, faces)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn primitive_areas() {
        let cube = TriangleMesh::<f64>::cuboid(Vector3::new(0.5, 0.5, 0.5));
        assert!((cube.area() - 6.0).abs() < 1e-12);
        let cyl = TriangleMesh::<f64>::cylinder(1.0, 1.0, 512);
        let expect = 2.0 * std::f64::consts::PI * 2.0 + 2.0 * std::f64::consts::PI;
        assert!((cyl.area() - expect).abs() / expect < 1e-3);
        let sph = TriangleMesh::<f64>::uv_sphere(1.0, 256, 128);
        assert!((sph.area() - 4.0 * std::f64::consts::PI).abs() / (4.0 * std::f64::consts::PI) < 1e-3);
    }

    #[test]
    fn outward_normals() {
        for mesh in [
            TriangleMesh::<f64>::cuboid(Vector3::new(0.1, 0.2, 0.3)),
            TriangleMesh::cylinder(0.1, 0.2, 16),
            TriangleMesh::uv_sphere(0.1, 16, 8),
        ] {
            for f in 0..mesh.faces.len() {
                let [a, b, c] = mesh.triangle(f);
                let n = (b - a).cross(&(c - a));
                assert!(n.dot(&((a + b + c) / 3.0)) > 0.0, "face {f} points inward");
            }
        }
    }

    #[test]
    fn triangle_samples_are_uniform() {
        // Subdivide the triangle into 4^3 congruent cells and run a chi-square test.
        let tri = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
        let mesh = TriangleMesh::new(tri.to_vec(), vec![[0, 1, 2]]).unwrap();
        let n = 100_000;
        let pts = sample_surface_points(&SurfaceModel::Mesh(mesh), n, 99).unwrap();
        let m = 8usize; // grid resolution; cells are the m^2 small triangles
                        // enumerate cells directly: lower triangle (i, j) valid when i + j < m,
                        // upper triangle (i, j) valid when i + j < m - 1
        let mut lower = vec![0usize; m * m];
        let mut upper = vec![0usize; m * m];
        for p in &pts {
            let (x, y) = (p.x * m as f64, p.y * m as f64);
            let (i, j) = ((x.floor() as usize).min(m - 1), (y.floor() as usize).min(m - 1));
            if (x - i as f64) + (y - j as f64) > 1.0 {
                upper[j * m + i] += 1;
            } else {
                lower[j * m + i] += 1;
            }
        }
        let mut observed = Vec::new();
        for j in 0..m {
            for i in 0..m {
                if i + j < m {
                    observed.push(lower[j * m + i]);
                }
                if i + j + 1 < m {
                    observed.push(upper[j * m + i]);
                }
            }
        }
        assert_eq!(observed.len(), m * m);
        assert_eq!(observed.iter().sum::<usize>(), n);
        let expect = n as f64 / observed.len() as f64;
        let chi2: f64 = observed.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
        let crit = ChiSquared::new((observed.len() - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} exceeds {crit}");
    }

    #[test]
    fn cube_faces_get_area_proportional_counts() {
        let mesh = TriangleMesh::<f64>::cuboid(Vector3::new(0.05, 0.1, 0.2));
        let n = 60_000;
        let pts = sample_surface_points(&SurfaceModel::Mesh(mesh.clone()), n, 5).unwrap();
        let total = mesh.area();
        let h = Vector3::new(0.05, 0.1, 0.2);
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let count = pts.iter().filter(|p| (p[axis] - sign * h[axis]).abs() < 1e-12).count() as f64;
                let (a, b) = match axis {
                    0 => (h.y, h.z),
                    1 => (h.x, h.z),
                    _ => (h.x, h.y),
                };
                let p = 4.0 * a * b / total;
                let sigma = (n as f64 * p * (1.0 - p)).sqrt();
                assert!((count - n as f64 * p).abs() <= 3.0 * sigma, "axis {axis} sign {sign}: {count}");
            }
        }
    }

    #[test]
    fn cloud_subsampling() {
        let cloud: Vec<_> = (0..50).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let model = SurfaceModel::Cloud(cloud.clone());
        let mut all = sample_surface_points(&model, 50, 1).unwrap();
        all.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
        assert_eq!(all, cloud);
        assert_eq!(sample_surface_points(&model, 120, 1).unwrap().len(), 120);
        assert!(sample_surface_points(&SurfaceModel::<f64>::Cloud(vec![]), 3, 1).is_err());
        assert_eq!(sample_surface_points(&model, 10, 4).unwrap(), sample_surface_points(&model, 10, 4).unwrap());
    }

    #[test]
    fn ply_round_trip() {
        let mesh = TriangleMesh::<f64>::cylinder(0.03, 0.06, 12);
        let mut buf = Vec::new();
        write_ply(&mesh.vertices, &mesh.faces, &mut buf).unwrap();
        match read_ply::<f64, _>(buf.as_slice()).unwrap() {
            SurfaceModel::Mesh(m) => assert_eq!(m, mesh),
            _ => panic!("expected mesh"),
        }
        let pts = vec![Vector3::new(0.1, 0.2, 0.3)];
        let mut buf = Vec::new();
        write_ply(&pts, &[], &mut buf).unwrap();
        assert_eq!(read_ply::<f64, _>(buf.as_slice()).unwrap(), SurfaceModel::Cloud(pts));
    }

    #[test]
    fn diameter_of_box() {
        let mesh = TriangleMesh::<f64>::cuboid(Vector3::new(1.0, 2.0, 2.0));
        assert!((diameter(&mesh.vertices) - 6.0).abs() < 1e-12);
    }
}
