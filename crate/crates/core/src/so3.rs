//! Discrete SO(3) hypothesis sets and softmax rotation distributions.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::rot_z;
use crate::scalar::Real;

/// Softmax temperature used for the rotation consistency likelihood.
pub const TRAINING_TEMPERATURE: f64 = 0.1;

/// Temperature for plain distribution evaluation.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Geodesic angle between two rotations, in radians.
pub fn geodesic_distance<T: Real>(r1: &Matrix3<T>, r2: &Matrix3<T>) -> T {
    let c = ((r1.transpose() * r2).trace() - T::one()) * T::lit(0.5);
    c.clamp(-T::one(), T::one()).acos()
}

/// Deterministic feature map standing in for a learned rotation encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap<T: Real> {
    /// Flattened rotation matrix scaled to unit norm (`C = 9`).
    Flat,
    /// Flattened rotation lifted by a fixed `C x 9` projection, then normalized.
    Projected { dim: usize, matrix: Vec<T> },
}

impl<T: Real> FeatureMap<T> {
    /// Random projection with entries uniform in `[-1, 1]`, reproducible from `seed`.
    pub fn random_projection(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..dim * 9).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
        FeatureMap::Projected { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Flat => 9,
            FeatureMap::Projected { dim, .. } => *dim,
        }
    }

    pub fn embed(&self, r: &Matrix3<T>) -> Vec<T> {
        // row-major flattening
        let flat: Vec<T> = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect();
        let mut v = match self {
            FeatureMap::Flat => flat,
            FeatureMap::Projected { dim, matrix } => {
                (0..*dim).map(|c| (0..9).fold(T::zero(), |acc, k| acc + matrix[c * 9 + k] * flat[k])).collect()
            }
        };
        let norm = v.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
        if norm > T::zero() {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Finite set of rotation hypotheses, optionally with unit embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationCodebook<T: Real> {
    rotations: Vec<Matrix3<T>>,
    embedding_dim: usize,
    embeddings: Option<Vec<T>>,
}

impl<T: Real> RotationCodebook<T> {
    pub fn from_rotations(rotations: Vec<Matrix3<T>>) -> Result<Self> {
        if rotations.is_empty() {
            return Err(Error::Empty("codebook needs at least one rotation".into()));
        }
        Ok(Self { rotations, embedding_dim: 0, embeddings: None })
    }

    /// Attaches embeddings (row-major `N_r x dim`). Rows must have unit norm.
    pub fn with_embeddings(mut self, dim: usize, embeddings: Vec<T>) -> Result<Self> {
        if dim == 0 || embeddings.len() != dim * self.rotations.len() {
            return Err(Error::Config(format!("expected {} x {dim} embeddings, got {} values", self.rotations.len(), embeddings.len())));
        }
        for row in embeddings.chunks(dim) {
            let n = row.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
            if (n - T::one()).abs() > T::lit(1e-6) {
                return Err(Error::Config(format!("embedding row has norm {n:?}")));
            }
        }
        self.embedding_dim = dim;
        self.embeddings = Some(embeddings);
        Ok(self)
    }

    pub fn embed_with(self, map: &FeatureMap<T>) -> Self {
        let dim = map.dim();
        let embeddings = self.rotations.iter().flat_map(|r| map.embed(r)).collect();
        Self { embedding_dim: dim, embeddings: Some(embeddings), ..self }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn rotations(&self) -> &[Matrix3<T>] {
        &self.rotations
    }

    pub fn rotation(&self, i: usize) -> &Matrix3<T> {
        &self.rotations[i]
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn has_embeddings(&self) -> bool {
        self.embeddings.is_some()
    }

    pub fn embedding(&self, i: usize) -> Option<&[T]> {
        let d = self.embedding_dim;
        self.embeddings.as_ref().map(|e| &e[i * d..(i + 1) * d])
    }

    fn embeddings_or_err(&self) -> Result<&[T]> {
        self.embeddings.as_deref().ok_or_else(|| Error::Config("codebook has no embeddings".into()))
    }

    /// Index of the rotation closest to `r` in geodesic distance; lowest index on ties.
    pub fn nearest(&self, r: &Matrix3<T>) -> usize {
        // geodesic angle is decreasing in trace(R_i^T R)
        let mut best = 0;
        let mut best_tr = T::lit(f64::NEG_INFINITY);
        for (i, ri) in self.rotations.iter().enumerate() {
            let tr = ri.component_mul(r).sum();
            if tr > best_tr {
                best_tr = tr;
                best = i;
            }
        }
        best
    }

    /// Indices of the `k` entries nearest to `r`, closest first.
    pub fn k_nearest(&self, r: &Matrix3<T>, k: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, T)> = self.rotations.iter().enumerate().map(|(i, ri)| (i, ri.component_mul(r).sum())).collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        scored.into_iter().take(k).map(|(i, _)| i).collect()
    }

    /// Sub-codebook made of the given entries, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.embedding_dim;
        Self {
            rotations: indices.iter().map(|&i| self.rotations[i]).collect(),
            embedding_dim: d,
            embeddings: self.embeddings.as_ref().map(|e| indices.iter().flat_map(|&i| e[i * d..(i + 1) * d].iter().copied()).collect()),
        }
    }

    /// Appends a hypothesis, embedding it with `map` when the codebook carries embeddings.
    pub fn push(&mut self, r: Matrix3<T>, map: &FeatureMap<T>) -> Result<()> {
        if let Some(e) = self.embeddings.as_mut() {
            if map.dim() != self.embedding_dim {
                return Err(Error::Config("feature map dimension mismatch".into()));
            }
            e.extend(map.embed(&r));
        }
        self.rotations.push(r);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> RotationCodebook<U> {
        let c = |x: &T| U::lit(x.as_f64());
        RotationCodebook {
            rotations: self.rotations.iter().map(|r| r.map(|x| c(&x))).collect(),
            embedding_dim: self.embedding_dim,
            embeddings: self.embeddings.as_ref().map(|e| e.iter().map(c).collect()),
        }
    }
}

/// Quasi-uniform viewing directions on the unit sphere (Fibonacci lattice,
/// both poles included). A single viewpoint is the +z axis.
pub fn fibonacci_sphere<T: Real>(n: usize) -> Vec<Vector3<T>> {
    if n == 1 {
        return vec![Vector3::z()];
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * i as f64 / (n - 1) as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(T::lit(rho * phi.cos()), T::lit(rho * phi.sin()), T::lit(z))
        })
        .collect()
}

/// Rotation whose third row is `view`, i.e. it turns `view` onto the optical axis.
pub fn look_at<T: Real>(view: &Vector3<T>) -> Matrix3<T> {
    let z = view.normalize();
    let up = if z.y.abs() > T::lit(0.999) { Vector3::x() } else { Vector3::y() };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// `n_viewpoints x n_inplane` rotations: entry `i * n_inplane + j` is the
/// in-plane rotation `2 pi j / n_inplane` applied after viewpoint `i`.
pub fn build_codebook<T: Real>(n_viewpoints: usize, n_inplane: usize) -> Result<RotationCodebook<T>> {
    if n_viewpoints == 0 || n_inplane == 0 {
        return Err(Error::Config("viewpoint and in-plane counts must be at least 1".into()));
    }
    let views = fibonacci_sphere::<T>(n_viewpoints);
    let inplane: Vec<Matrix3<T>> = (0..n_inplane).map(|j| rot_z(T::lit(std::f64::consts::TAU * j as f64 / n_inplane as f64))).collect();
    let mut rotations = Vec::with_capacity(n_viewpoints * n_inplane);
    for v in &views {
        let base = look_at(v);
        rotations.extend(inplane.iter().map(|rz| rz * base));
    }
    RotationCodebook::from_rotations(rotations)
}

/// Normalized probabilities over the codebook entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationDistribution<T: Real> {
    pub probs: Vec<T>,
}

/// `I_emb . R_emb^i / tau` for every entry.
pub fn logits<T: Real>(query: &[T], codebook: &RotationCodebook<T>, temperature: T) -> Result<Vec<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let emb = codebook.embeddings_or_err()?;
    let d = codebook.embedding_dim();
    if query.len() != d {
        return Err(Error::Config(format!("query has {} dims, codebook {d}", query.len())));
    }
    Ok(emb.chunks(d).map(|row| row.iter().zip(query).fold(T::zero(), |a, (e, q)| a + *e * *q) / temperature).collect())
}

fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::lit(f64::NEG_INFINITY), T::max);
    m + xs.iter().fold(T::zero(), |a, x| a + (*x - m).exp()).ln()
}

pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let m = xs.iter().copied().fold(T::lit(f64::NEG_INFINITY), T::max);
    let e: Vec<T> = xs.iter().map(|x| (*x - m).exp()).collect();
    let s = e.iter().fold(T::zero(), |a, x| a + *x);
    e.into_iter().map(|x| x / s).collect()
}

pub fn rotation_distribution<T: Real>(query: &[T], codebook: &RotationCodebook<T>, temperature: T) -> Result<RotationDistribution<T>> {
    Ok(RotationDistribution { probs: softmax(&logits(query, codebook, temperature)?) })
}

/// First index attaining the maximum.
pub fn argmax<T: Real>(xs: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if !(x > b) => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn decode_argmax<T: Real>(dist: &RotationDistribution<T>, codebook: &RotationCodebook<T>) -> Result<Matrix3<T>> {
    if dist.probs.len() != codebook.len() {
        return Err(Error::Config(format!("distribution has {} entries, codebook {}", dist.probs.len(), codebook.len())));
    }
    let i = argmax(&dist.probs).ok_or_else(|| Error::Empty("empty rotation distribution".into()))?;
    Ok(*codebook.rotation(i))
}

/// Negative log-likelihood of `target` after snapping it to its nearest entry.
pub fn rotation_nll<T: Real>(query: &[T], target: &Matrix3<T>, codebook: &RotationCodebook<T>, temperature: T) -> Result<T> {
    let k = codebook.nearest(target);
    rotation_nll_with_grad(query, k, codebook, temperature).map(|(v, _)| v)
}

/// NLL of entry `target_index` together with its gradient with respect to
/// the query: `sum_i (p_i - [i = k]) e_i / tau`.
pub fn rotation_nll_with_grad<T: Real>(
    query: &[T],
    target_index: usize,
    codebook: &RotationCodebook<T>,
    temperature: T,
) -> Result<(T, Vec<T>)> {
    let l = logits(query, codebook, temperature)?;
    if target_index >= l.len() {
        return Err(Error::Config("target index out of range".into()));
    }
    let nll = log_sum_exp(&l) - l[target_index];
    let p = softmax(&l);
    let d = codebook.embedding_dim();
    let emb = codebook.embeddings_or_err()?;
    let mut grad = vec![T::zero(); d];
    for (i, (row, pi)) in emb.chunks(d).zip(&p).enumerate() {
        let w = if i == target_index { *pi - T::one() } else { *pi } / temperature;
        for (g, e) in grad.iter_mut().zip(row) {
            *g += w * *e;
        }
    }
    Ok((nll.max(T::zero()), grad))
}

const MAGIC: &[u8; 8] = b"SO3CBOOK";
const FORMAT_VERSION: u32 = 1;

/// Writes the binary codebook format: magic, version (u32), `N_r` (u64),
/// `C` (u64, zero without embeddings), rotations as row-major f64, then
/// embeddings as row-major f64. All integers and floats little-endian.
pub fn write_codebook<T: Real, W: Write>(codebook: &RotationCodebook<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(codebook.len() as u64).to_le_bytes())?;
    let c = if codebook.has_embeddings() { codebook.embedding_dim() } else { 0 };
    w.write_all(&(c as u64).to_le_bytes())?;
    for r in codebook.rotations() {
        for i in 0..3 {
            for j in 0..3 {
                w.write_all(&r[(i, j)].as_f64().to_le_bytes())?;
            }
        }
    }
    if let Some(e) = &codebook.embeddings {
        for x in e {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_codebook<T: Real, R: Read>(mut r: R) -> Result<RotationCodebook<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a codebook file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported codebook version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let c = u64::from_le_bytes(b8) as usize;
    let mut read_f = |r: &mut R| -> Result<T> {
        r.read_exact(&mut b8)?;
        Ok(T::lit(f64::from_le_bytes(b8)))
    };
    let mut rotations = Vec::with_capacity(n);
    for _ in 0..n {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = read_f(&mut r)?;
            }
        }
        rotations.push(m);
    }
    let cb = RotationCodebook::from_rotations(rotations)?;
    if c == 0 {
        return Ok(cb);
    }
    let emb = (0..n * c).map(|_| read_f(&mut r)).collect::<Result<Vec<T>>>()?;
    cb.with_embeddings(c, emb)
}
