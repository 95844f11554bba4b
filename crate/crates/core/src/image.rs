//! Dense single-channel images and their on-disk PGM encodings.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Format(format!("grid {width}x{height} needs {} values, got {}", width * height, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel containing continuous coordinate `p`, if inside the grid.
    pub fn pixel_at<S: Real>(&self, p: &Vector2<S>) -> Option<(usize, usize)> {
        let (x, y) = (p.x.floor(), p.y.floor());
        if x < S::zero() || y < S::zero() {
            return None;
        }
        let (x, y) = (x.as_f64() as usize, y.as_f64() as usize);
        (x < self.width && y < self.height).then_some((x, y))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl<T: Real> Grid<T> {
    /// True when continuous coordinate `p` lies inside `[0, w) x [0, h)`.
    pub fn contains(&self, p: &Vector2<T>) -> bool {
        p.x >= T::zero() && p.y >= T::zero() && p.x < T::from_usize_lossy(self.width) && p.y < T::from_usize_lossy(self.height)
    }

    /// Bilinear interpolation between pixel centers with zero padding.
    pub fn bilinear(&self, p: &Vector2<T>) -> T {
        let half = T::lit(0.5);
        let (fx, fy) = (p.x - half, p.y - half);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (ax, ay) = (fx - x0, fy - y0);
        let (x0, y0) = (x0.as_f64() as i64, y0.as_f64() as i64);
        let at = |x: i64, y: i64| -> T {
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                T::zero()
            } else {
                self.get(x as usize, y as usize)
            }
        };
        let one = T::one();
        (one - ay) * ((one - ax) * at(x0, y0) + ax * at(x0 + 1, y0)) + ay * ((one - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1))
    }
}

/// Depth in meters; zero marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage<T: Real>(pub Grid<T>);

/// Per-pixel object confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage<T: Real>(pub Grid<T>);

impl<T: Real> DepthImage<T> {
    pub fn new(grid: Grid<T>) -> Result<Self> {
        if grid.data().iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Format("depth values must be finite and non-negative".into()));
        }
        Ok(Self(grid))
    }

    pub fn max_depth(&self) -> T {
        self.0.data().iter().copied().fold(T::zero(), T::max)
    }

    /// Depths rounded to whole millimeters, the resolution of stored depth files.
    pub fn quantized(&self) -> Self {
        Self(self.0.map(|d| (d * T::lit(1000.0)).round() / T::lit(1000.0)))
    }
}

impl<T: Real> MaskImage<T> {
    pub fn new(grid: Grid<T>) -> Result<Self> {
        if grid.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::Format("mask values must lie in [0, 1]".into()));
        }
        Ok(Self(grid))
    }

    pub fn from_binary(grid: &Grid<bool>) -> Self {
        Self(grid.map(|b| if b { T::one() } else { T::zero() }))
    }

    /// Mask eroded by a square structuring element of radius `radius` px.
    pub fn eroded(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let g = &self.0;
        let (w, h) = (g.width(), g.height());
        let mut out = g.clone();
        for y in 0..h {
            for x in 0..w {
                let mut m = g.get(x, y);
                for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                    for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                        m = m.min(g.get(xx, yy));
                    }
                }
                // pixels beyond the border count as background
                if x < radius || y < radius || x + radius >= w || y + radius >= h {
                    m = T::zero();
                }
                out.set(x, y, m);
            }
        }
        Self(out)
    }
}

/// Resamples `src` into a `w x h` grid: output pixel center `q` reads source
/// location `dst_to_src * q`. `sample` decides the interpolation.
pub fn resample<T: Real>(
    src: &Grid<T>,
    w: usize,
    h: usize,
    dst_to_src: &Matrix3<T>,
    sample: impl Fn(&Grid<T>, &Vector2<T>) -> T,
) -> Grid<T> {
    let half = T::lit(0.5);
    let mut out = Grid::filled(w, h, T::zero());
    for y in 0..h {
        for x in 0..w {
            let q = Vector2::new(T::from_usize_lossy(x) + half, T::from_usize_lossy(y) + half);
            let p = (dst_to_src * q.push(T::one())).xy();
            out.set(x, y, sample(src, &p));
        }
    }
    out
}

/// Nearest-pixel lookup with zero outside the grid.
pub fn nearest<T: Real>(g: &Grid<T>, p: &Vector2<T>) -> T {
    g.pixel_at(p).map(|(x, y)| g.get(x, y)).unwrap_or_else(T::zero)
}

fn read_pgm_header<R: BufRead>(r: &mut R) -> Result<(usize, usize, u32)> {
    let mut tokens = Vec::with_capacity(4);
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("truncated PGM header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("expected P5 PGM, found {}", tokens[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s}")));
    Ok((parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])? as u32))
}

/// Writes a 16-bit P5 PGM. Samples are stored little-endian.
pub fn write_pgm16<W: Write>(g: &Grid<u16>, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n65535\n", g.width(), g.height())?;
    let mut buf = Vec::with_capacity(g.data().len() * 2);
    for v in g.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_pgm16<R: BufRead>(mut r: R) -> Result<Grid<u16>> {
    let (w, h, maxval) = read_pgm_header(&mut r)?;
    if maxval != 65535 {
        return Err(Error::Format(format!("expected maxval 65535, found {maxval}")));
    }
    let mut raw = vec![0u8; w * h * 2];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    Grid::from_vec(w, h, data)
}

pub fn write_pgm8<W: Write>(g: &Grid<u8>, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", g.width(), g.height())?;
    w.write_all(g.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_pgm8<R: BufRead>(mut r: R) -> Result<Grid<u8>> {
    let (w, h, maxval) = read_pgm_header(&mut r)?;
    if maxval != 255 {
        return Err(Error::Format(format!("expected maxval 255, found {maxval}")));
    }
    let mut data = vec![0u8; w * h];
    r.read_exact(&mut data)?;
    Grid::from_vec(w, h, data)
}

/// Millimeter encoding used by depth files. Depths beyond 65.535 m saturate.
pub fn depth_to_mm<T: Real>(d: &DepthImage<T>) -> Grid<u16> {
    d.0.map(|v| (v.as_f64() * 1000.0).round().clamp(0.0, 65535.0) as u16)
}

pub fn depth_from_mm<T: Real>(g: &Grid<u16>) -> DepthImage<T> {
    DepthImage(g.map(|v| T::lit(v as f64 / 1000.0)))
}

pub fn mask_to_u8<T: Real>(m: &MaskImage<T>) -> Grid<u8> {
    m.0.map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn mask_from_u8<T: Real>(g: &Grid<u8>) -> MaskImage<T> {
    MaskImage(g.map(|v| T::lit(v as f64 / 255.0)))
}
