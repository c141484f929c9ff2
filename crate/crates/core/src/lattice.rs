//! Regular lattices over coordinate balls `Ω_r ⊂ R^N` and the scalar and
//! vector fields sampled on them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Cube `[-m, m]^dim` of integer offsets scaled by `spacing`; an entry is
/// active when `|h z| <= radius`. Entries are stored row-major, last axis
/// fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim: usize,
    pub radius: f64,
    pub spacing: f64,
    pub half_width: usize,
}

const RADIUS_SLACK: f64 = 1e-12;

impl Lattice {
    pub fn new(dim: usize, radius: f64, spacing: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::ConstraintViolation(format!(
                "lattice dimension {dim} not supported"
            )));
        }
        if !(spacing > 0.0 && radius > 0.0 && spacing.is_finite() && radius.is_finite()) {
            return Err(Error::ConstraintViolation(
                "lattice radius and spacing must be positive".into(),
            ));
        }
        let half_width = (radius / spacing * (1.0 + RADIUS_SLACK)).floor() as usize;
        Ok(Lattice {
            dim,
            radius,
            spacing,
            half_width,
        })
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.dim - 1 - axis) as u32)
    }

    /// Integer offset of `idx` along `axis`.
    pub fn offset(&self, idx: usize, axis: usize) -> i64 {
        let side = self.side();
        ((idx / self.stride(axis)) % side) as i64 - self.half_width as i64
    }

    pub fn offsets(&self, idx: usize) -> [i64; 3] {
        let mut z = [0i64; 3];
        for (a, za) in z.iter_mut().enumerate().take(self.dim) {
            *za = self.offset(idx, a);
        }
        z
    }

    pub fn index_of(&self, z: &[i64]) -> Option<usize> {
        let m = self.half_width as i64;
        let mut idx = 0usize;
        for &za in z.iter().take(self.dim) {
            if za < -m || za > m {
                return None;
            }
            idx = idx * self.side() + (za + m) as usize;
        }
        Some(idx)
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let z = self.offsets(idx);
        let mut c = [0.0; 3];
        for a in 0..self.dim {
            c[a] = z[a] as f64 * self.spacing;
        }
        c
    }

    pub fn point<const N: usize>(&self, idx: usize) -> Point<N> {
        debug_assert_eq!(N, self.dim);
        let c = self.coords(idx);
        Point::<N>::from_fn(|a, _| c[a])
    }

    pub fn is_active(&self, idx: usize) -> bool {
        let z = self.offsets(idx);
        let r2: i64 = z.iter().map(|v| v * v).sum();
        let lim = self.radius / self.spacing * (1.0 + RADIUS_SLACK);
        (r2 as f64) <= lim * lim
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_active(i)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Same cube, spacing and radius.
    pub fn matches(&self, other: &Lattice) -> bool {
        self.dim == other.dim
            && self.half_width == other.half_width
            && self.spacing == other.spacing
            && self.radius == other.radius
    }
}

/// Scalar samples on a [`Lattice`]; masked entries hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(lattice: Lattice) -> Self {
        Self::from_fn(lattice, |_| 0.0)
    }

    pub fn from_fn(lattice: Lattice, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..lattice.len())
            .map(|i| {
                if lattice.is_active(i) {
                    f(&lattice.coords(i)[..lattice.dim])
                } else {
                    f64::NAN
                }
            })
            .collect();
        GridFunction { lattice, values }
    }

    /// Builds from values listed in the order of `lattice.active_indices()`.
    pub fn from_active(lattice: Lattice, active: &[usize], vals: &[f64]) -> Self {
        let mut values = vec![f64::NAN; lattice.len()];
        for (&i, &v) in active.iter().zip(vals) {
            values[i] = v;
        }
        GridFunction { lattice, values }
    }

    pub fn is_active(&self, idx: usize) -> bool {
        !self.values[idx].is_nan()
    }

    pub fn active_values(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
    }

    pub fn is_zero(&self) -> bool {
        self.active_values().all(|(_, v)| v == 0.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.active_values().map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .map(|&v| if v.is_nan() { v } else { f(v) })
                .collect(),
        }
    }

    /// `a·self + b·other` on a common lattice.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<Self> {
        if !self.lattice.matches(&other.lattice) {
            return Err(Error::LatticeMismatch);
        }
        Ok(GridFunction {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    /// Sup of `|self − other|` over entries active in both.
    pub fn max_abs_diff(&self, other: &GridFunction) -> Result<f64> {
        if !self.lattice.matches(&other.lattice) {
            return Err(Error::LatticeMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(x, y)| !x.is_nan() && !y.is_nan())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    /// Multilinear interpolation. Masked corners are dropped and the
    /// remaining weights renormalized; `None` when no corner is available.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let lat = &self.lattice;
        let m = lat.half_width as i64;
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..lat.dim {
            let t = x[a] / lat.spacing;
            let f = t.floor();
            base[a] = f as i64;
            frac[a] = t - f;
            if base[a] < -m - 1 || base[a] > m {
                return None;
            }
        }
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for corner in 0..(1usize << lat.dim) {
            let mut z = [0i64; 3];
            let mut w = 1.0;
            for a in 0..lat.dim {
                let bit = (corner >> a) & 1;
                z[a] = base[a] + bit as i64;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            if let Some(idx) = lat.index_of(&z[..lat.dim]) {
                let v = self.values[idx];
                if !v.is_nan() {
                    acc += w * v;
                    wsum += w;
                }
            }
        }
        if wsum < 1e-12 {
            None
        } else {
            Some(acc / wsum)
        }
    }

    /// Tensor-product Catmull-Rom interpolation; falls back to
    /// [`interpolate`](Self::interpolate) when the 4^d stencil is incomplete.
    pub fn interpolate_cubic(&self, x: &[f64]) -> Option<f64> {
        let lat = &self.lattice;
        let d = lat.dim;
        let mut base = [0i64; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..d {
            let t = x[a] / lat.spacing;
            let f = t.floor();
            base[a] = f as i64;
            let s = t - f;
            let (s2, s3) = (s * s, s * s * s);
            w[a] = [
                0.5 * (-s3 + 2.0 * s2 - s),
                0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
                0.5 * (-3.0 * s3 + 4.0 * s2 + s),
                0.5 * (s3 - s2),
            ];
        }
        let mut acc = 0.0;
        for tap in 0..4usize.pow(d as u32) {
            let mut z = [0i64; 3];
            let mut wt = 1.0;
            let mut rem = tap;
            for a in 0..d {
                let o = rem % 4;
                rem /= 4;
                z[a] = base[a] + o as i64 - 1;
                wt *= w[a][o];
            }
            let v = lat
                .index_of(&z[..d])
                .filter(|&idx| lat.is_active(idx))
                .map(|idx| self.values[idx])
                .filter(|v| !v.is_nan());
            match v {
                Some(v) => acc += wt * v,
                None => return self.interpolate(x),
            }
        }
        Some(acc)
    }

    /// Partial derivative along `axis` at `idx`: fourth-order central where
    /// the stencil is active, then second-order central, then one-sided.
    pub fn partial(&self, idx: usize, axis: usize) -> f64 {
        let lat = &self.lattice;
        let h = lat.spacing;
        let z = lat.offsets(idx);
        let at = |d: i64| -> Option<f64> {
            let mut zz = z;
            zz[axis] += d;
            lat.index_of(&zz[..lat.dim])
                .map(|i| self.values[i])
                .filter(|v| !v.is_nan())
        };
        let f0 = self.values[idx];
        match (at(-2), at(-1), at(1), at(2)) {
            (Some(m2), Some(m1), Some(p1), Some(p2)) => {
                (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h)
            }
            (_, Some(m1), Some(p1), _) => (p1 - m1) / (2.0 * h),
            (_, None, Some(p1), _) => (p1 - f0) / h,
            (_, Some(m1), None, _) => (f0 - m1) / h,
            _ => 0.0,
        }
    }

    /// Gradient at every entry, `dim` components per entry (NaN when masked).
    pub fn gradient_field(&self) -> Vec<f64> {
        let d = self.lattice.dim;
        let mut out = vec![f64::NAN; self.values.len() * d];
        for idx in 0..self.values.len() {
            if self.values[idx].is_nan() {
                continue;
            }
            for a in 0..d {
                out[idx * d + a] = self.partial(idx, a);
            }
        }
        out
    }

    /// Local averaging at scale `2h` with second moments cancelled: a
    /// combination `α·A₁ + β·A₂` of disc averages over radii one and two
    /// cells, chosen so quadratics pass through unchanged.
    pub fn smoothed(&self) -> GridFunction {
        let lat = &self.lattice;
        let d = lat.dim;
        let (o1, o2) = (disc_offsets(d, 1), disc_offsets(d, 2));
        let moment = |o: &[[i64; 3]]| {
            o.iter()
                .map(|z| z.iter().map(|v| (v * v) as f64).sum::<f64>())
                .sum::<f64>()
                / o.len() as f64
        };
        let (m1, m2) = (moment(&o1), moment(&o2));
        let alpha = m2 / (m2 - m1);
        let beta = -m1 / (m2 - m1);
        let avg = |idx: usize, offs: &[[i64; 3]]| {
            let z = lat.offsets(idx);
            let mut s = 0.0;
            let mut n = 0usize;
            for o in offs {
                let mut zz = z;
                for a in 0..d {
                    zz[a] += o[a];
                }
                if let Some(i) = lat.index_of(&zz[..d]) {
                    let v = self.values[i];
                    if !v.is_nan() {
                        s += v;
                        n += 1;
                    }
                }
            }
            s / n as f64
        };
        let values = (0..self.values.len())
            .map(|idx| {
                if self.values[idx].is_nan() {
                    f64::NAN
                } else {
                    alpha * avg(idx, &o1) + beta * avg(idx, &o2)
                }
            })
            .collect();
        GridFunction {
            lattice: *lat,
            values,
        }
    }

    /// Binary layout: `dim` (u64), `radius`, `spacing` (f64), then the
    /// row-major values, all little-endian; masked entries are NaN.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        write_header(&mut out, &self.lattice);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let lattice = read_header(&mut r)?;
        let values = read_f64s(&mut r, lattice.len())?;
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() == lattice.is_active(i) {
                return Err(Error::Parse(format!("mask mismatch at entry {i}")));
            }
        }
        Ok(GridFunction { lattice, values })
    }

    /// One line per active entry: coordinates then value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let axes = ["x", "y", "z"];
        writeln!(w, "{},value", axes[..self.lattice.dim].join(","))?;
        for (idx, v) in self.active_values() {
            let c = self.lattice.coords(idx);
            for x in &c[..self.lattice.dim] {
                write!(w, "{x:.16e},")?;
            }
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

/// `R^N`-valued samples on a lattice with a definedness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub lattice: Lattice,
    /// `dim` components per entry, row-major.
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
}

impl GridMap {
    pub fn undefined(lattice: Lattice) -> Self {
        GridMap {
            lattice,
            values: vec![f64::NAN; lattice.len() * lattice.dim],
            defined: vec![false; lattice.len()],
        }
    }

    pub fn get(&self, idx: usize) -> Option<&[f64]> {
        let d = self.lattice.dim;
        self.defined[idx].then(|| &self.values[idx * d..(idx + 1) * d])
    }

    pub fn set(&mut self, idx: usize, v: &[f64]) {
        let d = self.lattice.dim;
        self.values[idx * d..(idx + 1) * d].copy_from_slice(&v[..d]);
        self.defined[idx] = true;
    }

    /// All active entries are defined.
    pub fn fully_defined(&self) -> bool {
        (0..self.lattice.len()).all(|i| !self.lattice.is_active(i) || self.defined[i])
    }

    pub fn defined_count(&self) -> usize {
        self.defined.iter().filter(|&&d| d).count()
    }

    /// Component `c` as a scalar grid (NaN where undefined).
    pub fn component(&self, c: usize) -> GridFunction {
        let d = self.lattice.dim;
        GridFunction {
            lattice: self.lattice,
            values: (0..self.lattice.len())
                .map(|i| {
                    if self.defined[i] {
                        self.values[i * d + c]
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        }
    }

    /// Layout as [`GridFunction::to_bytes`] with `dim` values per entry.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        write_header(&mut out, &self.lattice);
        for (i, v) in self.values.iter().enumerate() {
            let v = if self.defined[i / self.lattice.dim] {
                *v
            } else {
                f64::NAN
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let lattice = read_header(&mut r)?;
        let values = read_f64s(&mut r, lattice.len() * lattice.dim)?;
        let defined = (0..lattice.len())
            .map(|i| !values[i * lattice.dim].is_nan())
            .collect();
        Ok(GridMap {
            lattice,
            values,
            defined,
        })
    }

    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

fn disc_offsets(dim: usize, r: i64) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    let range = -r..=r;
    for a in range.clone() {
        for b in if dim > 1 { range.clone() } else { 0..=0 } {
            for c in if dim > 2 { range.clone() } else { 0..=0 } {
                if a * a + b * b + c * c <= r * r {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

fn write_header(out: &mut Vec<u8>, lat: &Lattice) {
    out.extend_from_slice(&(lat.dim as u64).to_le_bytes());
    out.extend_from_slice(&lat.radius.to_le_bytes());
    out.extend_from_slice(&lat.spacing.to_le_bytes());
}

fn read_header(r: &mut &[u8]) -> Result<Lattice> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let dim = u64::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let radius = f64::from_le_bytes(b);
    r.read_exact(&mut b)?;
    let spacing = f64::from_le_bytes(b);
    Lattice::new(dim, radius, spacing)
}

fn read_f64s(r: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if r.len() != 8 * n {
        return Err(Error::Parse(format!(
            "expected {} payload bytes, found {}",
            8 * n,
            r.len()
        )));
    }
    Ok(r
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat2() -> Lattice {
        Lattice::new(2, 1.0, 0.1).unwrap()
    }

    #[test]
    fn lattice_counts_and_mask() {
        let lat = lat2();
        assert_eq!(lat.half_width, 10);
        assert_eq!(lat.len(), 21 * 21);
        let active = lat.active_indices();
        // Lattice points of Z² in the disc of radius 10.
        let brute = (-10i64..=10)
            .flat_map(|a| (-10i64..=10).map(move |b| a * a + b * b))
            .filter(|&r2| r2 <= 100)
            .count();
        assert_eq!(active.len(), brute);
        let c = lat.index_of(&[0, 0]).unwrap();
        assert_eq!(lat.coords(c)[..2], [0.0, 0.0]);
        assert_eq!(lat.offsets(lat.index_of(&[3, -7]).unwrap())[..2], [3, -7]);
    }

    #[test]
    fn row_major_last_axis_fastest() {
        let lat = lat2();
        let i = lat.index_of(&[0, 0]).unwrap();
        assert_eq!(lat.index_of(&[0, 1]).unwrap(), i + 1);
        assert_eq!(lat.index_of(&[1, 0]).unwrap(), i + 21);
    }

    #[test]
    fn interpolation_is_exact_for_affine_functions() {
        let g = GridFunction::from_fn(lat2(), |x| 2.0 * x[0] - 3.0 * x[1] + 0.5);
        for &(x, y) in &[(0.013, -0.27), (0.5, 0.5), (-0.31, 0.044)] {
            let v = g.interpolate(&[x, y]).unwrap();
            assert!((v - (2.0 * x - 3.0 * y + 0.5)).abs() < 1e-12);
        }
        assert!(g.interpolate(&[5.0, 0.0]).is_none());
    }

    #[test]
    fn cubic_interpolation_reproduces_quadratics() {
        let q = |x: &[f64]| 0.3 + x[0] - 2.0 * x[1] + x[0] * x[1] - 0.7 * x[1] * x[1];
        let g = GridFunction::from_fn(lat2(), q);
        for p in [[0.013, -0.271], [0.35, 0.42], [-0.55, 0.05]] {
            assert!((g.interpolate_cubic(&p).unwrap() - q(&p)).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_interpolation_beats_linear_on_smooth_data() {
        let f = |x: &[f64]| (3.0 * x[0]).sin() * (2.0 * x[1]).cos();
        let g = GridFunction::from_fn(lat2(), f);
        let p = [0.15, -0.25];
        let lin = (g.interpolate(&p).unwrap() - f(&p)).abs();
        let cub = (g.interpolate_cubic(&p).unwrap() - f(&p)).abs();
        assert!(cub < 0.1 * lin, "cubic {cub} vs linear {lin}");
    }

    #[test]
    fn fourth_order_partials_on_cubics() {
        let g = GridFunction::from_fn(lat2(), |x| x[0].powi(3) - x[0] * x[1]);
        let idx = g.lattice.index_of(&[2, 1]).unwrap();
        let (x, y) = (0.2, 0.1);
        assert!((g.partial(idx, 0) - (3.0 * x * x - y)).abs() < 1e-12);
        assert!((g.partial(idx, 1) + x).abs() < 1e-12);
    }

    #[test]
    fn smoothing_preserves_quadratics_in_the_interior() {
        let f = |x: &[f64]| 1.0 + x[0] - 2.0 * x[1] + x[0] * x[0] + 3.0 * x[0] * x[1] - x[1] * x[1];
        let g = GridFunction::from_fn(lat2(), f);
        let s = g.smoothed();
        let idx = g.lattice.index_of(&[1, -2]).unwrap();
        assert!((s.values[idx] - g.values[idx]).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let g = GridFunction::from_fn(lat2(), |x| (x[0] * 7.0).sin() + x[1] / 3.0);
        let back = GridFunction::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back.lattice, g.lattice);
        for (a, b) in g.values.iter().zip(&back.values) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        assert_eq!(g.content_hash(), back.content_hash());
        let bytes = g.to_bytes();
        assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 24 + 8 * 441);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let g = GridFunction::zeros(lat2());
        let b = g.to_bytes();
        assert!(GridFunction::from_bytes(&b[..b.len() - 8]).is_err());
    }

    #[test]
    fn csv_lists_active_entries() {
        let g = GridFunction::zeros(Lattice::new(1, 0.2, 0.1).unwrap());
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 5);
        assert!(text.starts_with("x,value"));
    }

    #[test]
    fn grid_map_roundtrip_and_components() {
        let lat = lat2();
        let mut m = GridMap::undefined(lat);
        for i in lat.active_indices() {
            let c = lat.coords(i);
            m.set(i, &[c[0] + 1.0, c[1]]);
        }
        assert!(m.fully_defined());
        let back = GridMap::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.defined, m.defined);
        let c0 = back.component(0);
        let i = lat.index_of(&[3, 0]).unwrap();
        assert!((c0.values[i] - 1.3).abs() < 1e-15);
    }
}
