//! Half-space description of the non-signaling CHSH polytopes and
//! double-description vertex enumeration.

use std::cmp::Ordering;
use std::sync::OnceLock;

use super::{chsh_sign_patterns, ConditionalDistribution, MEMBERSHIP_TOL, TSIRELSON_BOUND};
use crate::error::{Error, Result};

/// Number of free coordinates of a non-signaling distribution.
pub(crate) const NS_DIM: usize = 8;

/// Affine parameterization `p = lin * v + offset` of non-signaling
/// distributions by `v = (P(a=0|x) for x, P(b=0|y) for y, P(00|z) for z)`.
#[derive(Debug, Clone)]
pub(crate) struct NsAffine {
    pub lin: [[f64; NS_DIM]; 16],
    pub offset: [f64; 16],
}

impl NsAffine {
    pub fn new() -> Self {
        let mut lin = [[0.0; NS_DIM]; 16];
        let mut offset = [0.0; 16];
        for z in 0..4 {
            let (x, y) = (z & 1, z >> 1);
            let (ax, by, jz) = (x, 2 + y, 4 + z);
            lin[4 * z][jz] = 1.0;
            lin[4 * z + 1][by] = 1.0;
            lin[4 * z + 1][jz] = -1.0;
            lin[4 * z + 2][ax] = 1.0;
            lin[4 * z + 2][jz] = -1.0;
            offset[4 * z + 3] = 1.0;
            lin[4 * z + 3][ax] = -1.0;
            lin[4 * z + 3][by] = -1.0;
            lin[4 * z + 3][jz] = 1.0;
        }
        Self { lin, offset }
    }

    pub fn apply(&self, v: &[f64]) -> [f64; 16] {
        std::array::from_fn(|i| {
            self.offset[i] + self.lin[i].iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
        })
    }

    /// Coordinates of `d`; marginals are averaged, so a signaling `d` is
    /// mapped to a nearby non-signaling point.
    pub fn coords(&self, d: &ConditionalDistribution) -> [f64; NS_DIM] {
        let p = d.rows();
        let mut v = [0.0; NS_DIM];
        for x in 0..2 {
            v[x] = 0.5 * ((p[x][0] + p[x][2]) + (p[x + 2][0] + p[x + 2][2]));
        }
        for y in 0..2 {
            v[2 + y] = 0.5 * ((p[2 * y][0] + p[2 * y][1]) + (p[2 * y + 1][0] + p[2 * y + 1][1]));
        }
        for z in 0..4 {
            v[4 + z] = p[z][0];
        }
        v
    }

    /// Half-spaces `b + a.v >= 0`: 16 positivity constraints followed by the
    /// 8 CHSH constraints `s.E(v) <= bound`.
    pub fn halfspaces(&self, chsh_bound: f64) -> Vec<(f64, [f64; NS_DIM])> {
        let mut out = Vec::with_capacity(24);
        for i in 0..16 {
            out.push((self.offset[i], self.lin[i]));
        }
        for signs in chsh_sign_patterns() {
            let mut b = chsh_bound;
            let mut a = [0.0; NS_DIM];
            for z in 0..4 {
                for c in 0..4 {
                    let sgn = if c == 0 || c == 3 { 1.0 } else { -1.0 };
                    let coef = signs[z] * sgn;
                    let i = 4 * z + c;
                    b -= coef * self.offset[i];
                    for k in 0..NS_DIM {
                        a[k] -= coef * self.lin[i][k];
                    }
                }
            }
            out.push((b, a));
        }
        out
    }
}

/// Extreme points of the Tsirelson-bounded non-signaling polytope.
#[derive(Debug, Clone)]
pub struct PolytopeVertexSet {
    vertices: Vec<ConditionalDistribution>,
    lr_vertices: Vec<ConditionalDistribution>,
}

impl PolytopeVertexSet {
    pub fn vertices(&self) -> &[ConditionalDistribution] {
        &self.vertices
    }

    /// The 16 local-deterministic strategies.
    pub fn lr_vertices(&self) -> &[ConditionalDistribution] {
        &self.lr_vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// A reduced model made of arbitrary points, e.g. for toy problems.
    pub fn from_points(points: Vec<ConditionalDistribution>) -> Self {
        Self {
            vertices: points,
            lr_vertices: Vec::new(),
        }
    }
}

/// The 16 deterministic strategies in canonical order.
pub(crate) fn local_deterministic_points() -> Vec<ConditionalDistribution> {
    let mut out = Vec::with_capacity(16);
    for f in 0..4u8 {
        for g in 0..4u8 {
            out.push(ConditionalDistribution::deterministic(
                [f & 1, f >> 1],
                [g & 1, g >> 1],
            ));
        }
    }
    sort_canonical(&mut out);
    out
}

fn canonical_key(d: &ConditionalDistribution) -> [i64; 16] {
    d.flat().map(|v| (v * 1e12).round() as i64)
}

fn sort_canonical(points: &mut [ConditionalDistribution]) {
    points.sort_by_key(canonical_key);
}

/// Runs the vertex enumeration of the Tsirelson polytope from its half-space
/// description.
pub fn enumerate_extreme_points() -> Result<PolytopeVertexSet> {
    let ns = NsAffine::new();
    let rays = double_description(&ns.halfspaces(TSIRELSON_BOUND))?;
    let mut vertices = Vec::with_capacity(rays.len());
    for v in rays {
        let mut p = ns.apply(&v);
        for x in p.iter_mut() {
            if x.abs() < 1e-12 {
                *x = 0.0;
            }
        }
        vertices.push(ConditionalDistribution::from_flat_unchecked(&p));
    }
    sort_canonical(&mut vertices);
    vertices.dedup_by(|a, b| canonical_key(a) == canonical_key(b));
    if vertices.len() != 80 {
        return Err(Error::VertexCount {
            found: vertices.len(),
        });
    }
    if let Some(bad) = vertices.iter().position(|v| !v.is_member_t(MEMBERSHIP_TOL)) {
        return Err(Error::InvalidDistribution(format!(
            "enumerated vertex {bad} fails the membership check"
        )));
    }
    Ok(PolytopeVertexSet {
        vertices,
        lr_vertices: local_deterministic_points(),
    })
}

static TSIRELSON: OnceLock<std::result::Result<PolytopeVertexSet, usize>> = OnceLock::new();

/// Cached vertex set, enumerated once per process.
pub fn tsirelson_vertices() -> Result<&'static PolytopeVertexSet> {
    let cached = TSIRELSON.get_or_init(|| {
        enumerate_extreme_points().map_err(|e| match e {
            Error::VertexCount { found } => found,
            _ => 0,
        })
    });
    cached
        .as_ref()
        .map_err(|&found| Error::VertexCount { found })
}

const DD_TOL: f64 = 1e-9;

struct Ray {
    x: Vec<f64>,
    /// Bit `i` set when processed constraint `i` is tight.
    zeros: u64,
}

/// Double-description enumeration of the vertices of the bounded polytope
/// `{v : b_i + a_i.v >= 0}`, returned in affine coordinates.
fn double_description(halfspaces: &[(f64, [f64; NS_DIM])]) -> Result<Vec<Vec<f64>>> {
    let dim = NS_DIM + 1;
    // Homogenized rows (b, a); row 0 is x0 >= 0.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(halfspaces.len() + 1);
    let mut first = vec![0.0; dim];
    first[0] = 1.0;
    rows.push(first);
    for (b, a) in halfspaces {
        let mut r = Vec::with_capacity(dim);
        r.push(*b);
        r.extend_from_slice(a);
        rows.push(r);
    }
    if rows.len() > 64 {
        return Err(Error::InvalidInput(
            "too many half-spaces for enumeration".into(),
        ));
    }

    let basis = independent_rows(&rows, dim)
        .ok_or_else(|| Error::InvalidInput("half-space system is not full rank".into()))?;
    // Initial simplicial cone: rays are the columns of the inverse of the basis rows.
    let inv = invert(&basis.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())
        .ok_or_else(|| Error::InvalidInput("singular initial basis".into()))?;
    let mut rays: Vec<Ray> = (0..dim)
        .map(|j| {
            let x: Vec<f64> = (0..dim).map(|i| inv[i][j]).collect();
            let mut zeros = 0u64;
            for (k, &bi) in basis.iter().enumerate() {
                if k != j {
                    zeros |= 1 << bi;
                }
            }
            Ray {
                x: normalize(x),
                zeros,
            }
        })
        .collect();

    for (idx, row) in rows.iter().enumerate() {
        if basis.contains(&idx) {
            continue;
        }
        let vals: Vec<f64> = rays.iter().map(|r| dot(row, &r.x)).collect();
        let pos: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] > DD_TOL).collect();
        let neg: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] < -DD_TOL).collect();
        let zero: Vec<usize> = (0..rays.len())
            .filter(|&i| vals[i].abs() <= DD_TOL)
            .collect();

        let mut next: Vec<Ray> = Vec::with_capacity(rays.len() + pos.len() * neg.len());
        for &i in pos.iter() {
            next.push(Ray {
                x: rays[i].x.clone(),
                zeros: rays[i].zeros,
            });
        }
        for &i in zero.iter() {
            next.push(Ray {
                x: rays[i].x.clone(),
                zeros: rays[i].zeros | (1 << idx),
            });
        }
        for &p in &pos {
            for &n in &neg {
                let common = rays[p].zeros & rays[n].zeros;
                if (common.count_ones() as usize) < dim - 2 {
                    continue;
                }
                let adjacent =
                    (0..rays.len()).all(|r| r == p || r == n || rays[r].zeros & common != common);
                if !adjacent {
                    continue;
                }
                let (vp, vn) = (vals[p], vals[n]);
                let x: Vec<f64> = rays[p]
                    .x
                    .iter()
                    .zip(&rays[n].x)
                    .map(|(a, b)| vp * b - vn * a)
                    .collect();
                next.push(Ray {
                    x: normalize(x),
                    zeros: common | (1 << idx),
                });
            }
        }
        rays = next;
    }

    let mut out = Vec::new();
    for r in rays {
        if r.x[0] <= DD_TOL {
            return Err(Error::InvalidInput("polytope is unbounded".into()));
        }
        out.push(r.x[1..].iter().map(|v| v / r.x[0]).collect());
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v /= m);
    }
    x
}

/// Greedily picks `dim` linearly independent rows, starting with row 0.
fn independent_rows(rows: &[Vec<f64>], dim: usize) -> Option<Vec<usize>> {
    let mut chosen = Vec::new();
    let mut echelon: Vec<Vec<f64>> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let mut v = r.clone();
        for e in &echelon {
            let piv = e.iter().position(|x| x.abs() > 1e-12).unwrap();
            let f = v[piv] / e[piv];
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= f * b);
        }
        if v.iter().any(|x| x.abs() > 1e-9) {
            echelon.push(v);
            chosen.push(i);
            if chosen.len() == dim {
                return Some(chosen);
            }
        }
    }
    None
}

fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(Ordering::Equal)
        })?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        let d = a[col][col];
        a[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    let pivot_row = a[col].clone();
                    a[r].iter_mut()
                        .zip(&pivot_row)
                        .for_each(|(x, y)| *x -= f * y);
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}
