use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::gridmap::Polygon;
use crate::{Error, Result};

/// Sparse spatial weights, one sorted neighbour list per row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    row_standardized: bool,
}

impl WeightsMatrix {
    /// Builds from `(i, j, w)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, w) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("weight ({i}, {j}) outside {n} units")));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-weight on unit {i}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("weight ({i}, {j}) = {w} must be nonnegative")));
            }
            if w > 0.0 {
                rows[i].push((j, w));
            }
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        Ok(WeightsMatrix {
            n,
            rows,
            row_standardized: false,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::InvalidInput("weights matrix must be square".into()));
        }
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                } else if i == j && m[(i, j)] != 0.0 {
                    return Err(Error::InvalidInput(format!("self-weight on unit {i}")));
                }
            }
        }
        WeightsMatrix::from_triplets(n, trip)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    /// Units with no neighbours.
    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.rows[i].is_empty()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Sum of all weights.
    pub fn s0(&self) -> f64 {
        self.rows.iter().flatten().map(|&(_, w)| w).sum()
    }

    /// Scales each nonempty row to sum to one. A second call is a no-op, so
    /// rounding never drifts.
    pub fn row_standardize(mut self) -> Self {
        if self.row_standardized {
            return self;
        }
        for row in &mut self.rows {
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            if s > 0.0 {
                for e in row.iter_mut() {
                    e.1 /= s;
                }
            }
        }
        self.row_standardized = true;
        self
    }

    /// Spatial lag `W y`.
    pub fn lag(&self, y: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * y[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Relabels units: new unit `k` is old unit `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> WeightsMatrix {
        let mut inverse = vec![0; self.n];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        let mut rows: Vec<Vec<(usize, f64)>> = perm
            .iter()
            .map(|&old| self.rows[old].iter().map(|&(j, w)| (inverse[j], w)).collect())
            .collect();
        for r in &mut rows {
            r.sort_by_key(|&(j, _)| j);
        }
        WeightsMatrix {
            n: self.n,
            rows,
            row_standardized: self.row_standardized,
        }
    }

    /// Sparse triplet CSV `i,j,w`.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,w")?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                writeln!(out, "{i},{j},{w}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    Knn { k: usize },
    QueenContiguity,
    DistanceBand { d: f64 },
}

/// Unit geometry: projected points in meters, or polygons.
#[derive(Debug, Clone, Copy)]
pub enum UnitGeometry<'a> {
    Points(&'a [(f64, f64)]),
    Polygons(&'a [Polygon]),
}

impl UnitGeometry<'_> {
    fn len(&self) -> usize {
        match self {
            UnitGeometry::Points(p) => p.len(),
            UnitGeometry::Polygons(p) => p.len(),
        }
    }

    fn points(&self) -> Vec<(f64, f64)> {
        match self {
            UnitGeometry::Points(p) => p.to_vec(),
            UnitGeometry::Polygons(p) => p.iter().map(Polygon::centroid).collect(),
        }
    }
}

/// Binary adjacency for the chosen mode, row-standardized. kNN is made
/// symmetric by union first. Units left without neighbours keep an empty
/// row; see [`WeightsMatrix::isolated`].
pub fn build_weights(units: UnitGeometry<'_>, mode: WeightsMode) -> Result<WeightsMatrix> {
    let n = units.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 units, got {n}")));
    }
    let mut adj = vec![Vec::<usize>::new(); n];
    match mode {
        WeightsMode::Knn { k } => {
            if k == 0 || k >= n {
                return Err(Error::InvalidInput(format!("knn needs 0 < k < n (k={k}, n={n})")));
            }
            let pts = units.points();
            for i in 0..n {
                let mut d: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (dist(pts[i], pts[j]), j))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in d.iter().take(k) {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        WeightsMode::DistanceBand { d } => {
            let pts = units.points();
            for i in 0..n {
                for j in (i + 1)..n {
                    if dist(pts[i], pts[j]) <= d {
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
        }
        WeightsMode::QueenContiguity => {
            let polys = match units {
                UnitGeometry::Polygons(p) => p,
                UnitGeometry::Points(_) => {
                    return Err(Error::InvalidInput("queen contiguity requires polygons".into()))
                }
            };
            let boxes: Vec<_> = polys.iter().map(Polygon::bbox).collect();
            let scale = boxes
                .iter()
                .map(|b| (b.max_lon - b.min_lon).max(b.max_lat - b.min_lat))
                .fold(0.0, f64::max);
            let tol = 1e-9 * scale.max(1e-9);
            for i in 0..n {
                for j in (i + 1)..n {
                    let (a, b) = (&boxes[i], &boxes[j]);
                    if a.min_lon > b.max_lon + tol
                        || b.min_lon > a.max_lon + tol
                        || a.min_lat > b.max_lat + tol
                        || b.min_lat > a.max_lat + tol
                    {
                        continue;
                    }
                    if touches(&polys[i], &polys[j], tol) {
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
        }
    }
    let triplets = adj.into_iter().enumerate().flat_map(|(i, mut nb)| {
        nb.sort_unstable();
        nb.dedup();
        nb.into_iter().map(move |j| (i, j, 1.0))
    });
    Ok(WeightsMatrix::from_triplets(n, triplets)?.row_standardize())
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Polygons share at least one boundary point: a common vertex, or a vertex
/// of one lying on an edge of the other.
fn touches(a: &Polygon, b: &Polygon, tol: f64) -> bool {
    let on_boundary = |p: (f64, f64), poly: &Polygon| {
        let r = &poly.exterior;
        (0..r.len()).any(|k| point_segment_distance(p, r[k], r[(k + 1) % r.len()]) <= tol)
    };
    a.exterior.iter().any(|&p| on_boundary(p, b)) || b.exterior.iter().any(|&p| on_boundary(p, a))
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}
