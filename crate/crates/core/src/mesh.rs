//! Nested triangulations built by uniform quadrisection.
//!
//! Level `ℓ + 1` keeps every vertex of level `ℓ` under its old index and
//! appends one new vertex per coarse edge. Coarse field values therefore sit
//! in the first `N_ℓ` slots of a fine field, which makes restriction a copy
//! and keeps the nesting bit-exact across levels.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};

/// Barycentric slack accepted by point location.
pub const LOCATE_TOLERANCE: f64 = 1e-12;

/// Relative slack (times the domain diameter) for deciding that a vertex lies
/// on the closed domain when building the norm mask.
const CLOSURE_TOLERANCE: f64 = 1e-12;

/// Values at the vertices of one mesh level.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVector {
    pub level: usize,
    pub values: Vec<f64>,
}

impl FieldVector {
    pub fn new(level: usize, values: Vec<f64>) -> Self {
        Self { level, values }
    }

    pub fn zeros(level: usize, len: usize) -> Self {
        Self::new(level, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &FieldVector) -> Result<()> {
        if self.level != other.level || self.len() != other.len() {
            return Err(Error::LevelMismatch {
                expected: self.level,
                found: other.level,
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// How a fine vertex relates to the coarse level it was refined from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParentLink {
    /// Same vertex, same index, on the coarse level.
    Inherited(usize),
    /// Midpoint of the coarse edge between the two vertices.
    Midpoint(usize, usize),
}

/// Which triangles contribute to a norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMask {
    /// Every triangle of the level.
    All,
    /// Triangles whose three vertices lie in the closed domain.
    Domain,
}

/// Vertices and triangles of a coarsest mesh, before refinement.
#[derive(Clone, Debug)]
pub struct BaseMesh {
    pub level: usize,
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

impl BaseMesh {
    /// The rectangle `[lo, hi]` cut into four triangles by its diagonals.
    pub fn square_diagonals(lo: Point, hi: Point) -> Self {
        let vertices = vec![
            lo,
            Point::new(hi.x, lo.y),
            hi,
            Point::new(lo.x, hi.y),
            lo.midpoint(hi),
        ];
        let triangles = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        Self {
            level: 1,
            vertices,
            triangles,
        }
    }

    /// `[-1, 1]²` split by its diagonals; the mesh used for unit-ball runs.
    pub fn unit_ball_square() -> Self {
        Self::square_diagonals(Point::new(-1.0, -1.0), Point::new(1.0, 1.0))
    }

    /// A base mesh whose polygon covers `domain`: the bounding square split by
    /// diagonals for balls and boxes, a fan from the centroid for polygons.
    pub fn covering(domain: &Domain) -> Self {
        match domain.outline() {
            Some(outline) if outline.len() != 4 || !is_axis_box(&outline) => {
                let n = outline.len();
                let centroid = outline.iter().fold(Point::default(), |acc, p| acc + *p)
                    * (1.0 / n as f64);
                let mut vertices = outline;
                vertices.push(centroid);
                let triangles = (0..n).map(|i| [i, (i + 1) % n, n]).collect();
                Self {
                    level: 1,
                    vertices,
                    triangles,
                }
            }
            _ => {
                let (lo, hi) = domain.bounding_box();
                Self::square_diagonals(lo, hi)
            }
        }
    }
}

fn is_axis_box(outline: &[Point]) -> bool {
    outline.iter().all(|p| {
        outline
            .iter()
            .filter(|q| q.x == p.x || q.y == p.y)
            .count()
            == 3
    })
}

/// One triangulation in the hierarchy.
#[derive(Debug)]
pub struct MeshLevel {
    level: usize,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    mesh_width: f64,
    interior: Vec<bool>,
    in_domain: Vec<bool>,
    locator: OnceLock<Locator>,
}

impl MeshLevel {
    fn new(
        level: usize,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        domain: &Domain,
    ) -> Result<Self> {
        let mut areas = Vec::with_capacity(triangles.len());
        let mut mesh_width: f64 = 0.0;
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} references a missing vertex"
                )));
            }
            let [a, b, c] = t.map(|i| vertices[i]);
            let area = 0.5 * (b - a).cross(c - a);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} is inverted or degenerate (signed area {area})"
                )));
            }
            areas.push(area);
            mesh_width = mesh_width
                .max((b - a).norm())
                .max((c - b).norm())
                .max((a - c).norm());
        }
        let interior: Vec<bool> = vertices.iter().map(|p| domain.contains(*p)).collect();
        let closed: Vec<bool> = vertices
            .iter()
            .map(|p| domain.contains_closed(*p, CLOSURE_TOLERANCE))
            .collect();
        let in_domain = triangles
            .iter()
            .map(|t| t.iter().all(|&i| closed[i]))
            .collect();
        Ok(Self {
            level,
            vertices,
            triangles,
            areas,
            mesh_width,
            interior,
            in_domain,
            locator: OnceLock::new(),
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_area(&self, k: usize) -> f64 {
        self.areas[k]
    }

    /// Longest edge over all triangles.
    pub fn mesh_width(&self) -> f64 {
        self.mesh_width
    }

    /// `true` for vertices strictly inside the domain.
    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|b| **b).count()
    }

    /// `true` for triangles counted by [`NormMask::Domain`].
    pub fn domain_triangle_mask(&self) -> &[bool] {
        &self.in_domain
    }

    /// Total area of the triangles selected by `mask`.
    pub fn area(&self, mask: NormMask) -> f64 {
        self.areas
            .iter()
            .enumerate()
            .filter(|(k, _)| self.keeps(mask, *k))
            .map(|(_, a)| a)
            .sum()
    }

    pub fn zero_field(&self) -> FieldVector {
        FieldVector::zeros(self.level, self.vertex_count())
    }

    /// Field holding `f` evaluated at every vertex.
    pub fn sample(&self, f: impl Fn(Point) -> f64) -> FieldVector {
        FieldVector::new(self.level, self.vertices.iter().map(|p| f(*p)).collect())
    }

    fn check(&self, field: &FieldVector) -> Result<()> {
        if field.level != self.level || field.len() != self.vertex_count() {
            return Err(Error::LevelMismatch {
                expected: self.level,
                found: field.level,
            });
        }
        Ok(())
    }

    #[inline]
    fn keeps(&self, mask: NormMask, k: usize) -> bool {
        match mask {
            NormMask::All => true,
            NormMask::Domain => self.in_domain[k],
        }
    }

    /// Triangle containing `p` and the barycentric coordinates of `p` in it.
    pub fn locate(&self, p: Point) -> Result<(usize, [f64; 3])> {
        let locator = self.locator.get_or_init(|| Locator::build(self));
        locator
            .find(self, p)
            .ok_or(Error::PointOutsideMesh(p))
    }

    /// Value at `p` of the piecewise-linear interpolant of `field`.
    pub fn interpolate(&self, field: &FieldVector, p: Point) -> Result<f64> {
        self.check(field)?;
        self.interpolate_values(&field.values, p)
    }

    /// As [`interpolate`](Self::interpolate) on a raw vertex-value slice.
    #[inline]
    pub fn interpolate_values(&self, values: &[f64], p: Point) -> Result<f64> {
        let (k, bary) = self.locate(p)?;
        let [a, b, c] = self.triangles[k];
        Ok(bary[0] * values[a] + bary[1] * values[b] + bary[2] * values[c])
    }

    /// L² inner product of the interpolants of `a` and `b` over the selected
    /// triangles, by the edge-midpoint rule (exact for quadratics).
    pub fn l2_inner(&self, a: &FieldVector, b: &FieldVector, mask: NormMask) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.l2_inner_values(&a.values, &b.values, mask))
    }

    pub(crate) fn l2_inner_values(&self, a: &[f64], b: &[f64], mask: NormMask) -> f64 {
        let mut total = 0.0;
        for (k, t) in self.triangles.iter().enumerate() {
            if !self.keeps(mask, k) {
                continue;
            }
            let [i, j, l] = *t;
            let (ma_ij, ma_jl, ma_li) = (a[i] + a[j], a[j] + a[l], a[l] + a[i]);
            let (mb_ij, mb_jl, mb_li) = (b[i] + b[j], b[j] + b[l], b[l] + b[i]);
            // midpoint values are half the sums; the two halves give the 1/4
            total += self.areas[k] * (ma_ij * mb_ij + ma_jl * mb_jl + ma_li * mb_li);
        }
        total / 12.0
    }

    /// L² norm of the interpolant of `field` over the selected triangles.
    pub fn l2_norm(&self, field: &FieldVector, mask: NormMask) -> Result<f64> {
        Ok(self.l2_inner(field, field, mask)?.max(0.0).sqrt())
    }

    /// Writes `vertex_index,x,y,value` rows after a `# level=…` comment line.
    pub fn write_csv<W: Write>(
        &self,
        out: &mut W,
        field: &FieldVector,
        header: &[(&str, String)],
    ) -> Result<()> {
        self.check(field)?;
        write!(out, "# level={}", self.level)?;
        for (k, v) in header {
            write!(out, " {k}={v}")?;
        }
        writeln!(out)?;
        writeln!(out, "vertex_index,x,y,value")?;
        for (i, (p, v)) in self.vertices.iter().zip(&field.values).enumerate() {
            writeln!(out, "{i},{},{},{}", p.x, p.y, v)?;
        }
        Ok(())
    }
}

/// Reads a field written by [`MeshLevel::write_csv`]; returns the level
/// recorded in the header along with the vertex positions and values.
pub fn read_field_csv<R: BufRead>(input: R) -> Result<(FieldVector, Vec<Point>)> {
    let bad = |msg: &str| Error::Config(format!("field csv: {msg}"));
    let mut level = None;
    let mut points = Vec::new();
    let mut values = Vec::new();
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if let Some(meta) = line.strip_prefix('#') {
            for kv in meta.split_whitespace() {
                if let Some(v) = kv.strip_prefix("level=") {
                    level = Some(v.parse::<usize>().map_err(|_| bad("bad level"))?);
                }
            }
            continue;
        }
        if line.is_empty() || line.starts_with("vertex_index") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let index: usize = cols[0].parse().map_err(|_| bad("bad index"))?;
        if index != values.len() {
            return Err(bad("vertex indices must be consecutive"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        points.push(Point::new(num(cols[1])?, num(cols[2])?));
        values.push(num(cols[3])?);
    }
    let level = level.ok_or_else(|| bad("missing level header"))?;
    Ok((FieldVector::new(level, values), points))
}

/// Bucket grid over the mesh bounding box for point location.
#[derive(Debug)]
struct Locator {
    origin: Point,
    inv_cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl Locator {
    fn build(mesh: &MeshLevel) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &mesh.vertices {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE);
        let target = (mesh.triangles.len() as f64).sqrt().ceil().max(1.0);
        let cell = extent / target;
        let inv_cell = 1.0 / cell;
        let nx = (((hi.x - lo.x) * inv_cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) * inv_cell).floor() as usize + 1).max(1);
        let cell_range = |v: f64, o: f64, n: usize| -> usize {
            (((v - o) * inv_cell).floor().max(0.0) as usize).min(n - 1)
        };
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nx * ny];
        for (k, t) in mesh.triangles.iter().enumerate() {
            let ps = t.map(|i| mesh.vertices[i]);
            let (x0, x1) = minmax(ps.map(|p| p.x));
            let (y0, y1) = minmax(ps.map(|p| p.y));
            let pad = LOCATE_TOLERANCE * extent;
            let (i0, i1) = (cell_range(x0 - pad, lo.x, nx), cell_range(x1 + pad, lo.x, nx));
            let (j0, j1) = (cell_range(y0 - pad, lo.y, ny), cell_range(y1 + pad, lo.y, ny));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(k as u32);
                }
            }
        }
        let mut starts = Vec::with_capacity(nx * ny + 1);
        let mut items = Vec::new();
        starts.push(0);
        for b in buckets {
            items.extend_from_slice(&b);
            starts.push(items.len() as u32);
        }
        Self {
            origin: lo,
            inv_cell,
            nx,
            ny,
            starts,
            items,
        }
    }

    fn find(&self, mesh: &MeshLevel, p: Point) -> Option<(usize, [f64; 3])> {
        if !p.is_finite() {
            return None;
        }
        let fi = ((p.x - self.origin.x) * self.inv_cell).floor();
        let fj = ((p.y - self.origin.y) * self.inv_cell).floor();
        // allow points a hair outside the box to land in the edge cells
        let i = clamp_cell(fi, self.nx)?;
        let j = clamp_cell(fj, self.ny)?;
        let cell = j * self.nx + i;
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &k in &self.items[self.starts[cell] as usize..self.starts[cell + 1] as usize] {
            let k = k as usize;
            let bary = barycentric(mesh, k, p);
            let worst = bary[0].min(bary[1]).min(bary[2]);
            if worst >= 0.0 {
                return Some((k, bary));
            }
            if worst >= -LOCATE_TOLERANCE && best.map_or(true, |b| worst > b.2) {
                best = Some((k, bary, worst));
            }
        }
        best.map(|(k, bary, _)| {
            let clipped = bary.map(|b| b.max(0.0));
            let sum: f64 = clipped.iter().sum();
            (k, clipped.map(|b| b / sum))
        })
    }
}

fn clamp_cell(f: f64, n: usize) -> Option<usize> {
    if f < -1.0 || f > n as f64 {
        return None;
    }
    Some((f.max(0.0) as usize).min(n - 1))
}

fn minmax(v: [f64; 3]) -> (f64, f64) {
    (v[0].min(v[1]).min(v[2]), v[0].max(v[1]).max(v[2]))
}

#[inline]
fn barycentric(mesh: &MeshLevel, k: usize, p: Point) -> [f64; 3] {
    let [a, b, c] = mesh.triangles[k].map(|i| mesh.vertices[i]);
    let inv = 0.5 / mesh.areas[k];
    let la = (b - p).cross(c - p) * inv;
    let lb = (c - p).cross(a - p) * inv;
    [la, lb, 1.0 - la - lb]
}

/// Levels `ℓ₀ … L` of a quadrisection hierarchy plus the parent links
/// between consecutive levels.
#[derive(Debug)]
pub struct MeshHierarchy {
    levels: Vec<MeshLevel>,
    /// `parents[i]` links level `base + i + 1` to level `base + i`.
    parents: Vec<Vec<ParentLink>>,
    domain: Domain,
}

impl MeshHierarchy {
    /// Refines `base` by quadrisection up to `finest_level`, marking vertices
    /// and triangles against `domain`.
    pub fn build(base: &BaseMesh, finest_level: usize, domain: &Domain) -> Result<Self> {
        if base.level == 0 {
            return Err(Error::InvalidMesh("levels are numbered from 1".into()));
        }
        if finest_level < base.level {
            return Err(Error::InvalidMesh(format!(
                "finest level {finest_level} is below the base level {}",
                base.level
            )));
        }
        check_distinct(&base.vertices)?;
        let mut levels = vec![MeshLevel::new(
            base.level,
            base.vertices.clone(),
            base.triangles.clone(),
            domain,
        )?];
        let mut parents = Vec::new();
        for level in base.level + 1..=finest_level {
            let coarse = levels.last().expect("at least the base level");
            let (vertices, triangles, links) = quadrisect(coarse);
            parents.push(links);
            levels.push(MeshLevel::new(level, vertices, triangles, domain)?);
        }
        Ok(Self {
            levels,
            parents,
            domain: domain.clone(),
        })
    }

    /// The `[-1, 1]²` hierarchy used for unit-ball problems.
    pub fn unit_ball(finest_level: usize) -> Result<Self> {
        Self::build(&BaseMesh::unit_ball_square(), finest_level, &Domain::unit_ball())
    }

    /// A hierarchy whose base mesh covers `domain`.
    pub fn for_domain(domain: &Domain, finest_level: usize) -> Result<Self> {
        Self::build(&BaseMesh::covering(domain), finest_level, domain)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn coarsest_level(&self) -> usize {
        self.levels[0].level
    }

    pub fn finest_level(&self) -> usize {
        self.levels.last().expect("non-empty").level
    }

    pub fn finest(&self) -> &MeshLevel {
        self.levels.last().expect("non-empty")
    }

    pub fn contains_level(&self, level: usize) -> bool {
        level >= self.coarsest_level() && level <= self.finest_level()
    }

    pub fn level(&self, level: usize) -> Result<&MeshLevel> {
        if !self.contains_level(level) {
            return Err(Error::InvalidArgument(format!(
                "level {level} is outside the hierarchy {}..={}",
                self.coarsest_level(),
                self.finest_level()
            )));
        }
        Ok(&self.levels[level - self.coarsest_level()])
    }

    /// Parent links of the vertices of `fine_level`.
    pub fn parent_links(&self, fine_level: usize) -> Result<&[ParentLink]> {
        if fine_level <= self.coarsest_level() || fine_level > self.finest_level() {
            return Err(Error::InvalidArgument(format!(
                "level {fine_level} has no coarser parent in the hierarchy"
            )));
        }
        Ok(&self.parents[fine_level - self.coarsest_level() - 1])
    }

    /// Values at the inherited vertices of a fine field.
    pub fn restrict(&self, fine: &FieldVector) -> Result<FieldVector> {
        let fine_mesh = self.level(fine.level)?;
        fine_mesh.check(fine)?;
        let coarse = self.level(fine.level.saturating_sub(1))?;
        Ok(FieldVector::new(
            coarse.level,
            fine.values[..coarse.vertex_count()].to_vec(),
        ))
    }

    /// Exact piecewise-linear prolongation to the next finer level.
    pub fn prolong(&self, coarse: &FieldVector) -> Result<FieldVector> {
        self.level(coarse.level)?.check(coarse)?;
        let links = self.parent_links(coarse.level + 1)?;
        let values = links
            .iter()
            .map(|link| match *link {
                ParentLink::Inherited(i) => coarse.values[i],
                ParentLink::Midpoint(a, b) => 0.5 * (coarse.values[a] + coarse.values[b]),
            })
            .collect();
        Ok(FieldVector::new(coarse.level + 1, values))
    }

    /// Repeated [`prolong`](Self::prolong) up to `level`.
    pub fn prolong_to(&self, field: &FieldVector, level: usize) -> Result<FieldVector> {
        if level < field.level {
            return Err(Error::LevelMismatch {
                expected: level,
                found: field.level,
            });
        }
        let mut out = field.clone();
        while out.level < level {
            out = self.prolong(&out)?;
        }
        Ok(out)
    }

    /// Fine field minus the prolongation of its own restriction: zero at
    /// inherited vertices, value minus parent average at midpoints.
    pub fn midpoint_defect(&self, fine: &FieldVector) -> Result<FieldVector> {
        self.level(fine.level)?.check(fine)?;
        let links = self.parent_links(fine.level)?;
        let mut out = vec![0.0; fine.len()];
        self.midpoint_defect_into(links, &fine.values, &mut out);
        Ok(FieldVector::new(fine.level, out))
    }

    pub(crate) fn midpoint_defect_into(&self, links: &[ParentLink], fine: &[f64], out: &mut [f64]) {
        for (i, link) in links.iter().enumerate() {
            out[i] = match *link {
                ParentLink::Inherited(_) => 0.0,
                ParentLink::Midpoint(a, b) => fine[i] - 0.5 * (fine[a] + fine[b]),
            };
        }
    }
}

fn check_distinct(vertices: &[Point]) -> Result<()> {
    let mut keys: Vec<(u64, u64)> = vertices
        .iter()
        .map(|p| ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits()))
        .collect();
    keys.sort_unstable();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidMesh("duplicate vertex in base mesh".into()));
    }
    Ok(())
}

fn quadrisect(coarse: &MeshLevel) -> (Vec<Point>, Vec<[usize; 3]>, Vec<ParentLink>) {
    let n = coarse.vertex_count();
    let mut vertices = coarse.vertices.clone();
    let mut links: Vec<ParentLink> = (0..n).map(ParentLink::Inherited).collect();
    let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * n);
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
        let key = (a.min(b), a.max(b));
        *edge_mid.entry(key).or_insert_with(|| {
            vertices.push(coarse.vertices[key.0].midpoint(coarse.vertices[key.1]));
            links.push(ParentLink::Midpoint(key.0, key.1));
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * coarse.triangles.len());
    for &[a, b, c] in &coarse.triangles {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    (vertices, triangles, links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Degree-5 seven-point rule on a triangle (Strang–Fix / Dunavant).
    fn quad7(mesh: &MeshLevel, field: &FieldVector, mask: NormMask) -> f64 {
        let s15 = 15f64.sqrt();
        let (a1, a2) = ((6.0 - s15) / 21.0, (6.0 + s15) / 21.0);
        let (w1, w2) = ((155.0 - s15) / 1200.0, (155.0 + s15) / 1200.0);
        let rule: Vec<([f64; 3], f64)> = vec![
            ([1.0 / 3.0; 3], 9.0 / 40.0),
            ([a1, a1, 1.0 - 2.0 * a1], w1),
            ([a1, 1.0 - 2.0 * a1, a1], w1),
            ([1.0 - 2.0 * a1, a1, a1], w1),
            ([a2, a2, 1.0 - 2.0 * a2], w2),
            ([a2, 1.0 - 2.0 * a2, a2], w2),
            ([1.0 - 2.0 * a2, a2, a2], w2),
        ];
        let mut total = 0.0;
        for (k, t) in mesh.triangles().iter().enumerate() {
            if !mesh.keeps(mask, k) {
                continue;
            }
            let vals = t.map(|i| field.values[i]);
            let s: f64 = rule
                .iter()
                .map(|(b, w)| {
                    let phi = b[0] * vals[0] + b[1] * vals[1] + b[2] * vals[2];
                    w * phi * phi
                })
                .sum();
            total += mesh.triangle_area(k) * s;
        }
        total.sqrt()
    }

    fn unit_square_hierarchy(finest: usize) -> MeshHierarchy {
        MeshHierarchy::build(
            &BaseMesh::square_diagonals(Point::new(0.0, 0.0), Point::new(1.0, 1.0)),
            finest,
            &Domain::unit_square(),
        )
        .unwrap()
    }

    #[test]
    fn vertex_counts_and_widths() {
        let h = MeshHierarchy::unit_ball(5).unwrap();
        assert_eq!(h.level(1).unwrap().vertex_count(), 5);
        assert_eq!(h.level(2).unwrap().vertex_count(), 13);
        for l in 1..=5 {
            let m = h.level(l).unwrap();
            let side = 1usize << (l - 1);
            assert_eq!(m.vertex_count(), (side + 1) * (side + 1) + side * side);
            assert_eq!(m.triangles().len(), 4usize.pow(l as u32));
            assert_eq!(m.mesh_width(), 2.0 * 0.5f64.powi(l as i32 - 1));
        }
    }

    #[test]
    fn refinement_preserves_area_and_shape() {
        let h = MeshHierarchy::unit_ball(6).unwrap();
        let base = h.level(1).unwrap();
        let c = (0..base.triangles().len())
            .map(|k| base.triangle_area(k) / base.mesh_width().powi(2))
            .fold(f64::INFINITY, f64::min);
        for l in 1..=6 {
            let m = h.level(l).unwrap();
            assert!((m.area(NormMask::All) - 4.0).abs() < 1e-12);
            for (k, t) in m.triangles().iter().enumerate() {
                let [a, b, cc] = t.map(|i| m.vertices()[i]);
                let hk = (b - a).norm().max((cc - b).norm()).max((a - cc).norm());
                assert!(m.triangle_area(k) >= c * hk * hk * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn nesting_is_exact() {
        let h = MeshHierarchy::unit_ball(5).unwrap();
        for l in 2..=5 {
            let (fine, coarse) = (h.level(l).unwrap(), h.level(l - 1).unwrap());
            for (i, link) in h.parent_links(l).unwrap().iter().enumerate() {
                match *link {
                    ParentLink::Inherited(j) => {
                        assert_eq!(j, i);
                        assert_eq!(fine.vertices()[i], coarse.vertices()[j]);
                    }
                    ParentLink::Midpoint(a, b) => {
                        let m = coarse.vertices()[a].midpoint(coarse.vertices()[b]);
                        assert_eq!(fine.vertices()[i], m);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_base_meshes() {
        let dom = Domain::unit_ball();
        let mut dup = BaseMesh::unit_ball_square();
        dup.vertices.push(dup.vertices[0]);
        assert!(matches!(
            MeshHierarchy::build(&dup, 2, &dom),
            Err(Error::InvalidMesh(_))
        ));
        let mut inverted = BaseMesh::unit_ball_square();
        inverted.triangles[0] = [1, 0, 4];
        assert!(matches!(
            MeshHierarchy::build(&inverted, 2, &dom),
            Err(Error::InvalidMesh(_))
        ));
    }

    #[test]
    fn locate_special_points() {
        let h = MeshHierarchy::unit_ball(3).unwrap();
        let m = h.level(3).unwrap();
        let v = m.vertices()[7];
        let (k, bary) = m.locate(v).unwrap();
        let idx = m.triangles()[k].iter().position(|&i| i == 7).unwrap();
        assert!((bary[idx] - 1.0).abs() < 1e-12);

        let t = m.triangles()[10].map(|i| m.vertices()[i]);
        let centroid = (t[0] + t[1] + t[2]) * (1.0 / 3.0);
        let (k, bary) = m.locate(centroid).unwrap();
        assert_eq!(k, 10);
        for b in bary {
            assert!((b - 1.0 / 3.0).abs() < 1e-12);
        }

        let mid = t[0].midpoint(t[1]);
        let (_, bary) = m.locate(mid).unwrap();
        let mut sorted = bary;
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[0].abs() < 1e-12);
        assert!((sorted[1] - 0.5).abs() < 1e-12 && (sorted[2] - 0.5).abs() < 1e-12);

        assert!(matches!(
            m.locate(Point::new(1.5, 0.0)),
            Err(Error::PointOutsideMesh(_))
        ));
    }

    #[test]
    fn interpolation_examples() {
        let base = BaseMesh {
            level: 1,
            vertices: vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            triangles: vec![[0, 1, 2]],
        };
        let h = MeshHierarchy::build(&base, 1, &Domain::unit_square()).unwrap();
        let m = h.level(1).unwrap();
        let f = FieldVector::new(1, vec![0.0, 1.0, 2.0]);
        assert!((m.interpolate(&f, Point::new(0.5, 0.5)).unwrap() - 1.5).abs() < 1e-15);

        let h = MeshHierarchy::unit_ball(4).unwrap();
        let m = h.level(4).unwrap();
        let c = m.sample(|_| 3.25);
        let phi = |p: Point| 3.0 * p.x - 2.0 * p.y + 1.0;
        let lin = m.sample(phi);
        for p in [Point::new(0.13, -0.71), Point::new(-0.99, 0.5), Point::new(0.0, 0.0)] {
            assert!((m.interpolate(&c, p).unwrap() - 3.25).abs() < 1e-13);
            assert!((m.interpolate(&lin, p).unwrap() - phi(p)).abs() < 1e-13);
        }
        let wrong = FieldVector::zeros(3, m.vertex_count());
        assert!(matches!(
            m.interpolate(&wrong, Point::new(0.0, 0.0)),
            Err(Error::LevelMismatch { .. })
        ));
    }

    #[test]
    fn l2_norm_examples() {
        let h = unit_square_hierarchy(4);
        for l in 1..=4 {
            let m = h.level(l).unwrap();
            let one = m.sample(|_| 1.0);
            assert!((m.l2_norm(&one, NormMask::All).unwrap() - 1.0).abs() < 1e-14);
            let x = m.sample(|p| p.x);
            let expected = (1.0f64 / 3.0).sqrt();
            assert!((m.l2_norm(&x, NormMask::All).unwrap() - expected).abs() < 1e-14);
            assert_eq!(m.l2_norm(&m.zero_field(), NormMask::All).unwrap(), 0.0);
        }
    }

    #[test]
    fn domain_mask_keeps_ball_triangles() {
        let h = MeshHierarchy::unit_ball(6).unwrap();
        let m = h.level(6).unwrap();
        let area = m.area(NormMask::Domain);
        assert!(area < std::f64::consts::PI && area > std::f64::consts::PI - 0.2);
        assert!(m.interior_mask()[m.vertices().iter().position(|p| *p == Point::new(0.0, 0.0)).unwrap()]);
        let on_circle = m.vertices().iter().position(|p| *p == Point::new(1.0, 0.0)).unwrap();
        assert!(!m.interior_mask()[on_circle]);
    }

    #[test]
    fn restrict_prolong_and_defect() {
        let h = MeshHierarchy::unit_ball(4).unwrap();
        let fine = h.level(4).unwrap();
        let coarse = h.level(3).unwrap();
        let phi = |p: Point| 0.5 * p.x - 1.5 * p.y + 2.0;
        let r = h.restrict(&fine.sample(phi)).unwrap();
        assert_eq!(r, coarse.sample(phi));
        let c = h.restrict(&fine.sample(|_| 4.0)).unwrap();
        assert!(c.values.iter().all(|v| *v == 4.0));

        let d = h.midpoint_defect(&fine.sample(phi)).unwrap();
        assert!(d.values.iter().all(|v| v.abs() < 1e-14));
        let d = h.midpoint_defect(&fine.sample(|_| 7.0)).unwrap();
        assert!(d.values.iter().all(|v| *v == 0.0));

        let links = h.parent_links(4).unwrap();
        let (i, a, b) = links
            .iter()
            .enumerate()
            .find_map(|(i, l)| match l {
                ParentLink::Midpoint(a, b) => Some((i, *a, *b)),
                _ => None,
            })
            .unwrap();
        let mut f = fine.zero_field();
        f.values[a] = 0.0;
        f.values[b] = 2.0;
        f.values[i] = 3.0;
        assert_eq!(h.midpoint_defect(&f).unwrap().values[i], 2.0);

        let up = h.prolong(&r).unwrap();
        let back = h.restrict(&up).unwrap();
        assert_eq!(back, r);
        assert!(h
            .midpoint_defect(&coarse.zero_field())
            .and_then(|_| h.restrict(&FieldVector::zeros(9, 3)))
            .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let h = MeshHierarchy::unit_ball(3).unwrap();
        let m = h.level(3).unwrap();
        let f = m.sample(|p| p.x * p.y + 0.1);
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &f, &[("alpha", "1".into()), ("seed", "7".into())])
            .unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# level=3 alpha=1 seed=7\nvertex_index,x,y,value\n"));
        let (back, pts) = read_field_csv(&buf[..]).unwrap();
        assert_eq!(back, f);
        assert_eq!(pts, m.vertices());
    }

    fn arb_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0..5.0f64, n)
    }

    proptest! {
        #[test]
        fn l2_norm_matches_degree5_rule(vals in arb_values(41)) {
            let h = MeshHierarchy::unit_ball(3).unwrap();
            let m = h.level(3).unwrap();
            let f = FieldVector::new(3, vals);
            for mask in [NormMask::All, NormMask::Domain] {
                let ours = m.l2_norm(&f, mask).unwrap();
                let oracle = quad7(m, &f, mask);
                prop_assert!((ours - oracle).abs() <= 1e-10 * oracle.max(1e-300));
            }
        }

        #[test]
        fn norm_is_refinement_invariant(vals in arb_values(41)) {
            let h = MeshHierarchy::unit_ball(4).unwrap();
            let f = FieldVector::new(3, vals);
            let up = h.prolong(&f).unwrap();
            let a = h.level(3).unwrap().l2_norm(&f, NormMask::All).unwrap();
            let b = h.level(4).unwrap().l2_norm(&up, NormMask::All).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn defect_is_fine_minus_prolonged_restriction(vals in arb_values(145)) {
            let h = MeshHierarchy::unit_ball(4).unwrap();
            let m = h.level(4).unwrap();
            let fine = FieldVector::new(4, vals);
            let defect = h.midpoint_defect(&fine).unwrap();
            let mut diff = fine.clone();
            diff.axpy(-1.0, &h.prolong(&h.restrict(&fine).unwrap()).unwrap()).unwrap();
            let a = m.l2_norm(&defect, NormMask::Domain).unwrap();
            let b = m.l2_norm(&diff, NormMask::Domain).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn barycentric_coordinates_are_a_partition(x in -1.0..1.0f64, y in -1.0..1.0f64) {
            let h = MeshHierarchy::unit_ball(5).unwrap();
            let (_, b) = h.level(5).unwrap().locate(Point::new(x, y)).unwrap();
            prop_assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
