//! Discrete conformal modulus of curve families on cell grids.
//!
//! Densities live on cell centers and are constant on each cell. A discrete
//! path moves between cell centers along a 32-direction stencil; its
//! ρ-length is the exact line integral of the piecewise-constant density
//! along the polyline. Paths start and end at nodes within a band of two
//! cells from a point of the marked boundary, and the segment from that
//! point to the node is charged too. The least-norm admissible density is
//! found by lazy constraint generation: shortest-path trees grown from both
//! marked sets return the currently shortest paths, and Hildreth's dual
//! coordinate ascent re-solves the quadratic program over the accumulated
//! path constraints.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{BoundingBox, DomainSpec};
use crate::error::{Error, Result};
use crate::mapping::{MappingSpec, PlanarPoint};
use crate::report::round_sig;
use crate::sparse::{conjugate_gradient, CsrMatrix};

const OUTSIDE: usize = usize::MAX;
/// Minimum number of cells across the smallest bounding-box extent.
const MIN_CELLS_ACROSS: f64 = 16.0;
const PATHS_PER_ROUND: usize = 512;
const MAX_ROUNDS: usize = 2000;
const MAX_SWEEPS: usize = 400;
/// Constraints with zero multiplier for this many rounds are dropped.
const IDLE_ROUNDS: usize = 3;
/// Paths may start at cells within this many cell widths of a marked
/// boundary point.
const REACH_BAND: f64 = 2.0;

/// Cell-centred grid over a region: either a builtin domain, or the image of
/// one under a mapping (membership decided through the analytic inverse).
#[derive(Clone, Debug)]
pub struct GridGraph {
    pub domain: DomainSpec,
    pub map: Option<MappingSpec>,
    pub h: f64,
    pub x0: f64,
    pub y0: f64,
    pub nx: usize,
    pub ny: usize,
    index: Vec<usize>,
    cells: Vec<(usize, usize)>,
}

impl GridGraph {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, node: usize) -> (usize, usize) {
        self.cells[node]
    }

    pub fn center(&self, node: usize) -> PlanarPoint {
        let (i, j) = self.cells[node];
        self.center_ij(i as i64, j as i64)
    }

    fn center_ij(&self, i: i64, j: i64) -> PlanarPoint {
        PlanarPoint::new(self.x0 + (i as f64 + 0.5) * self.h, self.y0 + (j as f64 + 0.5) * self.h)
    }

    pub fn node_at(&self, i: i64, j: i64) -> Option<usize> {
        if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
            return None;
        }
        let k = self.index[j as usize * self.nx + i as usize];
        (k != OUTSIDE).then_some(k)
    }

    /// Maps a point of the grid's region back to the source domain.
    pub fn pullback(&self, p: PlanarPoint) -> PlanarPoint {
        match &self.map {
            Some(m) => m.apply_inverse(p),
            None => p,
        }
    }

    fn region_contains(domain: &DomainSpec, map: Option<&MappingSpec>, p: PlanarPoint) -> bool {
        match map {
            None => domain.contains(p),
            Some(m) => m.image_contains(p) && domain.contains(m.apply_inverse(p)),
        }
    }

    fn build(domain: &DomainSpec, map: Option<&MappingSpec>, bb: BoundingBox, h: f64, min_across: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("grid spacing must be positive, got {h}")));
        }
        let across = bb.width().min(bb.height()) / h;
        if across < min_across - 1e-9 {
            return Err(Error::Resolution(format!(
                "h = {h} leaves only {across:.1} cells across the region (need {min_across})"
            )));
        }
        let nx = (bb.width() / h - 1e-9).ceil() as usize;
        let ny = (bb.height() / h - 1e-9).ceil() as usize;
        let mut g = GridGraph {
            domain: *domain,
            map: map.cloned(),
            h,
            x0: bb.x0,
            y0: bb.y0,
            nx,
            ny,
            index: vec![OUTSIDE; nx * ny],
            cells: Vec::new(),
        };
        for j in 0..ny {
            for i in 0..nx {
                if Self::region_contains(domain, map, g.center_ij(i as i64, j as i64)) {
                    g.index[j * nx + i] = g.cells.len();
                    g.cells.push((i, j));
                }
            }
        }
        let all = vec![true; g.len()];
        if g.is_empty() || !g.is_connected(&all) {
            return Err(Error::Resolution(format!("grid at h = {h} is empty or disconnected")));
        }
        Ok(g)
    }

    pub(crate) fn neighbors4(&self, node: usize) -> impl Iterator<Item = ((i64, i64), Option<usize>)> + '_ {
        let (i, j) = self.cells[node];
        [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .into_iter()
            .map(move |(di, dj)| ((di, dj), self.node_at(i as i64 + di, j as i64 + dj)))
    }

    fn is_connected(&self, active: &[bool]) -> bool {
        let Some(start) = active.iter().position(|&a| a) else {
            return false;
        };
        let mut seen = vec![false; self.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for (_, nb) in self.neighbors4(v) {
                if let Some(u) = nb {
                    if active[u] && !seen[u] {
                        seen[u] = true;
                        count += 1;
                        queue.push_back(u);
                    }
                }
            }
        }
        count == active.iter().filter(|&&a| a).count()
    }
}

/// Cell grid of a builtin domain; a cell belongs to the grid when its center
/// lies in the domain.
pub fn build_grid(domain: &DomainSpec, h: f64) -> Result<GridGraph> {
    domain.validate()?;
    GridGraph::build(domain, None, domain.bbox(), h, MIN_CELLS_ACROSS)
}

/// Like [`build_grid`] without the minimum resolution; only connectivity
/// is required.
pub fn build_mask(domain: &DomainSpec, h: f64) -> Result<GridGraph> {
    domain.validate()?;
    GridGraph::build(domain, None, domain.bbox(), h, 1.0)
}

/// Grid over `map(domain)` with the same spacing as `source`.
pub fn build_image_grid(map: &MappingSpec, source: &GridGraph) -> Result<GridGraph> {
    if source.map.is_some() {
        return Err(Error::Unsupported("pushing forward an image grid".into()));
    }
    let d = &source.domain;
    let bb = d.bbox();
    let n = 512;
    let mut ib = BoundingBox { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
    for a in 0..=n {
        for b in 0..=n {
            let p = PlanarPoint::new(
                bb.x0 + bb.width() * a as f64 / n as f64,
                bb.y0 + bb.height() * b as f64 / n as f64,
            );
            if d.contains(p) && map.natural_domain_contains(p) {
                let q = map.apply(p);
                ib.x0 = ib.x0.min(q.x);
                ib.x1 = ib.x1.max(q.x);
                ib.y0 = ib.y0.min(q.y);
                ib.y1 = ib.y1.max(q.y);
            }
        }
    }
    if !(ib.x0.is_finite() && ib.y0.is_finite()) {
        return Err(Error::Domain { map: map.to_string(), x: bb.x0, y: bb.y0 });
    }
    GridGraph::build(d, Some(map), ib, source.h, MIN_CELLS_ACROSS)
}

// ---------------------------------------------------------------------------
// Curve families

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CurveFamily {
    /// Paths joining the two sides of the bounding box perpendicular to the
    /// axis: `x = x0` to `x = x1` for `X`.
    OppositeSides(Axis),
    /// Paths in `r_in ≤ |p − c| ≤ r_out` joining the two circles, `c` being
    /// the domain center.
    AnnulusConnect { r_in: f64, r_out: f64 },
    /// Paths joining two boundary arcs given as polar angle ranges in degrees
    /// about the domain center.
    BoundaryArcs { a: (f64, f64), b: (f64, f64) },
}

impl CurveFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CurveFamily::AnnulusConnect { r_in, r_out } if !(r_in > 0.0 && r_out > r_in && r_out.is_finite()) => {
                Err(Error::Parameter(format!("annulus needs 0 < r_in < r_out, got {r_in}, {r_out}")))
            }
            CurveFamily::BoundaryArcs { a, b } if ![a.0, a.1, b.0, b.1].iter().all(|v| v.is_finite()) => {
                Err(Error::Parameter("arc angles must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    fn in_region(&self, p: PlanarPoint, center: PlanarPoint) -> bool {
        match *self {
            CurveFamily::AnnulusConnect { r_in, r_out } => {
                let r = (p.x - center.x).hypot(p.y - center.y);
                r >= r_in && r <= r_out
            }
            _ => true,
        }
    }

    /// Side of a boundary point: `Some(false)` for the first marked set,
    /// `Some(true)` for the second.
    fn classify(&self, m: PlanarPoint, bb: &BoundingBox, center: PlanarPoint, tol: f64) -> Option<bool> {
        match *self {
            CurveFamily::OppositeSides(axis) => {
                let (v, lo, hi) = match axis {
                    Axis::X => (m.x, bb.x0, bb.x1),
                    Axis::Y => (m.y, bb.y0, bb.y1),
                };
                if v <= lo + tol {
                    Some(false)
                } else if v >= hi - tol {
                    Some(true)
                } else {
                    None
                }
            }
            CurveFamily::AnnulusConnect { r_in, r_out } => {
                let r = (m.x - center.x).hypot(m.y - center.y);
                Some(r >= 0.5 * (r_in + r_out))
            }
            CurveFamily::BoundaryArcs { a, b } => {
                let th = (m.y - center.y).atan2(m.x - center.x).to_degrees();
                if in_arc(th, a) {
                    Some(false)
                } else if in_arc(th, b) {
                    Some(true)
                } else {
                    None
                }
            }
        }
    }
}

fn in_arc(theta: f64, (a0, a1): (f64, f64)) -> bool {
    if (a1 - a0).abs() >= 360.0 {
        return true;
    }
    let t = theta.rem_euclid(360.0);
    let s = a0.rem_euclid(360.0);
    let e = a1.rem_euclid(360.0);
    if s <= e {
        t >= s && t <= e
    } else {
        t >= s || t <= e
    }
}

impl fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveFamily::OppositeSides(Axis::X) => write!(f, "opposite-sides:x"),
            CurveFamily::OppositeSides(Axis::Y) => write!(f, "opposite-sides:y"),
            CurveFamily::AnnulusConnect { r_in, r_out } => write!(f, "annulus:rin={r_in},rout={r_out}"),
            CurveFamily::BoundaryArcs { a, b } => write!(f, "arcs:{},{};{},{}", a.0, a.1, b.0, b.1),
        }
    }
}

impl FromStr for CurveFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |r: &str| Error::parse("curve family", s, r);
        let num = |t: &str| -> Result<f64> {
            t.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("bad number"))
        };
        let (head, rest) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let fam = match head {
            "opposite-sides" => match rest.trim() {
                "x" => CurveFamily::OppositeSides(Axis::X),
                "y" => CurveFamily::OppositeSides(Axis::Y),
                _ => return Err(bad("axis must be x or y")),
            },
            "annulus" => {
                let (mut rin, mut rout) = (None, None);
                for kv in rest.split(',') {
                    match kv.split_once('=').map(|(k, v)| (k.trim(), v)) {
                        Some(("rin", v)) => rin = Some(num(v)?),
                        Some(("rout", v)) => rout = Some(num(v)?),
                        _ => return Err(bad("expected rin=..,rout=..")),
                    }
                }
                CurveFamily::AnnulusConnect {
                    r_in: rin.ok_or_else(|| bad("missing rin"))?,
                    r_out: rout.ok_or_else(|| bad("missing rout"))?,
                }
            }
            "arcs" => {
                let arcs: Vec<&str> = rest.split(';').collect();
                if arcs.len() != 2 {
                    return Err(bad("expected two arcs a0,a1;b0,b1"));
                }
                let parse_arc = |t: &str| -> Result<(f64, f64)> {
                    let (x, y) = t.split_once(',').ok_or_else(|| bad("arc needs two angles"))?;
                    Ok((num(x)?, num(y)?))
                };
                CurveFamily::BoundaryArcs { a: parse_arc(arcs[0])?, b: parse_arc(arcs[1])? }
            }
            _ => return Err(bad("unknown family")),
        };
        fam.validate()?;
        Ok(fam)
    }
}

impl Serialize for CurveFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CurveFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Family-specific view of a grid: active cells, where paths may start and
/// end, ghost links to the marked boundary, and the path stencil.
struct Marked {
    active: Vec<bool>,
    a: Vec<usize>,
    b: Vec<usize>,
    /// Charges of the straight segment from the nearest marked boundary point
    /// to each start (end) node; empty for nodes outside the band.
    reach_a: Vec<Vec<(usize, f64)>>,
    reach_b: Vec<Vec<(usize, f64)>>,
    geo_a: Vec<f64>,
    geo_b: Vec<f64>,
    /// Number of boundary links from each node to the first / second marked
    /// boundary.
    ghost_a: Vec<u8>,
    ghost_b: Vec<u8>,
    dirs: Vec<Direction>,
    adj_ptr: Vec<usize>,
    /// `(neighbor, direction index)`.
    adj: Vec<(usize, usize)>,
}

struct Direction {
    len: f64,
    /// Cell offsets met by the segment and the length spent in each.
    pieces: Vec<((i64, i64), f64)>,
}

/// Splits the segment between two points given in cell units (cell centers
/// at integers) into its pieces per cell, as `(cell, fraction of length)`.
fn cell_pieces(p: (f64, f64), q: (f64, f64)) -> Vec<((i64, i64), f64)> {
    let mut ts = vec![0.0, 1.0];
    for (a, b) in [(p.0, q.0), (p.1, q.1)] {
        if a != b {
            let (lo, hi) = (a.min(b), a.max(b));
            let mut k = (lo - 0.5).ceil();
            while k + 0.5 <= hi {
                let t = (k + 0.5 - a) / (b - a);
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
                k += 1.0;
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    let mut out: Vec<((i64, i64), f64)> = Vec::new();
    for w in ts.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let cell = ((p.0 + t * (q.0 - p.0)).round() as i64, (p.1 + t * (q.1 - p.1)).round() as i64);
        match out.last_mut() {
            Some(last) if last.0 == cell => last.1 += w[1] - w[0],
            _ => out.push((cell, w[1] - w[0])),
        }
    }
    out
}

/// Stencil directions with `max(|dx|, |dy|) ≤ 3` and coprime components.
fn stencil() -> Vec<(i64, i64)> {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    let mut dirs = Vec::new();
    for dy in -3i64..=3 {
        for dx in -3i64..=3 {
            if (dx, dy) != (0, 0) && gcd(dx, dy) == 1 {
                dirs.push((dx, dy));
            }
        }
    }
    dirs
}

/// Cells crossed by the open segment between two cell centers.
fn crossed_cells(dx: i64, dy: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let steps = 64;
    for k in 1..steps {
        let t = k as f64 / steps as f64;
        let (px, py) = (dx as f64 * t, dy as f64 * t);
        // a point exactly on a cell edge touches both cells
        for cx in [(px - 1e-9 + 0.5).floor(), (px + 1e-9 + 0.5).floor()] {
            for cy in [(py - 1e-9 + 0.5).floor(), (py + 1e-9 + 0.5).floor()] {
                let c = (cx as i64, cy as i64);
                if c != (0, 0) && c != (dx, dy) && !out.contains(&c) {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// Point where the segment from an inside point to an outside point leaves
/// the region; the midpoint when the far end is not actually outside.
fn boundary_crossing<F: Fn(PlanarPoint) -> bool>(inner: PlanarPoint, outer: PlanarPoint, inside: &F) -> PlanarPoint {
    let mid = |a: PlanarPoint, b: PlanarPoint| PlanarPoint::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
    if inside(outer) {
        return mid(inner, outer);
    }
    let (mut a, mut b) = (inner, outer);
    for _ in 0..60 {
        let m = mid(a, b);
        if inside(m) {
            a = m;
        } else {
            b = m;
        }
    }
    mid(a, b)
}

fn mark(grid: &GridGraph, family: &CurveFamily) -> Result<Marked> {
    family.validate()?;
    let src_bb = grid.domain.bbox();
    let center = grid.domain.center();
    let n = grid.len();
    let active: Vec<bool> = (0..n).map(|v| family.in_region(grid.pullback(grid.center(v)), center)).collect();
    if !active.iter().any(|&a| a) || !grid.is_connected(&active) {
        return Err(Error::Resolution(format!("region of {family} is empty or disconnected at h = {}", grid.h)));
    }
    let inside = |p: PlanarPoint| {
        GridGraph::region_contains(&grid.domain, grid.map.as_ref(), p) && family.in_region(grid.pullback(p), center)
    };
    let tol = 1e-6 * grid.h;
    let mut ghost_a = vec![0u8; n];
    let mut ghost_b = vec![0u8; n];
    let mut mids_a: Vec<Vec<PlanarPoint>> = vec![Vec::new(); n];
    let mut mids_b: Vec<Vec<PlanarPoint>> = vec![Vec::new(); n];
    for v in 0..n {
        if !active[v] {
            continue;
        }
        let c = grid.center(v);
        for ((di, dj), nb) in grid.neighbors4(v) {
            if nb.is_some_and(|u| active[u]) {
                continue;
            }
            let out = PlanarPoint::new(c.x + grid.h * di as f64, c.y + grid.h * dj as f64);
            let m = boundary_crossing(c, out, &inside);
            match family.classify(grid.pullback(m), &src_bb, center, tol) {
                Some(false) => {
                    ghost_a[v] += 1;
                    mids_a[v].push(m);
                }
                Some(true) => {
                    ghost_b[v] += 1;
                    mids_b[v].push(m);
                }
                None => {}
            }
        }
    }
    // On a slanted staircase the outermost layer holds one cell per step, so
    // cells slightly deeper may also start a path, paying for the straight
    // segment from the boundary.
    let to_cells = |p: PlanarPoint| ((p.x - grid.x0) / grid.h - 0.5, (p.y - grid.y0) / grid.h - 0.5);
    let reach = |mids: &[Vec<PlanarPoint>]| -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
        let band = REACH_BAND * grid.h;
        let mut charges = vec![Vec::new(); n];
        let mut geo = vec![f64::INFINITY; n];
        for v in (0..n).filter(|&v| active[v]) {
            let c = grid.center(v);
            let (i, j) = grid.cell(v);
            let mut best: Option<(f64, PlanarPoint)> = None;
            for dj in -3i64..=3 {
                for di in -3i64..=3 {
                    if let Some(u) = grid.node_at(i as i64 + di, j as i64 + dj) {
                        for m in &mids[u] {
                            let d = (m.x - c.x).hypot(m.y - c.y);
                            if best.is_none_or(|b| d < b.0) {
                                best = Some((d, *m));
                            }
                        }
                    }
                }
            }
            let Some((d, m)) = best.filter(|b| b.0 <= band) else {
                continue;
            };
            let mut list: Vec<(usize, f64)> = Vec::new();
            for ((ci, cj), frac) in cell_pieces(to_cells(m), to_cells(c)) {
                // pieces outside the active cells are charged to the node
                let u = grid.node_at(ci, cj).filter(|&u| active[u]).unwrap_or(v);
                list.push((u, frac * d));
            }
            charges[v] = merge(list);
            geo[v] = d;
        }
        (charges, geo)
    };
    let (reach_a, geo_a) = reach(&mids_a);
    let (reach_b, geo_b) = reach(&mids_b);
    let a: Vec<usize> = (0..n).filter(|&v| !reach_a[v].is_empty()).collect();
    let b: Vec<usize> = (0..n).filter(|&v| !reach_b[v].is_empty()).collect();
    if a.is_empty() || b.is_empty() {
        return Err(Error::Parameter(format!("{family} marks an empty node set at h = {}", grid.h)));
    }
    if (0..n).any(|v| ghost_a[v] > 0 && ghost_b[v] > 0) {
        return Err(Error::Parameter(format!("the marked sets of {family} overlap at h = {}", grid.h)));
    }

    let stencil = stencil();
    let dirs: Vec<Direction> = stencil
        .iter()
        .map(|&(dx, dy)| Direction {
            len: grid.h * ((dx * dx + dy * dy) as f64).sqrt(),
            pieces: cell_pieces((0.0, 0.0), (dx as f64, dy as f64)),
        })
        .collect();
    let touched: Vec<Vec<(i64, i64)>> = stencil.iter().map(|&(dx, dy)| crossed_cells(dx, dy)).collect();
    let mut adj_ptr = Vec::with_capacity(n + 1);
    let mut adj = Vec::new();
    adj_ptr.push(0);
    let ok = |i: i64, j: i64| grid.node_at(i, j).is_some_and(|u| active[u]);
    for v in 0..n {
        if active[v] {
            let (i, j) = grid.cell(v);
            let (i, j) = (i as i64, j as i64);
            for (d, &(dx, dy)) in stencil.iter().enumerate() {
                if let Some(u) = grid.node_at(i + dx, j + dy) {
                    if active[u] && touched[d].iter().all(|(cx, cy)| ok(i + cx, j + cy)) {
                        adj.push((u, d));
                    }
                }
            }
        }
        adj_ptr.push(adj.len());
    }
    Ok(Marked { active, a, b, reach_a, reach_b, geo_a, geo_b, ghost_a, ghost_b, dirs, adj_ptr, adj })
}

fn merge(mut coef: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    coef.sort_by_key(|e| e.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coef.len());
    for (v, c) in coef {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += c,
            _ => merged.push((v, c)),
        }
    }
    merged
}

/// Charges of the stencil edge leaving `v` in direction `d`.
fn edge_charges<'a>(grid: &'a GridGraph, m: &'a Marked, v: usize, d: usize) -> impl Iterator<Item = (usize, f64)> + 'a {
    let (i, j) = grid.cell(v);
    let dir = &m.dirs[d];
    dir.pieces.iter().map(move |&((oi, oj), frac)| {
        let u = grid.node_at(i as i64 + oi, j as i64 + oj).expect("edge cells are active");
        (u, frac * dir.len)
    })
}

// ---------------------------------------------------------------------------
// Solver

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulusOptions {
    /// Paths must reach ρ-length `1 − tol`.
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for ModulusOptions {
    fn default() -> Self {
        Self { tol: 1e-3, max_rounds: MAX_ROUNDS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusSolution {
    /// `Σ ρ² h²` of the admissible density.
    pub value: f64,
    /// Dual objective of the final multipliers; a lower bound.
    pub lower_bound: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    /// Shortest ρ-length of the unscaled density at termination.
    pub min_path_length: f64,
    pub active_path_count: usize,
    pub nodes: usize,
    pub h: f64,
    /// Admissible density per grid node (zero outside the family's region).
    #[serde(skip)]
    pub density: Vec<f64>,
    /// Node sequences of the constraints with positive multipliers.
    #[serde(skip)]
    pub active_paths: Vec<Vec<usize>>,
    #[serde(skip)]
    pub centers: Vec<PlanarPoint>,
}

impl ModulusSolution {
    /// Writes `x,y,rho` rows.
    pub fn write_density_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,rho")?;
        for (p, r) in self.centers.iter().zip(&self.density) {
            writeln!(w, "{},{},{}", round_sig(p.x, 12), round_sig(p.y, 12), round_sig(*r, 12))?;
        }
        Ok(())
    }
}

struct Constraint {
    path: Vec<usize>,
    coef: Vec<(usize, f64)>,
    norm2: f64,
    lambda: f64,
    idle: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct QItem {
    dist: f64,
    geo: f64,
    node: usize,
}

impl Eq for QItem {}
impl PartialOrd for QItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QItem {
    // reversed for a min-heap: ρ-length, then Euclidean length, then index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.geo.total_cmp(&self.geo))
            .then(other.node.cmp(&self.node))
    }
}

struct Tree {
    dist: Vec<f64>,
    /// Predecessor and the stencil direction used to leave it.
    pred: Vec<(usize, usize)>,
}

/// Multi-source shortest ρ-lengths from one marked side.
fn shortest_paths(grid: &GridGraph, m: &Marked, rho: &[f64], from_b: bool) -> Tree {
    let n = rho.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut geo = vec![f64::INFINITY; n];
    let mut pred = vec![(OUTSIDE, 0); n];
    let mut heap = BinaryHeap::new();
    let (sources, reach, reach_geo) = if from_b { (&m.b, &m.reach_b, &m.geo_b) } else { (&m.a, &m.reach_a, &m.geo_a) };
    for &s in sources {
        dist[s] = dot_coef(&reach[s], rho);
        geo[s] = reach_geo[s];
        heap.push(QItem { dist: dist[s], geo: geo[s], node: s });
    }
    let mut done = vec![false; n];
    while let Some(QItem { dist: d, geo: g, node: v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        for &(u, dir) in &m.adj[m.adj_ptr[v]..m.adj_ptr[v + 1]] {
            if done[u] {
                continue;
            }
            let nd = d + edge_charges(grid, m, v, dir).map(|(w, c)| c * rho[w]).sum::<f64>();
            let ng = g + m.dirs[dir].len;
            let better = match nd.total_cmp(&dist[u]) {
                Ordering::Less => true,
                Ordering::Equal => ng < geo[u] || (ng == geo[u] && v < pred[u].0),
                Ordering::Greater => false,
            };
            if better {
                dist[u] = nd;
                geo[u] = ng;
                pred[u] = (v, dir);
                heap.push(QItem { dist: nd, geo: ng, node: u });
            }
        }
    }
    Tree { dist, pred }
}

/// Tree path from a source to `end`: its nodes from the source on, and its
/// edges as `(tail node, stencil direction)`.
fn path_to(tree: &Tree, end: usize) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut nodes = vec![end];
    let mut edges = Vec::new();
    let mut v = end;
    while tree.pred[v].0 != OUTSIDE {
        let (p, d) = tree.pred[v];
        edges.push((p, d));
        nodes.push(p);
        v = p;
    }
    nodes.reverse();
    (nodes, edges)
}

/// Coefficients of the ρ-length of a path from `start` (first marked side)
/// to `end` (second marked side); edge charges do not depend on orientation.
fn path_coefficients(start: usize, end: usize, edges: &[(usize, usize)], grid: &GridGraph, m: &Marked) -> Vec<(usize, f64)> {
    let mut coef: Vec<(usize, f64)> = Vec::new();
    coef.extend_from_slice(&m.reach_a[start]);
    coef.extend_from_slice(&m.reach_b[end]);
    for &(v, d) in edges {
        coef.extend(edge_charges(grid, m, v, d));
    }
    merge(coef)
}

fn dot_coef(coef: &[(usize, f64)], rho: &[f64]) -> f64 {
    coef.iter().map(|&(v, c)| c * rho[v]).sum()
}

/// Cyclic dual coordinate ascent on the active constraints until no active
/// constraint is violated by more than `target`.
fn hildreth(cons: &mut [Constraint], rho: &mut [f64], h: f64, target: f64) {
    let scale = 2.0 * h * h;
    for _ in 0..MAX_SWEEPS {
        let mut worst = 0.0f64;
        for c in cons.iter_mut() {
            let slack = 1.0 - dot_coef(&c.coef, rho);
            let new_lambda = (c.lambda + slack * scale / c.norm2).max(0.0);
            let delta = new_lambda - c.lambda;
            if delta != 0.0 {
                c.lambda = new_lambda;
                for &(v, a) in &c.coef {
                    rho[v] += delta * a / scale;
                }
            }
            let viol = if c.lambda > 0.0 { slack.abs() } else { slack.max(0.0) };
            worst = worst.max(viol);
        }
        if worst <= target {
            break;
        }
    }
}

fn solve(grid: &GridGraph, m: &Marked, opts: &ModulusOptions) -> Result<ModulusSolution> {
    if !(opts.tol > 0.0 && opts.tol < 0.5) {
        return Err(Error::Parameter(format!("modulus tolerance must lie in (0, 0.5), got {}", opts.tol)));
    }
    let n = grid.len();
    let h = grid.h;
    let mut rho = vec![0.0; n];
    let mut cons: Vec<Constraint> = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut best: Option<f64> = None;
    for round in 1..=opts.max_rounds {
        let tree_a = shortest_paths(grid, m, &rho, false);
        let tree_b = shortest_paths(grid, m, &rho, true);
        // (length, end node, tree grown from the second side)
        let mut ends: Vec<(f64, usize, bool)> = m
            .b
            .iter()
            .map(|&b| (tree_a.dist[b] + dot_coef(&m.reach_b[b], &rho), b, false))
            .chain(m.a.iter().map(|&a| (tree_b.dist[a] + dot_coef(&m.reach_a[a], &rho), a, true)))
            .filter(|e| e.0.is_finite())
            .collect();
        if ends.is_empty() {
            return Err(Error::Resolution("no path joins the marked sets".into()));
        }
        ends.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)).then(x.1.cmp(&y.1)));
        let shortest = ends[0].0;
        if shortest > 0.0 {
            let value = h * h * rho.iter().map(|r| r * r).sum::<f64>() / (shortest * shortest);
            best = Some(best.map_or(value, |b: f64| b.min(value)));
        }
        if shortest >= 1.0 - opts.tol {
            return Ok(finish(grid, m, rho, cons, shortest, round));
        }
        let mut added = 0;
        for &(len, end, from_b) in &ends {
            if len >= 1.0 - opts.tol || added >= PATHS_PER_ROUND {
                break;
            }
            let (mut path, edges) = path_to(if from_b { &tree_b } else { &tree_a }, end);
            if from_b {
                path.reverse();
            }
            let (start, stop) = (path[0], *path.last().expect("path is non-empty"));
            if seen.insert(path.clone()) {
                let coef = path_coefficients(start, stop, &edges, grid, m);
                let norm2 = coef.iter().map(|c| c.1 * c.1).sum();
                cons.push(Constraint { path, coef, norm2, lambda: 0.0, idle: 0 });
                added += 1;
            }
        }
        let target = (0.1 * opts.tol).max(0.1 * (1.0 - shortest));
        hildreth(&mut cons, &mut rho, h, target);
        for c in cons.iter_mut() {
            c.idle = if c.lambda > 0.0 { 0 } else { c.idle + 1 };
        }
        cons.retain(|c| {
            let keep = c.idle <= IDLE_ROUNDS;
            if !keep {
                seen.remove(&c.path);
            }
            keep
        });
    }
    Err(Error::NonConvergence {
        message: format!("modulus solver reached {} rounds", opts.max_rounds),
        best_value: best.unwrap_or(f64::NAN),
    })
}

fn finish(grid: &GridGraph, m: &Marked, rho: Vec<f64>, cons: Vec<Constraint>, shortest: f64, rounds: usize) -> ModulusSolution {
    let h = grid.h;
    let h2 = h * h;
    let norm2: f64 = rho.iter().map(|r| r * r).sum();
    let lower = cons.iter().map(|c| c.lambda).sum::<f64>() - h2 * norm2;
    let density: Vec<f64> = rho.iter().zip(&m.active).map(|(r, &a)| if a { r / shortest } else { 0.0 }).collect();
    let value = density.iter().map(|r| r * r).sum::<f64>() * h2;
    ModulusSolution {
        value,
        lower_bound: lower,
        duality_gap: (value - lower).max(0.0),
        iterations: rounds,
        min_path_length: shortest,
        active_path_count: cons.iter().filter(|c| c.lambda > 0.0).count(),
        nodes: m.active.iter().filter(|&&a| a).count(),
        h,
        density,
        active_paths: cons.into_iter().filter(|c| c.lambda > 0.0).map(|c| c.path).collect(),
        centers: (0..grid.len()).map(|v| grid.center(v)).collect(),
    }
}

/// Least `Σ ρ² h²` over densities with ρ-length at least 1 on every grid path
/// of the family.
pub fn discrete_modulus(grid: &GridGraph, family: &CurveFamily, exponent: f64, opts: &ModulusOptions) -> Result<ModulusSolution> {
    if exponent != 2.0 {
        return Err(Error::Unsupported(format!("modulus exponent {exponent}; only 2 is implemented")));
    }
    let m = mark(grid, family)?;
    solve(grid, &m, opts)
}

/// Modulus of the image family on a grid over `map(domain)`; marked sets are
/// classified at the preimages of image boundary points.
pub fn pushforward_modulus(map: &MappingSpec, grid: &GridGraph, family: &CurveFamily, opts: &ModulusOptions) -> Result<ModulusSolution> {
    let image = build_image_grid(map, grid)?;
    discrete_modulus(&image, family, 2.0, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CapacityResult {
    pub value: f64,
    pub cg_iterations: usize,
    pub residual: f64,
}

/// Dirichlet energy of the discrete harmonic potential equal to 0 on the
/// first marked boundary and 1 on the second.
pub fn capacity(grid: &GridGraph, family: &CurveFamily) -> Result<CapacityResult> {
    let m = mark(grid, family)?;
    let n = grid.len();
    // inactive nodes get an identity row so the system stays regular
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut rhs = vec![0.0; n];
    for v in 0..n {
        if !m.active[v] {
            rows.push(vec![(v, 1.0)]);
            continue;
        }
        let mut row = Vec::with_capacity(5);
        let mut diag = 0.0;
        for (_, nb) in grid.neighbors4(v) {
            if let Some(u) = nb.filter(|&u| m.active[u]) {
                row.push((u, -1.0));
                diag += 1.0;
            }
        }
        diag += 2.0 * (m.ghost_a[v] + m.ghost_b[v]) as f64;
        rhs[v] = 2.0 * m.ghost_b[v] as f64;
        row.push((v, diag));
        rows.push(row);
    }
    let a = CsrMatrix::from_rows(rows);
    let mut u = vec![0.5; n];
    for v in 0..n {
        if !m.active[v] {
            u[v] = 0.0;
        }
    }
    let out = conjugate_gradient(&a, &rhs, &mut u, 1e-12, 20 * n + 100, false);
    if !out.converged {
        return Err(Error::NonConvergence { message: "capacity solve".into(), best_value: f64::NAN });
    }
    let mut energy = 0.0;
    for v in 0..n {
        if !m.active[v] {
            continue;
        }
        for ((di, dj), nb) in grid.neighbors4(v) {
            if (di, dj) > (0, 0) {
                if let Some(w) = nb.filter(|&w| m.active[w]) {
                    energy += (u[v] - u[w]).powi(2);
                }
            }
        }
        energy += 2.0 * m.ghost_a[v] as f64 * u[v].powi(2);
        energy += 2.0 * m.ghost_b[v] as f64 * (1.0 - u[v]).powi(2);
    }
    Ok(CapacityResult { value: energy, cg_iterations: out.iterations, residual: out.residual })
}
