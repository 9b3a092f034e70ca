//! Numerical checks of the inequality-form statements: the modulus
//! inequality for Q-homeomorphisms, measure distortion, the weighted
//! Poincaré inequality, and dual exponent arithmetic.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::mapping::{DilatationKind, JacobianData, MappingSpec, NormConvention, PlanarPoint};
use crate::modulus::{build_grid, build_image_grid, discrete_modulus, pushforward_modulus, CurveFamily, ModulusOptions};
use crate::quadrature::{composition_norm_bound, integrate_box, NormOptions};
use crate::report::{float_value, serde_inf};
use crate::spectral::{poincare_bound, PoincareKind};

pub const DEFAULT_SLACK: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub check: String,
    #[serde(with = "serde_inf")]
    pub lhs: f64,
    #[serde(with = "serde_inf")]
    pub rhs: f64,
    /// `lhs ≤ rhs · (1 + slack)`.
    pub satisfied: bool,
    pub slack: f64,
    #[serde(default)]
    pub details: BTreeMap<String, Value>,
}

impl InequalityReport {
    pub fn new(check: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self { check: check.into(), lhs, rhs, satisfied: lhs <= rhs * (1.0 + slack), slack, details: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    /// Whether the details carry the `inconclusive` flag.
    pub fn inconclusive(&self) -> bool {
        self.details.get("inconclusive").and_then(Value::as_bool).unwrap_or(false)
    }

    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }
}

// ---------------------------------------------------------------------------
// Q-homeomorphism modulus inequality

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QCheckOptions {
    pub slack: f64,
    pub modulus: ModulusOptions,
    /// Relative tolerance for cell averages of `K^I` near singular lines.
    pub rel_tol: f64,
}

impl Default for QCheckOptions {
    fn default() -> Self {
        Self { slack: DEFAULT_SLACK, modulus: ModulusOptions::default(), rel_tol: 1e-6 }
    }
}

/// Whether the derivative of `map` may blow up or vanish inside the box.
fn touches_singular_set(map: &MappingSpec, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
    match map {
        MappingSpec::Identity | MappingSpec::Affine { .. } => false,
        MappingSpec::HolderCusp { .. } => y0 <= 0.0 && y1 >= 0.0,
        MappingSpec::RadialSquareDisk => x0 <= 0.0 && x1 >= 0.0 && y0 <= 0.0 && y1 >= 0.0,
        MappingSpec::Composition(parts) => parts.iter().any(|p| !matches!(p, MappingSpec::Identity | MappingSpec::Affine { .. })),
    }
}

/// Integral over a box, split at `y = 0` so that singular lines lie on
/// patch edges.
fn box_integral<F>(f: &F, x0: f64, x1: f64, y0: f64, y1: f64, rel_tol: f64) -> Result<(f64, bool)>
where
    F: Fn(PlanarPoint) -> f64 + Sync,
{
    let parts: Vec<(f64, f64)> = if y0 < 0.0 && y1 > 0.0 { vec![(y0, 0.0), (0.0, y1)] } else { vec![(y0, y1)] };
    let mut total = 0.0;
    for (a, b) in parts {
        let r = integrate_box(f, x0, x1, a, b, rel_tol)?;
        if r.divergent {
            return Ok((f64::INFINITY, true));
        }
        total += r.value;
    }
    Ok((total, false))
}

/// Average of `f` over the square cell of side `h` centred at `c`: adaptive
/// when `singular`, 2×2 Gauss otherwise.
fn cell_average<F>(f: &F, c: PlanarPoint, h: f64, singular: bool, rel_tol: f64) -> Result<(f64, bool)>
where
    F: Fn(PlanarPoint) -> f64 + Sync,
{
    let r = 0.5 * h;
    if singular {
        let (v, div) = box_integral(f, c.x - r, c.x + r, c.y - r, c.y + r, rel_tol)?;
        return Ok((v / (h * h), div));
    }
    let g = r / 3f64.sqrt();
    let s = f(PlanarPoint::new(c.x - g, c.y - g))
        + f(PlanarPoint::new(c.x + g, c.y - g))
        + f(PlanarPoint::new(c.x - g, c.y + g))
        + f(PlanarPoint::new(c.x + g, c.y + g));
    Ok((0.25 * s, false))
}

/// Inner dilatation with the zero-Jacobian convention; undefined points
/// count as zero.
fn inner_dilatation(map: &MappingSpec, p: PlanarPoint) -> f64 {
    map.derivative(p)
        .map(|m| JacobianData::from_matrix(m).dilatation(DilatationKind::Inner, NormConvention::Spectral, 1.0))
        .unwrap_or(0.0)
}

fn check_slack(slack: f64) -> Result<()> {
    if slack >= 0.0 && slack.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("slack must be a finite non-negative number, got {slack}")))
    }
}

/// `M(φΓ) ≤ ∫ K^I ρ*²` with `ρ*` the optimal admissible density of the
/// source family; both moduli come from the grid solver at spacing `h`.
pub fn q_inequality_check(
    map: &MappingSpec,
    domain: &DomainSpec,
    family: &CurveFamily,
    h: f64,
    opts: &QCheckOptions,
) -> Result<InequalityReport> {
    check_slack(opts.slack)?;
    map.validate()?;
    let grid = build_grid(domain, h)?;
    let source = discrete_modulus(&grid, family, 2.0, &opts.modulus)?;
    let image = pushforward_modulus(map, &grid, family, &opts.modulus)?;
    let f = |p: PlanarPoint| inner_dilatation(map, p);
    let terms: Vec<Result<(f64, bool)>> = (0..grid.len())
        .into_par_iter()
        .map(|v| {
            let rho = source.density[v];
            if rho == 0.0 {
                return Ok((0.0, false));
            }
            let c = grid.center(v);
            let r = 0.5 * h;
            let singular = touches_singular_set(map, c.x - r, c.x + r, c.y - r, c.y + r);
            let (k, div) = cell_average(&f, c, h, singular, opts.rel_tol)?;
            Ok((k * rho * rho, div))
        })
        .collect();
    let mut sum = 0.0;
    let mut divergent = false;
    for t in terms {
        let (v, d) = t?;
        sum += v;
        divergent |= d;
    }
    let rhs = if divergent { f64::INFINITY } else { sum * h * h };
    let report = InequalityReport::new("q_inequality", image.value, rhs, opts.slack)
        .with("map", json!(map.to_string()))
        .with("domain", json!(domain.to_string()))
        .with("family", json!(family.to_string()))
        .with("h", json!(h))
        .with("source_modulus", json!(source.value))
        .with("source_duality_gap", json!(source.duality_gap))
        .with("image_duality_gap", json!(image.duality_gap))
        .with("divergent", json!(divergent));
    Ok(if divergent { report.with("inconclusive", json!(true)) } else { report })
}

// ---------------------------------------------------------------------------
// Measure distortion

/// Axis-aligned box `[x0,x1] × [y0,y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl TargetBox {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1 && [x0, x1, y0, y1].iter().all(|v| v.is_finite())) {
            return Err(Error::Parameter(format!("degenerate box [{x0},{x1}]x[{y0},{y1}]")));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn contains(&self, p: PlanarPoint) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// Points along the boundary, `n` per side.
    fn boundary(&self, n: usize) -> impl Iterator<Item = PlanarPoint> + '_ {
        (0..n).flat_map(move |k| {
            let t = k as f64 / n as f64;
            let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
            [
                PlanarPoint::new(self.x0 + t * dx, self.y0),
                PlanarPoint::new(self.x1, self.y0 + t * dy),
                PlanarPoint::new(self.x1 - t * dx, self.y1),
                PlanarPoint::new(self.x0, self.y1 - t * dy),
            ]
        })
    }
}

impl std::str::FromStr for TargetBox {
    type Err = Error;

    /// `x0,x1,y0,y1`.
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse("box", s, "expected x0,x1,y0,y1"))?;
        match v[..] {
            [a, b, c, d] => TargetBox::new(a, b, c, d),
            _ => Err(Error::parse("box", s, "expected x0,x1,y0,y1")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureOptions {
    pub slack: f64,
    pub convention: NormConvention,
    pub rel_tol: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self { slack: DEFAULT_SLACK, convention: NormConvention::Spectral, rel_tol: 1e-8 }
    }
}

/// Counts cells of the lattice `hℤ²` whose center maps into the box.
fn preimage_measure(map: &MappingSpec, b: &TargetBox, h: f64) -> f64 {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in b.boundary(256) {
        let q = map.apply_inverse(p);
        lo = (lo.0.min(q.x), lo.1.min(q.y));
        hi = (hi.0.max(q.x), hi.1.max(q.y));
    }
    let i0 = (lo.0 / h).floor() as i64 - 1;
    let i1 = (hi.0 / h).ceil() as i64 + 1;
    let j0 = (lo.1 / h).floor() as i64 - 1;
    let j1 = (hi.1 / h).ceil() as i64 + 1;
    let count: usize = (i0..i1)
        .into_par_iter()
        .map(|i| {
            (j0..j1)
                .filter(|&j| {
                    let c = PlanarPoint::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                    map.natural_domain_contains(c) && b.contains(map.apply(c))
                })
                .count()
        })
        .sum();
    count as f64 * h * h
}

/// `H_q` at a target point, read at its preimage.
fn hq_target(map: &MappingSpec, y: PlanarPoint, q: f64, conv: NormConvention) -> Option<f64> {
    map.derivative(map.apply_inverse(y))
        .ok()
        .map(|m| JacobianData::from_matrix(m).dilatation(DilatationKind::Hq(q), conv, 1.0))
}

fn constant_derivative(map: &MappingSpec) -> bool {
    match map {
        MappingSpec::Identity | MappingSpec::Affine { .. } => true,
        MappingSpec::Composition(parts) => parts.iter().all(constant_derivative),
        _ => false,
    }
}

/// `|φ⁻¹(A)| ≤ C ∫_A H_q^{2q/(2−q)}` on target boxes. Each box gives
/// `lhs/rhs`; the report carries the box with the largest ratio, whose value
/// is `C_empirical`, and is satisfied when `C_empirical ≤ 1 + slack`.
pub fn measure_distortion_check(
    map: &MappingSpec,
    boxes: &[TargetBox],
    q: f64,
    h: f64,
    opts: &MeasureOptions,
) -> Result<InequalityReport> {
    check_slack(opts.slack)?;
    map.validate()?;
    if !(1.0..2.0).contains(&q) {
        return Err(Error::Parameter(format!("measure distortion needs 1 <= q < 2, got {q}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("grid spacing must be positive, got {h}")));
    }
    if boxes.is_empty() {
        return Err(Error::Parameter("no boxes given".into()));
    }
    let exponent = 2.0 * q / (2.0 - q);
    let mut per_box = Vec::new();
    let mut worst: Option<(f64, f64, f64)> = None;
    let mut divergent = false;
    for b in boxes {
        if let Some(p) = b.boundary(64).find(|&p| !map.image_contains(p)) {
            return Err(Error::Domain { map: map.to_string(), x: p.x, y: p.y });
        }
        let lhs = preimage_measure(map, b, h);
        let rhs = if constant_derivative(map) {
            let c = PlanarPoint::new(0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1));
            let v = hq_target(map, c, q, opts.convention).unwrap_or(f64::NAN);
            v.powf(exponent) * b.area()
        } else {
            let f = |y: PlanarPoint| hq_target(map, y, q, opts.convention).map_or(f64::NAN, |v| v.powf(exponent));
            let (v, div) = box_integral(&f, b.x0, b.x1, b.y0, b.y1, opts.rel_tol)?;
            divergent |= div;
            v
        };
        let ratio = lhs / rhs;
        per_box.push(json!({"box": [b.x0, b.x1, b.y0, b.y1], "lhs": lhs, "rhs": float_value(rhs), "ratio": ratio}));
        if worst.is_none_or(|w| ratio > w.2) {
            worst = Some((lhs, rhs, ratio));
        }
    }
    let (lhs, rhs, c_emp) = worst.expect("at least one box");
    let report = InequalityReport::new("measure_distortion", lhs, rhs, opts.slack)
        .with("map", json!(map.to_string()))
        .with("q", json!(q))
        .with("h", json!(h))
        .with("c_empirical", json!(c_emp))
        .with("boxes", Value::Array(per_box));
    Ok(if divergent { report.with("divergent", json!(true)).with("inconclusive", json!(true)) } else { report })
}

// ---------------------------------------------------------------------------
// Weighted Poincaré inequality

/// Smooth test functions with analytic gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    Const,
    X,
    Y,
    Xy,
    X2,
    Y2,
    SinX,
    SinY,
    SinXy,
}

impl TestFunction {
    pub const ALL: [TestFunction; 9] = [
        Self::Const,
        Self::X,
        Self::Y,
        Self::Xy,
        Self::X2,
        Self::Y2,
        Self::SinX,
        Self::SinY,
        Self::SinXy,
    ];

    pub fn value(&self, p: PlanarPoint) -> f64 {
        let (x, y) = (p.x, p.y);
        match self {
            Self::Const => 1.0,
            Self::X => x,
            Self::Y => y,
            Self::Xy => x * y,
            Self::X2 => x * x,
            Self::Y2 => y * y,
            Self::SinX => (PI * x).sin(),
            Self::SinY => (PI * y).sin(),
            Self::SinXy => (PI * x).sin() * (PI * y).sin(),
        }
    }

    pub fn gradient(&self, p: PlanarPoint) -> [f64; 2] {
        let (x, y) = (p.x, p.y);
        match self {
            Self::Const => [0.0, 0.0],
            Self::X => [1.0, 0.0],
            Self::Y => [0.0, 1.0],
            Self::Xy => [y, x],
            Self::X2 => [2.0 * x, 0.0],
            Self::Y2 => [0.0, 2.0 * y],
            Self::SinX => [PI * (PI * x).cos(), 0.0],
            Self::SinY => [0.0, PI * (PI * y).cos()],
            Self::SinXy => [PI * (PI * x).cos() * (PI * y).sin(), PI * (PI * x).sin() * (PI * y).cos()],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Const => "const",
            Self::X => "x",
            Self::Y => "y",
            Self::Xy => "xy",
            Self::X2 => "x2",
            Self::Y2 => "y2",
            Self::SinX => "sin-x",
            Self::SinY => "sin-y",
            Self::SinXy => "sin-xy",
        }
    }
}

impl std::str::FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::parse("test function", s, "expected const, x, y, xy, x2, y2, sin-x, sin-y or sin-xy"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoincareOptions {
    pub slack: f64,
    /// Source-side gradient exponent of the Poincaré constant.
    pub q: f64,
    pub convention: NormConvention,
    pub rel_tol: f64,
}

impl Default for PoincareOptions {
    fn default() -> Self {
        Self { slack: DEFAULT_SLACK, q: 1.0, convention: NormConvention::Frobenius, rel_tol: 1e-9 }
    }
}

/// Weighted `L_s` deviation `(Σ |f − c|^s w h²)^{1/s}`.
fn deviation(values: &[f64], weights: &[f64], c: f64, s: f64, cell: f64) -> f64 {
    let sum: f64 = values.iter().zip(weights).map(|(v, w)| (v - c).abs().powf(s) * w).sum();
    (sum * cell).powf(1.0 / s)
}

/// `inf_c` of the weighted deviation and the minimizing constant: the
/// weighted mean for `s = 2`, ternary search otherwise.
pub fn weighted_deviation_infimum(values: &[f64], weights: &[f64], s: f64, cell: f64) -> (f64, f64) {
    if s == 2.0 {
        let wsum: f64 = weights.iter().sum();
        let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
        return (deviation(values, weights, mean, s, cell), mean);
    }
    ternary_infimum(values, weights, s, cell)
}

fn ternary_infimum(values: &[f64], weights: &[f64], s: f64, cell: f64) -> (f64, f64) {
    let (mut a, mut b) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    for _ in 0..200 {
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if deviation(values, weights, m1, s, cell) <= deviation(values, weights, m2, s, cell) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let c = 0.5 * (a + b);
    (deviation(values, weights, c, s, cell), c)
}

/// `B_{s,1}` of the source domain: the `(2,1)` constants, lowered to
/// `s ≤ 2` through Hölder's inequality `‖g‖_s ≤ |Ω|^{1/s−1/2} ‖g‖_2`.
fn source_poincare_constant(domain: &DomainSpec, s: f64, q: f64) -> Result<f64> {
    if q != 1.0 {
        return Err(Error::Unsupported(format!("Poincaré constants are tabulated for q = 1 only, got {q}")));
    }
    if !(1.0..=2.0).contains(&s) {
        return Err(Error::Unsupported(format!("no Poincaré constant for s = {s}; need 1 <= s <= 2")));
    }
    let b = match domain {
        DomainSpec::Diamond => poincare_bound(PoincareKind::DiamondSquare)?,
        DomainSpec::Disk { radius, .. } if *radius == 1.0 => poincare_bound(PoincareKind::Disk)?,
        _ => return Err(Error::Unsupported(format!("no tabulated Poincaré constant for {domain}"))),
    };
    Ok(b * domain.area().powf(1.0 / s - 0.5))
}

/// `inf_c ‖f − c | L_{s,w}(φ(Ω))‖ ≤ B_{s,q}(Ω) K_{p,q} ‖∇f | L_p(φ(Ω))‖` with
/// weight `w = J_{φ⁻¹}`, sampled at cell centres of a grid over `φ(Ω)`.
pub fn weighted_poincare_check(
    map: &MappingSpec,
    domain: &DomainSpec,
    s: f64,
    p: f64,
    functions: &[TestFunction],
    h: f64,
    opts: &PoincareOptions,
) -> Result<InequalityReport> {
    check_slack(opts.slack)?;
    map.validate()?;
    if !(opts.q < s) {
        return Err(Error::Parameter(format!("need q < s, got q = {}, s = {s}", opts.q)));
    }
    if !(p >= opts.q && p.is_finite()) {
        return Err(Error::Parameter(format!("need q <= p < inf, got p = {p}")));
    }
    if functions.is_empty() {
        return Err(Error::Parameter("no test functions given".into()));
    }
    let b = source_poincare_constant(domain, s, opts.q)?;
    let norm_opts = NormOptions { rel_tol: opts.rel_tol, ..Default::default() };
    let k = composition_norm_bound(map, domain, p, opts.q, opts.convention, &norm_opts)?;
    let source = build_grid(domain, h)?;
    let image = build_image_grid(map, &source)?;
    let points: Vec<PlanarPoint> = (0..image.len()).map(|v| image.center(v)).collect();
    let mut weights = Vec::with_capacity(points.len());
    let mut singular = 0usize;
    let mut max_weight_diff = 0.0f64;
    for &y in &points {
        let analytic = map.inverse_jacobian_det(y).map(f64::abs);
        let pulled = map.jacobian(map.apply_inverse(y)).map(|j| 1.0 / j.det.abs());
        match (analytic, pulled) {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => {
                max_weight_diff = max_weight_diff.max((a - b).abs() / a.max(b));
                weights.push(a);
            }
            (Ok(a), _) if a.is_finite() => weights.push(a),
            (_, Ok(b)) if b.is_finite() => weights.push(b),
            _ => {
                singular += 1;
                weights.push(0.0);
            }
        }
    }
    let cell = h * h;
    let mut worst: Option<(f64, f64, f64)> = None;
    let mut per_function = Vec::new();
    for f in functions {
        let values: Vec<f64> = points.iter().map(|&y| f.value(y)).collect();
        let (lhs, c) = weighted_deviation_infimum(&values, &weights, s, cell);
        let grad: f64 = points.iter().map(|&y| {
            let g = f.gradient(y);
            (g[0] * g[0] + g[1] * g[1]).sqrt().powf(p)
        }).sum::<f64>();
        let rhs = b * k.norm_bound * (grad * cell).powf(1.0 / p);
        per_function.push(json!({"function": f.name(), "lhs": lhs, "rhs": float_value(rhs), "constant": c}));
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        if worst.is_none_or(|w: (f64, f64, f64)| ratio > w.2) {
            worst = Some((lhs, rhs, ratio));
        }
    }
    let (lhs, rhs, _) = worst.expect("at least one function");
    let mut report = InequalityReport::new("weighted_poincare", lhs, rhs, opts.slack);
    report.satisfied = per_function.iter().all(|r| {
        let l = r["lhs"].as_f64().unwrap_or(f64::NAN);
        let rr = if k.norm_bound.is_finite() { r["rhs"].as_f64().unwrap_or(f64::INFINITY) } else { f64::INFINITY };
        l <= rr * (1.0 + opts.slack)
    }) && lhs <= rhs * (1.0 + opts.slack);
    let inconclusive = singular > 0 || max_weight_diff > 1e-8 || k.quadrature.divergent;
    let report = report
        .with("map", json!(map.to_string()))
        .with("domain", json!(domain.to_string()))
        .with("s", json!(s))
        .with("p", json!(p))
        .with("q", json!(opts.q))
        .with("h", json!(h))
        .with("b_source", json!(b))
        .with("k_norm", float_value(k.norm_bound))
        .with("singular_cells", json!(singular))
        .with("weight_max_rel_diff", json!(max_weight_diff))
        .with("functions", Value::Array(per_function));
    Ok(if inconclusive { report.with("inconclusive", json!(true)) } else { report })
}

// ---------------------------------------------------------------------------
// Dual exponents

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualMode {
    /// `p′ = p/(p − n + 1)`.
    SobolevDual,
    /// `1/p + 1/p′ = 1`.
    PlanarHolder,
}

impl std::str::FromStr for DualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sobolev" | "sobolev-dual" => Ok(Self::SobolevDual),
            "holder" | "planar-holder" => Ok(Self::PlanarHolder),
            _ => Err(Error::parse("dual mode", s, "expected sobolev or holder")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualExponents {
    #[serde(with = "serde_inf")]
    pub p_dual: f64,
    #[serde(with = "serde_inf")]
    pub q_dual: f64,
    pub mode: DualMode,
    pub n: u32,
}

fn holder_conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

pub fn dual_exponents(p: f64, q: f64, n: u32, mode: DualMode) -> Result<DualExponents> {
    if !(p.is_finite() && q.is_finite() && q <= p) {
        return Err(Error::Parameter(format!("need q <= p < inf, got p = {p}, q = {q}")));
    }
    match mode {
        DualMode::SobolevDual => {
            if n < 2 {
                return Err(Error::Parameter(format!("dimension must be at least 2, got {n}")));
            }
            let m = f64::from(n) - 1.0;
            if q <= m {
                return Err(Error::Parameter(format!("need n - 1 < q, got n = {n}, q = {q}")));
            }
            Ok(DualExponents { p_dual: p / (p - m), q_dual: q / (q - m), mode, n })
        }
        DualMode::PlanarHolder => {
            if q < 1.0 {
                return Err(Error::Parameter(format!("need 1 <= q, got {q}")));
            }
            Ok(DualExponents { p_dual: holder_conjugate(p), q_dual: holder_conjugate(q), mode, n: 2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> QCheckOptions {
        QCheckOptions { modulus: ModulusOptions { tol: 2e-3, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn identity_q_inequality_is_an_equality() {
        let fam: CurveFamily = "opposite-sides:x".parse().unwrap();
        let r = q_inequality_check(&MappingSpec::Identity, &DomainSpec::UnitSquare, &fam, 1.0 / 16.0, &quick()).unwrap();
        assert_eq!(r.lhs, r.rhs);
        assert!(r.satisfied);
        assert!(InequalityReport::new("x", r.lhs, r.rhs, 0.0).satisfied);
    }

    #[test]
    fn affine_q_inequality() {
        // K^I = 2 for diag(2, 1); the image rectangle has modulus 1/2.
        let fam: CurveFamily = "opposite-sides:x".parse().unwrap();
        let map = MappingSpec::diag(2.0, 1.0).unwrap();
        let r = q_inequality_check(&map, &DomainSpec::UnitSquare, &fam, 1.0 / 16.0, &quick()).unwrap();
        assert!((r.lhs - 0.5).abs() < 0.02 * 0.5, "{}", r.lhs);
        assert!((r.rhs - 2.0 * r.details["source_modulus"].as_f64().unwrap()).abs() < 1e-12);
        assert!(r.satisfied);
    }

    #[test]
    fn identity_measure_ratio_is_one() {
        let boxes = [TargetBox::new(0.0, 1.0, 0.0, 0.5).unwrap(), TargetBox::new(-0.25, 0.5, 0.125, 0.375).unwrap()];
        let r = measure_distortion_check(&MappingSpec::Identity, &boxes, 1.0, 1.0 / 64.0, &MeasureOptions::default()).unwrap();
        assert_eq!(r.details["c_empirical"].as_f64().unwrap(), 1.0);
        assert!(r.satisfied);
    }

    #[test]
    fn affine_measure_closed_form() {
        let b = [TargetBox::new(0.0, 1.0, 0.0, 0.5).unwrap()];
        let map = MappingSpec::diag(2.0, 1.0).unwrap();
        let r = measure_distortion_check(&map, &b, 1.0, 1.0 / 64.0, &MeasureOptions::default()).unwrap();
        // preimage [0, 1/2] × [0, 1/2]; H_1 = |D|/J = 2/2 = 1
        assert_eq!(r.lhs, 0.25);
        assert_eq!(r.rhs, 0.5);
    }

    #[test]
    fn measure_box_outside_image_is_a_domain_error() {
        let b = [TargetBox::new(0.5, 1.5, -0.1, 0.1).unwrap()];
        let map = MappingSpec::cusp(1.5).unwrap();
        assert!(matches!(
            measure_distortion_check(&map, &b, 1.0, 1.0 / 64.0, &MeasureOptions::default()),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn cusp_measure_ratio_is_finite() {
        let b = [TargetBox::new(0.25, 0.5, -0.125, 0.125).unwrap()];
        let map = MappingSpec::cusp(1.5).unwrap();
        let r = measure_distortion_check(&map, &b, 1.0, 1.0 / 128.0, &MeasureOptions::default()).unwrap();
        let c = r.details["c_empirical"].as_f64().unwrap();
        assert!(c.is_finite() && c > 0.0 && c <= 1.0, "{c}");
    }

    #[test]
    fn poincare_identity_and_constants() {
        let fns = [TestFunction::Const, TestFunction::X];
        let r = weighted_poincare_check(&MappingSpec::Identity, &DomainSpec::Diamond, 2.0, 2.0, &fns, 1.0 / 32.0, &PoincareOptions {
            convention: NormConvention::Spectral,
            ..Default::default()
        })
        .unwrap();
        assert!(r.satisfied);
        let funcs = r.details["functions"].as_array().unwrap();
        assert_eq!(funcs[0]["lhs"].as_f64().unwrap(), 0.0);
        assert!(!r.inconclusive());
    }

    #[test]
    fn poincare_cusp() {
        let map = MappingSpec::cusp(1.5).unwrap();
        let r = weighted_poincare_check(&map, &DomainSpec::Diamond, 2.0, 2.0, &[TestFunction::Y], 1.0 / 32.0, &PoincareOptions::default())
            .unwrap();
        assert!(r.satisfied);
        assert!(!r.inconclusive(), "{:?}", r.details);
    }

    #[test]
    fn ternary_search_agrees_with_mean() {
        let values: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.37).sin()).collect();
        let weights: Vec<f64> = (0..200).map(|i| 1.0 + 0.5 * ((i as f64) * 0.11).cos()).collect();
        let (exact, mean) = weighted_deviation_infimum(&values, &weights, 2.0, 0.01);
        let (searched, c) = ternary_infimum(&values, &weights, 2.0, 0.01);
        assert!((exact - searched).abs() < 1e-10);
        assert!((mean - c).abs() < 1e-6);
        assert!(exact <= deviation(&values, &weights, mean + 1e-3, 2.0, 0.01));
    }

    #[test]
    fn dual_spot_values() {
        let d = dual_exponents(3.0, 2.5, 3, DualMode::SobolevDual).unwrap();
        assert_eq!((d.p_dual, d.q_dual), (3.0, 5.0));
        let d = dual_exponents(2.0, 1.5, 2, DualMode::SobolevDual).unwrap();
        assert_eq!((d.p_dual, d.q_dual), (2.0, 3.0));
        let d = dual_exponents(2.0, 1.0, 2, DualMode::PlanarHolder).unwrap();
        assert_eq!((d.p_dual, d.q_dual), (2.0, f64::INFINITY));
        assert!(dual_exponents(3.0, 2.0, 3, DualMode::SobolevDual).is_err());
        assert!(dual_exponents(2.0, 3.0, 2, DualMode::PlanarHolder).is_err());
    }
}
