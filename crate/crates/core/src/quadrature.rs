//! Adaptive integration over builtin planar regions with integrable
//! singularities on the axis `y = 0` and at the origin, and the
//! composition-operator norm bounds built on top of it.
//!
//! A region is split into patches (see [`DomainSpec::patches`]) and each
//! patch is integrated as an iterated integral over its unit parameter
//! square. Directions whose edge touches a singular locus are refined
//! geometrically toward that edge with ratio 1/4; the strip contributions
//! then decay geometrically for integrable power singularities, which gives
//! both a tail extrapolation and a divergence test. All other directions use
//! adaptive Gauss–Kronrod bisection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, Patch};
use crate::error::{Error, Result};
use crate::mapping::{DilatationKind, JacobianData, MappingSpec, NormConvention, PlanarPoint};
use crate::report::serde_inf;

// Gauss–Kronrod 7/15 nodes and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Geometric refinement ratio toward a singular edge.
const STRIP_RATIO: f64 = 0.25;
/// Partial sums growing by more than this factor over three generations of
/// non-decreasing strip contributions signal divergence.
const DIVERGENCE_GROWTH: f64 = 2.0;
const MAX_STRIPS: usize = 460;
const MAX_INTERVALS: usize = 4000;
/// Splits of an end interval without its end piece shrinking before the
/// endpoint is declared non-integrable.
const ENDPOINT_STALL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    #[serde(with = "serde_inf")]
    pub value: f64,
    #[serde(with = "serde_inf")]
    pub error_estimate: f64,
    pub cells_used: usize,
    pub converged: bool,
    pub divergent: bool,
}

impl QuadratureResult {
    pub fn divergent(cells_used: usize) -> Self {
        Self {
            value: f64::INFINITY,
            error_estimate: f64::INFINITY,
            cells_used,
            converged: false,
            divergent: true,
        }
    }

    /// A value known in closed form.
    pub fn exact(value: f64) -> Self {
        Self { value, error_estimate: 0.0, cells_used: 0, converged: true, divergent: false }
    }
}

/// Integration failure inside the recursive machinery.
#[derive(Debug)]
enum Stop {
    Divergent,
    Budget(String),
}

/// Value together with an absolute error carried from nested integrals.
#[derive(Clone, Copy, Debug, Default)]
struct Est {
    value: f64,
    error: f64,
}

struct Counter(usize);

fn gk15<F>(f: &mut F, a: f64, b: f64) -> std::result::Result<(Est, f64), Stop>
where
    F: FnMut(f64) -> std::result::Result<Est, Stop>,
{
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kron = Est { value: fc.value * WGK[7], error: fc.error * WGK[7] };
    let mut gauss = fc.value * WG[3];
    let mut abs_sum = fc.value.abs() * WGK[7];
    for j in 0..7 {
        let dx = hl * XGK[j];
        let f1 = f(c - dx)?;
        let f2 = f(c + dx)?;
        kron.value += WGK[j] * (f1.value + f2.value);
        kron.error += WGK[j] * (f1.error + f2.error);
        abs_sum += WGK[j] * (f1.value.abs() + f2.value.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1.value + f2.value);
        }
    }
    let h = hl.abs();
    let err = ((kron.value - gauss) * h).abs() + 50.0 * f64::EPSILON * abs_sum * h;
    Ok((Est { value: kron.value * hl, error: kron.error * h }, err))
}

struct Interval {
    a: f64,
    b: f64,
    est: Est,
    err: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err).then(other.a.total_cmp(&self.a))
    }
}

/// Adaptive Gauss–Kronrod bisection on `[a, b]`.
fn adaptive<F>(f: &mut F, a: f64, b: f64, rel_tol: f64, cells: &mut Counter) -> std::result::Result<Est, Stop>
where
    F: FnMut(f64) -> std::result::Result<Est, Stop>,
{
    let (est, err) = gk15(f, a, b)?;
    cells.0 += 1;
    let mut heap = BinaryHeap::new();
    heap.push(Interval { a, b, est, err });
    let mut total = est;
    let mut total_err = err;
    let mut n = 1;
    // consecutive splits at each endpoint whose end piece did not shrink
    let mut stalled = [0usize; 2];
    while total_err > rel_tol * total.value.abs() && total_err > 1e-300 {
        if n >= MAX_INTERVALS {
            return Err(Stop::Budget(format!(
                "adaptive rule exhausted {MAX_INTERVALS} intervals on [{a}, {b}] (error {total_err:e})"
            )));
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point
            heap.push(worst);
            break;
        }
        let (l, le) = gk15(f, worst.a, mid)?;
        let (r, re) = gk15(f, mid, worst.b)?;
        cells.0 += 2;
        n += 1;
        for (side, at_end, piece) in [(0, worst.a == a, l.value), (1, worst.b == b, r.value)] {
            if at_end {
                let shrank = piece.abs() < (1.0 - 1e-6) * worst.est.value.abs();
                stalled[side] = if shrank { 0 } else { stalled[side] + 1 };
                if stalled[side] >= ENDPOINT_STALL {
                    return Err(Stop::Divergent);
                }
            }
        }
        total.value += l.value + r.value - worst.est.value;
        total.error += l.error + r.error - worst.est.error;
        total_err += le + re - worst.err;
        heap.push(Interval { a: worst.a, b: mid, est: l, err: le });
        heap.push(Interval { a: mid, b: worst.b, est: r, err: re });
    }
    // re-sum to avoid drift from incremental updates
    let mut v = 0.0;
    let mut e = 0.0;
    let mut ce = 0.0;
    for iv in heap.iter() {
        v += iv.est.value;
        e += iv.err;
        ce += iv.est.error;
    }
    Ok(Est { value: v, error: e + ce })
}

/// Integral over `[0, 1]` with geometric strips toward 0.
fn geometric<F>(f: &mut F, rel_tol: f64, cells: &mut Counter) -> std::result::Result<Est, Stop>
where
    F: FnMut(f64) -> std::result::Result<Est, Stop>,
{
    let strip_tol = 0.05 * rel_tol;
    let mut contributions: Vec<f64> = Vec::new();
    let mut partial_abs: Vec<f64> = Vec::new();
    let mut sum = 0.0;
    let mut err = 0.0;
    let mut hi = 1.0;
    let mut nondecreasing_run = 0usize;
    for k in 0..MAX_STRIPS {
        let lo = hi * STRIP_RATIO;
        let strip = adaptive(f, lo, hi, strip_tol, cells)?;
        hi = lo;
        sum += strip.value;
        err += strip.error;
        let c = strip.value;
        let prev_abs = partial_abs.last().copied().unwrap_or(0.0);
        partial_abs.push(prev_abs + c.abs());
        contributions.push(c);

        if k == 0 {
            continue;
        }
        let a_prev = contributions[k - 1].abs();
        if c.abs() == 0.0 && a_prev == 0.0 {
            return Ok(Est { value: sum, error: err + 10.0 * f64::EPSILON * partial_abs[k] });
        }
        let ratio = if a_prev > 0.0 { c.abs() / a_prev } else { f64::INFINITY };
        if ratio >= 1.0 - 1e-6 {
            nondecreasing_run += 1;
        } else {
            nondecreasing_run = 0;
        }
        if k >= 3 && nondecreasing_run >= 3 && partial_abs[k] > DIVERGENCE_GROWTH * partial_abs[k - 3] {
            return Err(Stop::Divergent);
        }
        if nondecreasing_run >= 16 {
            // logarithmic growth
            return Err(Stop::Divergent);
        }
        if k < 3 || ratio >= 1.0 {
            continue;
        }
        let scale = sum.abs().max(1e-300);
        let prev_ratio = contributions[k - 1].abs() / contributions[k - 2].abs().max(1e-300);
        let tail = c * ratio / (1.0 - ratio);
        let stable = (ratio - prev_ratio).abs() <= 0.05;
        if stable && tail.abs() <= 0.1 * rel_tol * scale {
            let drift = (ratio - prev_ratio).abs() / (1.0 - ratio);
            let tail_err = tail.abs() * (2.0 * drift + 1e-2) + 10.0 * f64::EPSILON * partial_abs[k];
            return Ok(Est { value: sum + tail, error: err + tail_err });
        }
        if c.abs() <= 1e-4 * rel_tol * scale && ratio < 0.9 {
            let bound = c.abs() * 10.0;
            return Ok(Est { value: sum, error: err + bound + 10.0 * f64::EPSILON * partial_abs[k] });
        }
    }
    Err(Stop::Budget(format!(
        "geometric refinement reached {MAX_STRIPS} generations without a verdict (partial sum {sum:e})"
    )))
}

fn integrate_1d<F>(f: &mut F, singular_at_zero: bool, rel_tol: f64, cells: &mut Counter) -> std::result::Result<Est, Stop>
where
    F: FnMut(f64) -> std::result::Result<Est, Stop>,
{
    if singular_at_zero {
        geometric(f, rel_tol, cells)
    } else {
        adaptive(f, 0.0, 1.0, rel_tol, cells)
    }
}

fn integrate_patch<F>(field: &F, patch: &Patch, rel_tol: f64) -> (std::result::Result<Est, Stop>, usize)
where
    F: Fn(PlanarPoint) -> f64 + Sync + ?Sized,
{
    let mut cells = Counter(0);
    let s_singular = patch.s0_at_origin();
    let t_singular = patch.t0_on_axis();
    let inner_tol = 0.1 * rel_tol;
    let mut inner_cells = Counter(0);
    let res = {
        let mut outer = |t: f64| -> std::result::Result<Est, Stop> {
            let mut leaf = |s: f64| -> std::result::Result<Est, Stop> {
                let (p, w) = patch.map(s, t);
                let v = if w == 0.0 { 0.0 } else { field(p) * w };
                if v.is_finite() {
                    Ok(Est { value: v, error: 0.0 })
                } else if v.is_nan() {
                    Err(Stop::Budget(format!("field is not finite at ({}, {})", p.x, p.y)))
                } else {
                    Err(Stop::Divergent)
                }
            };
            integrate_1d(&mut leaf, s_singular, inner_tol, &mut inner_cells)
        };
        integrate_1d(&mut outer, t_singular, 0.5 * rel_tol, &mut cells)
    };
    (res, cells.0 + inner_cells.0)
}

/// Integrates `field` over explicit patches; patches are processed in
/// parallel and reduced in order.
pub fn integrate_patches<F>(field: &F, patches: &[Patch], rel_tol: f64) -> Result<QuadratureResult>
where
    F: Fn(PlanarPoint) -> f64 + Sync + ?Sized,
{
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::Parameter(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    let results: Vec<_> = patches.par_iter().map(|p| integrate_patch(field, p, rel_tol)).collect();
    let cells: usize = results.iter().map(|r| r.1).sum();
    let mut value = 0.0;
    let mut error = 0.0;
    let mut budget: Option<String> = None;
    for (res, _) in results {
        match res {
            Ok(e) => {
                value += e.value;
                error += e.error;
            }
            Err(Stop::Divergent) => return Ok(QuadratureResult::divergent(cells)),
            Err(Stop::Budget(msg)) => budget = budget.or(Some(msg)),
        }
    }
    if let Some(msg) = budget {
        return Err(Error::Inconclusive(msg));
    }
    let error = error.max(4.0 * f64::EPSILON * value.abs());
    if error > 10.0 * rel_tol * value.abs() && error > 1e-14 {
        return Err(Error::Inconclusive(format!(
            "error estimate {error:e} exceeds tolerance for value {value:e}"
        )));
    }
    Ok(QuadratureResult { value, error_estimate: error, cells_used: cells, converged: true, divergent: false })
}

/// Integrates a pointwise field over a builtin domain.
pub fn integrate<F>(field: &F, domain: &DomainSpec, rel_tol: f64) -> Result<QuadratureResult>
where
    F: Fn(PlanarPoint) -> f64 + Sync + ?Sized,
{
    integrate_patches(field, &domain.patches(), rel_tol)
}

/// Integrates over the box `[x0,x1] × [y0,y1]`.
pub fn integrate_box<F>(field: &F, x0: f64, x1: f64, y0: f64, y1: f64, rel_tol: f64) -> Result<QuadratureResult>
where
    F: Fn(PlanarPoint) -> f64 + Sync + ?Sized,
{
    use crate::domain::Boundary::Const;
    // orient so that an edge lying on y = 0 becomes t = 0
    let (lo, hi) = if y1 == 0.0 { (y1, y0) } else { (y0, y1) };
    let patch = Patch::Vertical { x0, x1, lower: Const(lo), upper: Const(hi) };
    integrate_patches(field, &[patch], rel_tol)
}

// ---------------------------------------------------------------------------
// Composition-operator norm bounds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Numerical integration with divergence detection.
    #[default]
    Quadrature,
    /// Formal closed-form antiderivative of the cusp integral.
    Antiderivative,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quadrature" => Ok(Self::Quadrature),
            "antiderivative" => Ok(Self::Antiderivative),
            _ => Err(Error::parse("evaluation mode", s, "expected quadrature or antiderivative")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormOptions {
    pub rel_tol: f64,
    /// Multiplies the integral, e.g. 4 for the one-triangle-per-quadrant
    /// reduction of the cusp integral.
    pub multiplicity: f64,
    pub mode: EvalMode,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-9, multiplicity: 1.0, mode: EvalMode::Quadrature }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrandKind {
    /// `K_p` in `L_κ` over the source domain.
    KpSource,
    /// `H_q` in `L_κ` over the target domain.
    HqTarget,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorNormReport {
    #[serde(with = "serde_inf")]
    pub p: f64,
    pub q: f64,
    #[serde(with = "serde_inf")]
    pub kappa: f64,
    #[serde(with = "serde_inf")]
    pub norm_bound: f64,
    pub integrand_kind: IntegrandKind,
    pub quadrature: QuadratureResult,
}

/// Integrability exponent with `1/q − 1/p = 1/κ`.
pub fn kappa(p: f64, q: f64) -> Result<f64> {
    if !(q >= 1.0 && q.is_finite()) || p.is_nan() || p < q {
        return Err(Error::Parameter(format!("need 1 <= q <= p <= inf, got p={p}, q={q}")));
    }
    Ok(if p == q {
        f64::INFINITY
    } else if p.is_infinite() {
        q
    } else {
        p * q / (p - q)
    })
}

fn kp_value(jac: &JacobianData, p: f64, conv: NormConvention) -> f64 {
    if p.is_infinite() {
        jac.norm(conv)
    } else {
        jac.dilatation(DilatationKind::PDil(p), conv, 1.0)
    }
}

/// Formal closed form of `∫ (|Dφ|_F² / J)` for the cusp map over the
/// triangle `0 ≤ y ≤ x ≤ 1`: `1/(α(2−α)(3−α)) + 1/(α+1)`.
pub fn cusp_triangle_integral(alpha: f64) -> Result<f64> {
    if (alpha - 2.0).abs() < 1e-12 || (alpha - 3.0).abs() < 1e-12 {
        return Err(Error::Pole(alpha));
    }
    Ok(1.0 / (alpha * (2.0 - alpha) * (3.0 - alpha)) + 1.0 / (alpha + 1.0))
}

fn antiderivative_integral(map: &MappingSpec, domain: &DomainSpec, p: f64, q: f64, conv: NormConvention) -> Result<f64> {
    let alpha = match map {
        MappingSpec::HolderCusp { alpha } => *alpha,
        _ => return Err(Error::Unsupported("antiderivative mode is only defined for the cusp map".into())),
    };
    if p != 2.0 || q != 1.0 || conv != NormConvention::Frobenius {
        return Err(Error::Unsupported(
            "antiderivative mode covers p = 2, q = 1 with the Frobenius norm only".into(),
        ));
    }
    // The integrand depends on y alone, and each diamond quadrant carries the
    // same weight (1 − y) in y as the triangle.
    let copies = match domain {
        DomainSpec::PaperTriangle => 1.0,
        DomainSpec::Diamond => 4.0,
        _ => return Err(Error::Unsupported(format!("antiderivative mode is not available on {domain}"))),
    };
    Ok(copies * cusp_triangle_integral(alpha)?)
}

fn finish_report(
    p: f64,
    q: f64,
    kappa: f64,
    integrand_kind: IntegrandKind,
    quadrature: QuadratureResult,
    multiplicity: f64,
) -> OperatorNormReport {
    let norm_bound = if quadrature.divergent {
        f64::INFINITY
    } else if kappa.is_infinite() {
        quadrature.value
    } else {
        (multiplicity * quadrature.value).powf(1.0 / kappa)
    };
    OperatorNormReport { p, q, kappa, norm_bound, integrand_kind, quadrature }
}

/// `‖K_p | L_κ(Ω)‖` for the composition operator `L¹_p → L¹_q`.
pub fn composition_norm_bound(
    map: &MappingSpec,
    domain: &DomainSpec,
    p: f64,
    q: f64,
    convention: NormConvention,
    opts: &NormOptions,
) -> Result<OperatorNormReport> {
    let kappa = kappa(p, q)?;
    if opts.mode == EvalMode::Antiderivative {
        let v = antiderivative_integral(map, domain, p, q, convention)?;
        return Ok(finish_report(p, q, kappa, IntegrandKind::KpSource, QuadratureResult::exact(v), opts.multiplicity));
    }
    let kp = |x: PlanarPoint| -> Option<f64> {
        map.derivative(x).ok().map(|m| kp_value(&JacobianData::from_matrix(m), p, convention))
    };
    let quad = if kappa.is_infinite() {
        grid_supremum(domain, &|x| kp(x), opts.rel_tol.max(1e-6))?
    } else {
        integrate(&|x: PlanarPoint| kp(x).map_or(f64::NAN, |v| v.powf(kappa)), domain, opts.rel_tol)?
    };
    Ok(finish_report(p, q, kappa, IntegrandKind::KpSource, quad, opts.multiplicity))
}

/// `‖H_q | L_κ(Ω̃)‖` over the target domain, pulling points back through the
/// analytic inverse.
pub fn h_norm_bound(
    map: &MappingSpec,
    target: &DomainSpec,
    p: f64,
    q: f64,
    convention: NormConvention,
    opts: &NormOptions,
) -> Result<OperatorNormReport> {
    let kappa = kappa(p, q)?;
    if p.is_infinite() {
        return Err(Error::Parameter("h_norm_bound requires p < inf".into()));
    }
    if opts.mode == EvalMode::Antiderivative {
        return Err(Error::Unsupported("antiderivative mode is not defined for H_q".into()));
    }
    let hq = |y: PlanarPoint| -> Option<f64> {
        let x = map.apply_inverse(y);
        map.derivative(x)
            .ok()
            .map(|m| JacobianData::from_matrix(m).dilatation(DilatationKind::Hq(q), convention, 1.0))
    };
    let quad = if kappa.is_infinite() {
        grid_supremum(target, &|y| hq(y), opts.rel_tol.max(1e-6))?
    } else {
        integrate(&|y: PlanarPoint| hq(y).map_or(f64::NAN, |v| v.powf(kappa)), target, opts.rel_tol)?
    };
    Ok(finish_report(p, q, kappa, IntegrandKind::HqTarget, quad, opts.multiplicity))
}

// ---------------------------------------------------------------------------
// Suprema on nested grids

const SUP_FIRST_LEVEL: u32 = 3;
const SUP_MAX_LEVEL: u32 = 10;

/// Maximum of `f` over grid nodes of the domain's bounding box at dyadic
/// level `level`; points where `f` is undefined are skipped.
fn grid_max<F>(domain: &DomainSpec, f: &F, level: u32) -> f64
where
    F: Fn(PlanarPoint) -> Option<f64> + Sync + ?Sized,
{
    let bb = domain.bbox();
    let n = 1usize << level;
    (0..=n)
        .into_par_iter()
        .map(|i| {
            let x = bb.x0 + bb.width() * i as f64 / n as f64;
            let mut m = f64::NEG_INFINITY;
            for j in 0..=n {
                let y = bb.y0 + bb.height() * j as f64 / n as f64;
                let pt = PlanarPoint::new(x, y);
                if domain.contains(pt) {
                    if let Some(v) = f(pt) {
                        if v.is_finite() {
                            m = m.max(v);
                        }
                    }
                }
            }
            m
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Supremum on nested dyadic grids; converged when two successive levels
/// agree within `rel_tol`.
pub fn grid_supremum<F>(domain: &DomainSpec, f: &F, rel_tol: f64) -> Result<QuadratureResult>
where
    F: Fn(PlanarPoint) -> Option<f64> + Sync + ?Sized,
{
    let mut history: Vec<f64> = Vec::new();
    let mut cells = 0usize;
    for level in SUP_FIRST_LEVEL..=SUP_MAX_LEVEL {
        let v = grid_max(domain, f, level);
        cells += ((1usize << level) + 1).pow(2);
        if !v.is_finite() {
            return Err(Error::Inconclusive(format!("no admissible sample on {domain} at level {level}")));
        }
        if let Some(&prev) = history.last() {
            let diff = (v - prev).abs();
            if diff <= rel_tol * v.abs().max(f64::MIN_POSITIVE) {
                return Ok(QuadratureResult {
                    value: v,
                    error_estimate: diff,
                    cells_used: cells,
                    converged: true,
                    divergent: false,
                });
            }
        }
        history.push(v);
        let k = history.len();
        if k >= 4 && history[k - 1] > DIVERGENCE_GROWTH * history[k - 4] {
            return Ok(QuadratureResult::divergent(cells));
        }
    }
    Err(Error::Inconclusive(format!(
        "supremum on {domain} still moving at level {SUP_MAX_LEVEL}: {history:?}"
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupFunctional {
    /// `sup |J|^{1/2}`.
    JacSqrtSup,
    /// `sup |Dφ| / |J|`.
    NormOverJacSup,
}

impl std::str::FromStr for SupFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "jac-sqrt" | "jac_sqrt_sup" => Ok(Self::JacSqrtSup),
            "norm-over-jac" | "norm_over_jac_sup" => Ok(Self::NormOverJacSup),
            _ => Err(Error::parse("sup functional", s, "expected jac-sqrt or norm-over-jac")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SupMode {
    /// Closed form when one is known, grid otherwise.
    #[default]
    Auto,
    Grid,
}

fn sup_shortcut(map: &MappingSpec, domain: &DomainSpec, functional: SupFunctional, conv: NormConvention) -> Option<f64> {
    match (map, functional) {
        (MappingSpec::Identity, SupFunctional::JacSqrtSup) => Some(1.0),
        (MappingSpec::Identity, SupFunctional::NormOverJacSup) => Some(match conv {
            NormConvention::Spectral => 1.0,
            NormConvention::Frobenius => 2f64.sqrt(),
        }),
        (MappingSpec::Affine { matrix, .. }, _) => {
            let j = JacobianData::from_matrix(*matrix);
            Some(match functional {
                SupFunctional::JacSqrtSup => j.det.abs().sqrt(),
                SupFunctional::NormOverJacSup => j.norm(conv) / j.det.abs(),
            })
        }
        (MappingSpec::RadialSquareDisk, _) => {
            // l = r/(|x|+|y|) ranges over [1/√2, 1] on any disk centered at
            // the origin; |Dψ|_F / J = √(1/l² + 2).
            match *domain {
                DomainSpec::Disk { cx, cy, radius } if cx == 0.0 && cy == 0.0 && radius <= 1.0 => match functional {
                    SupFunctional::JacSqrtSup => Some(1.0),
                    SupFunctional::NormOverJacSup if conv == NormConvention::Frobenius => Some(2.0),
                    SupFunctional::NormOverJacSup => None,
                },
                _ => None,
            }
        }
        (MappingSpec::HolderCusp { alpha }, SupFunctional::JacSqrtSup) => {
            let bb = domain.bbox();
            let ymax = bb.y0.abs().max(bb.y1.abs());
            // every builtin domain attains its extreme |y| at some point
            Some((alpha * ymax.powf(alpha - 1.0)).sqrt())
        }
        _ => None,
    }
}

/// Supremum functionals of the derivative over a domain.
pub fn sup_functional(
    map: &MappingSpec,
    domain: &DomainSpec,
    functional: SupFunctional,
    convention: NormConvention,
    mode: SupMode,
    rel_tol: f64,
) -> Result<f64> {
    if mode == SupMode::Auto {
        if let Some(v) = sup_shortcut(map, domain, functional, convention) {
            return Ok(v);
        }
    }
    let f = |x: PlanarPoint| -> Option<f64> {
        let j = JacobianData::from_matrix(map.derivative(x).ok()?);
        match functional {
            SupFunctional::JacSqrtSup => Some(j.det.abs().sqrt()),
            SupFunctional::NormOverJacSup => (j.det != 0.0).then(|| j.norm(convention) / j.det.abs()),
        }
    };
    let r = grid_supremum(domain, &f, rel_tol)?;
    if r.divergent {
        return Err(Error::Inconclusive(format!("supremum on {domain} is unbounded")));
    }
    Ok(r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    /// `∫₀¹ dx ∫₀ˣ g(y) dy = ∫₀¹ (1 − y) g(y) dy` for g = y^β.
    fn triangle_power(beta: f64) -> f64 {
        1.0 / (beta + 1.0) - 1.0 / (beta + 2.0)
    }

    #[test]
    fn constant_over_unit_square() {
        let r = integrate(&|_| 1.0, &DomainSpec::UnitSquare, 1e-10).unwrap();
        assert!((r.value - 1.0).abs() <= 1e-12);
        assert!(r.error_estimate <= 1e-12, "{r:?}");
        assert!(r.converged && !r.divergent);
    }

    #[test]
    fn areas_of_builtin_domains() {
        for d in [
            DomainSpec::UnitSquare,
            DomainSpec::Diamond,
            DomainSpec::disk(0.7).unwrap(),
            DomainSpec::cusp_domain(1.5).unwrap(),
            DomainSpec::cusp_domain(4.0).unwrap(),
            DomainSpec::PaperTriangle,
            DomainSpec::rect(2.0, 0.5).unwrap(),
        ] {
            let r = integrate(&|_| 1.0, &d, 1e-10).unwrap();
            assert!(close(r.value, d.area(), 1e-9), "{d}: {} vs {}", r.value, d.area());
        }
    }

    #[test]
    fn singular_field_on_triangle() {
        let alpha: f64 = 1.5;
        let field = |p: PlanarPoint| p.y.powf(1.0 - alpha) / alpha + alpha * p.y.powf(alpha - 1.0);
        let r = integrate(&field, &DomainSpec::PaperTriangle, 1e-10).unwrap();
        // oracle: termwise power integrals of the weight (1 - y)
        let exact = triangle_power(1.0 - alpha) / alpha + alpha * triangle_power(alpha - 1.0);
        assert!(close(exact, 1.0 / (alpha * (2.0 - alpha) * (3.0 - alpha)) + 1.0 / (alpha + 1.0), 1e-15));
        assert!(close(r.value, exact, 1e-9), "{} vs {exact}", r.value);
        assert!((r.value - exact).abs() <= 3.0 * r.error_estimate);
    }

    #[test]
    fn non_integrable_field_is_divergent() {
        let alpha: f64 = 2.5;
        let field = |p: PlanarPoint| p.y.powf(1.0 - alpha) / alpha + alpha * p.y.powf(alpha - 1.0);
        let r = integrate(&field, &DomainSpec::PaperTriangle, 1e-8).unwrap();
        assert!(r.divergent && !r.converged);
        assert_eq!(r.value, f64::INFINITY);
        let log = integrate(&|p: PlanarPoint| 1.0 / p.y, &DomainSpec::UnitSquare, 1e-8).unwrap();
        assert!(log.divergent);
    }

    #[test]
    fn far_edge_singularity_is_divergent() {
        let t = std::time::Instant::now();
        let r = integrate(&|p: PlanarPoint| (1.0 - p.x).powi(-2), &DomainSpec::UnitSquare, 1e-10).unwrap();
        assert!(r.divergent);
        let ok = integrate(&|p: PlanarPoint| (1.0 - p.x).sqrt(), &DomainSpec::UnitSquare, 1e-10).unwrap();
        assert!((ok.value - 2.0 / 3.0).abs() < 1e-9, "{}", ok.value);
        assert!(t.elapsed().as_secs_f64() < 5.0);
    }

    #[test]
    fn error_contract_on_power_fields() {
        for beta in [-0.9, -0.5, 0.0, 0.5, 2.0, 3.0] {
            let r = integrate(&|p: PlanarPoint| p.y.powf(beta), &DomainSpec::UnitSquare, 1e-9).unwrap();
            let exact = 1.0 / (beta + 1.0);
            assert!((r.value - exact).abs() <= 3.0 * r.error_estimate, "beta {beta}: {} vs {exact}", r.value);
            let r = integrate(&|p: PlanarPoint| p.y.powf(beta), &DomainSpec::PaperTriangle, 1e-9).unwrap();
            let exact = triangle_power(beta);
            assert!((r.value - exact).abs() <= 3.0 * r.error_estimate, "beta {beta}");
        }
        let poly = |p: PlanarPoint| 3.0 * p.x * p.x * p.y + p.x - 2.0 * p.y * p.y * p.y;
        let r = integrate(&poly, &DomainSpec::rect(2.0, 1.0).unwrap(), 1e-10).unwrap();
        // ∫∫ over [0,2]x[0,1]: 3·(8/3)(1/2) + 2·1 − 2·2·(1/4) = 4 + 2 − 1
        assert!((r.value - 5.0).abs() <= 3.0 * r.error_estimate.max(1e-15));
    }

    #[test]
    fn monotone_in_domain() {
        let f = |p: PlanarPoint| (p.x * p.y).abs().sqrt() + 0.1;
        let small = integrate(&f, &DomainSpec::rect(1.0, 1.0).unwrap(), 1e-9).unwrap();
        let big = integrate(&f, &DomainSpec::rect(1.0, 2.0).unwrap(), 1e-9).unwrap();
        assert!(big.value >= small.value);
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(integrate(&|_| 1.0, &DomainSpec::UnitSquare, 0.0).is_err());
        assert!(integrate(&|_| 1.0, &DomainSpec::UnitSquare, 1.0).is_err());
    }

    #[test]
    fn box_integration_with_axis_edge() {
        let r = integrate_box(&|p: PlanarPoint| p.y.abs().powf(-0.5), 0.0, 2.0, -1.0, 0.0, 1e-10).unwrap();
        assert!(close(r.value, 4.0, 1e-9), "{}", r.value);
    }

    #[test]
    fn kappa_arithmetic() {
        assert_eq!(kappa(2.0, 1.0).unwrap(), 2.0);
        assert_eq!(kappa(2.0, 2.0).unwrap(), f64::INFINITY);
        assert_eq!(kappa(f64::INFINITY, 1.5).unwrap(), 1.5);
        assert!(kappa(1.0, 2.0).is_err());
        assert!(kappa(2.0, 0.5).is_err());
    }

    #[test]
    fn identity_norm_bounds() {
        let o = NormOptions::default();
        let r = composition_norm_bound(&MappingSpec::Identity, &DomainSpec::UnitSquare, 2.0, 2.0, NormConvention::Spectral, &o).unwrap();
        assert_eq!(r.norm_bound, 1.0);
        assert_eq!(r.kappa, f64::INFINITY);
        for d in [DomainSpec::Diamond, DomainSpec::disk(1.0).unwrap(), DomainSpec::cusp_domain(1.5).unwrap()] {
            let r = composition_norm_bound(&MappingSpec::Identity, &d, 3.0, 1.5, NormConvention::Spectral, &o).unwrap();
            assert!(close(r.norm_bound, d.area().powf(1.0 / r.kappa), 1e-9), "{d}");
        }
    }

    #[test]
    fn scaling_invariant_of_affine_maps() {
        let o = NormOptions::default();
        let d = DomainSpec::Diamond;
        for s in [0.5, 2.0] {
            let m = MappingSpec::diag(s, s).unwrap();
            for (p, q) in [(3.0, 1.0), (2.0, 1.5)] {
                let r = composition_norm_bound(&m, &d, p, q, NormConvention::Spectral, &o).unwrap();
                let expect = d.area().powf(1.0 / r.kappa) * s.powf(1.0 - 2.0 / p);
                assert!(close(r.norm_bound, expect, 1e-9), "s={s} p={p}: {} vs {expect}", r.norm_bound);
            }
        }
    }

    #[test]
    fn cusp_k_integral_quadrature_and_antiderivative() {
        let quad = NormOptions { rel_tol: 1e-10, multiplicity: 4.0, mode: EvalMode::Quadrature };
        let anti = NormOptions { mode: EvalMode::Antiderivative, ..quad };
        let m = MappingSpec::cusp(1.5).unwrap();
        let fro = NormConvention::Frobenius;
        let q = composition_norm_bound(&m, &DomainSpec::PaperTriangle, 2.0, 1.0, fro, &quad).unwrap();
        let a = composition_norm_bound(&m, &DomainSpec::PaperTriangle, 2.0, 1.0, fro, &anti).unwrap();
        assert!(close(a.norm_bound, (4.0 * (1.0 / (1.5 * 0.5 * 1.5) + 0.4f64)).sqrt(), 1e-14));
        assert!(close(q.norm_bound, a.norm_bound, 1e-8), "{} vs {}", q.norm_bound, a.norm_bound);
        assert!((q.norm_bound - 2.2706).abs() < 1e-4);

        let m4 = MappingSpec::cusp(4.0).unwrap();
        let a4 = composition_norm_bound(&m4, &DomainSpec::PaperTriangle, 2.0, 1.0, fro, &anti).unwrap();
        assert!(close(a4.norm_bound, 1.3f64.sqrt(), 1e-14));
        let q4 = composition_norm_bound(&m4, &DomainSpec::PaperTriangle, 2.0, 1.0, fro, &quad).unwrap();
        assert!(q4.quadrature.divergent && q4.norm_bound.is_infinite());
        assert!(composition_norm_bound(&MappingSpec::cusp(2.0).unwrap(), &DomainSpec::PaperTriangle, 2.0, 1.0, fro, &anti).is_err());
    }

    #[test]
    fn cusp_integral_over_diamond_equals_four_triangles() {
        let o = NormOptions { rel_tol: 1e-10, ..Default::default() };
        let m = MappingSpec::cusp(1.2).unwrap();
        let r = composition_norm_bound(&m, &DomainSpec::Diamond, 2.0, 1.0, NormConvention::Frobenius, &o).unwrap();
        let expect = (4.0 * cusp_triangle_integral(1.2).unwrap()).sqrt();
        assert!(close(r.norm_bound, expect, 1e-8));
    }

    #[test]
    fn h_norm_examples() {
        let o = NormOptions::default();
        let r = h_norm_bound(&MappingSpec::Identity, &DomainSpec::UnitSquare, 2.0, 1.0, NormConvention::Spectral, &o).unwrap();
        assert!(close(r.norm_bound, 1.0, 1e-12));
        let a = MappingSpec::diag(2.0, 1.0).unwrap();
        let r = h_norm_bound(&a, &DomainSpec::rect(2.0, 1.0).unwrap(), 2.0, 2.0, NormConvention::Spectral, &o).unwrap();
        assert!(close(r.norm_bound, 2f64.sqrt(), 1e-12));
    }

    #[test]
    fn h_norm_matches_source_integral_by_change_of_variables() {
        let o = NormOptions { rel_tol: 1e-9, ..Default::default() };
        let m = MappingSpec::cusp(1.5).unwrap();
        for conv in [NormConvention::Frobenius, NormConvention::Spectral] {
            let h = h_norm_bound(&m, &DomainSpec::cusp_domain(1.5).unwrap(), 2.0, 1.0, conv, &o).unwrap();
            let k = composition_norm_bound(&m, &DomainSpec::Diamond, 2.0, 1.0, conv, &o).unwrap();
            assert!(h.norm_bound.is_finite());
            assert!(close(h.norm_bound, k.norm_bound, 1e-7), "{conv:?}: {} vs {}", h.norm_bound, k.norm_bound);
        }
    }

    #[test]
    fn sup_functionals() {
        let disk = DomainSpec::disk(1.0).unwrap();
        let r = MappingSpec::RadialSquareDisk;
        let fro = NormConvention::Frobenius;
        for mode in [SupMode::Auto, SupMode::Grid] {
            let j = sup_functional(&r, &disk, SupFunctional::JacSqrtSup, fro, mode, 1e-6).unwrap();
            let n = sup_functional(&r, &disk, SupFunctional::NormOverJacSup, fro, mode, 1e-6).unwrap();
            assert!((j - 1.0).abs() < 1e-3 && (n - 2.0).abs() < 1e-3, "{mode:?}: {j} {n}");
        }
        let c = MappingSpec::cusp(4.0).unwrap();
        for mode in [SupMode::Auto, SupMode::Grid] {
            let v = sup_functional(&c, &DomainSpec::Diamond, SupFunctional::JacSqrtSup, fro, mode, 1e-6).unwrap();
            assert!((v - 2.0).abs() < 1e-9, "{mode:?}: {v}");
        }
    }
}
