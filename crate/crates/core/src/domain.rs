//! Builtin planar regions: membership, measure, and an exact decomposition
//! into parametrized patches for quadrature.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mapping::PlanarPoint;

const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DomainSpec {
    /// `[0,1]²`.
    UnitSquare,
    /// `|x| + |y| ≤ 1`.
    Diamond,
    Disk { cx: f64, cy: f64, radius: f64 },
    /// `|u| + |v|^{1/alpha} ≤ 1`, the image of the diamond under the cusp map.
    CuspDomain { alpha: f64 },
    /// `0 ≤ y ≤ x ≤ 1`.
    PaperTriangle,
    /// `[0,w] × [0,h]`.
    Rect { w: f64, h: f64 },
}

/// Axis-aligned bounding box `[x0,x1] × [y0,y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, p: PlanarPoint) -> bool {
        p.x >= self.x0 - EPS && p.x <= self.x1 + EPS && p.y >= self.y0 - EPS && p.y <= self.y1 + EPS
    }
}

impl DomainSpec {
    pub fn disk(radius: f64) -> Result<Self> {
        let d = DomainSpec::Disk { cx: 0.0, cy: 0.0, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn rect(w: f64, h: f64) -> Result<Self> {
        let d = DomainSpec::Rect { w, h };
        d.validate()?;
        Ok(d)
    }

    pub fn cusp_domain(alpha: f64) -> Result<Self> {
        let d = DomainSpec::CuspDomain { alpha };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match *self {
            DomainSpec::Disk { cx, cy, radius } => cx.is_finite() && cy.is_finite() && positive(radius),
            DomainSpec::CuspDomain { alpha } => alpha.is_finite() && alpha > 1.0,
            DomainSpec::Rect { w, h } => positive(w) && positive(h),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid domain {self}")))
        }
    }

    pub fn contains(&self, p: PlanarPoint) -> bool {
        let (x, y) = (p.x, p.y);
        match *self {
            DomainSpec::UnitSquare => (-EPS..=1.0 + EPS).contains(&x) && (-EPS..=1.0 + EPS).contains(&y),
            DomainSpec::Rect { w, h } => (-EPS..=w + EPS).contains(&x) && (-EPS..=h + EPS).contains(&y),
            DomainSpec::Diamond => x.abs() + y.abs() <= 1.0 + EPS,
            DomainSpec::Disk { cx, cy, radius } => (x - cx).hypot(y - cy) <= radius * (1.0 + EPS),
            DomainSpec::CuspDomain { alpha } => x.abs() + y.abs().powf(1.0 / alpha) <= 1.0 + EPS,
            DomainSpec::PaperTriangle => y >= -EPS && y <= x + EPS && x <= 1.0 + EPS,
        }
    }

    pub fn bbox(&self) -> BoundingBox {
        let bb = |x0, x1, y0, y1| BoundingBox { x0, x1, y0, y1 };
        match *self {
            DomainSpec::UnitSquare | DomainSpec::PaperTriangle => bb(0.0, 1.0, 0.0, 1.0),
            DomainSpec::Rect { w, h } => bb(0.0, w, 0.0, h),
            DomainSpec::Diamond | DomainSpec::CuspDomain { .. } => bb(-1.0, 1.0, -1.0, 1.0),
            DomainSpec::Disk { cx, cy, radius } => bb(cx - radius, cx + radius, cy - radius, cy + radius),
        }
    }

    /// Exact Lebesgue measure.
    pub fn area(&self) -> f64 {
        match *self {
            DomainSpec::UnitSquare => 1.0,
            DomainSpec::Rect { w, h } => w * h,
            DomainSpec::Diamond => 2.0,
            DomainSpec::Disk { radius, .. } => PI * radius * radius,
            DomainSpec::CuspDomain { alpha } => 4.0 / (alpha + 1.0),
            DomainSpec::PaperTriangle => 0.5,
        }
    }

    /// Reference point used to measure boundary angles.
    pub fn center(&self) -> PlanarPoint {
        match *self {
            DomainSpec::Disk { cx, cy, .. } => PlanarPoint::new(cx, cy),
            DomainSpec::PaperTriangle => PlanarPoint::new(2.0 / 3.0, 1.0 / 3.0),
            _ => {
                let b = self.bbox();
                PlanarPoint::new(0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1))
            }
        }
    }

    /// Decomposition into patches whose edges follow the coordinate axes, so
    /// that the axis `y = 0` and the origin only ever appear on patch edges.
    pub fn patches(&self) -> Vec<Patch> {
        use Boundary::*;
        let vertical = |x0, x1, lower, upper| Patch::Vertical { x0, x1, lower, upper };
        match *self {
            DomainSpec::UnitSquare => vec![vertical(0.0, 1.0, Const(0.0), Const(1.0))],
            DomainSpec::Rect { w, h } => vec![vertical(0.0, w, Const(0.0), Const(h))],
            DomainSpec::PaperTriangle => vec![vertical(0.0, 1.0, Const(0.0), Linear { a: 0.0, b: 1.0 })],
            DomainSpec::Diamond => [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .into_iter()
                .map(|(sx, sy)| vertical(0.0, sx, Const(0.0), Linear { a: sy, b: -sx * sy }))
                .collect(),
            DomainSpec::CuspDomain { alpha } => [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .into_iter()
                .map(|(sx, sy)| vertical(0.0, sx, Const(0.0), CuspArc { alpha, sign: sy }))
                .collect(),
            DomainSpec::Disk { cx, cy, radius } => {
                // Each quarter starts at the horizontal ray so that t = 0 lies
                // on the line y = cy.
                [(0.0, FRAC_PI_2), (PI, FRAC_PI_2), (PI, 1.5 * PI), (2.0 * PI, 1.5 * PI)]
                    .into_iter()
                    .map(|(th0, th1)| Patch::Polar { cx, cy, radius, th0, th1 })
                    .collect()
            }
        }
    }
}

/// Lower or upper boundary curve of a vertical patch, as a function of `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Boundary {
    Const(f64),
    /// `a + b·x`.
    Linear { a: f64, b: f64 },
    /// `sign·(1 − |x|)^alpha`.
    CuspArc { alpha: f64, sign: f64 },
}

impl Boundary {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Boundary::Const(c) => c,
            Boundary::Linear { a, b } => a + b * x,
            Boundary::CuspArc { alpha, sign } => sign * (1.0 - x.abs()).max(0.0).powf(alpha),
        }
    }
}

/// A region parametrized by the unit square `(s, t) ∈ [0,1]²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Patch {
    /// `x = x0 + (x1-x0)s`, `y = lower(x) + (upper(x) - lower(x))t`.
    Vertical { x0: f64, x1: f64, lower: Boundary, upper: Boundary },
    /// `θ = th0 + (th1-th0)t`, point `c + radius·s·(cos θ, sin θ)`.
    Polar { cx: f64, cy: f64, radius: f64, th0: f64, th1: f64 },
}

impl Patch {
    /// Point and area element at parameter `(s, t)`.
    pub fn map(&self, s: f64, t: f64) -> (PlanarPoint, f64) {
        match *self {
            Patch::Vertical { x0, x1, lower, upper } => {
                let x = x0 + (x1 - x0) * s;
                let lo = lower.eval(x);
                let height = upper.eval(x) - lo;
                (PlanarPoint::new(x, lo + height * t), ((x1 - x0) * height).abs())
            }
            Patch::Polar { cx, cy, radius, th0, th1 } => {
                let th = th0 + (th1 - th0) * t;
                let rho = radius * s;
                (
                    PlanarPoint::new(cx + rho * th.cos(), cy + rho * th.sin()),
                    (radius * rho * (th1 - th0)).abs(),
                )
            }
        }
    }

    /// The edge `t = 0` lies on the axis `y = 0`.
    pub fn t0_on_axis(&self) -> bool {
        match *self {
            Patch::Vertical { lower, .. } => lower == Boundary::Const(0.0),
            Patch::Polar { cy, th0, .. } => cy == 0.0 && (th0 / PI).fract() == 0.0,
        }
    }

    /// The edge `s = 0` collapses to the origin.
    pub fn s0_at_origin(&self) -> bool {
        match *self {
            Patch::Vertical { x0, lower, upper, .. } => x0 == 0.0 && lower.eval(0.0) == 0.0 && upper.eval(0.0) == 0.0,
            Patch::Polar { cx, cy, .. } => cx == 0.0 && cy == 0.0,
        }
    }
}

fn parse_num(input: &str, t: &str) -> Result<f64> {
    match t.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse("domain", input, format!("bad number {t:?}"))),
    }
}

impl FromStr for DomainSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let d = match t {
            "unitsquare" => DomainSpec::UnitSquare,
            "diamond" => DomainSpec::Diamond,
            "paper-triangle" => DomainSpec::PaperTriangle,
            _ => {
                if let Some(rest) = t.strip_prefix("disk:") {
                    let (mut cx, mut cy, mut radius) = (0.0, 0.0, None);
                    for kv in rest.split(',') {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| Error::parse("domain", s, "expected key=value"))?;
                        match k.trim() {
                            "r" => radius = Some(parse_num(s, v)?),
                            "cx" => cx = parse_num(s, v)?,
                            "cy" => cy = parse_num(s, v)?,
                            other => return Err(Error::parse("domain", s, format!("unknown key {other}"))),
                        }
                    }
                    let radius = radius.ok_or_else(|| Error::parse("domain", s, "missing r="))?;
                    DomainSpec::Disk { cx, cy, radius }
                } else if let Some(rest) = t.strip_prefix("cusp-domain:") {
                    let v = rest
                        .trim()
                        .strip_prefix("alpha=")
                        .ok_or_else(|| Error::parse("domain", s, "expected cusp-domain:alpha=<real>"))?;
                    DomainSpec::CuspDomain { alpha: parse_num(s, v)? }
                } else if let Some(rest) = t.strip_prefix("rect:") {
                    let (w, h) = rest
                        .split_once('x')
                        .ok_or_else(|| Error::parse("domain", s, "expected rect:WxH"))?;
                    DomainSpec::Rect { w: parse_num(s, w)?, h: parse_num(s, h)? }
                } else {
                    return Err(Error::parse("domain", s, "unknown domain kind"));
                }
            }
        };
        d.validate()?;
        Ok(d)
    }
}

impl fmt::Display for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DomainSpec::UnitSquare => write!(f, "unitsquare"),
            DomainSpec::Diamond => write!(f, "diamond"),
            DomainSpec::PaperTriangle => write!(f, "paper-triangle"),
            DomainSpec::Disk { cx, cy, radius } => {
                write!(f, "disk:r={radius}")?;
                if cx != 0.0 || cy != 0.0 {
                    write!(f, ",cx={cx},cy={cy}")?;
                }
                Ok(())
            }
            DomainSpec::CuspDomain { alpha } => write!(f, "cusp-domain:alpha={alpha}"),
            DomainSpec::Rect { w, h } => write!(f, "rect:{w}x{h}"),
        }
    }
}

impl Serialize for DomainSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DomainSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [DomainSpec; 6] = [
        DomainSpec::UnitSquare,
        DomainSpec::Diamond,
        DomainSpec::Disk { cx: 0.0, cy: 0.0, radius: 1.0 },
        DomainSpec::CuspDomain { alpha: 1.5 },
        DomainSpec::PaperTriangle,
        DomainSpec::Rect { w: 1.0, h: 2.0 },
    ];

    #[test]
    fn parse_and_display() {
        let cases = [
            ("unitsquare", DomainSpec::UnitSquare),
            ("diamond", DomainSpec::Diamond),
            ("disk:r=1", DomainSpec::Disk { cx: 0.0, cy: 0.0, radius: 1.0 }),
            ("disk:r=2,cx=1,cy=-1", DomainSpec::Disk { cx: 1.0, cy: -1.0, radius: 2.0 }),
            ("cusp-domain:alpha=1.5", DomainSpec::CuspDomain { alpha: 1.5 }),
            ("paper-triangle", DomainSpec::PaperTriangle),
            ("rect:1x2", DomainSpec::Rect { w: 1.0, h: 2.0 }),
        ];
        for (s, d) in cases {
            assert_eq!(s.parse::<DomainSpec>().unwrap(), d);
            assert_eq!(d.to_string().parse::<DomainSpec>().unwrap(), d);
        }
        for bad in ["disk:r=-1", "rect:0x1", "cusp-domain:alpha=1", "square", "rect:2", "disk:cx=1"] {
            assert!(bad.parse::<DomainSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn patches_cover_domain_area() {
        // Midpoint rule on each patch parametrization.
        let n = 400;
        for d in ALL {
            let mut area = 0.0;
            for patch in d.patches() {
                for i in 0..n {
                    for j in 0..n {
                        let (s, t) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
                        let (p, w) = patch.map(s, t);
                        assert!(d.contains(p), "{d}: {p:?}");
                        area += w / (n * n) as f64;
                    }
                }
            }
            assert!((area - d.area()).abs() < 2e-3 * d.area(), "{d}: {area}");
        }
    }

    #[test]
    fn singular_edges_are_flagged() {
        for d in [DomainSpec::Diamond, DomainSpec::CuspDomain { alpha: 2.0 }, DomainSpec::PaperTriangle] {
            assert!(d.patches().iter().all(Patch::t0_on_axis), "{d}");
        }
        assert!(DomainSpec::PaperTriangle.patches()[0].s0_at_origin());
        assert!(!DomainSpec::Diamond.patches()[0].s0_at_origin());
        let disk = DomainSpec::disk(1.0).unwrap();
        assert!(disk.patches().iter().all(|p| p.t0_on_axis() && p.s0_at_origin()));
        for p in disk.patches() {
            assert!(p.map(0.7, 0.0).0.y.abs() < 1e-15);
        }
    }
}
