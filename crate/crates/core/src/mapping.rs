//! Planar mappings with exact derivative data and pointwise distortion
//! functionals.
//!
//! Every builtin map carries closed-form derivatives, so Jacobian matrices
//! and dilatations are evaluated analytically. Compositions are applied
//! left to right: `compose(f;g)` sends `x` to `g(f(x))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Slack used for closed-set membership tests of natural domains.
const DOMAIN_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl From<(f64, f64)> for PlanarPoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

impl FromStr for PlanarPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.split(',').map(|t| t.trim().parse::<f64>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => Ok(Self { x, y }),
            _ => Err(Error::parse("point", s, "expected `x,y` with finite coordinates")),
        }
    }
}

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat_det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Sign with `sign(0) = 0`.
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MappingSpec {
    Identity,
    /// `x ↦ matrix·x + translation`.
    Affine { matrix: Mat2, translation: [f64; 2] },
    /// `(x, y) ↦ (x, sign(y)|y|^alpha)`, defined on the diamond `|x| + |y| ≤ 1`.
    HolderCusp { alpha: f64 },
    /// `(x, y) ↦ l(x, y)·(x, y)` with `l = √(x²+y²)/(|x|+|y|)`, unit disk onto
    /// the diamond.
    RadialSquareDisk,
    Composition(Vec<MappingSpec>),
}

impl MappingSpec {
    pub fn affine(matrix: Mat2, translation: [f64; 2]) -> Result<Self> {
        let m = Self::Affine { matrix, translation };
        m.validate()?;
        Ok(m)
    }

    pub fn diag(a: f64, b: f64) -> Result<Self> {
        Self::affine([[a, 0.0], [0.0, b]], [0.0, 0.0])
    }

    pub fn cusp(alpha: f64) -> Result<Self> {
        let m = Self::HolderCusp { alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn compose(parts: Vec<MappingSpec>) -> Result<Self> {
        let m = Self::Composition(parts);
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MappingSpec::Identity | MappingSpec::RadialSquareDisk => Ok(()),
            MappingSpec::Affine { matrix, translation } => {
                if matrix.iter().flatten().chain(translation).any(|v| !v.is_finite()) {
                    return Err(Error::Parameter("affine coefficients must be finite".into()));
                }
                if mat_det(matrix).abs() <= 0.0 {
                    return Err(Error::Parameter("affine matrix is singular".into()));
                }
                Ok(())
            }
            MappingSpec::HolderCusp { alpha } => {
                if alpha.is_finite() && *alpha > 1.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("cusp exponent must exceed 1, got {alpha}")))
                }
            }
            MappingSpec::Composition(parts) => {
                if parts.is_empty() {
                    return Err(Error::Parameter("composition needs at least one map".into()));
                }
                parts.iter().try_for_each(MappingSpec::validate)
            }
        }
    }

    /// Membership in the domain on which the map is defined.
    pub fn natural_domain_contains(&self, p: PlanarPoint) -> bool {
        match self {
            MappingSpec::Identity | MappingSpec::Affine { .. } => p.is_finite(),
            MappingSpec::HolderCusp { .. } => p.x.abs() + p.y.abs() <= 1.0 + DOMAIN_EPS,
            MappingSpec::RadialSquareDisk => p.x * p.x + p.y * p.y <= 1.0 + DOMAIN_EPS,
            MappingSpec::Composition(parts) => {
                let mut q = p;
                for f in parts {
                    if !f.natural_domain_contains(q) {
                        return false;
                    }
                    q = f.apply(q);
                }
                true
            }
        }
    }

    /// Membership in the image of the natural domain.
    pub fn image_contains(&self, p: PlanarPoint) -> bool {
        match self {
            MappingSpec::Identity | MappingSpec::Affine { .. } => p.is_finite(),
            MappingSpec::HolderCusp { alpha } => {
                p.x.abs() + p.y.abs().powf(1.0 / alpha) <= 1.0 + DOMAIN_EPS
            }
            MappingSpec::RadialSquareDisk => p.x.abs() + p.y.abs() <= 1.0 + DOMAIN_EPS,
            MappingSpec::Composition(parts) => {
                let mut q = p;
                for f in parts.iter().rev() {
                    if !f.image_contains(q) {
                        return false;
                    }
                    q = f.apply_inverse(q);
                }
                true
            }
        }
    }

    /// Analytic formula of the map, without any domain check.
    pub fn apply(&self, p: PlanarPoint) -> PlanarPoint {
        match self {
            MappingSpec::Identity => p,
            MappingSpec::Affine { matrix: m, translation: t } => PlanarPoint::new(
                m[0][0] * p.x + m[0][1] * p.y + t[0],
                m[1][0] * p.x + m[1][1] * p.y + t[1],
            ),
            MappingSpec::HolderCusp { alpha } => {
                PlanarPoint::new(p.x, sgn(p.y) * p.y.abs().powf(*alpha))
            }
            MappingSpec::RadialSquareDisk => {
                let s = p.x.abs() + p.y.abs();
                if s == 0.0 {
                    return p;
                }
                let l = p.norm() / s;
                PlanarPoint::new(l * p.x, l * p.y)
            }
            MappingSpec::Composition(parts) => parts.iter().fold(p, |q, f| f.apply(q)),
        }
    }

    /// Analytic inverse formula, without any domain check.
    pub fn apply_inverse(&self, p: PlanarPoint) -> PlanarPoint {
        match self {
            MappingSpec::Identity => p,
            MappingSpec::Affine { matrix: m, translation: t } => {
                let det = mat_det(m);
                let (u, v) = (p.x - t[0], p.y - t[1]);
                PlanarPoint::new((m[1][1] * u - m[0][1] * v) / det, (m[0][0] * v - m[1][0] * u) / det)
            }
            MappingSpec::HolderCusp { alpha } => {
                PlanarPoint::new(p.x, sgn(p.y) * p.y.abs().powf(1.0 / alpha))
            }
            MappingSpec::RadialSquareDisk => {
                let r = p.norm();
                if r == 0.0 {
                    return p;
                }
                let m = (p.x.abs() + p.y.abs()) / r;
                PlanarPoint::new(m * p.x, m * p.y)
            }
            MappingSpec::Composition(parts) => parts.iter().rev().fold(p, |q, f| f.apply_inverse(q)),
        }
    }

    pub fn evaluate(&self, p: PlanarPoint) -> Result<PlanarPoint> {
        if !self.natural_domain_contains(p) {
            return Err(self.domain_error(p));
        }
        Ok(self.apply(p))
    }

    pub fn evaluate_inverse(&self, p: PlanarPoint) -> Result<PlanarPoint> {
        if !self.image_contains(p) {
            return Err(self.domain_error(p));
        }
        Ok(self.apply_inverse(p))
    }

    fn domain_error(&self, p: PlanarPoint) -> Error {
        Error::Domain { map: self.to_string(), x: p.x, y: p.y }
    }

    /// Derivative matrix by closed-form formulas, continued analytically to
    /// points outside the natural domain. The cusp axis is allowed here: the
    /// derivative exists there and has vanishing determinant.
    pub fn derivative(&self, p: PlanarPoint) -> Result<Mat2> {
        match self {
            MappingSpec::Identity => Ok(IDENTITY),
            MappingSpec::Affine { matrix, .. } => Ok(*matrix),
            MappingSpec::HolderCusp { alpha } => {
                Ok([[1.0, 0.0], [0.0, alpha * p.y.abs().powf(alpha - 1.0)]])
            }
            MappingSpec::RadialSquareDisk => {
                let s = p.x.abs() + p.y.abs();
                if s == 0.0 {
                    return Err(Error::Singularity {
                        x: p.x,
                        y: p.y,
                        reason: "radial map is not differentiable at the origin".into(),
                    });
                }
                let r = p.norm();
                let l = r / s;
                let lx = p.x / (r * s) - r * sgn(p.x) / (s * s);
                let ly = p.y / (r * s) - r * sgn(p.y) / (s * s);
                Ok([[l + p.x * lx, p.x * ly], [p.y * lx, l + p.y * ly]])
            }
            MappingSpec::Composition(parts) => {
                let mut q = p;
                let mut acc = IDENTITY;
                for f in parts {
                    acc = mat_mul(&f.derivative(q)?, &acc);
                    q = f.apply(q);
                }
                Ok(acc)
            }
        }
    }

    /// True when the derivative degenerates at `p` (cusp axis anywhere along
    /// the chain).
    fn on_degenerate_locus(&self, p: PlanarPoint) -> bool {
        match self {
            MappingSpec::HolderCusp { .. } => p.y == 0.0,
            MappingSpec::Composition(parts) => {
                let mut q = p;
                for f in parts {
                    if f.on_degenerate_locus(q) {
                        return true;
                    }
                    q = f.apply(q);
                }
                false
            }
            _ => false,
        }
    }

    pub fn jacobian(&self, p: PlanarPoint) -> Result<JacobianData> {
        if !self.natural_domain_contains(p) {
            return Err(self.domain_error(p));
        }
        if self.on_degenerate_locus(p) {
            return Err(Error::Singularity {
                x: p.x,
                y: p.y,
                reason: "derivative degenerates on the cusp axis".into(),
            });
        }
        Ok(JacobianData::from_matrix(self.derivative(p)?))
    }

    /// Jacobian determinant of the inverse map at a target point, from the
    /// analytic inverse formulas.
    pub fn inverse_jacobian_det(&self, p: PlanarPoint) -> Result<f64> {
        let singular = |reason: &str| Error::Singularity { x: p.x, y: p.y, reason: reason.into() };
        match self {
            MappingSpec::Identity => Ok(1.0),
            MappingSpec::Affine { matrix, .. } => Ok(1.0 / mat_det(matrix)),
            MappingSpec::HolderCusp { alpha } => {
                if p.y == 0.0 {
                    return Err(singular("inverse cusp map has unbounded derivative on the axis"));
                }
                Ok(p.y.abs().powf(1.0 / alpha - 1.0) / alpha)
            }
            MappingSpec::RadialSquareDisk => {
                let r = p.norm();
                if r == 0.0 {
                    return Err(singular("inverse radial map is not differentiable at the origin"));
                }
                let m = (p.x.abs() + p.y.abs()) / r;
                Ok(m * m)
            }
            MappingSpec::Composition(parts) => {
                let mut q = p;
                let mut det = 1.0;
                for f in parts.iter().rev() {
                    det *= f.inverse_jacobian_det(q)?;
                    q = f.apply_inverse(q);
                }
                Ok(det)
            }
        }
    }

    pub fn dilatation(&self, p: PlanarPoint, kind: DilatationKind, convention: NormConvention) -> Result<f64> {
        self.dilatation_with_constant(p, kind, convention, 1.0)
    }

    /// Like [`MappingSpec::dilatation`], with an explicit multiplier `c_n` for
    /// the Q-field bound `|Dφ| ≤ c_n |J|^{1/2} Q^{1/2}`.
    pub fn dilatation_with_constant(
        &self,
        p: PlanarPoint,
        kind: DilatationKind,
        convention: NormConvention,
        c_n: f64,
    ) -> Result<f64> {
        kind.validate()?;
        if !(c_n.is_finite() && c_n > 0.0) {
            return Err(Error::Parameter(format!("Q-field constant must be positive, got {c_n}")));
        }
        if !self.natural_domain_contains(p) {
            return Err(self.domain_error(p));
        }
        Ok(JacobianData::from_matrix(self.derivative(p)?).dilatation(kind, convention, c_n))
    }
}

impl fmt::Display for MappingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MappingSpec::Identity => write!(f, "identity"),
            MappingSpec::Affine { matrix: m, translation: t } => {
                write!(f, "affine:{},{},{},{}", m[0][0], m[0][1], m[1][0], m[1][1])?;
                if t[0] != 0.0 || t[1] != 0.0 {
                    write!(f, ",{},{}", t[0], t[1])?;
                }
                Ok(())
            }
            MappingSpec::HolderCusp { alpha } => write!(f, "cusp:alpha={alpha}"),
            MappingSpec::RadialSquareDisk => write!(f, "radial"),
            MappingSpec::Composition(parts) => {
                write!(f, "compose(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Splits on `sep` at nesting depth zero.
pub(crate) fn split_top_level(s: &str, sep: char) -> Option<Vec<&str>> {
    let mut depth = 0i32;
    let mut start = 0;
    let mut out = Vec::new();
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    out.push(&s[start..]);
    Some(out)
}

fn parse_num(what: &'static str, input: &str, t: &str) -> Result<f64> {
    match t.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(what, input, format!("bad number {t:?}"))),
    }
}

impl FromStr for MappingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let spec = if t == "identity" {
            MappingSpec::Identity
        } else if t == "radial" {
            MappingSpec::RadialSquareDisk
        } else if let Some(rest) = t.strip_prefix("cusp:") {
            let v = rest
                .trim()
                .strip_prefix("alpha=")
                .ok_or_else(|| Error::parse("mapping", s, "expected cusp:alpha=<real>"))?;
            MappingSpec::HolderCusp { alpha: parse_num("mapping", s, v)? }
        } else if let Some(rest) = t.strip_prefix("affine:") {
            let nums = rest
                .split(',')
                .map(|v| parse_num("mapping", s, v))
                .collect::<Result<Vec<_>>>()?;
            let translation = match nums.len() {
                4 => [0.0, 0.0],
                6 => [nums[4], nums[5]],
                n => return Err(Error::parse("mapping", s, format!("affine takes 4 or 6 numbers, got {n}"))),
            };
            MappingSpec::Affine { matrix: [[nums[0], nums[1]], [nums[2], nums[3]]], translation }
        } else if let Some(inner) = t.strip_prefix("compose(").and_then(|r| r.strip_suffix(')')) {
            let parts = split_top_level(inner, ';')
                .ok_or_else(|| Error::parse("mapping", s, "unbalanced parentheses"))?;
            if parts.iter().any(|p| p.trim().is_empty()) {
                return Err(Error::parse("mapping", s, "empty composition component"));
            }
            MappingSpec::Composition(parts.into_iter().map(str::parse).collect::<Result<_>>()?)
        } else {
            return Err(Error::parse("mapping", s, "unknown mapping kind"));
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for MappingSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MappingSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormConvention {
    /// Operator (largest singular value) norm.
    #[default]
    Spectral,
    /// Square root of the sum of squared entries.
    Frobenius,
}

impl FromStr for NormConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spectral" | "operator" => Ok(Self::Spectral),
            "frobenius" => Ok(Self::Frobenius),
            _ => Err(Error::parse("norm convention", s, "expected spectral or frobenius")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianData {
    pub matrix: Mat2,
    pub det: f64,
    pub norm_spectral: f64,
    pub norm_frobenius: f64,
    /// Smallest stretch `min |Dφ h|` over unit vectors.
    pub min_stretch: f64,
}

impl JacobianData {
    pub fn from_matrix(matrix: Mat2) -> Self {
        let det = mat_det(&matrix);
        let fro2: f64 = matrix.iter().flatten().map(|v| v * v).sum();
        let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
        let norm_spectral = ((fro2 + disc) / 2.0).sqrt();
        let min_stretch = if norm_spectral > 0.0 {
            (det.abs() / norm_spectral).min(norm_spectral)
        } else {
            0.0
        };
        Self { matrix, det, norm_spectral, norm_frobenius: fro2.sqrt(), min_stretch }
    }

    pub fn norm(&self, convention: NormConvention) -> f64 {
        match convention {
            NormConvention::Spectral => self.norm_spectral,
            NormConvention::Frobenius => self.norm_frobenius,
        }
    }

    /// Distortion value; zero wherever the Jacobian vanishes.
    pub fn dilatation(&self, kind: DilatationKind, convention: NormConvention, c_n: f64) -> f64 {
        let j = self.det.abs();
        if j == 0.0 {
            return 0.0;
        }
        let d = self.norm(convention);
        match kind {
            DilatationKind::Outer => d * d / j,
            DilatationKind::Inner => {
                if self.min_stretch == 0.0 {
                    0.0
                } else {
                    j / (self.min_stretch * self.min_stretch)
                }
            }
            DilatationKind::PDil(p) => d / j.powf(1.0 / p),
            DilatationKind::Hq(q) => (d.powf(q) / j).powf(1.0 / q),
            DilatationKind::QField => d * d / (j * c_n * c_n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "exponent", rename_all = "lowercase")]
pub enum DilatationKind {
    Outer,
    Inner,
    /// `|Dφ| / |J|^{1/p}`.
    PDil(f64),
    /// `(|Dφ|^q / |J|)^{1/q}`, read at the source point of a target point.
    Hq(f64),
    /// Smallest `Q` compatible with `|Dφ| ≤ c_n |J|^{1/2} Q^{1/2}`.
    QField,
}

impl DilatationKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DilatationKind::PDil(e) | DilatationKind::Hq(e) if !(e.is_finite() && e >= 1.0) => {
                Err(Error::Parameter(format!("dilatation exponent must lie in [1, inf), got {e}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DilatationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Outer => write!(f, "outer"),
            Self::Inner => write!(f, "inner"),
            Self::QField => write!(f, "qfield"),
            Self::PDil(p) => write!(f, "pdil:{p}"),
            Self::Hq(q) => write!(f, "hq:{q}"),
        }
    }
}

impl FromStr for DilatationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let exponent = |v: &str| parse_num("dilatation kind", s, v);
        let kind = match t.as_str() {
            "outer" => Self::Outer,
            "inner" => Self::Inner,
            "qfield" | "q-field" => Self::QField,
            _ => {
                if let Some(v) = t.strip_prefix("p=").or_else(|| t.strip_prefix("pdil:")) {
                    Self::PDil(exponent(v)?)
                } else if let Some(v) = t.strip_prefix("hq:").or_else(|| t.strip_prefix("q=")) {
                    Self::Hq(exponent(v)?)
                } else {
                    return Err(Error::parse("dilatation kind", s, "expected outer, inner, qfield, pdil:<p> or hq:<q>"));
                }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64) -> PlanarPoint {
        PlanarPoint::new(x, y)
    }

    #[test]
    fn evaluate_examples() {
        let id = MappingSpec::Identity;
        assert_eq!(id.evaluate(pt(0.3, -0.2)).unwrap(), pt(0.3, -0.2));
        let c = MappingSpec::cusp(4.0).unwrap();
        assert_eq!(c.evaluate(pt(0.5, 0.5)).unwrap(), pt(0.5, 0.0625));
        assert_eq!(c.evaluate(pt(0.5, -0.5)).unwrap(), pt(0.5, -0.0625));
        let r = MappingSpec::RadialSquareDisk;
        assert_eq!(r.evaluate(pt(1.0, 0.0)).unwrap(), pt(1.0, 0.0));
    }

    #[test]
    fn evaluate_rejects_points_outside_natural_domain() {
        let c = MappingSpec::cusp(2.5).unwrap();
        assert!(matches!(c.evaluate(pt(0.8, 0.8)), Err(Error::Domain { .. })));
        assert!(matches!(MappingSpec::RadialSquareDisk.evaluate(pt(0.9, 0.9)), Err(Error::Domain { .. })));
    }

    #[test]
    fn jacobian_examples() {
        let j = MappingSpec::Identity.jacobian(pt(0.1, 0.7)).unwrap();
        assert_eq!((j.det, j.norm_spectral, j.min_stretch), (1.0, 1.0, 1.0));

        let j = MappingSpec::RadialSquareDisk.jacobian(pt(0.3, 0.3)).unwrap();
        assert!((j.det - 0.5).abs() < 1e-15);

        let j = MappingSpec::cusp(4.0).unwrap().jacobian(pt(0.5, 0.5)).unwrap();
        assert!((j.det - 0.5).abs() < 1e-15);
        assert!((j.norm_frobenius - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn radial_frobenius_norm_matches_closed_form() {
        let r = MappingSpec::RadialSquareDisk;
        for &(x, y) in &[(0.3, 0.1), (-0.5, 0.2), (0.05, -0.7), (-0.4, -0.4)] {
            let j = r.jacobian(pt(x, y)).unwrap();
            let rr = x * x + y * y;
            let s: f64 = f64::abs(x) + f64::abs(y);
            let expect = (2.0 * rr * rr / s.powi(4) + rr / (s * s)).sqrt();
            assert!((j.norm_frobenius - expect).abs() < 1e-14, "{x},{y}");
            assert!((j.det - rr / (s * s)).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_points_are_reported() {
        let c = MappingSpec::cusp(1.5).unwrap();
        assert!(matches!(c.jacobian(pt(0.2, 0.0)), Err(Error::Singularity { .. })));
        assert!(matches!(
            MappingSpec::RadialSquareDisk.jacobian(pt(0.0, 0.0)),
            Err(Error::Singularity { .. })
        ));
        // finite-distortion convention on the axis
        let v = c.dilatation(pt(0.2, 0.0), DilatationKind::Outer, NormConvention::Spectral).unwrap();
        assert_eq!(v, 0.0);
        assert!(MappingSpec::RadialSquareDisk
            .dilatation(pt(0.0, 0.0), DilatationKind::Outer, NormConvention::Spectral)
            .is_err());
    }

    #[test]
    fn dilatation_examples() {
        let s = NormConvention::Spectral;
        assert_eq!(MappingSpec::Identity.dilatation(pt(0.2, 0.1), DilatationKind::Outer, s).unwrap(), 1.0);
        let a = MappingSpec::diag(2.0, 1.0).unwrap();
        assert_eq!(a.dilatation(pt(5.0, 3.0), DilatationKind::Outer, s).unwrap(), 2.0);
        let c = MappingSpec::cusp(4.0).unwrap();
        let v = c.dilatation(pt(0.5, 0.5), DilatationKind::Outer, NormConvention::Frobenius).unwrap();
        assert!((v - 2.5).abs() < 1e-14);
    }

    #[test]
    fn dilatation_parameter_errors() {
        let id = MappingSpec::Identity;
        assert!(id.dilatation(pt(0.0, 0.0), DilatationKind::PDil(0.5), NormConvention::Spectral).is_err());
        assert!(id.dilatation(pt(0.0, 0.0), DilatationKind::Hq(f64::INFINITY), NormConvention::Spectral).is_err());
    }

    #[test]
    fn degenerate_constructions_are_rejected() {
        assert!(MappingSpec::affine([[1.0, 2.0], [2.0, 4.0]], [0.0, 0.0]).is_err());
        assert!(MappingSpec::cusp(1.0).is_err());
        assert!(MappingSpec::compose(vec![]).is_err());
    }

    #[test]
    fn parse_grammar() {
        let cases = [
            ("identity", MappingSpec::Identity),
            ("radial", MappingSpec::RadialSquareDisk),
            ("cusp:alpha=1.5", MappingSpec::HolderCusp { alpha: 1.5 }),
            ("affine:2,0,0,1", MappingSpec::diag(2.0, 1.0).unwrap()),
            (
                "affine:1,0.5,0,1,3,-1",
                MappingSpec::Affine { matrix: [[1.0, 0.5], [0.0, 1.0]], translation: [3.0, -1.0] },
            ),
            (
                "compose(radial;cusp:alpha=2)",
                MappingSpec::Composition(vec![MappingSpec::RadialSquareDisk, MappingSpec::HolderCusp { alpha: 2.0 }]),
            ),
        ];
        for (s, expect) in cases {
            assert_eq!(s.parse::<MappingSpec>().unwrap(), expect, "{s}");
        }
        let nested: MappingSpec = "compose(compose(identity;radial);affine:1,0,0,3)".parse().unwrap();
        assert_eq!(nested.to_string().parse::<MappingSpec>().unwrap(), nested);
        for bad in ["cusp:alpha=0.5", "affine:1,2,3", "compose()", "compose(identity", "shear", "affine:0,0,0,0"] {
            assert!(bad.parse::<MappingSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn inverse_formulas_round_trip() {
        let maps = [
            MappingSpec::diag(2.0, 0.5).unwrap(),
            MappingSpec::cusp(1.5).unwrap(),
            MappingSpec::RadialSquareDisk,
            MappingSpec::compose(vec![MappingSpec::RadialSquareDisk, MappingSpec::cusp(3.0).unwrap()]).unwrap(),
        ];
        for m in &maps {
            for &(x, y) in &[(0.1, 0.2), (-0.3, 0.4), (0.25, -0.6)] {
                let q = m.evaluate(pt(x, y)).unwrap();
                let back = m.evaluate_inverse(q).unwrap();
                assert!((back.x - x).abs() < 1e-12 && (back.y - y).abs() < 1e-12, "{m}");
            }
        }
    }

    #[test]
    fn inverse_jacobian_matches_reciprocal_forward_jacobian() {
        let maps = [
            MappingSpec::diag(2.0, 0.5).unwrap(),
            MappingSpec::cusp(1.5).unwrap(),
            MappingSpec::RadialSquareDisk,
            MappingSpec::compose(vec![MappingSpec::RadialSquareDisk, MappingSpec::cusp(3.0).unwrap()]).unwrap(),
        ];
        for m in &maps {
            for &(x, y) in &[(0.1, 0.2), (-0.3, 0.4), (0.25, -0.6)] {
                let q = m.apply(pt(x, y));
                let analytic = m.inverse_jacobian_det(q).unwrap();
                let pulled = 1.0 / m.jacobian(pt(x, y)).unwrap().det.abs();
                assert!((analytic - pulled).abs() <= 1e-8 * pulled, "{m}: {analytic} vs {pulled}");
            }
        }
    }

    /// Deterministic interior sample for finite-difference checks.
    fn sample_points(map: &MappingSpec, n: usize) -> Vec<PlanarPoint> {
        let mut out = Vec::with_capacity(n);
        let mut k = 0u64;
        while out.len() < n {
            k += 1;
            // Weyl sequence in [-0.9, 0.9]^2
            let u = ((k as f64 * 0.754_877_666_246_692_8) % 1.0) * 1.8 - 0.9;
            let v = ((k as f64 * 0.569_840_290_998_053_3) % 1.0) * 1.8 - 0.9;
            let p = pt(u, v);
            let interior = match map {
                MappingSpec::HolderCusp { .. } => u.abs() + v.abs() < 0.95 && v.abs() > 0.05,
                MappingSpec::RadialSquareDisk => p.norm() < 0.95 && u.abs() > 0.05 && v.abs() > 0.05,
                _ => true,
            };
            if interior {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn jacobian_agrees_with_central_differences() {
        let maps = [
            MappingSpec::Identity,
            MappingSpec::affine([[1.5, 0.3], [-0.2, 0.8]], [0.1, 0.2]).unwrap(),
            MappingSpec::cusp(1.5).unwrap(),
            MappingSpec::cusp(4.0).unwrap(),
            MappingSpec::RadialSquareDisk,
        ];
        let step = 1e-5;
        for m in &maps {
            for p in sample_points(m, 100) {
                let jac = m.jacobian(p).unwrap().matrix;
                let fx = (m.apply(pt(p.x + step, p.y)), m.apply(pt(p.x - step, p.y)));
                let fy = (m.apply(pt(p.x, p.y + step)), m.apply(pt(p.x, p.y - step)));
                let fd = [
                    [(fx.0.x - fx.1.x) / (2.0 * step), (fy.0.x - fy.1.x) / (2.0 * step)],
                    [(fx.0.y - fx.1.y) / (2.0 * step), (fy.0.y - fy.1.y) / (2.0 * step)],
                ];
                let scale = jac.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
                for i in 0..2 {
                    for j in 0..2 {
                        let err = (fd[i][j] - jac[i][j]).abs() / scale;
                        assert!(err <= 1e-6, "{m} at {p:?}: entry {i}{j} err {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn composition_chain_rule() {
        let f = MappingSpec::RadialSquareDisk;
        let g = MappingSpec::cusp(2.0).unwrap();
        let single = MappingSpec::compose(vec![f.clone()]).unwrap();
        let pair = MappingSpec::compose(vec![f.clone(), g.clone()]).unwrap();
        for p in sample_points(&f, 20) {
            assert_eq!(single.jacobian(p).unwrap(), f.jacobian(p).unwrap());
            let q = f.apply(p);
            let expect = f.jacobian(p).unwrap().det * g.jacobian(q).unwrap().det;
            let got = pair.jacobian(p).unwrap().det;
            assert!((got - expect).abs() <= 1e-14 * expect.abs().max(1.0));
        }
    }

    fn any_map() -> impl Strategy<Value = MappingSpec> {
        prop_oneof![
            Just(MappingSpec::Identity),
            Just(MappingSpec::RadialSquareDisk),
            (1.01f64..6.0).prop_map(|a| MappingSpec::HolderCusp { alpha: a }),
            (0.2f64..3.0, -1.0f64..1.0, -1.0f64..1.0, 0.2f64..3.0)
                .prop_map(|(a, b, c, d)| MappingSpec::Affine { matrix: [[a, b * 0.1], [c * 0.1, d]], translation: [0.0, 0.0] }),
        ]
    }

    proptest! {
        #[test]
        fn jacobian_invariants(map in any_map(), x in -0.6f64..0.6, y in -0.6f64..0.6) {
            prop_assume!(x.abs() > 1e-3 && y.abs() > 1e-3);
            let p = pt(x * 0.6, y * 0.6);
            let j = map.jacobian(p).unwrap();
            let tol = 1e-12 * j.norm_frobenius.max(1.0);
            prop_assert!((j.det - mat_det(&j.matrix)).abs() <= tol * j.norm_frobenius.max(1.0));
            prop_assert!(j.norm_spectral <= j.norm_frobenius + tol);
            prop_assert!(j.norm_frobenius <= 2f64.sqrt() * j.norm_spectral + tol);
            prop_assert!(j.min_stretch <= j.norm_spectral + tol);
            prop_assert!(j.det.abs() <= j.norm_spectral * j.norm_spectral * (1.0 + 1e-12));
        }

        #[test]
        fn dilatation_identities(map in any_map(), x in -0.6f64..0.6, y in -0.6f64..0.6, fro in any::<bool>()) {
            prop_assume!(x.abs() > 1e-3 && y.abs() > 1e-3);
            let p = pt(x * 0.6, y * 0.6);
            let conv = if fro { NormConvention::Frobenius } else { NormConvention::Spectral };
            let outer = map.dilatation(p, DilatationKind::Outer, conv).unwrap();
            let inner = map.dilatation(p, DilatationKind::Inner, conv).unwrap();
            let k2 = map.dilatation(p, DilatationKind::PDil(2.0), conv).unwrap();
            let h2 = map.dilatation(p, DilatationKind::Hq(2.0), conv).unwrap();
            let q = map.dilatation(p, DilatationKind::QField, conv).unwrap();
            let tol = 1e-10 * outer.max(1.0);
            prop_assert!(inner <= outer + tol);
            prop_assert!((k2 * k2 - outer).abs() <= tol);
            prop_assert!((h2 - outer.sqrt()).abs() <= tol);
            prop_assert!((q - outer).abs() <= tol);
        }

        #[test]
        fn display_parse_round_trip(map in any_map(), other in any_map()) {
            let composed = MappingSpec::Composition(vec![map.clone(), other]);
            for m in [map, composed] {
                prop_assert_eq!(m.to_string().parse::<MappingSpec>().unwrap(), m);
            }
        }
    }
}
