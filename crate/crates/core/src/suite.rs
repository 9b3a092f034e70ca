//! Verification suites: a JSON file listing checks, run in order, each
//! producing an [`InequalityReport`].

use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::mapping::NormConvention;
use crate::modulus::{build_grid, capacity, discrete_modulus, CurveFamily, ModulusOptions};
use crate::quadrature::{composition_norm_bound, EvalMode, NormOptions};
use crate::report::float_value;
use crate::spectral::{cusp_spectral_bound, SpectralOptions};
use crate::verify::{
    dual_exponents, measure_distortion_check, q_inequality_check, weighted_poincare_check, DualMode, InequalityReport,
    MeasureOptions, PoincareOptions, QCheckOptions, TargetBox, TestFunction, DEFAULT_SLACK,
};

/// The bundled suite reproducing the worked computations.
pub const PAPER_SUITE: &str = include_str!("../suites/paper_suite.json");

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub slack: Option<f64>,
    #[serde(default)]
    pub spectral: Option<SpectralConfig>,
    #[serde(default)]
    pub modulus: Option<ModulusConfig>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    pub tol: Option<f64>,
    pub h: Option<f64>,
    pub max_iters: Option<usize>,
}

impl SpectralConfig {
    pub fn apply(&self, mut o: SpectralOptions) -> SpectralOptions {
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(h) = self.h {
            o.h = h;
        }
        if let Some(m) = self.max_iters {
            o.max_iters = m;
        }
        o
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    pub tol: Option<f64>,
    pub max_rounds: Option<usize>,
}

impl ModulusConfig {
    pub fn apply(&self, mut o: ModulusOptions) -> ModulusOptions {
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_rounds {
            o.max_rounds = m;
        }
        o
    }
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    QInequality {
        #[serde(default)]
        name: Option<String>,
        map: String,
        domain: String,
        family: String,
        h: f64,
        #[serde(default)]
        slack: Option<f64>,
    },
    MeasureDistortion {
        #[serde(default)]
        name: Option<String>,
        map: String,
        boxes: Vec<String>,
        #[serde(default = "one")]
        q: f64,
        h: f64,
        #[serde(default)]
        slack: Option<f64>,
    },
    WeightedPoincare {
        #[serde(default)]
        name: Option<String>,
        map: String,
        domain: String,
        #[serde(default = "two")]
        s: f64,
        #[serde(default = "two")]
        p: f64,
        functions: Vec<String>,
        h: f64,
        #[serde(default)]
        norm: Option<String>,
        #[serde(default)]
        slack: Option<f64>,
    },
    Dual {
        #[serde(default)]
        name: Option<String>,
        p: f64,
        q: f64,
        #[serde(default)]
        n: Option<u32>,
        mode: String,
        expect_p: f64,
        expect_q: f64,
    },
    Opnorm {
        #[serde(default)]
        name: Option<String>,
        map: String,
        domain: String,
        p: f64,
        q: f64,
        #[serde(default)]
        norm: Option<String>,
        #[serde(default)]
        mode: Option<String>,
        #[serde(default)]
        multiplicity: Option<f64>,
        #[serde(default)]
        expect: Option<f64>,
        #[serde(default)]
        rel_tol: Option<f64>,
    },
    Spectral {
        #[serde(default)]
        name: Option<String>,
        alpha: f64,
        #[serde(default)]
        fd_check: bool,
        #[serde(default)]
        h: Option<f64>,
    },
    Modulus {
        #[serde(default)]
        name: Option<String>,
        domain: String,
        family: String,
        h: f64,
        expect: f64,
        tolerance: f64,
        #[serde(default)]
        with_capacity: bool,
    },
}

impl CheckSpec {
    pub fn label(&self) -> String {
        let (name, default) = match self {
            CheckSpec::QInequality { name, map, domain, family, h, .. } => {
                (name, format!("q_inequality {map} on {domain} [{family}] h={h}"))
            }
            CheckSpec::MeasureDistortion { name, map, h, .. } => (name, format!("measure_distortion {map} h={h}")),
            CheckSpec::WeightedPoincare { name, map, domain, h, .. } => {
                (name, format!("weighted_poincare {map} on {domain} h={h}"))
            }
            CheckSpec::Dual { name, p, q, mode, .. } => (name, format!("dual {mode} p={p} q={q}")),
            CheckSpec::Opnorm { name, map, domain, p, q, .. } => (name, format!("opnorm {map} on {domain} p={p} q={q}")),
            CheckSpec::Spectral { name, alpha, .. } => (name, format!("spectral alpha={alpha}")),
            CheckSpec::Modulus { name, domain, family, h, .. } => (name, format!("modulus {domain} [{family}] h={h}")),
        };
        name.clone().unwrap_or(default)
    }
}

pub fn parse_suite(text: &str) -> Result<SuiteConfig> {
    serde_json::from_str(text).map_err(|e| Error::parse("suite config", "<file>", e.to_string()))
}

pub fn load_suite(path: &Path) -> Result<SuiteConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
    parse_suite(&text)
}

fn norm_convention(s: &Option<String>, default: NormConvention) -> Result<NormConvention> {
    s.as_deref().map_or(Ok(default), str::parse)
}

/// Report comparing `|value − expect|` against `tolerance · |expect|`.
fn closeness(check: &str, value: f64, expect: f64, tolerance: f64) -> InequalityReport {
    InequalityReport::new(check, (value - expect).abs(), tolerance * expect.abs(), 0.0)
        .with("value", float_value(value))
        .with("expected", json!(expect))
        .with("tolerance", json!(tolerance))
}

/// Runs one check.
pub fn run_check(check: &CheckSpec, config: &SuiteConfig) -> Result<InequalityReport> {
    let slack = |s: &Option<f64>| s.or(config.slack).unwrap_or(DEFAULT_SLACK);
    let modulus_opts = config.modulus.unwrap_or_default().apply(ModulusOptions::default());
    let report = match check {
        CheckSpec::QInequality { map, domain, family, h, slack: s, .. } => {
            let opts = QCheckOptions { slack: slack(s), modulus: modulus_opts, ..Default::default() };
            q_inequality_check(&map.parse()?, &domain.parse()?, &family.parse()?, *h, &opts)?
        }
        CheckSpec::MeasureDistortion { map, boxes, q, h, slack: s, .. } => {
            let boxes: Vec<TargetBox> = boxes.iter().map(|b| b.parse()).collect::<Result<_>>()?;
            let opts = MeasureOptions { slack: slack(s), ..Default::default() };
            measure_distortion_check(&map.parse()?, &boxes, *q, *h, &opts)?
        }
        CheckSpec::WeightedPoincare { map, domain, s, p, functions, h, norm, slack: sl, .. } => {
            let fns: Vec<TestFunction> = functions.iter().map(|f| f.parse()).collect::<Result<_>>()?;
            let opts = PoincareOptions {
                slack: slack(sl),
                convention: norm_convention(norm, NormConvention::Frobenius)?,
                ..Default::default()
            };
            weighted_poincare_check(&map.parse()?, &domain.parse()?, *s, *p, &fns, *h, &opts)?
        }
        CheckSpec::Dual { p, q, n, mode, expect_p, expect_q, .. } => {
            let mode: DualMode = mode.parse()?;
            let d = dual_exponents(*p, *q, n.unwrap_or(2), mode)?;
            let err = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() };
            let e = err(d.p_dual, *expect_p).max(err(d.q_dual, *expect_q));
            InequalityReport::new("dual", e, 1e-12, 0.0)
                .with("p_dual", float_value(d.p_dual))
                .with("q_dual", float_value(d.q_dual))
        }
        CheckSpec::Opnorm { map, domain, p, q, norm, mode, multiplicity, expect, rel_tol, .. } => {
            let mode: EvalMode = mode.as_deref().map_or(Ok(EvalMode::Quadrature), str::parse)?;
            let opts = NormOptions { rel_tol: rel_tol.unwrap_or(1e-9), multiplicity: multiplicity.unwrap_or(1.0), mode };
            let conv = norm_convention(norm, NormConvention::Spectral)?;
            let r = composition_norm_bound(&map.parse()?, &domain.parse()?, *p, *q, conv, &opts)?;
            if r.quadrature.divergent {
                InequalityReport::new("opnorm", f64::INFINITY, f64::INFINITY, 0.0)
                    .with("divergent", json!(true))
                    .with("inconclusive", json!(true))
            } else {
                match expect {
                    Some(e) => closeness("opnorm", r.norm_bound, *e, 1e-6),
                    None => InequalityReport::new("opnorm", r.norm_bound, f64::INFINITY, 0.0)
                        .with("value", float_value(r.norm_bound)),
                }
                .with("divergent", json!(false))
            }
        }
        CheckSpec::Spectral { alpha, fd_check, h, .. } => {
            let mut o = config.spectral.unwrap_or_default().apply(SpectralOptions::default());
            if let Some(h) = h {
                o.h = *h;
            }
            let r = cusp_spectral_bound(*alpha, *fd_check, &o)?;
            let identity = (r.pipeline_bound - r.closed_form_bound).abs() <= 1e-10 * r.closed_form_bound.abs();
            let mut rep = match r.numerical_mu1 {
                Some(mu) => InequalityReport::new("spectral", r.closed_form_bound, mu, 0.0),
                None => InequalityReport::new("spectral", r.closed_form_bound, r.pipeline_bound, 0.0),
            };
            rep.satisfied &= identity;
            let rep = rep
                .with("pipeline_bound", json!(r.pipeline_bound))
                .with("antiderivative_mode", json!(r.antiderivative_mode));
            if *fd_check && r.numerical_mu1.is_none() {
                rep.with("inconclusive", json!(true)).with("note", json!(r.note))
            } else {
                rep
            }
        }
        CheckSpec::Modulus { domain, family, h, expect, tolerance, with_capacity, .. } => {
            let domain: DomainSpec = domain.parse()?;
            let family: CurveFamily = family.parse()?;
            let grid = build_grid(&domain, *h)?;
            let m = discrete_modulus(&grid, &family, 2.0, &modulus_opts)?;
            let rep = closeness("modulus", m.value, *expect, *tolerance).with("duality_gap", json!(m.duality_gap));
            if *with_capacity {
                let c = capacity(&grid, &family)?;
                let mut rep = rep.with("capacity", json!(c.value));
                rep.satisfied &= (c.value - m.value).abs() <= 0.05 * m.value;
                rep
            } else {
                rep
            }
        }
    };
    Ok(report.with("label", json!(check.label())))
}

/// Runs every check. Errors become inconclusive reports carrying the
/// message. The exit code is 0 when all checks pass, 3 when any is
/// inconclusive, and 1 otherwise.
pub fn run_suite(config: &SuiteConfig, mut console: impl FnMut(&str)) -> (i32, Vec<InequalityReport>) {
    let mut reports = Vec::with_capacity(config.checks.len());
    let mut code = 0;
    for check in &config.checks {
        let rep = run_check(check, config).unwrap_or_else(|e| {
            InequalityReport::new("error", f64::NAN, f64::NAN, 0.0)
                .with("label", json!(check.label()))
                .with("error", json!(e.to_string()))
                .with("inconclusive", json!(true))
        });
        let verdict = if rep.inconclusive() {
            code = 3;
            "INCONCLUSIVE"
        } else if rep.satisfied {
            "PASS"
        } else {
            if code == 0 {
                code = 1;
            }
            "FAIL"
        };
        console(&format!("{verdict} {} (lhs {:.6e}, rhs {:.6e})", check.label(), rep.lhs, rep.rhs));
        reports.push(rep);
    }
    (code, reports)
}

/// Parses a flat or nested JSON object of `spectral.*` keys.
pub fn spectral_config(v: &Value) -> Result<SpectralConfig> {
    let get = |k: &str| v.get(format!("spectral.{k}")).or_else(|| v.get("spectral").and_then(|s| s.get(k)));
    let num = |k: &str| -> Result<Option<f64>> {
        match get(k) {
            None => Ok(None),
            Some(x) => x.as_f64().map(Some).ok_or_else(|| Error::parse("config", k, "expected a number")),
        }
    };
    Ok(SpectralConfig {
        tol: num("tol")?,
        h: num("h")?,
        max_iters: num("max_iters")?.map(|m| m as usize),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_suite_parses() {
        let s = parse_suite(PAPER_SUITE).unwrap();
        assert!(!s.checks.is_empty());
    }

    #[test]
    fn empty_suite_passes() {
        let (code, reports) = run_suite(&parse_suite("{\"checks\": []}").unwrap(), |_| {});
        assert_eq!(code, 0);
        assert!(reports.is_empty());
    }

    #[test]
    fn divergent_quadrature_is_inconclusive() {
        let s = parse_suite(
            r#"{"checks": [{"kind": "opnorm", "map": "cusp:alpha=2.5", "domain": "paper-triangle",
                "p": 2, "q": 1, "norm": "frobenius", "mode": "quadrature", "multiplicity": 4}]}"#,
        )
        .unwrap();
        let mut lines = Vec::new();
        let (code, reports) = run_suite(&s, |l| lines.push(l.to_string()));
        assert_eq!(code, 3);
        assert_eq!(reports[0].details["divergent"], json!(true));
        assert!(lines[0].starts_with("INCONCLUSIVE"));
    }

    #[test]
    fn spectral_keys() {
        let c = spectral_config(&json!({"spectral.tol": 1e-9, "spectral": {"h": 0.25}})).unwrap();
        assert_eq!((c.tol, c.h, c.max_iters), (Some(1e-9), Some(0.25), None));
    }
}
