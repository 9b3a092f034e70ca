//! JSON conventions shared by all reports: non-finite values are written as
//! strings and numbers are rounded to 12 significant digits on output.

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Serde adapter writing `±inf` as `"Infinity"` / `"-Infinity"` and NaN as
/// `"NaN"`.
pub mod serde_inf {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("Infinity")
        } else {
            s.serialize_str("-Infinity")
        }
    }

    struct V;

    impl Visitor<'_> for V {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or \"Infinity\"")
        }
        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }
        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "Infinity" | "inf" => Ok(f64::INFINITY),
                "-Infinity" | "-inf" => Ok(f64::NEG_INFINITY),
                "NaN" => Ok(f64::NAN),
                _ => Err(E::custom(format!("unexpected string {v:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(V)
    }

    /// Same convention for optional values; `None` becomes `null`.
    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct W(#[serde(with = "super")] f64);
            Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
        }
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    if let Some(r) = serde_json::Number::from_f64(round_sig(f, 12)) {
                        *n = r;
                    }
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Converts a report to JSON with every float rounded to 12 significant
/// digits.
pub fn to_json_value<T: Serialize>(report: &T) -> Result<Value> {
    let mut v = serde_json::to_value(report).map_err(|e| Error::Io(e.to_string()))?;
    round_value(&mut v);
    Ok(v)
}

pub fn to_json_string<T: Serialize>(report: &T) -> Result<String> {
    serde_json::to_string_pretty(&to_json_value(report)?).map_err(|e| Error::Io(e.to_string()))
}

/// Non-finite floats as JSON values under the string convention.
pub fn float_value(v: f64) -> Value {
    serde_json::to_value(Wrapped(v)).unwrap_or(Value::Null)
}

#[derive(Serialize)]
struct Wrapped(#[serde(with = "serde_inf")] f64);

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct R {
        #[serde(with = "serde_inf")]
        a: f64,
        #[serde(with = "serde_inf::option")]
        b: Option<f64>,
    }

    #[test]
    fn infinity_round_trip() {
        let r = R { a: f64::INFINITY, b: None };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"a":"Infinity","b":null}"#);
        assert_eq!(serde_json::from_str::<R>(&s).unwrap(), r);
        let r2: R = serde_json::from_str(r#"{"a":1.5,"b":"Infinity"}"#).unwrap();
        assert_eq!(r2, R { a: 1.5, b: Some(f64::INFINITY) });
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn twelve_digit_rounding() {
        assert_eq!(round_sig(std::f64::consts::PI, 12), 3.14159265359);
        assert_eq!(round_sig(-1.0 / 3.0, 12), -0.333333333333);
        let v = to_json_value(&R { a: 2.0 / 3.0, b: Some(1e-20 / 3.0) }).unwrap();
        assert_eq!(v["a"].as_f64().unwrap(), 0.666666666667);
        assert_eq!(v["b"].as_f64().unwrap(), 3.33333333333e-21);
    }
}
