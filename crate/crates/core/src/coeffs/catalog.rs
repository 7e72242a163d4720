//! Named example systems.

use std::collections::BTreeMap;

use super::field::ScalarField;
use super::system::{SystemSpec, TimeExtension};
use crate::error::{Error, Result};

/// Catalog parameters: name → expression text.
pub type Params = BTreeMap<String, String>;

pub const CATALOG_NAMES: [&str; 5] = ["example_1_5", "unstable_2x2", "remark_1_7_3x3", "const_2x2", "custom"];

fn field(params: &Params, key: &str, default: &str) -> Result<ScalarField> {
    let text = params.get(key).map(String::as_str).unwrap_or(default);
    ScalarField::parse(text).map_err(|e| Error::InvalidSpec(format!("parameter {}: {}", key, e)))
}

fn number(params: &Params, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(text) => ScalarField::parse(text)
            .ok()
            .and_then(|f| f.as_constant())
            .ok_or_else(|| Error::InvalidSpec(format!("parameter {} must be a constant, got '{}'", key, text))),
    }
}

fn check_keys(params: &Params, allowed: &dyn Fn(&str) -> bool, name: &str) -> Result<()> {
    match params.keys().find(|k| !allowed(k)) {
        Some(k) => Err(Error::InvalidSpec(format!("unknown parameter '{}' for {}", k, name))),
        None => Ok(()),
    }
}

fn matrix(params: &Params, prefix: &str, rows: usize, cols: usize) -> Result<Vec<Vec<ScalarField>>> {
    (0..rows)
        .map(|i| (0..cols).map(|j| field(params, &format!("{}{}{}", prefix, i + 1, j + 1), "0")).collect())
        .collect()
}

fn is_matrix_key(k: &str, prefix: &str, rows: usize, cols: usize) -> bool {
    (1..=rows).any(|i| (1..=cols).any(|j| k == format!("{}{}{}", prefix, i, j)))
}

/// Builds a catalog system.
///
/// * `example_1_5`: speeds `−1` and `1 + 1/(1+t)`; coupling entries
///   `M11..M22` (default 0) and boundary gain `q` (default 1).
/// * `unstable_2x2`: speeds `−1, 1`, coupling `[[0, −c], [−c, 0]]`, `Q = 1`.
/// * `remark_1_7_3x3`: speeds `−1`, `−(1 − e^{−t}/2)`, `1`; only coupling
///   is `M12 = 1`; `Q = [0, 1]`. Violates the gap condition for large t.
/// * `const_2x2`: constant speeds `l1`, `l2` (default −1, 1), coupling
///   `M11..M22`, boundary gain `q`.
/// * `custom`: keys `n`, `m`, `eps`, `period`, `lambda1..`, `Mij`, `Qlj`
///   (all one-based).
pub fn catalog(name: &str, params: &Params) -> Result<SystemSpec> {
    let spec = match name {
        "example_1_5" => {
            check_keys(params, &|k| k == "q" || is_matrix_key(k, "M", 2, 2), name)?;
            SystemSpec {
                name: name.into(),
                n: 2,
                m: 1,
                eps: 0.5,
                lambda: vec![ScalarField::constant(-1.0), ScalarField::parse("1 + 1/(1+t)")?],
                coupling: matrix(params, "M", 2, 2)?,
                boundary: vec![vec![field(params, "q", "1")?]],
                period: None,
                extension: TimeExtension::Frozen,
            }
        }
        "unstable_2x2" => {
            check_keys(params, &|k| k == "c", name)?;
            let c = number(params, "c", 4.0)?;
            let off = ScalarField::constant(-c);
            SystemSpec {
                name: name.into(),
                n: 2,
                m: 1,
                eps: 0.5,
                lambda: vec![ScalarField::constant(-1.0), ScalarField::constant(1.0)],
                coupling: vec![vec![ScalarField::constant(0.0), off.clone()], vec![off, ScalarField::constant(0.0)]],
                boundary: vec![vec![ScalarField::constant(1.0)]],
                period: None,
                extension: TimeExtension::Frozen,
            }
        }
        "remark_1_7_3x3" => {
            check_keys(params, &|_| false, name)?;
            let zero = || ScalarField::constant(0.0);
            SystemSpec {
                name: name.into(),
                n: 3,
                m: 2,
                eps: 0.25,
                lambda: vec![
                    ScalarField::constant(-1.0),
                    ScalarField::parse("-(1 - exp(-t)/2)")?,
                    ScalarField::constant(1.0),
                ],
                coupling: vec![
                    vec![zero(), ScalarField::constant(1.0), zero()],
                    vec![zero(), zero(), zero()],
                    vec![zero(), zero(), zero()],
                ],
                boundary: vec![vec![zero(), ScalarField::constant(1.0)]],
                period: None,
                extension: TimeExtension::Frozen,
            }
        }
        "const_2x2" => {
            check_keys(params, &|k| k == "q" || k == "l1" || k == "l2" || is_matrix_key(k, "M", 2, 2), name)?;
            let l1 = number(params, "l1", -1.0)?;
            let l2 = number(params, "l2", 1.0)?;
            SystemSpec {
                name: name.into(),
                n: 2,
                m: 1,
                eps: 0.5 * l1.abs().min(l2.abs()),
                lambda: vec![ScalarField::constant(l1), ScalarField::constant(l2)],
                coupling: matrix(params, "M", 2, 2)?,
                boundary: vec![vec![field(params, "q", "1")?]],
                period: None,
                extension: TimeExtension::Frozen,
            }
        }
        "custom" => {
            let n = number(params, "n", 2.0)? as usize;
            let m = number(params, "m", 1.0)? as usize;
            if m == 0 || m >= n {
                return Err(Error::InvalidSpec(format!("need 1 <= m < n, got n = {}, m = {}", n, m)));
            }
            check_keys(
                params,
                &|k| {
                    matches!(k, "n" | "m" | "eps" | "period")
                        || (1..=n).any(|i| k == format!("lambda{}", i))
                        || is_matrix_key(k, "M", n, n)
                        || is_matrix_key(k, "Q", n - m, m)
                },
                name,
            )?;
            let lambda = (0..n)
                .map(|i| {
                    let key = format!("lambda{}", i + 1);
                    params
                        .get(&key)
                        .ok_or_else(|| Error::InvalidSpec(format!("custom system needs {}", key)))
                        .and_then(|s| ScalarField::parse(s))
                })
                .collect::<Result<Vec<_>>>()?;
            let period = match params.get("period") {
                Some(_) => Some(number(params, "period", 1.0)?),
                None => None,
            };
            SystemSpec {
                name: name.into(),
                n,
                m,
                eps: number(params, "eps", 0.25)?,
                lambda,
                coupling: matrix(params, "M", n, n)?,
                boundary: matrix(params, "Q", n - m, m)?,
                period,
                extension: TimeExtension::Frozen,
            }
        }
        other => return Err(Error::InvalidSpec(format!("unknown catalog system '{}'", other))),
    };
    spec.check_shape()?;
    Ok(spec)
}

/// Convenience for building parameter maps in code.
pub fn params(pairs: &[(&str, &str)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
