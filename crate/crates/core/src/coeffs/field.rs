use serde::{Deserialize, Serialize};

use super::expr::{Expr, Var};
use crate::error::{Error, Result};

/// Bilinear table on a tensor grid with explicit `t` and `x` axes.
/// `values` is row-major: `values[k * x.len() + a]` sits at `(t[k], x[a])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn new(t: Vec<f64>, x: Vec<f64>, values: Vec<f64>) -> Result<Table> {
        let table = Table { t, x, values };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        if self.t.is_empty() || self.x.is_empty() {
            return Err(Error::InvalidSpec("table axes must be non-empty".into()));
        }
        if self.values.len() != self.t.len() * self.x.len() {
            return Err(Error::InvalidSpec(format!(
                "table has {} values but axes need {}",
                self.values.len(),
                self.t.len() * self.x.len()
            )));
        }
        for axis in [&self.t, &self.x] {
            if axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidSpec("table axes must be strictly increasing".into()));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("table contains non-finite values".into()));
        }
        Ok(())
    }

    fn in_domain(&self, t: f64, x: f64) -> bool {
        t >= self.t[0] && t <= *self.t.last().unwrap() && x >= self.x[0] && x <= *self.x.last().unwrap()
    }

    // Queries are clamped into the domain.
    fn eval_clamped(&self, t: f64, x: f64) -> f64 {
        let (k0, k1, wt) = locate(&self.t, t);
        let (a0, a1, wx) = locate(&self.x, x);
        let nx = self.x.len();
        let v = |k: usize, a: usize| self.values[k * nx + a];
        let lo = v(k0, a0) * (1.0 - wx) + v(k0, a1) * wx;
        let hi = v(k1, a0) * (1.0 - wx) + v(k1, a1) * wx;
        lo * (1.0 - wt) + hi * wt
    }
}

fn locate(axis: &[f64], s: f64) -> (usize, usize, f64) {
    let n = axis.len();
    if n == 1 || s <= axis[0] {
        return (0, 0, 0.0);
    }
    if s >= axis[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = axis.partition_point(|&v| v <= s);
    let lo = hi - 1;
    (lo, hi, (s - axis[lo]) / (axis[hi] - axis[lo]))
}

/// A coefficient on `[0, ∞) × [0, 1]`, either closed-form or tabulated.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Expr(Expr),
    Table(Table),
}

impl ScalarField {
    pub fn constant(v: f64) -> ScalarField {
        ScalarField::Expr(Expr::Const(v))
    }

    pub fn parse(src: &str) -> Result<ScalarField> {
        Ok(ScalarField::Expr(Expr::parse(src)?))
    }

    /// Checked evaluation: errors outside `t ≥ 0`, `x ∈ [0, 1]` (or the table axes).
    pub fn evaluate(&self, t: f64, x: f64) -> Result<f64> {
        let inside = match self {
            ScalarField::Expr(_) => t >= 0.0 && (0.0..=1.0).contains(&x),
            ScalarField::Table(tab) => tab.in_domain(t, x),
        };
        if !inside || !t.is_finite() || !x.is_finite() {
            return Err(Error::OutOfDomain { t, x });
        }
        Ok(self.eval(t, x))
    }

    /// Unchecked evaluation. Tables clamp to their axes; expressions are
    /// evaluated as written.
    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            ScalarField::Expr(e) => e.eval(t, x),
            ScalarField::Table(tab) => tab.eval_clamped(t, x),
        }
    }

    pub fn depends_on_t(&self) -> bool {
        match self {
            ScalarField::Expr(e) => e.depends_on(Var::T),
            ScalarField::Table(tab) => tab.t.len() > 1,
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarField::Expr(e) => e.as_constant(),
            ScalarField::Table(tab) => {
                let v0 = tab.values[0];
                tab.values.iter().all(|&v| v == v0).then_some(v0)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }
}

impl Serialize for ScalarField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ScalarField::Expr(e) => s.serialize_str(&e.to_string()),
            ScalarField::Table(t) => t.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ScalarField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
            Table(Table),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => ScalarField::parse(&s).map_err(serde::de::Error::custom),
            Raw::Number(v) => Ok(ScalarField::constant(v)),
            Raw::Table(t) => {
                t.check().map_err(serde::de::Error::custom)?;
                Ok(ScalarField::Table(t))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_domain() {
        let f = ScalarField::parse("1 + 1/(1+t)").unwrap();
        assert_eq!(f.evaluate(1.0, 0.3).unwrap(), 1.5);
        assert!(matches!(f.evaluate(-0.5, 0.3), Err(Error::OutOfDomain { .. })));
        assert!(matches!(f.evaluate(0.5, 1.5), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn table_is_bilinear() {
        let tab = Table::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let f = ScalarField::Table(tab);
        assert!((f.evaluate(0.5, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(f.evaluate(1.0, 1.0).unwrap(), 3.0);
        assert!(f.evaluate(1.5, 0.5).is_err());
    }

    #[test]
    fn json_forms() {
        let f: ScalarField = serde_json::from_str("\"-1\"").unwrap();
        assert_eq!(f.as_constant(), Some(-1.0));
        let f: ScalarField = serde_json::from_str("2.5").unwrap();
        assert_eq!(f.as_constant(), Some(2.5));
        let f: ScalarField =
            serde_json::from_str(r#"{"t":[0,1],"x":[0,1],"values":[0,1,2,3]}"#).unwrap();
        assert!(f.depends_on_t());
        assert!(serde_json::from_str::<ScalarField>(r#"{"t":[0,1],"x":[0,1],"values":[0]}"#).is_err());
    }
}
