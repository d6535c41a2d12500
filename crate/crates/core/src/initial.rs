//! Named initial conditions.
//!
//! | descriptor   | segment on `[-1, 0]`                                   |
//! |--------------|--------------------------------------------------------|
//! | `const:c`    | `s ↦ c`                                                |
//! | `linear`     | `s ↦ s`                                                |
//! | `cos:k`      | `s ↦ cos(2πk s)`                                       |
//! | `saw`        | two-tooth sawtooth `s ↦ 2·frac(2(s+1)) − 1`, values in `[-1, 1)` |
//! | `file:path`  | grid sample read from `path`, resampled linearly to `N` |
//!
//! A file holds the values at equally spaced points from `s = -1` to
//! `s = 0`, separated by whitespace or commas; `#` starts a comment.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::segment::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitialCondition {
    Constant(f64),
    Linear,
    Cosine(f64),
    Sawtooth,
    File(PathBuf),
}

impl InitialCondition {
    /// Samples the descriptor on a grid of resolution `n`.
    pub fn to_segment(&self, n: usize) -> Result<Segment> {
        use std::f64::consts::PI;
        let seg = match self {
            InitialCondition::Constant(c) => Segment::constant(n, *c)?,
            InitialCondition::Linear => Segment::from_fn(n, |s| s)?,
            InitialCondition::Cosine(k) => Segment::from_fn(n, |s| (2.0 * PI * k * s).cos())?,
            InitialCondition::Sawtooth => Segment::from_fn(n, |s| {
                let u = 2.0 * (s + 1.0);
                2.0 * (u - u.floor()) - 1.0
            })?,
            InitialCondition::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| self.invalid(e.to_string()))?;
                let raw = parse_values(&text).map_err(|r| self.invalid(r))?;
                resample(&raw, n)?
            }
        };
        Ok(seg)
    }

    /// Samples and rejects the zero segment.
    pub fn to_nonzero_segment(&self, n: usize) -> Result<Segment> {
        let seg = self.to_segment(n)?;
        if seg.is_zero() {
            return Err(self.invalid("resolves to the zero segment".into()));
        }
        Ok(seg)
    }

    fn invalid(&self, reason: String) -> SimError {
        SimError::InvalidInitialCondition {
            spec: self.to_string(),
            reason,
        }
    }
}

fn parse_values(text: &str) -> std::result::Result<Vec<f64>, String> {
    let values = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad number `{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() < 2 {
        return Err(format!("need at least 2 values, found {}", values.len()));
    }
    Ok(values)
}

/// Linear interpolation of equally spaced `raw` samples onto `n + 1` points.
fn resample(raw: &[f64], n: usize) -> Result<Segment> {
    if raw.len() == n + 1 {
        return Segment::new(raw.to_vec());
    }
    let m = (raw.len() - 1) as f64;
    Segment::new(
        (0..=n)
            .map(|k| {
                let pos = k as f64 / n as f64 * m;
                let i = (pos.floor() as usize).min(raw.len() - 2);
                let w = pos - i as f64;
                (1.0 - w) * raw[i] + w * raw[i + 1]
            })
            .collect(),
    )
}

impl FromStr for InitialCondition {
    type Err = SimError;

    fn from_str(spec: &str) -> Result<Self> {
        let bad = |reason: &str| SimError::InvalidInitialCondition {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| bad("missing numeric argument"))?;
            let v: f64 = a.trim().parse().map_err(|_| bad("argument is not a number"))?;
            if !v.is_finite() {
                return Err(bad("argument must be finite"));
            }
            Ok(v)
        };
        match (kind, arg) {
            ("const", a) => Ok(InitialCondition::Constant(number(a)?)),
            ("cos", a) => Ok(InitialCondition::Cosine(number(a)?)),
            ("linear", None) => Ok(InitialCondition::Linear),
            ("saw", None) => Ok(InitialCondition::Sawtooth),
            ("file", Some(p)) if !p.is_empty() => Ok(InitialCondition::File(PathBuf::from(p))),
            ("linear" | "saw", Some(_)) => Err(bad("takes no argument")),
            ("file", _) => Err(bad("missing path")),
            _ => Err(bad("unknown kind; expected const:c, linear, cos:k, saw or file:path")),
        }
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Constant(c) => write!(f, "const:{c}"),
            InitialCondition::Linear => write!(f, "linear"),
            InitialCondition::Cosine(k) => write!(f, "cos:{k}"),
            InitialCondition::Sawtooth => write!(f, "saw"),
            InitialCondition::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl TryFrom<String> for InitialCondition {
    type Error = SimError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitialCondition> for String {
    fn from(ic: InitialCondition) -> Self {
        ic.to_string()
    }
}
