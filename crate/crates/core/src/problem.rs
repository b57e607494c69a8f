//! JSON problem files.
//!
//! ```json
//! {
//!   "n_vars": 1,
//!   "drift": ["-x1"],
//!   "diffusion": [["0.7071067811865476*x1"]],
//!   "h0": "x1^2 - 1",
//!   "g": "100*x1^2",
//!   "p_threshold": 0.9,
//!   "domain": { "ball": { "center": [0.0], "radius": 1.0 } },
//!   "degrees": { "d_v": 8, "d_u": 8, "d_s": 8, "d_p": 8 }
//! }
//! ```
//!
//! `diffusion` has one row per state variable; an empty list means an ODE.
//! `ini` adds the initial set `{ini <= 0}` for safety mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::SdeSystem;
use crate::moments::IntegrationDomain;
use crate::poly::Polynomial;
use crate::sos::{DegreeConfig, ReachAvoidProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_vars: usize,
    pub drift: Vec<String>,
    #[serde(default)]
    pub diffusion: Vec<Vec<String>>,
    pub h0: String,
    pub g: String,
    pub p_threshold: f64,
    pub domain: IntegrationDomain,
    pub degrees: DegreeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ini: Option<String>,
}

/// A problem file that failed to load, located in the file text.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{field} at line {line}, column {column}: {message}")]
pub struct ProblemFileError {
    pub field: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// A parsed problem with its polynomials.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub file: ProblemFile,
    pub problem: ReachAvoidProblem,
    pub ini: Option<Polynomial>,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> std::result::Result<ProblemFile, ProblemFileError> {
        serde_json::from_str(text).map_err(|e| ProblemFileError {
            field: "json".into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses the JSON and every polynomial string. `text` is used to point
    /// parse errors at the offending character in the file.
    pub fn load(text: &str) -> std::result::Result<LoadedProblem, ProblemFileError> {
        let file = ProblemFile::from_json(text)?;
        let built = file.build(Some(text))?;
        Ok(built)
    }

    /// Builds the problem. Errors carry the field name and, when `source` is
    /// given, the line and column inside it.
    pub fn build(&self, source: Option<&str>) -> std::result::Result<LoadedProblem, ProblemFileError> {
        let n = self.n_vars;
        let poly = |field: &str, s: &str| -> std::result::Result<Polynomial, ProblemFileError> {
            Polynomial::parse_detailed(s, n).map_err(|e| {
                let (line, column) = source.and_then(|src| locate(src, s, e.line, e.column)).unwrap_or((e.line, e.column));
                ProblemFileError { field: field.into(), line, column, message: e.message }
            })
        };
        let plain = |field: &str, message: String| ProblemFileError { field: field.into(), line: 0, column: 0, message };

        if self.drift.len() != n {
            return Err(plain("drift", format!("expected {n} components, found {}", self.drift.len())));
        }
        let drift = self
            .drift
            .iter()
            .enumerate()
            .map(|(i, s)| poly(&format!("drift[{i}]"), s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut diffusion = Vec::with_capacity(self.diffusion.len());
        for (i, row) in self.diffusion.iter().enumerate() {
            let parsed = row
                .iter()
                .enumerate()
                .map(|(j, s)| poly(&format!("diffusion[{i}][{j}]"), s))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            diffusion.push(parsed);
        }
        let h0 = poly("h0", &self.h0)?;
        let g = poly("g", &self.g)?;
        let ini = self.ini.as_deref().map(|s| poly("ini", s)).transpose()?;
        let sde = SdeSystem::new(drift, diffusion).map_err(|e| plain("diffusion", e.to_string()))?;
        self.degrees.validate().map_err(|e| plain("degrees", e.to_string()))?;
        let problem = ReachAvoidProblem::new(sde, h0, g, self.p_threshold, self.domain.clone())
            .map_err(|e| plain("problem", e.to_string()))?;
        Ok(LoadedProblem { file: self.clone(), problem, ini })
    }
}

/// Line and column in `src` of position `(line, column)` (1-based) inside
/// the JSON string literal whose content is `s`.
fn locate(src: &str, s: &str, line: usize, column: usize) -> Option<(usize, usize)> {
    if line != 1 || s.contains(['\\', '"', '\n']) {
        return None;
    }
    let needle = format!("\"{s}\"");
    let at = src.find(&needle)? + 1 + column - 1;
    let before = &src[..at];
    let l = before.matches('\n').count() + 1;
    let c = before.len() - before.rfind('\n').map_or(0, |k| k + 1) + 1;
    Some((l, c))
}

pub fn load_problem_file(path: &std::path::Path) -> Result<LoadedProblem> {
    let text = std::fs::read_to_string(path)?;
    ProblemFile::load(&text).map_err(|e| Error::InvalidProblem(e.to_string()))
}
