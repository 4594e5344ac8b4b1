//! File formats: the gains file (JSON), trace files (CSV) and the
//! append-only report file (TOML arrays of tables).

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{ts_model_for, FuzzyError, PdcController, SectorBounds, TsModel};
use crate::models::PlantModel;
use crate::lmi::{RuleSolution, RuleVerification, SynthesisResult};
use crate::sim::SimTrace;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("report serialization failed: {0}")]
    Toml(#[from] toml::ser::Error),
    #[error("malformed gains file: {0}")]
    Format(String),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

fn file_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

/// Dense matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StoredMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, IoError> {
        if self.data.len() != self.rows * self.cols {
            return Err(IoError::Format(format!(
                "{}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResiduals {
    pub hinf_block_max_eig: f64,
    pub spectral_abscissa: f64,
    pub input_bound: f64,
    pub initial_condition: f64,
    pub gain_identity: f64,
}

impl From<&RuleVerification> for StoredResiduals {
    fn from(v: &RuleVerification) -> Self {
        Self {
            hinf_block_max_eig: v.hinf_block_max_eig,
            spectral_abscissa: v.spectral_abscissa,
            input_bound: v.input_bound_residual,
            initial_condition: v.initial_condition_residual,
            gain_identity: v.gain_identity_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRule {
    pub rule: usize,
    pub gamma: f64,
    pub x: StoredMatrix,
    pub m: StoredMatrix,
    pub k: StoredMatrix,
    pub iterations: usize,
    pub margin: f64,
    pub gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<StoredResiduals>,
}

/// Everything needed to rebuild a controller and re-verify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub plant: PlantModel,
    /// Tolic premise bounds used at design time; `None` means derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector_bounds: Option<SectorBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub mu: f64,
    pub eps_feas: f64,
    pub x0: Vec<f64>,
    pub rules: Vec<StoredRule>,
}

impl GainsFile {
    pub fn from_result(
        plant: &PlantModel,
        sector_bounds: Option<SectorBounds>,
        preset: Option<&str>,
        result: &SynthesisResult,
        checks: Option<&[RuleVerification]>,
    ) -> Self {
        let rules = result
            .rules
            .iter()
            .enumerate()
            .map(|(i, r)| StoredRule {
                rule: i,
                gamma: r.gamma,
                x: StoredMatrix::from_matrix(&r.x_block),
                m: StoredMatrix::from_matrix(&r.m_block),
                k: StoredMatrix::from_matrix(&r.gain),
                iterations: r.iterations,
                margin: r.margin,
                gap: r.gap,
                residuals: checks.and_then(|c| c.iter().find(|v| v.rule == i)).map(StoredResiduals::from),
            })
            .collect();
        Self {
            plant: *plant,
            sector_bounds,
            preset: preset.map(str::to_owned),
            mu: result.mu,
            eps_feas: result.eps_feas,
            x0: result.x0.as_slice().to_vec(),
            rules,
        }
    }

    pub fn to_result(&self) -> Result<SynthesisResult, IoError> {
        let mut rules = Vec::with_capacity(self.rules.len());
        for (i, r) in self.rules.iter().enumerate() {
            if r.rule != i {
                return Err(IoError::Format(format!("rule {} stored at position {i}", r.rule)));
            }
            rules.push(RuleSolution {
                x_block: r.x.to_matrix()?,
                m_block: r.m.to_matrix()?,
                gain: r.k.to_matrix()?,
                gamma: r.gamma,
                iterations: r.iterations,
                margin: r.margin,
                gap: r.gap,
            });
        }
        Ok(SynthesisResult {
            rules,
            mu: self.mu,
            x0: DVector::from_vec(self.x0.clone()),
            eps_feas: self.eps_feas,
        })
    }

    /// The fuzzy model the gains were designed for.
    pub fn ts_model(&self) -> Result<TsModel, IoError> {
        Ok(ts_model_for(&self.plant, self.sector_bounds)?)
    }

    pub fn controller(&self) -> Result<PdcController, IoError> {
        let gains = self.rules.iter().map(|r| r.k.to_matrix()).collect::<Result<_, _>>()?;
        Ok(PdcController::new(gains)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(file_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(file_err(path))?;
        serde_json::from_str(&text).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Header row of a trace file with `n` states and `r` rules.
pub fn trace_header(n: usize, r: usize) -> String {
    let mut cols = vec!["t".to_owned()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=r).map(|i| format!("h{i}")));
    cols.extend(["u_cmd", "u_pump", "u_applied", "v", "y", "V"].map(String::from));
    cols.join(",")
}

/// Writes a trace as CSV. `V` is left empty when no Lyapunov data was recorded.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &SimTrace) -> io::Result<()> {
    let (n, r) = trace
        .samples
        .first()
        .map_or((0, 0), |s| (s.x.len(), s.h.len()));
    writeln!(out, "{}", trace_header(n, r))?;
    for s in &trace.samples {
        write!(out, "{}", s.t)?;
        for v in s.x.iter().chain(&s.h).chain([&s.u_cmd, &s.u_pump, &s.u_applied, &s.v, &s.y]) {
            write!(out, ",{v}")?;
        }
        match s.v_lyap {
            Some(v) => writeln!(out, ",{v}")?,
            None => writeln!(out, ",")?,
        }
    }
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &SimTrace) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(file_err(path))?;
    let mut w = io::BufWriter::new(file);
    write_trace_csv(&mut w, trace)
        .and_then(|()| w.flush())
        .map_err(file_err(path))
}

/// Renders `entry` as one `[[section]]` table.
pub fn report_entry<T: Serialize>(section: &str, entry: &T) -> Result<String, IoError> {
    #[derive(Serialize)]
    struct One<'a, T> {
        #[serde(flatten)]
        inner: std::collections::BTreeMap<&'a str, [&'a T; 1]>,
    }
    let one = One {
        inner: [(section, [entry])].into_iter().collect(),
    };
    Ok(toml::to_string(&one)?)
}

/// Appends one `[[section]]` table to the report file, creating it if needed.
pub fn append_report<T: Serialize>(path: &Path, section: &str, entry: &T) -> Result<(), IoError> {
    let text = report_entry(section, entry)?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(file_err(path))?;
    writeln!(f, "{text}").map_err(file_err(path))
}
