//! On-disk solution format: a single JSON document holding the sampled
//! trajectory, the boundary block, and (when available) the recovered
//! covectors. The format does not assume the samples sit on a spectral
//! grid, so externally produced trajectories can be checked with the same
//! tooling.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{GridFamily, GridKind};
use crate::solver::{extract_covectors, Covectors, KktResiduals, SolveReport, Status};
use crate::transcription::TranscribedNlp;

pub const SCHEMA_VERSION: u32 = 1;

/// Which spectral grid produced the samples, absent for external data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridStamp {
    pub code: String,
    pub family: GridFamily,
    pub kind: GridKind,
    pub order: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema: u32,
    pub problem: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<GridStamp>,
    pub cost_scale: f64,
    pub status: Status,
    pub objective: f64,
    pub ta: f64,
    pub tf: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kkt: Option<KktResiduals>,
    /// Sample times, ascending. Need not include the endpoints.
    pub t: Vec<f64>,
    /// State samples, one row per state dimension.
    pub x: Vec<Vec<f64>>,
    /// Control samples, one row per control dimension.
    pub u: Vec<Vec<f64>>,
    /// Scaled derivative samples (gamma xdot), one row per state dimension.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v: Option<Vec<Vec<f64>>>,
    /// Boundary states.
    pub xa: Vec<f64>,
    pub xb: Vec<f64>,
    /// Static parameters.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub p: Vec<f64>,
    /// Costate samples, one row per state dimension; absent when the file
    /// carries no dual information.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<Vec<Vec<f64>>>,
    /// Path covector samples, one row per path constraint.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu: Option<Vec<Vec<f64>>>,
    /// Event multipliers.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nu: Option<Vec<f64>>,
    /// Hamiltonian samples (scaled running cost plus lambda' f).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hamiltonian: Option<Vec<f64>>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl SolutionFile {
    /// Packages a solved transcription. Pass the covectors to embed duals;
    /// without them the dual fields stay absent.
    pub fn from_report(
        nlp: &TranscribedNlp,
        report: &SolveReport,
        covectors: Option<&Covectors>,
    ) -> SolutionFile {
        let l = &nlp.layout;
        let num = l.num_nodes;
        let z = &report.z;
        let tb = nlp.tb(z);
        let ta = nlp.ocp.time.ta();
        let gather = |off: usize, rows: usize| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|i| (0..num).map(|k| z[off + i * num + k]).collect())
                .collect()
        };
        let spec = nlp.grid().spec;
        SolutionFile {
            schema: SCHEMA_VERSION,
            problem: nlp.ocp.name.clone(),
            grid: Some(GridStamp {
                code: spec.code().to_string(),
                family: spec.family,
                kind: spec.kind,
                order: spec.order,
            }),
            cost_scale: nlp.ocp.cost_scale,
            status: report.status,
            objective: report.objective,
            ta,
            tf: tb,
            kkt: Some(report.kkt),
            t: nlp.node_times(tb),
            x: gather(0, l.nx),
            u: gather(l.u_off, l.nu),
            v: Some(gather(l.v_off, l.nx)),
            xa: (0..l.nx).map(|i| z[l.xa_idx(i)]).collect(),
            xb: (0..l.nx).map(|i| z[l.xb_idx(i)]).collect(),
            p: (0..l.np).map(|i| z[l.p_off + i]).collect(),
            lambda: covectors.map(|c| rows(&c.lambda)),
            mu: covectors.map(|c| rows(&c.mu_path)),
            nu: covectors.map(|c| c.nu.iter().copied().collect()),
            hamiltonian: covectors.map(|c| c.hamiltonian.iter().copied().collect()),
        }
    }

    /// Convenience wrapper that extracts the covectors itself.
    pub fn from_report_with_duals(nlp: &TranscribedNlp, report: &SolveReport) -> SolutionFile {
        let cov = extract_covectors(nlp, report);
        SolutionFile::from_report(nlp, report, Some(&cov))
    }

    pub fn has_duals(&self) -> bool {
        self.lambda.is_some()
    }

    pub fn num_samples(&self) -> usize {
        self.t.len()
    }

    pub fn num_states(&self) -> usize {
        self.x.len()
    }

    pub fn num_controls(&self) -> usize {
        self.u.len()
    }

    /// Shape and ordering checks; every loader should call this.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::SolutionFormat(msg));
        if self.schema != SCHEMA_VERSION {
            return fail(format!(
                "schema {} unsupported, expected {SCHEMA_VERSION}",
                self.schema
            ));
        }
        let n = self.t.len();
        if n == 0 {
            return fail("no sample times".to_string());
        }
        if !(self.tf > self.ta) {
            return fail(format!("tf {} must exceed ta {}", self.tf, self.ta));
        }
        if self.t.windows(2).any(|w| w[1] <= w[0]) {
            return fail("sample times must increase strictly".to_string());
        }
        if self.t[0] < self.ta - 1e-9 || *self.t.last().unwrap() > self.tf + 1e-9 {
            return fail("sample times leave [ta, tf]".to_string());
        }
        let check_rows = |what: &str, rows: &[Vec<f64>], want_rows: usize| -> Result<()> {
            if rows.len() != want_rows {
                return Err(Error::SolutionFormat(format!(
                    "{what}: {} rows, expected {want_rows}",
                    rows.len()
                )));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::SolutionFormat(format!(
                        "{what} row {i}: {} samples, expected {n}",
                        row.len()
                    )));
                }
            }
            Ok(())
        };
        let nx = self.x.len();
        check_rows("x", &self.x, nx)?;
        check_rows("u", &self.u, self.u.len())?;
        if self.xa.len() != nx || self.xb.len() != nx {
            return fail(format!(
                "boundary states have {} / {} entries, expected {nx}",
                self.xa.len(),
                self.xb.len()
            ));
        }
        if let Some(v) = &self.v {
            check_rows("v", v, nx)?;
        }
        if let Some(lam) = &self.lambda {
            check_rows("lambda", lam, nx)?;
        }
        if let Some(mu) = &self.mu {
            check_rows("mu", mu, mu.len())?;
        }
        if let Some(h) = &self.hamiltonian {
            if h.len() != n {
                return fail(format!(
                    "hamiltonian has {} samples, expected {n}",
                    h.len()
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<SolutionFile> {
        let sol: SolutionFile = serde_json::from_str(text)?;
        sol.validate()?;
        Ok(sol)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SolutionFile> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        SolutionFile::from_json(&text)
    }
}
