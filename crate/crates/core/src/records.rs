//! JSON forms of team types and equilibrium solutions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqg::{RiccatiSchedule, TeamParams, TeamType, TypeSet};
use crate::meanfield::{MFTESolution, MeanFieldTrajectory, TeamModel};
use crate::value_model::ValueWeights;

pub const SCHEMA: &str = "v1";

/// A matrix given either as a bare number (1x1) or as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixRecord {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixRecord {
    fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixRecord::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            MatrixRecord::Rows(rows) => {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                    return Err(Error::config(field, "matrix rows must be non-empty and of equal length"));
                }
                Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
            }
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        if m.nrows() == 1 && m.ncols() == 1 {
            MatrixRecord::Scalar(m[(0, 0)])
        } else {
            MatrixRecord::Rows(rows_of(m))
        }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorRecord {
    Scalar(f64),
    Values(Vec<f64>),
}

fn one() -> f64 {
    1.0
}

/// JSON form of a team type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamTypeRecord {
    pub id: String,
    #[serde(default = "one")]
    pub prob: f64,
    #[serde(rename = "A")]
    pub a: MatrixRecord,
    #[serde(rename = "B")]
    pub b: MatrixRecord,
    #[serde(rename = "Q")]
    pub q: MatrixRecord,
    #[serde(rename = "R")]
    pub r: MatrixRecord,
    #[serde(rename = "K_W")]
    pub k_w: MatrixRecord,
    #[serde(rename = "Sigma0")]
    pub sigma0: MatrixRecord,
    /// Initial mean; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<VectorRecord>,
}

impl TeamTypeRecord {
    /// `field` names the record in error messages, e.g. `types[0]`.
    pub fn to_type(&self, field: &str) -> Result<TeamType<f64>> {
        let f = |name: &str| format!("{field}.{name}");
        let a = self.a.to_matrix(&f("A"))?;
        let nu = match &self.nu {
            None => DVector::zeros(a.nrows()),
            Some(VectorRecord::Scalar(v)) => DVector::from_element(1, *v),
            Some(VectorRecord::Values(v)) => DVector::from_vec(v.clone()),
        };
        TeamType::new(TeamParams {
            id: self.id.clone(),
            prob: self.prob,
            a,
            b: self.b.to_matrix(&f("B"))?,
            q: self.q.to_matrix(&f("Q"))?,
            r: self.r.to_matrix(&f("R"))?,
            k_w: self.k_w.to_matrix(&f("K_W"))?,
            sigma0: self.sigma0.to_matrix(&f("Sigma0"))?,
            nu,
        })
        .map_err(|e| Error::config(field, e.to_string()))
    }

    pub fn from_type(ty: &TeamType<f64>) -> Self {
        let nu = ty.nu();
        TeamTypeRecord {
            id: ty.id().to_string(),
            prob: ty.prob(),
            a: MatrixRecord::from_matrix(ty.a()),
            b: MatrixRecord::from_matrix(ty.b()),
            q: MatrixRecord::from_matrix(ty.q()),
            r: MatrixRecord::from_matrix(ty.r()),
            k_w: MatrixRecord::from_matrix(ty.k_w()),
            sigma0: MatrixRecord::from_matrix(ty.sigma0()),
            nu: if nu.iter().all(|&v| v == 0.0) {
                None
            } else {
                Some(VectorRecord::Values(nu.iter().copied().collect()))
            },
        }
    }
}

pub fn type_set_from_records(records: &[TeamTypeRecord]) -> Result<TypeSet<f64>> {
    if records.is_empty() {
        return Err(Error::config("types", "at least one type is required"));
    }
    let types = records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_type(&format!("types[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    TypeSet::new(types).map_err(|e| Error::config("types", e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    #[serde(rename = "P")]
    p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "L")]
    l: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Gamma")]
    gamma: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Rhat")]
    rhat: Vec<Vec<Vec<f64>>>,
}

fn matrices(ms: &[DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    ms.iter().map(rows_of).collect()
}

fn from_rows(field: &str, rows: &[Vec<Vec<f64>>]) -> Result<Vec<DMatrix<f64>>> {
    rows.iter()
        .map(|m| MatrixRecord::Rows(m.clone()).to_matrix(field))
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TeamDoc {
    #[serde(rename = "type")]
    ty: TeamTypeRecord,
    riccati: ScheduleDoc,
    weights: ValueWeights,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionDoc {
    schema: String,
    config_hash: Option<String>,
    lambda: f64,
    alpha: f64,
    horizon: usize,
    g_star: MeanFieldTrajectory,
    residual: f64,
    mc_std: Vec<f64>,
    iterations: usize,
    converged: bool,
    contraction_certified: bool,
    lipschitz_estimate: Option<f64>,
    residual_history: Vec<f64>,
    teams: Vec<TeamDoc>,
}

impl MFTESolution {
    pub fn to_json(&self) -> Result<String> {
        let doc = SolutionDoc {
            schema: SCHEMA.into(),
            config_hash: self.config_hash.clone(),
            lambda: self.lambda,
            alpha: self.alpha,
            horizon: self.horizon(),
            g_star: self.g_star.clone(),
            residual: self.residual,
            mc_std: self.mc_std.clone(),
            iterations: self.iterations,
            converged: self.converged,
            contraction_certified: self.contraction_certified,
            lipschitz_estimate: self.lipschitz_estimate,
            residual_history: self.residual_history.clone(),
            teams: self
                .teams
                .iter()
                .map(|t| TeamDoc {
                    ty: TeamTypeRecord::from_type(&t.ty),
                    riccati: ScheduleDoc {
                        p: matrices(t.sched.p()),
                        l: matrices(t.sched.l()),
                        gamma: matrices(t.sched.gamma()),
                        rhat: matrices(t.sched.rhat()),
                    },
                    weights: t.weights.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SolutionDoc = serde_json::from_str(text)?;
        if doc.schema != SCHEMA {
            return Err(Error::config("schema", format!("unsupported solution schema {}", doc.schema)));
        }
        if doc.g_star.len() != doc.horizon {
            return Err(Error::config("g_star", "length differs from horizon"));
        }
        let teams = doc
            .teams
            .into_iter()
            .enumerate()
            .map(|(i, t)| -> Result<TeamModel> {
                let field = format!("teams[{i}]");
                let ty = t.ty.to_type(&field)?;
                let sched = RiccatiSchedule::from_parts(
                    from_rows(&field, &t.riccati.p)?,
                    from_rows(&field, &t.riccati.l)?,
                    from_rows(&field, &t.riccati.gamma)?,
                    from_rows(&field, &t.riccati.rhat)?,
                )?;
                if sched.horizon() != doc.horizon || t.weights.all_coeffs().len() != doc.horizon + 1 {
                    return Err(Error::config(field, "horizon differs from solution horizon"));
                }
                Ok(TeamModel {
                    ty,
                    sched,
                    weights: t.weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if teams.is_empty() {
            return Err(Error::config("teams", "solution has no teams"));
        }
        Ok(MFTESolution {
            g_star: doc.g_star,
            teams,
            lambda: doc.lambda,
            alpha: doc.alpha,
            residual: doc.residual,
            mc_std: doc.mc_std,
            iterations: doc.iterations,
            converged: doc.converged,
            contraction_certified: doc.contraction_certified,
            lipschitz_estimate: doc.lipschitz_estimate,
            residual_history: doc.residual_history,
            config_hash: doc.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
