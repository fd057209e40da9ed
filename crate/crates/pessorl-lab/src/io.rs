//! On-disk artifact formats.
//!
//! All writers are deterministic: fixed key order (serde struct order), f64
//! values rendered by the shortest-roundtrip formatter, trailing newline on
//! JSON files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pessorl_core::dataset::{OfflineDataset, Transition};
use pessorl_core::ensemble::{DynamicsEnsemble, DynamicsMember, StateEmbedding};
use pessorl_core::mdp::TabularMdp;
use pessorl_core::theory::{BoundReport, BoundValue, Feasibility};
use pessorl_core::trainer::TraceRecord;

use crate::{io_err, LabError, Result};

/// MDP serialized as nested arrays: `reward[s][a]`, `transition[s][a][sn]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub terminal: Vec<bool>,
}

impl MdpFile {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        MdpFile {
            n_states: n,
            n_actions: m,
            gamma: mdp.gamma(),
            reward: (0..n)
                .map(|s| (0..m).map(|a| mdp.reward(s, a)).collect())
                .collect(),
            transition: (0..n)
                .map(|s| (0..m).map(|a| mdp.transition_row(s, a).to_vec()).collect())
                .collect(),
            terminal: mdp.terminal_mask().to_vec(),
        }
    }

    pub fn into_mdp(self) -> Result<TabularMdp> {
        let flat_r: Vec<f64> = self.reward.into_iter().flatten().collect();
        let flat_t: Vec<f64> = self
            .transition
            .into_iter()
            .flat_map(|per_s| per_s.into_iter().flatten())
            .collect();
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            flat_t,
            flat_r,
            self.gamma,
            self.terminal,
        )
        .map_err(LabError::from)
    }
}

pub fn write_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    write_json(path, &MdpFile::from_mdp(mdp))
}

pub fn read_mdp(path: &Path) -> Result<TabularMdp> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: MdpFile = serde_json::from_str(&text)?;
    file.into_mdp()
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    mdp_id: String,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionLine {
    s: usize,
    a: usize,
    sn: usize,
    r: f64,
}

/// JSON-lines dataset: one header object, then one object per transition.
pub fn write_dataset(path: &Path, dataset: &OfflineDataset) -> Result<()> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&DatasetHeader {
        mdp_id: dataset.mdp_id.clone(),
        seed: dataset.seed,
    })?);
    out.push('\n');
    for t in &dataset.transitions {
        out.push_str(&serde_json::to_string(&TransitionLine {
            s: t.s,
            a: t.a,
            sn: t.s_next,
            r: t.r,
        })?);
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<OfflineDataset> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header: DatasetHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| LabError::Format(format!("{}: empty dataset file", path.display())))?,
    )?;
    let mut transitions = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let t: TransitionLine = serde_json::from_str(line)?;
        transitions.push(Transition {
            s: t.s,
            a: t.a,
            s_next: t.sn,
            r: t.r,
        });
    }
    Ok(OfflineDataset {
        transitions,
        mdp_id: header.mdp_id,
        seed: header.seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MemberFile {
    weights: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingFile {
    dim: usize,
    coords: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleFile {
    members: Vec<MemberFile>,
    embedding: EmbeddingFile,
    n_actions: usize,
    ridge: f64,
    seed: u64,
}

pub fn write_ensemble(path: &Path, ensemble: &DynamicsEnsemble) -> Result<()> {
    let file = EnsembleFile {
        members: ensemble
            .members()
            .iter()
            .map(|m| MemberFile {
                weights: m.weights().to_vec(),
                sigma: m.sigma().to_vec(),
            })
            .collect(),
        embedding: EmbeddingFile {
            dim: ensemble.embedding().dim(),
            coords: (0..ensemble.embedding().n_states())
                .flat_map(|s| ensemble.embedding().coords(s).to_vec())
                .collect(),
        },
        n_actions: ensemble.n_actions(),
        ridge: ensemble.ridge(),
        seed: ensemble.seed(),
    };
    write_json(path, &file)
}

pub fn read_ensemble(path: &Path) -> Result<DynamicsEnsemble> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: EnsembleFile = serde_json::from_str(&text)?;
    let members = file
        .members
        .into_iter()
        .map(|m| DynamicsMember::from_parts(m.weights, m.sigma))
        .collect();
    Ok(DynamicsEnsemble::from_parts(
        members,
        StateEmbedding::new(file.embedding.dim, file.embedding.coords),
        file.n_actions,
        file.ridge,
        file.seed,
    ))
}

#[derive(Debug, Serialize)]
struct TraceRow {
    step: usize,
    delta_k: f64,
    epsilon: f64,
    mean_return: f64,
    lb_violations: usize,
    objective: f64,
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for rec in trace {
        wtr.serialize(TraceRow {
            step: rec.step,
            delta_k: rec.delta_k,
            epsilon: rec.epsilon,
            mean_return: rec.mean_return,
            lb_violations: rec.lb_violations,
            objective: rec.objective,
        })?;
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

/// A bound rendered for serialization: either a finite number or a reason
/// why no finite value applies.
#[derive(Debug, Serialize, Deserialize)]
pub struct BoundField {
    pub value: Option<f64>,
    pub reason: Option<String>,
}

impl From<&BoundValue> for BoundField {
    fn from(b: &BoundValue) -> Self {
        BoundField {
            value: b.finite(),
            reason: b.reason().map(str::to_owned),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeasibilityFile {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: BoundField,
    pub u: BoundField,
    pub alpha: f64,
    pub alpha_floor: BoundField,
    pub epsilon_interval: Option<[f64; 2]>,
}

impl From<&Feasibility> for FeasibilityFile {
    fn from(f: &Feasibility) -> Self {
        FeasibilityFile {
            x: f.x,
            y: f.y,
            z: f.z,
            w: (&f.w).into(),
            u: (&f.u).into(),
            alpha: f.alpha,
            alpha_floor: (&f.alpha_floor).into(),
            epsilon_interval: f.epsilon_interval.map(|(lo, hi)| [lo, hi]),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BoundsFile {
    pub ratio_bound: BoundField,
    pub alpha_min: BoundField,
    pub epsilon_min_thm2: BoundField,
    pub feasibility: FeasibilityFile,
}

impl From<&BoundReport> for BoundsFile {
    fn from(r: &BoundReport) -> Self {
        BoundsFile {
            ratio_bound: (&r.ratio_bound).into(),
            alpha_min: (&r.alpha_min).into(),
            epsilon_min_thm2: (&r.epsilon_min_thm2).into(),
            feasibility: (&r.feasibility).into(),
        }
    }
}

pub fn write_bounds(path: &Path, report: &BoundReport) -> Result<()> {
    write_json(path, &BoundsFile::from(report))
}

/// One row per state of the uncertainty map: embedding coordinates, raw
/// policy-weighted disagreement, its normalized form, and the data density.
#[derive(Debug, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub state: usize,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub zeta: f64,
    pub d_beta: f64,
}

pub fn write_uncertainty_map(path: &Path, rows: &[UncertaintyRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

/// Headline numbers for a finished run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub variant: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_transitions: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub delta_k: f64,
    pub epsilon_final: f64,
    pub lb_violations: usize,
    pub objective: f64,
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    write_json(path, summary)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
