//! Experiment configuration: JSON or TOML files mirroring the core trainer
//! options, plus environment construction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pessorl_core::ensemble::StateEmbedding;
use pessorl_core::maze::MazeSpec;
use pessorl_core::mdp::TabularMdp;
use pessorl_core::trainer::{EpsilonMode, TrainerConfig, VariantConfig};

use crate::{io_err, LabError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub maze: EnvSpec,
    pub dataset: DatasetSpec,
    pub ensemble: EnsembleSpec,
    pub trainer: TrainerSpec,
    pub eval: EvalSpec,
    pub output_dir: PathBuf,
}

/// The environment section: a named preset, explicit maze geometry, or a
/// seeded random MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSpec {
    Preset { preset: String },
    Maze(MazeFields),
    Random(RandomMdpSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeFields {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub walls: Vec<[usize; 2]>,
    pub start_cells: Vec<[usize; 2]>,
    pub goal_cell: [usize; 2],
    pub step_reward: f64,
    pub goal_reward: f64,
    pub slip_prob: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub sparsity: f64,
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.95
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub behavior_epsilon: f64,
    pub n_episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_models: usize,
    pub ridge: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub variant: VariantSpec,
    #[serde(default = "d_lr_q")]
    pub lr_q: f64,
    #[serde(default = "d_n_steps")]
    pub n_steps: usize,
    #[serde(default = "d_refresh")]
    pub ensemble_refresh: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_true")]
    pub use_closed_form: bool,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub use_exact_backup: bool,
    #[serde(default = "d_p_min")]
    pub p_min: f64,
    #[serde(default = "d_d_min")]
    pub d_min: f64,
    #[serde(default = "d_rollouts")]
    pub eval_rollouts: usize,
    #[serde(default = "d_eval_max_steps")]
    pub eval_max_steps: usize,
}

fn d_lr_q() -> f64 {
    TrainerConfig::default().lr_q
}
fn d_n_steps() -> usize {
    TrainerConfig::default().n_steps
}
fn d_refresh() -> usize {
    TrainerConfig::default().ensemble_refresh
}
fn d_true() -> bool {
    true
}
fn d_eval_every() -> usize {
    TrainerConfig::default().eval_every
}
fn d_p_min() -> f64 {
    TrainerConfig::default().p_min
}
fn d_d_min() -> f64 {
    TrainerConfig::default().d_min
}
fn d_rollouts() -> usize {
    TrainerConfig::default().eval_rollouts
}
fn d_eval_max_steps() -> usize {
    TrainerConfig::default().eval_max_steps
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    /// One of `standard`, `cql`, `pessorl`, `pessorl-uniform`,
    /// `pessorl-unc`, `pessorl-opiq` (case-insensitive).
    pub kind: String,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub epsilon_mode: EpsilonSpec,
    #[serde(default = "d_beta_unc")]
    pub beta_unc: f64,
    #[serde(default = "d_c_action")]
    pub c_action: f64,
    #[serde(default = "d_m_exp")]
    pub m_exp: f64,
}

fn d_beta_unc() -> f64 {
    1.0
}
fn d_c_action() -> f64 {
    1.0
}
fn d_m_exp() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonSpec {
    Fixed(f64),
    Lagrangian { tau: f64, lr: f64 },
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::Fixed(0.0)
    }
}

impl EpsilonSpec {
    fn to_core(&self) -> EpsilonMode {
        match *self {
            EpsilonSpec::Fixed(e) => EpsilonMode::Fixed(e),
            EpsilonSpec::Lagrangian { tau, lr } => EpsilonMode::Lagrangian { tau, lr },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub n_rollouts: usize,
    pub random_starts: bool,
    pub seed: u64,
    #[serde(default = "d_eval_max_steps")]
    pub max_steps: usize,
}

/// The environment realized from an [`EnvSpec`]: the MDP, a geometric state
/// embedding for the dynamics ensemble, designated start states, and 2-D
/// plotting coordinates per state.
pub struct BuiltEnv {
    pub mdp: TabularMdp,
    pub embedding: StateEmbedding,
    pub start_states: Vec<usize>,
    pub mdp_id: String,
    pub plot_coords: Vec<(f64, f64)>,
}

impl EnvSpec {
    pub fn build(&self) -> Result<BuiltEnv> {
        match self {
            EnvSpec::Preset { preset } => {
                let spec = match preset.as_str() {
                    "hard" => MazeSpec::hard(),
                    "superhard" => MazeSpec::superhard(),
                    other => {
                        return Err(LabError::Config(format!(
                            "maze.preset: unknown preset {other:?} (expected \"hard\" or \"superhard\")"
                        )))
                    }
                };
                build_maze(&spec, format!("maze-{preset}"))
            }
            EnvSpec::Maze(f) => {
                let spec = MazeSpec {
                    width: f.width,
                    height: f.height,
                    walls: f.walls.iter().map(|&[x, y]| (x, y)).collect(),
                    start_cells: f.start_cells.iter().map(|&[x, y]| (x, y)).collect(),
                    goal_cell: (f.goal_cell[0], f.goal_cell[1]),
                    step_reward: f.step_reward,
                    goal_reward: f.goal_reward,
                    slip_prob: f.slip_prob,
                    gamma: f.gamma,
                };
                build_maze(&spec, format!("maze-{}x{}", f.width, f.height))
            }
            EnvSpec::Random(r) => {
                let mdp = TabularMdp::random(r.n_states, r.n_actions, r.sparsity, r.gamma, r.seed)
                    .map_err(|e| LabError::Config(format!("maze: {e}")))?;
                let starts: Vec<usize> =
                    (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)).collect();
                let plot_coords = (0..mdp.n_states()).map(|s| (s as f64, 0.0)).collect();
                Ok(BuiltEnv {
                    embedding: StateEmbedding::line(mdp.n_states()),
                    start_states: starts,
                    mdp_id: format!("random-{}-{}", r.n_states, r.seed),
                    plot_coords,
                    mdp,
                })
            }
        }
    }
}

fn build_maze(spec: &MazeSpec, mdp_id: String) -> Result<BuiltEnv> {
    spec.validate()
        .map_err(|e| LabError::Config(format!("maze: {e}")))?;
    let mdp = spec.build()?;
    let embedding = spec.embedding();
    let plot_coords = (0..mdp.n_states())
        .map(|s| {
            let c = embedding.coords(s);
            (c[0], c[1])
        })
        .collect();
    Ok(BuiltEnv {
        mdp,
        embedding,
        start_states: spec.start_states(),
        mdp_id,
        plot_coords,
    })
}

impl TrainerSpec {
    pub fn to_core(&self) -> Result<TrainerConfig> {
        let v = &self.variant;
        let mode = v.epsilon_mode.to_core();
        let variant = match v.kind.to_ascii_lowercase().as_str() {
            "standard" => VariantConfig::standard(),
            "cql" => VariantConfig::cql(v.alpha),
            "pessorl" => VariantConfig::pessorl(v.alpha, mode),
            "pessorl-uniform" => VariantConfig::pessorl_uniform(v.alpha, mode),
            "pessorl-unc" => VariantConfig::pessorl_unc(v.alpha, v.beta_unc),
            "pessorl-opiq" => VariantConfig::pessorl_opiq(v.alpha, v.c_action, v.m_exp),
            other => {
                return Err(LabError::Config(format!(
                    "trainer.variant.kind: unknown variant {other:?}"
                )))
            }
        };
        let cfg = TrainerConfig {
            variant,
            lr_q: self.lr_q,
            n_steps: self.n_steps,
            ensemble_refresh: self.ensemble_refresh,
            seed: self.seed,
            use_closed_form: self.use_closed_form,
            eval_every: self.eval_every,
            use_exact_backup: self.use_exact_backup,
            p_min: self.p_min,
            d_min: self.d_min,
            eval_rollouts: self.eval_rollouts,
            eval_max_steps: self.eval_max_steps,
        };
        cfg.validate()
            .map_err(|e| LabError::Config(format!("trainer: {e}")))?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// Loads a config from disk; `.toml` files are parsed as TOML, anything
    /// else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)?
        } else {
            serde_json::from_str(&text).map_err(|e| {
                LabError::Config(format!("{}: {e}", path.display()))
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level validation beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if !(0.0..=1.0).contains(&d.behavior_epsilon) {
            return Err(LabError::Config(format!(
                "dataset.behavior_epsilon: {} is outside [0, 1]",
                d.behavior_epsilon
            )));
        }
        if d.n_episodes == 0 {
            return Err(LabError::Config("dataset.n_episodes: must be positive".into()));
        }
        if d.max_steps == 0 {
            return Err(LabError::Config("dataset.max_steps: must be positive".into()));
        }
        if self.ensemble.n_models == 0 {
            return Err(LabError::Config("ensemble.n_models: must be positive".into()));
        }
        if !(self.ensemble.ridge > 0.0) {
            return Err(LabError::Config(format!(
                "ensemble.ridge: {} must be positive",
                self.ensemble.ridge
            )));
        }
        if self.eval.n_rollouts == 0 {
            return Err(LabError::Config("eval.n_rollouts: must be positive".into()));
        }
        if self.eval.max_steps == 0 {
            return Err(LabError::Config("eval.max_steps: must be positive".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(LabError::Config("output_dir: must not be empty".into()));
        }
        self.maze.build()?;
        self.trainer.to_core()?;
        Ok(())
    }
}
