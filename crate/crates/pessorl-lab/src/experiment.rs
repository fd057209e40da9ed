//! End-to-end experiment pipeline: environment, behavior dataset, dynamics
//! ensemble, training, bound evaluation, rollout evaluation, and artifact
//! persistence. Every stage is a pure function of the config.

use std::fs;

use pessorl_core::dataset::{collect_dataset, dataset_stats, BehaviorStats, OfflineDataset};
use pessorl_core::ensemble::{
    dphi_distribution, fit_ensemble, state_uncertainty, zeta_distribution, DynamicsEnsemble,
};
use pessorl_core::eval::{evaluate_policy, EvalResult};
use pessorl_core::mdp::{greedy_policy, optimal_q, PolicyTable, VTable};
use pessorl_core::theory::{
    calibrate_c, corollary1_alpha_bound, delta_gap, feasibility_report, theorem1_ratio_bound,
    theorem2_threshold, BoundReport,
};
use pessorl_core::trainer::{train, TrainResult, TrainerConfig};

use crate::config::{BuiltEnv, ExperimentConfig};
use crate::io::{self, Summary, UncertaintyRow};
use crate::{io_err, LabError, Result};

/// Number of random value tables probed when backing out the concentration
/// constant for the bound report.
const CALIBRATION_PROBES: usize = 32;

/// Everything upstream of training: the environment, the data-collecting
/// policy, the offline dataset, and the fitted dynamics ensemble.
pub struct Pipeline {
    pub env: BuiltEnv,
    pub behavior: PolicyTable,
    pub dataset: OfflineDataset,
    pub ensemble: DynamicsEnsemble,
}

impl Pipeline {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let env = config.maze.build()?;
        let behavior = behavior_policy(&env, config.dataset.behavior_epsilon)?;
        let dataset = collect_dataset(
            &env.mdp,
            &behavior,
            &env.start_states,
            config.dataset.n_episodes,
            config.dataset.max_steps,
            config.dataset.seed,
            &env.mdp_id,
        )?;
        let ensemble = fit_ensemble(
            &dataset,
            &env.embedding,
            env.mdp.n_actions(),
            config.ensemble.n_models,
            config.ensemble.ridge,
            config.ensemble.seed,
        )?;
        Ok(Pipeline {
            env,
            behavior,
            dataset,
            ensemble,
        })
    }
}

/// The data-collecting policy: ε-greedy around the optimal policy, so the
/// dataset covers a near-optimal corridor plus exploration noise.
pub fn behavior_policy(env: &BuiltEnv, epsilon: f64) -> Result<PolicyTable> {
    let q_star = optimal_q(&env.mdp, 1e-10)?;
    Ok(greedy_policy(&q_star).epsilon_greedy(epsilon))
}

/// A finished training run together with the pipeline that produced it.
pub struct TrainedRun {
    pub pipeline: Pipeline,
    pub trainer_config: TrainerConfig,
    pub result: TrainResult,
}

pub fn train_pipeline(config: &ExperimentConfig) -> Result<TrainedRun> {
    let pipeline = Pipeline::new(config)?;
    let trainer_config = config.trainer.to_core()?;
    let result = train(
        &trainer_config,
        &pipeline.dataset,
        &pipeline.env.mdp,
        Some(&pipeline.ensemble),
    )?;
    Ok(TrainedRun {
        pipeline,
        trainer_config,
        result,
    })
}

/// Evaluates every bound at the converged iterate: the admissible ε/α ratio,
/// the sampling-error α floor, the one-step ordering threshold, and the full
/// feasibility report for the α actually used.
pub fn bound_report(run: &TrainedRun) -> Result<BoundReport> {
    let mdp = &run.pipeline.env.mdp;
    let stats = dataset_stats(
        &run.pipeline.dataset,
        mdp.n_states(),
        mdp.n_actions(),
        run.trainer_config.p_min,
    )?;
    let policy = &run.result.policy_final;
    let v = run.result.q_final.expectation_under(policy);
    let (_zeta, d_phi) = penalty_distributions(&run.pipeline.ensemble, policy, &v)?;
    let d_beta = stats.d_beta_hat().to_vec();
    // division-safe copy for the ratio bound: unvisited states would
    // otherwise zero it out through an infinite denominator
    let d_beta_floored: Vec<f64> = d_beta
        .iter()
        .map(|&d| d.max(run.trainer_config.d_min))
        .collect();
    let c = calibrate_c(&stats, mdp, CALIBRATION_PROBES, run.trainer_config.seed)?;
    let alpha = run.trainer_config.variant.alpha;
    let pi_beta = stats.pi_beta_hat();
    Ok(BoundReport {
        ratio_bound: theorem1_ratio_bound(policy, pi_beta, &d_phi, &d_beta_floored),
        alpha_min: corollary1_alpha_bound(&stats, c, mdp.r_max(), mdp.gamma(), policy, pi_beta),
        epsilon_min_thm2: theorem2_threshold(&v, mdp, policy, pi_beta, &d_phi, &d_beta, alpha)?,
        feasibility: feasibility_report(
            &v,
            mdp,
            policy,
            pi_beta,
            &d_phi,
            &d_beta,
            &stats,
            c,
            mdp.r_max(),
            alpha,
        )?,
    })
}

fn penalty_distributions(
    ensemble: &DynamicsEnsemble,
    policy: &PolicyTable,
    v: &VTable,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let zeta = zeta_distribution(ensemble, policy);
    let d_phi = dphi_distribution(&zeta, v)?;
    Ok((zeta, d_phi))
}

/// Start states for evaluation: every non-terminal state when the config
/// asks for random starts, otherwise the environment's designated starts.
pub fn eval_starts(config: &ExperimentConfig, env: &BuiltEnv) -> Vec<usize> {
    if config.eval.random_starts {
        (0..env.mdp.n_states())
            .filter(|&s| !env.mdp.is_terminal(s))
            .collect()
    } else {
        env.start_states.clone()
    }
}

pub fn evaluate_run(config: &ExperimentConfig, run: &TrainedRun) -> EvalResult {
    let starts = eval_starts(config, &run.pipeline.env);
    evaluate_policy(
        &run.pipeline.env.mdp,
        &run.result.policy_final,
        &starts,
        config.eval.n_rollouts,
        config.eval.max_steps,
        config.eval.seed,
    )
}

pub fn make_summary(config: &ExperimentConfig, run: &TrainedRun) -> Summary {
    let eval = evaluate_run(config, run);
    let v = run.result.q_final.expectation_under(&run.result.policy_final);
    let last = run.result.trace.last();
    Summary {
        variant: config.trainer.variant.kind.clone(),
        n_states: run.pipeline.env.mdp.n_states(),
        n_actions: run.pipeline.env.mdp.n_actions(),
        n_transitions: run.pipeline.dataset.transitions.len(),
        mean_return: eval.mean_return,
        success_rate: eval.success_rate,
        delta_k: delta_gap(&v, &run.pipeline.dataset.state_multiset()),
        epsilon_final: run.result.epsilon_final,
        lb_violations: last.map_or(0, |t| t.lb_violations),
        objective: last.map_or(f64::NAN, |t| t.objective),
    }
}

pub fn uncertainty_rows(run: &TrainedRun) -> Result<Vec<UncertaintyRow>> {
    let env = &run.pipeline.env;
    let mdp = &env.mdp;
    let stats = dataset_stats(
        &run.pipeline.dataset,
        mdp.n_states(),
        mdp.n_actions(),
        run.trainer_config.p_min,
    )?;
    let policy = &run.result.policy_final;
    let zeta = zeta_distribution(&run.pipeline.ensemble, policy);
    Ok((0..mdp.n_states())
        .map(|s| UncertaintyRow {
            state: s,
            x: env.plot_coords[s].0,
            y: env.plot_coords[s].1,
            u: state_uncertainty(&run.pipeline.ensemble, s, policy),
            zeta: zeta[s],
            d_beta: stats.d_beta_hat()[s],
        })
        .collect())
}

fn ensure_output_dir(config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))
}

fn artifact(config: &ExperimentConfig, name: &str) -> std::path::PathBuf {
    config.output_dir.join(name)
}

/// `gen-data`: collect the offline dataset and write `dataset.jsonl`.
pub fn cmd_gen_data(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let pipeline = Pipeline::new(config)?;
    io::write_dataset(&artifact(config, "dataset.jsonl"), &pipeline.dataset)
}

/// `fit-ensemble`: fit the dynamics ensemble and write `ensemble.json`.
pub fn cmd_fit_ensemble(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let pipeline = Pipeline::new(config)?;
    io::write_ensemble(&artifact(config, "ensemble.json"), &pipeline.ensemble)
}

/// `train`: run training and write `trace.csv`.
pub fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let run = train_pipeline(config)?;
    io::write_trace(&artifact(config, "trace.csv"), &run.result.trace)
}

/// `bounds`: run training and write the converged bound report to
/// `bounds.json`.
pub fn cmd_bounds(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let run = train_pipeline(config)?;
    io::write_bounds(&artifact(config, "bounds.json"), &bound_report(&run)?)
}

/// `eval`: run training, roll out the final policy, write `summary.json`.
pub fn cmd_eval(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let run = train_pipeline(config)?;
    io::write_summary(&artifact(config, "summary.json"), &make_summary(config, &run))
}

/// `run`: the full pipeline; writes every artifact.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary> {
    ensure_output_dir(config)?;
    let run = train_pipeline(config)?;
    io::write_dataset(&artifact(config, "dataset.jsonl"), &run.pipeline.dataset)?;
    io::write_ensemble(&artifact(config, "ensemble.json"), &run.pipeline.ensemble)?;
    io::write_trace(&artifact(config, "trace.csv"), &run.result.trace)?;
    io::write_bounds(&artifact(config, "bounds.json"), &bound_report(&run)?)?;
    io::write_uncertainty_map(
        &artifact(config, "uncertainty_map.csv"),
        &uncertainty_rows(&run)?,
    )?;
    let summary = make_summary(config, &run);
    io::write_summary(&artifact(config, "summary.json"), &summary)?;
    Ok(summary)
}

/// Stats helper shared by the acceptance suite.
pub fn run_stats(run: &TrainedRun) -> Result<BehaviorStats> {
    let mdp = &run.pipeline.env.mdp;
    dataset_stats(
        &run.pipeline.dataset,
        mdp.n_states(),
        mdp.n_actions(),
        run.trainer_config.p_min,
    )
    .map_err(LabError::from)
}
