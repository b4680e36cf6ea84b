//! Synchronous round engine, metrics, and the Monte Carlo harness.
//!
//! A round has two phases. Phase one snapshots every node's broadcast
//! message; phase two steps every node against that immutable snapshot, so
//! results cannot depend on node iteration order. All enabled filter
//! families see identical measurements within a run (paired design), each
//! family exchanging its own predictions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::CodkfError;
use crate::filters::{
    aggregate_measurements, cdkf_step, centralized_kf_step, codkf_step, make_message, GammaRule,
    InfoMessage, NodeState,
};
use crate::fusion::CertificationRecord;
use crate::model::{turn_system, NoiseSource, TurnMatrixVariant};
use crate::tolerances::{DIVERGENCE_CEILING, TOL_RANK, TOL_RHO};
use crate::topology::{make_scenario, Experiment, NetworkScenario};

/// Substream indices for the per-run ChaCha streams; fixed so that runs are
/// reproducible from the run seed alone.
pub mod streams {
    pub const SCENARIO: u64 = 0;
    pub const TRAJECTORY: u64 = 1;
    pub const MEASUREMENT: u64 = 2;
    pub const INIT: u64 = 3;
}

/// Filter families the engine can run side by side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterFamily {
    Codkf,
    Cdkf,
    Ckf,
}

impl FilterFamily {
    /// Stable label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            FilterFamily::Codkf => "codkf",
            FilterFamily::Cdkf => "cdkf",
            FilterFamily::Ckf => "ckf",
        }
    }
}

/// Which families a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnabledFilters {
    pub codkf: bool,
    pub cdkf: bool,
    pub ckf: bool,
}

impl Default for EnabledFilters {
    fn default() -> Self {
        EnabledFilters {
            codkf: true,
            cdkf: true,
            ckf: true,
        }
    }
}

/// Everything a run needs beyond its seed.
#[derive(Clone, Debug)]
pub struct SimParams {
    pub nodes: usize,
    pub edge_density: f64,
    pub experiment: Experiment,
    pub steps: usize,
    /// Batch key; run r derives its seed from this via [`run_seed`].
    pub master_seed: u64,
    /// Turn rate of the target (rad/s).
    pub turn_rate: f64,
    /// Sampling period (s).
    pub dt: f64,
    /// Process noise intensity.
    pub q_scale: f64,
    pub variant: TurnMatrixVariant,
    /// Initial covariance is this multiple of the identity.
    pub p0_scale: f64,
    /// Draw initial estimates as truth plus seeded noise of covariance P0.
    /// When false, every node starts exactly at the true state (and the
    /// initialization stream is never consumed).
    pub perturb_init: bool,
    pub tol_rank: f64,
    pub tol_rho: f64,
    /// Network MSE above this (or non-finite) counts as divergence.
    pub divergence_ceiling: f64,
    pub gamma: GammaRule,
    pub enabled: EnabledFilters,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            nodes: 20,
            edge_density: 0.15,
            experiment: Experiment::MixedQuality,
            steps: 600,
            master_seed: 0,
            turn_rate: 0.5,
            dt: 0.1,
            q_scale: 2e-6,
            variant: TurnMatrixVariant::Standard,
            p0_scale: 10.0,
            perturb_init: true,
            tol_rank: TOL_RANK,
            tol_rho: TOL_RHO,
            divergence_ceiling: DIVERGENCE_CEILING,
            gamma: GammaRule::InverseNorm,
            enabled: EnabledFilters::default(),
        }
    }
}

/// Per-family slice of one step's metrics. The centralized filter is a
/// single estimator, so its vectors have one entry and its `mse` is that
/// squared error scaled by the node count (Definition-1 sum over nodes).
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyStep {
    /// ‖x̂_i − x‖² per node.
    pub sq_error: Vec<f64>,
    /// Tr(M_i) per node.
    pub trace_m: Vec<f64>,
    /// Network MSE: Σ_i ‖x̂_i − x‖².
    pub mse: f64,
    /// Certification outcomes, present for the certified filter only.
    pub certs: Option<Vec<CertificationRecord>>,
    /// True from the step this family tripped the divergence test onward;
    /// a frozen family stops stepping and keeps its last state.
    pub diverged: bool,
}

/// Metrics for one synchronous round.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub k: usize,
    pub codkf: Option<FamilyStep>,
    pub cdkf: Option<FamilyStep>,
    pub ckf: Option<FamilyStep>,
}

/// True when a network MSE window contains divergence: any non-finite entry
/// or one above the ceiling.
pub fn detect_divergence(window: &[f64], ceiling: f64) -> bool {
    window.iter().any(|&m| !m.is_finite() || m > ceiling)
}

/// One run's bound state: truth, scenario, and per-family estimators.
pub struct RoundEngine {
    sys: crate::model::LinearSystem,
    scenario: NetworkScenario,
    truth: DVector<f64>,
    k: usize,
    codkf: Option<Vec<NodeState>>,
    cdkf: Option<Vec<NodeState>>,
    ckf: Option<NodeState>,
    codkf_frozen: bool,
    cdkf_frozen: bool,
    ckf_frozen: bool,
    process_noise: NoiseSource,
    measurement_noise: NoiseSource,
    params: SimParams,
}

impl RoundEngine {
    /// Builds the scenario, the truth state, and identically-seeded initial
    /// estimates for every enabled family.
    pub fn new(params: &SimParams, run_seed: u64) -> Result<Self, CodkfError> {
        let mut scenario_rng = ChaCha8Rng::seed_from_u64(run_seed);
        scenario_rng.set_stream(streams::SCENARIO);
        let scenario = make_scenario(
            params.nodes,
            params.edge_density,
            params.experiment,
            &mut scenario_rng,
        )?;
        let sys = turn_system(params.turn_rate, params.dt, params.q_scale, params.variant)?;
        let n = sys.dim();
        let truth = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);

        let p0 = DMatrix::identity(n, n) * params.p0_scale;
        let p0_sqrt = DMatrix::identity(n, n) * params.p0_scale.sqrt();
        let mut init_noise = NoiseSource::seeded(run_seed, streams::INIT);
        let perturb = params.perturb_init;
        let mut draw_state = || -> Result<NodeState, CodkfError> {
            let x0 = if perturb {
                &truth + init_noise.draw(&p0_sqrt)
            } else {
                truth.clone()
            };
            NodeState::from_prior(x0, &p0)
        };
        // Distributed families share per-node initial estimates; the
        // centralized filter draws one more.
        let shared: Vec<NodeState> = (0..params.nodes)
            .map(|_| draw_state())
            .collect::<Result<_, _>>()?;
        let codkf = params.enabled.codkf.then(|| shared.clone());
        let cdkf = params.enabled.cdkf.then_some(shared);
        let ckf = if params.enabled.ckf {
            Some(draw_state()?)
        } else {
            None
        };

        Ok(RoundEngine {
            sys,
            scenario,
            truth,
            k: 0,
            codkf,
            cdkf,
            ckf,
            codkf_frozen: false,
            cdkf_frozen: false,
            ckf_frozen: false,
            process_noise: NoiseSource::seeded(run_seed, streams::TRAJECTORY),
            measurement_noise: NoiseSource::seeded(run_seed, streams::MEASUREMENT),
            params: params.clone(),
        })
    }

    /// The network scenario bound to this run.
    pub fn scenario(&self) -> &NetworkScenario {
        &self.scenario
    }

    fn family_metrics(
        &self,
        states: &[NodeState],
        certs: bool,
        frozen: bool,
    ) -> FamilyStep {
        let sq_error: Vec<f64> = states
            .iter()
            .map(|st| (&st.x_hat - &self.truth).norm_squared())
            .collect();
        let trace_m: Vec<f64> = states.iter().map(|st| st.m_cov.trace()).collect();
        let mse = sq_error.iter().sum();
        let certs = certs.then(|| {
            states
                .iter()
                .map(|st| st.last_cert.unwrap_or_else(CertificationRecord::fallback))
                .collect()
        });
        FamilyStep {
            sq_error,
            trace_m,
            mse,
            certs,
            diverged: frozen,
        }
    }

    fn ckf_metrics(&self, state: &NodeState, frozen: bool) -> FamilyStep {
        let err = (&state.x_hat - &self.truth).norm_squared();
        FamilyStep {
            sq_error: vec![err],
            trace_m: vec![state.m_cov.trace()],
            mse: err * self.params.nodes as f64,
            certs: None,
            diverged: frozen,
        }
    }

    /// Advances one synchronous round and returns its metrics, or None when
    /// every enabled family is frozen and the run has nothing left to do.
    pub fn step(&mut self) -> Result<Option<StepMetrics>, CodkfError> {
        let any_live = (self.codkf.is_some() && !self.codkf_frozen)
            || (self.cdkf.is_some() && !self.cdkf_frozen)
            || (self.ckf.is_some() && !self.ckf_frozen);
        if !any_live {
            return Ok(None);
        }

        // Shared measurements for this round.
        let measurements: Vec<DVector<f64>> = self
            .scenario
            .sensors
            .iter()
            .map(|sensor| sensor.measure(&self.truth, &mut self.measurement_noise))
            .collect();

        // Phase 1: snapshot per-family broadcasts; phase 2: step each node
        // against the snapshot.
        if let Some(states) = &self.codkf {
            if !self.codkf_frozen {
                let next = self.advance_distributed(states, &measurements, true)?;
                self.codkf = Some(next);
            }
        }
        if let Some(states) = &self.cdkf {
            if !self.cdkf_frozen {
                let next = self.advance_distributed(states, &measurements, false)?;
                self.cdkf = Some(next);
            }
        }
        if let Some(state) = &self.ckf {
            if !self.ckf_frozen {
                let next =
                    centralized_kf_step(state, &self.scenario.sensors, &measurements, &self.sys)?;
                self.ckf = Some(next);
            }
        }

        let codkf = self
            .codkf
            .as_ref()
            .map(|s| self.family_metrics(s, true, self.codkf_frozen));
        let cdkf = self
            .cdkf
            .as_ref()
            .map(|s| self.family_metrics(s, false, self.cdkf_frozen));
        let ckf = self.ckf.as_ref().map(|s| self.ckf_metrics(s, self.ckf_frozen));

        let ceiling = self.params.divergence_ceiling;
        if let Some(m) = &codkf {
            if !self.codkf_frozen && detect_divergence(&[m.mse], ceiling) {
                self.codkf_frozen = true;
            }
        }
        if let Some(m) = &cdkf {
            if !self.cdkf_frozen && detect_divergence(&[m.mse], ceiling) {
                self.cdkf_frozen = true;
            }
        }
        if let Some(m) = &ckf {
            if !self.ckf_frozen && detect_divergence(&[m.mse], ceiling) {
                self.ckf_frozen = true;
            }
        }
        // The step that trips the test is already reported as diverged.
        let mark = |fam: Option<FamilyStep>, frozen: bool| {
            fam.map(|mut f| {
                f.diverged = frozen;
                f
            })
        };
        let metrics = StepMetrics {
            k: self.k,
            codkf: mark(codkf, self.codkf_frozen),
            cdkf: mark(cdkf, self.cdkf_frozen),
            ckf: mark(ckf, self.ckf_frozen),
        };

        self.truth = self.sys.step(&self.truth, &mut self.process_noise);
        self.k += 1;
        Ok(Some(metrics))
    }

    fn advance_distributed(
        &self,
        states: &[NodeState],
        measurements: &[DVector<f64>],
        certified: bool,
    ) -> Result<Vec<NodeState>, CodkfError> {
        let snapshot: Vec<InfoMessage> = states
            .iter()
            .enumerate()
            .map(|(i, st)| {
                make_message(i, self.k, st, &self.scenario.sensors[i], &measurements[i])
            })
            .collect::<Result<_, _>>()?;
        (0..states.len())
            .map(|i| {
                let members = self.scenario.graph.closed_neighborhood(i);
                let inbox: Vec<InfoMessage> = members
                    .iter()
                    .map(|&j| snapshot[j].clone())
                    .collect();
                let (y_mat, y_vec) = aggregate_measurements(i, &inbox, members)?;
                if certified {
                    codkf_step(
                        &states[i],
                        &inbox,
                        &y_mat,
                        &y_vec,
                        &self.sys,
                        self.params.tol_rank,
                        self.params.tol_rho,
                    )
                } else {
                    cdkf_step(
                        i,
                        &states[i],
                        &inbox,
                        &y_mat,
                        &y_vec,
                        &self.sys,
                        self.params.gamma,
                    )
                }
            })
            .collect()
    }

    /// Runs up to `steps` rounds; shorter only if every family froze.
    pub fn run(&mut self, steps: usize) -> Result<Vec<StepMetrics>, CodkfError> {
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            match self.step()? {
                Some(m) => out.push(m),
                None => break,
            }
        }
        Ok(out)
    }
}

/// One Monte Carlo run's full record.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub metrics: Vec<StepMetrics>,
    pub codkf_diverged: bool,
    pub cdkf_diverged: bool,
    pub ckf_diverged: bool,
}

/// Across-run averages, per step index.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    /// Mean network MSE per step; the consensus baseline averages over its
    /// non-diverged runs only.
    pub mean_mse_codkf: Vec<f64>,
    pub mean_mse_cdkf: Vec<f64>,
    pub mean_mse_ckf: Vec<f64>,
    /// Mean certificate quality ρ over nodes and runs, per step.
    pub mean_rho: Vec<f64>,
    /// Fraction of (node, run) pairs certified, per step.
    pub cert_rate_per_step: Vec<f64>,
    /// Fraction of all (node, step, run) triples certified.
    pub cert_rate: f64,
    /// Fraction of triples whose relaxed solution had numerical rank one,
    /// i.e. the relaxation attained the fusion optimum regardless of how
    /// close the fused vertex came to it.
    pub rank_one_rate: f64,
    /// Fraction of runs in which the consensus baseline never diverged.
    pub cdkf_success_fraction: f64,
}

/// Batch output: every run plus the aggregate curves.
#[derive(Clone, Debug)]
pub struct MonteCarloOutput {
    pub runs: Vec<RunRecord>,
    pub aggregates: Aggregates,
}

/// Seed for run `r` of a batch keyed by `master_seed`.
pub fn run_seed(master_seed: u64, r: usize) -> u64 {
    master_seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the batch (in parallel) and aggregates. Run r's record is
/// independent of the batch size and of scheduling: each run is keyed only
/// by its derived seed.
pub fn monte_carlo(params: &SimParams, runs: usize) -> Result<MonteCarloOutput, CodkfError> {
    if runs == 0 {
        return Err(CodkfError::InvalidParameter {
            name: "runs",
            value: "0".to_string(),
            requirement: "at least 1",
        });
    }
    let records: Vec<RunRecord> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let seed = run_seed(params.master_seed, r);
            let mut engine = RoundEngine::new(params, seed)?;
            let metrics = engine.run(params.steps)?;
            let diverged = |f: fn(&StepMetrics) -> Option<&FamilyStep>| {
                metrics.iter().any(|m| f(m).is_some_and(|fam| fam.diverged))
            };
            Ok(RunRecord {
                run_id: r,
                seed,
                codkf_diverged: diverged(|m| m.codkf.as_ref()),
                cdkf_diverged: diverged(|m| m.cdkf.as_ref()),
                ckf_diverged: diverged(|m| m.ckf.as_ref()),
                metrics,
            })
        })
        .collect::<Result<_, CodkfError>>()?;

    let aggregates = aggregate(params.steps, &records);
    Ok(MonteCarloOutput {
        runs: records,
        aggregates,
    })
}

fn aggregate(steps: usize, records: &[RunRecord]) -> Aggregates {
    let mut mean_mse_codkf = vec![0.0; steps];
    let mut count_codkf = vec![0usize; steps];
    let mut mean_mse_cdkf = vec![0.0; steps];
    let mut count_cdkf = vec![0usize; steps];
    let mut mean_mse_ckf = vec![0.0; steps];
    let mut count_ckf = vec![0usize; steps];
    let mut rho_sum = vec![0.0; steps];
    let mut rho_count = vec![0usize; steps];
    let mut cert_hits = vec![0usize; steps];
    let mut cert_total_per_step = vec![0usize; steps];
    let mut certified_total = 0usize;
    let mut rank_one_total = 0usize;
    let mut cert_pairs = 0usize;

    for rec in records {
        for m in &rec.metrics {
            let k = m.k;
            if k >= steps {
                continue;
            }
            if let Some(f) = &m.codkf {
                mean_mse_codkf[k] += f.mse;
                count_codkf[k] += 1;
                if let Some(certs) = &f.certs {
                    for c in certs {
                        rho_sum[k] += c.rho;
                        rho_count[k] += 1;
                        cert_total_per_step[k] += 1;
                        cert_pairs += 1;
                        if c.certified {
                            cert_hits[k] += 1;
                            certified_total += 1;
                        }
                        if c.rank == 1 {
                            rank_one_total += 1;
                        }
                    }
                }
            }
            if let Some(f) = &m.cdkf {
                if !rec.cdkf_diverged {
                    mean_mse_cdkf[k] += f.mse;
                    count_cdkf[k] += 1;
                }
            }
            if let Some(f) = &m.ckf {
                mean_mse_ckf[k] += f.mse;
                count_ckf[k] += 1;
            }
        }
    }

    let finish = |sums: &mut [f64], counts: &[usize]| {
        for (s, &c) in sums.iter_mut().zip(counts) {
            if c > 0 {
                *s /= c as f64;
            }
        }
    };
    finish(&mut mean_mse_codkf, &count_codkf);
    finish(&mut mean_mse_cdkf, &count_cdkf);
    finish(&mut mean_mse_ckf, &count_ckf);
    finish(&mut rho_sum, &rho_count);
    let cert_rate_per_step: Vec<f64> = cert_hits
        .iter()
        .zip(&cert_total_per_step)
        .map(|(&h, &t)| if t > 0 { h as f64 / t as f64 } else { 0.0 })
        .collect();

    let cdkf_runs = records.iter().filter(|r| r.metrics.iter().any(|m| m.cdkf.is_some())).count();
    let cdkf_ok = records
        .iter()
        .filter(|r| r.metrics.iter().any(|m| m.cdkf.is_some()) && !r.cdkf_diverged)
        .count();
    Aggregates {
        mean_mse_codkf,
        mean_mse_cdkf,
        mean_mse_ckf,
        mean_rho: rho_sum,
        cert_rate_per_step,
        cert_rate: if cert_pairs > 0 {
            certified_total as f64 / cert_pairs as f64
        } else {
            0.0
        },
        rank_one_rate: if cert_pairs > 0 {
            rank_one_total as f64 / cert_pairs as f64
        } else {
            0.0
        },
        cdkf_success_fraction: if cdkf_runs > 0 {
            cdkf_ok as f64 / cdkf_runs as f64
        } else {
            0.0
        },
    }
}
