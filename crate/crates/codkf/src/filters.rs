//! Per-node estimator steps: the certified distributed filter, the
//! consensus baseline, and the centralized information filter.
//!
//! All three share the information-form measurement update and the predict
//! recursion P̄(k+1) = A M Aᵀ + Q; they differ in where the prior comes
//! from. A `NodeState` therefore spans a step boundary: its update fields
//! (`x_hat`, `m_cov`) belong to the step just processed and its prediction
//! fields (`x_bar`, `s_bar`) to the next one.

use nalgebra::{DMatrix, DVector};

use crate::error::CodkfError;
use crate::fusion::{
    certify, solve_outer_lj, solve_trace_relaxation, CertificationRecord, FusionResult,
    InfoEllipsoid,
};
use crate::linalg::{spd_inverse, symmetrize};
use crate::model::{LinearSystem, SensorModel};

/// One node's estimator state across a step boundary.
#[derive(Clone, Debug)]
pub struct NodeState {
    /// Predicted state x̄.
    pub x_bar: DVector<f64>,
    /// Predicted information matrix S̄ = P̄⁻¹.
    pub s_bar: DMatrix<f64>,
    /// Updated error covariance M.
    pub m_cov: DMatrix<f64>,
    /// Updated state x̂.
    pub x_hat: DVector<f64>,
    /// Certification outcome of the last update; absent before the first
    /// update and for filters that do not certify.
    pub last_cert: Option<CertificationRecord>,
}

impl NodeState {
    /// Initial state from a prior mean and covariance. The update fields
    /// start as copies of the prior so metrics are defined from step 0.
    pub fn from_prior(x_bar: DVector<f64>, p_bar: &DMatrix<f64>) -> Result<Self, CodkfError> {
        let n = x_bar.len();
        if p_bar.nrows() != n || p_bar.ncols() != n {
            return Err(CodkfError::dims(
                "prior covariance",
                format!("{n}x{n}"),
                format!("{}x{}", p_bar.nrows(), p_bar.ncols()),
            ));
        }
        let s_bar = spd_inverse(p_bar, "prior covariance")?;
        Ok(NodeState {
            x_hat: x_bar.clone(),
            m_cov: p_bar.clone(),
            x_bar,
            s_bar,
            last_cert: None,
        })
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.x_bar.len()
    }
}

/// Broadcast payload: the sender's measurement and prediction in
/// information form, so receivers never need the sender's H or R.
#[derive(Clone, Debug)]
pub struct InfoMessage {
    pub sender: usize,
    pub step: usize,
    /// Measurement information HᵀR⁻¹H.
    pub u_mat: DMatrix<f64>,
    /// Measurement information vector HᵀR⁻¹z.
    pub u_vec: DVector<f64>,
    /// Predicted information matrix S̄.
    pub s_mat: DMatrix<f64>,
    /// Predicted information vector S̄x̄.
    pub s_vec: DVector<f64>,
}

/// Information-form broadcast for one node at one step.
pub fn make_message(
    sender: usize,
    step: usize,
    state: &NodeState,
    sensor: &SensorModel,
    z: &DVector<f64>,
) -> Result<InfoMessage, CodkfError> {
    if sensor.state_dim() != state.dim() {
        return Err(CodkfError::dims(
            "message sensor",
            format!("state dimension {}", state.dim()),
            format!("{}", sensor.state_dim()),
        ));
    }
    if z.len() != sensor.obs_dim() {
        return Err(CodkfError::dims(
            "message measurement",
            format!("{}", sensor.obs_dim()),
            format!("{}", z.len()),
        ));
    }
    Ok(InfoMessage {
        sender,
        step,
        u_mat: sensor.info_matrix(),
        u_vec: sensor.info_vector(z),
        s_mat: state.s_bar.clone(),
        s_vec: &state.s_bar * &state.x_bar,
    })
}

/// Arithmetic means Y = (1/p)ΣU_j and y = (1/p)Σu_j over the closed
/// neighborhood `members`; each member must appear in the inbox.
pub fn aggregate_measurements(
    node: usize,
    inbox: &[InfoMessage],
    members: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>), CodkfError> {
    let first = members
        .first()
        .and_then(|&m| inbox.iter().find(|msg| msg.sender == m))
        .ok_or(CodkfError::MissingMessage {
            node,
            missing: members.first().copied().unwrap_or(node),
        })?;
    let n = first.u_vec.len();
    let mut y_mat = DMatrix::zeros(n, n);
    let mut y_vec = DVector::zeros(n);
    for &m in members {
        let msg = inbox
            .iter()
            .find(|msg| msg.sender == m)
            .ok_or(CodkfError::MissingMessage { node, missing: m })?;
        if msg.u_vec.len() != n {
            return Err(CodkfError::dims(
                "aggregated message",
                format!("{n}"),
                format!("{}", msg.u_vec.len()),
            ));
        }
        y_mat += &msg.u_mat;
        y_vec += &msg.u_vec;
    }
    let p = members.len() as f64;
    Ok((y_mat / p, y_vec / p))
}

/// Information-form measurement update: M = (S + Y)⁻¹, x̂ = x + M(y − Yx).
fn info_update(
    s_prior: &DMatrix<f64>,
    x_prior: &DVector<f64>,
    y_mat: &DMatrix<f64>,
    y_vec: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>), CodkfError> {
    let m_cov = spd_inverse(&(s_prior + y_mat), "updated information")?;
    let x_hat = x_prior + &m_cov * (y_vec - y_mat * x_prior);
    Ok((m_cov, x_hat))
}

/// Time propagation: x̄(k+1) = A x̂, P̄(k+1) = A M Aᵀ + Q.
fn predict(
    sys: &LinearSystem,
    m_cov: &DMatrix<f64>,
    x_hat: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), CodkfError> {
    let p_bar = symmetrize(&(&sys.a * m_cov * sys.a.transpose() + &sys.q));
    let s_bar = spd_inverse(&p_bar, "predicted covariance")?;
    Ok((&sys.a * x_hat, s_bar))
}

/// Fusion plus certification over an inbox snapshot.
fn fuse_inbox(
    inbox: &[InfoMessage],
    tol_rank: f64,
    tol_rho: f64,
) -> Result<(FusionResult, CertificationRecord), CodkfError> {
    let ellipsoids: Vec<InfoEllipsoid> = inbox
        .iter()
        .map(|m| InfoEllipsoid::new(m.s_mat.clone(), m.s_vec.clone()))
        .collect::<Result<_, _>>()?;
    let fusion = solve_outer_lj(&ellipsoids)?;
    let cert = solve_trace_relaxation(&ellipsoids)?;
    let record = certify(&cert, &fusion, tol_rank, tol_rho);
    Ok((fusion, record))
}

/// One certified-filter round: fuse the neighborhood's predictions, update
/// with the aggregated measurement information, and predict. A fusion or
/// certificate solver failure falls back to the node's own prediction, with
/// the record marking the step as a non-certified fallback.
pub fn codkf_step(
    state: &NodeState,
    inbox: &[InfoMessage],
    y_mat: &DMatrix<f64>,
    y_vec: &DVector<f64>,
    sys: &LinearSystem,
    tol_rank: f64,
    tol_rho: f64,
) -> Result<NodeState, CodkfError> {
    let (s_fused, x_fused, record) = match fuse_inbox(inbox, tol_rank, tol_rho) {
        Ok((fusion, record)) => (fusion.s_star, fusion.x_star, record),
        Err(_) => (
            state.s_bar.clone(),
            state.x_bar.clone(),
            CertificationRecord::fallback(),
        ),
    };
    let (m_cov, x_hat) = info_update(&s_fused, &x_fused, y_mat, y_vec)?;
    let (x_bar, s_bar) = predict(sys, &m_cov, &x_hat)?;
    Ok(NodeState {
        x_bar,
        s_bar,
        m_cov,
        x_hat,
        last_cert: Some(record),
    })
}

/// Consensus gain selection for the baseline filter.
#[derive(Clone, Copy, Debug)]
pub enum GammaRule {
    /// γ = 1/(‖M‖_F + 1).
    InverseNorm,
    /// Fixed gain.
    Fixed(f64),
}

/// Consensus gain for a given updated covariance.
pub fn consensus_gain(rule: GammaRule, m_cov: &DMatrix<f64>) -> f64 {
    match rule {
        GammaRule::InverseNorm => 1.0 / (m_cov.norm() + 1.0),
        GammaRule::Fixed(g) => g,
    }
}

/// One consensus-baseline round: own-prediction update plus a consensus
/// correction toward the neighbors' predicted means.
pub fn cdkf_step(
    node: usize,
    state: &NodeState,
    inbox: &[InfoMessage],
    y_mat: &DMatrix<f64>,
    y_vec: &DVector<f64>,
    sys: &LinearSystem,
    rule: GammaRule,
) -> Result<NodeState, CodkfError> {
    let (m_cov, mut x_hat) = info_update(&state.s_bar, &state.x_bar, y_mat, y_vec)?;
    let mut drift = DVector::zeros(state.dim());
    for msg in inbox {
        if msg.sender == node {
            continue;
        }
        let neighbor_mean =
            spd_inverse(&msg.s_mat, "neighbor prediction information")? * &msg.s_vec;
        drift += neighbor_mean - &state.x_bar;
    }
    x_hat += &m_cov * drift * consensus_gain(rule, &m_cov);
    let (x_bar, s_bar) = predict(sys, &m_cov, &x_hat)?;
    Ok(NodeState {
        x_bar,
        s_bar,
        m_cov,
        x_hat,
        last_cert: None,
    })
}

/// One centralized-oracle round: information update with every sensor's
/// contribution summed (not averaged), then predict.
pub fn centralized_kf_step(
    state: &NodeState,
    sensors: &[SensorModel],
    measurements: &[DVector<f64>],
    sys: &LinearSystem,
) -> Result<NodeState, CodkfError> {
    if sensors.len() != measurements.len() {
        return Err(CodkfError::dims(
            "centralized measurement batch",
            format!("{} measurements", sensors.len()),
            format!("{}", measurements.len()),
        ));
    }
    let mut info_mat = state.s_bar.clone();
    let mut info_vec = &state.s_bar * &state.x_bar;
    for (sensor, z) in sensors.iter().zip(measurements) {
        if z.len() != sensor.obs_dim() {
            return Err(CodkfError::dims(
                "centralized measurement",
                format!("{}", sensor.obs_dim()),
                format!("{}", z.len()),
            ));
        }
        info_mat += sensor.info_matrix();
        info_vec += sensor.info_vector(z);
    }
    let m_cov = spd_inverse(&info_mat, "posterior information")?;
    let x_hat = &m_cov * info_vec;
    let (x_bar, s_bar) = predict(sys, &m_cov, &x_hat)?;
    Ok(NodeState {
        x_bar,
        s_bar,
        m_cov,
        x_hat,
        last_cert: None,
    })
}
