//! Target dynamics and sensor models.
//!
//! The tracking state is `[px, py, vx, vy]`: planar position followed by
//! planar velocity. Process and measurement noise are drawn through a
//! [`NoiseSource`], which can be switched off to make a run deterministic.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::CodkfError;
use crate::linalg::{psd_sqrt, require_spd, spd_inverse};

/// Seeded Gaussian noise, or no noise at all.
// A handful of these exist per run; the generator stays inline so draws
// avoid a pointer chase.
#[allow(clippy::large_enum_variant)]
pub enum NoiseSource {
    /// Every draw is the zero vector.
    Disabled,
    Seeded(ChaCha8Rng),
}

impl NoiseSource {
    /// Independent stream `stream` of the generator keyed by `seed`.
    pub fn seeded(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseSource::Seeded(rng)
    }

    /// Draws `sqrt_cov * z` with `z` standard normal, so the sample has
    /// covariance `sqrt_cov * sqrt_cov^T`.
    pub fn draw(&mut self, sqrt_cov: &DMatrix<f64>) -> DVector<f64> {
        let n = sqrt_cov.nrows();
        match self {
            NoiseSource::Disabled => DVector::zeros(n),
            NoiseSource::Seeded(rng) => {
                let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)));
                sqrt_cov * z
            }
        }
    }
}

/// Discrete-time linear dynamics `x(k+1) = A x(k) + w(k)`, `w ~ N(0, Q)`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self, CodkfError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(CodkfError::dims(
                "LinearSystem transition matrix",
                "square matrix",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(CodkfError::dims(
                "LinearSystem process noise",
                format!("{n}x{n}"),
                format!("{}x{}", q.nrows(), q.ncols()),
            ));
        }
        let q_sqrt = psd_sqrt(&q, "LinearSystem process noise")?;
        Ok(LinearSystem { a, q, q_sqrt })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// One step of the truth trajectory.
    pub fn step(&self, x: &DVector<f64>, noise: &mut NoiseSource) -> DVector<f64> {
        &self.a * x + noise.draw(&self.q_sqrt)
    }
}

/// Linear sensor `z = H x + v`, `v ~ N(0, R)`.
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
}

impl SensorModel {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, CodkfError> {
        if r.nrows() != h.nrows() {
            return Err(CodkfError::dims(
                "SensorModel noise covariance",
                format!("{0}x{0}", h.nrows()),
                format!("{}x{}", r.nrows(), r.ncols()),
            ));
        }
        let r = require_spd(&r, "SensorModel noise covariance")?;
        let r_inv = spd_inverse(&r, "SensorModel noise covariance")?;
        let r_sqrt = psd_sqrt(&r, "SensorModel noise covariance")?;
        Ok(SensorModel { h, r, r_inv, r_sqrt })
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn measure(&self, x: &DVector<f64>, noise: &mut NoiseSource) -> DVector<f64> {
        &self.h * x + noise.draw(&self.r_sqrt)
    }

    /// `H^T R^-1 H`, the information this sensor contributes per step.
    pub fn info_matrix(&self) -> DMatrix<f64> {
        self.h.transpose() * &self.r_inv * &self.h
    }

    /// `H^T R^-1 z`.
    pub fn info_vector(&self, z: &DVector<f64>) -> DVector<f64> {
        self.h.transpose() * &self.r_inv * z
    }
}

/// Which discretization of the constant-turn-rate kinematics to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TurnMatrixVariant {
    /// Exact discretization: position integrates the rotating velocity with
    /// the 1/omega factor, and the velocity block is a proper rotation.
    Standard,
    /// Legacy form kept for benchmark compatibility: no 1/omega factor on the
    /// position coupling and a symmetric-sign (non-rotation) velocity block.
    Legacy,
}

/// Constant-turn-rate target with isotropic process noise `q_scale * I`.
///
/// `turn_rate` is in rad/s and `dt` in seconds. A zero turn rate degrades to
/// the constant-velocity model.
pub fn turn_system(
    turn_rate: f64,
    dt: f64,
    q_scale: f64,
    variant: TurnMatrixVariant,
) -> Result<LinearSystem, CodkfError> {
    let wt = turn_rate * dt;
    let (s, c) = (wt.sin(), wt.cos());
    let a = match variant {
        TurnMatrixVariant::Standard => {
            if turn_rate.abs() < 1e-9 {
                DMatrix::from_row_slice(
                    4,
                    4,
                    &[
                        1.0, 0.0, dt, 0.0, //
                        0.0, 1.0, 0.0, dt, //
                        0.0, 0.0, 1.0, 0.0, //
                        0.0, 0.0, 0.0, 1.0,
                    ],
                )
            } else {
                let w = turn_rate;
                DMatrix::from_row_slice(
                    4,
                    4,
                    &[
                        1.0, 0.0, s / w, -(1.0 - c) / w, //
                        0.0, 1.0, (1.0 - c) / w, s / w, //
                        0.0, 0.0, c, -s, //
                        0.0, 0.0, s, c,
                    ],
                )
            }
        }
        TurnMatrixVariant::Legacy => DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, s, c - 1.0, //
                0.0, 1.0, 1.0 - c, s, //
                0.0, 0.0, c, s, //
                0.0, 0.0, s, c,
            ],
        ),
    };
    let q = DMatrix::identity(4, 4) * q_scale;
    LinearSystem::new(a, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_turn_matrix_columns() {
        let sys = turn_system(0.5, 0.1, 0.0, TurnMatrixVariant::Standard).unwrap();
        let wt = 0.05_f64;
        // Third column: velocity-x feeds position through the integrated
        // rotation and stays a rotation in the velocity block.
        assert_abs_diff_eq!(sys.a[(0, 2)], wt.sin() / 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sys.a[(1, 2)], (1.0 - wt.cos()) / 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sys.a[(2, 2)], wt.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(sys.a[(3, 2)], wt.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(sys.a[(0, 3)], -(1.0 - wt.cos()) / 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_rate_is_constant_velocity() {
        let sys = turn_system(0.0, 0.1, 0.0, TurnMatrixVariant::Standard).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.1, 0.0, //
                0.0, 1.0, 0.0, 0.1, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(sys.a, expected);
    }

    #[test]
    fn standard_variant_preserves_speed() {
        let sys = turn_system(0.5, 0.1, 0.0, TurnMatrixVariant::Standard).unwrap();
        let mut noise = NoiseSource::Disabled;
        let mut x = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
        for _ in 0..500 {
            x = sys.step(&x, &mut noise);
        }
        let speed = (x[2] * x[2] + x[3] * x[3]).sqrt();
        assert_abs_diff_eq!(speed, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn legacy_variant_spot_entries() {
        let sys = turn_system(0.5, 0.1, 0.0, TurnMatrixVariant::Legacy).unwrap();
        let wt = 0.05_f64;
        assert_abs_diff_eq!(sys.a[(0, 2)], wt.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(sys.a[(0, 3)], wt.cos() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sys.a[(1, 2)], 1.0 - wt.cos(), epsilon = 1e-15);
        // Velocity block is not a rotation: both off-diagonals share a sign.
        assert_abs_diff_eq!(sys.a[(2, 3)], wt.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(sys.a[(3, 2)], wt.sin(), epsilon = 1e-15);
    }

    #[test]
    fn process_noise_scale() {
        let sys = turn_system(0.5, 0.1, 2e-6, TurnMatrixVariant::Standard).unwrap();
        assert_eq!(sys.q, DMatrix::identity(4, 4) * 2e-6);
    }

    #[test]
    fn disabled_noise_draws_zero() {
        let mut noise = NoiseSource::Disabled;
        let sqrt_cov = DMatrix::identity(3, 3) * 5.0;
        assert_eq!(noise.draw(&sqrt_cov), DVector::zeros(3));
    }

    #[test]
    fn seeded_noise_reproducible_and_stream_separated() {
        let cov_sqrt = DMatrix::identity(2, 2);
        let mut a = NoiseSource::seeded(7, 1);
        let mut b = NoiseSource::seeded(7, 1);
        let mut c = NoiseSource::seeded(7, 2);
        let da = a.draw(&cov_sqrt);
        assert_eq!(da, b.draw(&cov_sqrt));
        assert_ne!(da, c.draw(&cov_sqrt));
    }

    #[test]
    fn draw_statistics_match_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let sqrt_cov = psd_sqrt(&cov, "test").unwrap();
        let mut noise = NoiseSource::seeded(99, 0);
        let n = 20_000;
        let mut mean = DVector::zeros(2);
        let mut second = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let d = noise.draw(&sqrt_cov);
            second += &d * d.transpose();
            mean += d;
        }
        mean /= n as f64;
        second /= n as f64;
        // Mean of N samples has std sqrt(var/N); stay within 3 sigma.
        let sigma0 = (cov[(0, 0)] / n as f64).sqrt();
        let sigma1 = (cov[(1, 1)] / n as f64).sqrt();
        assert!(mean[0].abs() < 3.0 * sigma0, "mean[0] = {}", mean[0]);
        assert!(mean[1].abs() < 3.0 * sigma1, "mean[1] = {}", mean[1]);
        let sample_cov = second - &mean * mean.transpose();
        assert!(
            (&sample_cov - &cov).norm() < 0.05 * cov.norm(),
            "sample covariance {sample_cov}"
        );
    }

    #[test]
    fn measurement_is_linear_without_noise() {
        let h = DMatrix::from_row_slice(2, 4, &[2.0, 0.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0]);
        let r = DMatrix::identity(2, 2) * 0.04;
        let sensor = SensorModel::new(h, r).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.5]);
        let z = sensor.measure(&x, &mut NoiseSource::Disabled);
        assert_eq!(z, DVector::from_vec(vec![2.0, -3.0]));
    }

    #[test]
    fn info_forms_match_definitions() {
        let h = DMatrix::from_row_slice(1, 2, &[2.0, 1.0]);
        let r = DMatrix::from_element(1, 1, 4.0);
        let sensor = SensorModel::new(h.clone(), r).unwrap();
        let u_mat = sensor.info_matrix();
        let expected = h.transpose() * h / 4.0;
        assert_abs_diff_eq!((u_mat - expected).norm(), 0.0, epsilon = 1e-14);
        let z = DVector::from_element(1, 8.0);
        let u_vec = sensor.info_vector(&z);
        assert_abs_diff_eq!(u_vec[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(u_vec[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn sensor_rejects_indefinite_noise() {
        let h = DMatrix::identity(2, 2);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(SensorModel::new(h, r).is_err());
    }
}
