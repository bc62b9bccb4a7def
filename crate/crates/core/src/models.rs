//! Agent kinematics and sensing: planar pose motion with additive Gaussian
//! noise, and range-plus-class landmark observations.
//!
//! The observation is a range measurement carrying a discrete class label;
//! landmarks sharing a class are indistinguishable to the sensor, which is
//! what makes data association ambiguous. Noise is zero-mean Gaussian in both
//! models, so conditional beliefs stay Gaussian under first-order filtering.

use nalgebra::{Matrix1x3, Matrix3, Vector2, Vector3};
use num_traits::Float;
use rand::Rng;

use crate::{real, Error, Real, Result};

/// Discrete class label attached to landmarks and measurements. Equality of
/// classes defines perceptual aliasing; the numeric value is opaque.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u32);

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Planar pose. `theta` is kept normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Real> Pose2<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.x, self.y)
    }

    pub fn as_vector(&self) -> Vector3<T> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn from_vector(v: &Vector3<T>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Relative-pose command expressed in the body frame of the current pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action<T> {
    pub dx: T,
    pub dy: T,
    pub dtheta: T,
}

impl<T: Real> Action<T> {
    pub fn new(dx: T, dy: T, dtheta: T) -> Self {
        Self { dx, dy, dtheta }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    /// Composes two body-frame commands into one equivalent command.
    pub fn compose(&self, other: &Action<T>) -> Action<T> {
        let (s, c) = Float::sin_cos(self.dtheta);
        Action {
            dx: self.dx + c * other.dx - s * other.dy,
            dy: self.dy + s * other.dx + c * other.dy,
            dtheta: self.dtheta + other.dtheta,
        }
    }
}

/// Normalizes an angle to `(-pi, pi]`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let pi = T::pi();
    let two_pi = pi + pi;
    let mut t = theta % two_pi;
    if t > pi {
        t -= two_pi;
    } else if t <= -pi {
        t += two_pi;
    }
    t
}

/// Applies a body-frame action to a pose, perturbed by the noise draw `w`
/// (pass zeros for the deterministic motion).
pub fn propagate<T: Real>(x: &Pose2<T>, u: &Action<T>, w: &Vector3<T>) -> Pose2<T> {
    let (s, c) = Float::sin_cos(x.theta);
    let dx = u.dx + w[0];
    let dy = u.dy + w[1];
    Pose2::new(
        x.x + c * dx - s * dy,
        x.y + s * dx + c * dy,
        x.theta + u.dtheta + w[2],
    )
}

/// Jacobian of the noiseless motion with respect to the state, at `x`.
pub fn motion_jacobian_state<T: Real>(x: &Pose2<T>, u: &Action<T>) -> Matrix3<T> {
    let (s, c) = Float::sin_cos(x.theta);
    let mut j = Matrix3::identity();
    j[(0, 2)] = -s * u.dx - c * u.dy;
    j[(1, 2)] = c * u.dx - s * u.dy;
    j
}

/// Jacobian of the motion with respect to the noise, at `x` (the body-frame
/// rotation embedded in the plane).
pub fn motion_jacobian_noise<T: Real>(x: &Pose2<T>) -> Matrix3<T> {
    let (s, c) = Float::sin_cos(x.theta);
    let mut j = Matrix3::identity();
    j[(0, 0)] = c;
    j[(0, 1)] = -s;
    j[(1, 0)] = s;
    j[(1, 1)] = c;
    j
}

/// Motion noise model: a symmetric positive-definite covariance over the
/// body-frame perturbation `(dx, dy, dtheta)`. An all-zero covariance is
/// accepted as the noiseless limit.
#[derive(Debug, Clone)]
pub struct MotionModel<T> {
    noise_covariance: Matrix3<T>,
    chol_lower: Option<Matrix3<T>>,
}

impl<T: Real> MotionModel<T> {
    pub fn new(noise_covariance: Matrix3<T>) -> Result<Self> {
        let sym_err = (noise_covariance - noise_covariance.transpose()).norm();
        if !Float::is_finite(sym_err) || sym_err > real::<T>(1e-9) {
            return Err(Error::Degenerate("motion covariance not symmetric"));
        }
        if noise_covariance == Matrix3::zeros() {
            return Ok(Self {
                noise_covariance,
                chol_lower: None,
            });
        }
        match nalgebra::Cholesky::new(noise_covariance) {
            Some(chol) => Ok(Self {
                noise_covariance,
                chol_lower: Some(chol.l()),
            }),
            None => Err(Error::Degenerate("motion covariance not positive-definite")),
        }
    }

    /// Diagonal covariance from standard deviations.
    pub fn from_stds(xy_std: T, theta_std: T) -> Result<Self> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(
            xy_std * xy_std,
            xy_std * xy_std,
            theta_std * theta_std,
        )))
    }

    pub fn noiseless() -> Self {
        Self {
            noise_covariance: Matrix3::zeros(),
            chol_lower: None,
        }
    }

    pub fn noise_covariance(&self) -> &Matrix3<T> {
        &self.noise_covariance
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<T> {
        match &self.chol_lower {
            Some(l) => {
                let n = Vector3::new(
                    T::standard_normal(rng),
                    T::standard_normal(rng),
                    T::standard_normal(rng),
                );
                l * n
            }
            None => Vector3::zeros(),
        }
    }
}

/// Range sensor: per-landmark noisy range readings gated by a maximum range.
#[derive(Debug, Clone, Copy)]
pub struct ObservationModel<T> {
    pub range_noise_std: T,
    pub max_sensing_range: T,
}

impl<T: Real> ObservationModel<T> {
    pub fn new(range_noise_std: T, max_sensing_range: T) -> Result<Self> {
        if range_noise_std <= T::zero() || max_sensing_range <= T::zero() {
            return Err(Error::InvalidConfig(
                "range_noise_std and max_sensing_range must be positive".into(),
            ));
        }
        Ok(Self {
            range_noise_std,
            max_sensing_range,
        })
    }

    /// Supremum of the joint likelihood of `n_measurements` range readings:
    /// the Gaussian peak density raised to the measurement count. Used as the
    /// per-step likelihood cap in the mixture-mass upper bound.
    pub fn max_likelihood_value(&self, n_measurements: usize) -> T {
        debug_assert!(n_measurements >= 1);
        Float::powi(self.peak_density(), n_measurements as i32)
    }

    /// Peak of the single-range density, `1 / (sqrt(2 pi) sigma)`.
    pub fn peak_density(&self) -> T {
        T::one() / (Float::sqrt(real::<T>(2.0) * T::pi()) * self.range_noise_std)
    }
}

/// One range reading tagged with the observed landmark class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement<T> {
    pub range: T,
    pub landmark_class: ClassId,
}

impl<T: Real> Measurement<T> {
    pub fn new(range: T, landmark_class: ClassId) -> Self {
        debug_assert!(range >= T::zero());
        Self {
            range,
            landmark_class,
        }
    }
}

/// Noiseless predicted range from a pose to a landmark position, plus the
/// noise draw `v` (pass zero for the deterministic prediction).
pub fn predict_measurement<T: Real>(x: &Pose2<T>, landmark_position: &Vector2<T>, v: T) -> T {
    (landmark_position - x.position()).norm() + v
}

/// Density of the measured range given the pose and an already-fixed
/// association to the landmark at `landmark_position`.
pub fn measurement_likelihood<T: Real>(
    z: &Measurement<T>,
    x: &Pose2<T>,
    landmark_position: &Vector2<T>,
    obs: &ObservationModel<T>,
) -> T {
    Float::exp(log_measurement_likelihood(z, x, landmark_position, obs))
}

/// Log-density counterpart of [`measurement_likelihood`]; weight updates run
/// in log space to dodge underflow.
pub fn log_measurement_likelihood<T: Real>(
    z: &Measurement<T>,
    x: &Pose2<T>,
    landmark_position: &Vector2<T>,
    obs: &ObservationModel<T>,
) -> T {
    let predicted = predict_measurement(x, landmark_position, T::zero());
    log_gaussian_density(
        z.range - predicted,
        obs.range_noise_std * obs.range_noise_std,
    )
}

/// Log of the scalar Gaussian density at innovation `nu` with variance `var`.
pub fn log_gaussian_density<T: Real>(nu: T, var: T) -> T {
    let half = real::<T>(0.5);
    let two_pi = real::<T>(2.0) * T::pi();
    -half * (Float::ln(two_pi * var) + nu * nu / var)
}

/// Jacobian row of the range function with respect to the pose, at `x`.
/// Falls back to a fixed direction when the pose coincides with the landmark.
pub fn range_jacobian<T: Real>(x: &Pose2<T>, landmark_position: &Vector2<T>) -> Matrix1x3<T> {
    let d = x.position() - landmark_position;
    let r = d.norm();
    if r < real::<T>(1e-12) {
        return Matrix1x3::new(T::one(), T::zero(), T::zero());
    }
    Matrix1x3::new(d[0] / r, d[1] / r, T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(std: f64) -> ObservationModel<f64> {
        ObservationModel::new(std, 10.0).unwrap()
    }

    /// Independent SE(2) composition via homogeneous 3x3 matrices.
    fn se2_matrix_compose(x: &Pose2<f64>, u: &Action<f64>) -> Pose2<f64> {
        fn to_mat(x: f64, y: f64, t: f64) -> nalgebra::Matrix3<f64> {
            nalgebra::Matrix3::new(t.cos(), -t.sin(), x, t.sin(), t.cos(), y, 0.0, 0.0, 1.0)
        }
        let m = to_mat(x.x, x.y, x.theta) * to_mat(u.dx, u.dy, u.dtheta);
        Pose2::new(
            m[(0, 2)],
            m[(1, 2)],
            (x.theta + u.dtheta).sin().atan2((x.theta + u.dtheta).cos()),
        )
    }

    #[test]
    fn propagate_identity_frame_translation() {
        let x = Pose2::new(0.0, 0.0, 0.0);
        let u = Action::new(1.0, 0.0, 0.0);
        let out = propagate(&x, &u, &Vector3::zeros());
        assert_eq!((out.x, out.y, out.theta), (1.0, 0.0, 0.0));
    }

    #[test]
    fn propagate_rotated_frame_maps_x_to_y() {
        let x = Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let u = Action::new(1.0, 0.0, 0.0);
        let out = propagate(&x, &u, &Vector3::zeros());
        assert!((out.x - 0.0).abs() < 1e-15);
        assert!((out.y - 1.0).abs() < 1e-15);
        assert!((out.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn propagate_matches_matrix_composition_oracle() {
        let x = Pose2::new(1.0, 2.0, 0.3);
        let u = Action::new(0.5, 0.0, 0.1);
        let out = propagate(&x, &u, &Vector3::zeros());
        let expect = se2_matrix_compose(&x, &u);
        assert!((out.x - expect.x).abs() < 1e-12);
        assert!((out.y - expect.y).abs() < 1e-12);
        assert!((out.theta - expect.theta).abs() < 1e-12);
    }

    #[test]
    fn propagate_associates_with_action_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = Pose2::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-3.0..3.0),
            );
            let u1 = Action::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let u2 = Action::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let a = propagate(
                &propagate(&x, &u1, &Vector3::zeros()),
                &u2,
                &Vector3::zeros(),
            );
            let b = propagate(&x, &u1.compose(&u2), &Vector3::zeros());
            assert!((a.x - b.x).abs() < 1e-12);
            assert!((a.y - b.y).abs() < 1e-12);
            assert!((wrap_angle(a.theta - b.theta)).abs() < 1e-12);
        }
    }

    #[test]
    fn predicted_range_three_four_five() {
        let x = Pose2::new(0.0, 0.0, 0.0);
        assert_eq!(predict_measurement(&x, &Vector2::new(3.0, 4.0), 0.0), 5.0);
    }

    #[test]
    fn predicted_range_coincident_is_zero() {
        let x = Pose2::new(1.0, 1.0, 0.7);
        assert_eq!(predict_measurement(&x, &Vector2::new(1.0, 1.0), 0.0), 0.0);
    }

    #[test]
    fn predicted_range_matches_norm_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = Pose2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), 0.2);
            let lm = Vector2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let brute = ((x.x - lm[0]).powi(2) + (x.y - lm[1]).powi(2)).sqrt();
            assert!((predict_measurement(&x, &lm, 0.0) - brute).abs() < 1e-14);
        }
    }

    #[test]
    fn likelihood_zero_innovation_is_peak() {
        let o = obs(0.3);
        let x = Pose2::new(0.0, 0.0, 0.0);
        let lm = Vector2::new(2.0, 0.0);
        let z = Measurement::new(2.0, ClassId(0));
        let got = measurement_likelihood(&z, &x, &lm, &o);
        let peak = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 0.3);
        assert!((got - peak).abs() < 1e-12);
    }

    #[test]
    fn likelihood_one_sigma_point() {
        let o = obs(0.3);
        let x = Pose2::new(0.0, 0.0, 0.0);
        let lm = Vector2::new(2.0, 0.0);
        let z = Measurement::new(2.3, ClassId(0));
        let peak = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 0.3);
        assert!((measurement_likelihood(&z, &x, &lm, &o) - peak * (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn likelihood_matches_scalar_pdf_oracle() {
        let o = obs(0.17);
        let x = Pose2::new(1.0, -2.0, 0.4);
        let lm = Vector2::new(3.5, 0.5);
        let z = Measurement::new(2.9, ClassId(0));
        let r = ((x.x - lm[0]).powi(2) + (x.y - lm[1]).powi(2)).sqrt();
        let nu: f64 = 2.9 - r;
        let pdf = (-0.5 * (nu / 0.17).powi(2)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * 0.17);
        assert!((measurement_likelihood(&z, &x, &lm, &o) - pdf).abs() < 1e-12);
    }

    #[test]
    fn likelihood_never_exceeds_single_measurement_supremum() {
        let o = obs(0.2);
        let cap = o.max_likelihood_value(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let x = Pose2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 0.0);
            let lm = Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let z = Measurement::new(rng.gen_range(0.0..6.0), ClassId(0));
            assert!(measurement_likelihood(&z, &x, &lm, &o) <= cap + 1e-15);
        }
    }

    #[test]
    fn likelihood_integrates_to_one_over_range() {
        // Quadrature over z.range; the landmark sits far enough that the
        // truncated negative-range tail is negligible.
        let o = obs(0.25);
        let x = Pose2::new(0.0, 0.0, 0.0);
        let lm = Vector2::new(4.0, 0.0);
        let n = 40_000;
        let (lo, hi) = (0.0, 8.0);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let r = lo + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * measurement_likelihood(&Measurement::new(r, ClassId(0)), &x, &lm, &o);
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-6, "integral = {total}");
    }

    #[test]
    fn max_likelihood_value_unit_peak_cases() {
        let sigma = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let o = ObservationModel::new(sigma, 10.0).unwrap();
        assert!((o.max_likelihood_value(1) - 1.0).abs() < 1e-12);
        assert!((o.max_likelihood_value(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_likelihood_value_matches_grid_search() {
        // Maximize the joint density of 3 independent range innovations over
        // a coarse grid; the supremum is at zero innovation.
        let o = obs(0.1);
        let mut best: f64 = 0.0;
        let peak = |nu: f64| {
            (-0.5 * (nu / 0.1).powi(2)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * 0.1)
        };
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.005).collect();
        for &a in &grid {
            for &b in &grid {
                // third innovation fixed at the per-axis optimum (zero) to
                // keep the grid quadratic; the joint factorizes anyway
                let v = peak(a) * peak(b) * peak(0.0);
                if v > best {
                    best = v;
                }
            }
        }
        assert!((o.max_likelihood_value(3) - best).abs() / best < 1e-9);
    }

    #[test]
    fn wrap_angle_boundaries() {
        let pi = std::f64::consts::PI;
        assert_eq!(wrap_angle(pi), pi);
        assert!((wrap_angle(-pi) - pi).abs() < 1e-15);
        assert!((wrap_angle(3.0 * pi) - pi).abs() < 1e-12);
        assert!(wrap_angle(pi + 1e-6) < 0.0);
    }

    #[test]
    fn zero_motion_covariance_samples_zero() {
        let m = MotionModel::<f64>::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.sample_noise(&mut rng), Vector3::zeros());
    }

    #[test]
    fn non_spd_covariance_rejected() {
        let mut c = Matrix3::zeros();
        c[(0, 0)] = -1.0;
        assert!(MotionModel::new(c).is_err());
        let _ = Matrix2::<f64>::zeros(); // keep nalgebra import exercised
    }
}
