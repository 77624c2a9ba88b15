//! Linearized quadrotor plant around hover.
//!
//! State (12): positions `x, y, z`, attitude `phi, theta, psi`, linear
//! velocities `u, v, w`, angular rates `p, q, r`. Inputs (4): total thrust
//! deviation and the three body torques. Disturbances (6): forces and
//! torques entering through the same channels as the inputs.
//!
//! The continuous-time linearization is nilpotent (`A_c^4 = 0`), so the
//! zero-order-hold discretization is an exact finite series rather than a
//! truncated exponential.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_STATES: usize = 12;
pub const NUM_INPUTS: usize = 4;
pub const NUM_DISTURBANCES: usize = 6;

/// Physical parameters. Defaults model an AscTec Hummingbird: a spherical
/// center body of mass `M` and radius `R` with four point motors of mass
/// `m_prime` on arms of length `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadrotorParams {
    /// Total mass (kg).
    pub m: f64,
    /// Center body mass (kg).
    #[serde(rename = "M")]
    pub body_mass: f64,
    /// Motor point mass (kg).
    pub m_prime: f64,
    /// Arm length (m).
    pub l: f64,
    /// Center body radius (m).
    #[serde(rename = "R")]
    pub body_radius: f64,
    /// Roll inertia (kg m^2).
    #[serde(rename = "Ix")]
    pub ix: f64,
    /// Pitch inertia (kg m^2).
    #[serde(rename = "Iy")]
    pub iy: f64,
    /// Yaw inertia (kg m^2).
    #[serde(rename = "Iz")]
    pub iz: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Sample time (s).
    #[serde(rename = "Ts")]
    pub ts: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            m: 0.5,
            body_mass: 0.341,
            m_prime: 0.0398,
            l: 0.17,
            body_radius: 0.0812,
            ix: 3.2e-3,
            iy: 3.2e-3,
            iz: 5.5e-3,
            g: 9.81,
            ts: 0.1,
        }
    }
}

impl QuadrotorParams {
    pub fn with_sample_time(ts: f64) -> Self {
        Self { ts, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("M", self.body_mass),
            ("m_prime", self.m_prime),
            ("l", self.l),
            ("R", self.body_radius),
            ("Ix", self.ix),
            ("Iy", self.iy),
            ("Iz", self.iz),
            ("Ts", self.ts),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("parameter {name} must be positive, got {v}")));
            }
        }
        if !self.g.is_finite() || self.g < 0.0 {
            return Err(Error::invalid("gravity must be non-negative"));
        }
        Ok(())
    }

    /// Inertias of a sphere of mass `body_mass` and radius `body_radius`
    /// with four point motors at arm length `l`: two arms contribute about
    /// the roll and pitch axes, all four about yaw.
    pub fn inertia_from_geometry(&self) -> (f64, f64, f64) {
        let sphere = 2.0 * self.body_mass * self.body_radius * self.body_radius / 5.0;
        let arm = self.l * self.l * self.m_prime;
        (sphere + 2.0 * arm, sphere + 2.0 * arm, sphere + 4.0 * arm)
    }

    /// Parameters after rigidly attaching a payload of mass `delta` at the
    /// center: the body mass grows, the inertias follow the geometry, and
    /// the total mass scales the velocity dynamics.
    pub fn with_payload(&self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::invalid(format!("payload mass must be non-negative, got {delta}")));
        }
        let mut p = self.clone();
        p.m = self.m + delta;
        p.body_mass = self.body_mass + delta;
        let (ix, iy, iz) = p.inertia_from_geometry();
        p.ix = ix;
        p.iy = iy;
        p.iz = iz;
        Ok(p)
    }
}

/// Continuous-time linearization `(A_c, B_c, W_c)` around hover.
pub fn continuous_matrices(params: &QuadrotorParams) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::zeros(NUM_STATES, NUM_STATES);
    // positions and attitude integrate the matching velocities
    for k in 0..6 {
        a[(k, k + 6)] = 1.0;
    }
    // small-angle tilt couples gravity into horizontal acceleration
    a[(6, 4)] = -params.g;
    a[(7, 3)] = params.g;

    let mut b = DMatrix::zeros(NUM_STATES, NUM_INPUTS);
    b[(8, 0)] = 1.0 / params.m;
    b[(9, 1)] = 1.0 / params.ix;
    b[(10, 2)] = 1.0 / params.iy;
    b[(11, 3)] = 1.0 / params.iz;

    let mut w = DMatrix::zeros(NUM_STATES, NUM_DISTURBANCES);
    for k in 0..3 {
        w[(6 + k, k)] = 1.0 / params.m;
    }
    w[(9, 3)] = 1.0 / params.ix;
    w[(10, 4)] = 1.0 / params.iy;
    w[(11, 5)] = 1.0 / params.iz;

    (a, b, w)
}

/// Exact zero-order-hold discretization of a nilpotent linearization:
/// `A = sum A_c^k T^k / k!` and `B = (sum A_c^k T^{k+1} / (k+1)!) B_c`,
/// both finite because `A_c^4 = 0`.
pub fn discretize(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    w_c: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = a_c.nrows();
    if !a_c.is_square() || b_c.nrows() != n || w_c.nrows() != n {
        return Err(Error::invalid("discretization shapes are inconsistent"));
    }
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::invalid(format!("sample time must be positive, got {ts}")));
    }
    let mut power = DMatrix::identity(n, n);
    let mut a = DMatrix::identity(n, n);
    let mut integral = DMatrix::<f64>::identity(n, n) * ts;
    let mut a_factor = 1.0;
    for k in 1..=n {
        power = a_c * power;
        if power.amax() == 0.0 {
            break;
        }
        a_factor *= ts / k as f64;
        a += &power * a_factor;
        integral += &power * (a_factor * ts / (k + 1) as f64);
        if k == n {
            return Err(Error::invalid("dynamics matrix is not nilpotent"));
        }
    }
    Ok((a, &integral * b_c, &integral * w_c))
}

/// Discrete-time plant `x+ = A x + B u + W w` at the parameter sample time.
#[derive(Debug, Clone)]
pub struct QuadrotorModel {
    pub params: QuadrotorParams,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl QuadrotorModel {
    pub fn new(params: QuadrotorParams) -> Result<Self> {
        params.validate()?;
        let (a_c, b_c, w_c) = continuous_matrices(&params);
        let (a, b, w) = discretize(&a_c, &b_c, &w_c, params.ts)?;
        Ok(Self { params, a, b, w })
    }

    pub fn hummingbird() -> Self {
        Self::new(QuadrotorParams::default()).expect("default parameters are valid")
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.w * w
    }

    /// Model after picking up a payload of mass `delta` mid-flight.
    pub fn with_payload(&self, delta: f64) -> Result<Self> {
        Self::new(self.params.with_payload(delta)?)
    }

    /// Input holding the linearized plant at hover: thrust offsets gravity,
    /// torques are zero. States are deviations from hover, so this is the
    /// origin of the input deviation coordinates; it is the absolute thrust
    /// needed when commanding a heavier plant with the nominal input frame.
    pub fn hover_thrust(&self) -> f64 {
        self.params.m * self.params.g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linearization_is_nilpotent_of_order_four() {
        let (a_c, _, _) = continuous_matrices(&QuadrotorParams::default());
        let a2 = &a_c * &a_c;
        let a3 = &a2 * &a_c;
        let a4 = &a3 * &a_c;
        assert!(a3.amax() > 0.0);
        assert_eq!(a4.amax(), 0.0);
    }

    fn dense_series_exponential(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..=terms {
            term = (m * term) / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn discretization_matches_the_augmented_exponential() {
        // exp of the augmented block matrix [[A_c, B_c], [0, 0]] packs the
        // discrete A in the top-left block and B in the top-right block
        let p = QuadrotorParams::default();
        let (a_c, b_c, w_c) = continuous_matrices(&p);
        let (a, b, w) = discretize(&a_c, &b_c, &w_c, p.ts).unwrap();

        let n = NUM_STATES;
        for (cols, input, disc) in [(NUM_INPUTS, &b_c, &b), (NUM_DISTURBANCES, &w_c, &w)] {
            let mut aug = DMatrix::zeros(n + cols, n + cols);
            aug.view_mut((0, 0), (n, n)).copy_from(&(&a_c * p.ts));
            aug.view_mut((0, n), (n, cols)).copy_from(&(input * p.ts));
            let e = dense_series_exponential(&aug, 40);
            let a_err = (e.view((0, 0), (n, n)) - &a).amax();
            let b_err = (e.view((0, n), (n, cols)) - disc).amax();
            assert!(a_err <= 1e-12, "A error {a_err}");
            assert!(b_err <= 1e-12, "B error {b_err}");
        }
    }

    #[test]
    fn default_inertias_match_the_geometry() {
        let p = QuadrotorParams::default();
        let (ix, iy, iz) = p.inertia_from_geometry();
        assert_abs_diff_eq!(ix / p.ix, 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(iy / p.iy, 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(iz / p.iz, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn payload_scales_mass_and_inertia() {
        let nominal = QuadrotorModel::hummingbird();
        let heavy = nominal.with_payload(0.25).unwrap();
        assert_abs_diff_eq!(heavy.params.m, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(heavy.params.body_mass, 0.591, epsilon = 1e-12);
        assert!(heavy.params.ix > nominal.params.ix);
        assert!(heavy.params.iz > nominal.params.iz);
        // thrust response scales with the inverse mass ratio
        let ratio = heavy.b[(8, 0)] / nominal.b[(8, 0)];
        assert_abs_diff_eq!(ratio, 0.5 / 0.75, epsilon = 1e-12);
        // zero payload is a no-op on the dynamics
        let same = nominal.with_payload(0.0).unwrap();
        assert_abs_diff_eq!((&same.a - &nominal.a).amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn step_integrates_velocity_into_position() {
        let model = QuadrotorModel::hummingbird();
        let mut x = DVector::zeros(NUM_STATES);
        x[6] = 1.0; // forward velocity
        let next = model.step(&x, &DVector::zeros(NUM_INPUTS), &DVector::zeros(NUM_DISTURBANCES));
        assert_abs_diff_eq!(next[0], model.params.ts, epsilon = 1e-12);
        assert_abs_diff_eq!(next[6], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gravity_tilts_into_horizontal_acceleration() {
        let model = QuadrotorModel::hummingbird();
        let mut x = DVector::zeros(NUM_STATES);
        x[3] = 0.1; // roll
        let next = model.step(&x, &DVector::zeros(NUM_INPUTS), &DVector::zeros(NUM_DISTURBANCES));
        // positive roll accelerates along +y in this axes convention
        assert!(next[7] > 0.0);
        assert_abs_diff_eq!(next[7], model.params.g * 0.1 * model.params.ts, epsilon = 1e-12);
    }

    #[test]
    fn params_serde_round_trip_uses_short_keys() {
        let p = QuadrotorParams::default();
        let json = serde_json::to_string(&p).unwrap();
        for key in ["\"m\"", "\"M\"", "\"m_prime\"", "\"l\"", "\"R\"", "\"Ix\"", "\"Iy\"", "\"Iz\"", "\"g\"", "\"Ts\""] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let back: QuadrotorParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
