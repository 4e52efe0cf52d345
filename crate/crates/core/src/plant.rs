//! Plant, estimator, and controller: steady-state LQG synthesis, the
//! augmented closed-loop dynamics of the joint state/estimation-error system,
//! and the discretized quadruple-tank benchmark instance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{expm, is_psd, solve_dare, solve_filter_dare, spectral_radius, Cholesky, Matrix};
use crate::rng::RngStream;
use crate::Mat;

/// Discrete LTI plant with Gaussian process/sensor noise and an ellipsoidal
/// actuator saturation region `{u | uᵀ U u ≤ 1}`.
#[derive(Debug, Clone, Serialize)]
pub struct PlantModel {
    /// State matrix (n x n).
    pub a: Mat,
    /// Input matrix (n x l).
    pub b: Mat,
    /// Output matrix (m x n).
    pub c: Mat,
    /// Process-noise covariance (n x n), PSD.
    pub q: Mat,
    /// Sensor-noise covariance (m x m), PD.
    pub r: Mat,
    /// Saturation shape matrix (l x l), PD.
    pub u_shape: Mat,
    /// Sample period in seconds.
    pub sample_period: f64,
}

impl PlantModel {
    pub fn new(
        a: Mat,
        b: Mat,
        c: Mat,
        q: Mat,
        r: Mat,
        u_shape: Mat,
        sample_period: f64,
    ) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(Error::Dimension("state matrix must be square".into()));
        }
        if b.rows() != n || c.cols() != n {
            return Err(Error::Dimension("input/output matrices must match the state dimension".into()));
        }
        let (m, l) = (c.rows(), b.cols());
        if q.rows() != n || !q.is_square() || r.rows() != m || !r.is_square() {
            return Err(Error::Dimension("noise covariances must be n x n and m x m".into()));
        }
        if u_shape.rows() != l || !u_shape.is_square() {
            return Err(Error::Dimension("saturation shape must be l x l".into()));
        }
        if !is_psd(&q, 1e-9)? {
            return Err(Error::InvalidInput("process-noise covariance must be PSD".into()));
        }
        Cholesky::factor(&r)
            .map_err(|_| Error::InvalidInput("sensor-noise covariance must be positive definite".into()))?;
        Cholesky::factor(&u_shape)
            .map_err(|_| Error::InvalidInput("saturation shape must be positive definite".into()))?;
        if !(sample_period > 0.0) {
            return Err(Error::InvalidInput("sample period must be positive".into()));
        }
        Ok(PlantModel {
            a,
            b,
            c,
            q,
            r,
            u_shape,
            sample_period,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }
}

/// Steady-state LQG loop: fixed Kalman gain plus LQR state feedback.
#[derive(Debug, Clone, Serialize)]
pub struct LqgDesign {
    /// Kalman gain `K = PCᵀΣ⁻¹` (n x m).
    pub kalman_gain: Mat,
    /// A-priori error covariance `P` (n x n).
    pub error_cov: Mat,
    /// Innovation covariance `Σ = CPCᵀ + R` (m x m).
    pub innovation_cov: Mat,
    /// Control gain `L` with `u = L x̂` (l x n).
    pub control_gain: Mat,
    /// Control Riccati solution `S` (n x n).
    pub cost_matrix: Mat,
    /// State weight used in the synthesis.
    pub state_weight: Mat,
    /// Input weight used in the synthesis.
    pub input_weight: Mat,
}

/// Block matrices of the augmented closed-loop dynamics on
/// `x̄ = [x; e]` (state and a-posteriori estimation error):
/// `x̄⁺ = A_aug x̄ + process_gain·w + innovation_gain·zⁿ (+ innovation_gain·Δz + attack_gain·uᵃ)`.
#[derive(Debug, Clone, Serialize)]
pub struct AugmentedSystem {
    /// `[[A+BL, -BL], [0, A]]` (2n x 2n).
    pub a_aug: Mat,
    /// `[I; I]` (2n x n): process noise entry.
    pub process_gain: Mat,
    /// `[0; -K]` (2n x m): innovation entry.
    pub innovation_gain: Mat,
    /// `[B; B]` (2n x l): attack-input entry.
    pub attack_gain: Mat,
    /// `[process_gain, innovation_gain]` (2n x (n+m)): joint noise entry.
    pub noise_gain: Mat,
    /// `BlkDiag(Q, Σ)` ((n+m) x (n+m)): joint noise covariance.
    pub noise_cov: Mat,
    /// `[L, -L]` (l x 2n): the applied input is `u = feedback_gain · x̄`.
    pub feedback_gain: Mat,
}

impl AugmentedSystem {
    pub fn dim(&self) -> usize {
        self.a_aug.rows()
    }
}

/// Synthesizes the steady-state LQG design for the given weights.
///
/// Requires the standard stabilizability/detectability assumptions; both
/// closed loops (`A+BL` and `A(I-KC)`) are verified Schur stable.
pub fn synthesize_lqg(model: &PlantModel, w: &Mat, v: &Mat) -> Result<LqgDesign> {
    let n = model.state_dim();
    if w.rows() != n || !w.is_square() || v.rows() != model.input_dim() || !v.is_square() {
        return Err(Error::Dimension("weight matrices must be n x n and l x l".into()));
    }

    let s = solve_dare(&model.a, &model.b, w, v)?;
    // L = -(BᵀSB + V)⁻¹ BᵀSA
    let sb = s.dot(&model.b);
    let gram = (&model.b.transpose().dot(&sb) + v).symmetrize();
    let gram_ch = Cholesky::factor(&gram)?;
    let control_gain = gram_ch
        .solve_mat(&model.b.transpose().dot(&s).dot(&model.a))
        .scale(-1.0);

    let p = solve_filter_dare(&model.a, &model.c, &model.q, &model.r)?;
    let innovation_cov = (&model.c.dot(&p).dot(&model.c.transpose()) + &model.r).symmetrize();
    // K = PCᵀΣ⁻¹ computed as (Σ⁻¹ C P)ᵀ
    let sig_ch = Cholesky::factor(&innovation_cov)?;
    let kalman_gain = sig_ch.solve_mat(&model.c.dot(&p)).transpose();

    let a_cl = &model.a + &model.b.dot(&control_gain);
    let rho_ctrl = spectral_radius(&a_cl)?;
    if rho_ctrl >= 1.0 {
        return Err(Error::Unstable(format!(
            "regulator loop is not Schur stable (spectral radius {})",
            rho_ctrl
        )));
    }
    let a_est = model
        .a
        .dot(&(&Mat::identity(n) - &kalman_gain.dot(&model.c)));
    let rho_est = spectral_radius(&a_est)?;
    if rho_est >= 1.0 {
        return Err(Error::Unstable(format!(
            "estimator loop is not Schur stable (spectral radius {})",
            rho_est
        )));
    }

    Ok(LqgDesign {
        kalman_gain,
        error_cov: p,
        innovation_cov,
        control_gain,
        cost_matrix: s,
        state_weight: w.clone(),
        input_weight: v.clone(),
    })
}

/// Assembles the augmented closed-loop block matrices from a model and its
/// LQG design.
pub fn build_augmented(model: &PlantModel, design: &LqgDesign) -> Result<AugmentedSystem> {
    let n = model.state_dim();
    if design.control_gain.cols() != n || design.kalman_gain.rows() != n {
        return Err(Error::Dimension("design dimensions do not match the model".into()));
    }
    let bl = model.b.dot(&design.control_gain);
    let a_plus_bl = &model.a + &bl;
    let neg_bl = -&bl;
    let zero = Mat::zeros(n, n);
    let a_aug = Mat::vstack(&[
        &Mat::hstack(&[&a_plus_bl, &neg_bl]),
        &Mat::hstack(&[&zero, &model.a]),
    ]);

    let eye = Mat::identity(n);
    let process_gain = Mat::vstack(&[&eye, &eye]);
    let m = model.output_dim();
    let innovation_gain = Mat::vstack(&[&Mat::zeros(n, m), &design.kalman_gain.scale(-1.0)]);
    let attack_gain = Mat::vstack(&[&model.b, &model.b]);
    let noise_gain = Mat::hstack(&[&process_gain, &innovation_gain]);
    let noise_cov = Mat::block_diag(&[&model.q, &design.innovation_cov]);
    let feedback_gain = Mat::hstack(&[&design.control_gain, &design.control_gain.scale(-1.0)]);

    Ok(AugmentedSystem {
        a_aug,
        process_gain,
        innovation_gain,
        attack_gain,
        noise_gain,
        noise_cov,
        feedback_gain,
    })
}

/// Residue bias `Δz_k` caused by attack histories, evaluated by the forward
/// recursion `s⁺ = A(I-KC)s + Buᵃ - AKyᵃ`, `Δz_k = yᵃ_k + C s_k`.
///
/// `ua_hist` must cover steps `0..k-1` and `ya_hist` steps `0..k`.
pub fn residue_bias(
    model: &PlantModel,
    design: &LqgDesign,
    ua_hist: &[Vec<f64>],
    ya_hist: &[Vec<f64>],
    k: usize,
) -> Result<Vec<f64>> {
    if ua_hist.len() < k || ya_hist.len() < k + 1 {
        return Err(Error::Dimension(format!(
            "histories must cover steps 0..{} (got {} inputs, {} outputs)",
            k,
            ua_hist.len(),
            ya_hist.len()
        )));
    }
    let n = model.state_dim();
    let closed = model
        .a
        .dot(&(&Mat::identity(n) - &design.kalman_gain.dot(&model.c)));
    let ak = model.a.dot(&design.kalman_gain);
    let mut s = vec![0.0; n];
    for j in 0..k {
        let mut next = closed.matvec(&s);
        let bu = model.b.matvec(&ua_hist[j]);
        let aky = ak.matvec(&ya_hist[j]);
        for i in 0..n {
            next[i] += bu[i] - aky[i];
        }
        s = next;
    }
    let mut dz = model.c.matvec(&s);
    for (d, y) in dz.iter_mut().zip(&ya_hist[k]) {
        *d += y;
    }
    Ok(dz)
}

/// Physical constants of the four-tank benchmark at its minimum-phase
/// operating point. These are configuration data: the published laboratory
/// values with the outlet cross-section set to 1.5 cm² for every tank.
/// Units are cm, cm², V, and seconds.
#[derive(Debug, Clone, Serialize)]
pub struct TankParams {
    /// Tank cross-sections A_i (cm²).
    pub tank_area: [f64; 4],
    /// Outlet hole cross-sections a_i (cm²).
    pub outlet_area: [f64; 4],
    /// Pump flow gains k_i (cm³/(V·s)).
    pub pump_gain: [f64; 2],
    /// Valve flow splits γ_i (dimensionless, in (0,1)).
    pub valve_split: [f64; 2],
    /// Level-sensor gain k_c (V/cm).
    pub sensor_gain: f64,
    /// Gravitational acceleration (cm/s²).
    pub gravity: f64,
    /// Operating-point levels h_i⁰ (cm).
    pub level_setpoint: [f64; 4],
    /// Operating-point pump voltages v_i⁰ (V).
    pub pump_setpoint: [f64; 2],
}

impl Default for TankParams {
    fn default() -> Self {
        TankParams {
            tank_area: [28.0, 32.0, 28.0, 32.0],
            outlet_area: [1.5, 1.5, 1.5, 1.5],
            pump_gain: [3.33, 3.35],
            valve_split: [0.70, 0.60],
            sensor_gain: 0.50,
            gravity: 981.0,
            level_setpoint: [12.4, 12.7, 1.8, 1.4],
            pump_setpoint: [3.00, 3.00],
        }
    }
}

impl TankParams {
    /// Linearized time constants `T_i = (A_i/a_i)·sqrt(2 h_i⁰ / g)`.
    pub fn time_constants(&self) -> [f64; 4] {
        let mut t = [0.0; 4];
        for i in 0..4 {
            t[i] = self.tank_area[i] / self.outlet_area[i]
                * (2.0 * self.level_setpoint[i] / self.gravity).sqrt();
        }
        t
    }

    /// Continuous-time linearized matrices `(A_c, B_c, C)` around the
    /// operating point; states are level deviations, inputs pump-voltage
    /// deviations, outputs sensor-voltage deviations of tanks 1-2.
    pub fn continuous_matrices(&self) -> (Mat, Mat, Mat) {
        let t = self.time_constants();
        let [a1, a2, a3, a4] = self.tank_area;
        let [g1, g2] = self.valve_split;
        let [k1, k2] = self.pump_gain;
        let ac = Mat::from_rows(&[
            vec![-1.0 / t[0], 0.0, a3 / (a1 * t[2]), 0.0],
            vec![0.0, -1.0 / t[1], 0.0, a4 / (a2 * t[3])],
            vec![0.0, 0.0, -1.0 / t[2], 0.0],
            vec![0.0, 0.0, 0.0, -1.0 / t[3]],
        ])
        .expect("tank A matrix");
        let bc = Mat::from_rows(&[
            vec![g1 * k1 / a1, 0.0],
            vec![0.0, g2 * k2 / a2],
            vec![0.0, (1.0 - g2) * k2 / a3],
            vec![(1.0 - g1) * k1 / a4, 0.0],
        ])
        .expect("tank B matrix");
        let c = Mat::from_rows(&[
            vec![self.sensor_gain, 0.0, 0.0, 0.0],
            vec![0.0, self.sensor_gain, 0.0, 0.0],
        ])
        .expect("tank C matrix");
        (ac, bc, c)
    }

    /// Saturation shape `U = BlkDiag(1/v₁⁰, 1/v₂⁰)²`.
    pub fn saturation_shape(&self) -> Mat {
        Mat::diag(&[
            1.0 / (self.pump_setpoint[0] * self.pump_setpoint[0]),
            1.0 / (self.pump_setpoint[1] * self.pump_setpoint[1]),
        ])
    }
}

/// Zero-order-hold discretization of `(A_c, B_c)` at period `h`, via the
/// exponential of the augmented block matrix `[[A_c, B_c], [0, 0]]·h`.
pub fn zoh_discretize(ac: &Mat, bc: &Mat, h: f64) -> Result<(Mat, Mat)> {
    let n = ac.rows();
    let l = bc.cols();
    if !ac.is_square() || bc.rows() != n {
        return Err(Error::Dimension("discretization operand shape mismatch".into()));
    }
    let mut aug = Mat::zeros(n + l, n + l);
    aug.set_block(0, 0, &ac.scale(h));
    aug.set_block(0, n, &bc.scale(h));
    let e = expm(&aug)?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, l)))
}

/// Builds the discretized quadruple-tank model along with the LQG weights
/// `W = I`, `V = 100·I`.
///
/// Process and sensor covariances follow the seeded recipe: a matrix of
/// i.i.d. Uniform[0,1) entries times its transpose, divided by 100.
pub fn quadruple_tank(seed: u64) -> Result<(PlantModel, Mat, Mat)> {
    quadruple_tank_with(&TankParams::default(), seed)
}

/// Same as [`quadruple_tank`] with explicit physical constants.
pub fn quadruple_tank_with(params: &TankParams, seed: u64) -> Result<(PlantModel, Mat, Mat)> {
    let (ac, bc, c) = params.continuous_matrices();
    let sample_period = 2.0;
    let (a, b) = zoh_discretize(&ac, &bc, sample_period)?;

    let mut stream = RngStream::new(seed);
    let gq = Matrix::from_fn(4, 4, |_, _| stream.uniform());
    let q = gq.dot(&gq.transpose()).scale(0.01);
    let gr = Matrix::from_fn(2, 2, |_, _| stream.uniform());
    let r = gr.dot(&gr.transpose()).scale(0.01);

    let model = PlantModel::new(a, b, c, q, r, params.saturation_shape(), sample_period)?;
    let w = Mat::identity(4);
    let v = Mat::identity(2).scale(100.0);
    Ok((model, w, v))
}
