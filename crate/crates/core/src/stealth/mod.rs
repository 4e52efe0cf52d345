//! Windowed chi-squared residue detection and the stealthy-adversary budget.
//!
//! Under normal operation the windowed statistic `g = Σ zᵀΣ⁻¹z` over `T`
//! residues follows a central chi-squared law with `m·T` degrees of freedom;
//! a residue bias shifts it to a noncentral law whose noncentrality is the
//! windowed bias energy. Inverting the noncentral tail (generalized Marcum
//! Q-function) at a detection ceiling `p_d` yields the bias budget `λ̄` that
//! bounds everything an attacker can do while staying below that ceiling.

mod special;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Scalar};
use crate::Mat;

pub use special::{chi2_cdf, chi2_survival, gamma_p, gamma_q, ln_gamma};

/// Windowed chi-squared detector: alarm when `g > threshold`.
#[derive(Debug, Clone, Serialize)]
pub struct DetectorConfig {
    /// Window length `T` in steps.
    pub window: usize,
    /// Residue dimension `m`.
    pub residue_dim: usize,
    /// Degrees of freedom `m·T` of the windowed statistic.
    pub dof: usize,
    /// Alarm threshold `η`.
    pub threshold: f64,
    /// Target false-alarm probability the threshold was solved for.
    pub false_alarm: f64,
}

impl DetectorConfig {
    /// Solves the threshold so the central false-alarm probability equals
    /// `false_alarm`.
    pub fn new(window: usize, residue_dim: usize, false_alarm: f64) -> Result<Self> {
        if window == 0 || residue_dim == 0 {
            return Err(Error::InvalidInput("detector window and residue dimension must be positive".into()));
        }
        if !(0.0 < false_alarm && false_alarm < 1.0) {
            return Err(Error::Domain(format!("false-alarm rate must be in (0,1), got {}", false_alarm)));
        }
        let dof = window * residue_dim;
        let threshold = chi2_quantile(dof, 1.0 - false_alarm)?;
        let achieved = chi2_survival(dof as f64, threshold)?;
        if (achieved - false_alarm).abs() > 1e-8 {
            return Err(Error::NonConvergence(format!(
                "threshold solve missed the false-alarm target by {}",
                (achieved - false_alarm).abs()
            )));
        }
        Ok(DetectorConfig {
            window,
            residue_dim,
            dof,
            threshold,
            false_alarm,
        })
    }
}

/// Residue-bias budget of a `p_d`-stealthy adversary.
#[derive(Debug, Clone, Serialize)]
pub struct StealthBudget {
    /// Detection-probability ceiling the adversary stays below.
    pub p_d: f64,
    /// Maximum windowed bias energy `λ̄` keeping detection at or below `p_d`.
    pub lambda_bar: f64,
    /// Optional finite stealthiness horizon; `None` means the ceiling holds
    /// for all time, which is what the downstream safety analysis uses.
    pub horizon: Option<usize>,
}

/// Windowed detector statistic `g = Σ zᵢᵀ Σ⁻¹ zᵢ` over exactly one window.
pub fn detector_stat(cfg: &DetectorConfig, residues: &[Vec<f64>], sigma: &Mat) -> Result<f64> {
    if residues.len() != cfg.window {
        return Err(Error::Dimension(format!(
            "expected a window of {} residues, got {}",
            cfg.window,
            residues.len()
        )));
    }
    let ch = Cholesky::factor(sigma)?;
    let mut g = 0.0;
    for z in residues {
        if z.len() != cfg.residue_dim {
            return Err(Error::Dimension(format!(
                "residue dimension {} does not match detector dimension {}",
                z.len(),
                cfg.residue_dim
            )));
        }
        let w = ch.solve_vec(z);
        g += crate::linalg::dot(z, &w);
    }
    Ok(g)
}

/// Quantile of the central chi-squared distribution, solved by bracketing
/// bisection on the regularized lower incomplete gamma.
pub fn chi2_quantile(dof: usize, prob: f64) -> Result<f64> {
    if !(0.0 < prob && prob < 1.0) {
        return Err(Error::Domain(format!("quantile probability must be in (0,1), got {}", prob)));
    }
    if dof == 0 {
        return Err(Error::Domain("quantile needs at least one degree of freedom".into()));
    }
    let d = dof as f64;
    let mut lo = 0.0;
    let mut hi = d.max(1.0);
    let mut guard = 0;
    while chi2_cdf(d, hi)? < prob {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::NonConvergence("chi2 quantile bracket never closed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = chi2_cdf(d, mid)?;
        if (p - prob).abs() < 1e-14 {
            return Ok(mid);
        }
        if p < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    let eta = 0.5 * (lo + hi);
    // the contract is on the CDF value, not the abscissa
    if (chi2_cdf(d, eta)? - prob).abs() > 1e-10 {
        return Err(Error::NonConvergence("chi2 quantile bisection stalled".into()));
    }
    Ok(eta)
}

/// Generalized Marcum Q-function `Q_{half_dof}(√λ, √η)`: the survival
/// probability at `η` of a noncentral chi-squared variable with
/// `2·half_dof` degrees of freedom and noncentrality `λ`.
///
/// Evaluated as a Poisson mixture of central chi-squared tails, summed from
/// the modal Poisson index outward until the cumulative weight exceeds
/// `1 - 1e-14`.
pub fn marcum_q<T: Scalar>(half_dof: T, lambda: T, eta: T) -> Result<T> {
    if half_dof <= T::zero() {
        return Err(Error::Domain("marcum_q needs half_dof > 0".into()));
    }
    if lambda < T::zero() || eta < T::zero() {
        return Err(Error::Domain("marcum_q needs lambda >= 0 and eta >= 0".into()));
    }
    if eta == T::zero() {
        return Ok(T::one());
    }
    if lambda == T::zero() {
        return gamma_q(half_dof, eta * T::c(0.5));
    }

    let hl = lambda * T::c(0.5); // Poisson rate
    let x = eta * T::c(0.5);
    let j0f = hl.floor();
    let j0 = j0f.to_usize().ok_or_else(|| Error::Domain("lambda too large".into()))?;

    // modal Poisson weight and central-tail value, both in a numerically
    // safe form; the incomplete-gamma descent uses the term recurrence
    // t(s) = x^s e^{-x} / Γ(s+1),  P(s+1) = P(s) - t(s).
    let ln_w0 = j0f * hl.ln() - hl - ln_gamma(j0f + T::one());
    let w0 = ln_w0.exp();
    let a0 = half_dof + j0f;
    let p0 = gamma_p(a0, x)?;
    let t_at = |s: T| -> T { (s * x.ln() - x - ln_gamma(s + T::one())).exp() };

    let one = T::one();
    let target = one - T::c(1e-14);
    let mut cdf = w0 * p0;
    let mut cum_w = w0;

    // upward sweep: j = j0+1, j0+2, ...
    let mut w_up = w0;
    let mut p_up = p0;
    let mut t_up = t_at(a0);
    let mut j = j0f;
    for _ in 0..1_000_000 {
        if cum_w >= target || w_up < T::c(1e-302) {
            break;
        }
        w_up = w_up * hl / (j + one);
        p_up = (p_up - t_up).max(T::zero());
        t_up = t_up * x / (half_dof + j + one);
        j = j + one;
        cdf = cdf + w_up * p_up;
        cum_w = cum_w + w_up;
        if p_up == T::zero() && cum_w >= T::c(0.5) {
            // remaining upper terms only shrink the CDF contribution
            break;
        }
    }

    // downward sweep: j = j0-1, ..., 0
    if j0 > 0 {
        let mut w_dn = w0;
        let mut p_dn = p0;
        let mut t_dn = t_at(a0 - one);
        let mut jf = j0f;
        for _ in 0..j0 {
            w_dn = w_dn * jf / hl;
            p_dn = (p_dn + t_dn).min(one);
            t_dn = t_dn * (half_dof + jf - one) / x;
            jf = jf - one;
            cdf = cdf + w_dn * p_dn;
            cum_w = cum_w + w_dn;
            if cum_w >= target || w_dn < T::c(1e-302) {
                break;
            }
        }
    }

    Ok((one - cdf).max(T::zero()).min(one))
}

/// Solves the bias budget `λ̄` with `Q_{dof/2}(√λ̄, √η) = p_d` by exponential
/// bracket growth followed by bisection; monotonicity of the Marcum Q in `λ`
/// makes the root unique.
pub fn solve_lambda_bar(cfg: &DetectorConfig, p_d: f64) -> Result<StealthBudget> {
    if p_d >= 1.0 {
        return Err(Error::Domain(format!("stealthiness level must be below 1, got {}", p_d)));
    }
    let half_dof = cfg.dof as f64 / 2.0;
    let eta = cfg.threshold;
    let at_zero = marcum_q(half_dof, 0.0, eta)?;
    if p_d < at_zero - 1e-12 {
        return Err(Error::Infeasible(format!(
            "stealthiness level {} is below the false-alarm floor {}; no nonnegative bias budget attains it",
            p_d, at_zero
        )));
    }
    if (p_d - at_zero).abs() <= 1e-12 {
        return Ok(StealthBudget {
            p_d,
            lambda_bar: 0.0,
            horizon: None,
        });
    }

    let mut lo = 0.0;
    let mut hi = cfg.dof as f64;
    let mut guard = 0;
    while marcum_q(half_dof, hi, eta)? < p_d {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NonConvergence("lambda_bar bracket never closed".into()));
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if marcum_q(half_dof, mid, eta)? < p_d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda_bar = 0.5 * (lo + hi);
    let achieved = marcum_q(half_dof, lambda_bar, eta)?;
    if (achieved - p_d).abs() > 1e-8 {
        return Err(Error::NonConvergence(format!(
            "lambda_bar bisection missed the detection target by {}",
            (achieved - p_d).abs()
        )));
    }
    Ok(StealthBudget {
        p_d,
        lambda_bar,
        horizon: None,
    })
}

/// Quadratic-form slack used by the membership tests so boundary points do
/// not flap in simulation loops.
fn membership_slack(budget: f64) -> f64 {
    1e-12 * budget.max(1.0)
}

/// True iff a single residue bias lies in the stealthy set
/// `{Δz | Δzᵀ Σ⁻¹ Δz ≤ λ̄}`.
pub fn in_stealthy_set(dz: &[f64], sigma: &Mat, budget: &StealthBudget) -> bool {
    let Ok(ch) = Cholesky::factor(sigma) else {
        return false;
    };
    let w = ch.solve_vec(dz);
    crate::linalg::dot(dz, &w) <= budget.lambda_bar + membership_slack(budget.lambda_bar)
}

/// True iff a full window of biases satisfies the windowed budget
/// `Σ Δzᵢᵀ Σ⁻¹ Δzᵢ ≤ λ̄`.
pub fn window_budget_ok(dz_window: &[Vec<f64>], sigma: &Mat, budget: &StealthBudget) -> bool {
    let Ok(ch) = Cholesky::factor(sigma) else {
        return false;
    };
    let mut sum = 0.0;
    for dz in dz_window {
        let w = ch.solve_vec(dz);
        sum += crate::linalg::dot(dz, &w);
    }
    sum <= budget.lambda_bar + membership_slack(budget.lambda_bar)
}

/// Windowed budget of the alternate (Markov-bound) stealthy set,
/// `η·p_d - m·T`. A nonpositive value signals that the guaranteed-stealthy
/// set is empty.
pub fn alternate_budget(cfg: &DetectorConfig, p_d: f64) -> f64 {
    cfg.threshold * p_d - cfg.dof as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::psd_factor;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;

    fn test_sigma() -> Mat {
        Mat::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap()
    }

    #[test]
    fn detector_stat_zero_window_is_zero() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let window = vec![vec![0.0, 0.0]; 10];
        assert_eq!(detector_stat(&cfg, &window, &test_sigma()).unwrap(), 0.0);
    }

    #[test]
    fn detector_stat_whitening_identity() {
        // z = Σ^{1/2} e1 gives zᵀΣ⁻¹z = 1 for a single-step window
        let cfg = DetectorConfig::new(1, 2, 0.01).unwrap();
        let sigma = test_sigma();
        let f = psd_factor(&sigma).unwrap();
        let z: Vec<f64> = (0..2).map(|i| f[(i, 0)]).collect();
        let g = detector_stat(&cfg, &[z], &sigma).unwrap();
        assert_relative_eq!(g, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn detector_stat_rejects_wrong_window() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let window = vec![vec![0.0, 0.0]; 9];
        assert!(detector_stat(&cfg, &window, &test_sigma()).is_err());
    }

    #[test]
    fn detector_stat_mean_matches_dof() {
        // mean of the central windowed statistic is m·T
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let sigma = test_sigma();
        let f = psd_factor(&sigma).unwrap();
        let mut rng = RngStream::new(11);
        let windows = 100_000;
        let mut mean = 0.0;
        for _ in 0..windows {
            let window: Vec<Vec<f64>> = (0..cfg.window)
                .map(|_| f.matvec(&rng.normal_vec(2)))
                .collect();
            mean += detector_stat(&cfg, &window, &sigma).unwrap();
        }
        mean /= windows as f64;
        let dof = cfg.dof as f64;
        let three_sigma = 3.0 * (2.0 * dof / windows as f64).sqrt();
        assert!((mean - dof).abs() < three_sigma, "mean {} dof {} tol {}", mean, dof, three_sigma);
    }

    #[test]
    fn quantile_closed_forms_at_two_dof() {
        // chi²(2) quantile: η = -2 ln(1 - p)
        assert_relative_eq!(
            chi2_quantile(2, 0.95).unwrap(),
            -2.0 * 0.05f64.ln(),
            max_relative = 1e-10
        );
        assert_relative_eq!(
            chi2_quantile(2, 0.99).unwrap(),
            -2.0 * 0.01f64.ln(),
            max_relative = 1e-10
        );
        assert!(chi2_quantile(2, 0.99).unwrap() > chi2_quantile(2, 0.95).unwrap());
        assert!(chi2_quantile(2, 0.0).is_err());
        assert!(chi2_quantile(2, 1.0).is_err());
    }

    #[test]
    fn marcum_reduces_to_central_survival_at_zero_noncentrality() {
        for &dof in &[2usize, 10, 20] {
            let eta = chi2_quantile(dof, 0.99).unwrap();
            let q = marcum_q(dof as f64 / 2.0, 0.0, eta).unwrap();
            assert_relative_eq!(q, 0.01, max_relative = 1e-9);
        }
        // exp(-η/2) closed form at one degree-of-freedom pair
        let eta = chi2_quantile(2, 0.95).unwrap();
        let q = marcum_q(1.0, 0.0, eta).unwrap();
        assert!((q - (-eta / 2.0).exp()).abs() < 1e-10);
        assert!((q - 0.05).abs() < 1e-10);
    }

    #[test]
    fn marcum_rejects_bad_domain() {
        assert!(marcum_q(1.0, -1.0, 1.0).is_err());
        assert!(marcum_q(1.0, 1.0, -1.0).is_err());
        assert!(marcum_q(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn marcum_monotone_on_grids() {
        // nondecreasing in λ, nonincreasing in η
        let half_dof = 10.0;
        let eta = 37.0;
        let mut prev = -1.0;
        for i in 0..40 {
            let lam = i as f64 * 2.5;
            let q = marcum_q(half_dof, lam, eta).unwrap();
            assert!(q >= prev - 1e-13, "not monotone in lambda at {}", lam);
            prev = q;
        }
        let mut prev = 2.0;
        for i in 0..40 {
            let eta = 1.0 + i as f64 * 2.0;
            let q = marcum_q(half_dof, 30.0, eta).unwrap();
            assert!(q <= prev + 1e-13, "not monotone in eta at {}", eta);
            prev = q;
        }
    }

    #[test]
    fn marcum_matches_noncentral_sampling() {
        // Monte-Carlo oracle: noncentral chi-squared sampled as Σ (g_i + μ_i)²
        let dof = 20usize;
        let lambda = 30.0;
        let eta = chi2_quantile(dof, 0.99).unwrap();
        let expect = marcum_q(dof as f64 / 2.0, lambda, eta).unwrap();
        let mut rng = RngStream::new(99);
        let n = 1_000_000usize;
        let mut exceed = 0usize;
        let mu = lambda.sqrt();
        for _ in 0..n {
            let mut s = (rng.normal() + mu).powi(2);
            for _ in 1..dof {
                s += rng.normal().powi(2);
            }
            if s > eta {
                exceed += 1;
            }
        }
        let frac = exceed as f64 / n as f64;
        let mc_sigma = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!(
            (frac - expect).abs() < 3.0 * mc_sigma,
            "frac {} expect {} 3σ {}",
            frac,
            expect,
            3.0 * mc_sigma
        );
    }

    #[test]
    fn lambda_bar_zero_at_false_alarm_level() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let b = solve_lambda_bar(&cfg, 0.01).unwrap();
        assert_eq!(b.lambda_bar, 0.0);
    }

    #[test]
    fn lambda_bar_tank_configuration() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let b = solve_lambda_bar(&cfg, 0.99).unwrap();
        assert!(b.lambda_bar > 0.0);
        // budget invariant: Marcum survival at λ̄ equals p_d
        let q = marcum_q(10.0, b.lambda_bar, cfg.threshold).unwrap();
        assert!((q - 0.99).abs() < 1e-8);
        // strictly increasing in p_d
        let b_half = solve_lambda_bar(&cfg, 0.5).unwrap();
        assert!(b.lambda_bar > b_half.lambda_bar);
    }

    #[test]
    fn lambda_bar_infeasible_and_domain_errors() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        assert!(matches!(solve_lambda_bar(&cfg, 0.005), Err(Error::Infeasible(_))));
        assert!(matches!(solve_lambda_bar(&cfg, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn stealthy_set_membership_boundaries() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let budget = solve_lambda_bar(&cfg, 0.99).unwrap();
        let sigma = test_sigma();
        let f = psd_factor(&sigma).unwrap();
        assert!(in_stealthy_set(&[0.0, 0.0], &sigma, &budget));
        let scale = budget.lambda_bar.sqrt();
        let boundary: Vec<f64> = (0..2).map(|i| scale * f[(i, 0)]).collect();
        assert!(in_stealthy_set(&boundary, &sigma, &budget));
        let outside: Vec<f64> = boundary.iter().map(|v| v * 1.01).collect();
        assert!(!in_stealthy_set(&outside, &sigma, &budget));
    }

    #[test]
    fn window_budget_membership() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let budget = solve_lambda_bar(&cfg, 0.99).unwrap();
        let sigma = test_sigma();
        let f = psd_factor(&sigma).unwrap();
        let zero = vec![vec![0.0, 0.0]; 10];
        assert!(window_budget_ok(&zero, &sigma, &budget));
        let scale = budget.lambda_bar.sqrt();
        let boundary: Vec<f64> = (0..2).map(|i| scale * f[(i, 0)]).collect();
        let mut one_spike = zero.clone();
        one_spike[3] = boundary.clone();
        assert!(window_budget_ok(&one_spike, &sigma, &budget));
        let mut two_spikes = one_spike.clone();
        two_spikes[7] = boundary;
        assert!(!window_budget_ok(&two_spikes, &sigma, &budget));
    }

    #[test]
    fn alternate_budget_arithmetic_and_subset() {
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let alt = alternate_budget(&cfg, 0.99);
        assert_relative_eq!(alt, cfg.threshold * 0.99 - 20.0, max_relative = 1e-12);
        // η p_d <= mT means an empty guaranteed-stealthy set
        let tight = DetectorConfig::new(10, 2, 0.5).unwrap();
        assert!(alternate_budget(&tight, 0.2) <= 0.0);
        // the alternate set is a subset: its budget never exceeds λ̄
        for &p_d in &[0.55, 0.7, 0.9, 0.99] {
            let lb = solve_lambda_bar(&cfg, p_d).unwrap().lambda_bar;
            assert!(
                alternate_budget(&cfg, p_d) <= lb + 1e-9,
                "alternate budget exceeded λ̄ at p_d {}",
                p_d
            );
        }
    }

    #[test]
    fn boundary_bias_alarm_rate_and_markov_bound() {
        // windows of residues with total bias energy exactly λ̄: empirical
        // detection stays at or below p_d, and the Markov bound holds
        let cfg = DetectorConfig::new(10, 2, 0.01).unwrap();
        let p_d = 0.99;
        let budget = solve_lambda_bar(&cfg, p_d).unwrap();
        let sigma = test_sigma();
        let f = psd_factor(&sigma).unwrap();
        let scale = budget.lambda_bar.sqrt();
        let bias: Vec<f64> = (0..2).map(|i| scale * f[(i, 0)]).collect();
        let mut rng = RngStream::new(5);
        let windows = 100_000usize;
        let mut alarms = 0usize;
        for _ in 0..windows {
            let mut g = 0.0;
            for i in 0..cfg.window {
                let noise = f.matvec(&rng.normal_vec(2));
                let z: Vec<f64> = if i == 0 {
                    noise.iter().zip(&bias).map(|(n, b)| n + b).collect()
                } else {
                    noise
                };
                let ch = Cholesky::factor(&sigma).unwrap();
                let w = ch.solve_vec(&z);
                g += crate::linalg::dot(&z, &w);
            }
            if g > cfg.threshold {
                alarms += 1;
            }
        }
        let rate = alarms as f64 / windows as f64;
        let mc_sigma = (p_d * (1.0 - p_d) / windows as f64).sqrt();
        assert!(rate <= p_d + 3.0 * mc_sigma, "rate {}", rate);
        // Markov bound from the expected value of the noncentral statistic
        let markov = (cfg.dof as f64 + budget.lambda_bar) / cfg.threshold;
        assert!(rate <= markov + 3.0 * mc_sigma, "rate {} markov {}", rate, markov);
    }

    #[test]
    fn biased_statistic_mean_matches_expected_value() {
        // E[g] = mT + windowed bias energy, checked at the 1% level
        let cfg = DetectorConfig::new(5, 2, 0.01).unwrap();
        let sigma = test_sigma();
        let f = psd_factor(&sigma).unwrap();
        let bias_energy = 7.0f64;
        let bias: Vec<f64> = (0..2).map(|i| bias_energy.sqrt() * f[(i, 0)]).collect();
        let ch = Cholesky::factor(&sigma).unwrap();
        let mut rng = RngStream::new(17);
        let samples = 1_000_000usize / cfg.window;
        let mut mean = 0.0;
        for _ in 0..samples {
            let mut g = 0.0;
            for i in 0..cfg.window {
                let noise = f.matvec(&rng.normal_vec(2));
                let z: Vec<f64> = if i == 2 {
                    noise.iter().zip(&bias).map(|(n, b)| n + b).collect()
                } else {
                    noise
                };
                let w = ch.solve_vec(&z);
                g += crate::linalg::dot(&z, &w);
            }
            mean += g;
        }
        mean /= samples as f64;
        let expect = cfg.dof as f64 + bias_energy;
        assert!(
            (mean - expect).abs() < 0.01 * expect,
            "mean {} expect {}",
            mean,
            expect
        );
    }
}
