//! Ellipsoidal safety analysis: the attack-growth ellipsoid and the
//! stochastic invariance ellipsoid, exact support functions of their
//! Minkowski sum against half-space safety constraints, the resulting bound
//! on tolerable attack time, and periodic response-schedule evaluation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{logdet, Cholesky};
use crate::lmi::{InvarianceCertificate, RateCertificate};
use crate::Mat;

/// Level set `{x̄¹ | x̄¹ᵀ P₁ x̄¹ ≤ level}` with
/// `level = max(1, γ^{k-Tₐ} γₐ^{Tₐ})`.
#[derive(Debug, Clone, Serialize)]
pub struct EllipsoidE1 {
    pub p1: Mat,
    pub level: f64,
}

impl EllipsoidE1 {
    pub fn new(rate: &RateCertificate, k: usize, ta: usize) -> Result<Self> {
        Ok(EllipsoidE1 {
            p1: rate.p1.clone(),
            level: e1_level(rate.gamma, rate.gamma_a, k, ta)?,
        })
    }
}

/// Level set `{x̄² | x̄²ᵀ P₂ x̄² ≤ 1/(1-p)}`.
#[derive(Debug, Clone, Serialize)]
pub struct EllipsoidE2 {
    pub p2: Mat,
    pub p: f64,
}

impl EllipsoidE2 {
    pub fn new(inv: &InvarianceCertificate) -> Self {
        EllipsoidE2 {
            p2: inv.p2.clone(),
            p: inv.p,
        }
    }

    pub fn level(&self) -> f64 {
        1.0 / (1.0 - self.p)
    }
}

/// One half-space safety constraint `|cᵀ x̄| ≤ bound` on the augmented state.
#[derive(Debug, Clone, Serialize)]
pub struct HalfSpace {
    pub direction: Vec<f64>,
    pub bound: f64,
}

/// Box-style safety specification as a list of half-space pairs.
#[derive(Debug, Clone, Serialize)]
pub struct SafetySpec {
    pub constraints: Vec<HalfSpace>,
}

impl SafetySpec {
    pub fn new(constraints: Vec<HalfSpace>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::InvalidInput("safety spec needs at least one constraint".into()));
        }
        for hs in &constraints {
            if !(hs.bound > 0.0) {
                return Err(Error::InvalidInput("safety bounds must be positive".into()));
            }
            if hs.direction.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidInput("safety directions must be nonzero".into()));
            }
        }
        Ok(SafetySpec { constraints })
    }

    /// Per-coordinate box `|x_i| ≤ bound` on the physical states, embedded in
    /// the augmented space by zero-padding the estimation-error block.
    pub fn state_box(state_dim: usize, aug_dim: usize, bound: f64) -> Result<Self> {
        let constraints = (0..state_dim)
            .map(|i| {
                let mut direction = vec![0.0; aug_dim];
                direction[i] = 1.0;
                HalfSpace { direction, bound }
            })
            .collect();
        SafetySpec::new(constraints)
    }

    /// Largest violation of `|cᵀ x̄| ≤ b` over the constraints; negative when
    /// every constraint holds.
    pub fn worst_violation(&self, x_bar: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|hs| crate::linalg::dot(&hs.direction, x_bar).abs() - hs.bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Periodic protection pattern: `true` marks a step on which the attacker
/// can act.
#[derive(Debug, Clone, Serialize)]
pub struct ResponseSchedule {
    pub period: usize,
    pub vulnerable_pattern: Vec<bool>,
}

impl ResponseSchedule {
    pub fn new(vulnerable_pattern: Vec<bool>) -> Result<Self> {
        if vulnerable_pattern.is_empty() {
            return Err(Error::InvalidInput("schedule pattern must be nonempty".into()));
        }
        Ok(ResponseSchedule {
            period: vulnerable_pattern.len(),
            vulnerable_pattern,
        })
    }

    /// Schedule that never exposes the system.
    pub fn always_protected() -> Self {
        ResponseSchedule::new(vec![false]).expect("static pattern")
    }

    /// Schedule that always exposes the system.
    pub fn always_vulnerable() -> Self {
        ResponseSchedule::new(vec![true]).expect("static pattern")
    }

    pub fn is_vulnerable(&self, step: usize) -> bool {
        self.vulnerable_pattern[step % self.period]
    }

    /// Cumulative vulnerable transitions before step `k`, i.e. over steps
    /// `0..k`. The state at step `k` reflects exactly these transitions.
    pub fn tau(&self, k: usize) -> usize {
        let full = k / self.period;
        let rem = k % self.period;
        let per_period: usize = self.vulnerable_pattern.iter().map(|&b| b as usize).sum();
        let partial: usize = self.vulnerable_pattern[..rem].iter().map(|&b| b as usize).sum();
        full * per_period + partial
    }
}

/// Level `max(1, γ^{k-Tₐ} γₐ^{Tₐ})`, evaluated in log space so long horizons
/// neither underflow nor overflow.
pub fn e1_level(gamma: f64, gamma_a: f64, k: usize, ta: usize) -> Result<f64> {
    if ta > k {
        return Err(Error::InvalidInput(format!(
            "attack time {} exceeds the horizon {}",
            ta, k
        )));
    }
    if !(0.0..1.0).contains(&gamma) || gamma_a < 0.0 {
        return Err(Error::Domain(format!(
            "rates out of range: gamma {} gamma_a {}",
            gamma, gamma_a
        )));
    }
    let log_level = log_e1_level(gamma, gamma_a, k, ta);
    Ok(if log_level <= 0.0 { 1.0 } else { log_level.exp() })
}

/// `(k-Tₐ)·ln γ + Tₐ·ln γₐ`, with empty products contributing zero so that
/// `γ = 0` or `γₐ = 0` degrade gracefully to `-∞` instead of `NaN`.
fn log_e1_level(gamma: f64, gamma_a: f64, k: usize, ta: usize) -> f64 {
    let normal_part = if k == ta { 0.0 } else { (k - ta) as f64 * gamma.ln() };
    let attack_part = if ta == 0 { 0.0 } else { ta as f64 * gamma_a.ln() };
    normal_part + attack_part
}

/// Log-volume surrogate `2n·log(level) - log det(P₁)` of the attack
/// ellipsoid; the unit-ball constant is omitted throughout, so only
/// differences of these values are meaningful.
pub fn log_volume_e1(p1: &Mat, level: f64) -> Result<f64> {
    if !(level > 0.0) {
        return Err(Error::Domain("ellipsoid level must be positive".into()));
    }
    Ok(p1.rows() as f64 * level.ln() - logdet(p1)?)
}

/// Log-volume surrogate `-2n·log(1-p) - log det(P₂)` of the invariance
/// ellipsoid, under the same convention as [`log_volume_e1`].
pub fn log_volume_e2(p2: &Mat, p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Domain("probability level must be in (0,1)".into()));
    }
    Ok(-(p2.rows() as f64) * (1.0 - p).ln() - logdet(p2)?)
}

/// Support function of the Minkowski sum of the two centered ellipsoids in
/// direction `c`:
/// `h(c) = sqrt(level₁·cᵀP₁⁻¹c) + sqrt(level₂·cᵀP₂⁻¹c)`.
pub fn support_sum(p1: &Mat, level1: f64, p2: &Mat, level2: f64, c: &[f64]) -> Result<f64> {
    if c.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidInput("support direction must be nonzero".into()));
    }
    let q1 = inv_quad(p1, c)?;
    let q2 = inv_quad(p2, c)?;
    Ok((level1 * q1).sqrt() + (level2 * q2).sqrt())
}

/// `cᵀ M⁻¹ c` for SPD `M`.
fn inv_quad(m: &Mat, c: &[f64]) -> Result<f64> {
    let ch = Cholesky::factor(m)
        .map_err(|e| Error::Singular(format!("ellipsoid shape is not SPD: {}", e)))?;
    let x = ch.solve_vec(c);
    Ok(crate::linalg::dot(c, &x))
}

/// Largest total attack time `Tₐ ∈ [0, k]` for which the reach set
/// `E₁(k,Tₐ) ⊕ E₂(p)` stays inside every half-space of the safety spec.
///
/// Solved per direction in closed form from
/// `γ^{k-Tₐ}γₐ^{Tₐ} ≤ (b - s₂)² / (cᵀP₁⁻¹c)`, floored to an integer, then
/// re-verified (and nudged) by direct evaluation so the result agrees
/// exactly with a brute-force scan.
pub fn max_ta_bound(
    rate: &RateCertificate,
    inv: &InvarianceCertificate,
    spec: &SafetySpec,
    k: usize,
) -> Result<usize> {
    let level2 = 1.0 / (1.0 - inv.p);
    let mut seed = k;
    for hs in &spec.constraints {
        let q2 = inv_quad(&inv.p2, &hs.direction)?;
        let s2 = (level2 * q2).sqrt();
        if s2 >= hs.bound {
            return Err(Error::Infeasible(format!(
                "stochastic ellipsoid alone reaches {:.6} against bound {:.6}; \
                 safety is unachievable at probability {}",
                s2, hs.bound, inv.p
            )));
        }
        let q1 = inv_quad(&rate.p1, &hs.direction)?;
        let cap = (hs.bound - s2) * (hs.bound - s2) / q1;
        if cap < 1.0 {
            return Err(Error::Infeasible(format!(
                "reach set exceeds a safety bound even with zero attack time \
                 (support {:.6} + {:.6} against bound {:.6})",
                q1.sqrt(),
                s2,
                hs.bound
            )));
        }
        if rate.gamma_a <= rate.gamma {
            continue; // attack no worse than normal decay: no cap from here
        }
        let slope = rate.gamma_a.ln() - rate.gamma.ln();
        let ta_real = if rate.gamma == 0.0 {
            (k as f64) - 1.0
        } else {
            (cap.ln() - k as f64 * rate.gamma.ln()) / slope
        };
        let ta_dir = ta_real.floor().max(0.0).min(k as f64) as usize;
        seed = seed.min(ta_dir);
    }

    let fits = |ta: usize| -> Result<bool> {
        let level1 = e1_level(rate.gamma, rate.gamma_a, k, ta)?;
        for hs in &spec.constraints {
            if support_sum(&rate.p1, level1, &inv.p2, level2, &hs.direction)? > hs.bound {
                return Ok(false);
            }
        }
        Ok(true)
    };

    let mut ta = seed;
    while ta > 0 && !fits(ta)? {
        ta -= 1;
    }
    if ta == 0 && !fits(0)? {
        return Err(Error::Infeasible(
            "reach set exceeds a safety bound even with zero attack time".into(),
        ));
    }
    while ta < k && fits(ta + 1)? {
        ta += 1;
    }
    Ok(ta)
}

/// Verdict for a single step of a schedule comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduleStep {
    pub k: usize,
    /// Cumulative vulnerable transitions `τₖ` of the schedule.
    pub tau: usize,
    /// Conservative bound on tolerable attack time at this step.
    pub bound: usize,
    pub safe: bool,
}

/// Per-step comparison of a schedule against the safe-attack-time bound.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduleVerdict {
    pub steps: Vec<ScheduleStep>,
    /// True iff every step of the horizon is safe.
    pub overall_safe: bool,
}

/// Evaluates `τₖ ≤ max_ta_bound(k)` for every `k` up to the horizon.
pub fn schedule_verdict(
    schedule: &ResponseSchedule,
    rate: &RateCertificate,
    inv: &InvarianceCertificate,
    spec: &SafetySpec,
    horizon: usize,
) -> Result<ScheduleVerdict> {
    let mut steps = Vec::with_capacity(horizon + 1);
    let mut overall_safe = true;
    for k in 0..=horizon {
        let tau = schedule.tau(k);
        let bound = max_ta_bound(rate, inv, spec, k)?;
        let safe = tau <= bound;
        overall_safe &= safe;
        steps.push(ScheduleStep { k, tau, bound, safe });
    }
    Ok(ScheduleVerdict { steps, overall_safe })
}

/// Volume sweep along the attack-time axis at fixed horizon `k`:
/// rows `(Tₐ, log-volume)`.
pub fn sweep_volume_ta(rate: &RateCertificate, k: usize) -> Result<Vec<(f64, f64)>> {
    (0..=k)
        .map(|ta| {
            let level = e1_level(rate.gamma, rate.gamma_a, k, ta)?;
            Ok((ta as f64, log_volume_e1(&rate.p1, level)?))
        })
        .collect()
}

/// Volume sweep along the horizon axis at fixed attack time `ta`:
/// rows `(k, log-volume)` for `k = ta..=k_max`.
pub fn sweep_volume_k(rate: &RateCertificate, ta: usize, k_max: usize) -> Result<Vec<(f64, f64)>> {
    (ta..=k_max)
        .map(|k| {
            let level = e1_level(rate.gamma, rate.gamma_a, k, ta)?;
            Ok((k as f64, log_volume_e1(&rate.p1, level)?))
        })
        .collect()
}

/// Volume sweep against the percentage of time under attack at fixed
/// horizon `k ≥ 1`: rows `(100·Tₐ/k, log-volume)`.
pub fn sweep_volume_percentage(rate: &RateCertificate, k: usize) -> Result<Vec<(f64, f64)>> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "percentage sweep needs a positive horizon".into(),
        ));
    }
    (0..=k)
        .map(|ta| {
            let level = e1_level(rate.gamma, rate.gamma_a, k, ta)?;
            Ok((100.0 * ta as f64 / k as f64, log_volume_e1(&rate.p1, level)?))
        })
        .collect()
}

/// Volume sweep of the invariance ellipsoid along the probability axis:
/// rows `(p, log-volume)`.
pub fn sweep_volume_p(p2: &Mat, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&p| Ok((p, log_volume_e2(p2, p)?)))
        .collect()
}
