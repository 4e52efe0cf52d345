//! Matrix-inequality certificates for the augmented closed loop: a decay
//! rate γ under normal operation, a growth rate γₐ under budget-limited
//! attack (S-procedure block inequality), and a probabilistic-invariance
//! shape for the stochastic component. All inequalities are verified by
//! eigenvalue with an absolute margin tolerance, so a certificate that
//! passes here can be re-checked by anyone with an eigensolver.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{gen_eig_max, solve_dlyap, sym_eig, Cholesky};
use crate::plant::AugmentedSystem;
use crate::Mat;

/// Eigenvalue margin, relative to `max(1, ‖M‖_F)`, at which a matrix
/// inequality is accepted. Matches the `is_psd` convention used across the
/// crate so certificates behave sanely over the wide magnitude range of the
/// assembled blocks.
pub const MARGIN_TOL: f64 = 1e-8;

/// Lyapunov rate certificate: `γ P₁ - 𝒜ᵀP₁𝒜 ⪰ 0` under normal operation
/// and the S-procedure block inequality at `(γₐ, α₁)` under attack.
#[derive(Debug, Clone, Serialize)]
pub struct RateCertificate {
    /// SPD Lyapunov shape (2n x 2n).
    pub p1: Mat,
    /// Decay rate under normal operation, in `[0, 1)`.
    pub gamma: f64,
    /// Growth rate under stealthy attack, `≥ 0`.
    pub gamma_a: f64,
    /// S-procedure multiplier, `≥ 0`.
    pub alpha1: f64,
}

/// Probabilistic-invariance certificate for the stochastic component.
#[derive(Debug, Clone, Serialize)]
pub struct InvarianceCertificate {
    /// SPD shape matrix (2n x 2n).
    pub p2: Mat,
    /// S-procedure multiplier, `≥ 0`.
    pub alpha2: f64,
    /// Probability level in `(0, 1)`.
    pub p: f64,
}

/// Eigenvalue margins of the three certificate inequalities (positive is
/// feasible with room to spare; anything at or above `-MARGIN_TOL` passes).
#[derive(Debug, Clone, Serialize)]
pub struct CertificateMargins {
    /// `λ_min(γ P₁ - 𝒜ᵀP₁𝒜)`.
    pub decay_margin: f64,
    /// `λ_min` of the attack-growth block matrix.
    pub growth_margin: f64,
    /// `-λ_max` of the invariance block matrix (which must be ⪯ 0).
    pub invariance_margin: f64,
    /// Smallest eigenvalue of P₁.
    pub p1_min_eig: f64,
    /// Smallest eigenvalue of P₂.
    pub p2_min_eig: f64,
    /// True iff every margin is at least `-MARGIN_TOL` and both shapes are PD.
    pub accepted: bool,
}

fn min_eig(m: &Mat) -> Result<f64> {
    Ok(sym_eig(&m.symmetrize())?.min_eigenvalue())
}

fn max_eig(m: &Mat) -> Result<f64> {
    Ok(sym_eig(&m.symmetrize())?.max_eigenvalue())
}

/// Assembles the attack-growth block matrix for a candidate
/// `(P₁, γₐ, α₁)`:
///
/// ```text
/// [ (γₐ-2α₁)P₁ - 𝒜ᵀP₁𝒜 + α₁L̄ᵀUL̄   α₁L̄ᵀUL̄    -𝒜ᵀP₁𝒦              α₁L̄ᵀU - 𝒜ᵀP₁ℬ ]
/// [ α₁L̄ᵀUL̄                        α₁L̄ᵀUL̄     0                    α₁L̄ᵀU          ]
/// [ -𝒦ᵀP₁𝒜                        0           (α₁/λ̄)Σ⁻¹ - 𝒦ᵀP₁𝒦   -𝒦ᵀP₁ℬ        ]
/// [ α₁UL̄ - ℬᵀP₁𝒜                  α₁UL̄       -ℬᵀP₁𝒦              α₁U - ℬᵀP₁ℬ    ]
/// ```
///
/// ordered as `(x̄¹, x̄², Δz, uᵃ)`. The attack contract holds whenever this
/// matrix is PSD.
pub fn build_gamma_a_blocks(
    aug: &AugmentedSystem,
    p1: &Mat,
    u_shape: &Mat,
    sigma: &Mat,
    lambda_bar: f64,
    gamma_a: f64,
    alpha1: f64,
) -> Result<Mat> {
    let nn = aug.dim(); // 2n
    let m = aug.innovation_gain.cols();
    let l = aug.attack_gain.cols();
    if p1.rows() != nn || !p1.is_square() {
        return Err(Error::Dimension("candidate shape must match the augmented dimension".into()));
    }
    if u_shape.rows() != l || sigma.rows() != m {
        return Err(Error::Dimension("saturation/innovation shapes do not match the loop".into()));
    }
    if !(lambda_bar > 0.0) {
        return Err(Error::Domain("the attack block needs a positive bias budget".into()));
    }

    let a = &aug.a_aug;
    let kcal = &aug.innovation_gain;
    let bcal = &aug.attack_gain;
    let lbar = &aug.feedback_gain;

    let lt_u = lbar.transpose().dot(u_shape); // 2n x l
    let lt_u_l = lt_u.dot(lbar); // 2n x 2n
    let at_p = a.transpose().dot(p1); // 2n x 2n

    let sigma_inv = Cholesky::factor(sigma)?.inverse().symmetrize();

    let g11 = &(&p1.scale(gamma_a - 2.0 * alpha1) - &at_p.dot(a)) + &lt_u_l.scale(alpha1);
    let g12 = lt_u_l.scale(alpha1);
    let g13 = at_p.dot(kcal).scale(-1.0);
    let g14 = &lt_u.scale(alpha1) - &at_p.dot(bcal);
    let g22 = lt_u_l.scale(alpha1);
    let g23 = Mat::zeros(nn, m);
    let g24 = lt_u.scale(alpha1);
    let g33 = &sigma_inv.scale(alpha1 / lambda_bar) - &kcal.transpose().dot(p1).dot(kcal);
    let g34 = kcal.transpose().dot(p1).dot(bcal).scale(-1.0);
    let g44 = &u_shape.scale(alpha1) - &bcal.transpose().dot(p1).dot(bcal);

    let dim = 2 * nn + m + l;
    let mut out = Mat::zeros(dim, dim);
    let offsets = [0, nn, 2 * nn, 2 * nn + m];
    let upper = [
        (0usize, 0usize, &g11),
        (0, 1, &g12),
        (0, 2, &g13),
        (0, 3, &g14),
        (1, 1, &g22),
        (1, 2, &g23),
        (1, 3, &g24),
        (2, 2, &g33),
        (2, 3, &g34),
        (3, 3, &g44),
    ];
    for (i, j, blk) in upper {
        out.set_block(offsets[i], offsets[j], blk);
        if i != j {
            out.set_block(offsets[j], offsets[i], &blk.transpose());
        }
    }
    Ok(out.symmetrize())
}

/// Finds a Lyapunov shape and the minimal decay rate for normal operation:
/// `P₁ = dlyap(𝒜ᵀ, I)` (so `P₁ - 𝒜ᵀP₁𝒜 = I ≻ 0`), then the smallest `γ`
/// with `γP₁ ⪰ 𝒜ᵀP₁𝒜`, which is the largest generalized eigenvalue of
/// `(𝒜ᵀP₁𝒜, P₁)`.
pub fn synthesize_p1_gamma(aug: &AugmentedSystem) -> Result<(Mat, f64)> {
    let nn = aug.dim();
    let p1 = solve_dlyap(&aug.a_aug.transpose(), &Mat::identity(nn))?;
    let quad = aug.a_aug.transpose().dot(&p1).dot(&aug.a_aug).symmetrize();
    let gamma = gen_eig_max(&quad, &p1)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Unstable(format!(
            "minimal decay rate {} is not inside [0, 1)",
            gamma
        )));
    }
    Ok((p1, gamma))
}

/// Grid of `points` logarithmically spaced values spanning `[lo, hi]`.
fn logspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

const ALPHA1_GRID_POINTS: usize = 181;
const GAMMA_A_CAP: f64 = (1 << 20) as f64;
const BISECTION_TOL: f64 = 1e-10;

/// Minimizes the attack growth rate `γₐ` subject to the block inequality,
/// sweeping the multiplier `α₁` over a log grid and bisecting `γₐ` for each
/// candidate (feasibility is monotone in `γₐ`). Deterministic: ties break
/// toward the smaller grid index.
pub fn synthesize_gamma_a(
    aug: &AugmentedSystem,
    p1: &Mat,
    gamma: f64,
    u_shape: &Mat,
    sigma: &Mat,
    lambda_bar: f64,
) -> Result<RateCertificate> {
    let feasible = |gamma_a: f64, alpha1: f64| -> Result<f64> {
        let block = build_gamma_a_blocks(aug, p1, u_shape, sigma, lambda_bar, gamma_a, alpha1)?;
        min_eig(&block)
    };

    let mut best: Option<(f64, f64)> = None; // (gamma_a, alpha1)
    let mut best_violation = f64::NEG_INFINITY;
    for &alpha1 in &logspace(1e-6, 1e3, ALPHA1_GRID_POINTS) {
        // grow an upper bracket until feasible
        let mut hi = 1.0;
        let mut hi_margin = feasible(hi, alpha1)?;
        while hi_margin < -MARGIN_TOL && hi < GAMMA_A_CAP {
            hi *= 2.0;
            hi_margin = feasible(hi, alpha1)?;
        }
        if hi_margin < -MARGIN_TOL {
            best_violation = best_violation.max(hi_margin);
            continue;
        }
        if let Some((cur, _)) = best {
            if hi / 2.0 >= cur && hi > 1.0 {
                // cannot beat the incumbent from this bracket
                continue;
            }
        }
        let mut lo = 0.0;
        if feasible(lo, alpha1)? >= -MARGIN_TOL {
            hi = lo;
        } else {
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if feasible(mid, alpha1)? >= -MARGIN_TOL {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        match best {
            Some((cur, _)) if hi >= cur => {}
            _ => best = Some((hi, alpha1)),
        }
    }

    let Some((gamma_a, alpha1)) = best else {
        return Err(Error::Infeasible(format!(
            "no (α₁, γₐ) pair satisfies the attack block inequality; best margin {}",
            best_violation
        )));
    };
    Ok(RateCertificate {
        p1: p1.clone(),
        gamma,
        gamma_a,
        alpha1,
    })
}

/// Invariance block matrix for a candidate `(P₂, α₂)`:
///
/// ```text
/// [ (α₂-1)P₂ + 𝒜ᵀP₂𝒜    𝒜ᵀP₂K̄                    ]
/// [ K̄ᵀP₂𝒜               K̄ᵀP₂K̄ - (α₂/(n+m))ℛ⁻¹    ]
/// ```
///
/// which must be ⪯ 0 for the invariance contract.
pub fn invariance_block(aug: &AugmentedSystem, p2: &Mat, alpha2: f64) -> Result<Mat> {
    let nn = aug.dim();
    if p2.rows() != nn || !p2.is_square() {
        return Err(Error::Dimension("invariance shape must match the augmented dimension".into()));
    }
    let kbar = &aug.noise_gain;
    let nd = kbar.cols(); // n + m
    let r_inv = Cholesky::factor(&aug.noise_cov)?.inverse().symmetrize();
    let at_p = aug.a_aug.transpose().dot(p2);
    let g11 = &p2.scale(alpha2 - 1.0) + &at_p.dot(&aug.a_aug);
    let g12 = at_p.dot(kbar);
    let g22 = &kbar.transpose().dot(p2).dot(kbar) - &r_inv.scale(alpha2 / nd as f64);
    let mut out = Mat::zeros(nn + nd, nn + nd);
    out.set_block(0, 0, &g11);
    out.set_block(0, nn, &g12);
    out.set_block(nn, 0, &g12.transpose());
    out.set_block(nn, nn, &g22);
    Ok(out.symmetrize())
}

const ALPHA2_GRID_POINTS: usize = 101;
const ALPHA2_SAFETY_MARGIN: f64 = 0.999;

/// Synthesizes the invariance certificate over the scaling family
/// `P₂ = β · dlyap(𝒜ᵀ, I)`: for each multiplier `α₂` on a log grid the
/// largest feasible `β` is bisected, and the pair maximizing
/// `log det(β P̂)` — equivalently the largest `β` — wins. Conservative by
/// construction, never unsound.
pub fn synthesize_p2(aug: &AugmentedSystem, p: f64) -> Result<InvarianceCertificate> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Domain(format!("probability level must be in (0,1), got {}", p)));
    }
    let nn = aug.dim();
    let p_hat = solve_dlyap(&aug.a_aug.transpose(), &Mat::identity(nn))?;
    let lam_max = sym_eig(&p_hat)?.max_eigenvalue();

    let feasible = |beta: f64, alpha2: f64| -> Result<bool> {
        let block = invariance_block(aug, &p_hat.scale(beta), alpha2)?;
        Ok(max_eig(&block)? <= MARGIN_TOL)
    };

    let mut best: Option<(f64, f64)> = None; // (beta, alpha2)
    for &alpha2 in logspace(1e-6, 1.0, ALPHA2_GRID_POINTS)
        .iter()
        .filter(|&&a| a < ALPHA2_SAFETY_MARGIN / lam_max)
    {
        let seed = 1e-9;
        if !feasible(seed, alpha2)? {
            continue;
        }
        let mut lo = seed;
        let mut hi = seed;
        let mut guard = 0;
        loop {
            let next = hi * 2.0;
            if feasible(next, alpha2)? {
                lo = next;
                hi = next;
                guard += 1;
                if guard > 200 {
                    return Err(Error::NonConvergence("invariance scale bracket never closed".into()));
                }
            } else {
                hi = next;
                break;
            }
        }
        while (hi - lo) > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if feasible(mid, alpha2)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        match best {
            Some((cur, _)) if lo <= cur => {}
            _ => best = Some((lo, alpha2)),
        }
    }

    let Some((beta, alpha2)) = best else {
        return Err(Error::Infeasible(
            "no (α₂, β) pair satisfies the invariance inequality on the scaling family".into(),
        ));
    };
    Ok(InvarianceCertificate {
        p2: p_hat.scale(beta),
        alpha2,
        p,
    })
}

/// One-call pipeline: decay shape and rate, attack growth rate, and the
/// invariance certificate.
pub fn synthesize(
    aug: &AugmentedSystem,
    u_shape: &Mat,
    sigma: &Mat,
    lambda_bar: f64,
    p: f64,
) -> Result<(RateCertificate, InvarianceCertificate)> {
    let (p1, gamma) = synthesize_p1_gamma(aug)?;
    let rate = synthesize_gamma_a(aug, &p1, gamma, u_shape, sigma, lambda_bar)?;
    let inv = synthesize_p2(aug, p)?;
    Ok((rate, inv))
}

/// Re-verifies all three matrix inequalities by eigenvalue and reports the
/// margins. Never fails on an invalid certificate — the report carries the
/// verdict.
pub fn check_certificates(
    aug: &AugmentedSystem,
    u_shape: &Mat,
    sigma: &Mat,
    lambda_bar: f64,
    rate: &RateCertificate,
    inv: &InvarianceCertificate,
) -> Result<CertificateMargins> {
    let decay = &rate.p1.scale(rate.gamma)
        - &aug.a_aug.transpose().dot(&rate.p1).dot(&aug.a_aug);
    let decay_margin = min_eig(&decay)?;

    let growth_block = build_gamma_a_blocks(
        aug,
        &rate.p1,
        u_shape,
        sigma,
        lambda_bar,
        rate.gamma_a,
        rate.alpha1,
    )?;
    let growth_margin = min_eig(&growth_block)?;

    let inv_block = invariance_block(aug, &inv.p2, inv.alpha2)?;
    let invariance_margin = -max_eig(&inv_block)?;

    let p1_min_eig = min_eig(&rate.p1)?;
    let p2_min_eig = min_eig(&inv.p2)?;

    let accepted = decay_margin >= -MARGIN_TOL
        && growth_margin >= -MARGIN_TOL
        && invariance_margin >= -MARGIN_TOL
        && p1_min_eig > 0.0
        && p2_min_eig > 0.0
        && rate.gamma >= 0.0
        && rate.gamma < 1.0
        && rate.gamma_a >= 0.0
        && rate.alpha1 >= 0.0
        && inv.alpha2 >= 0.0;

    Ok(CertificateMargins {
        decay_margin,
        growth_margin,
        invariance_margin,
        p1_min_eig,
        p2_min_eig,
        accepted,
    })
}
