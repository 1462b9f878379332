use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Arm, Gamma, ParticipantRecord};
use crate::nuisance::expit;

use super::hazard::{potential_time, SubjectRates};
use super::{ComparisonScale, ScenarioConfig, SimError};

/// A simulated participant with the latent quantities behind the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedParticipant {
    pub record: ParticipantRecord,
    /// Unblinding time had infection not intervened.
    pub r_tilde: f64,
    pub gamma_tilde: Gamma,
    pub psi_tilde: bool,
    pub rates: SubjectRates,
    /// Patient-scale potential infection times under placebo and vaccine.
    pub t0_star: f64,
    pub t1_star: f64,
    /// Calendar infection time of a placebo participant declining vaccine.
    pub t_declined: f64,
}

/// Uniform on (0, 1].
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Per-participant stream: the base seed selects the key, the participant
/// index the stream, so any participant can be regenerated in isolation.
pub fn participant_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed of replication `rep` derived from a base seed (SplitMix64 finaliser).
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    let mut z = base ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one participant. Every draw is consumed in a fixed order whatever
/// the branch taken, so streams stay aligned across configurations.
pub fn generate_participant(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<SimulatedParticipant, SimError> {
    let tl = &cfg.timeline;
    let arm = if rng.random::<f64>() < tl.p_assign {
        Arm::Vaccine
    } else {
        Arm::Placebo
    };
    let x1 = if rng.random::<f64>() < cfg.x1_prob { 1.0 } else { 0.0 };
    let z2: f64 = rng.sample(rand_distr::StandardNormal);
    let x2 = cfg.x2_mean + cfg.x2_sd * z2;
    let entry = tl.t_accrual * rng.random::<f64>();
    let u_g1 = open_uniform(rng);
    let u_r2 = rng.random::<f64>();
    let u_psi = rng.random::<f64>();
    let frailty = Normal::new(0.0, cfg.frailty_var.sqrt())
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?
        .sample(rng);
    let u_t0 = open_uniform(rng);
    let u_t1 = open_uniform(rng);
    let u_g2 = open_uniform(rng);

    let (c1, c2) = (x1 - 0.5, x2 - cfg.x2_mean);
    let b = &cfg.beta_request;
    let a = arm.indicator();
    let lambda_r1 = (b[0] + (b[1] * c1 + b[2] * c2) * (1.0 - a) + (b[3] * c1 + b[4] * c2) * a).exp();
    let r1 = tl.t_pfizer - u_g1.ln() / lambda_r1;
    let r2 = tl.t_pdcv_start + (tl.t_pdcv_end - tl.t_pdcv_start) * u_r2;
    let (gamma_tilde, r_tilde) = if r1 < tl.t_pdcv_start {
        (Gamma::Requested, r1)
    } else {
        (Gamma::Pdcv, r2)
    };
    let g = &cfg.gamma_agree;
    let psi_tilde = u_psi < expit(g[0] + g[1] * c1 + g[2] * c2 + g[3] * f64::from(gamma_tilde.code()));
    let d = &cfg.delta_infect;
    let rates = SubjectRates::new(cfg, (d[0] + d[1] * c1 + d[2] * c2 + frailty).exp());

    let t0_star = potential_time(cfg, &rates, Arm::Placebo, entry, r_tilde, u_t0)?;
    let t1_star = potential_time(cfg, &rates, Arm::Vaccine, entry, r_tilde, u_t1)?;
    let t_declined = r_tilde - u_g2.ln() / rates.lambda_b;

    let u = match arm {
        Arm::Vaccine => entry + t1_star,
        Arm::Placebo => {
            let before_unblinding = match cfg.comparison {
                ComparisonScale::Calendar => entry + t0_star < r_tilde,
                ComparisonScale::Patient => t0_star < r_tilde,
            };
            if before_unblinding || psi_tilde {
                entry + t0_star
            } else {
                t_declined
            }
        }
    };
    let infected = u <= tl.t_analysis;
    let r = if u <= r_tilde { u } else { r_tilde };
    let gamma = if u > r { gamma_tilde } else { Gamma::Infection };
    let psi_observed = arm == Arm::Placebo && gamma.is_unblinded();
    Ok(SimulatedParticipant {
        record: ParticipantRecord {
            entry,
            covariates: vec![x1, x2],
            arm,
            infect_time: u,
            infected,
            r_time: r,
            gamma,
            psi: psi_observed && psi_tilde,
            psi_observed,
        },
        r_tilde,
        gamma_tilde,
        psi_tilde,
        rates,
        t0_star,
        t1_star,
        t_declined,
    })
}

/// `n` participants with latent quantities, generated in parallel; the
/// output does not depend on the number of worker threads.
pub fn generate_participants(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<Vec<SimulatedParticipant>, SimError> {
    cfg.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_participant(cfg, &mut participant_rng(seed, i)))
        .collect()
}

pub fn generate_dataset(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<Vec<ParticipantRecord>, SimError> {
    Ok(generate_participants(cfg, n, seed)?
        .into_iter()
        .map(|p| p.record)
        .collect())
}
