//! Monte-Carlo false penalties against their closed-form bounds on a grid
//! of slip chains.

use lql_core::hinge::Side;
use lql_core::mdp::{apply_slip_noise, build_chain, BehaviorPolicy, RewardMode, CHAIN_FORWARD};
use lql_core::oracle::value_iteration;
use lql_core::theory::{monte_carlo_false_penalty, FalsePenaltyEstimate, TheoryRow};

use crate::config::TheoryConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    pub estimates: Vec<(f64, FalsePenaltyEstimate)>,
    pub checks: Vec<Check>,
}

impl TheoryOutcome {
    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn rows(&self) -> Vec<TheoryRow> {
        self.estimates.iter().map(|(sigma, e)| TheoryRow::new(e, *sigma)).collect()
    }
}

pub fn verify_theory(cfg: &TheoryConfig) -> Result<TheoryOutcome> {
    if cfg.sigmas.is_empty() || cfg.gammas.is_empty() || cfg.lengths.is_empty() {
        return Err(Error::Usage("theory grid needs sigmas, gammas and L values".into()));
    }
    let mut estimates = Vec::new();
    let mut checks = Vec::new();
    let mut cell = 0u64;
    for &gamma in &cfg.gammas {
        for &sigma in &cfg.sigmas {
            let base = build_chain::<f64>(cfg.chain_length, RewardMode::GoalPlusOne, gamma)?;
            let mdp = apply_slip_noise(&base, sigma)?;
            let qs = value_iteration(&mdp, 1e-12)?;
            let mut row = [1.0 - cfg.forward_p; 2];
            row[CHAIN_FORWARD] = cfg.forward_p;
            let beh = BehaviorPolicy::table(row.repeat(mdp.num_states()), 2)?;
            for &l in &cfg.lengths {
                let est = monte_carlo_false_penalty(&mdp, &beh, &qs, l, cfg.trials, cfg.burn_in, cfg.seed, cell)?;
                cell += 1;
                for e in est {
                    checks.push(Check {
                        name: format!("{} σ={sigma} γ={gamma} L={l}: estimates within bounds", e.side),
                        ok: e.within_bounds(),
                    });
                    estimates.push((sigma, e));
                }
            }
        }
    }
    for &gamma in &cfg.gammas {
        for side in [Side::Lb, Side::Ub] {
            let cell = |sigma: Option<f64>| -> Vec<&FalsePenaltyEstimate> {
                estimates
                    .iter()
                    .filter(|(s, e)| e.side == side && e.gamma == gamma && sigma.is_none_or(|x| *s == x))
                    .map(|(_, e)| e)
                    .collect()
            };
            for &sigma in &cfg.sigmas {
                let ok = cell(Some(sigma))
                    .windows(2)
                    .all(|w| w[0].prob_bound == w[1].prob_bound && w[0].sq_bound == w[1].sq_bound);
                checks.push(Check { name: format!("{side} σ={sigma} γ={gamma}: bounds constant in L"), ok });
            }
            let mut by_gap = cell(None);
            by_gap.sort_by(|a, b| a.delta_bar.total_cmp(&b.delta_bar));
            let ok = by_gap
                .windows(2)
                .all(|w| w[1].prob_bound <= w[0].prob_bound && w[1].sq_bound <= w[0].sq_bound);
            checks.push(Check { name: format!("{side} γ={gamma}: bounds non-increasing in Δ̄"), ok });
        }
    }
    Ok(TheoryOutcome { estimates, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_holds() {
        let cfg = TheoryConfig {
            sigmas: vec![0.0, 0.3],
            gammas: vec![0.9],
            lengths: vec![2, 4],
            trials: 2000,
            ..TheoryConfig::default()
        };
        let out = verify_theory(&cfg).unwrap();
        assert_eq!(out.rows().len(), 2 * 2 * 2);
        assert!(out.all_ok(), "{:?}", out.checks.iter().filter(|c| !c.ok).collect::<Vec<_>>());
        // Without slip nothing can be falsely penalized.
        for (sigma, e) in &out.estimates {
            if *sigma == 0.0 {
                assert_eq!(e.prob_violation, 0.0);
            }
        }
    }
}
