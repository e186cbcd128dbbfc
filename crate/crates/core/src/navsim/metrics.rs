//! Reward shaping and SR/SPL aggregation.

use serde::{Deserialize, Serialize};

use super::agent::AgentTrace;
use super::SimError;

/// Terminal bonus for a successful STOP.
pub const SUCCESS_REWARD: f64 = 10.0;
/// Per-step slack cost.
pub const SLACK_COST: f64 = 0.01;

/// `10·1[success] − (new_geo − prev_geo) − 0.01`.
pub fn step_reward(prev_geo: f64, new_geo: f64, success: bool) -> f64 {
    let bonus = if success { SUCCESS_REWARD } else { 0.0 };
    bonus - (new_geo - prev_geo) - SLACK_COST
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Success rate, percent.
    pub sr: f64,
    /// Success weighted by path length, percent.
    pub spl: f64,
    pub n: usize,
}

/// SR = 100·successes/N; SPL = (100/N)·Σ Sᵢ·ℓ*ᵢ / max(ℓᵢ, ℓ*ᵢ).
pub fn compute_metrics(traces: &[AgentTrace]) -> Result<Metrics, SimError> {
    if traces.is_empty() {
        return Err(SimError::NoTraces);
    }
    let n = traces.len();
    let mut successes = 0usize;
    let mut spl = 0.0;
    for t in traces {
        if t.success {
            successes += 1;
            let denom = t.path_length.max(t.shortest_length);
            spl += if denom > 0.0 { t.shortest_length / denom } else { 1.0 };
        }
    }
    Ok(Metrics {
        sr: 100.0 * successes as f64 / n as f64,
        spl: 100.0 * spl / n as f64,
        n,
    })
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are excluded by the caller.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // Σ_{k=wins}^{n} C(n, k) / 2^n, in log space
    let ln_fact = |m: usize| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    (wins..=n)
        .map(|k| (ln_fact(n) - ln_fact(k) - ln_fact(n - k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(success: bool, l: f64, l_star: f64) -> AgentTrace {
        AgentTrace {
            success,
            path_length: l,
            shortest_length: l_star,
            ..AgentTrace::default()
        }
    }

    #[test]
    fn reward_cases() {
        assert!((step_reward(2.0, 1.75, false) - 0.24).abs() < 1e-12);
        assert!((step_reward(1.0, 0.75, true) - 10.24).abs() < 1e-12);
    }

    #[test]
    fn analytic_metric_cases() {
        let m = compute_metrics(&[trace(true, 3.0, 3.0)]).unwrap();
        assert_eq!((m.sr, m.spl), (100.0, 100.0));
        let m = compute_metrics(&[trace(true, 4.0, 2.0), trace(false, 1.0, 2.0)]).unwrap();
        assert_eq!((m.sr, m.spl, m.n), (50.0, 25.0, 2));
        assert_eq!(compute_metrics(&[]), Err(SimError::NoTraces));
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p(10, 0) - 1.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p(9, 1) - 11.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test_p(0, 0), 1.0);
    }
}
