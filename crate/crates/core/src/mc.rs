//! Monte-Carlo simulation of the protocol and the attack at the
//! click-statistics level: the brute-force oracle for the conclusive-outcome
//! formulas, the binomial success law, and the weighted information bound.
//!
//! Detectors are ideal threshold detectors: a mode of intensity `nu` clicks
//! independently with probability `1 - e^{-nu}`. A train contributes a
//! conclusive outcome when exactly one click lands in the `N - 1` central
//! slots and the four edge modes stay dark.
//!
//! Reproducibility contract: trials are partitioned into fixed chunks of
//! [`TRIALS_PER_STREAM`]; chunk `c` is simulated on ChaCha stream `c` of the
//! configured seed, and per-chunk aggregates are folded in chunk order. The
//! result is therefore identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::attack::{class_infos, resolve_schedule, AttackParams, ResolvedAttack};
use crate::error::{Error, Result};
use crate::math::{InformationBits, Probability};
use crate::protocol::{ChannelParams, ProtocolParams};

/// Trials simulated per RNG stream; fixes the work partition independently
/// of the worker count.
pub const TRIALS_PER_STREAM: u64 = 1 << 16;

/// Bob's measurement record for one train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrainOutcome {
    /// Clicks of detector D0 over the `N - 1` central slots.
    pub clicks_d0: u64,
    /// Clicks of detector D1 over the `N - 1` central slots.
    pub clicks_d1: u64,
    /// Click count over the four edge modes.
    pub edge_clicks: u8,
    /// Exactly one central click and dark edges.
    pub conclusive: bool,
    /// Slot index of the single click, when conclusive.
    pub slot: Option<u8>,
    /// Detected bit (0 for D0, 1 for D1), when conclusive.
    pub bit: Option<u8>,
}

impl TrainOutcome {
    /// The record of a blocked train: nothing arrives, nothing clicks.
    pub fn blocked() -> Self {
        TrainOutcome {
            clicks_d0: 0,
            clicks_d1: 0,
            edge_clicks: 0,
            conclusive: false,
            slot: None,
            bit: None,
        }
    }

    /// Exactly one central click, ignoring the edge modes.
    pub fn single_central_click(&self) -> bool {
        self.clicks_d0.count_ones() + self.clicks_d1.count_ones() == 1
    }
}

/// Simulation setup: trial count, seed, physics parameters and whether the
/// eavesdropper is active.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    pub trials: u64,
    pub seed: u64,
    pub protocol: ProtocolParams,
    pub channel: ChannelParams,
    pub attack: AttackParams,
    pub attack_enabled: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

#[inline]
fn central_mask(n: u32) -> u64 {
    (1u64 << (n - 1)) - 1
}

fn finish_outcome(clicks_d0: u64, clicks_d1: u64, edge_clicks: u8) -> TrainOutcome {
    let total = clicks_d0.count_ones() + clicks_d1.count_ones();
    let conclusive = total == 1 && edge_clicks == 0;
    let (slot, bit) = if conclusive {
        let j = (clicks_d0 | clicks_d1).trailing_zeros() as u8;
        (Some(j), Some(u8::from(clicks_d1 != 0)))
    } else {
        (None, None)
    };
    TrainOutcome {
        clicks_d0,
        clicks_d1,
        edge_clicks,
        conclusive,
        slot,
        bit,
    }
}

/// Simulates Bob's interferometer output for a clean train of intensity
/// `mu`. Central slot `j` routes all of `mu` to the detector selected by
/// bit `j` of `diff_bits` (the phase difference of adjacent pulses); the
/// other detector sees vacuum. Four edge modes carry `mu / 4` each.
pub fn simulate_clean_train<R: Rng>(mu: f64, n: u32, diff_bits: u64, rng: &mut R) -> TrainOutcome {
    debug_assert!(mu >= 0.0);
    let p_click = -(-mu).exp_m1();
    let p_edge = -(-mu / 4.0).exp_m1();
    let mut d0 = 0u64;
    let mut d1 = 0u64;
    for j in 0..(n - 1) as u64 {
        if rng.gen::<f64>() < p_click {
            if (diff_bits >> j) & 1 == 1 {
                d1 |= 1 << j;
            } else {
                d0 |= 1 << j;
            }
        }
    }
    let mut edges = 0u8;
    for _ in 0..4 {
        if rng.gen::<f64>() < p_edge {
            edges += 1;
        }
    }
    finish_outcome(d0, d1, edges)
}

/// Draws the filtering success count `k` (N independent Bernoulli trials at
/// `p_s`), blocks the train when `k` is below the threshold, and otherwise
/// forwards a clean train at the scheduled intensity with fresh random
/// phase bits.
pub fn simulate_attacked_train<R: Rng>(
    r: &ResolvedAttack,
    p: &ProtocolParams,
    rng: &mut R,
) -> (usize, TrainOutcome) {
    let n = p.n();
    let ps = r.filter_success.value();
    let mut k = 0usize;
    for _ in 0..n {
        if rng.gen::<f64>() < ps {
            k += 1;
        }
    }
    if k < r.threshold {
        return (k, TrainOutcome::blocked());
    }
    let diff_bits = rng.gen::<u64>() & central_mask(n);
    let outcome = simulate_clean_train(r.intensity_schedule[k], n, diff_bits, rng);
    (k, outcome)
}

/// Aggregate counts from clean-train simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CleanStats {
    pub trials: u64,
    /// Fully conclusive outcomes (one central click, dark edges).
    pub conclusive: u64,
    /// Outcomes with exactly one central click regardless of the edges.
    pub central_only: u64,
    /// Conclusive outcomes whose detected bit disagreed with the phase bit.
    pub bit_errors: u64,
}

impl CleanStats {
    pub fn conclusive_rate(&self) -> f64 {
        self.conclusive as f64 / self.trials as f64
    }

    pub fn central_only_rate(&self) -> f64 {
        self.central_only as f64 / self.trials as f64
    }

    /// Binomial standard error of a frequency estimate at this trial count.
    pub fn std_err(&self, rate: f64) -> f64 {
        (rate * (1.0 - rate) / self.trials as f64).sqrt()
    }
}

/// Clean-train Monte Carlo: `trials` trains of intensity `mu` with uniform
/// random phase bits. Chunked over deterministic RNG streams.
pub fn run_clean_sim(mu: f64, p: &ProtocolParams, trials: u64, seed: u64) -> CleanStats {
    let n = p.n();
    let mask = central_mask(n);
    let chunks = trials.div_ceil(TRIALS_PER_STREAM);
    let parts: Vec<CleanStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c);
            let lo = c * TRIALS_PER_STREAM;
            let hi = trials.min(lo + TRIALS_PER_STREAM);
            let mut s = CleanStats::default();
            for _ in lo..hi {
                let diff_bits = rng.gen::<u64>() & mask;
                let out = simulate_clean_train(mu, n, diff_bits, &mut rng);
                s.trials += 1;
                if out.single_central_click() {
                    s.central_only += 1;
                }
                if out.conclusive {
                    s.conclusive += 1;
                    let j = out.slot.expect("conclusive outcome has a slot");
                    let expected = ((diff_bits >> j) & 1) as u8;
                    if out.bit != Some(expected) {
                        s.bit_errors += 1;
                    }
                }
            }
            s
        })
        .collect();

    parts.into_iter().fold(CleanStats::default(), |mut acc, s| {
        acc.trials += s.trials;
        acc.conclusive += s.conclusive;
        acc.central_only += s.central_only;
        acc.bit_errors += s.bit_errors;
        acc
    })
}

/// Aggregate counts from attacked-train simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackStats {
    pub trials: u64,
    pub conclusive: u64,
    /// Histogram of the filtering success count `k`.
    pub k_histogram: Vec<u64>,
    /// Sum of the analytic per-class information over conclusive trials.
    pub info_sum: f64,
    /// Sum of squares, for the standard error of the mean.
    pub info_sq_sum: f64,
}

impl AttackStats {
    pub fn conclusive_rate(&self) -> f64 {
        self.conclusive as f64 / self.trials as f64
    }

    pub fn conclusive_std_err(&self) -> f64 {
        let r = self.conclusive_rate();
        (r * (1.0 - r) / self.trials as f64).sqrt()
    }
}

/// Attacked-train Monte Carlo over deterministic RNG streams.
pub fn run_attack_sim(c: &SimConfig) -> Result<AttackStats> {
    c.validate()?;
    let p = c.protocol;
    let r = resolve_schedule(&c.attack, &p);
    let infos = class_infos(&c.attack, &r, &p);
    let n = p.n() as usize;
    let chunks = c.trials.div_ceil(TRIALS_PER_STREAM);
    let parts: Vec<AttackStats> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream_rng(c.seed, chunk);
            let lo = chunk * TRIALS_PER_STREAM;
            let hi = c.trials.min(lo + TRIALS_PER_STREAM);
            let mut s = AttackStats {
                trials: 0,
                conclusive: 0,
                k_histogram: vec![0; n + 1],
                info_sum: 0.0,
                info_sq_sum: 0.0,
            };
            for _ in lo..hi {
                let (k, out) = simulate_attacked_train(&r, &p, &mut rng);
                s.trials += 1;
                s.k_histogram[k] += 1;
                if out.conclusive {
                    s.conclusive += 1;
                    s.info_sum += infos[k];
                    s.info_sq_sum += infos[k] * infos[k];
                }
            }
            s
        })
        .collect();

    let mut acc = AttackStats {
        trials: 0,
        conclusive: 0,
        k_histogram: vec![0; n + 1],
        info_sum: 0.0,
        info_sq_sum: 0.0,
    };
    for s in parts {
        acc.trials += s.trials;
        acc.conclusive += s.conclusive;
        for (a, b) in acc.k_histogram.iter_mut().zip(&s.k_histogram) {
            *a += b;
        }
        acc.info_sum += s.info_sum;
        acc.info_sq_sum += s.info_sq_sum;
    }
    Ok(acc)
}

/// Monte-Carlo estimate of Eve's information with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EveInfoEstimate {
    pub value: InformationBits,
    pub std_err: f64,
    pub conclusive_trials: u64,
}

/// Averages the analytic per-class information over the trials where Bob
/// obtained a conclusive outcome; converges to the total information bound.
pub fn estimate_eve_info(c: &SimConfig) -> Result<EveInfoEstimate> {
    if !c.attack_enabled {
        return Err(Error::InvalidConfig(
            "information estimation requires the attack to be enabled".into(),
        ));
    }
    let stats = run_attack_sim(c)?;
    if stats.conclusive == 0 {
        return Err(Error::NoConclusiveEvents);
    }
    let cnt = stats.conclusive as f64;
    let mean = stats.info_sum / cnt;
    let var = (stats.info_sq_sum / cnt - mean * mean).max(0.0);
    Ok(EveInfoEstimate {
        value: InformationBits::new(mean)?,
        std_err: (var / cnt).sqrt(),
        conclusive_trials: stats.conclusive,
    })
}

/// Pearson chi-square goodness-of-fit result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square test of an observed histogram against an expected discrete
/// law. Bins are pooled left to right until each pooled bin expects at
/// least 5 counts; a trailing remainder merges into the last bin.
pub fn chi_square_gof(
    hist: &[u64],
    expected: &[Probability],
    trials: u64,
) -> Result<ChiSquareTest> {
    if hist.len() != expected.len() || hist.is_empty() {
        return Err(Error::InvalidConfig(
            "histogram and expected law must have equal nonzero length".into(),
        ));
    }
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc_obs = 0.0;
    let mut acc_exp = 0.0;
    for (&h, &p) in hist.iter().zip(expected) {
        acc_obs += h as f64;
        acc_exp += p.value() * trials as f64;
        if acc_exp >= 5.0 {
            pooled.push((acc_obs, acc_exp));
            acc_obs = 0.0;
            acc_exp = 0.0;
        }
    }
    if acc_exp > 0.0 || acc_obs > 0.0 {
        if let Some(last) = pooled.last_mut() {
            last.0 += acc_obs;
            last.1 += acc_exp;
        } else {
            pooled.push((acc_obs, acc_exp));
        }
    }
    if pooled.len() < 2 {
        return Err(Error::InvalidConfig(
            "fewer than two populated bins after pooling".into(),
        ));
    }
    let statistic: f64 = pooled
        .iter()
        .map(|&(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = pooled.len() - 1;
    let chi = ChiSquared::new(dof as f64)
        .map_err(|_| Error::InvalidConfig("invalid chi-square dof".into()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - chi.cdf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{bob_conclusive_under_attack, eve_info_total, success_count_dist};

    fn proto() -> ProtocolParams {
        ProtocolParams::new(10, 0.1).unwrap()
    }

    fn sim_config(t: f64, fp: f64, p1: f64, p2: f64, trials: u64, seed: u64) -> SimConfig {
        SimConfig {
            trials,
            seed,
            protocol: proto(),
            channel: ChannelParams::new(0.2, 50.0).unwrap(),
            attack: AttackParams::new(t, fp, p1, p2, &proto()).unwrap(),
            attack_enabled: true,
        }
    }

    #[test]
    fn vacuum_never_clicks() {
        let stats = run_clean_sim(0.0, &proto(), 1000, 1);
        assert_eq!(stats.conclusive, 0);
        assert_eq!(stats.central_only, 0);
    }

    #[test]
    fn outcome_flags_consistent() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..2000 {
            let diff = rng.gen::<u64>() & central_mask(10);
            let out = simulate_clean_train(0.3, 10, diff, &mut rng);
            let total = out.clicks_d0.count_ones() + out.clicks_d1.count_ones();
            assert_eq!(out.conclusive, total == 1 && out.edge_clicks == 0);
            assert_eq!(out.slot.is_some(), out.conclusive);
            assert_eq!(out.bit.is_some(), out.conclusive);
            assert_eq!(out.clicks_d0 & out.clicks_d1, 0);
        }
    }

    #[test]
    fn clean_rate_matches_analytic() {
        let trials = 200_000;
        let stats = run_clean_sim(0.1, &proto(), trials, 42);
        let analytic = 0.348211967122411;
        let rate = stats.conclusive_rate();
        let se = stats.std_err(rate);
        assert!(
            (rate - analytic).abs() < 4.0 * se,
            "rate {rate} vs {analytic} (se {se})"
        );
    }

    #[test]
    fn clean_trains_have_zero_intrinsic_qber() {
        let stats = run_clean_sim(0.1, &proto(), 100_000, 7);
        assert!(stats.conclusive > 0);
        assert_eq!(stats.bit_errors, 0);
    }

    #[test]
    fn central_only_rate_matches_edge_free_factor() {
        // (n-1) e^{-(n-2) mu} (1 - e^{-mu}): the edge modes removed.
        let trials = 200_000;
        let mu = 0.1_f64;
        let stats = run_clean_sim(mu, &proto(), trials, 11);
        let analytic = 9.0 * (-8.0 * mu).exp() * (-(-mu).exp_m1());
        let rate = stats.central_only_rate();
        let se = stats.std_err(rate);
        assert!(
            (rate - analytic).abs() < 4.0 * se,
            "rate {rate} vs {analytic}"
        );
    }

    #[test]
    fn same_seed_same_stats_any_worker_count() {
        let c = sim_config(0.5, 0.4, 3.2, 0.6, 150_000, 99);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_attack_sim(&c).unwrap());
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_attack_sim(&c).unwrap());
        assert_eq!(one, four);
        let again = run_attack_sim(&c).unwrap();
        assert_eq!(one, again);
    }

    #[test]
    fn certain_success_always_hits_top_class() {
        let c = sim_config(0.3, 1.0, 0.0, 0.0, 20_000, 5);
        let stats = run_attack_sim(&c).unwrap();
        assert_eq!(stats.k_histogram[10], stats.trials);
    }

    #[test]
    fn attacked_rate_matches_analytic() {
        let c = sim_config(0.4, 0.5, 2.7, 0.5, 200_000, 17);
        let r = resolve_schedule(&c.attack, &c.protocol);
        let analytic = bob_conclusive_under_attack(&r).value();
        let stats = run_attack_sim(&c).unwrap();
        let rate = stats.conclusive_rate();
        let se = stats.conclusive_std_err();
        assert!(
            (rate - analytic).abs() < 4.0 * se,
            "rate {rate} vs {analytic} (se {se})"
        );
    }

    #[test]
    fn success_histogram_passes_chi_square() {
        let c = sim_config(0.6, 0.3, 0.0, 0.5, 200_000, 23);
        let r = resolve_schedule(&c.attack, &c.protocol);
        let stats = run_attack_sim(&c).unwrap();
        let expected = success_count_dist(r.filter_success, 10);
        let test = chi_square_gof(&stats.k_histogram, &expected, stats.trials).unwrap();
        assert!(test.p_value > 0.001, "p = {}", test.p_value);
    }

    #[test]
    fn chi_square_rejects_wrong_law() {
        let c = sim_config(0.6, 0.3, 0.0, 0.5, 100_000, 29);
        let stats = run_attack_sim(&c).unwrap();
        let wrong = success_count_dist(Probability::new(0.9).unwrap(), 10);
        let test = chi_square_gof(&stats.k_histogram, &wrong, stats.trials).unwrap();
        assert!(test.p_value < 1e-6, "p = {}", test.p_value);
    }

    #[test]
    fn info_estimate_matches_weighted_mean() {
        let c = sim_config(0.5, 0.4, 1.8, 0.7, 200_000, 31);
        let analytic = eve_info_total(&c.attack, &c.protocol).unwrap().value();
        let est = estimate_eve_info(&c).unwrap();
        assert!(
            (est.value.value() - analytic).abs() < 4.0 * est.std_err.max(1e-9),
            "estimate {} vs {analytic} (se {})",
            est.value.value(),
            est.std_err
        );
    }

    #[test]
    fn info_estimate_single_class_is_exact() {
        // Certain success concentrates all mass on the top class.
        let c = sim_config(0.3, 1.0, 0.0, 0.5, 5_000, 37);
        let r = resolve_schedule(&c.attack, &c.protocol);
        let infos = class_infos(&c.attack, &r, &c.protocol);
        let est = estimate_eve_info(&c).unwrap();
        // Accumulation rounding only; every sample is the same class value.
        assert!((est.value.value() - infos[10]).abs() < 1e-12);
        assert!(est.std_err < 1e-9);
    }

    #[test]
    fn estimate_requires_conclusive_events() {
        // Full tap with no amplification: Bob never sees light.
        let c = sim_config(1.0, 0.5, 0.0, 0.0, 1_000, 41);
        assert!(matches!(
            estimate_eve_info(&c),
            Err(Error::NoConclusiveEvents)
        ));
    }

    #[test]
    fn estimate_requires_attack_enabled() {
        let mut c = sim_config(0.5, 0.5, 1.0, 0.5, 100, 1);
        c.attack_enabled = false;
        assert!(matches!(
            estimate_eve_info(&c),
            Err(Error::InvalidConfig(_))
        ));
    }
}
