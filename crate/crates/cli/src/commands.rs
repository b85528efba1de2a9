//! The seven subcommands: sweeps, point optimization, scalar conversions,
//! Monte-Carlo simulation and the validation suite.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use dps_abs::attack::{
    bob_conclusive_under_attack, eve_info_total, resolve_schedule, success_count_dist,
    AttackParams,
};
use dps_abs::math::{binary_entropy, binary_entropy_inv};
use dps_abs::mc::{
    chi_square_gof, estimate_eve_info, run_attack_sim, run_clean_sim, SimConfig,
};
use dps_abs::optimizer::{
    critical_error, key_rate, optimal_alice_intensity, optimize_for_length, run_length_sweep,
};
use dps_abs::protocol::{conclusive_prob, optimal_bob_intensity, pconc_edge_free, ChannelParams};
use dps_abs::stationarity::stationarity_residual;
use dps_abs::{InformationBits, Probability};

use crate::checks::{sample_detectable_attack, sample_interior_attack};
use crate::config::Resolved;
use crate::render;
use crate::{CmdError, CmdResult};

fn write_out(out_dir: &Path, name: &str, contents: &str) -> CmdResult<()> {
    let path = out_dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CmdError::config(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CmdError::config(format!("serialization failed: {e}")))?;
    write_out(out_dir, name, &format!("{text}\n"))
}

/// Full length sweep: one CSV row per feasible length; infeasible lengths
/// are listed on stderr and exit with the infeasibility code.
pub fn run_sweep(cfg: &Resolved, out_dir: &Path) -> CmdResult<()> {
    let rows = run_length_sweep(&cfg.sweep).map_err(|e| CmdError::config(e.to_string()))?;
    let csv = render::sweep_csv(&cfg.echo_lines(), &rows);
    write_out(out_dir, "sweep.csv", &csv)?;

    let failures: Vec<String> = rows
        .iter()
        .filter_map(|(l, r)| r.as_ref().err().map(|e| format!("  {l} km: {e}")))
        .collect();
    if failures.is_empty() {
        println!("sweep complete: {} lengths", rows.len());
        Ok(())
    } else {
        Err(CmdError::infeasible(format!(
            "{} of {} lengths infeasible:\n{}",
            failures.len(),
            rows.len(),
            failures.join("\n")
        )))
    }
}

/// Optimal Alice intensity per length (the key-rate-maximizing scan).
pub fn run_optimal_mua(cfg: &Resolved, out_dir: &Path) -> CmdResult<()> {
    let sweep = &cfg.sweep;
    let results: Vec<_> = sweep
        .lengths_km
        .par_iter()
        .map(|&l| (l, optimal_alice_intensity(sweep, l, sweep.qber)))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (l, r) in results {
        match r {
            Ok(o) => rows.push(o),
            Err(e) => failures.push(format!("  {l} km: {e}")),
        }
    }
    let csv = render::optimal_mua_csv(&cfg.echo_lines(), &rows);
    write_out(out_dir, "optimal_mua.csv", &csv)?;
    if failures.is_empty() {
        println!("optimal-mua complete: {} lengths", rows.len());
        Ok(())
    } else {
        Err(CmdError::infeasible(format!(
            "{} lengths without a positive key rate:\n{}",
            failures.len(),
            failures.join("\n")
        )))
    }
}

/// Optimizes the attack at one channel length and dumps the full record.
pub fn run_optimize_point(cfg: &Resolved, out_dir: &Path) -> CmdResult<()> {
    let length = cfg
        .length_km
        .ok_or_else(|| CmdError::config("optimize-point requires length_km"))?;
    let opt = optimize_for_length(&cfg.sweep, length).map_err(|e| match e {
        dps_abs::Error::InfeasibleLength { .. } => CmdError::infeasible(e.to_string()),
        other => CmdError::config(other.to_string()),
    })?;
    println!(
        "l = {length} km: I_AE = {:.6}, Q_crit = {:.6}, R = {:.6e}, t = {:.6}, fp = {:.6}, p1 = {:.6}, p2 = {:.6}",
        opt.info_eve.value(),
        opt.critical_qber.value(),
        opt.key_rate,
        opt.params.t(),
        opt.params.fp(),
        opt.params.p1(),
        opt.params.p2(),
    );
    write_json(out_dir, "optimize_point.json", &opt)
}

#[derive(Serialize)]
struct CriticalErrorReport {
    i_ae: f64,
    q_crit: f64,
}

/// Critical error from an information bound.
pub fn run_critical_error(cfg: &Resolved, out_dir: &Path) -> CmdResult<()> {
    let i_ae = cfg
        .i_ae
        .ok_or_else(|| CmdError::config("critical-error requires i_ae"))?;
    let info = InformationBits::new(i_ae).map_err(|e| CmdError::config(e.to_string()))?;
    let q = critical_error(info).map_err(|e| CmdError::config(e.to_string()))?;
    println!("Q_crit({i_ae}) = {}", q.value());
    write_json(
        out_dir,
        "critical_error.json",
        &CriticalErrorReport {
            i_ae,
            q_crit: q.value(),
        },
    )
}

#[derive(Serialize)]
struct KeyRateReport {
    p_conc: f64,
    i_ae: f64,
    qber: f64,
    key_rate: f64,
}

/// Key rate from a conclusive probability, an information bound and a QBER.
pub fn run_keyrate(cfg: &Resolved, out_dir: &Path) -> CmdResult<()> {
    let i_ae = cfg
        .i_ae
        .ok_or_else(|| CmdError::config("keyrate requires i_ae"))?;
    let p_conc = cfg
        .p_conc
        .ok_or_else(|| CmdError::config("keyrate requires p_conc"))?;
    let info = InformationBits::new(i_ae).map_err(|e| CmdError::config(e.to_string()))?;
    let pc = Probability::new(p_conc).map_err(|e| CmdError::config(e.to_string()))?;
    let r =
        key_rate(pc, info, cfg.sweep.qber).map_err(|e| CmdError::config(e.to_string()))?;
    println!("R = {r}");
    write_json(
        out_dir,
        "keyrate.json",
        &KeyRateReport {
            p_conc,
            i_ae,
            qber: cfg.sweep.qber.value(),
            key_rate: r,
        },
    )
}

#[derive(Serialize)]
struct SimulateReport {
    mode: &'static str,
    trials: u64,
    seed: u64,
    conclusive_rate: f64,
    conclusive_std_err: f64,
    analytic_conclusive: f64,
    within_three_sigma: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    bit_errors: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_histogram: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chi_square_p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eve_info_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eve_info_std_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eve_info_analytic: Option<f64>,
}

/// Monte-Carlo simulation of the configured point: the attacked protocol
/// when attack parameters are given and enabled, otherwise the clean one.
pub fn run_simulate(cfg: &Resolved, out_dir: &Path) -> CmdResult<()> {
    let length = cfg.length_km.unwrap_or(0.0);
    let channel = ChannelParams::new(cfg.sweep.delta_db_per_km, length)
        .map_err(|e| CmdError::config(e.to_string()))?;
    let p = cfg.sweep.protocol;

    let attack_point = if cfg.attack_enabled { cfg.attack } else { None };
    let report = if let Some((t, fp, p1, p2)) = attack_point {
        let attack =
            AttackParams::new(t, fp, p1, p2, &p).map_err(|e| CmdError::config(e.to_string()))?;
        let sim = SimConfig {
            trials: cfg.trials,
            seed: cfg.seed,
            protocol: p,
            channel,
            attack,
            attack_enabled: true,
        };
        let r = resolve_schedule(&attack, &p);
        let analytic = bob_conclusive_under_attack(&r).value();
        let stats = run_attack_sim(&sim).map_err(|e| CmdError::config(e.to_string()))?;
        let rate = stats.conclusive_rate();
        let se = stats.conclusive_std_err();
        let dist = success_count_dist(r.filter_success, p.n());
        let chi = chi_square_gof(&stats.k_histogram, &dist, stats.trials).ok();
        let est = estimate_eve_info(&sim).ok();
        let analytic_info = eve_info_total(&attack, &p).ok().map(|i| i.value());
        SimulateReport {
            mode: "attack",
            trials: cfg.trials,
            seed: cfg.seed,
            conclusive_rate: rate,
            conclusive_std_err: se,
            analytic_conclusive: analytic,
            within_three_sigma: (rate - analytic).abs() <= 3.0 * se.max(1e-12),
            bit_errors: None,
            k_histogram: Some(stats.k_histogram.clone()),
            chi_square_p_value: chi.map(|c| c.p_value),
            eve_info_estimate: est.map(|e| e.value.value()),
            eve_info_std_err: est.map(|e| e.std_err),
            eve_info_analytic: analytic_info,
        }
    } else {
        let mu_b = dps_abs::protocol::expected_bob_intensity(&p, &channel);
        let analytic = conclusive_prob(mu_b, p.n())
            .map_err(|e| CmdError::config(e.to_string()))?
            .value();
        let stats = run_clean_sim(mu_b, &p, cfg.trials, cfg.seed);
        let rate = stats.conclusive_rate();
        let se = stats.std_err(rate);
        SimulateReport {
            mode: "clean",
            trials: cfg.trials,
            seed: cfg.seed,
            conclusive_rate: rate,
            conclusive_std_err: se,
            analytic_conclusive: analytic,
            within_three_sigma: (rate - analytic).abs() <= 3.0 * se.max(1e-12),
            bit_errors: Some(stats.bit_errors),
            k_histogram: None,
            chi_square_p_value: None,
            eve_info_estimate: None,
            eve_info_std_err: None,
            eve_info_analytic: None,
        }
    };

    println!(
        "{} simulation: conclusive {} vs analytic {} ({})",
        report.mode,
        report.conclusive_rate,
        report.analytic_conclusive,
        if report.within_three_sigma {
            "within 3 sigma"
        } else {
            "OUTSIDE 3 sigma"
        }
    );
    write_json(out_dir, "simulate.json", &report)
}

/// One entry of the validation report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub check_name: String,
    pub analytic: f64,
    pub empirical: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    fn three_sigma(name: impl Into<String>, analytic: f64, empirical: f64, se: f64) -> Self {
        let se = se.max(1e-15);
        CheckResult {
            check_name: name.into(),
            analytic,
            empirical,
            std_err: Some(se),
            tolerance: None,
            pass: (empirical - analytic).abs() <= 3.0 * se,
            note: None,
        }
    }

    fn bounded(name: impl Into<String>, empirical: f64, tolerance: f64) -> Self {
        CheckResult {
            check_name: name.into(),
            analytic: 0.0,
            empirical,
            std_err: None,
            tolerance: Some(tolerance),
            pass: empirical <= tolerance,
            note: None,
        }
    }

    fn inconclusive(name: impl Into<String>, note: &str) -> Self {
        CheckResult {
            check_name: name.into(),
            analytic: f64::NAN,
            empirical: f64::NAN,
            std_err: None,
            tolerance: None,
            pass: false,
            note: Some(note.to_string()),
        }
    }
}

/// Minimum trial count below which Monte-Carlo checks are statistically
/// meaningless and report as inconclusive failures.
const MIN_TRIALS: u64 = 1000;

/// Builds the full validation report: Monte-Carlo oracles for the
/// conclusive-probability formulas, the binomial success law and the
/// weighted information bound, plus the finite-difference certificates for
/// the four closed-form derivatives and two analytic self-checks.
pub fn validation_report(cfg: &Resolved) -> Vec<CheckResult> {
    let p = cfg.sweep.protocol;
    let mut out = Vec::new();
    let underpowered = cfg.trials < MIN_TRIALS;

    // Clean-train conclusive rate across the reference intensities.
    let mu_list = [0.01, 0.05, 0.1, optimal_bob_intensity(p.n()), 0.3];
    for (i, &mu) in mu_list.iter().enumerate() {
        let name = format!("clean_conclusive_rate_{i}_mu_{mu:.6}");
        if underpowered {
            out.push(CheckResult::inconclusive(name, "inconclusive: too few trials"));
            continue;
        }
        let analytic = conclusive_prob(mu, p.n()).expect("valid mu").value();
        let stats = run_clean_sim(mu, &p, cfg.trials, cfg.seed.wrapping_add(i as u64));
        let rate = stats.conclusive_rate();
        out.push(CheckResult::three_sigma(name, analytic, rate, stats.std_err(rate)));
    }

    // Edge-free factor of the conclusive probability.
    {
        let name = "central_click_factor_mu_0.1";
        if underpowered {
            out.push(CheckResult::inconclusive(name, "inconclusive: too few trials"));
        } else {
            let mu = 0.1;
            let analytic = pconc_edge_free(mu, p.n());
            let stats = run_clean_sim(mu, &p, cfg.trials, cfg.seed.wrapping_add(11));
            let rate = stats.central_only_rate();
            out.push(CheckResult::three_sigma(name, analytic, rate, stats.std_err(rate)));
        }
    }

    // Zero intrinsic error rate.
    {
        let name = "zero_intrinsic_qber";
        if underpowered {
            out.push(CheckResult::inconclusive(name, "inconclusive: too few trials"));
        } else {
            let stats = run_clean_sim(0.1, &p, cfg.trials, cfg.seed.wrapping_add(12));
            out.push(CheckResult::bounded(name, stats.bit_errors as f64, 0.0));
        }
    }

    // Attacked-train oracles over seeded random draws.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(100));
    for i in 0..5 {
        let attack = sample_detectable_attack(&mut rng, &p, 1e-3);
        let r = resolve_schedule(&attack, &p);
        if underpowered {
            out.push(CheckResult::inconclusive(
                format!("attacked_conclusive_rate_{i}"),
                "inconclusive: too few trials",
            ));
            out.push(CheckResult::inconclusive(
                format!("success_count_chi_square_{i}"),
                "inconclusive: too few trials",
            ));
            out.push(CheckResult::inconclusive(
                format!("eve_info_estimate_{i}"),
                "inconclusive: too few trials",
            ));
            continue;
        }
        let sim = SimConfig {
            trials: cfg.trials,
            seed: cfg.seed.wrapping_add(200 + i as u64),
            protocol: p,
            channel: ChannelParams::new(cfg.sweep.delta_db_per_km, 0.0).expect("valid channel"),
            attack,
            attack_enabled: true,
        };
        let analytic = bob_conclusive_under_attack(&r).value();
        let stats = run_attack_sim(&sim).expect("valid simulation");
        out.push(CheckResult::three_sigma(
            format!("attacked_conclusive_rate_{i}"),
            analytic,
            stats.conclusive_rate(),
            stats.conclusive_std_err(),
        ));

        let dist = success_count_dist(r.filter_success, p.n());
        let chi = chi_square_gof(&stats.k_histogram, &dist, stats.trials)
            .expect("well-formed histogram");
        out.push(CheckResult {
            check_name: format!("success_count_chi_square_{i}"),
            analytic: f64::NAN,
            empirical: chi.p_value,
            std_err: None,
            tolerance: Some(0.001),
            pass: chi.p_value > 0.001,
            note: Some(format!("chi2 = {:.3}, dof = {}", chi.statistic, chi.dof)),
        });

        let est = estimate_eve_info(&sim).expect("detectable attack");
        let analytic_info = eve_info_total(&attack, &p).expect("detectable attack").value();
        out.push(CheckResult::three_sigma(
            format!("eve_info_estimate_{i}"),
            analytic_info,
            est.value.value(),
            est.std_err,
        ));
    }

    // Closed-form derivatives against central finite differences.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(300));
        let mut worst = [0.0_f64; 4];
        for _ in 0..1000 {
            let a = sample_interior_attack(&mut rng, &p);
            let rep = stationarity_residual(&a, &p).expect("interior sample");
            for (w, d) in worst.iter_mut().zip(&rep.fd_discrepancies) {
                *w = w.max(*d);
            }
        }
        for (name, w) in ["dIK_dmuK", "dZK_dmuK", "dIN_dmuN", "dZN_dmuN"]
            .iter()
            .zip(worst)
        {
            out.push(CheckResult::bounded(
                format!("derivative_fd_{name}"),
                w,
                1e-6,
            ));
        }
    }

    // Entropy-inverse roundtrip.
    {
        let mut worst = 0.0_f64;
        for i in 0..=1000 {
            let h = i as f64 / 1000.0;
            let x = binary_entropy_inv(InformationBits::new(h).expect("finite")).expect("in range");
            worst = worst.max((binary_entropy(x).value() - h).abs());
        }
        out.push(CheckResult::bounded("entropy_inverse_roundtrip", worst, 1e-10));
    }

    // Closed-form conclusive-probability maximizer against golden search.
    {
        let mut worst = 0.0_f64;
        for n in [3u32, 5, 10, 20] {
            let closed = optimal_bob_intensity(n);
            let golden = golden_argmax(
                |mu| conclusive_prob(mu, n).expect("valid mu").value(),
                1e-6,
                1.0,
            );
            worst = worst.max((closed - golden).abs());
        }
        out.push(CheckResult::bounded("conclusive_maximizer_golden", worst, 1e-9));
    }

    out
}

/// Golden-section argmax used as the independent maximizer oracle.
///
/// Pure golden section cannot localize a flat maximum below ~1e-9 because
/// the function differences drown in rounding; a final parabolic vertex
/// through three points recovers the position from the curvature instead.
pub fn golden_argmax(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > 1e-6 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let vertex = |h: f64| {
        let (f1, f2, f3) = (f(x - h), f(x), f(x + h));
        let denom = f1 - 2.0 * f2 + f3;
        if denom < 0.0 {
            x + 0.5 * h * (f1 - f3) / denom
        } else {
            x
        }
    };
    // Richardson extrapolation cancels the O(h^2) vertex bias.
    let x1 = vertex(1e-5);
    let x2 = vertex(2e-5);
    (4.0 * x1 - x2) / 3.0
}

/// Runs the validation suite, writes the JSON report, prints one line per
/// check, and fails unless every check passed.
pub fn run_validate(cfg: &Resolved, out_dir: &Path) -> CmdResult<()> {
    let report = validation_report(cfg);
    for c in &report {
        let status = if c.pass { "PASS" } else { "FAIL" };
        match (&c.std_err, &c.tolerance) {
            (Some(se), _) => println!(
                "{status} {}: analytic {} vs empirical {} (std err {})",
                c.check_name, c.analytic, c.empirical, se
            ),
            (None, Some(tol)) => println!(
                "{status} {}: {} (tolerance {})",
                c.check_name, c.empirical, tol
            ),
            _ => println!(
                "{status} {}: {}",
                c.check_name,
                c.note.as_deref().unwrap_or("")
            ),
        }
    }
    write_json(out_dir, "validate.json", &report)?;
    let failed: Vec<&str> = report
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.check_name.as_str())
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed", report.len());
        Ok(())
    } else {
        Err(CmdError::validation(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            report.len(),
            failed.join(", ")
        )))
    }
}
