//! Deterministic text output: floats at 12 significant digits, CSV with a
//! `#`-prefixed header that embeds the resolved configuration.

use dps_abs::optimizer::{AliceOptimum, AttackOptimum};
use dps_abs::Error;

/// A float at 12 significant digits, byte-stable across runs.
pub fn sig12(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    format!("{x:.11e}")
}

fn header(echo: &[String]) -> String {
    let mut out = String::new();
    for line in echo {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// The sweep table: one row per length, the columns that reproduce the
/// optimal-parameter and information/critical-error curves.
pub fn sweep_csv(echo: &[String], rows: &[(f64, Result<AttackOptimum, Error>)]) -> String {
    let mut out = header(echo);
    out.push_str(
        "length_km,p_conc_target,I_AE,Q_crit,key_rate,t,f_p,p1,p2,mu_K_B,mu_N_B,K,\
         stationarity_residual,boundary_flags\n",
    );
    for (length, row) in rows {
        let Ok(o) = row else { continue };
        let residual = o.certificate.residual().unwrap_or(f64::NAN);
        let flags = o.certificate.boundary_flags().join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            sig12(*length),
            sig12(o.target_pconc.value()),
            sig12(o.info_eve.value()),
            sig12(o.critical_qber.value()),
            sig12(o.key_rate),
            sig12(o.params.t()),
            sig12(o.params.fp()),
            sig12(o.params.p1()),
            sig12(o.params.p2()),
            sig12(o.resolved.mu_threshold()),
            sig12(o.resolved.mu_top()),
            o.resolved.threshold,
            sig12(residual),
            flags,
        ));
    }
    out
}

/// The optimal-Alice-intensity table.
pub fn optimal_mua_csv(echo: &[String], rows: &[AliceOptimum]) -> String {
    let mut out = header(echo);
    out.push_str("length_km,mu_A_opt,key_rate,Q_crit_at_opt\n");
    for o in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            sig12(o.length_km),
            sig12(o.mu_a),
            sig12(o.key_rate),
            sig12(o.critical_qber.value()),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig12_stable_forms() {
        assert_eq!(sig12(0.348211967122411), "3.48211967122e-1");
        assert_eq!(sig12(0.0), "0.00000000000e0");
        assert_eq!(sig12(f64::NAN), "nan");
        assert_eq!(sig12(f64::INFINITY), "inf");
        assert_eq!(sig12(-1.5e-9), "-1.50000000000e-9");
    }
}
