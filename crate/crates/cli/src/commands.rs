use std::collections::BTreeMap;
use std::path::Path;

use quadsep_core::basis::Index;
use quadsep_core::extremal::{
    closed_form_rate_derivative, closed_form_rate_single_index, separation_rate_with_basis, two_regime_rate,
    Condition, ExtremalSolution, Regime,
};
use quadsep_core::lowerbound::two_point_null;
use quadsep_core::sim::{
    ks_standard_normal, least_favorable_alternative, monte_carlo, Hypothesis, MonteCarloRun,
};
use quadsep_core::spectra::{delta_of, least_c_by_sign, sigma_bar_of, Family};
use quadsep_core::utest::{PreparedTest, WeightSource};
use serde_json::{json, Value};

use crate::config::{CoefficientSource, RunConfig};
use crate::data::read_sample;
use crate::error::CliError;

fn flags(conditions: &[Condition]) -> BTreeMap<String, Option<bool>> {
    conditions.iter().map(|c| (c.name.clone(), c.holds)).collect()
}

fn numeric_part(cfg: &RunConfig, n: usize) -> (Option<ExtremalSolution>, Option<String>) {
    match separation_rate_with_basis(&cfg.problem, n, cfg.gamma, Some(&cfg.basis_spec())) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn numeric_json(s: &ExtremalSolution) -> Value {
    json!({
        "rate": s.rate,
        "t": s.t,
        "active_set_size": s.entries.len(),
        "conditions": s.conditions,
    })
}

/// Rate exponent, `r*`, the sharp constant and the threshold, closed-form
/// where available and numeric otherwise.
pub fn cmd_rate(cfg: &RunConfig) -> Result<Value, CliError> {
    let n = cfg.require_n()?;
    let spec = &cfg.problem;
    let mut out = json!({ "family": family_name(spec.family()), "n": n, "gamma": cfg.gamma });
    let body = match spec.family() {
        Family::SobolevDerivative { sigma, alpha } => {
            let cf = closed_form_rate_derivative(sigma, alpha, n, cfg.gamma)?;
            let (num, err) = numeric_part(cfg, n);
            json!({
                "rate_exponent": cf.rate_exponent,
                "r_star": num.as_ref().map_or(cf.rate_asymptotic, |s| s.rate),
                "C_star": cf.c_star,
                "C_star_exact_sums": cf.c_star_exact_sums,
                "T": num.as_ref().map_or(cf.t_asymptotic, |s| s.t),
                "condition_flags": num.as_ref().map(|s| flags(&s.conditions)),
                "closed_form": cf,
                "numeric": num.as_ref().map(numeric_json),
                "numeric_error": err,
                "ratio_numeric_to_closed_form": num.as_ref().map(|s| s.rate / cf.rate_asymptotic),
            })
        }
        Family::SingleIndex { sigma, beta } => {
            let cf = closed_form_rate_single_index(beta, *sigma, n, cfg.gamma, cfg.quadrature_tol)?;
            let (num, err) = numeric_part(cfg, n);
            json!({
                "rate_exponent": cf.rate_exponent,
                "r_star": num.as_ref().map_or(cf.rate_asymptotic, |s| s.rate),
                "C_star": cf.c_star,
                "C_star_exact_sums": cf.c_star_exact_sums,
                "T": num.as_ref().map_or(cf.t_asymptotic, |s| s.t),
                "condition_flags": num.as_ref().map(|s| flags(&s.conditions)),
                "closed_form": cf,
                "numeric": num.as_ref().map(numeric_json),
                "numeric_error": err,
                "ratio_numeric_to_closed_form": num.as_ref().map(|s| s.rate / cf.rate_asymptotic),
            })
        }
        Family::TwoSampleNorm { sigma, alpha } => {
            let delta = delta_of(sigma, alpha);
            if delta >= 1.0 {
                return Err(CliError::Config(format!("delta = sum alpha/sigma = {delta} must be below 1")));
            }
            let sb = sigma_bar_of(sigma);
            let d = sigma.len() as f64;
            let smooth = 2.0 * (1.0 - delta) * sb / (4.0 * sb + d);
            let tr = two_regime_rate(spec, n)?;
            let asym = if smooth >= 0.25 { Regime::Regular } else { Regime::Irregular };
            json!({
                "rate_exponent": smooth.min(0.25),
                "r_star": tr.rate,
                "C_star": null,
                "T": tr.t_n,
                "T0": tr.t0,
                "regime": tr.regime,
                "regime_asymptotic": asym,
                "condition_flags": null,
            })
        }
        Family::Explicit { .. } => {
            if spec.is_nonnegative() {
                let s = separation_rate_with_basis(spec, n, cfg.gamma, Some(&cfg.basis_spec()))?;
                json!({
                    "rate_exponent": null,
                    "r_star": s.rate,
                    "C_star": null,
                    "T": s.t,
                    "condition_flags": flags(&s.conditions),
                    "numeric": numeric_json(&s),
                })
            } else {
                let tr = two_regime_rate(spec, n)?;
                json!({
                    "rate_exponent": null,
                    "r_star": tr.rate,
                    "C_star": null,
                    "T": tr.t_n,
                    "T0": tr.t0,
                    "regime": tr.regime,
                    "condition_flags": null,
                })
            }
        }
    };
    merge(&mut out, body);
    Ok(out)
}

fn family_name(f: &Family) -> &'static str {
    match f {
        Family::SobolevDerivative { .. } => "sobolev_derivative",
        Family::SingleIndex { .. } => "single_index",
        Family::TwoSampleNorm { .. } => "two_sample_norm",
        Family::Explicit { .. } => "explicit",
    }
}

fn merge(a: &mut Value, b: Value) {
    if let (Value::Object(a), Value::Object(b)) = (a, b) {
        a.extend(b);
    }
}

/// CSV of `N(T)` with columns `l1..ld[, sample], c, q, w_star, v_star`.
pub fn cmd_weights(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    let n = cfg.require_n()?;
    let sol = match &cfg.weights {
        WeightSource::Optimal => separation_rate_with_basis(&cfg.problem, n, cfg.gamma, Some(&cfg.basis_spec()))?,
        WeightSource::Threshold { t } => ExtremalSolution::at_threshold(&cfg.problem, *t, n, cfg.gamma)?,
        WeightSource::Explicit { .. } => {
            return Err(CliError::Config("weights are solved, not read; use source optimal or threshold".into()))
        }
    };
    let d = cfg.problem.dim();
    let two_sample = matches!(cfg.problem.family(), Family::TwoSampleNorm { .. });
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=d).map(|j| format!("l{j}")).collect();
    if two_sample {
        header.push("sample".into());
    }
    header.extend(["c", "q", "w_star", "v_star"].map(String::from));
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for e in &sol.entries {
        let mut row: Vec<String> = e.index.lattice.entries().iter().map(|v| v.to_string()).collect();
        if two_sample {
            row.push(e.index.sample.map_or(String::new(), |s| s.to_string()));
        }
        row.extend([e.c, e.q, e.w_star, e.v_star].map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

/// Runs the configured test on a data file.
pub fn cmd_test(cfg: &RunConfig, data: &Path) -> Result<Value, CliError> {
    let file = std::fs::File::open(data).map_err(|e| CliError::Data(format!("cannot open {}: {e}", data.display())))?;
    let sample = read_sample(std::io::BufReader::new(file), cfg.problem.design_dim())?;
    if let Some(n) = cfg.n {
        if n != sample.len() {
            return Err(CliError::Config(format!("config has n = {n} but the data file has {} rows", sample.len())));
        }
    }
    let test = PreparedTest::new(&cfg.test_config(sample.len()))?;
    let report = test.run(&sample)?;
    let mut resolved = cfg.clone();
    resolved.n = Some(sample.len());
    Ok(json!({ "config": resolved, "data": data, "report": report }))
}

fn resolve(
    src: &CoefficientSource,
    test: &PreparedTest,
    cfg: &RunConfig,
) -> Result<Vec<(Index, f64)>, CliError> {
    Ok(match src {
        CoefficientSource::Zero => Vec::new(),
        CoefficientSource::Explicit { theta } => theta.clone(),
        CoefficientSource::LeastFavorable { scale } => match test {
            PreparedTest::Sharp(p) => {
                let sol = p.solution.as_ref().ok_or_else(|| {
                    CliError::Config("least_favorable needs weights solved from the extremal problem".into())
                })?;
                least_favorable_alternative(sol)?.theta.into_iter().map(|(i, v)| (i, scale * v)).collect()
            }
            PreparedTest::Indefinite(_) => {
                return Err(CliError::Config("least_favorable applies to the sharp test only".into()))
            }
        },
        CoefficientSource::TwoPointNull => two_point_null(&cfg.problem)?,
        CoefficientSource::Spike { rho2 } => {
            let (entry, default_rho2) = match test {
                PreparedTest::Sharp(p) => {
                    let sol = p.solution.as_ref().ok_or_else(|| {
                        CliError::Config("spike needs rho2 when the weights are explicit".into())
                    })?;
                    let best = sol
                        .entries
                        .iter()
                        .max_by(|a, b| (a.q / a.c).total_cmp(&(b.q / b.c)).then(b.index.cmp(&a.index)))
                        .expect("nonempty active set");
                    ((best.index.clone(), best.q), sol.rate * sol.rate)
                }
                PreparedTest::Indefinite(p) => {
                    let (plus, _) = least_c_by_sign(&cfg.problem)?;
                    ((plus.index, plus.q), p.rho2_guaranteed)
                }
            };
            let r2 = rho2.unwrap_or(default_rho2);
            if !(r2 >= 0.0 && r2.is_finite()) {
                return Err(CliError::Config(format!("rho2 = {r2} must be nonnegative")));
            }
            vec![(entry.0, (r2 / entry.1).sqrt())]
        }
    })
}

fn functional(cfg: &RunConfig, theta: &[(Index, f64)]) -> Result<(f64, f64), CliError> {
    let mut q_val = 0.0;
    let mut c_val = 0.0;
    for (i, v) in theta {
        let (c, q) = cfg.problem.coeff(i)?;
        q_val += q * v * v;
        c_val += c * v * v;
    }
    Ok((q_val, c_val))
}

/// Simulation campaign: summary JSON and per-replication CSV.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(Value, Vec<u8>), CliError> {
    let n = cfg.require_n()?;
    let test = PreparedTest::new(&cfg.test_config(n))?;
    let f_null = resolve(&cfg.null, &test, cfg)?;
    let alt = resolve(&cfg.alternative, &test, cfg)?;
    let MonteCarloRun { estimates, records } = monte_carlo(&test, &f_null, &alt, cfg.noise, cfg.reps, cfg.seed)?;
    let null_stats: Vec<f64> =
        records.iter().filter(|r| r.hypothesis == Hypothesis::Null).map(|r| r.statistic).collect();
    let (q0, c0) = functional(cfg, &f_null)?;
    let (q1, c1) = functional(cfg, &alt)?;
    let test_info = match &test {
        PreparedTest::Sharp(p) => json!({
            "kind": "sharp",
            "m": p.m,
            "active_set_size": p.weights.len(),
            "t": p.solution.as_ref().map(|s| s.t),
            "r_star": p.solution.as_ref().map(|s| s.rate),
            "t_pilot": p.t_pilot,
            "pilot_size": p.pilot_size,
        }),
        PreparedTest::Indefinite(p) => json!({
            "kind": "indefinite",
            "t": p.t,
            "active_set_size": p.weights.len(),
            "d1": p.constants.d1,
            "d2": p.constants.d2,
            "d3": p.constants.d3,
            "d4": p.constants.d4,
            "rho2_guaranteed": p.rho2_guaranteed,
            "rho2_type2": p.rho2_type2,
        }),
    };
    let summary = json!({
        "config": cfg,
        "threshold": test.threshold(),
        "test": test_info,
        "null": { "q_value": q0, "ellipsoid": c0, "coefficients": f_null.len() },
        "alternative": { "q_value": q1, "ellipsoid": c1, "coefficients": alt.len() },
        "estimates": estimates,
        "null_ks": ks_standard_normal(&null_stats),
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["rep", "statistic", "threshold", "reject", "hypothesis"]).map_err(csv_err)?;
    for r in &records {
        w.write_record([
            r.rep.to_string(),
            r.statistic.to_string(),
            r.threshold.to_string(),
            r.reject.to_string(),
            r.hypothesis.as_str().to_string(),
        ])
        .map_err(csv_err)?;
    }
    let csv = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok((summary, csv))
}
