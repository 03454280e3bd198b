//! Pipelines behind the command-line subcommands. Each takes a parsed
//! config, produces a RunReport and writes CSVs into the output directory
//! (if one is configured). Everything is deterministic in (config, seed).

use std::path::PathBuf;

use crate::bsde2::{decompose_tree, drift_identification_check, minimality_residual};
use crate::config::{ExperimentConfig, MethodChoice};
use crate::error::{Error, Result};
use crate::gexp::{g_pair, g_value, g_value_mc, GSpec};
use crate::report::{
    render_bsde_report, render_node_table, render_value_report, write_text, RunReport,
};
use crate::rng::NoiseModel;
use crate::sde::simulate_ensemble;
use crate::value::{
    dpp_residual_mc, dpp_residual_tree, dpp_residual_tree_at_stop, value_mc, value_tree,
    TreeModel, ValueEstimate,
};

fn out_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.out.as_ref().map(PathBuf::from)
}

fn tree_model(cfg: &ExperimentConfig) -> Result<TreeModel> {
    Ok(TreeModel::new(cfg.coefficients()?, cfg.payoff()?, cfg.grid())
        .with_node_cap(cfg.node_cap))
}

/// `simulate`: one ensemble under the fixed control, CSV dump.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<RunReport> {
    let coeff = cfg.coefficients()?;
    let control = cfg.fixed_control()?;
    let history = cfg.history()?;
    let ens = simulate_ensemble(
        &coeff,
        &control,
        cfg.k0,
        &history,
        cfg.samples,
        cfg.seed,
        NoiseModel::Gaussian,
        false,
    )?;
    let mut rep = RunReport::new(cfg.to_flat_toml());
    rep.push(format!("simulate members={} control={}", ens.len(), control.id()));
    if let Some(dir) = out_dir(cfg) {
        write_text(&dir, "ensemble.csv", &ens.to_csv())?;
        rep.push(format!("wrote {}", dir.join("ensemble.csv").display()));
    }
    Ok(rep)
}

/// `value`: closed-loop tree value (ground truth) and/or family MC value.
pub fn run_value(cfg: &ExperimentConfig) -> Result<RunReport> {
    let history = cfg.history()?;
    let mut rep = RunReport::new(cfg.to_flat_toml());
    let mut rows: Vec<(String, ValueEstimate)> = Vec::new();
    let mut node_table = None;
    if matches!(cfg.method, MethodChoice::Tree | MethodChoice::Both) {
        let model = tree_model(cfg)?;
        let (est, oracle) = value_tree(&model, &history)?;
        rep.push(format!("value tree = {:.16e} (argmax {})", est.value, est.argmax_id));
        node_table = Some(render_node_table(&oracle));
        rows.push(("value".into(), est));
    }
    if matches!(cfg.method, MethodChoice::Mc | MethodChoice::Both) {
        let coeff = cfg.coefficients()?;
        let payoff = cfg.payoff()?;
        let family = cfg.control_family()?;
        let est = value_mc(
            &coeff,
            &payoff,
            &family,
            &history,
            cfg.samples,
            cfg.seed,
            NoiseModel::Gaussian,
        )?;
        rep.push(format!(
            "value mc = {:.16e} +- {:.16e} (argmax {}, revalue {:.16e})",
            est.value,
            est.std_error,
            est.argmax_id,
            est.revalue.unwrap_or(f64::NAN)
        ));
        rows.push(("value".into(), est));
    }
    if let Some(dir) = out_dir(cfg) {
        let borrowed: Vec<(String, &ValueEstimate)> =
            rows.iter().map(|(l, e)| (l.clone(), e)).collect();
        write_text(&dir, "value_report.csv", &render_value_report(&borrowed))?;
        if let Some(t) = node_table {
            write_text(&dir, "node_table.csv", &t)?;
        }
        rep.push(format!("wrote {}", dir.join("value_report.csv").display()));
    }
    Ok(rep)
}

/// `dpp`: residual of the dynamic programming composition at the
/// configured split (or barrier stopping rule).
pub fn run_dpp(cfg: &ExperimentConfig) -> Result<RunReport> {
    let history = cfg.history()?;
    let mut rep = RunReport::new(cfg.to_flat_toml());
    let mut csv = String::from(
        "method,boundary,residual,worst_node,nodes_checked,combined_std_error\n",
    );
    if matches!(cfg.method, MethodChoice::Tree | MethodChoice::Both) {
        let model = tree_model(cfg)?;
        let (boundary, r) = match (cfg.split, cfg.stopping_rule()) {
            (Some(j), _) => (format!("split={j}"), dpp_residual_tree(&model, &history, j)?),
            (None, Some(stop)) => {
                ("stop".into(), dpp_residual_tree_at_stop(&model, &history, &stop)?)
            }
            (None, None) => {
                return Err(Error::Config("dpp needs split or stop_barrier".into()));
            }
        };
        if r.residual > cfg.tol_tree {
            return Err(Error::Config(format!(
                "tree DPP residual {} exceeds tolerance {}",
                r.residual, cfg.tol_tree
            )));
        }
        rep.push(format!("dpp tree {boundary} residual = {:.16e}", r.residual));
        csv.push_str(&format!(
            "tree,{boundary},{:.16e},{:.16e},{},{:.16e}\n",
            r.residual, r.worst_node, r.nodes_checked, r.combined_std_error
        ));
    }
    if matches!(cfg.method, MethodChoice::Mc | MethodChoice::Both) {
        let j = cfg
            .split
            .ok_or_else(|| Error::Config("mc dpp needs a fixed split".into()))?;
        let coeff = cfg.coefficients()?;
        let payoff = cfg.payoff()?;
        let family = cfg.control_family()?;
        let r = dpp_residual_mc(
            &coeff,
            &payoff,
            &family,
            &history,
            j,
            cfg.samples,
            cfg.inner_samples,
            cfg.seed,
            NoiseModel::Gaussian,
        )?;
        if r.residual > cfg.se_factor * r.combined_std_error {
            return Err(Error::Config(format!(
                "mc DPP residual {} exceeds {} standard errors ({})",
                r.residual, cfg.se_factor, r.combined_std_error
            )));
        }
        rep.push(format!(
            "dpp mc split={j} residual = {:.16e} (combined se {:.16e})",
            r.residual, r.combined_std_error
        ));
        csv.push_str(&format!(
            "mc,split={j},{:.16e},{:.16e},{},{:.16e}\n",
            r.residual, r.worst_node, r.nodes_checked, r.combined_std_error
        ));
    }
    if let Some(dir) = out_dir(cfg) {
        write_text(&dir, "dpp_report.csv", &csv)?;
        rep.push(format!("wrote {}", dir.join("dpp_report.csv").display()));
    }
    Ok(rep)
}

/// `gexp`: upper/lower G-expectation for the configured band (taken from
/// the model's control band) and payoff.
pub fn run_gexp(cfg: &ExperimentConfig) -> Result<RunReport> {
    let low = cfg.model_params.get("u_low").copied().unwrap_or(0.5);
    let high = cfg.model_params.get("u_high").copied().unwrap_or(1.0);
    let spec = GSpec::new(low, high, cfg.grid(), cfg.payoff()?)?;
    let history = cfg.history()?;
    let mut rep = RunReport::new(cfg.to_flat_toml());
    let mut rows: Vec<(String, ValueEstimate)> = Vec::new();
    if matches!(cfg.method, MethodChoice::Tree | MethodChoice::Both) {
        let (upper, lower) = g_pair(&spec, &history)?;
        rep.push(format!("gexp tree upper = {upper:.16e} lower = {lower:.16e}"));
        rows.push(("gexp_upper".into(), g_value(&spec, &history)?));
    }
    if matches!(cfg.method, MethodChoice::Mc | MethodChoice::Both) {
        let est = g_value_mc(&spec, &history, 3, cfg.samples, cfg.seed)?;
        rep.push(format!("gexp mc upper = {:.16e} +- {:.16e}", est.value, est.std_error));
        rows.push(("gexp_upper".into(), est));
    }
    if let Some(dir) = out_dir(cfg) {
        let borrowed: Vec<(String, &ValueEstimate)> =
            rows.iter().map(|(l, e)| (l.clone(), e)).collect();
        write_text(&dir, "value_report.csv", &render_value_report(&borrowed))?;
        rep.push(format!("wrote {}", dir.join("value_report.csv").display()));
    }
    Ok(rep)
}

/// `bsde`: exact tree decomposition under the fixed control, minimality
/// residuals per step, drift identification sanity check.
pub fn run_bsde(cfg: &ExperimentConfig) -> Result<RunReport> {
    let coeff = cfg.coefficients()?;
    if !coeff.diffusion_invertible {
        return Err(Error::Config(
            "bsde requires an invertible diffusion (control band must exclude 0)".into(),
        ));
    }
    let model = tree_model(cfg)?;
    let history = cfg.history()?;
    let control = cfg.fixed_control()?;
    let family = cfg.control_family()?;
    let dec = decompose_tree(&model, &history, &control, cfg.tol_k)?;
    let mut reports = Vec::new();
    for k in cfg.k0..model.grid.steps() {
        reports.push(minimality_residual(&model, &history, &control, &family, k, true)?);
    }
    let worst_min = reports.iter().map(|r| r.worst).fold(0.0f64, f64::max);
    let drift = drift_identification_check(
        &coeff,
        &control,
        &history,
        cfg.samples,
        cfg.seed,
        NoiseModel::Gaussian,
    )?;
    let mut rep = RunReport::new(cfg.to_flat_toml());
    rep.push(format!(
        "bsde control={} y0 = {:.16e} min_dk = {:.16e} identity_residual = {:.16e}",
        dec.control_id, dec.y0, dec.min_dk, dec.max_identity_residual
    ));
    rep.push(format!("bsde minimality worst = {worst_min:.16e}"));
    rep.push(format!(
        "bsde drift-identification mean_stat = {:.16e} qv_stat = {:.16e}",
        drift.worst_mean_stat, drift.worst_qv_stat
    ));
    if let Some(bound) = model.payoff.bound {
        rep.push(format!("payoff bound declared: {bound:.16e} (class-(D) check: bounded)"));
    } else {
        rep.push("payoff unbounded: class-(D) uniform integrability not verified");
    }
    if let Some(dir) = out_dir(cfg) {
        write_text(&dir, "bsde_report.csv", &render_bsde_report(&dec, &reports))?;
        rep.push(format!("wrote {}", dir.join("bsde_report.csv").display()));
    }
    Ok(rep)
}

/// `report`: validate and echo the config with derived facts; no compute.
pub fn run_report(cfg: &ExperimentConfig) -> Result<RunReport> {
    let coeff = cfg.coefficients()?;
    let family = cfg.control_family()?;
    let mut rep = RunReport::new(cfg.to_flat_toml());
    rep.push(format!(
        "grid n={} horizon={:.16e} dt={:.16e}",
        cfg.grid_n,
        cfg.horizon,
        cfg.grid().uniform_dt()
    ));
    rep.push(format!(
        "control set: {} points; family: {} controls",
        coeff.control_set.enumerate().len(),
        family.len()
    ));
    rep.push(format!("payoff: {}", cfg.payoff()?.name()));
    Ok(rep)
}

/// `sweep`: re-run the value pipeline once per axis value, long-format CSV.
/// Every run reuses the base seed, so rows differ only through the axis.
pub fn run_sweep(cfg: &ExperimentConfig, axis: &str, values: &[String]) -> Result<RunReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    let base = cfg.to_flat_toml();
    let mut rep = RunReport::new(base.clone());
    let mut csv = String::from("axis,axis_value,label,method,value,std_error,argmax_id\n");
    for v in values {
        let mut text: String = base
            .lines()
            .filter(|l| !l.starts_with(&format!("{axis} = ")))
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(&format!("{axis} = {v}\n"));
        let mut sub = ExperimentConfig::from_str(&text)?;
        sub.out = None; // per-point CSVs are aggregated here instead
        let point = run_value(&sub)?;
        for line in &point.lines {
            if let Some(rest) = line.strip_prefix("value ") {
                // "tree = <v> ..." / "mc = <v> +- <se> ..."
                let mut it = rest.split_whitespace();
                let method = it.next().unwrap_or("?");
                let val = it.nth(1).unwrap_or("nan");
                let se = if method == "mc" { it.nth(1).unwrap_or("0") } else { "0.0" };
                csv.push_str(&format!("{axis},{v},value,{method},{val},{se},\n"));
            }
        }
        rep.push(format!("sweep {axis}={v} done"));
    }
    if let Some(dir) = out_dir(cfg) {
        write_text(&dir, "sweep.csv", &csv)?;
        rep.push(format!("wrote {}", dir.join("sweep.csv").display()));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_str(text).unwrap()
    }

    #[test]
    fn value_tree_pipeline_hits_oracle() {
        let rep = run_value(&cfg("method = \"tree\"\n")).unwrap();
        assert!(rep.lines[0].contains("1.0000000000000000e0"), "{:?}", rep.lines);
    }

    #[test]
    fn dpp_pipeline_enforces_tolerance() {
        let rep = run_dpp(&cfg("method = \"tree\"\nsplit = 2\n")).unwrap();
        assert!(rep.lines[0].contains("residual"));
        assert!(run_dpp(&cfg("method = \"tree\"\n")).is_err());
    }

    #[test]
    fn gexp_pipeline_upper_and_lower() {
        let rep = run_gexp(&cfg("method = \"tree\"\n")).unwrap();
        assert!(rep.lines[0].contains("upper = 1.0000000000000000e0"), "{:?}", rep.lines);
        assert!(rep.lines[0].contains("lower = 2.5000000000000000e-1"), "{:?}", rep.lines);
    }

    #[test]
    fn bsde_pipeline_reports_hand_value() {
        let rep = run_bsde(&cfg("method = \"tree\"\nsamples = 500\n")).unwrap();
        assert!(rep.lines[0].contains("y0 = 1.0000000000000000e0"), "{:?}", rep.lines);
        assert!(rep.lines[1].contains("minimality worst = 0.0000000000000000e0"));
    }

    #[test]
    fn simulate_and_outputs_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("samples = 50\nout = {:?}\n", dir.path().to_str().unwrap());
        let rep = run_simulate(&cfg(&text)).unwrap();
        assert!(rep.lines.iter().any(|l| l.contains("ensemble.csv")));
        let csv = std::fs::read_to_string(dir.path().join("ensemble.csv")).unwrap();
        assert!(csv.starts_with("path_id,step,t,x_0\n"));
    }

    #[test]
    fn sweep_constant_over_n() {
        let rep = run_sweep(
            &cfg("method = \"tree\"\n"),
            "grid_n",
            &["2".into(), "4".into(), "8".into()],
        )
        .unwrap();
        assert_eq!(rep.lines.len(), 3);
    }

    #[test]
    fn report_pipeline_derives_facts() {
        let rep = run_report(&cfg("")).unwrap();
        assert!(rep.lines.iter().any(|l| l.contains("2 points")));
    }
}
