//! CSV and run-report emission. All numeric fields are printed with 17
//! significant digits (`{:.16e}`), which round-trips f64 bitwise, so a
//! re-run with the same seed produces byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use crate::bsde2::{BsdeDecomposition, MinimalityReport};
use crate::error::Result;
use crate::value::{key_hash, TreeOracle, ValueEstimate};

pub fn csv_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// node_table.csv: one row per resolved interior node, sorted by step and
/// node key for a deterministic order.
pub fn render_node_table(oracle: &TreeOracle) -> String {
    let mut rows: Vec<(usize, Vec<u64>, f64, Vec<f64>)> = oracle
        .entries()
        .map(|(key, e)| (e.step, key.clone(), e.value, e.u.clone()))
        .collect();
    rows.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let mut s = String::from("prefix_hash,step,value,argmax_u\n");
    for (step, key, value, u) in rows {
        let uu = u.iter().map(|v| csv_f(*v)).collect::<Vec<_>>().join(";");
        let _ = writeln!(s, "{:016x},{step},{},{uu}", key_hash(&key), csv_f(value));
    }
    s
}

/// value_report.csv rows; `label` distinguishes pipelines (value, gexp
/// upper/lower, ...).
pub fn render_value_report(rows: &[(String, &ValueEstimate)]) -> String {
    let mut s = String::from("label,method,value,std_error,samples,argmax_id,revalue\n");
    for (label, est) in rows {
        let revalue = est.revalue.map(csv_f).unwrap_or_default();
        let _ = writeln!(
            s,
            "{label},{},{},{},{},{},{revalue}",
            est.method.tag(),
            csv_f(est.value),
            csv_f(est.std_error),
            est.samples,
            est.argmax_id
        );
    }
    s
}

/// bsde_report.csv: per path and step the decomposition entries, then one
/// row per (step, node) of the minimality reports.
pub fn render_bsde_report(dec: &BsdeDecomposition, minimality: &[MinimalityReport]) -> String {
    let mut s = String::from(
        "record,control_id,path,step,state,y,z,dm,dk,k_cum,min_residual,attaining\n",
    );
    for (p, row) in dec.steps.iter().enumerate() {
        for e in row {
            let _ = writeln!(
                s,
                "step,{},{p},{},{},{},{},{},{},{},,",
                dec.control_id,
                e.step,
                csv_f(e.state),
                csv_f(e.y),
                csv_f(e.z),
                csv_f(e.dm),
                csv_f(e.dk),
                csv_f(e.k_cum)
            );
        }
    }
    for rep in minimality {
        for (state, inf, attain) in &rep.nodes {
            let _ = writeln!(
                s,
                "minimality,{},,{},{},,,,,,{},{attain}",
                dec.control_id,
                rep.step,
                csv_f(*state),
                csv_f(*inf)
            );
        }
    }
    s
}

/// Plain-text run report: config echo plus result lines; identical bytes
/// on identical (config, seed).
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_echo: String,
    pub lines: Vec<String>,
    pub version: String,
}

impl RunReport {
    pub fn new(config_echo: String) -> Self {
        RunReport {
            config_echo,
            lines: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn push(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# run report (pathcontrol {})", self.version);
        s.push_str("## config\n");
        s.push_str(&self.config_echo);
        s.push_str("## results\n");
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

pub fn write_text(dir: &FsPath, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), content)?;
    Ok(())
}
