//! Machine-readable run reports.
//!
//! Every subcommand writes one `report.json` per run (also on numerical
//! failure). The schema is stable: absent numeric outputs serialize as
//! `null` and carry a reason string under `null_reasons`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

#[derive(Serialize)]
pub struct RunReport {
    pub tool_version: &'static str,
    pub scenario: String,
    pub subcommand: String,
    pub status: String,
    pub wall_time_s: f64,
    pub q: Option<f64>,
    pub certified: Option<bool>,
    pub existence_condition: Option<bool>,
    pub iterations: Option<usize>,
    pub ratios: Option<Vec<f64>>,
    pub endpoint_error: Option<f64>,
    pub m2: Option<f64>,
    pub j: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub penalty_defect: Option<f64>,
    pub method: Option<String>,
    pub residual_tail: Option<f64>,
    pub residual_order: Option<f64>,
    pub ml_value: Option<f64>,
    pub ml_error_bound: Option<f64>,
    pub null_reasons: BTreeMap<String, String>,
}

impl RunReport {
    pub fn new(scenario: &str, subcommand: &str) -> Self {
        RunReport {
            tool_version: env!("CARGO_PKG_VERSION"),
            scenario: scenario.to_string(),
            subcommand: subcommand.to_string(),
            status: "ok".to_string(),
            wall_time_s: 0.0,
            q: None,
            certified: None,
            existence_condition: None,
            iterations: None,
            ratios: None,
            endpoint_error: None,
            m2: None,
            j: None,
            kkt_residual: None,
            penalty_defect: None,
            method: None,
            residual_tail: None,
            residual_order: None,
            ml_value: None,
            ml_error_bound: None,
            null_reasons: BTreeMap::new(),
        }
    }

    /// Record why a field stayed null.
    pub fn reason(&mut self, field: &str, why: &str) {
        self.null_reasons.insert(field.to_string(), why.to_string());
    }

    /// Replace non-finite numerics by null with a reason, so the schema
    /// invariant (finite or null) holds no matter what the run produced.
    fn sanitize(&mut self) {
        macro_rules! check {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    if !v.is_finite() {
                        self.$field = None;
                        self.reason(stringify!($field), &format!("non-finite value {v}"));
                    }
                }
            };
        }
        check!(q);
        check!(endpoint_error);
        check!(m2);
        check!(j);
        check!(kkt_residual);
        check!(penalty_defect);
        check!(residual_tail);
        check!(residual_order);
        check!(ml_value);
        check!(ml_error_bound);
        if let Some(ratios) = &mut self.ratios {
            for r in ratios.iter_mut() {
                if !r.is_finite() {
                    *r = f64::MAX;
                }
            }
        }
    }

    pub fn render_json(&mut self) -> String {
        self.sanitize();
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn write(&mut self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.render_json())
    }
}

/// Gnuplot companion script for the CSV outputs of a run directory.
pub fn plot_script(has_control: bool) -> String {
    let mut s = String::from(
        "# gnuplot script for the run outputs in this directory\n\
         set datafile separator ','\n\
         set key autotitle columnhead outside\n\
         set xlabel 't'\n\
         set ylabel 'mode coefficient'\n\
         plot for [i=2:*] 'trajectory.csv' using 1:i with lines\n\
         pause -1 'trajectory plotted; press enter'\n",
    );
    if has_control {
        s.push_str(
            "set ylabel 'control value'\n\
             plot for [i=2:*] 'control.csv' using 1:i with steps\n\
             pause -1 'control plotted; press enter'\n",
        );
    }
    s
}
