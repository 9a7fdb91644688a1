use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{charge_pipeline, fields_pipeline, parity_pipeline, spectrum_pipeline, stage, Outcome};
use super::{ChargeReport, FieldsReport, ParityReport, SpectrumReport};
use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::Artifacts;

/// Tolerance widening under `--quick`. Durations shrink 100x, so estimator
/// standard deviations grow by sqrt(100) = 10; additive and relative
/// tolerances scale by that factor, and factor-of-k tolerances become
/// factor-of-k^10 (the same widening applied to the logarithm).
pub const QUICK_WIDENING: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub planted: Option<f64>,
    pub recovered: Option<f64>,
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceReport {
    pub rows: Vec<SummaryRow>,
    pub failed_stages: Vec<String>,
}

impl ReproduceReport {
    pub fn all_pass(&self) -> bool {
        self.failed_stages.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from("quantity,planted,recovered,tolerance,pass\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.quantity, opt(r.planted), opt(r.recovered), r.tolerance, r.pass));
        }
        s
    }
}

struct Rows {
    rows: Vec<SummaryRow>,
    widen: f64,
}

impl Rows {
    fn push(&mut self, quantity: &str, planted: Option<f64>, recovered: Option<f64>, tolerance: String, pass: bool) {
        self.rows.push(SummaryRow { quantity: quantity.into(), planted, recovered, tolerance, pass });
    }

    fn relative(&mut self, quantity: &str, planted: f64, recovered: Option<f64>, tol: f64) {
        let tol = tol * self.widen;
        let pass = recovered.is_some_and(|r| (r / planted - 1.0).abs() <= tol);
        self.push(quantity, Some(planted), recovered, format!("rel {tol}"), pass);
    }

    fn absolute(&mut self, quantity: &str, planted: f64, recovered: Option<f64>, tol: f64) {
        let tol = tol * self.widen;
        let pass = recovered.is_some_and(|r| (r - planted).abs() <= tol);
        self.push(quantity, Some(planted), recovered, format!("abs {tol}"), pass);
    }

    fn factor(&mut self, quantity: &str, planted: f64, recovered: Option<f64>, k: f64) {
        let k = k.powf(self.widen);
        let pass = recovered.is_some_and(|r| r / planted <= k && planted / r <= k);
        self.push(quantity, Some(planted), recovered, format!("factor {k}"), pass);
    }

    fn below(&mut self, quantity: &str, recovered: Option<f64>, limit: f64) {
        let limit = limit * self.widen;
        let pass = recovered.is_some_and(|r| r < limit);
        self.push(quantity, None, recovered, format!("< {limit}"), pass);
    }

    fn flag(&mut self, quantity: &str, value: Option<bool>) {
        self.push(quantity, None, value.map(|b| if b { 1.0 } else { 0.0 }), "true".into(), value == Some(true));
    }
}

fn summarize(
    widen: f64,
    spectrum: Option<&SpectrumReport>,
    parity: Option<&ParityReport>,
    charge: Option<&ChargeReport>,
    fields: Option<&FieldsReport>,
) -> Vec<SummaryRow> {
    let mut r = Rows { rows: Vec::new(), widen };
    r.flag("dispersion hierarchy eps01 < eps12 < eps23", spectrum.map(|s| s.hierarchy));

    let planted = parity.map_or(5.9e-3, |p| p.planted_dwell);
    r.relative("parity dwell from PSD corner (s)", planted, parity.map(|p| p.recovered_dwell), 0.15);
    r.relative("parity dwell from decoded runs (s)", planted, parity.map(|p| p.run_length_dwell), 0.15);
    r.below("spurious flips / true flips", parity.map(|p| p.spurious_rate), 0.02);

    let c = charge;
    r.absolute("configurations N", c.map_or(8.0, |c| c.planted_order as f64), c.map(|c| c.chosen_order as f64), 0.0);
    let cold = c.and_then(|c| c.temperatures.first());
    let planted_min = cold.map_or(22.0, |t| t.planted_stable_time / 60.0);
    let measured = cold.and_then(|t| t.dwell);
    let sigma_min = measured.map(|d| d.mean / (d.count as f64).sqrt() / 60.0);
    let tol = 3.0 * sigma_min.unwrap_or(f64::NAN);
    r.absolute(
        &format!("mean stable time at {} mK (min)", cold.map_or(10.0, |t| t.temperature * 1e3)),
        planted_min,
        measured.map(|d| d.mean / 60.0),
        tol,
    );
    let tv = c.and_then(|c| c.temperatures.iter().map(|t| t.max_row_tv).collect::<Option<Vec<f64>>>());
    r.below("transition matrix max row TV", tv.map(|v| v.into_iter().fold(0.0, f64::max)), 0.05);
    r.flag("neighbor mass increases with T", c.map(|c| c.neighbor_increasing));
    r.flag("scramble mass flat in T", c.map(|c| c.scramble_flat));
    for (name, pl) in [("offset", c.map(|c| c.offset_noise)), ("frequency", c.map(|c| c.frequency_noise))] {
        let (alpha, amp) = match name {
            "offset" => (1.94, 1.11e-6),
            _ => (2.06, 7.4e5),
        };
        r.absolute(&format!("{name} noise alpha"), pl.map_or(alpha, |p| p.planted_alpha), pl.map(|p| p.fit.alpha), 0.1);
        r.factor(
            &format!("{name} noise amp_1hz"),
            pl.map_or(amp, |p| p.planted_amplitude),
            pl.map(|p| p.fit.amplitude),
            2.0,
        );
    }
    r.flag("differential volume > single volume at all thresholds", fields.map(|f| f.ordering_holds));
    r.rows
}

fn guarded<T>(
    art: &mut Artifacts,
    name: &str,
    failed: &mut Vec<String>,
    f: impl FnOnce(&mut Artifacts) -> Result<T>,
) -> Option<T> {
    art.set_subdir(name);
    let r = stage(art, name, f);
    art.set_subdir("");
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            log::error!("{e}");
            failed.push(name.to_string());
            None
        }
    }
}

/// Runs every pipeline into its own subdirectory of `out`, then writes a
/// planted-versus-recovered summary. A failing pipeline is marked in the
/// manifest and the rest still run.
pub fn cmd_reproduce(cfg: &RunConfig, out: &Path) -> Result<Outcome<ReproduceReport>> {
    let c = cfg.effective();
    let mut art = Artifacts::create(out)?;
    let mut failed = Vec::new();
    let spectrum = guarded(&mut art, "spectrum", &mut failed, |a| spectrum_pipeline(&c.spectrum, a));
    let parity = guarded(&mut art, "parity", &mut failed, |a| parity_pipeline(&c.parity, c.seed, c.execution, a));
    let charge = guarded(&mut art, "charge", &mut failed, |a| charge_pipeline(&c.charge, c.seed, c.execution, a));
    let fields = guarded(&mut art, "fields", &mut failed, |a| fields_pipeline(&c.fields, c.execution, a));

    let widen = if c.quick { QUICK_WIDENING } else { 1.0 };
    let report = ReproduceReport {
        rows: summarize(widen, spectrum.as_ref(), parity.as_ref(), charge.as_ref(), fields.as_ref()),
        failed_stages: failed,
    };
    art.begin("summary");
    art.write_json("summary.json", &report)?;
    art.write("summary.csv", report.to_csv().as_bytes())?;
    let manifest = art.seal("reproduce", cfg)?;
    Ok(Outcome { report, manifest })
}
