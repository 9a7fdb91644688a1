use std::collections::BTreeMap;
use std::path::Path;

use chargenoise::fields::{
    build_device_geometries, direct_induced_charge, induced_charge_map, sensitive_volume, solve_weighting_potential,
    write_binary_grid, GridGeometry, InducedChargeMap, PotentialField, SolverConfig,
};
use chargenoise::Execution;
use serde::{Deserialize, Serialize};

use super::{single, stage, Outcome};
use crate::config::{FieldsSection, RunConfig};
use crate::error::{CliError, Result, StageExt};
use crate::manifest::Artifacts;

const DIFFERENTIAL: [(&str, f64); 2] = [("paddle_a", 1.0), ("paddle_b", -1.0)];
const SINGLE: [(&str, f64); 1] = [("island", 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub threshold: f64,
    pub differential_m3: f64,
    pub single_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReciprocityPoint {
    pub geometry: String,
    /// Source position, m.
    pub position: [f64; 3],
    pub direct: f64,
    pub reciprocal: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsReport {
    pub cells: usize,
    pub volumes: Vec<VolumeRow>,
    /// Differential volume exceeds single-island volume at every threshold.
    pub ordering_holds: bool,
    /// Largest `|q(x) + q(-x)|` of the differential map, relative to its peak.
    pub antisymmetry: f64,
    pub reciprocity: Vec<ReciprocityPoint>,
    /// Largest magnitude next to the grounded box faces.
    pub differential_edge_max: f64,
    pub single_edge_max: f64,
    pub sweeps: BTreeMap<String, usize>,
}

fn node(g: &GridGeometry, p: [f64; 3]) -> [usize; 3] {
    let c = (g.nx - 1) as f64 / 2.0;
    [
        (p[0] / g.spacing + c).round() as usize,
        (p[1] / g.spacing + c).round() as usize,
        (p[2] / g.spacing + g.surface_k as f64).round() as usize,
    ]
}

/// `x,z,value` on the plane through the box center normal to y.
fn midplane_csv(g: &GridGeometry, map: &InducedChargeMap) -> String {
    let j = map.ny / 2;
    let mut s = String::from("x,z,value\n");
    for k in 1..=map.nz {
        for i in 0..map.nx {
            let [x, _, z] = g.coords(i, j, k);
            s.push_str(&format!("{x},{z},{}\n", map.at(i, j, k)));
        }
    }
    s
}

fn write_map(art: &mut Artifacts, name: &str, g: &GridGeometry, map: &InducedChargeMap) -> Result<()> {
    let rel = format!("{name}_map.bin");
    let dims = [map.nx, map.ny, map.nz];
    write_binary_grid(&art.prepare(&rel)?, dims, map.spacing, g.coords(0, 0, 1), &map.values).stage("fields/maps")?;
    art.adopt(&rel)?;
    art.adopt(&format!("{rel}.json"))?;
    art.write(&format!("{name}_midplane.csv"), midplane_csv(g, map).as_bytes())
}

fn solve(
    g: &GridGeometry,
    names: &[&str],
    cfg: &SolverConfig,
    sweeps: &mut BTreeMap<String, usize>,
    tag: &str,
) -> chargenoise::Result<BTreeMap<String, PotentialField>> {
    let mut out = BTreeMap::new();
    for &n in names {
        let f = solve_weighting_potential(g, n, cfg)?;
        sweeps.insert(format!("{tag}/{n}"), f.sweeps);
        out.insert(n.to_string(), f);
    }
    Ok(out)
}

pub fn fields_pipeline(sec: &FieldsSection, exec: Execution, art: &mut Artifacts) -> Result<FieldsReport> {
    if sec.thresholds.is_empty() {
        return Err(CliError::Config("field `fields.thresholds`: must list at least one threshold".into()));
    }
    if sec.thresholds.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(CliError::Config("field `fields.thresholds`: thresholds must be positive".into()));
    }
    let solver = SolverConfig { tol: sec.tol, max_sweeps: sec.max_sweeps, exec, ..Default::default() };
    let (dg, sg) = stage(art, "fields/geometry", |_| build_device_geometries(&sec.geometry).stage("fields/geometry"))?;

    let mut sweeps = BTreeMap::new();
    let (dmap, smap) = stage(art, "fields/solve", |_| {
        let dw = solve(&dg, &["paddle_a", "paddle_b"], &solver, &mut sweeps, "differential").stage("fields/solve")?;
        let sw = solve(&sg, &["island"], &solver, &mut sweeps, "single").stage("fields/solve")?;
        let dmap = induced_charge_map(&dg, &dw, &DIFFERENTIAL).stage("fields/solve")?;
        let smap = induced_charge_map(&sg, &sw, &SINGLE).stage("fields/solve")?;
        Ok((dmap, smap))
    })?;

    if sec.write_maps {
        stage(art, "fields/maps", |art| {
            write_map(art, "differential", &dg, &dmap)?;
            write_map(art, "single", &sg, &smap)
        })?;
    }

    let volumes = stage(art, "fields/volumes", |art| {
        let rows: Vec<VolumeRow> = sec
            .thresholds
            .iter()
            .map(|&t| VolumeRow {
                threshold: t,
                differential_m3: sensitive_volume(&dmap, t).volume_m3,
                single_m3: sensitive_volume(&smap, t).volume_m3,
            })
            .collect();
        let mut csv = String::from("threshold,differential_m3,single_m3\n");
        for r in &rows {
            csv.push_str(&format!("{},{},{}\n", r.threshold, r.differential_m3, r.single_m3));
        }
        art.write("sensitive_volume.csv", csv.as_bytes())?;
        Ok(rows)
    })?;

    let reciprocity = if sec.reciprocity_check {
        stage(art, "fields/reciprocity", |_| {
            let mut pts = Vec::new();
            let cases: [(&str, &GridGeometry, &InducedChargeMap, &[(&str, f64)], [f64; 3]); 3] = [
                ("single", &sg, &smap, &SINGLE, [0.0, 0.0, -0.2e-3]),
                ("single", &sg, &smap, &SINGLE, [0.4e-3, -0.3e-3, -0.5e-3]),
                ("differential", &dg, &dmap, &DIFFERENTIAL, [-0.4e-3, 0.0, -0.3e-3]),
            ];
            for (name, g, map, combo, p) in cases {
                let n = node(g, p);
                let direct = direct_induced_charge(g, n, combo, &solver).stage("fields/reciprocity")?;
                let reciprocal = map.at(n[0], n[1], n[2]);
                pts.push(ReciprocityPoint {
                    geometry: name.into(),
                    position: g.coords(n[0], n[1], n[2]),
                    direct,
                    reciprocal,
                    rel_error: (direct - reciprocal).abs() / reciprocal.abs(),
                });
            }
            Ok(pts)
        })?
    } else {
        Vec::new()
    };

    let peak = dmap.max_abs();
    let mut anti: f64 = 0.0;
    for k in 1..=dmap.nz {
        for j in 0..dmap.ny {
            for i in 0..dmap.nx {
                anti = anti.max((dmap.at(i, j, k) + dmap.at(dmap.nx - 1 - i, j, k)).abs());
            }
        }
    }
    let report = FieldsReport {
        cells: sec.geometry.cells,
        ordering_holds: volumes.iter().all(|r| r.differential_m3 > r.single_m3),
        volumes,
        antisymmetry: if peak > 0.0 { anti / peak } else { 0.0 },
        reciprocity,
        differential_edge_max: dmap.edge_max_abs(),
        single_edge_max: smap.edge_max_abs(),
        sweeps,
    };
    stage(art, "fields/report", |art| art.write_json("fields_report.json", &report))?;
    Ok(report)
}

pub fn cmd_fields(cfg: &RunConfig, out: &Path) -> Result<Outcome<FieldsReport>> {
    single("fields", cfg, out, |c, art| fields_pipeline(&c.fields, c.execution, art))
}
