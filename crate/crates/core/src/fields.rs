//! Finite-difference electrostatics for electrode sensitivity maps.
//!
//! Potentials live on grid nodes. Node `(i, j, k)` sits at
//! `x = (i - (nx-1)/2) h`, `y = (j - (ny-1)/2) h`, `z = (k - surface_k) h`, so
//! the substrate top is the plane `k = surface_k` and the device is centered
//! at `x, y = 0, 0`. Face permittivities are harmonic means of the two nodes
//! they join; nodes on the substrate surface carry the mean of substrate and
//! vacuum. All quantities are in units where the vacuum permittivity and the
//! grid spacing are one; the source charge is `+1`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;

pub const MIN_NODES: usize = 16;
const RELAX_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Grounded box on all six faces.
    Dirichlet,
    /// Zero normal field on the four lateral faces; grounded top and bottom.
    LateralNeumann,
}

/// Inclusive node ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeBox {
    pub x: [usize; 2],
    pub y: [usize; 2],
    pub z: [usize; 2],
}

impl NodeBox {
    fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        (self.x[0]..=self.x[1]).contains(&i)
            && (self.y[0]..=self.y[1]).contains(&j)
            && (self.z[0]..=self.z[1]).contains(&k)
    }

    fn intersects(&self, o: &NodeBox) -> bool {
        let hit = |a: [usize; 2], b: [usize; 2]| a[0] <= b[1] && b[0] <= a[1];
        hit(self.x, o.x) && hit(self.y, o.y) && hit(self.z, o.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub boxes: Vec<NodeBox>,
}

impl Electrode {
    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        self.boxes.iter().any(|b| b.contains(i, j, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Meters per cell.
    pub spacing: f64,
    pub surface_k: usize,
    pub substrate_permittivity: f64,
    pub electrodes: Vec<Electrode>,
    pub boundary: Boundary,
}

impl GridGeometry {
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn coords(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.spacing;
        [
            (i as f64 - (self.nx - 1) as f64 / 2.0) * h,
            (j as f64 - (self.ny - 1) as f64 / 2.0) * h,
            (k as f64 - self.surface_k as f64) * h,
        ]
    }

    pub fn permittivity(&self, k: usize) -> f64 {
        use std::cmp::Ordering::*;
        match k.cmp(&self.surface_k) {
            Less => self.substrate_permittivity,
            Equal => 0.5 * (self.substrate_permittivity + 1.0),
            Greater => 1.0,
        }
    }

    pub fn electrode(&self, name: &str) -> Result<&Electrode> {
        self.electrodes.iter().find(|e| e.name == name).ok_or_else(|| Error::UnknownElectrode(name.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < MIN_NODES || self.ny < MIN_NODES || self.nz < MIN_NODES {
            return Err(invalid("grid", format!("needs at least {MIN_NODES} nodes per axis")));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(invalid("spacing", "must be positive"));
        }
        if !(self.substrate_permittivity >= 1.0) {
            return Err(invalid("substrate_permittivity", "must be >= 1"));
        }
        if self.surface_k == 0 || self.surface_k + 1 >= self.nz {
            return Err(invalid("surface_k", "substrate surface must be interior"));
        }
        let lateral_ok = self.boundary == Boundary::LateralNeumann;
        for e in &self.electrodes {
            for b in &e.boxes {
                let inside = |r: [usize; 2], n: usize, open: bool| {
                    r[0] <= r[1] && r[1] < n && (open || (r[0] >= 1 && r[1] + 1 < n))
                };
                if !inside(b.x, self.nx, lateral_ok)
                    || !inside(b.y, self.ny, lateral_ok)
                    || !inside(b.z, self.nz, false)
                {
                    return Err(invalid("electrodes", format!("`{}` extends onto the grounded box", e.name)));
                }
            }
        }
        for (a, ea) in self.electrodes.iter().enumerate() {
            for eb in &self.electrodes[a + 1..] {
                if ea.name == eb.name || ea.boxes.iter().any(|x| eb.boxes.iter().any(|y| x.intersects(y))) {
                    return Err(Error::ElectrodeOverlap { a: ea.name.clone(), b: eb.name.clone() });
                }
            }
        }
        Ok(())
    }

    /// Electrode index per node, `u16::MAX` for free nodes.
    fn conductor_map(&self) -> Vec<u16> {
        let mut m = vec![u16::MAX; self.len()];
        for (e_idx, e) in self.electrodes.iter().enumerate() {
            for b in &e.boxes {
                for k in b.z[0]..=b.z[1] {
                    for j in b.y[0]..=b.y[1] {
                        for i in b.x[0]..=b.x[1] {
                            m[self.index(i, j, k)] = e_idx as u16;
                        }
                    }
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Over-relaxation factor; `None` uses the optimum for a uniform box.
    pub omega: Option<f64>,
    /// Residual max-norm target, relative to the excitation.
    pub tol: f64,
    pub max_sweeps: usize,
    pub check_every: usize,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { omega: None, tol: 1e-6, max_sweeps: 20_000, check_every: 10, exec: Execution::default() }
    }
}

#[derive(Debug, Clone, Copy)]
struct FreeNode {
    idx: u32,
    nb: [u32; 6],
    c: [f64; 6],
    inv_diag: f64,
}

/// Assembled stencil for one geometry: the free nodes split by color.
struct Operator {
    colors: [Vec<FreeNode>; 2],
    conductor: Vec<u16>,
    /// Full stencil rows of conductor nodes, for surface-charge sums.
    conductor_rows: Vec<FreeNode>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl Operator {
    fn new(g: &GridGeometry) -> Operator {
        let conductor = g.conductor_map();
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let neumann = g.boundary == Boundary::LateralNeumann;
        let mut colors = [Vec::new(), Vec::new()];
        let mut conductor_rows = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let on_z = k == 0 || k == nz - 1;
                    let on_xy = i == 0 || i == nx - 1 || j == 0 || j == ny - 1;
                    let idx = g.index(i, j, k);
                    let is_conductor = conductor[idx] != u16::MAX;
                    if !is_conductor && (on_z || (on_xy && !neumann)) {
                        continue;
                    }
                    if is_conductor && (on_z || (on_xy && !neumann)) {
                        continue;
                    }
                    let eps = g.permittivity(k);
                    let mut nb = [idx as u32; 6];
                    let mut c = [0.0; 6];
                    // Mirror ghosts on Neumann faces.
                    let xm = if i > 0 { i - 1 } else { i + 1 };
                    let xp = if i + 1 < nx { i + 1 } else { i - 1 };
                    let ym = if j > 0 { j - 1 } else { j + 1 };
                    let yp = if j + 1 < ny { j + 1 } else { j - 1 };
                    let lateral = [(xm, j), (xp, j), (i, ym), (i, yp)];
                    for (s, &(a, b)) in lateral.iter().enumerate() {
                        nb[s] = g.index(a, b, k) as u32;
                        c[s] = eps;
                    }
                    nb[4] = g.index(i, j, k - 1) as u32;
                    c[4] = harmonic(eps, g.permittivity(k - 1));
                    nb[5] = g.index(i, j, k + 1) as u32;
                    c[5] = harmonic(eps, g.permittivity(k + 1));
                    let node = FreeNode { idx: idx as u32, nb, c, inv_diag: 1.0 / c.iter().sum::<f64>() };
                    if is_conductor {
                        conductor_rows.push(node);
                    } else {
                        colors[(i + j + k) % 2].push(node);
                    }
                }
            }
        }
        Operator { colors, conductor, conductor_rows }
    }

    /// `(A phi)_n` for one stencil row.
    fn apply(n: &FreeNode, phi: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in 0..6 {
            s += n.c[t] * (phi[n.idx as usize] - phi[n.nb[t] as usize]);
        }
        s
    }

    fn gauss_seidel_value(n: &FreeNode, phi: &[f64], src: &[f64]) -> f64 {
        let mut s = src[n.idx as usize];
        for t in 0..6 {
            s += n.c[t] * phi[n.nb[t] as usize];
        }
        s * n.inv_diag
    }

    fn residual(&self, phi: &[f64], src: &[f64], exec: Execution) -> f64 {
        self.colors
            .iter()
            .flat_map(|nodes| {
                exec.map_chunks(nodes, RELAX_CHUNK, |_, chunk| {
                    chunk
                        .iter()
                        .map(|n| (Self::gauss_seidel_value(n, phi, src) - phi[n.idx as usize]).abs())
                        .fold(0.0, f64::max)
                })
            })
            .fold(0.0, f64::max)
    }

    /// Red-black SOR. Each color is relaxed from a snapshot of the other
    /// color, so chunked parallel updates reproduce the sequential sweep.
    fn solve(
        &self,
        phi: &mut [f64],
        src: &[f64],
        scale: f64,
        g: &GridGeometry,
        cfg: &SolverConfig,
    ) -> Result<(usize, f64, Vec<f64>)> {
        let n_max = g.nx.max(g.ny).max(g.nz) as f64;
        let omega = cfg.omega.unwrap_or(2.0 / (1.0 + (std::f64::consts::PI / n_max).sin()));
        if !(omega > 0.0 && omega < 2.0) {
            return Err(invalid("omega", "must lie in (0, 2)"));
        }
        let target = cfg.tol * scale;
        let mut history = Vec::new();
        let check = cfg.check_every.max(1);
        for sweep in 1..=cfg.max_sweeps {
            for nodes in &self.colors {
                let updates = cfg.exec.map_chunks(nodes, RELAX_CHUNK, |_, chunk| {
                    let phi_ro: &[f64] = phi;
                    chunk
                        .iter()
                        .map(|n| {
                            let old = phi_ro[n.idx as usize];
                            old + omega * (Self::gauss_seidel_value(n, phi_ro, src) - old)
                        })
                        .collect::<Vec<f64>>()
                });
                for (chunk, vals) in nodes.chunks(RELAX_CHUNK).zip(updates) {
                    for (n, v) in chunk.iter().zip(vals) {
                        phi[n.idx as usize] = v;
                    }
                }
            }
            if sweep % check == 0 {
                let r = self.residual(phi, src, cfg.exec);
                history.push(r);
                if !r.is_finite() {
                    break;
                }
                if r < target {
                    return Ok((sweep, r, history));
                }
            }
        }
        let residual = history.last().copied().unwrap_or(f64::NAN);
        Err(Error::SolverNoConvergence { iterations: cfg.max_sweeps, residual, history })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: f64,
    pub electrode: String,
    /// Node values, `[k][j][i]` with `i` fastest.
    pub values: Vec<f64>,
    pub sweeps: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
}

impl PotentialField {
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.ny + j) * self.nx + i]
    }
}

/// Potential with `electrode` at 1 V and every other conductor grounded.
pub fn solve_weighting_potential(g: &GridGeometry, electrode: &str, cfg: &SolverConfig) -> Result<PotentialField> {
    g.validate()?;
    let e_idx = g
        .electrodes
        .iter()
        .position(|e| e.name == electrode)
        .ok_or_else(|| Error::UnknownElectrode(electrode.to_string()))?;
    let op = Operator::new(g);
    let mut phi: Vec<f64> = op.conductor.iter().map(|&c| if c as usize == e_idx { 1.0 } else { 0.0 }).collect();
    let src = vec![0.0; g.len()];
    let (sweeps, residual, residual_history) = op.solve(&mut phi, &src, 1.0, g, cfg)?;
    log::debug!("weighting potential `{electrode}`: {sweeps} sweeps, residual {residual:e}");
    Ok(PotentialField {
        nx: g.nx,
        ny: g.ny,
        nz: g.nz,
        spacing: g.spacing,
        electrode: electrode.to_string(),
        values: phi,
        sweeps,
        residual,
        residual_history,
    })
}

/// Weighted sum of charges on conductors when a unit charge sits at
/// `source` and every conductor is grounded, from a direct Poisson solve.
pub fn direct_induced_charge(
    g: &GridGeometry,
    source: [usize; 3],
    combination: &[(&str, f64)],
    cfg: &SolverConfig,
) -> Result<f64> {
    g.validate()?;
    let op = Operator::new(g);
    let s_idx = g.index(source[0], source[1], source[2]);
    let row = op
        .colors
        .iter()
        .flatten()
        .find(|n| n.idx as usize == s_idx)
        .copied()
        .ok_or_else(|| invalid("source", "must be a free interior node"))?;
    let mut src = vec![0.0; g.len()];
    src[s_idx] = 1.0;
    let mut phi = vec![0.0; g.len()];
    op.solve(&mut phi, &src, row.inv_diag, g, cfg)?;
    let mut total = 0.0;
    for &(name, w) in combination {
        let e_idx = g
            .electrodes
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::UnknownElectrode(name.to_string()))?;
        let q: f64 = op
            .conductor_rows
            .iter()
            .filter(|n| op.conductor[n.idx as usize] as usize == e_idx)
            .map(|n| Operator::apply(n, &phi))
            .sum();
        total += w * q;
    }
    Ok(total)
}

/// Induced charge on an electrode combination per unit source charge, over
/// the interior substrate nodes (`1 <= k < surface_k`, lateral interior).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedChargeMap {
    pub nx: usize,
    pub ny: usize,
    /// Substrate layers stored, `k = 1..surface_k`.
    pub nz: usize,
    pub spacing: f64,
    pub combination: Vec<(String, f64)>,
    /// `[k-1][j][i]`, `i` fastest; lateral box faces hold zero.
    pub values: Vec<f64>,
}

impl InducedChargeMap {
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[((k - 1) * self.ny + j) * self.nx + i]
    }

    fn interior(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (1..=self.nz).flat_map(move |k| (1..self.ny - 1).flat_map(move |j| (1..self.nx - 1).map(move |i| (i, j, k))))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude on the interior nodes adjacent to the box faces.
    pub fn edge_max_abs(&self) -> f64 {
        self.interior()
            .filter(|&(i, j, k)| i == 1 || j == 1 || i == self.nx - 2 || j == self.ny - 2 || k == 1)
            .map(|(i, j, k)| self.at(i, j, k).abs())
            .fold(0.0, f64::max)
    }
}

/// `induced(r) = -sum_k w_k phi_k(r)` over the requested combination.
pub fn induced_charge_map(
    g: &GridGeometry,
    weights: &BTreeMap<String, PotentialField>,
    combination: &[(&str, f64)],
) -> Result<InducedChargeMap> {
    let mut fields = Vec::new();
    for &(name, w) in combination {
        g.electrode(name)?;
        let f = weights.get(name).ok_or_else(|| Error::MissingWeighting(name.to_string()))?;
        if f.values.len() != g.len() {
            return Err(Error::DimensionMismatch { expected: g.len(), got: f.values.len() });
        }
        fields.push((f, w));
    }
    let nz = g.surface_k - 1;
    let mut values = vec![0.0; g.nx * g.ny * nz];
    for k in 1..g.surface_k {
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let idx = g.index(i, j, k);
                let v: f64 = fields.iter().map(|(f, w)| w * f.values[idx]).sum();
                values[((k - 1) * g.ny + j) * g.nx + i] = -v;
            }
        }
    }
    Ok(InducedChargeMap {
        nx: g.nx,
        ny: g.ny,
        nz,
        spacing: g.spacing,
        combination: combination.iter().map(|(n, w)| (n.to_string(), *w)).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveVolume {
    pub threshold: f64,
    pub cells: usize,
    pub volume_m3: f64,
    /// `(z in meters, area in m^2)` per substrate layer.
    pub slice_areas: Vec<(f64, f64)>,
}

/// Interior substrate volume where the induced charge magnitude reaches the
/// threshold.
pub fn sensitive_volume(map: &InducedChargeMap, threshold: f64) -> SensitiveVolume {
    let h = map.spacing;
    let mut per_layer = vec![0usize; map.nz];
    for (i, j, k) in map.interior() {
        if map.at(i, j, k).abs() >= threshold {
            per_layer[k - 1] += 1;
        }
    }
    let cells = per_layer.iter().sum();
    SensitiveVolume {
        threshold,
        cells,
        volume_m3: cells as f64 * h * h * h,
        slice_areas: per_layer
            .iter()
            .enumerate()
            .map(|(l, &c)| ((l as f64 + 1.0 - (map.nz + 1) as f64) * h, c as f64 * h * h))
            .collect(),
    }
}

/// Interior substrate volume.
pub fn substrate_volume(map: &InducedChargeMap) -> f64 {
    ((map.nx - 2) * (map.ny - 2) * map.nz) as f64 * map.spacing.powi(3)
}

/// Physical layout of the two device styles. Lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceGeometryConfig {
    /// Cells per side; the grid has `cells + 1` nodes per axis.
    pub cells: usize,
    pub box_size: f64,
    pub substrate_thickness: f64,
    pub paddle_length: f64,
    pub paddle_width: f64,
    pub paddle_gap: f64,
    pub island_size: f64,
    pub island_gap: f64,
    pub ground_margin: f64,
    pub differential_permittivity: f64,
    pub single_permittivity: f64,
    pub node_budget: usize,
}

impl Default for DeviceGeometryConfig {
    fn default() -> Self {
        DeviceGeometryConfig {
            cells: 64,
            box_size: 3.2e-3,
            substrate_thickness: 2.0e-3,
            paddle_length: 0.5e-3,
            paddle_width: 0.8e-3,
            paddle_gap: 0.2e-3,
            island_size: 0.3e-3,
            island_gap: 0.1e-3,
            ground_margin: 0.2e-3,
            differential_permittivity: 10.0,
            single_permittivity: 11.7,
            node_budget: 20_000_000,
        }
    }
}

impl DeviceGeometryConfig {
    /// Multiplies every lateral device dimension by `factor`.
    pub fn scaled_lateral(&self, factor: f64) -> Self {
        DeviceGeometryConfig {
            paddle_length: self.paddle_length * factor,
            paddle_width: self.paddle_width * factor,
            paddle_gap: self.paddle_gap * factor,
            island_size: self.island_size * factor,
            island_gap: self.island_gap * factor,
            ..*self
        }
    }
}

/// Differential paddle pair and single island in a ground plane, both
/// centered at `x, y = 0, 0` on the substrate surface.
pub fn build_device_geometries(cfg: &DeviceGeometryConfig) -> Result<(GridGeometry, GridGeometry)> {
    let n = cfg.cells + 1;
    let nodes = n * n * n;
    if nodes > cfg.node_budget {
        return Err(Error::GridBudget { cells: nodes, budget: cfg.node_budget });
    }
    if cfg.cells < MIN_NODES || cfg.cells % 2 != 0 {
        return Err(invalid("cells", format!("must be even and >= {MIN_NODES}")));
    }
    let h = cfg.box_size / cfg.cells as f64;
    let cells_of = |len: f64| (len / h).round() as usize;
    let c = cfg.cells / 2;
    let surface_k = cells_of(cfg.substrate_thickness);
    let half_gap = cells_of(cfg.paddle_gap / 2.0);
    let len = cells_of(cfg.paddle_length).max(1);
    let half_w = cells_of(cfg.paddle_width / 2.0);
    let z = [surface_k, surface_k];
    if c < half_gap + len + 1 || c < half_w + 1 || c < half_gap {
        return Err(invalid("paddles", "do not fit in the box"));
    }
    let a = NodeBox { x: [c - half_gap - len, c - half_gap], y: [c - half_w, c + half_w], z };
    let b = NodeBox { x: [c + half_gap, c + half_gap + len], y: a.y, z };
    let differential = GridGeometry {
        nx: n,
        ny: n,
        nz: n,
        spacing: h,
        surface_k,
        substrate_permittivity: cfg.differential_permittivity,
        electrodes: vec![
            Electrode { name: "paddle_a".into(), boxes: vec![a] },
            Electrode { name: "paddle_b".into(), boxes: vec![b] },
        ],
        boundary: Boundary::Dirichlet,
    };
    differential.validate()?;

    let half = cells_of(cfg.island_size / 2.0);
    let gap = cells_of(cfg.island_gap);
    let m = cells_of(cfg.ground_margin).max(1);
    let hole = half + gap;
    if gap == 0 {
        return Err(Error::ElectrodeOverlap { a: "island".into(), b: "ground".into() });
    }
    if c < hole + 1 + m {
        return Err(invalid("island", "does not fit inside the ground plane"));
    }
    let (lo, hi) = (m, n - 1 - m);
    let ground = vec![
        NodeBox { x: [lo, c - hole - 1], y: [lo, hi], z },
        NodeBox { x: [c + hole + 1, hi], y: [lo, hi], z },
        NodeBox { x: [c - hole, c + hole], y: [lo, c - hole - 1], z },
        NodeBox { x: [c - hole, c + hole], y: [c + hole + 1, hi], z },
    ];
    let single = GridGeometry {
        nx: n,
        ny: n,
        nz: n,
        spacing: h,
        surface_k,
        substrate_permittivity: cfg.single_permittivity,
        electrodes: vec![
            Electrode {
                name: "island".into(),
                boxes: vec![NodeBox { x: [c - half, c + half], y: [c - half, c + half], z }],
            },
            Electrode { name: "ground".into(), boxes: ground },
        ],
        boundary: Boundary::Dirichlet,
    };
    single.validate()?;
    Ok((differential, single))
}

/// `x,y,z,value` rows for one plane of a node field. `axis` is 0, 1 or 2.
pub fn slice_csv(g: &GridGeometry, values: &[f64], axis: usize, index: usize) -> Result<String> {
    if values.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), got: values.len() });
    }
    let dims = [g.nx, g.ny, g.nz];
    if axis > 2 || index >= dims[axis] {
        return Err(invalid("slice", format!("axis {axis} index {index} out of range")));
    }
    let mut s = String::from("x,y,z,value\n");
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                if [i, j, k][axis] != index {
                    continue;
                }
                let [x, y, z] = g.coords(i, j, k);
                s.push_str(&format!("{x},{y},{z},{}\n", values[g.index(i, j, k)]));
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub format_version: u32,
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
}

/// Writes `values` as little-endian f64 in `[z][y][x]` order (x fastest)
/// to `path`, and a JSON header to `path` with `.json` appended.
pub fn write_binary_grid(
    path: &Path,
    dims: [usize; 3],
    spacing: f64,
    origin: [f64; 3],
    values: &[f64],
) -> Result<BinaryHeader> {
    if dims.iter().product::<usize>() != values.len() {
        return Err(Error::DimensionMismatch { expected: dims.iter().product(), got: values.len() });
    }
    let header = BinaryHeader {
        format_version: 1,
        dims,
        spacing,
        origin,
        dtype: "f64".into(),
        byte_order: "little".into(),
        layout: "row-major [z][y][x], x fastest".into(),
    };
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&bytes)?;
    let mut hp = path.as_os_str().to_owned();
    hp.push(".json");
    std::fs::write(hp, serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

pub fn read_binary_grid(path: &Path) -> Result<(BinaryHeader, Vec<f64>)> {
    let mut hp = path.as_os_str().to_owned();
    hp.push(".json");
    let header: BinaryHeader = serde_json::from_str(&std::fs::read_to_string(hp)?)?;
    let bytes = std::fs::read(path)?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::DimensionMismatch { expected: n * 8, got: bytes.len() });
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plates(n: usize) -> GridGeometry {
        GridGeometry {
            nx: n,
            ny: n,
            nz: n,
            spacing: 1.0,
            surface_k: n / 2,
            substrate_permittivity: 1.0,
            electrodes: vec![
                Electrode {
                    name: "top".into(),
                    boxes: vec![NodeBox { x: [0, n - 1], y: [0, n - 1], z: [n - 3, n - 3] }],
                },
                Electrode { name: "bottom".into(), boxes: vec![NodeBox { x: [0, n - 1], y: [0, n - 1], z: [2, 2] }] },
            ],
            boundary: Boundary::LateralNeumann,
        }
    }

    #[test]
    fn parallel_plates_are_linear() {
        let g = plates(16);
        let f = solve_weighting_potential(&g, "top", &SolverConfig::default()).unwrap();
        for k in 2..=13 {
            let expect = (k - 2) as f64 / 11.0;
            for (i, j) in [(0, 0), (7, 9), (15, 3)] {
                assert!((f.at(i, j, k) - expect).abs() < 1e-4, "k={k}: {}", f.at(i, j, k));
            }
        }
    }

    #[test]
    fn cube_potential_decays_and_stays_bounded() {
        let g = GridGeometry {
            nx: 21,
            ny: 21,
            nz: 21,
            spacing: 1.0,
            surface_k: 5,
            substrate_permittivity: 1.0,
            electrodes: vec![Electrode {
                name: "cube".into(),
                boxes: vec![NodeBox { x: [10, 10], y: [10, 10], z: [10, 10] }],
            }],
            boundary: Boundary::Dirichlet,
        };
        let f = solve_weighting_potential(&g, "cube", &SolverConfig::default()).unwrap();
        for i in 11..20 {
            assert!(f.at(i, 10, 10) < f.at(i - 1, 10, 10));
        }
        assert!(f.values.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn reciprocity_matches_direct_solve() {
        let cfg = DeviceGeometryConfig { cells: 24, ..Default::default() };
        let (g, _) = build_device_geometries(&cfg).unwrap();
        let scfg = SolverConfig { tol: 1e-9, ..Default::default() };
        let w = solve_weighting_potential(&g, "paddle_a", &scfg).unwrap();
        let src = [9, 12, g.surface_k - 2];
        let direct = direct_induced_charge(&g, src, &[("paddle_a", 1.0)], &scfg).unwrap();
        let reciprocal = -w.at(src[0], src[1], src[2]);
        assert!((direct - reciprocal).abs() < 1e-5 * reciprocal.abs().max(1e-3), "{direct} vs {reciprocal}");
    }

    #[test]
    fn zero_gap_overlaps() {
        let cfg = DeviceGeometryConfig { paddle_gap: 0.0, cells: 32, ..Default::default() };
        assert!(matches!(build_device_geometries(&cfg), Err(Error::ElectrodeOverlap { .. })));
    }

    #[test]
    fn default_geometries_are_centered() {
        let (d, s) = build_device_geometries(&DeviceGeometryConfig { cells: 32, ..Default::default() }).unwrap();
        let a = &d.electrode("paddle_a").unwrap().boxes[0];
        let b = &d.electrode("paddle_b").unwrap().boxes[0];
        let xa = d.coords(a.x[0], 0, 0)[0] + d.coords(b.x[1], 0, 0)[0];
        assert!(xa.abs() < 1e-15);
        let isl = &s.electrode("island").unwrap().boxes[0];
        assert!((s.coords(isl.x[0], isl.y[0], 0)[0] + s.coords(isl.x[1], isl.y[1], 0)[0]).abs() < 1e-15);
        assert!(matches!(
            build_device_geometries(&DeviceGeometryConfig { cells: 64, node_budget: 1000, ..Default::default() }),
            Err(Error::GridBudget { .. })
        ));
    }

    #[test]
    fn missing_weighting_named() {
        let (g, _) = build_device_geometries(&DeviceGeometryConfig { cells: 16, ..Default::default() }).unwrap();
        let w = BTreeMap::new();
        assert!(matches!(
            induced_charge_map(&g, &w, &[("paddle_a", 1.0)]),
            Err(Error::MissingWeighting(n)) if n == "paddle_a"
        ));
    }

    #[test]
    fn solver_failure_carries_history() {
        let g = plates(16);
        let cfg = SolverConfig { max_sweeps: 20, check_every: 5, ..Default::default() };
        match solve_weighting_potential(&g, "top", &cfg) {
            Err(Error::SolverNoConvergence { history, .. }) => assert_eq!(history.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let v: Vec<f64> = (0..24).map(|i| i as f64 * 0.1).collect();
        write_binary_grid(&p, [2, 3, 4], 1e-5, [0.0; 3], &v).unwrap();
        let (h, back) = read_binary_grid(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(h.dims, [2, 3, 4]);
    }
}
