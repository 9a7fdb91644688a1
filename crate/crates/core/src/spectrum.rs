//! Charge-basis transmon spectra.
//!
//! The Hamiltonian `4 E_C (n - n_g)^2 - E_J/2 (|n+1><n| + h.c.)` is assembled
//! as a symmetric tridiagonal matrix over `n = -n_cut..=n_cut` and diagonalized
//! with Sturm-sequence bisection. All energies are in GHz (energy / h).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::synth::ChargeTrace;

/// Default charge-basis truncation.
pub const DEFAULT_N_CUT: usize = 15;
/// Smallest accepted truncation.
pub const MIN_N_CUT: usize = 5;
/// Threshold below which a transition counts as charge insensitive (1 kHz).
pub const CHARGE_INSENSITIVE_GHZ: f64 = 1e-6;

const BISECTION_CAP: usize = 200;

/// Josephson and charging energies in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    pub e_j: f64,
    pub e_c: f64,
}

impl TransmonParams {
    /// `e_j = 0` is accepted so the pure charging limit can be evaluated.
    pub fn new(e_j: f64, e_c: f64) -> Result<Self> {
        let p = TransmonParams { e_j, e_c };
        p.validate()?;
        if !p.is_transmon_regime() {
            log::warn!("E_J/E_C = {:.3} is below the transmon regime (>= 10)", p.ratio());
        }
        Ok(p)
    }

    /// The tantalum device: E_J/h = 6.3366 GHz, E_C/h = 208.3 MHz.
    pub fn tantalum_device() -> Self {
        TransmonParams { e_j: 6.3366, e_c: 0.2083 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.e_j.is_finite() || self.e_j < 0.0 {
            return Err(invalid("e_j", format!("must be finite and >= 0, got {}", self.e_j)));
        }
        if !self.e_c.is_finite() || self.e_c <= 0.0 {
            return Err(invalid("e_c", format!("must be finite and > 0, got {}", self.e_c)));
        }
        Ok(())
    }

    pub fn ratio(&self) -> f64 {
        self.e_j / self.e_c
    }

    pub fn is_transmon_regime(&self) -> bool {
        self.ratio() >= 10.0
    }
}

/// Gate charge in units of 2e.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GateCharge(pub f64);

/// Offset charge in units of e, folded into `[0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct OffsetChargeE(f64);

/// Folds an offset charge (units of e) into `[0, 0.5]` using periodicity 1
/// and reflection symmetry.
pub fn fold_offset(q: f64) -> f64 {
    let r = q.rem_euclid(1.0);
    if r > 0.5 {
        1.0 - r
    } else {
        r
    }
}

impl OffsetChargeE {
    pub fn new(q: f64) -> Self {
        OffsetChargeE(fold_offset(q))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn to_gate_charge(self) -> GateCharge {
        GateCharge(self.0 / 2.0)
    }

    pub fn from_gate_charge(n_g: GateCharge) -> Self {
        OffsetChargeE::new(2.0 * n_g.0)
    }
}

/// Symmetric tridiagonal matrix stored as its diagonal and first off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(invalid("diag", "matrix must be non-empty"));
        }
        if off.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch { expected: diag.len() - 1, got: off.len() });
        }
        if let Some(i) = diag.iter().chain(off.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Tridiagonal { diag, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    fn count_below(&self, x: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            let e = self.off[i - 1];
            q = self.diag[i] - x - e * e / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }
}

/// Charge-basis Hamiltonian at gate charge `n_g` with basis `-n_cut..=n_cut`.
pub fn build_hamiltonian(params: &TransmonParams, n_g: GateCharge, n_cut: usize) -> Result<Tridiagonal> {
    params.validate()?;
    if !n_g.0.is_finite() {
        return Err(invalid("n_g", "must be finite"));
    }
    if n_cut < MIN_N_CUT {
        return Err(invalid("n_cut", format!("must be >= {MIN_N_CUT}, got {n_cut}")));
    }
    let dim = 2 * n_cut + 1;
    let diag = (0..dim)
        .map(|k| {
            let n = k as f64 - n_cut as f64;
            4.0 * params.e_c * (n - n_g.0).powi(2)
        })
        .collect();
    let off = vec![-params.e_j / 2.0; dim - 1];
    Tridiagonal::new(diag, off)
}

/// The `count` lowest eigenvalues of `h`, ascending.
pub fn eigenvalues(h: &Tridiagonal, count: usize) -> Result<Vec<f64>> {
    let n = h.dim();
    if count > n {
        return Err(invalid("count", format!("{count} exceeds matrix dimension {n}")));
    }
    let (lo, hi) = h.gershgorin();
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let pivmin = f64::MIN_POSITIVE.sqrt() * scale.max(1.0);
    let tol = 4.0 * f64::EPSILON * scale;

    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        // Smallest x with count_below(x) > k brackets the k-th eigenvalue.
        let (mut a, mut b) = (lo - tol, hi + tol);
        let mut converged = false;
        for _ in 0..BISECTION_CAP {
            let mid = 0.5 * (a + b);
            if b - a <= tol || mid <= a || mid >= b {
                converged = true;
                break;
            }
            if h.count_below(mid, pivmin) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        if !converged {
            return Err(Error::EigenNoConvergence { index: k, iterations: BISECTION_CAP });
        }
        out.push(0.5 * (a + b));
    }
    Ok(out)
}

/// Eigenvalues at every gate charge of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub n_g_grid: Vec<f64>,
    /// `levels[g][m]` is `E_m` at `n_g_grid[g]`, GHz.
    pub levels: Vec<Vec<f64>>,
    pub n_cut: usize,
    /// Largest change of any retained eigenvalue when `n_cut` grows by 5, GHz.
    pub convergence_delta: f64,
}

impl SpectrumTable {
    pub fn max_level(&self) -> usize {
        self.levels.first().map_or(0, |l| l.len().saturating_sub(1))
    }

    /// Transition frequency `E_j - E_i` at every grid point.
    pub fn transition(&self, i: usize, j: usize) -> Vec<f64> {
        self.levels.iter().map(|l| l[j] - l[i]).collect()
    }

    fn index_of(&self, n_g: f64) -> Option<usize> {
        self.n_g_grid.iter().position(|&g| (g - n_g).abs() < 1e-12)
    }

    /// CSV with header `n_g,E_0,...,E_L`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_g");
        for m in 0..=self.max_level() {
            s.push_str(&format!(",E_{m}"));
        }
        s.push('\n');
        for (g, l) in self.n_g_grid.iter().zip(&self.levels) {
            s.push_str(&format!("{g}"));
            for e in l {
                s.push_str(&format!(",{e}"));
            }
            s.push('\n');
        }
        s
    }
}

fn levels_at(params: &TransmonParams, n_g: f64, count: usize, n_cut: usize) -> Result<Vec<f64>> {
    let h = build_hamiltonian(params, GateCharge(n_g), n_cut)?;
    eigenvalues(&h, count).map_err(|e| Error::ScanPoint { n_g, source: Box::new(e) })
}

/// Levels `0..=max_level` over a grid of gate charges in `[0, 1]`.
pub fn spectrum_scan(
    params: &TransmonParams,
    n_g_grid: &[f64],
    max_level: usize,
    n_cut: usize,
) -> Result<SpectrumTable> {
    params.validate()?;
    if n_g_grid.is_empty() {
        return Err(invalid("n_g_grid", "must be non-empty"));
    }
    if let Some(g) = n_g_grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(invalid("n_g_grid", format!("value {g} outside [0, 1]")));
    }
    if max_level + 3 > 2 * n_cut + 1 {
        return Err(invalid("max_level", format!("max_level + 3 must not exceed basis size {}", 2 * n_cut + 1)));
    }
    let count = max_level + 1;
    let mut levels = Vec::with_capacity(n_g_grid.len());
    let mut delta: f64 = 0.0;
    for &g in n_g_grid {
        let l = levels_at(params, g, count, n_cut)?;
        let wider = levels_at(params, g, count, n_cut + 5)?;
        for (a, b) in l.iter().zip(&wider) {
            delta = delta.max((a - b).abs());
        }
        levels.push(l);
    }
    if delta >= CHARGE_INSENSITIVE_GHZ {
        log::warn!("n_cut = {n_cut} not converged: levels move by {delta:e} GHz at n_cut + 5");
    }
    Ok(SpectrumTable { n_g_grid: n_g_grid.to_vec(), levels, n_cut, convergence_delta: delta })
}

/// Uniform grid of `points` gate charges covering `[0, 1]`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|k| k as f64 / (points - 1) as f64).collect(),
    }
}

/// Mean frequency and dispersion of transition `i -> j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityBands {
    pub i: usize,
    pub j: usize,
    /// Mean transition frequency, GHz.
    pub f_bar: f64,
    /// Dispersion amplitude, GHz, reported non-negative.
    pub eps: f64,
    /// Sign of `f(0) - f(0.5)` before the amplitude was made non-negative.
    pub raw_sign: f64,
    /// Largest deviation of the scanned frequency from the cosine model, GHz.
    pub cosine_residual: f64,
}

impl ParityBands {
    /// The two parity-band frequencies `f_bar +/- eps cos(2 pi n_g)`.
    pub fn band_frequencies(&self, q: OffsetChargeE) -> (f64, f64) {
        let c = self.eps * (2.0 * PI * q.to_gate_charge().0).cos();
        (self.f_bar + c, self.f_bar - c)
    }

    /// Signed splitting `f+ - f-` at offset `q`.
    pub fn splitting(&self, q: OffsetChargeE) -> f64 {
        2.0 * self.eps * (2.0 * PI * q.to_gate_charge().0).cos()
    }
}

pub fn parity_bands(table: &SpectrumTable, i: usize, j: usize) -> Result<ParityBands> {
    if i >= j {
        return Err(invalid("i", format!("need i < j, got ({i}, {j})")));
    }
    if j > table.max_level() {
        return Err(invalid("j", format!("level {j} beyond table maximum {}", table.max_level())));
    }
    let (zero, half) = match (table.index_of(0.0), table.index_of(0.5)) {
        (Some(z), Some(h)) if table.index_of(0.25).is_some() => (z, h),
        _ => return Err(invalid("table", "grid must contain n_g = 0, 0.25 and 0.5")),
    };
    let f = table.transition(i, j);
    let f_bar = 0.5 * (f[zero] + f[half]);
    let signed = 0.5 * (f[zero] - f[half]);
    let cosine_residual = table
        .n_g_grid
        .iter()
        .zip(&f)
        .map(|(g, fv)| (fv - (f_bar + signed * (2.0 * PI * g).cos())).abs())
        .fold(0.0, f64::max);
    Ok(ParityBands { i, j, f_bar, eps: signed.abs(), raw_sign: if signed < 0.0 { -1.0 } else { 1.0 }, cosine_residual })
}

/// Offset recovered from a band splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub q: OffsetChargeE,
    /// True when `|delta_f| > 2 eps` and the ratio was clamped to `[-1, 1]`.
    pub clamped: bool,
}

/// Inverts a measured splitting `delta_f` (GHz) to an offset charge.
pub fn offset_from_splitting(delta_f: f64, bands: &ParityBands) -> Result<Inversion> {
    if bands.eps == 0.0 {
        return Err(Error::NoInversion);
    }
    if !delta_f.is_finite() {
        return Err(invalid("delta_f", "must be finite"));
    }
    let ratio = delta_f / (2.0 * bands.eps);
    let clamped = !(-1.0..=1.0).contains(&ratio);
    let q = ratio.clamp(-1.0, 1.0).acos() / PI;
    Ok(Inversion { q: OffsetChargeE::new(q), clamped })
}

/// Inverts a whole series and counts clamping events.
pub fn offsets_from_splittings(delta_f: &[f64], bands: &ParityBands) -> Result<(Vec<OffsetChargeE>, usize)> {
    let mut clamps = 0;
    let mut out = Vec::with_capacity(delta_f.len());
    for &d in delta_f {
        let inv = offset_from_splitting(d, bands)?;
        clamps += inv.clamped as usize;
        out.push(inv.q);
    }
    if clamps > 0 {
        log::info!("{clamps} of {} splittings clamped to the band edge", delta_f.len());
    }
    Ok((out, clamps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetCorrelation {
    pub pairs: Vec<(f64, f64)>,
    pub pearson: f64,
}

/// Pairs each sample of `a` with the nearest-in-time sample of `b` (within
/// `window` seconds) and reports the Pearson correlation of the pairs.
pub fn correlate_offsets(a: &ChargeTrace, b: &ChargeTrace, window: f64) -> Result<OffsetCorrelation> {
    if !(window >= 0.0) {
        return Err(invalid("window", "must be >= 0"));
    }
    let mut pairs = Vec::new();
    for (&t, &qa) in a.times.iter().zip(&a.q) {
        let k = b.times.partition_point(|&tb| tb < t);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&j| j < b.times.len())
            .min_by(|&x, &y| (b.times[x] - t).abs().total_cmp(&(b.times[y] - t).abs()).then(x.cmp(&y)));
        if let Some(j) = best {
            if (b.times[j] - t).abs() <= window {
                pairs.push((qa, b.q[j]));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let pearson = pearson(&pairs)?;
    Ok(OffsetCorrelation { pairs, pearson })
}

fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(x, y), &(a, b)| (x + a / n, y + b / n));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(invalid("trace", "zero variance, correlation undefined"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
