//! CSV readers and writers for every tabular artifact.
//!
//! Files start with optional `#key=value` lines carrying metadata, then a
//! header row. Floats are written in shortest round-trip form, so reading a
//! file back reproduces the values bit for bit.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::classify::{LabelPath, TransitionMatrix};
use crate::error::{Error, Result};
use crate::spectral::Psd;
use crate::spectrum::SpectrumTable;
use crate::synth::{ChargeTrace, Parity, ShotRecord};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Line number of each row, for diagnostics.
    lines: Vec<usize>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut meta = BTreeMap::new();
        let mut header = None;
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(m) = line.strip_prefix('#') {
                let (k, v) = m
                    .split_once('=')
                    .ok_or_else(|| Error::Parse { line: n + 1, reason: "metadata line must be #key=value".into() })?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            match &header {
                None => header = Some(cells),
                Some(h) => {
                    if cells.len() != h.len() {
                        return Err(Error::Parse {
                            line: n + 1,
                            reason: format!("expected {} fields, found {}", h.len(), cells.len()),
                        });
                    }
                    rows.push(cells);
                    lines.push(n + 1);
                }
            }
        }
        Ok(Table {
            meta,
            header: header.ok_or(Error::Parse { line: 0, reason: "missing header".into() })?,
            rows,
            lines,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 0, reason: format!("missing column `{name}`") })
    }

    fn cell<T: FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let raw = &self.rows[row][col];
        raw.parse().map_err(|_| Error::Parse {
            line: self.lines[row],
            reason: format!("`{raw}` is not a valid {}", self.header[col]),
        })
    }

    fn meta_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw =
            self.meta.get(key).ok_or_else(|| Error::Parse { line: 0, reason: format!("missing metadata `{key}`") })?;
        raw.parse().map_err(|_| Error::Parse { line: 0, reason: format!("metadata `{key}` = `{raw}` is malformed") })
    }
}

fn meta_lines(pairs: &[(&str, String)]) -> String {
    let mut s = format!("#format_version={FORMAT_VERSION}\n");
    for (k, v) in pairs {
        s.push_str(&format!("#{k}={v}\n"));
    }
    s
}

pub fn shots_to_csv(shots: &[ShotRecord]) -> String {
    let mut s = meta_lines(&[]);
    s.push_str("t,i,q,band,truth_state\n");
    for r in shots {
        let band = match r.band {
            Parity::Even => "even",
            Parity::Odd => "odd",
        };
        let truth = r.truth_state.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{band},{truth}\n", r.t, r.i_volt, r.q_volt));
    }
    s
}

pub fn shots_from_csv(text: &str) -> Result<Vec<ShotRecord>> {
    let t = Table::parse(text)?;
    let (ct, ci, cq, cb, cs) =
        (t.column("t")?, t.column("i")?, t.column("q")?, t.column("band")?, t.column("truth_state")?);
    (0..t.rows.len())
        .map(|r| {
            let band = match t.rows[r][cb].as_str() {
                "even" => Parity::Even,
                "odd" => Parity::Odd,
                other => return Err(Error::Parse { line: t.lines[r], reason: format!("unknown band `{other}`") }),
            };
            Ok(ShotRecord {
                t: t.cell(r, ct)?,
                i_volt: t.cell(r, ci)?,
                q_volt: t.cell(r, cq)?,
                band,
                truth_state: if t.rows[r][cs].is_empty() { None } else { Some(t.cell(r, cs)?) },
            })
        })
        .collect()
}

pub fn charge_trace_to_csv(trace: &ChargeTrace) -> String {
    let mut s = meta_lines(&[("temperature", format!("{}", trace.temperature))]);
    s.push_str("t,q,truth\n");
    for (k, (t, q)) in trace.times.iter().zip(&trace.q).enumerate() {
        let truth = trace.truth.as_ref().map(|v| v[k].to_string()).unwrap_or_default();
        s.push_str(&format!("{t},{q},{truth}\n"));
    }
    s
}

pub fn charge_trace_from_csv(text: &str) -> Result<ChargeTrace> {
    let t = Table::parse(text)?;
    let (ct, cq, cs) = (t.column("t")?, t.column("q")?, t.column("truth")?);
    let mut times = Vec::with_capacity(t.rows.len());
    let mut q = Vec::with_capacity(t.rows.len());
    let mut truth = Vec::new();
    for r in 0..t.rows.len() {
        times.push(t.cell(r, ct)?);
        q.push(t.cell(r, cq)?);
        if !t.rows[r][cs].is_empty() {
            truth.push(t.cell(r, cs)?);
        }
    }
    let truth = if truth.is_empty() {
        None
    } else if truth.len() == times.len() {
        Some(truth)
    } else {
        return Err(Error::Parse { line: 0, reason: "truth column is only partly filled".into() });
    };
    Ok(ChargeTrace { times, q, temperature: t.meta_value("temperature")?, truth })
}

pub fn psd_to_csv(psd: &Psd) -> String {
    let mut s = meta_lines(&[
        ("segments", psd.segments.to_string()),
        ("segment_len", psd.segment_len.to_string()),
        ("dt", format!("{}", psd.dt)),
    ]);
    s.push_str(&psd.to_csv());
    s
}

pub fn psd_from_csv(text: &str) -> Result<Psd> {
    let t = Table::parse(text)?;
    let (cf, cp) = (t.column("freq_hz")?, t.column("power")?);
    Ok(Psd {
        freqs: (0..t.rows.len()).map(|r| t.cell(r, cf)).collect::<Result<_>>()?,
        power: (0..t.rows.len()).map(|r| t.cell(r, cp)).collect::<Result<_>>()?,
        segments: t.meta_value("segments")?,
        segment_len: t.meta_value("segment_len")?,
        dt: t.meta_value("dt")?,
    })
}

pub fn label_path_to_csv(path: &LabelPath) -> String {
    let mut s = meta_lines(&[("log_likelihood", format!("{}", path.log_likelihood))]);
    s.push_str("t,state\n");
    for (t, st) in path.times.iter().zip(&path.states) {
        s.push_str(&format!("{t},{st}\n"));
    }
    s
}

pub fn label_path_from_csv(text: &str) -> Result<LabelPath> {
    let t = Table::parse(text)?;
    let (ct, cs) = (t.column("t")?, t.column("state")?);
    Ok(LabelPath {
        times: (0..t.rows.len()).map(|r| t.cell(r, ct)).collect::<Result<_>>()?,
        states: (0..t.rows.len()).map(|r| t.cell(r, cs)).collect::<Result<_>>()?,
        log_likelihood: t.meta_value("log_likelihood")?,
    })
}

pub fn spectrum_to_csv(table: &SpectrumTable) -> String {
    let mut s = meta_lines(&[
        ("n_cut", table.n_cut.to_string()),
        ("convergence_delta", format!("{}", table.convergence_delta)),
    ]);
    s.push_str(&table.to_csv());
    s
}

pub fn spectrum_from_csv(text: &str) -> Result<SpectrumTable> {
    let t = Table::parse(text)?;
    let cg = t.column("n_g")?;
    let levels_cols: Vec<usize> = (0..).map_while(|m| t.header.iter().position(|h| *h == format!("E_{m}"))).collect();
    let mut n_g_grid = Vec::new();
    let mut levels = Vec::new();
    for r in 0..t.rows.len() {
        n_g_grid.push(t.cell(r, cg)?);
        levels.push(levels_cols.iter().map(|&c| t.cell(r, c)).collect::<Result<Vec<f64>>>()?);
    }
    Ok(SpectrumTable {
        n_g_grid,
        levels,
        n_cut: t.meta_value("n_cut")?,
        convergence_delta: t.meta_value("convergence_delta")?,
    })
}

/// Probabilities as `from,to,probability,count` rows.
pub fn transition_matrix_to_csv(m: &TransitionMatrix) -> String {
    let mut pairs = vec![("flagged_rows", m.flagged_rows.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" "))];
    if let Some(t) = m.temperature {
        pairs.push(("temperature", format!("{t}")));
    }
    let mut s = meta_lines(&pairs);
    s.push_str("from,to,probability,count\n");
    for (i, row) in m.probs.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            s.push_str(&format!("{i},{j},{p},{}\n", m.counts[i][j]));
        }
    }
    s
}

pub fn transition_matrix_from_csv(text: &str) -> Result<TransitionMatrix> {
    let t = Table::parse(text)?;
    let (cf, ct, cp, cc) = (t.column("from")?, t.column("to")?, t.column("probability")?, t.column("count")?);
    let n = (t.rows.len() as f64).sqrt().round() as usize;
    if n * n != t.rows.len() {
        return Err(Error::Parse { line: 0, reason: "matrix rows do not form a square".into() });
    }
    let mut probs = vec![vec![0.0; n]; n];
    let mut counts = vec![vec![0u64; n]; n];
    for r in 0..t.rows.len() {
        let (i, j): (usize, usize) = (t.cell(r, cf)?, t.cell(r, ct)?);
        if i >= n || j >= n {
            return Err(Error::Parse { line: t.lines[r], reason: "index out of range".into() });
        }
        probs[i][j] = t.cell(r, cp)?;
        counts[i][j] = t.cell(r, cc)?;
    }
    let flagged_rows = t
        .meta
        .get("flagged_rows")
        .map(|s| {
            s.split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::Parse { line: 0, reason: "bad flagged row".into() }))
                .collect()
        })
        .transpose()?
        .unwrap_or_default();
    let temperature = if t.meta.contains_key("temperature") { Some(t.meta_value("temperature")?) } else { None };
    let reach = crate::classify::NEIGHBOR_REACH;
    let mass = |pick: &dyn Fn(usize, usize) -> bool| -> Vec<f64> {
        probs
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().filter(|(j, _)| pick(i, *j)).map(|(_, p)| p).sum())
            .collect()
    };
    let neighbor_mass = mass(&|i, j| i != j && i.abs_diff(j) <= reach);
    let scramble_mass = mass(&|i, j| i.abs_diff(j) > reach);
    Ok(TransitionMatrix { probs, counts, flagged_rows, neighbor_mass, scramble_mass, temperature })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shots_round_trip() {
        let shots = vec![
            ShotRecord { t: 0.1 + 0.2, i_volt: -1.0 / 3.0, q_volt: 1e-300, band: Parity::Even, truth_state: Some(2) },
            ShotRecord { t: 5e-5, i_volt: 0.0, q_volt: -0.0, band: Parity::Odd, truth_state: None },
        ];
        let back = shots_from_csv(&shots_to_csv(&shots)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in shots.iter().zip(&back) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.i_volt.to_bits(), b.i_volt.to_bits());
            assert_eq!(a.q_volt.to_bits(), b.q_volt.to_bits());
            assert_eq!(a.truth_state, b.truth_state);
        }
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "#format_version=1\nt,state\n0,1\n1,x\n";
        match label_path_from_csv(text) {
            Err(Error::Parse { line, .. }) => assert!(line == 4 || line == 0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Table::parse("a,b\n1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn transition_round_trip() {
        let path = LabelPath { times: vec![0.0, 1.0, 2.0, 3.0], states: vec![0, 1, 1, 0], log_likelihood: -1.5 };
        let mut m = crate::classify::transition_matrix(&path, 3).unwrap();
        m.temperature = Some(0.05);
        let back = transition_matrix_from_csv(&transition_matrix_to_csv(&m)).unwrap();
        assert_eq!(back, m);
    }
}
