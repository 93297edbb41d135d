use std::fmt::Write as _;

use super::MetricsError;

/// Column headers of the evaluation table, in order.
pub const TABLE_COLUMNS: [&str; 6] = ["JSD↓", "Coverage↑", "MMD↓", "NELBO↓", "KL↓", "Reconst Loss↓"];

/// Mean loss terms over the evaluated clouds. `nelbo` is always `kl + recon`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStats {
    pub nelbo: f64,
    pub kl: f64,
    pub recon: f64,
    /// Reconstruction Chamfer distance divided by the point count.
    pub recon_per_point: f64,
}

impl LossStats {
    pub fn new(kl: f64, recon: f64, n_points: usize) -> Self {
        Self {
            nelbo: kl + recon,
            kl,
            recon,
            recon_per_point: recon / n_points as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub jsd: f64,
    pub coverage: f64,
    pub mmd: f64,
    pub losses: Option<LossStats>,
}

impl MetricsReport {
    /// Whether `nelbo = kl + recon` holds to `1e-6` relative (trivially true
    /// for generation reports).
    pub fn loss_identity_holds(&self) -> bool {
        self.losses.is_none_or(|l| {
            (l.nelbo - (l.kl + l.recon)).abs() < 1e-6 * l.nelbo.abs().max(1.0)
        })
    }

    /// One `key=value` per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "jsd={}", self.jsd);
        let _ = writeln!(out, "coverage={}", self.coverage);
        let _ = writeln!(out, "mmd={}", self.mmd);
        if let Some(l) = &self.losses {
            let _ = writeln!(out, "nelbo={}", l.nelbo);
            let _ = writeln!(out, "kl={}", l.kl);
            let _ = writeln!(out, "recon={}", l.recon);
            let _ = writeln!(out, "recon_per_point={}", l.recon_per_point);
        }
        out
    }

    pub fn from_key_values(text: &str) -> Result<Self, MetricsError> {
        let mut get = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MetricsError::BadReport(format!("no `=` in `{line}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| MetricsError::BadReport(format!("bad number in `{line}`")))?;
            get.insert(k.trim().to_string(), v);
        }
        let need = |k: &str| {
            get.get(k)
                .copied()
                .ok_or_else(|| MetricsError::BadReport(format!("missing `{k}`")))
        };
        let losses = if get.contains_key("nelbo") {
            Some(LossStats {
                nelbo: need("nelbo")?,
                kl: need("kl")?,
                recon: need("recon")?,
                recon_per_point: need("recon_per_point")?,
            })
        } else {
            None
        };
        Ok(Self {
            jsd: need("jsd")?,
            coverage: need("coverage")?,
            mmd: need("mmd")?,
            losses,
        })
    }

    /// Aligned table with one row per `(label, report)`. Loss cells are blank
    /// for generation reports.
    pub fn table(rows: &[(String, MetricsReport)]) -> String {
        let mut cells: Vec<Vec<String>> = vec![std::iter::once("Model".to_string())
            .chain(TABLE_COLUMNS.iter().map(|s| s.to_string()))
            .collect()];
        for (label, r) in rows {
            let mut row = vec![label.clone(), fmt5(r.jsd), fmt5(r.coverage), fmt5(r.mmd)];
            match &r.losses {
                Some(l) => row.extend([fmt5(l.nelbo), fmt5(l.kl), fmt5(l.recon)]),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        }
        out
    }
}

fn fmt5(v: f64) -> String {
    format!("{v:.5}")
}
