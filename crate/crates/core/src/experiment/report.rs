//! Run reports. CSV files hold full-precision numbers; the text report is
//! fixed-width and rounded. Neither contains timings, so reruns with the
//! same seed produce identical files.
//!
//! `report.csv` columns: `method,kind,accuracy,precision`
//! `cross_error.csv` columns: `expert,domain,error`
//! `divergence.csv` columns: `domain_a,domain_b,lower_bound`
//! `merge_history.csv` columns: `epoch,loss,nll,gate,mask`

use std::fmt;
use std::fmt::Write as _;

use super::ExperimentConfig;
use crate::baselines::CrossErrorMatrix;
use crate::error::{Error, Result};
use crate::merge::MergeEpoch;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Expert,
    Baseline,
    Merged,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::Expert => "expert",
            MethodKind::Baseline => "baseline",
            MethodKind::Merged => "merged",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub kind: MethodKind,
    pub accuracy: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceRow {
    pub a: String,
    pub b: String,
    /// Plug-in estimate; the true divergence is a supremum, so this bounds
    /// it from below.
    pub lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub target: String,
    pub methods: Vec<MethodRow>,
    pub cross_error: CrossErrorMatrix,
    pub divergence: Vec<DivergenceRow>,
    pub config: ExperimentConfig,
}

fn csv_string(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w).map_err(|e| Error::invalid(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub(crate) fn history_csv(history: &[MergeEpoch]) -> Result<String> {
    csv_string(|w| {
        w.write_record(["epoch", "loss", "nll", "gate", "mask"])?;
        for h in history {
            w.write_record([
                h.epoch.to_string(),
                h.loss.to_string(),
                h.nll.to_string(),
                h.gate.to_string(),
                h.mask.to_string(),
            ])?;
        }
        Ok(())
    })
}

impl RunReport {
    pub fn method(&self, name: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn experts(&self) -> impl Iterator<Item = &MethodRow> {
        self.methods.iter().filter(|m| m.kind == MethodKind::Expert)
    }

    pub fn methods_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record(["method", "kind", "accuracy", "precision"])?;
            for m in &self.methods {
                w.write_record([
                    m.method.clone(),
                    m.kind.to_string(),
                    m.accuracy.to_string(),
                    m.precision.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    pub fn cross_error_csv(&self) -> Result<String> {
        let m = &self.cross_error;
        csv_string(|w| {
            w.write_record(["expert", "domain", "error"])?;
            for (i, e) in m.experts.iter().enumerate() {
                for (j, d) in m.domains.iter().enumerate() {
                    w.write_record([e.clone(), d.clone(), m.errors[(i, j)].to_string()])?;
                }
            }
            Ok(())
        })
    }

    pub fn divergence_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record(["domain_a", "domain_b", "lower_bound"])?;
            for d in &self.divergence {
                w.write_record([d.a.clone(), d.b.clone(), d.lower_bound.to_string()])?;
            }
            Ok(())
        })
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "target domain: {}", self.target);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<22} {:<9} {:>8} {:>8}", "method", "kind", "acc %", "pre %");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<22} {:<9} {:>8.2} {:>8.2}",
                m.method,
                m.kind.to_string(),
                100.0 * m.accuracy,
                100.0 * m.precision
            );
        }

        let c = &self.cross_error;
        let _ = writeln!(out);
        let _ = writeln!(out, "cross-domain error (row: expert, column: domain)");
        let _ = write!(out, "{:<12}", "");
        for d in &c.domains {
            let _ = write!(out, " {d:>8}");
        }
        let _ = writeln!(out);
        for (i, e) in c.experts.iter().enumerate() {
            let _ = write!(out, "{e:<12}");
            for j in 0..c.domains.len() {
                let _ = write!(out, " {:>8.4}", c.errors[(i, j)]);
            }
            let _ = writeln!(out);
        }

        let _ = writeln!(out);
        let _ = writeln!(out, "prediction divergence between domains (lower-bound estimate)");
        for d in &self.divergence {
            let _ = writeln!(out, "{:>4} {:>4} {:>10.6}", d.a, d.b, d.lower_bound);
        }

        let _ = writeln!(out);
        let _ = writeln!(out, "config");
        out.push_str(&self.config.to_toml()?);
        Ok(out)
    }
}
