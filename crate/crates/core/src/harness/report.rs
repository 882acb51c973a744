use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::EpisodeResult;

use super::config::RunConfig;
use super::{HarnessError, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub episode: String,
    pub result: EpisodeResult,
    pub termination: Termination,
}

/// Means of TL, NE, nDTW and SPL; OSR and SR as rates in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub tl: f64,
    pub ne: f64,
    pub ndtw: f64,
    pub osr: f64,
    pub sr: f64,
    pub spl: f64,
}

impl Aggregate {
    pub fn from_rows(rows: &[SuiteRow]) -> Aggregate {
        let n = rows.len();
        if n == 0 {
            return Aggregate::default();
        }
        let mean = |f: &dyn Fn(&EpisodeResult) -> f64| rows.iter().map(|r| f(&r.result)).sum::<f64>() / n as f64;
        let rate = |b: bool| if b { 1.0 } else { 0.0 };
        Aggregate {
            count: n,
            tl: mean(&|r| r.tl),
            ne: mean(&|r| r.ne),
            ndtw: mean(&|r| r.ndtw),
            osr: mean(&|r| rate(r.oracle_success)),
            sr: mean(&|r| rate(r.success)),
            spl: mean(&|r| r.spl),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub config: RunConfig,
    pub rows: Vec<SuiteRow>,
    pub aggregate: Aggregate,
}

impl SuiteReport {
    pub fn new(config: &RunConfig, rows: Vec<SuiteRow>) -> Self {
        SuiteReport {
            seed: config.noise.seed,
            config: config.clone(),
            aggregate: Aggregate::from_rows(&rows),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,tl,ne,ndtw,oracle_success,success,spl,semantic_success,decisions,primitives,termination\n");
        for r in &self.rows {
            let e = &r.result;
            let sem = e.semantic_success.map(|b| b.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.episode,
                e.tl,
                e.ne,
                e.ndtw,
                e.oracle_success,
                e.success,
                e.spl,
                sem,
                e.steps.decisions,
                e.steps.primitives,
                r.termination.name()
            );
        }
        s
    }

    /// Aligned table in the usual benchmark layout, rates as percentages.
    pub fn to_table(&self, method: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "Episode", "TL", "NE", "nDTW", "OSR", "SR", "SPL");
        for r in &self.rows {
            let e = &r.result;
            let pct = |b: bool| if b { 100.0 } else { 0.0 };
            let _ = writeln!(
                s,
                "{:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                r.episode,
                e.tl,
                e.ne,
                e.ndtw * 100.0,
                pct(e.oracle_success),
                pct(e.success),
                e.spl * 100.0
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            s,
            "{:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            method,
            a.tl,
            a.ne,
            a.ndtw * 100.0,
            a.osr * 100.0,
            a.sr * 100.0,
            a.spl * 100.0
        );
        s
    }

    pub fn write(&self, dir: &Path, method: &str) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let files = [
            ("report.csv", self.to_csv()),
            ("report.txt", self.to_table(method)),
            ("report.json", serde_json::to_string_pretty(self).expect("report serializes")),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))?;
        }
        Ok(())
    }
}
