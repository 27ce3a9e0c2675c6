//! Report bundles: one schema-versioned JSON document with sorted keys
//! plus flat CSV tables for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::report::{CertificateReport, Status};
use crate::resolvent::{CircleScanRow, RegionScanRow};
use crate::stability::{CheckEntry, DecayTable, QuadratureResult, StabilityVerdict, ThresholdResult, Verdict, Witness};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Overall result of a run, mapped onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Certified,
    Preserved,
    Refuted,
    Violated,
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Certified | Outcome::Preserved => 0,
            Outcome::Refuted | Outcome::Violated => 2,
            Outcome::Inconclusive => 3,
        }
    }

    pub fn from_status(s: Status) -> Self {
        match s {
            Status::Certified => Outcome::Certified,
            Status::Refuted => Outcome::Refuted,
            Status::Inconclusive => Outcome::Inconclusive,
        }
    }

    pub fn from_verdict(v: Verdict) -> Self {
        match v {
            Verdict::Preserved => Outcome::Preserved,
            Verdict::Violated => Outcome::Violated,
            Verdict::Inconclusive => Outcome::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub scenario: String,
    pub grid_hashes: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            scenario: scenario.to_string(),
            grid_hashes: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub command: String,
    pub outcome: Outcome,
    pub verdict: Option<Verdict>,
    pub checks: Vec<CheckEntry>,
    pub reports: Vec<CertificateReport>,
    pub quadrature: Vec<QuadratureResult>,
    pub decay: Vec<DecayTable>,
    pub constants: BTreeMap<String, f64>,
    pub witnesses: Vec<Witness>,
    pub threshold: Option<ThresholdResult>,
    pub provenance: Provenance,
    #[serde(skip)]
    pub circle_scan: Vec<CircleScanRow>,
    #[serde(skip)]
    pub region_scans: BTreeMap<usize, Vec<RegionScanRow>>,
}

impl ReportBundle {
    pub fn new(command: &str, provenance: Provenance) -> Self {
        ReportBundle {
            schema_version: BUNDLE_SCHEMA_VERSION,
            command: command.to_string(),
            outcome: Outcome::Inconclusive,
            verdict: None,
            checks: Vec::new(),
            reports: Vec::new(),
            quadrature: Vec::new(),
            decay: Vec::new(),
            constants: BTreeMap::new(),
            witnesses: Vec::new(),
            threshold: None,
            provenance,
            circle_scan: Vec::new(),
            region_scans: BTreeMap::new(),
        }
    }

    /// Takes over everything a stability run produced.
    pub fn absorb(&mut self, v: StabilityVerdict) {
        self.outcome = Outcome::from_verdict(v.verdict);
        self.verdict = Some(v.verdict);
        self.checks = v.checks;
        self.reports = v.reports;
        self.quadrature = v.quadrature;
        self.decay = v.decay;
        self.constants = v.constants;
        self.witnesses = v.witnesses;
        self.circle_scan = v.circle_scan;
        self.provenance.grid_hashes.extend(v.grid_hashes);
    }

    /// Pretty JSON with every object's keys sorted.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("bundle serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("bundle serializes");
        s.push('\n');
        s
    }

    /// Writes `bundle.json` and the CSV tables that have rows; returns the
    /// written paths.
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        put("bundle.json".into(), self.to_json())?;
        if !self.circle_scan.is_empty() {
            let mut body = String::from("phi,nearest_k,dist,resnorm,weighted\n");
            for r in &self.circle_scan {
                let _ = writeln!(body, "{},{},{},{},{}", r.phi, r.nearest_k, r.dist, r.resnorm, r.weighted);
            }
            put("circle_scan.csv".into(), body)?;
        }
        for (k, rows) in &self.region_scans {
            if rows.is_empty() {
                continue;
            }
            let mut body = String::from("re,im,resnorm,smoothed\n");
            for r in rows {
                let _ = writeln!(body, "{},{},{},{}", r.re, r.im, r.resnorm, r.smoothed);
            }
            put(format!("region_scan_k{k}.csv"), body)?;
        }
        for q in &self.quadrature {
            let mut body = String::from("r,value,weighted\n");
            for r in &q.rows {
                let _ = writeln!(body, "{},{},{}", r.r, r.value, r.weighted);
            }
            put(format!("quadrature_{}.csv", q.name), body)?;
        }
        for d in &self.decay {
            let mut body = String::from("n,norm\n");
            for s in &d.samples {
                let _ = writeln!(body, "{},{}", s.n, s.norm);
            }
            put(format!("decay_{}.csv", d.name), body)?;
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bundle_writes_only_json() {
        let dir = tempfile::tempdir().unwrap();
        let b = ReportBundle::new("certify", Provenance::new("none", 0));
        let files = b.emit(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(v["reports"], serde_json::json!([]));
        assert_eq!(v["schema_version"], 1);
    }

    #[test]
    fn keys_are_sorted() {
        let json = ReportBundle::new("scan", Provenance::new("x", 1)).to_json();
        let top: Vec<&str> = json
            .lines()
            .filter(|l| l.starts_with("  \"") )
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = top.clone();
        sorted.sort();
        assert_eq!(top, sorted);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Outcome::Preserved.exit_code(), 0);
        assert_eq!(Outcome::Violated.exit_code(), 2);
        assert_eq!(Outcome::Inconclusive.exit_code(), 3);
    }
}
