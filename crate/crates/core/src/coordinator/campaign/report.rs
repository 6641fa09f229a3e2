use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{CampaignConfig, CampaignKind, GridResults, RepeatabilityResults, SyncResults};
use crate::text::TextError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignResults {
    Repeatability(RepeatabilityResults),
    Sync(SyncResults),
    Grid(GridResults),
}

/// Structured outcome of one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub kind: CampaignKind,
    pub seed: u64,
    /// False if the campaign aborted; `error` says why and `results` hold
    /// what was measured up to that point.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub virtual_duration_s: f64,
    pub config: CampaignConfig,
    pub results: CampaignResults,
}

impl CampaignReport {
    /// The report file: canonical structured text, one trailing newline.
    pub fn to_text(&self) -> Result<String, TextError> {
        let mut s = crate::text::to_text_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_text(s: &str) -> Result<Self, TextError> {
        crate::text::from_text(s)
    }

    /// Plot-ready CSV companion of the report.
    pub fn to_csv(&self) -> String {
        match &self.results {
            CampaignResults::Sync(r) => r.cdf_csv(),
            CampaignResults::Repeatability(r) => {
                let mut s = String::from("k,x,y,yaw_deg,error_m,yaw_error_deg\n");
                for p in &r.samples {
                    let _ = writeln!(s, "{},{},{},{},{},{}", p.k, p.measured.x, p.measured.y, p.measured.yaw, p.error_m, p.yaw_error_deg);
                }
                s
            }
            CampaignResults::Grid(r) => {
                let mut s = String::from("grid,point,record,x,y,z,radius_m\n");
                for p in &r.points {
                    let row = |s: &mut String, rec: &str, v: [f64; 3], radius: String| {
                        let _ = writeln!(s, "{},{},{rec},{},{},{},{radius}", p.grid, p.index, v[0], v[1], v[2]);
                    };
                    row(&mut s, "truth", p.truth, p.cep95.map(|c| format!("{c}")).unwrap_or_default());
                    for e in &p.estimates {
                        row(&mut s, "estimate", *e, String::new());
                    }
                    if let Some(m) = p.median {
                        row(&mut s, "median", m, p.median_offset.map(|c| format!("{c}")).unwrap_or_default());
                    }
                }
                s
            }
        }
    }
}
