//! Report files: `<root>/<campaign_id>/report.txt` holds the canonical
//! report, `report.csv` its plot-ready companion.

use std::io;
use std::path::{Path, PathBuf};

use testbed_core::coordinator::campaign::CampaignReport;

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Text(#[from] testbed_core::text::TextError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub text: PathBuf,
    pub csv: PathBuf,
}

pub fn paths(root: &Path, campaign_id: &str) -> ReportPaths {
    let dir = root.join(campaign_id);
    ReportPaths { text: dir.join(REPORT_TXT), csv: dir.join(REPORT_CSV) }
}

/// Write both files; the text file is written last so its presence marks a
/// finished campaign.
pub fn write(root: &Path, campaign_id: &str, report: &CampaignReport) -> Result<ReportPaths, ReportError> {
    let p = paths(root, campaign_id);
    let text = report.to_text()?;
    let dir = p.text.parent().expect("report path has a parent");
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    std::fs::write(&p.csv, report.to_csv()).map_err(io_err(&p.csv))?;
    std::fs::write(&p.text, text).map_err(io_err(&p.text))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use testbed_core::coordinator::campaign::{self, CampaignConfig, CampaignSpec, RepeatabilityParams};

    #[test]
    fn files_land_under_the_campaign_id() {
        let cfg = CampaignConfig::new(3, CampaignSpec::Repeatability(RepeatabilityParams { n: 2, ..Default::default() }));
        let report = campaign::run(&cfg, &mut |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "17", &report).unwrap();
        assert_eq!(p.text, dir.path().join("17").join("report.txt"));
        let back = CampaignReport::from_text(&std::fs::read_to_string(&p.text).unwrap()).unwrap();
        assert_eq!(back, report);
        assert!(std::fs::read_to_string(&p.csv).unwrap().starts_with("k,x,y"));
    }
}
