//! Run reports: the per-episode and per-update metric rows a trainer emits,
//! serialized to CSV byte-for-byte deterministically.

/// One report row. Fields that don't apply to a row kind stay `None` and
/// serialize as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportRow {
    Episode {
        step: u64,
        /// 1-based episode counter.
        episode: u64,
        episode_return: f64,
    },
    Update {
        step: u64,
        j_pi: Option<f64>,
        j_q: Option<f64>,
        j_v: Option<f64>,
        lyap_risk: Option<f64>,
        cert_risk: Option<f64>,
        violation_fraction: Option<f64>,
    },
}

impl ReportRow {
    pub fn step(&self) -> u64 {
        match self {
            ReportRow::Episode { step, .. } | ReportRow::Update { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str =
    "kind,step,episode,episode_return,j_pi,j_q,j_v,lyap_risk,cert_risk,violation_fraction";

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

impl RunReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ReportRow) {
        debug_assert!(
            self.rows.last().map_or(true, |last| last.step() <= row.step()),
            "report rows must be pushed in step order"
        );
        self.rows.push(row);
    }

    pub fn last_episode_return(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| match r {
            ReportRow::Episode { episode_return, .. } => Some(*episode_return),
            _ => None,
        })
    }

    /// Returns of the final `n` completed episodes, oldest first.
    pub fn tail_episode_returns(&self, n: usize) -> Vec<f64> {
        let mut tail: Vec<f64> = self
            .rows
            .iter()
            .rev()
            .filter_map(|r| match r {
                ReportRow::Episode { episode_return, .. } => Some(*episode_return),
                _ => None,
            })
            .take(n)
            .collect();
        tail.reverse();
        tail
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for row in &self.rows {
            match row {
                ReportRow::Episode { step, episode, episode_return } => {
                    out.push_str(&format!("episode,{step},{episode},{episode_return},,,,,,\n"));
                }
                ReportRow::Update {
                    step,
                    j_pi,
                    j_q,
                    j_v,
                    lyap_risk,
                    cert_risk,
                    violation_fraction,
                } => {
                    out.push_str(&format!(
                        "update,{step},,,{},{},{},{},{},{}\n",
                        cell(*j_pi),
                        cell(*j_q),
                        cell(*j_v),
                        cell(*lyap_risk),
                        cell(*cert_risk),
                        cell(*violation_fraction),
                    ));
                }
            }
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let mut r = RunReport::new();
        r.push(ReportRow::Episode { step: 200, episode: 1, episode_return: -1312.5 });
        r.push(ReportRow::Update {
            step: 200,
            j_pi: Some(0.25),
            j_q: Some(1.5),
            j_v: Some(0.75),
            lyap_risk: Some(0.01),
            cert_risk: None,
            violation_fraction: None,
        });
        r.push(ReportRow::Update {
            step: 5000,
            j_pi: None,
            j_q: None,
            j_v: None,
            lyap_risk: None,
            cert_risk: Some(0.002),
            violation_fraction: Some(0.01),
        });
        r
    }

    #[test]
    fn csv_layout_and_blanks() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines[1], "episode,200,1,-1312.5,,,,,,");
        assert_eq!(lines[2], "update,200,,,0.25,1.5,0.75,0.01,,");
        assert_eq!(lines[3], "update,5000,,,,,,,0.002,0.01");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        assert_eq!(sample().to_csv().into_bytes(), sample().to_csv().into_bytes());
    }

    #[test]
    fn tail_returns_in_order() {
        let mut r = RunReport::new();
        for (i, ret) in [(1u64, -3.0), (2, -2.0), (3, -1.0)] {
            r.push(ReportRow::Episode { step: i * 10, episode: i, episode_return: ret });
        }
        assert_eq!(r.tail_episode_returns(2), vec![-2.0, -1.0]);
        assert_eq!(r.tail_episode_returns(10), vec![-3.0, -2.0, -1.0]);
        assert_eq!(r.last_episode_return(), Some(-1.0));
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(RunReport::new().to_csv(), format!("{REPORT_HEADER}\n"));
    }
}
