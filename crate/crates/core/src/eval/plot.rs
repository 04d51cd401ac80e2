use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{quantile, EntropyCurves, EpisodeRecord, EvalError};
use crate::navgraph::{all_pairs_stats, visitation_counts, DistanceMatrix, NavGraph};
use crate::trainer::MetricsRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LearningCurve,
    RatioHistogram,
    PathScatter,
    VisitationHeatmap,
    LengthHistogram,
    EntropyCurves,
}

impl PlotKind {
    pub const ALL: [PlotKind; 6] = [
        PlotKind::LearningCurve,
        PlotKind::RatioHistogram,
        PlotKind::PathScatter,
        PlotKind::VisitationHeatmap,
        PlotKind::LengthHistogram,
        PlotKind::EntropyCurves,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::LearningCurve => "learning_curve",
            PlotKind::RatioHistogram => "ratio_histogram",
            PlotKind::PathScatter => "path_scatter",
            PlotKind::VisitationHeatmap => "visitation_heatmap",
            PlotKind::LengthHistogram => "length_histogram",
            PlotKind::EntropyCurves => "entropy_curves",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EvalError::Parameter(format!("unknown plot kind {s:?}")))
    }
}

/// Data a plot file is computed from.
#[derive(Debug, Clone, Copy)]
pub enum PlotInput<'a> {
    Metrics(&'a [MetricsRecord]),
    Episodes(&'a [EpisodeRecord]),
    Graph(&'a NavGraph),
    Entropy(&'a EntropyCurves),
}

/// `#` comment lines written above the header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub build: String,
    /// Bucket width for ratio histograms (default 0.1) and distance bins
    /// in metres for length histograms and percentile bands (default 10).
    pub ratio_bin: Option<f64>,
    pub distance_bin_m: Option<f64>,
}

impl Provenance {
    pub fn new(config_text: Option<&str>, seed: Option<u64>) -> Self {
        Provenance {
            config_sha256: config_text.map(|t| {
                Sha256::digest(t.as_bytes()).iter().fold(String::new(), |mut s, b| {
                    let _ = write!(s, "{b:02x}");
                    s
                })
            }),
            seed,
            build: format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            ratio_bin: None,
            distance_bin_m: None,
        }
    }

    fn ratio_bin(&self) -> f64 {
        self.ratio_bin.unwrap_or(0.1)
    }

    fn distance_bin(&self) -> f64 {
        self.distance_bin_m.unwrap_or(10.0)
    }
}

/// Tab-separated numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    fn render(&self, kind: &str, prov: &Provenance) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# kind {kind}");
        let _ = writeln!(s, "# build {}", prov.build);
        if let Some(h) = &prov.config_sha256 {
            let _ = writeln!(s, "# config_sha256 {h}");
        }
        if let Some(seed) = prov.seed {
            let _ = writeln!(s, "# seed {seed}");
        }
        s.push_str(&self.header.join("\t"));
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|x| x.to_string()).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }
}

/// Reads a table written by [`render_plot_data`]; comment lines are skipped.
pub fn parse_table(text: &str) -> Result<Table, EvalError> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| EvalError::Empty("no header row".into()))?
        .split('\t')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split('\t')
            .map(|c| c.parse::<f64>().map_err(|e| EvalError::Parameter(format!("row {}: {c:?}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != header.len() {
            return Err(EvalError::Parameter(format!(
                "row {} has {} cells, header {}",
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn bucket(x: f64, width: f64) -> i64 {
    (x / width + 1e-9).floor() as i64
}

fn ratio_histogram(records: &[EpisodeRecord], width: f64) -> Result<Table, EvalError> {
    let idx: Vec<i64> = records.iter().filter_map(|r| r.ratio).map(|x| bucket(x, width)).collect();
    let (lo, hi) = match (idx.iter().min(), idx.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(EvalError::Empty("no successful episode has a ratio".into())),
    };
    let mut t = Table::new(&["bucket_lo", "bucket_hi", "count"]);
    for b in lo..=hi {
        let n = idx.iter().filter(|&&i| i == b).count();
        t.rows.push(vec![b as f64 * width, (b + 1) as f64 * width, n as f64]);
    }
    Ok(t)
}

/// Percentiles of `path_m` over successful episodes, binned by `optimal_m`.
pub fn percentile_bands(records: &[EpisodeRecord], bin_m: f64) -> Result<Table, EvalError> {
    if !(bin_m > 0.0) {
        return Err(EvalError::Parameter(format!("bin width {bin_m} must be positive")));
    }
    let ok: Vec<&EpisodeRecord> = records.iter().filter(|r| r.success).collect();
    let hi = ok
        .iter()
        .map(|r| bucket(r.optimal_m, bin_m))
        .max()
        .ok_or_else(|| EvalError::Empty("no successful episodes".into()))?;
    let mut t = Table::new(&["bin_lo", "bin_hi", "n", "p2_5", "p25", "p50", "p75", "p97_5"]);
    for b in 0..=hi {
        let mut v: Vec<f64> = ok
            .iter()
            .filter(|r| bucket(r.optimal_m, bin_m) == b)
            .map(|r| r.path_m)
            .collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let mut row = vec![b as f64 * bin_m, (b + 1) as f64 * bin_m, v.len() as f64];
        row.extend([0.025, 0.25, 0.5, 0.75, 0.975].map(|q| quantile(&v, q)));
        t.rows.push(row);
    }
    Ok(t)
}

fn build_table(kind: PlotKind, input: PlotInput<'_>, prov: &Provenance) -> Result<Table, EvalError> {
    let wrong = || EvalError::Parameter(format!("{kind} cannot be made from this input"));
    match (kind, input) {
        (PlotKind::LearningCurve, PlotInput::Metrics(m)) => {
            if m.is_empty() {
                return Err(EvalError::Empty("no metrics records".into()));
            }
            let mut t = Table::new(&["step", "level", "success", "solved_len", "loss_pi", "loss_v", "entropy", "tps"]);
            for r in m {
                t.rows.push(vec![
                    r.step as f64,
                    r.level as f64,
                    r.success,
                    r.solved_len,
                    r.loss_pi,
                    r.loss_v,
                    r.entropy,
                    r.tps,
                ]);
            }
            Ok(t)
        }
        (PlotKind::RatioHistogram, PlotInput::Episodes(e)) => {
            if e.is_empty() {
                return Err(EvalError::Empty("no episode records".into()));
            }
            ratio_histogram(e, prov.ratio_bin())
        }
        (PlotKind::PathScatter, PlotInput::Episodes(e)) => {
            if e.is_empty() {
                return Err(EvalError::Empty("no episode records".into()));
            }
            let mut t = Table::new(&["start", "goal", "optimal_m", "path_m", "success", "steps", "ratio"]);
            for r in e {
                t.rows.push(vec![
                    r.start.0 as f64,
                    r.goal.0 as f64,
                    r.optimal_m,
                    r.path_m,
                    r.success as u8 as f64,
                    r.steps as f64,
                    r.ratio.unwrap_or(f64::NAN),
                ]);
            }
            Ok(t)
        }
        (PlotKind::VisitationHeatmap, PlotInput::Graph(g)) => {
            let mut t = Table::new(&["node", "x", "y", "floor", "count"]);
            for (n, c) in g.nodes().iter().zip(visitation_counts(g)) {
                t.rows.push(vec![n.id.0 as f64, n.position[0], n.position[1], n.floor as f64, c as f64]);
            }
            Ok(t)
        }
        (PlotKind::LengthHistogram, PlotInput::Graph(g)) => {
            let s = all_pairs_stats(&DistanceMatrix::new(g), prov.distance_bin());
            if s.pairs == 0 {
                return Err(EvalError::Empty("graph has no node pairs".into()));
            }
            let mut t = Table::new(&["bucket_lo", "bucket_hi", "count"]);
            for (k, &c) in s.histogram.iter().enumerate() {
                t.rows.push(vec![k as f64 * s.bucket_m, (k + 1) as f64 * s.bucket_m, c as f64]);
            }
            Ok(t)
        }
        (PlotKind::EntropyCurves, PlotInput::Entropy(c)) => {
            if c.counts.is_empty() {
                return Err(EvalError::Empty("no entropy samples".into()));
            }
            let mut t = Table::new(&["t", "policy_entropy", "probe_entropy", "episodes"]);
            for i in 0..c.counts.len() {
                t.rows.push(vec![(i + 1) as f64, c.policy[i], c.probe[i], c.counts[i] as f64]);
            }
            Ok(t)
        }
        _ => Err(wrong()),
    }
}

/// Renders one figure-ready table: `#` provenance lines, a header row, then
/// tab-separated rows.
pub fn render_plot_data(kind: PlotKind, input: PlotInput<'_>, prov: &Provenance) -> Result<String, EvalError> {
    Ok(build_table(kind, input, prov)?.render(kind.name(), prov))
}

pub fn emit_plot_data(
    kind: PlotKind,
    input: PlotInput<'_>,
    prov: &Provenance,
    out: impl AsRef<Path>,
) -> Result<(), EvalError> {
    let text = render_plot_data(kind, input, prov)?;
    std::fs::write(out.as_ref(), text).map_err(|e| EvalError::Io(format!("{}: {e}", out.as_ref().display())))
}

/// Bands rendered like the other tables, under kind name `path_bands`.
pub fn render_bands(records: &[EpisodeRecord], prov: &Provenance) -> Result<String, EvalError> {
    Ok(percentile_bands(records, prov.distance_bin())?.render("path_bands", prov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navgraph::{generate_grid, NodeId};

    fn rec(ratio: Option<f64>, optimal: f64) -> EpisodeRecord {
        EpisodeRecord {
            start: NodeId(0),
            goal: NodeId(1),
            success: ratio.is_some(),
            steps: 4,
            path_m: ratio.map(|r| r * optimal).unwrap_or(2.0),
            optimal_m: optimal,
            ratio,
            policy_entropy: vec![],
            probe_entropy: vec![],
            trajectory: vec![],
        }
    }

    #[test]
    fn ratio_buckets_count() {
        let recs = [rec(Some(1.0), 3.0), rec(Some(1.0), 2.0), rec(Some(2.0), 1.0)];
        let text = render_plot_data(PlotKind::RatioHistogram, PlotInput::Episodes(&recs), &Provenance::new(None, Some(1))).unwrap();
        let t = parse_table(&text).unwrap();
        let count = t.column("count").unwrap();
        let lo = t.column("bucket_lo").unwrap();
        assert_eq!(count[0], 2.0);
        assert!((lo[0] - 1.0).abs() < 1e-12);
        assert_eq!(*count.last().unwrap(), 1.0);
        assert!((lo.last().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(count.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn learning_curve_round_trips() {
        let m: Vec<MetricsRecord> = (1..=3)
            .map(|i| MetricsRecord {
                step: i * 10_000,
                level: i as u32,
                success: 0.1 * i as f64,
                solved_len: 0.3 * i as f64,
                loss_pi: -0.01,
                loss_v: 0.2,
                entropy: 1.7,
                tps: 0.0,
            })
            .collect();
        let prov = Provenance::new(Some("lr = 1e-4\n"), Some(7));
        let text = render_plot_data(PlotKind::LearningCurve, PlotInput::Metrics(&m), &prov).unwrap();
        assert!(text.starts_with("# kind learning_curve\n"));
        assert!(text.contains("# seed 7"));
        assert!(text.lines().any(|l| l.starts_with("# config_sha256 ") && l.len() == 16 + 64));
        let t = parse_table(&text).unwrap();
        assert_eq!(t.header[..4], ["step", "level", "success", "solved_len"]);
        let solved = t.column("solved_len").unwrap();
        assert_eq!(solved, m.iter().map(|r| r.solved_len).collect::<Vec<_>>());
    }

    #[test]
    fn heatmap_matches_visitation() {
        let g = generate_grid(4, 3, 1.0).unwrap();
        let text = render_plot_data(PlotKind::VisitationHeatmap, PlotInput::Graph(&g), &Provenance::default()).unwrap();
        let t = parse_table(&text).unwrap();
        let counts: Vec<u64> = t.column("count").unwrap().iter().map(|&c| c as u64).collect();
        assert_eq!(counts, visitation_counts(&g));
    }

    #[test]
    fn length_histogram_sums_to_pairs() {
        let g = generate_grid(5, 5, 1.0).unwrap();
        let prov = Provenance {
            distance_bin_m: Some(2.0),
            ..Default::default()
        };
        let t = parse_table(&render_plot_data(PlotKind::LengthHistogram, PlotInput::Graph(&g), &prov).unwrap()).unwrap();
        assert_eq!(t.column("count").unwrap().iter().sum::<f64>(), 300.0);
    }

    #[test]
    fn bands_and_scatter() {
        let recs = [rec(Some(1.0), 3.0), rec(Some(1.5), 4.0), rec(None, 5.0), rec(Some(1.0), 14.0)];
        let t = percentile_bands(&recs, 10.0).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][2], 2.0);
        assert_eq!(t.rows[0][5], 4.5);
        let text = render_plot_data(PlotKind::PathScatter, PlotInput::Episodes(&recs), &Provenance::default()).unwrap();
        let t = parse_table(&text).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows[2][6].is_nan());
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        let p = Provenance::default();
        assert!(matches!(
            render_plot_data(PlotKind::LearningCurve, PlotInput::Metrics(&[]), &p),
            Err(EvalError::Empty(_))
        ));
        assert!(render_plot_data(PlotKind::RatioHistogram, PlotInput::Metrics(&[]), &p).is_err());
        assert!(render_plot_data(PlotKind::RatioHistogram, PlotInput::Episodes(&[rec(None, 1.0)]), &p).is_err());
        assert_eq!("entropy_curves".parse::<PlotKind>().unwrap(), PlotKind::EntropyCurves);
        assert!("pie".parse::<PlotKind>().is_err());
    }
}
