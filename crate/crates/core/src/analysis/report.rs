//! Text, CSV and SVG report bundle. Output depends only on its inputs, so
//! exporting the same store twice gives identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{CellSummary, Leaderboard};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report: the store holds no games")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Paths written by one export, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
}

const BINS: usize = 10;

/// Comment line with the store hash, then standard CSV with `\n` line ends.
fn csv_doc(hash: &str, header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut buf = format!("# store_sha256={hash}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        w.write_record(header).expect("writing to memory");
        for row in rows {
            w.write_record(&row).expect("writing to memory");
        }
        w.flush().expect("writing to memory");
    }
    String::from_utf8(buf).expect("inputs are UTF-8")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn file_slug(key: &str) -> String {
    key.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn leaderboard_text(boards: &[Leaderboard], hash: &str) -> String {
    let mut out = format!("# store_sha256={hash}\n");
    for b in boards {
        let width = b.entries.iter().map(|e| e.sender_id.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(out, "\n{}", b.treatment_key);
        let _ = writeln!(out, "{:<6} {:<width$} {:>8} {:>6}", "rank", "sender", "mean", "games");
        for e in &b.entries {
            let _ = writeln!(
                out,
                "{:<6} {:<width$} {:>8.4} {:>6}",
                format!("({})", e.rank_letter),
                e.sender_id,
                e.mean_fraction,
                e.games
            );
        }
        for m in &b.missing {
            let _ = writeln!(out, "{:<6} {:<width$} {:>8} {:>6}", "-", m, "missing", 0);
        }
    }
    out
}

fn leaderboard_csv(boards: &[Leaderboard], hash: &str) -> String {
    let mut rows = Vec::new();
    for b in boards {
        for e in &b.entries {
            rows.push(vec![
                b.treatment_key.clone(),
                e.sender_id.clone(),
                e.rank_letter.clone(),
                format!("{:.6}", e.mean_fraction),
                e.games.to_string(),
            ]);
        }
        for m in &b.missing {
            rows.push(vec![b.treatment_key.clone(), m.clone(), String::new(), String::new(), "0".into()]);
        }
    }
    csv_doc(hash, &["treatment", "sender_id", "rank", "mean_fraction", "games"], rows)
}

fn pvalues_csv(boards: &[Leaderboard], hash: &str) -> String {
    let mut rows = Vec::new();
    for b in boards {
        for i in 0..b.entries.len() {
            for j in (i + 1)..b.entries.len() {
                rows.push(vec![
                    b.treatment_key.clone(),
                    b.entries[i].sender_id.clone(),
                    b.entries[j].sender_id.clone(),
                    format!("{:.6}", b.p_values[i][j]),
                ]);
            }
        }
    }
    csv_doc(hash, &["treatment", "sender_a", "sender_b", "p_value"], rows)
}

fn distributions_csv(summaries: &[CellSummary], hash: &str) -> String {
    let mut rows = Vec::new();
    for s in summaries {
        let treatment = s.cell.treatment_key();
        for (iteration, row) in s.iterations.iter().zip(&s.per_round_sent) {
            for (round, amount) in row.iter().enumerate() {
                rows.push(vec![
                    s.cell_key.clone(),
                    s.cell.sender_id.clone(),
                    treatment.clone(),
                    iteration.to_string(),
                    (round + 1).to_string(),
                    format!("{amount:.2}"),
                ]);
            }
        }
    }
    csv_doc(hash, &["cell", "sender_id", "treatment", "iteration", "round", "amount_sent"], rows)
}

fn histogram(values: &[f64]) -> [usize; BINS] {
    let mut bins = [0; BINS];
    for v in values {
        let i = (v.max(0.0).floor() as usize).min(BINS - 1);
        bins[i] += 1;
    }
    bins
}

/// One row per sender: histogram of the per-game average amount sent, in
/// one-dollar bins (the last bin includes 10).
fn panel_svg(treatment: &str, cells: &[&CellSummary], hash: &str) -> String {
    const W: usize = 520;
    const ROW: usize = 90;
    const LEFT: usize = 150;
    const TOP: usize = 40;
    const BAR: usize = 34;
    let height = TOP + ROW * cells.len().max(1) + 30;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" viewBox=\"0 0 {W} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<!-- store_sha256={hash} -->");
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{height}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"10\" y=\"20\" font-size=\"12\">{}</text>", xml_escape(treatment));
    for (row, cell) in cells.iter().enumerate() {
        let base = TOP + ROW * row + ROW - 20;
        let bins = histogram(&cell.game_means());
        let peak = bins.iter().copied().max().unwrap_or(0).max(1);
        let _ = writeln!(
            out,
            "<text x=\"10\" y=\"{}\">{}</text>",
            base - 30,
            xml_escape(&cell.cell.sender_id)
        );
        let _ = writeln!(out, "<text x=\"10\" y=\"{}\" fill=\"#555\">n={}</text>", base - 16, cell.fractions.len());
        for (i, &count) in bins.iter().enumerate() {
            let h = (count * (ROW - 30)) / peak;
            if h > 0 {
                let _ = writeln!(
                    out,
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{h}\" fill=\"#4a78b0\"><title>${i}-{}: {count}</title></rect>",
                    LEFT + i * BAR + 1,
                    base - h,
                    BAR - 2,
                    i + 1
                );
            }
        }
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>",
            LEFT + BINS * BAR
        );
    }
    let axis_y = TOP + ROW * cells.len().max(1);
    for tick in 0..=BINS {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{tick}</text>",
            LEFT + tick * BAR,
            axis_y - 6
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">average amount sent per game ($)</text>",
        LEFT + BINS * BAR / 2,
        axis_y + 14
    );
    out.push_str("</svg>\n");
    out
}

/// Writes `leaderboard.txt`, `leaderboard.csv`, `pvalues.csv`,
/// `distributions.csv` and one SVG panel per treatment under `panels/`.
/// Everything is rendered before the first file is written.
pub fn export_reports(
    summaries: &[CellSummary],
    leaderboards: &[Leaderboard],
    out_dir: &Path,
    store_hash: &str,
) -> Result<ReportFiles, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut rendered: Vec<(PathBuf, String)> = vec![
        ("leaderboard.txt".into(), leaderboard_text(leaderboards, store_hash)),
        ("leaderboard.csv".into(), leaderboard_csv(leaderboards, store_hash)),
        ("pvalues.csv".into(), pvalues_csv(leaderboards, store_hash)),
        ("distributions.csv".into(), distributions_csv(summaries, store_hash)),
    ];
    let mut by_treatment: BTreeMap<String, Vec<&CellSummary>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| !s.is_missing()) {
        by_treatment.entry(s.cell.treatment_key()).or_default().push(s);
    }
    for (i, (treatment, mut cells)) in by_treatment.into_iter().enumerate() {
        cells.sort_by(|a, b| a.cell.sender_id.cmp(&b.cell.sender_id));
        let name = format!("panels/{:02}_{}.svg", i + 1, file_slug(&treatment));
        rendered.push((name.into(), panel_svg(&treatment, &cells, store_hash)));
    }

    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    let panels = out_dir.join("panels");
    fs::create_dir_all(&panels).map_err(io_err(&panels))?;
    let mut files = Vec::with_capacity(rendered.len());
    for (rel, body) in rendered {
        let path = out_dir.join(&rel);
        fs::write(&path, body).map_err(io_err(&path))?;
        files.push(rel);
    }
    Ok(ReportFiles { files })
}
