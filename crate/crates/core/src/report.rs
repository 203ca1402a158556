//! Byte-stable CSV round logs and SVG convergence charts.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::embeddings::PromptCombination;
use crate::optimizer::{Phase, RoundLog};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("io error: {0}")]
    Io(String),
}

pub const ROUND_LOG_HEADER: [&str; 9] = [
    "round",
    "phase",
    "candidate",
    "mu",
    "sigma",
    "ucb",
    "observed",
    "best_so_far",
    "wall_time_s",
];

pub const SIG_DIGITS: usize = 9;

/// Shortest round-trip representation truncated to nine significant digits.
///
/// The output is fully determined by the bit pattern of `x`, so logs written
/// from the same values are byte-identical.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:e}");
    let (mantissa, exp) = sci.split_once('e').expect("{:e} always has an exponent");
    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", mantissa),
    };
    let mut kept = String::with_capacity(SIG_DIGITS + 1);
    let mut count = 0;
    for ch in digits.chars() {
        if ch == '.' {
            kept.push(ch);
            continue;
        }
        if count == SIG_DIGITS {
            break;
        }
        kept.push(ch);
        count += 1;
    }
    let truncated: f64 = format!("{sign}{kept}e{exp}").parse().expect("well-formed float");
    format!("{truncated}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// Render round logs as CSV.
pub fn round_log_csv(logs: &[RoundLog]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROUND_LOG_HEADER).expect("in-memory write");
    for l in logs {
        w.write_record([
            l.round.to_string(),
            l.phase.to_string(),
            l.candidate.to_log_string(),
            opt_float(l.mu),
            format_float(l.sigma),
            opt_float(l.ucb),
            format_float(l.observed),
            format_float(l.best_so_far),
            format_float(l.wall_time_s),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn write_round_log(path: &Path, logs: &[RoundLog]) -> Result<(), ReportError> {
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, round_log_csv(logs)).map_err(|e| ReportError::Io(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| ReportError::Io(e.to_string()))
}

fn parse_opt(field: &str, line: usize, name: &str) -> Result<Option<f64>, ReportError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| ReportError::ParseError(format!("line {line}: bad {name} '{field}'")))
}

/// Parse a CSV produced by [`round_log_csv`]. An empty log is an error.
pub fn parse_round_log(text: &str) -> Result<Vec<RoundLog>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| ReportError::ParseError(e.to_string()))?;
    if header.iter().ne(ROUND_LOG_HEADER) {
        return Err(ReportError::ParseError(format!(
            "expected header {}",
            ROUND_LOG_HEADER.join(",")
        )));
    }
    let mut logs = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| ReportError::ParseError(format!("line {line}: {e}")))?;
        let req = |i: usize| -> Result<f64, ReportError> {
            parse_opt(&rec[i], line, ROUND_LOG_HEADER[i])?
                .ok_or_else(|| ReportError::ParseError(format!("line {line}: missing {}", ROUND_LOG_HEADER[i])))
        };
        let phase = match &rec[1] {
            "pretrain" => Phase::Pretrain,
            "optimize" => Phase::Optimize,
            other => return Err(ReportError::ParseError(format!("line {line}: bad phase '{other}'"))),
        };
        logs.push(RoundLog {
            round: rec[0]
                .parse()
                .map_err(|_| ReportError::ParseError(format!("line {line}: bad round '{}'", &rec[0])))?,
            phase,
            candidate: PromptCombination::parse_log_string(&rec[2])
                .ok_or_else(|| ReportError::ParseError(format!("line {line}: bad candidate '{}'", &rec[2])))?,
            mu: parse_opt(&rec[3], line, "mu")?,
            sigma: req(4)?,
            ucb: parse_opt(&rec[5], line, "ucb")?,
            observed: req(6)?,
            best_so_far: req(7)?,
            wall_time_s: req(8)?,
        });
    }
    if logs.is_empty() {
        return Err(ReportError::ParseError("round log has no data rows".into()));
    }
    Ok(logs)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Pixel coordinates of a series on the chart: x spans rounds, y spans
/// `[0, 1]` with larger scores higher up (smaller pixel y).
pub fn chart_points(rounds: &[usize], values: &[f64]) -> Vec<(f64, f64)> {
    let (lo, hi) = (
        *rounds.iter().min().unwrap_or(&1) as f64,
        *rounds.iter().max().unwrap_or(&1) as f64,
    );
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    rounds
        .iter()
        .zip(values)
        .map(|(&r, &v)| {
            let x = MARGIN + (r as f64 - lo) / span * pw;
            let y = MARGIN + (1.0 - v.clamp(0.0, 1.0)) * ph;
            (x, y)
        })
        .collect()
}

fn polyline(points: &[(f64, f64)], color: &str, class: &str) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        "<polyline class=\"{class}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// Line chart of `best_so_far` and `observed` against round.
pub fn render_chart(logs: &[RoundLog]) -> String {
    let rounds: Vec<usize> = logs.iter().map(|l| l.round).collect();
    let best: Vec<f64> = logs.iter().map(|l| l.best_so_far).collect();
    let observed: Vec<f64> = logs.iter().map(|l| l.observed).collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        "<g stroke=\"black\"><line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\"/><line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\"/></g>"
    );
    s.push_str("<g font-family=\"sans-serif\" font-size=\"11\">\n");
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y0 + (1.0 - v) * (y1 - y0);
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>",
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let (lo, hi) = (rounds[0], *rounds.last().expect("nonempty"));
    let ticks = (hi - lo).clamp(1, 10);
    for k in 0..=ticks {
        let r = lo + (hi - lo) * k / ticks;
        let (x, _) = chart_points(&[lo, hi, r], &[0.0, 0.0, 0.0])[2];
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{y1}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{r}</text>",
            y1 + 4.0,
            y1 + 16.0
        );
    }
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">round</text>", WIDTH / 2.0, HEIGHT - 10.0);
    let _ = writeln!(s, "<text x=\"{x1}\" y=\"20\" text-anchor=\"end\"><tspan fill=\"#1f77b4\">best so far</tspan> <tspan fill=\"#ff7f0e\">observed</tspan></text>");
    s.push_str("</g>\n");
    s.push_str(&polyline(&chart_points(&rounds, &best), "#1f77b4", "best_so_far"));
    s.push_str(&polyline(&chart_points(&rounds, &observed), "#ff7f0e", "observed"));
    s.push_str("</svg>\n");
    s
}

pub fn chart_file(log: &Path, out: &Path) -> Result<(), ReportError> {
    let text = std::fs::read_to_string(log).map_err(|e| ReportError::Io(format!("{}: {e}", log.display())))?;
    let logs = parse_round_log(&text)?;
    std::fs::write(out, render_chart(&logs)).map_err(|e| ReportError::Io(format!("{}: {e}", out.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log(round: usize, observed: f64, best: f64) -> RoundLog {
        RoundLog {
            round,
            phase: if round <= 5 { Phase::Pretrain } else { Phase::Optimize },
            candidate: PromptCombination(vec![round % 3, 1]),
            mu: (round > 2).then_some(0.25),
            sigma: 1.0 / round as f64,
            ucb: (round > 2).then_some(0.25 + 0.2 / round as f64),
            observed,
            best_so_far: best,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn float_format_examples() {
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(-2.0 / 3.0), "-0.666666666");
        assert_eq!(format_float(123456789012.0), "123456789000");
        assert_eq!(format_float(1.5e-12), "0.0000000000015");
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_round_trip() {
        let logs: Vec<RoundLog> = (1..=10).map(|r| log(r, 0.5, 0.5)).collect();
        let text = round_log_csv(&logs);
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("round,phase,candidate,mu,sigma,ucb,observed,best_so_far,wall_time_s\n"));
        let parsed = parse_round_log(&text).unwrap();
        assert_eq!(parsed.len(), 10);
        assert_eq!(round_log_csv(&parsed), text);
        assert_eq!(parsed[0].mu, None);
    }

    #[test]
    fn empty_log_is_parse_error() {
        let header = format!("{}\n", ROUND_LOG_HEADER.join(","));
        assert!(matches!(parse_round_log(&header), Err(ReportError::ParseError(_))));
        assert!(matches!(parse_round_log(""), Err(ReportError::ParseError(_))));
        assert!(parse_round_log("a,b\n1,2\n").is_err());
    }

    fn polyline_points(svg: &str, class: &str) -> Vec<(f64, f64)> {
        let tag = format!("class=\"{class}\"");
        let line = svg.lines().find(|l| l.contains(&tag)).unwrap();
        let pts = line.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        pts.split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn chart_has_two_polylines() {
        let logs: Vec<RoundLog> = (1..=10).map(|r| log(r, r as f64 / 20.0, r as f64 / 20.0)).collect();
        let svg = render_chart(&logs);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(polyline_points(&svg, "best_so_far").len(), 10);
        assert_eq!(polyline_points(&svg, "observed").len(), 10);
    }

    proptest! {
        #[test]
        fn format_is_close_and_short(x in -1e6f64..1e6) {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= 1e-8 * x.abs().max(1e-300));
            let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
            prop_assert!(digits.trim_start_matches('0').len() <= SIG_DIGITS);
            prop_assert_eq!(format_float(back), s);
        }

        #[test]
        fn monotone_best_gives_nonincreasing_pixel_y(steps in proptest::collection::vec(0.0f64..0.1, 1..40)) {
            let mut best = 0.0;
            let logs: Vec<RoundLog> = steps.iter().enumerate().map(|(k, s)| {
                best = f64::min(best + s, 1.0);
                log(k + 1, best, best)
            }).collect();
            let pts = polyline_points(&render_chart(&logs), "best_so_far");
            for w in pts.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
                prop_assert!(w[1].0 > w[0].0);
            }
        }
    }
}
