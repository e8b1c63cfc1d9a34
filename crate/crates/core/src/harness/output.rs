use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::config::Policy;
use super::sweep::{Axis, BoundingRow, SweepPoint};
use super::trial::TrialRecord;
use crate::cross_entropy::CeIteration;
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: [&str; 7] = ["policy", "axis", "value", "mean_reward", "sem", "trials", "oob_frac"];

fn num(x: f64) -> String {
    // shortest representation that parses back to the same bits
    format!("{x:?}")
}

pub fn write_summary_csv<W: Write>(w: W, points: &[SweepPoint]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SUMMARY_HEADER)?;
    for p in points {
        csv.write_record([p.policy.name().to_string(), p.axis.name().to_string(), num(p.value), num(p.mean_reward), num(p.sem), p.trials.to_string(), num(p.oob_frac)])?;
    }
    csv.flush()?;
    Ok(())
}

/// Parses a table written by [`write_summary_csv`]. Failure and divergence
/// counts are not part of the file and read back as zero.
pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SweepPoint>> {
    let mut csv = csv::Reader::from_reader(r);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    if header != SUMMARY_HEADER {
        return Err(Error::Io(format!("unexpected summary header {header:?}")));
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Io(format!("bad number '{s}': {e}")));
    let mut out = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        out.push(SweepPoint {
            policy: rec[0].parse()?,
            axis: rec[1].parse()?,
            value: parse(&rec[2])?,
            mean_reward: parse(&rec[3])?,
            sem: parse(&rec[4])?,
            trials: rec[5].parse().map_err(|e| Error::Io(format!("bad count '{}': {e}", &rec[5])))?,
            oob_frac: parse(&rec[6])?,
            failed: 0,
            diverged: 0,
        });
    }
    Ok(out)
}

const STATE_COLS: [&str; 11] = ["p_x", "p_y", "p_theta", "v_x", "v_y", "v_w", "m", "mu_v", "J", "r_bx", "r_by"];

/// Per-step trial log.
pub fn write_trial_csv<W: Write>(w: W, r: &TrialRecord) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string()];
    header.extend(STATE_COLS.iter().map(|c| format!("true_{c}")));
    header.extend(STATE_COLS.iter().map(|c| format!("est_{c}")));
    header.extend(["cov_trace", "param_cov_trace", "f_x", "f_y", "torque", "reward", "state_norm", "param_mae", "diverged", "fallback"].map(String::from));
    csv.write_record(&header)?;
    for (k, s) in r.steps.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.truth.to_svector().iter().map(|x| num(*x)));
        row.extend(s.belief_mean.to_svector().iter().map(|x| num(*x)));
        row.extend([s.cov_trace, s.param_cov_trace, s.action.f_x, s.action.f_y, s.action.torque, s.reward, s.state_norm, s.param_mae].map(num));
        row.push(u8::from(s.diverged).to_string());
        row.push(u8::from(s.policy_fallback).to_string());
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn trial_csv_string(r: &TrialRecord) -> Result<String> {
    let mut buf = Vec::new();
    write_trial_csv(&mut buf, r)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

pub fn write_ce_csv<W: Write>(w: W, history: &[CeIteration<f64>]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["iteration", "best", "mean", "eig_max", "k_action", "k_state", "depth", "explore_c"])?;
    for h in history {
        let mut row = vec![h.iteration.to_string(), num(h.best), num(h.mean), num(h.eig_max)];
        row.extend(h.dist_mean.iter().map(|x| num(*x)));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_bounding_csv<W: Write>(w: W, rows: &[BoundingRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["bound", "pct_outside_plain", "pct_outside_heuristic", "mean_reward_heuristic", "sem_heuristic", "mean_reward_plain", "sem_plain"])?;
    for r in rows {
        csv.write_record([r.bound, r.pct_outside_plain, r.pct_outside_heuristic, r.mean_reward_heuristic, r.sem_heuristic, r.mean_reward_plain, r.sem_plain].map(num))?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes with `f` into a new file at `path`.
pub fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of mean total reward against the sweep value, one series per
/// policy, with ±1 SEM error bars.
pub fn summary_svg(points: &[SweepPoint], axis: Axis) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (80.0, 150.0, 30.0, 60.0);
    let mut series: BTreeMap<Policy, Vec<&SweepPoint>> = BTreeMap::new();
    for p in points.iter().filter(|p| p.mean_reward.is_finite()) {
        series.entry(p.policy).or_default().push(p);
    }
    for s in series.values_mut() {
        s.sort_by(|a, b| a.value.total_cmp(&b.value));
    }
    let finite: Vec<&SweepPoint> = series.values().flatten().copied().collect();
    let (mut x0, mut x1) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.value), hi.max(p.value)));
    let (mut y0, mut y1) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.mean_reward - p.sem), hi.max(p.mean_reward + p.sem)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pad = ((y1 - y0) * 0.08).max(1e-9);
    y0 -= pad;
    y1 += pad;
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| top + (y1 - y) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let (ax0, ax1, ay0, ay1) = (left, w - right, top, h - bottom);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay1}" x2="{ax1}" y2="{ay1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay0}" x2="{ax0}" y2="{ay1}" stroke="black"/>"#);
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(xv), ay1 + 18.0, fmt_tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ax0 - 6.0, py(yv) + 4.0, fmt_tick(yv));
        let _ = writeln!(s, r##"<line x1="{ax0}" y1="{0:.1}" x2="{ax1}" y2="{0:.1}" stroke="#dddddd"/>"##, py(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (ax0 + ax1) / 2.0, h - 15.0, escape(axis.label()));
    let _ = writeln!(s, r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">Total reward</text>"#, (ay0 + ay1) / 2.0, (ay0 + ay1) / 2.0);

    for (i, (policy, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.value), py(p.mean_reward))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for p in pts {
            let (x, ylo, yhi) = (px(p.value), py(p.mean_reward - p.sem), py(p.mean_reward + p.sem));
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{ylo:.2}" x2="{x:.2}" y2="{yhi:.2}" stroke="{color}"/>"#);
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{ylo:.2}" x2="{:.2}" y2="{ylo:.2}" stroke="{color}"/>"#, x - 4.0, x + 4.0);
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{yhi:.2}" x2="{:.2}" y2="{yhi:.2}" stroke="{color}"/>"#, x - 4.0, x + 4.0);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, py(p.mean_reward));
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, ax1 + 15.0, ax1 + 40.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, ax1 + 46.0, ly + 4.0, escape(policy.name()));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Vec<SweepPoint> {
        let mut v = Vec::new();
        for (i, p) in [Policy::Mcts, Policy::Mpc].into_iter().enumerate() {
            for (j, x) in [0.005, 0.01, 0.03].into_iter().enumerate() {
                v.push(SweepPoint { policy: p, axis: Axis::Noise, value: x, mean_reward: -100.0 * (i + j + 1) as f64 / 3.0, sem: 0.1 * j as f64, trials: 20, oob_frac: 0.025, failed: 0, diverged: 0 });
            }
        }
        v
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "policy,axis,value,mean_reward,sem,trials,oob_frac\n");
    }

    #[test]
    fn csv_round_trip() {
        let t = table();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &t).unwrap();
        assert_eq!(read_summary_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn svg_parses() {
        for pts in [table(), Vec::new()] {
            let svg = summary_svg(&pts, Axis::Noise);
            let doc = roxmltree::Document::parse(&svg).unwrap();
            assert_eq!(doc.root_element().tag_name().name(), "svg");
        }
        let svg = summary_svg(&table(), Axis::Floor);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    }
}
