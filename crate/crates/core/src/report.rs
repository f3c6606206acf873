//! CSV and SVG renderings of evaluation, sweep and lab results.

use std::fmt::Write as _;
use std::io::Write;

use crate::engine::{RunReport, SampleRecord};
use crate::error::Result;
use crate::lab::IdReport;
use crate::sweep::{Confirmation, TrialResult};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// `layer,kind,param,flops,prunes,mispredicts`, one row per layer and a
/// closing `total` row.
pub fn write_run_report<W: Write>(w: W, report: &RunReport) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["layer", "kind", "param", "flops", "prunes", "mispredicts"])?;
    for l in &report.layers {
        out.write_record([
            l.name.clone(),
            l.kind.clone(),
            l.param.clone(),
            l.flops().to_string(),
            l.tally.prunes.to_string(),
            l.tally.mispredicts.to_string(),
        ])?;
    }
    out.write_record([
        "total".to_string(),
        "summary".to_string(),
        format!(
            "fidelity={} normalized_flops={} baseline_flops={}",
            report.fidelity, report.normalized_flops, report.baseline_flops
        ),
        report.total_flops.to_string(),
        report.prunes().to_string(),
        report.mispredicts().to_string(),
    ])?;
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `index,label,pred,flops`.
pub fn write_records<W: Write>(w: W, records: &[SampleRecord]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["index", "label", "pred", "flops"])?;
    for r in records {
        out.write_record([
            r.index.to_string(),
            r.label.to_string(),
            r.pred.to_string(),
            r.flops.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `trial,<params…>,val_fidelity,val_flops,slice`; `slice` is empty for
/// trials outside the extracted slices.
pub fn write_sweep<W: Write>(
    w: W,
    param_names: &[String],
    results: &[TrialResult],
    slices: &[Option<usize>],
) -> Result<()> {
    let mut out = writer(w);
    let mut header = vec!["trial".to_string()];
    header.extend(param_names.iter().cloned());
    header.extend(["val_fidelity", "val_flops", "slice"].map(String::from));
    out.write_record(&header)?;
    for r in results {
        let mut row = vec![r.trial.to_string()];
        row.extend(r.params.iter().map(f64::to_string));
        row.push(r.fidelity.to_string());
        row.push(r.normalized_flops.to_string());
        row.push(slices.get(r.trial).copied().flatten().map(|s| s.to_string()).unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `trial,slice,val_fidelity,val_flops,test_fidelity,test_flops,gap`.
pub fn write_confirmations<W: Write>(w: W, rows: &[Confirmation]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["trial", "slice", "val_fidelity", "val_flops", "test_fidelity", "test_flops", "gap"])?;
    for c in rows {
        out.write_record([
            c.trial.to_string(),
            c.slice.map(|s| s.to_string()).unwrap_or_default(),
            c.val_fidelity.to_string(),
            c.val_flops.to_string(),
            c.test_fidelity.to_string(),
            c.test_flops.to_string(),
            c.gap().to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `observable,index,ks_d,p_value,rejected`, with one `summary` row per
/// observable carrying the rejection rate, the null interval and whether the
/// count falls inside it.
pub fn write_lab<W: Write>(w: W, reports: &[(String, IdReport)]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["observable", "index", "ks_d", "p_value", "rejected"])?;
    for (name, r) in reports {
        for row in &r.rows {
            out.write_record([
                name.clone(),
                row.index.to_string(),
                row.statistic.to_string(),
                row.p_value.to_string(),
                row.rejected.to_string(),
            ])?;
        }
        out.write_record([
            name.clone(),
            "summary".to_string(),
            r.rejection_rate.to_string(),
            format!("{}..{}", r.interval.0, r.interval.1),
            r.within.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One measured deviation of a symmetry or equivariance check.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationRow {
    pub check: String,
    pub group: String,
    pub model: usize,
    pub trial: usize,
    pub deviation: f64,
}

/// `check,group,model,trial,deviation`.
pub fn write_deviations<W: Write>(w: W, rows: &[DeviationRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["check", "group", "model", "trial", "deviation"])?;
    for r in rows {
        out.write_record([
            r.check.clone(),
            r.group.clone(),
            r.model.to_string(),
            r.trial.to_string(),
            r.deviation.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// A labelled point of a fidelity-vs-FLOPs scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub normalized_flops: f64,
    pub fidelity: f64,
    pub label: String,
}

const W: f64 = 800.0;
const H: f64 = 600.0;
const MARGIN: f64 = 60.0;

fn span(values: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let d = (hi - lo).max(1e-6) * pad;
    (lo - d, hi + d)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// 800×600 scatter of fidelity against normalized FLOPs with dashed lines
/// at the unpruned FLOPs (1.0) and the unpruned fidelity.
pub fn svg_scatter(points: &[ScatterPoint], baseline_fidelity: f64) -> String {
    let (x0, x1) = span(points.iter().map(|p| p.normalized_flops).chain([1.0]), 0.05);
    let (y0, y1) = span(points.iter().map(|p| p.fidelity).chain([baseline_fidelity]), 0.05);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t}V{b}H{r}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + (x1 - x0) * f, y0 + (y1 - y0) * f);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{xv:.3}</text>"#, sx(xv), b + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{yv:.3}</text>"#, l - 6.0, sy(yv));
    }
    let bx = sx(1.0);
    let by = sy(baseline_fidelity);
    let _ = writeln!(s, r#"<line x1="{bx:.1}" y1="{t}" x2="{bx:.1}" y2="{b}" stroke="gray" stroke-dasharray="6 4"/>"#);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{by:.1}" x2="{r}" y2="{by:.1}" stroke="gray" stroke-dasharray="6 4"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">normalized FLOPs</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 18 {})">fidelity</text>"#,
        H / 2.0,
        H / 2.0
    );
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"><title>{}</title></circle>"#,
            sx(p.normalized_flops),
            sy(p.fidelity),
            escape(&p.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Overlaid step histograms of `samples[·][i]` for each listed index.
pub fn svg_histograms(samples: &[Vec<f64>], indices: &[usize], bins: usize) -> String {
    let bins = bins.max(1);
    let cols: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| samples.iter().filter_map(|r| r.get(i).copied()).collect())
        .collect();
    let (lo, hi) = span(cols.iter().flatten().copied(), 0.0);
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<usize>> = cols
        .iter()
        .map(|c| {
            let mut h = vec![0; bins];
            for v in c {
                h[(((v - lo) / width) as usize).min(bins - 1)] += 1;
            }
            h
        })
        .collect();
    let top = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let sx = |b: usize| MARGIN + b as f64 / bins as f64 * (W - 2.0 * MARGIN);
    let sy = |c: usize| H - MARGIN - c as f64 / top * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="11">{lo:.4}</text>"#, H - MARGIN + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{hi:.4}</text>"#, W - MARGIN, H - MARGIN + 16.0);
    for (k, h) in counts.iter().enumerate() {
        let hue = (k * 360) / counts.len().max(1);
        let mut d = format!("M{:.1} {:.1}", sx(0), sy(0));
        for (b, &c) in h.iter().enumerate() {
            let _ = write!(d, "V{:.1}H{:.1}", sy(c), sx(b + 1));
        }
        let _ = write!(d, "V{:.1}", sy(0));
        let _ = writeln!(
            s,
            r#"<path d="{d}" fill="none" stroke="hsl({hue},70%,45%)" stroke-opacity="0.8"><title>index {}</title></path>"#,
            indices[k]
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{evaluate, PruneConfig};
    use crate::model::fixtures::tiny_dense;
    use crate::model::Dataset;
    use crate::tensor::Tensor;

    #[test]
    fn run_report_csv_has_header_and_summary() {
        let m = tiny_dense();
        let data = Dataset::new(
            vec![Tensor::vector(vec![1.0, 0.0]).unwrap(), Tensor::vector(vec![0.0, 1.0]).unwrap()],
            vec![0, 1],
            2,
        )
        .unwrap();
        let r = evaluate(&m, &data, &PruneConfig::none()).unwrap();
        let mut buf = Vec::new();
        write_run_report(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "layer,kind,param,flops,prunes,mispredicts");
        assert!(lines.last().unwrap().starts_with("total,summary,"));
        assert!(!text.contains('\r'));
        let mut buf = Vec::new();
        write_records(&mut buf, &r.records).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("index,label,pred,flops\n0,0,"));
    }

    #[test]
    fn svg_is_fixed_size_with_dashed_baselines() {
        let pts = vec![
            ScatterPoint { normalized_flops: 0.9, fidelity: 0.8, label: "a<b".into() },
            ScatterPoint { normalized_flops: 1.0, fidelity: 0.82, label: "base".into() },
        ];
        let s = svg_scatter(&pts, 0.82);
        assert!(s.starts_with("<svg") && s.contains(r#"width="800" height="600""#));
        assert_eq!(s.matches("stroke-dasharray").count(), 2);
        assert!(s.contains("a&lt;b"));
        assert_eq!(s, svg_scatter(&pts, 0.82));
        let h = svg_histograms(&[vec![0.0, 1.0], vec![0.5, 2.0]], &[0, 1], 4);
        assert_eq!(h.matches("<path").count(), 2);
    }
}
