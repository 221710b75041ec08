use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::tensorio::write_json;

use super::EvalReport;

pub fn write_report_json(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path.as_ref())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per ground-truth class.
pub fn per_class_csv(report: &EvalReport) -> String {
    let mut out = String::from("class,cluster,tp,fp,fn,iou,f1\n");
    for s in &report.per_class {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.class,
            s.cluster,
            s.true_positives,
            s.false_positives,
            s.false_negatives,
            opt(s.iou),
            opt(s.f1)
        );
    }
    out
}

/// SVG bar chart of per-class IoU.
pub fn iou_bar_chart_svg(report: &EvalReport, class_names: Option<&[String]>) -> String {
    let bar = 36.0;
    let gap = 12.0;
    let height = 220.0;
    let top = 20.0;
    let left = 40.0;
    let n = report.per_class.len() as f64;
    let width = left + n * (bar + gap) + gap;
    let total_h = top + height + 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + height
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = top + height * (1.0 - tick);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{tick:.2}</text>"#,
            left - 4.0,
            y + 4.0
        );
    }
    for (i, s) in report.per_class.iter().enumerate() {
        let iou = s.iou.unwrap_or(0.0);
        let x = left + gap + i as f64 * (bar + gap);
        let h = height * iou;
        let label = class_names
            .and_then(|names| names.get(s.class).cloned())
            .unwrap_or_else(|| s.class.to_string());
        let _ = writeln!(
            svg,
            r##"<rect x="{x}" y="{}" width="{bar}" height="{h}" fill="#4a7ab7"/>"##,
            top + height - h
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            x + bar / 2.0,
            top + height + 14.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{iou:.3}</text>"#,
            x + bar / 2.0,
            top + height - h - 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">mIoU {:.4}</text>"#,
        width / 2.0,
        total_h - 6.0,
        report.miou
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::super::{score, ConfusionMatrix};
    use super::*;

    #[test]
    fn csv_rows() {
        let mut cm = ConfusionMatrix::zeros(2, 2);
        cm.counts = vec![3, 1, 0, 4];
        let r = score(&cm, &[0, 1]).unwrap();
        let csv = per_class_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,cluster,tp,fp,fn,iou,f1");
        assert_eq!(lines[1], "0,0,3,0,1,0.750000,0.857143");
        assert_eq!(lines[2], "1,1,4,1,0,0.800000,0.888889");
        let svg = iou_bar_chart_svg(&r, None);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 2);
    }
}
