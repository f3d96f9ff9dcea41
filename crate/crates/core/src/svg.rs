//! Standalone SVG plot of a trace with ground-truth CP bands, predicted
//! starts, and optionally the segmentation track underneath.

use std::fmt::Write;

use crate::locator::SegmentationTrack;
use crate::trace::{GroundTruth, Trace};

const WIDTH: usize = 1600;
const TRACE_HEIGHT: f64 = 300.0;
const TRACK_HEIGHT: f64 = 40.0;
const CLASS_COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#bbbbbb"];

pub fn render(trace: &Trace, gt: Option<&GroundTruth>, starts: &[usize], track: Option<&SegmentationTrack>) -> String {
    let samples = trace.samples();
    let len = samples.len().max(1);
    let x_of = |i: usize| i as f64 * WIDTH as f64 / len as f64;
    let (lo, hi) = samples
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = ((hi - lo) as f64).max(1e-9);
    let y_of = |v: f32| 10.0 + (TRACE_HEIGHT - 20.0) * (1.0 - (v - lo) as f64 / span);
    let height = TRACE_HEIGHT + if track.is_some() { TRACK_HEIGHT + 10.0 } else { 0.0 };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(trace.id()));
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    if let Some(gt) = gt {
        for (s, l) in gt.iter() {
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="0" width="{:.2}" height="{TRACE_HEIGHT}" fill="#2ca02c" fill-opacity="0.18"/>"##,
                x_of(s),
                (x_of(s + l) - x_of(s)).max(0.5)
            );
        }
    }
    // Min/max envelope per pixel column.
    let mut path = String::new();
    for col in 0..WIDTH {
        let a = col * len / WIDTH;
        let b = ((col + 1) * len / WIDTH).max(a + 1).min(samples.len());
        if a >= b {
            continue;
        }
        let (mn, mx) = samples[a..b]
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(p, q), &v| (p.min(v), q.max(v)));
        let _ = write!(path, "M{col}.5 {:.2}V{:.2}", y_of(mx), y_of(mn));
    }
    let _ = writeln!(out, r##"<path d="{path}" stroke="#333333" stroke-width="1" fill="none"/>"##);
    for &s in starts {
        let x = x_of(s);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="0" x2="{x:.2}" y2="{TRACE_HEIGHT}" stroke="#d62728" stroke-width="1.5"/>"##
        );
    }
    if let Some(track) = track {
        let y = TRACE_HEIGHT + 10.0;
        let mut i = 0;
        let classes = &track.classes;
        while i < classes.len() {
            let mut j = i;
            while j < classes.len() && classes[j] == classes[i] {
                j += 1;
            }
            let x0 = x_of(i * track.stride);
            let x1 = x_of(j * track.stride).max(x0 + 0.5);
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{y}" width="{:.2}" height="{TRACK_HEIGHT}" fill="{}"/>"#,
                x1 - x0,
                CLASS_COLORS[classes[i] as usize]
            );
            i = j;
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
