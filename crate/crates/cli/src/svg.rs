use std::fmt::Write;

use crate::DumpRow;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;

/// Scatter of the first two representation coordinates. Points are colored
/// by episode time when available, otherwise by ground-truth `x`.
pub fn scatter(rows: &[DumpRow]) -> String {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.f.first().copied().unwrap_or(0.0), r.f.get(1).copied().unwrap_or(0.0)))
        .collect();
    let shade: Vec<f64> = rows.iter().map(|r| r.t.map_or(r.x, |t| t as f64)).collect();
    let range = |v: &mut dyn Iterator<Item = f64>| {
        v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    };
    let (x0, x1) = range(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = range(&mut pts.iter().map(|p| p.1));
    let (s0, s1) = range(&mut shade.iter().copied());
    let norm = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let inner = SIZE - 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, s) in pts.iter().zip(&shade) {
        let cx = MARGIN + inner * norm(p.0, x0, x1);
        let cy = SIZE - MARGIN - inner * norm(p.1, y0, y1);
        // blue to red
        let u = norm(*s, s0, s1);
        let (r, b) = ((255.0 * u) as u8, (255.0 * (1.0 - u)) as u8);
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.5" fill="rgb({r},40,{b})" fill-opacity="0.8"/>"#);
    }
    out.push_str("</svg>\n");
    out
}
