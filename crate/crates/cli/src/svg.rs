//! SVG figures rendered from the CSV files they illustrate.
//!
//! Both emitters take CSV text, not in-memory results, so a figure can
//! always be regenerated from what is on disk.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Eigenvalues below this fraction of a method's largest are not plotted.
const ZERO_FRACTION: f64 = 1e-12;

/// Parse `method,seed,eigenvalue` rows into eigenvalues per method, in first-seen order.
pub fn parse_eigs_csv(csv: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = csv.lines();
    let header = lines.next().context("empty eigenvalue CSV")?;
    if header.trim() != "method,seed,eigenvalue" {
        bail!("unexpected eigenvalue CSV header `{header}`");
    }
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split(',');
        let (Some(method), Some(_seed), Some(v), None) = (f.next(), f.next(), f.next(), f.next()) else {
            bail!("line {}: expected 3 fields", n + 2);
        };
        let v: f64 = v.trim().parse().with_context(|| format!("line {}: bad eigenvalue", n + 2))?;
        match out.iter_mut().find(|(m, _)| m == method) {
            Some((_, vals)) => vals.push(v),
            None => out.push((method.to_string(), vec![v])),
        }
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlaid log10 eigenvalue histograms, one outline per method, as density
/// (fraction of that method's plotted eigenvalues per bin).
pub fn histogram_svg(eigs_csv: &str, bins: usize) -> Result<String> {
    let series = parse_eigs_csv(eigs_csv)?;
    if series.is_empty() || bins == 0 {
        bail!("nothing to plot");
    }
    let logs: Vec<(String, Vec<f64>)> = series
        .into_iter()
        .map(|(m, v)| {
            let top = v.iter().copied().fold(0.0_f64, f64::max);
            let kept = v.into_iter().filter(|&l| l > 0.0 && l >= ZERO_FRACTION * top).map(f64::log10).collect();
            (m, kept)
        })
        .collect();
    let all = logs.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        bail!("no positive eigenvalues to plot");
    }
    let (lo, hi) = if hi > lo { (lo.floor(), hi.ceil()) } else { (lo - 1.0, hi + 1.0) };
    let width = (hi - lo) / bins as f64;
    let densities: Vec<Vec<f64>> = logs
        .iter()
        .map(|(_, v)| {
            let mut c = vec![0.0; bins];
            for &x in v {
                c[(((x - lo) / width) as usize).min(bins - 1)] += 1.0;
            }
            let n = v.len().max(1) as f64;
            c.into_iter().map(|k| k / n).collect()
        })
        .collect();
    let ymax = densities.iter().flatten().copied().fold(0.0_f64, f64::max).max(1e-12);
    let px = |x: f64| MARGIN + (x - lo) / (hi - lo) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - y / ymax * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    axes(&mut s, "log10 eigenvalue", "fraction");
    let mut tick = lo;
    while tick <= hi + 1e-9 {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{tick}</text>"#, px(tick), HEIGHT - MARGIN + 15.0);
        tick += ((hi - lo) / 8.0).ceil().max(1.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{ymax:.3}</text>"#, MARGIN - 4.0, MARGIN + 4.0);
    for (k, ((method, _), dens)) in logs.iter().zip(&densities).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = format!("{:.2},{:.2}", px(lo), py(0.0));
        for (b, d) in dens.iter().enumerate() {
            let (x0, x1) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
            let _ = write!(pts, " {:.2},{:.2} {:.2},{:.2}", px(x0), py(*d), px(x1), py(*d));
        }
        let _ = write!(pts, " {:.2},{:.2}", px(hi), py(0.0));
        let _ = writeln!(s, r#"<polyline class="series" data-method="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="1.5" points="{pts}"/>"#, escape(method));
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="{color}"/>"#, WIDTH - MARGIN - 110.0, ly - 10.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}" font-size="12">{}</text>"#, WIDTH - MARGIN - 92.0, escape(method));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{xlabel}</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
}

/// Iteration and band columns of a training trace CSV.
pub struct BandTable {
    pub iterations: Vec<usize>,
    /// `rows[record][band]`.
    pub rows: Vec<Vec<f64>>,
}

pub fn parse_trace_bands(trace_csv: &str) -> Result<BandTable> {
    let mut lines = trace_csv.lines();
    let header: Vec<&str> = lines.next().context("empty trace CSV")?.split(',').collect();
    if header.first() != Some(&"iteration") {
        bail!("trace CSV must start with an iteration column");
    }
    let band_cols: Vec<usize> = (0..header.len()).filter(|&k| header[k].starts_with("band_")).collect();
    let mut table = BandTable { iterations: Vec::new(), rows: Vec::new() };
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            bail!("line {}: {} fields, header has {}", n + 2, f.len(), header.len());
        }
        table.iterations.push(f[0].parse().with_context(|| format!("line {}: bad iteration", n + 2))?);
        let row: Result<Vec<f64>> =
            band_cols.iter().map(|&k| f[k].parse::<f64>().with_context(|| format!("line {}: bad band value", n + 2))).collect();
        table.rows.push(row?);
    }
    Ok(table)
}

/// White (0) through orange to dark red (2 and above).
fn heat_color(v: f64) -> String {
    let t = (v / 2.0).clamp(0.0, 1.0);
    let r = 255.0 - 115.0 * t.powi(2);
    let g = 255.0 * (1.0 - t);
    let b = 255.0 * (1.0 - t).powi(3);
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Heatmap of band errors: x is the recorded iteration, y the frequency band
/// (low at the bottom), color the relative error on a fixed `[0, 2]` scale.
pub fn heatmap_svg(trace_csv: &str) -> Result<String> {
    let table = parse_trace_bands(trace_csv)?;
    let records = table.rows.len();
    let bands = table.rows.first().map_or(0, Vec::len);
    if records == 0 || bands == 0 {
        bail!("trace has no band columns to plot");
    }
    let cw = (WIDTH - 2.0 * MARGIN) / records as f64;
    let ch = (HEIGHT - 2.0 * MARGIN) / bands as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (r, row) in table.rows.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            let x = MARGIN + r as f64 * cw;
            let y = HEIGHT - MARGIN - (b + 1) as f64 * ch;
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}"><title>iteration {} band {b}: {v:.4}</title></rect>"#,
                heat_color(*v),
                table.iterations[r]
            );
        }
    }
    axes(&mut s, "iteration", "frequency band");
    let step = records.div_ceil(8);
    for r in (0..records).step_by(step) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            MARGIN + (r as f64 + 0.5) * cw,
            HEIGHT - MARGIN + 14.0,
            table.iterations[r]
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Count elements carrying `class="name"`, for shape checks.
pub fn count_class(svg: &str, name: &str) -> usize {
    svg.matches(&format!(r#"class="{name}""#)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EIGS: &str = "method,seed,eigenvalue\nrelu,1,1e-3\nrelu,1,2e2\nrelu+bn,1,0.5\nrelu+bn,1,4.0\nrelu+bn,2,0\n";

    #[test]
    fn histogram_has_one_series_per_method() {
        let svg = histogram_svg(EIGS, 10).unwrap();
        assert_eq!(count_class(&svg, "series"), 2);
        assert!(svg.contains(r#"data-method="relu+bn""#));
        assert_eq!(svg, histogram_svg(EIGS, 10).unwrap());
    }

    #[test]
    fn histogram_rejects_bad_csv() {
        assert!(histogram_svg("a,b\n1,2\n", 4).is_err());
        assert!(histogram_svg("method,seed,eigenvalue\nx,1\n", 4).is_err());
        assert!(histogram_svg("method,seed,eigenvalue\n", 4).is_err());
    }

    #[test]
    fn heatmap_cell_count_is_records_times_bands() {
        let csv = "iteration,loss,psnr,ssim,band_0,band_1,band_2\n1,1,1,,0.1,0.5,2\n2,1,1,,0,0.2,1.5\n";
        let svg = heatmap_svg(csv).unwrap();
        assert_eq!(count_class(&svg, "cell"), 6);
        assert!(heatmap_svg("iteration,loss,psnr,ssim\n1,1,1,\n").is_err());
    }

    #[test]
    fn colors_span_the_scale() {
        assert_eq!(heat_color(0.0), "#ffffff");
        assert_eq!(heat_color(5.0), heat_color(2.0));
    }
}
