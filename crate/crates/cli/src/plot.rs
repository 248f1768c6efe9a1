//! Minimal SVG line plot of the schedule series.

use std::fmt::Write;

use cardiosim_core::diffusion::Schedule;
use cardiosim_core::format::fmt_g;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

/// Every series lies in [0, 1], so one shared axis suffices.
pub fn schedule_svg(schedule: &Schedule) -> String {
    let series: [(&str, &str, &[f64]); 4] = [
        ("beta", "#1f77b4", &schedule.beta),
        ("alpha", "#ff7f0e", &schedule.alpha),
        ("alpha_bar", "#2ca02c", &schedule.alpha_bar),
        ("noise_level", "#d62728", &schedule.noise_level),
    ];
    let steps = schedule.steps.max(2) as f64;
    let x = |t: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * (t as f64 - 1.0) / (steps - 1.0);
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * v.clamp(0.0, 1.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">t (1..{})</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        schedule.steps
    );
    for (i, (name, colour, values)) in series.iter().enumerate() {
        let mut d = String::new();
        for (k, v) in values.iter().enumerate() {
            let cmd = if k == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{} {} ", fmt_g(x(k + 1)), fmt_g(y(*v)));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{colour}">{name}</text>"#,
            WIDTH - MARGIN - 80.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
