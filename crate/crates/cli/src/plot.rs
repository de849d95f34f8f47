//! Semilog SVG rendering of sensitivity profiles, built from lines, circles
//! and text only.

use std::fmt::Write;

use edslab::eds::{DecayFit, SensitivityProfile};

use crate::CliError;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One labelled set of profiles with an optional fitted envelope.
#[derive(Debug, Clone, Copy)]
pub struct Panel<'a> {
    pub label: &'a str,
    pub profiles: &'a [SensitivityProfile],
    pub fit: Option<&'a DecayFit>,
}

/// Single-panel plot of `s_i` against stage with the envelope overlaid.
pub fn plot_decay(
    profiles: &[SensitivityProfile],
    fit: Option<&DecayFit>,
) -> Result<String, CliError> {
    plot_panels(&[Panel {
        label: "",
        profiles,
        fit,
    }])
}

/// Panels stacked vertically in one document.
pub fn plot_panels(panels: &[Panel<'_>]) -> Result<String, CliError> {
    if panels.is_empty() || panels.iter().any(|p| p.profiles.is_empty()) {
        return Err(CliError::Plot("nothing to plot".into()));
    }
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        draw_panel(&mut svg, panel, PANEL_HEIGHT * k as f64);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Envelope values `magnitude * upsilon * rho^|i - j|` for one profile.
fn envelope(fit: &DecayFit, prof: &SensitivityProfile) -> Vec<(isize, f64)> {
    prof.stages()
        .map(|(i, _)| {
            (
                i,
                prof.magnitude * fit.envelope((i - prof.stage).unsigned_abs()),
            )
        })
        .collect()
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_lo: f64,
    y_hi: f64,
    top: f64,
}

impl Frame {
    fn x(&self, i: isize) -> f64 {
        let span = (self.x_max - self.x_min).max(1.0);
        LEFT + (i as f64 - self.x_min) / span * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v.log10() - self.y_lo) / (self.y_hi - self.y_lo);
        self.top + TOP + (1.0 - t) * (PANEL_HEIGHT - TOP - BOTTOM)
    }

    fn visible(&self, v: f64) -> bool {
        v > 0.0 && v.is_finite() && v.log10() >= self.y_lo
    }
}

fn draw_panel(svg: &mut String, panel: &Panel<'_>, top: f64) {
    let profiles = panel.profiles;
    let x_max = profiles
        .iter()
        .map(|p| p.s.len() as f64 - 2.0)
        .fold(0.0, f64::max);
    let mut values: Vec<f64> = profiles.iter().flat_map(|p| p.s.iter().copied()).collect();
    let envelopes: Vec<Vec<(isize, f64)>> = match panel.fit {
        Some(fit) => profiles.iter().map(|p| envelope(fit, p)).collect(),
        None => Vec::new(),
    };
    values.extend(envelopes.iter().flatten().map(|&(_, v)| v));
    let hi = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let lo = values
        .iter()
        .copied()
        .filter(|&v| v > 0.0 && v.is_finite())
        .fold(f64::INFINITY, f64::min)
        .max(hi * 1e-16);
    let (y_lo, y_hi) = if hi > 0.0 {
        let (a, b) = (lo.log10().floor(), hi.log10().ceil());
        (a, if b > a { b } else { a + 1.0 })
    } else {
        (-1.0, 0.0)
    };
    let f = Frame {
        x_min: -1.0,
        x_max,
        y_lo,
        y_hi,
        top,
    };

    let (left, right) = (LEFT, WIDTH - RIGHT);
    let (upper, lower) = (top + TOP, top + PANEL_HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<line x1="{left:.3}" y1="{lower:.3}" x2="{right:.3}" y2="{lower:.3}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left:.3}" y1="{upper:.3}" x2="{left:.3}" y2="{lower:.3}" stroke="black"/>"#
    );
    for e in (y_lo as i32)..=(y_hi as i32) {
        let y = f.y(10f64.powi(e));
        let _ = writeln!(
            svg,
            r#"<line x1="{:.3}" y1="{y:.3}" x2="{left:.3}" y2="{y:.3}" stroke="black"/>"#,
            left - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">1e{e}</text>"#,
            left - 8.0,
            y + 4.0
        );
    }
    let step = ((x_max + 1.0) / 10.0).ceil().max(1.0) as usize;
    for i in (-1..=x_max as isize).step_by(step) {
        let x = f.x(i);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.3}" y="{:.3}" font-size="11" text-anchor="middle">{i}</text>"#,
            lower + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">stage</text>"#,
        (left + right) / 2.0,
        lower + 32.0
    );
    if !panel.label.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" font-size="13">{}</text>"#,
            left,
            top + 18.0,
            escape(panel.label)
        );
    }

    let mut marked: Vec<isize> = profiles.iter().map(|p| p.stage).collect();
    marked.sort_unstable();
    marked.dedup();
    for &j in &marked {
        let x = f.x(j);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.3}" y1="{upper:.3}" x2="{x:.3}" y2="{lower:.3}" stroke="#888888" stroke-dasharray="4 3"/>"##
        );
    }

    for env in &envelopes {
        for w in env.windows(2) {
            let ((i0, v0), (i1, v1)) = (w[0], w[1]);
            if f.visible(v0) && f.visible(v1) {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="black" stroke-width="1.5"/>"#,
                    f.x(i0),
                    f.y(v0),
                    f.x(i1),
                    f.y(v1)
                );
            }
        }
    }

    for prof in profiles {
        let k = marked.binary_search(&prof.stage).unwrap_or(0);
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(isize, f64)> = prof.stages().filter(|&(_, v)| f.visible(v)).collect();
        for w in pts.windows(2) {
            let ((i0, v0), (i1, v1)) = (w[0], w[1]);
            if i1 == i0 + 1 {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{color}" stroke-opacity="0.5"/>"#,
                    f.x(i0),
                    f.y(v0),
                    f.x(i1),
                    f.y(v1)
                );
            }
        }
        for (i, v) in pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.3}" cy="{:.3}" r="2" fill="{color}"/>"#,
                f.x(i),
                f.y(v)
            );
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use edslab::eds::FitMode;

    fn exact_profile(
        j: isize,
        n: usize,
        upsilon: f64,
        rho: f64,
        magnitude: f64,
    ) -> SensitivityProfile {
        SensitivityProfile {
            stage: j,
            s: (-1..=n as isize)
                .map(|i| magnitude * upsilon * rho.powi((i - j).unsigned_abs() as i32))
                .collect(),
            magnitude,
            converged: true,
            replicate: 0,
        }
    }

    fn fit(upsilon: f64, rho: f64) -> DecayFit {
        DecayFit {
            upsilon,
            rho,
            r2: 1.0,
            floor: 1e-12,
            no_decay: false,
            points: 0,
            mode: FitMode::UpperEnvelope,
        }
    }

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!(" {name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(plot_decay(&[], None).is_err());
        assert!(plot_panels(&[]).is_err());
    }

    #[test]
    fn exact_profile_lies_on_envelope() {
        let prof = exact_profile(5, 12, 2.0, 0.6, 0.1);
        let svg = plot_decay(std::slice::from_ref(&prof), Some(&fit(2.0, 0.6))).unwrap();
        let segments: Vec<(f64, f64, f64, f64)> = svg
            .lines()
            .filter(|l| l.starts_with("<line") && l.contains("stroke-width=\"1.5\""))
            .map(|l| (attr(l, "x1"), attr(l, "y1"), attr(l, "x2"), attr(l, "y2")))
            .collect();
        let circles: Vec<(f64, f64)> = svg
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| (attr(l, "cx"), attr(l, "cy")))
            .collect();
        assert_eq!(circles.len(), prof.s.len());
        assert_eq!(segments.len(), prof.s.len() - 1);
        for (cx, cy) in circles {
            let on_line = segments.iter().any(|&(x1, y1, x2, y2)| {
                ((x1 - cx).abs() < 5e-4 && (y1 - cy).abs() < 5e-4)
                    || ((x2 - cx).abs() < 5e-4 && (y2 - cy).abs() < 5e-4)
            });
            assert!(on_line, "({cx}, {cy})");
        }
    }

    #[test]
    fn output_is_deterministic_and_marks_stages() {
        let profiles = vec![
            exact_profile(2, 8, 1.0, 0.5, 1.0),
            exact_profile(6, 8, 1.0, 0.5, 1.0),
        ];
        let a = plot_decay(&profiles, Some(&fit(1.0, 0.5))).unwrap();
        let b = plot_decay(&profiles, Some(&fit(1.0, 0.5))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("stroke-dasharray").count(), 2);
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn zero_values_are_skipped() {
        let mut prof = exact_profile(0, 4, 1.0, 0.5, 1.0);
        prof.s[3] = 0.0;
        let svg = plot_decay(&[prof.clone()], None).unwrap();
        assert_eq!(svg.matches("<circle").count(), prof.s.len() - 1);
    }
}
