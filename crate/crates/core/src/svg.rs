//! Hand-written SVG scatter plots of 2-D runs.

use std::fmt::Write;

use crate::denoiser::LabeledMixture;
use crate::error::{Error, Result};
use crate::latent::Latent;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;
const PALETTE: &[&str] = &[
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Default)]
pub struct PlotLayers<'a> {
    /// Grey background draw from the dataset.
    pub dataset_points: &'a [Latent],
    /// Final samples, drawn as crosses.
    pub samples: &'a [Latent],
    /// Optional chain paths.
    pub trajectories: Vec<Vec<Latent>>,
    pub title: String,
}

struct Frame {
    lo: [f64; 2],
    span: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a Latent>) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return Frame {
                lo: [-1.0, -1.0],
                span: 2.0,
            };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        Frame {
            lo: [mid[0] - span / 2.0, mid[1] - span / 2.0],
            span,
        }
    }

    fn map(&self, p: &Latent) -> (f64, f64) {
        let inner = SIZE - 2.0 * MARGIN;
        let x = MARGIN + (p[0] - self.lo[0]) / self.span * inner;
        let y = SIZE - MARGIN - (p[1] - self.lo[1]) / self.span * inner;
        (x, y)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of dataset points (grey), component means (class colours), final
/// samples (black crosses) and optional trajectory polylines.
pub fn render_svg(mixture: &LabeledMixture, layers: &PlotLayers<'_>) -> Result<String> {
    if mixture.dimension != 2 {
        return Err(Error::Analysis(format!(
            "SVG plots need 2-D data, got {}",
            mixture.dimension
        )));
    }
    let modes = mixture.modes();
    let all = layers
        .dataset_points
        .iter()
        .chain(layers.samples)
        .chain(modes.iter().map(|(_, m)| m))
        .chain(layers.trajectories.iter().flatten());
    for p in layers
        .dataset_points
        .iter()
        .chain(layers.samples)
        .chain(layers.trajectories.iter().flatten())
    {
        p.ensure_dim(2)?;
    }
    let frame = Frame::fit(all);

    let mut out = String::new();
    let w = |e: std::fmt::Error| Error::Analysis(e.to_string());
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .map_err(w)?;
    writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).map_err(w)?;
    if !layers.title.is_empty() {
        writeln!(
            out,
            r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{}</text>"#,
            escape(&layers.title)
        )
        .map_err(w)?;
    }
    writeln!(out, r##"<g fill="#b0b0b0">"##).map_err(w)?;
    for p in layers.dataset_points {
        let (x, y) = frame.map(p);
        writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6"/>"#).map_err(w)?;
    }
    writeln!(out, "</g>").map_err(w)?;

    for path in &layers.trajectories {
        let pts: Vec<String> = path
            .iter()
            .map(|p| {
                let (x, y) = frame.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            out,
            r##"<polyline fill="none" stroke="#555555" stroke-width="0.8" points="{}"/>"##,
            pts.join(" ")
        )
        .map_err(w)?;
    }

    let labels: Vec<u32> = mixture.labels().collect();
    for (label, m) in &modes {
        let idx = labels.iter().position(|l| l == label).unwrap_or(0);
        let (x, y) = frame.map(m);
        writeln!(
            out,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{}" stroke="#000000" stroke-width="0.6"><title>class {label}</title></circle>"##,
            PALETTE[idx % PALETTE.len()]
        )
        .map_err(w)?;
    }

    writeln!(out, r##"<g stroke="#000000" stroke-width="1.2">"##).map_err(w)?;
    for p in layers.samples {
        let (x, y) = frame.map(p);
        writeln!(
            out,
            r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}"/>"#,
            x - 3.0,
            y - 3.0,
            x + 3.0,
            y + 3.0,
            x - 3.0,
            y + 3.0,
            x + 3.0,
            y - 3.0
        )
        .map_err(w)?;
    }
    writeln!(out, "</g>").map_err(w)?;
    writeln!(out, "</svg>").map_err(w)?;
    Ok(out)
}
