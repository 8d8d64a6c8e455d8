//! SVG scatter plots of a dataset projected on two feature dimensions.
//!
//! Points are colored by class hue; darker points are more typical. An
//! optional classifier paints its decision regions underneath, evaluated on a
//! grid with the remaining features held at the dataset mean.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::scalar::{argmax, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub dims: [usize; 2],
    pub width: u32,
    pub height: u32,
    pub radius: f64,
    /// Decision-region grid cells per side.
    pub grid: usize,
    pub title: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            dims: [0, 1],
            width: 640,
            height: 640,
            radius: 3.0,
            grid: 64,
            title: None,
        }
    }
}

fn hue(class: usize, num_classes: usize) -> f64 {
    360.0 * class as f64 / num_classes.max(1) as f64
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders the plot. `typicality` is aligned with `d` and expected in `[0, 1]`;
/// without it every point is drawn at mid lightness.
pub fn plot_scatter<T: Real>(
    d: &Dataset<T>,
    typicality: Option<&[T]>,
    model: Option<&MlpModel<T>>,
    opts: &PlotOptions,
) -> Result<String> {
    if d.is_empty() {
        return Err(Error::NoSamples);
    }
    let [dx, dy] = opts.dims;
    if dx >= d.dim() || dy >= d.dim() {
        return Err(Error::Parameter(format!(
            "plot dims {:?} out of range for dimension {}",
            opts.dims,
            d.dim()
        )));
    }
    if let Some(t) = typicality {
        if t.len() != d.len() {
            return Err(Error::Dimension {
                expected: d.len(),
                got: t.len(),
            });
        }
    }
    if let Some(m) = model {
        if m.input_dim() != d.dim() {
            return Err(Error::Dimension {
                expected: d.dim(),
                got: m.input_dim(),
            });
        }
    }

    let xs: Vec<f64> = d.features().map(|x| x[dx].as_f64()).collect();
    let ys: Vec<f64> = d.features().map(|x| x[dy].as_f64()).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-9);
        (lo - pad, hi + pad)
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let (w, h) = (opts.width as f64, opts.height as f64);
    let px = |x: f64| (x - x0) / (x1 - x0) * w;
    let py = |y: f64| h - (y - y0) / (y1 - y0) * h;
    let c = d.num_classes();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        opts.width, opts.height, opts.width, opts.height
    );
    if let Some(title) = &opts.title {
        let _ = writeln!(svg, "<title>{}</title>", escape(title));
    }
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    if let Some(m) = model {
        let n = d.len() as f64;
        let mean: Vec<T> = (0..d.dim())
            .map(|j| T::lit(d.features().map(|x| x[j].as_f64()).sum::<f64>() / n))
            .collect();
        let g = opts.grid.max(1);
        let (cw, ch) = (w / g as f64, h / g as f64);
        let _ = writeln!(svg, r#"<g class="regions" opacity="0.25">"#);
        for i in 0..g {
            for j in 0..g {
                let mut x = mean.clone();
                x[dx] = T::lit(x0 + (i as f64 + 0.5) / g as f64 * (x1 - x0));
                x[dy] = T::lit(y1 - (j as f64 + 0.5) / g as f64 * (y1 - y0));
                let k = argmax(&m.forward(&x)?);
                let _ = writeln!(
                    svg,
                    r#"<rect class="region" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="hsl({:.1},70%,60%)"/>"#,
                    i as f64 * cw,
                    j as f64 * ch,
                    cw + 0.01,
                    ch + 0.01,
                    hue(k, c)
                );
            }
        }
        let _ = writeln!(svg, "</g>");
    }

    let _ = writeln!(svg, r#"<g class="points">"#);
    for (i, s) in d.samples().iter().enumerate() {
        let t = typicality
            .map(|t| t[i].as_f64().clamp(0.0, 1.0))
            .unwrap_or(0.5);
        let lightness = 85.0 - 60.0 * t;
        let _ = writeln!(
            svg,
            r#"<circle class="point" data-class="{}" cx="{:.2}" cy="{:.2}" r="{}" fill="hsl({:.1},75%,{:.1}%)"/>"#,
            s.label,
            px(xs[i]),
            py(ys[i]),
            opts.radius,
            hue(s.label, c),
            lightness
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, SplitTag};
    use crate::mlp::init_model;

    fn data() -> Dataset<f64> {
        let samples = (0..6)
            .map(|i| Sample::new(i, vec![i as f64, (i * i) as f64, 1.0], (i % 2) as usize))
            .collect();
        Dataset::new(samples, 2, SplitTag::Train).unwrap()
    }

    #[test]
    fn one_circle_per_sample() {
        let d = data();
        let svg = plot_scatter(&d, None, None, &PlotOptions::default()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn regions_and_bad_inputs() {
        let d = data();
        let m = init_model::<f64>(&[3, 2], 2, 1).unwrap();
        let opts = PlotOptions {
            grid: 4,
            title: Some("a & b".into()),
            ..PlotOptions::default()
        };
        let svg = plot_scatter(&d, Some(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), Some(&m), &opts).unwrap();
        assert_eq!(svg.matches(r#"class="region""#).count(), 16);
        assert!(svg.contains("a &amp; b"));
        assert!(plot_scatter(&d, Some(&[0.5]), None, &opts).is_err());
        let bad = PlotOptions {
            dims: [0, 3],
            ..PlotOptions::default()
        };
        assert!(plot_scatter(&d, None, None, &bad).is_err());
    }
}
