//! Deterministic SVG plots: a series over time, two series over time, and a
//! histogram with a normal-theory confidence interval for the mean.
//!
//! Coordinates are printed with three decimals, so identical input always
//! renders identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SinkError;
use crate::stats;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 40.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    XByTime,
    XyByTime,
    HistCi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: PlotKind,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub title: Option<String>,
    /// Legend labels for the two-series plot.
    #[serde(default)]
    pub labels: Option<[String; 2]>,
}

fn default_bins() -> usize {
    20
}

fn default_ci_level() -> f64 {
    0.95
}

impl PlotSpec {
    pub fn new(kind: PlotKind) -> Self {
        PlotSpec {
            kind,
            bins: default_bins(),
            ci_level: default_ci_level(),
            title: None,
            labels: None,
        }
    }

    pub fn validate(&self) -> Result<(), SinkError> {
        if self.bins == 0 {
            return Err(SinkError::BadParameter("bins must be at least 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(SinkError::BadParameter(format!(
                "ci_level {} is outside (0, 1)",
                self.ci_level
            )));
        }
        Ok(())
    }
}

/// Linear data-to-pixel transform for the plot area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    fn covering(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x_min, x_max) = min_max(xs);
        let (y_min, y_max) = min_max(ys);
        Frame {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        let w = WIDTH - LEFT - RIGHT;
        if self.x_max > self.x_min {
            LEFT + (x - self.x_min) / (self.x_max - self.x_min) * w
        } else {
            LEFT + w / 2.0
        }
    }

    pub fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - TOP - BOTTOM;
        if self.y_max > self.y_min {
            TOP + h - (y - self.y_min) / (self.y_max - self.y_min) * h
        } else {
            TOP + h / 2.0
        }
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn check_series(series: &[(f64, f64)]) -> Result<(), SinkError> {
    if series.is_empty() {
        return Err(SinkError::EmptySeries);
    }
    if let Some(index) = series
        .iter()
        .position(|(t, x)| !t.is_finite() || !x.is_finite())
    {
        return Err(SinkError::BadPoint { index });
    }
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: Option<&str>, frame: &Frame, x_label: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    if let Some(t) = title {
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="20.000" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(t)
        );
    }
    let x0 = LEFT;
    let x1 = WIDTH - RIGHT;
    let y0 = HEIGHT - BOTTOM;
    let y1 = TOP;
    let _ = writeln!(
        out,
        r#"<g id="axes" stroke="black" stroke-width="1" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}">
<line x1="{x0:.3}" y1="{y0:.3}" x2="{x1:.3}" y2="{y0:.3}"/>
<line x1="{x0:.3}" y1="{y0:.3}" x2="{x0:.3}" y2="{y1:.3}"/>
</g>"#,
        frame.x_min, frame.x_max, frame.y_min, frame.y_max
    );
    let font = r#"font-family="sans-serif" font-size="11""#;
    let _ = writeln!(
        out,
        r#"<text x="{x0:.3}" y="{:.3}" text-anchor="start" {font}>{}</text>
<text x="{x1:.3}" y="{:.3}" text-anchor="end" {font}>{}</text>
<text x="{:.3}" y="{:.3}" text-anchor="end" {font}>{}</text>
<text x="{:.3}" y="{:.3}" text-anchor="end" {font}>{}</text>
<text x="{:.3}" y="{:.3}" text-anchor="middle" {font}>{x_label}</text>"#,
        y0 + 14.0,
        tick_label(frame.x_min),
        y0 + 14.0,
        tick_label(frame.x_max),
        x0 - 4.0,
        y0,
        tick_label(frame.y_min),
        x0 - 4.0,
        y1 + 8.0,
        tick_label(frame.y_max),
        (x0 + x1) / 2.0,
        HEIGHT - 8.0,
    );
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{v:.3}")
    }
}

fn polyline(out: &mut String, id: &str, color: &str, frame: &Frame, series: &[(f64, f64)]) {
    if series.len() == 1 {
        let (t, x) = series[0];
        let _ = writeln!(
            out,
            r#"<circle id="{id}" class="marker" cx="{:.3}" cy="{:.3}" r="3" fill="{color}"/>"#,
            frame.px(t),
            frame.py(x)
        );
        return;
    }
    let mut pts = String::with_capacity(series.len() * 16);
    for (i, &(t, x)) in series.iter().enumerate() {
        if i > 0 {
            pts.push(' ');
        }
        let _ = write!(pts, "{:.3},{:.3}", frame.px(t), frame.py(x));
    }
    let _ = writeln!(
        out,
        r#"<polyline id="{id}" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>"#
    );
}

/// One series, time on the abscissa. A single point renders as a marker.
pub fn plot_x_by_time(series: &[(f64, f64)], spec: &PlotSpec) -> Result<String, SinkError> {
    spec.validate()?;
    check_series(series)?;
    let frame = Frame::covering(
        series.iter().map(|p| p.0),
        series.iter().map(|p| p.1),
    );
    let mut out = String::new();
    header(&mut out, spec.title.as_deref(), &frame, "time (s)");
    polyline(&mut out, "series0", COLORS[0], &frame, series);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Two series over the union of their time and value ranges, with a legend.
pub fn plot_xy_by_time(
    series_a: &[(f64, f64)],
    series_b: &[(f64, f64)],
    spec: &PlotSpec,
) -> Result<String, SinkError> {
    spec.validate()?;
    check_series(series_a)?;
    check_series(series_b).map_err(|e| match e {
        SinkError::BadPoint { index } => SinkError::BadPoint {
            index: series_a.len() + index,
        },
        e => e,
    })?;
    let all = series_a.iter().chain(series_b);
    let frame = Frame::covering(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut out = String::new();
    header(&mut out, spec.title.as_deref(), &frame, "time (s)");
    polyline(&mut out, "series0", COLORS[0], &frame, series_a);
    polyline(&mut out, "series1", COLORS[1], &frame, series_b);
    let labels = spec
        .labels
        .clone()
        .unwrap_or_else(|| ["a".to_string(), "b".to_string()]);
    out.push_str("<g id=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n");
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 12.0 + 14.0 * i as f64;
        let x = WIDTH - RIGHT - 110.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{}" stroke-width="2"/>
<text x="{:.3}" y="{y:.3}">{}</text>"#,
            y - 4.0,
            x + 16.0,
            y - 4.0,
            COLORS[i],
            x + 20.0,
            escape(label)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub interval: stats::MeanInterval,
}

/// Equal-width bins over `[min, max]` and the mean ± z·s/√n interval.
pub fn histogram(samples: &[f64], bins: usize, ci_level: f64) -> Result<Histogram, SinkError> {
    if samples.len() < 2 {
        return Err(SinkError::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
        return Err(SinkError::BadPoint { index });
    }
    let interval = stats::mean_interval(samples, ci_level)
        .map_err(|e| SinkError::BadParameter(e.to_string()))?;
    let (lo, hi) = min_max(samples.iter().copied());
    let bins = if hi > lo { bins.max(1) } else { 1 };
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in samples {
        let i = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }
    Ok(Histogram {
        lo,
        hi,
        counts,
        interval,
    })
}

pub fn plot_hist_ci(samples: &[f64], spec: &PlotSpec) -> Result<String, SinkError> {
    spec.validate()?;
    let h = histogram(samples, spec.bins, spec.ci_level)?;
    let (x_min, x_max) = if h.hi > h.lo {
        (h.lo, h.hi)
    } else {
        (h.lo - 0.5, h.lo + 0.5)
    };
    let peak = h.counts.iter().copied().max().unwrap_or(0) as f64;
    let frame = Frame {
        x_min,
        x_max,
        y_min: 0.0,
        y_max: peak,
    };
    let mut out = String::new();
    header(&mut out, spec.title.as_deref(), &frame, "value");
    out.push_str("<g id=\"bins\" fill=\"#9ecae1\" stroke=\"#3182bd\" stroke-width=\"0.5\">\n");
    let width = (x_max - x_min) / h.counts.len() as f64;
    for (i, &c) in h.counts.iter().enumerate() {
        let a = frame.px(x_min + width * i as f64);
        let b = frame.px(x_min + width * (i + 1) as f64);
        let top = frame.py(c as f64);
        let _ = writeln!(
            out,
            r#"<rect x="{a:.3}" y="{top:.3}" width="{:.3}" height="{:.3}" data-count="{c}"/>"#,
            b - a,
            frame.py(0.0) - top
        );
    }
    out.push_str("</g>\n");
    let ci = &h.interval;
    let (lo, hi) = (ci.mean - ci.half_width, ci.mean + ci.half_width);
    let _ = writeln!(
        out,
        r##"<g id="ci" stroke="#d62728" stroke-width="2" data-mean="{}" data-half-width="{}" data-level="{}" data-n="{}">
<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>
<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke-dasharray="4 2"/>
</g>"##,
        ci.mean,
        ci.half_width,
        ci.level,
        samples.len(),
        frame.px(lo),
        TOP + 8.0,
        frame.px(hi),
        TOP + 8.0,
        frame.px(ci.mean),
        TOP,
        frame.px(ci.mean),
        HEIGHT - BOTTOM,
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn attr(svg: &str, name: &str) -> f64 {
        let key = format!("{name}=\"");
        let start = svg.find(&key).unwrap() + key.len();
        let end = start + svg[start..].find('"').unwrap();
        svg[start..end].parse().unwrap()
    }

    fn points(svg: &str, id: &str) -> Vec<(f64, f64)> {
        let at = svg.find(&format!("id=\"{id}\"")).unwrap();
        let key = "points=\"";
        let start = at + svg[at..].find(key).unwrap() + key.len();
        let end = start + svg[start..].find('"').unwrap();
        svg[start..end]
            .split(' ')
            .map(|p| {
                let (a, b) = p.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn single_point_is_a_marker() {
        let svg = plot_x_by_time(&[(0.0, 1.0)], &PlotSpec::new(PlotKind::XByTime)).unwrap();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn ramp_maps_through_the_affine_frame() {
        let series: Vec<(f64, f64)> = (0..1000).map(|i| (i as f64 * 0.04, 2.0 * i as f64 - 7.0)).collect();
        let svg = plot_x_by_time(&series, &PlotSpec::new(PlotKind::XByTime)).unwrap();
        assert_eq!(attr(&svg, "data-x-min"), 0.0);
        assert_eq!(attr(&svg, "data-x-max"), 39.96);
        assert_eq!(attr(&svg, "data-y-min"), -7.0);
        assert_eq!(attr(&svg, "data-y-max"), 1991.0);
        let pts = points(&svg, "series0");
        assert_eq!(pts.len(), 1000);
        let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        for (&(t, x), &(px, py)) in series.iter().zip(&pts) {
            let ex = LEFT + t / 39.96 * w;
            let ey = TOP + h - (x + 7.0) / 1998.0 * h;
            assert!((px - ex).abs() <= 5e-4 && (py - ey).abs() <= 5e-4);
        }
        assert!(pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1));
        assert_eq!(pts[0], (LEFT, TOP + h));
        assert_eq!(pts[999], (WIDTH - RIGHT, TOP));
    }

    #[test]
    fn bad_input() {
        let spec = PlotSpec::new(PlotKind::XByTime);
        assert!(matches!(plot_x_by_time(&[], &spec), Err(SinkError::EmptySeries)));
        assert!(matches!(
            plot_x_by_time(&[(0.0, 1.0), (1.0, f64::NAN)], &spec),
            Err(SinkError::BadPoint { index: 1 })
        ));
    }

    #[test]
    fn deterministic_bytes() {
        let s: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, (i as f64).sin())).collect();
        let spec = PlotSpec::new(PlotKind::XyByTime);
        assert_eq!(
            plot_xy_by_time(&s, &s, &spec).unwrap(),
            plot_xy_by_time(&s, &s, &spec).unwrap()
        );
    }

    #[test]
    fn identical_series_coincide() {
        let s: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, (i * i) as f64)).collect();
        let svg = plot_xy_by_time(&s, &s, &PlotSpec::new(PlotKind::XyByTime)).unwrap();
        assert_eq!(points(&svg, "series0"), points(&svg, "series1"));
        assert!(svg.contains("id=\"legend\""));
    }

    #[test]
    fn union_range_for_offset_series() {
        let a = [(0.0, 0.0), (10.0, 1.0)];
        let b = [(5.0, -1.0), (20.0, 3.0)];
        let svg = plot_xy_by_time(&a, &b, &PlotSpec::new(PlotKind::XyByTime)).unwrap();
        assert_eq!(attr(&svg, "data-x-min"), 0.0);
        assert_eq!(attr(&svg, "data-x-max"), 20.0);
        assert_eq!(attr(&svg, "data-y-min"), -1.0);
        assert_eq!(attr(&svg, "data-y-max"), 3.0);
        let pb = points(&svg, "series1");
        assert_eq!(pb[0].0, LEFT + 0.25 * (WIDTH - LEFT - RIGHT));
        assert_eq!(pb[1], (WIDTH - RIGHT, TOP));
    }

    #[test]
    fn equal_samples_single_bin_zero_ci() {
        let h = histogram(&[5.0; 10], 20, 0.95).unwrap();
        assert_eq!(h.counts, vec![10]);
        assert_eq!(h.interval.half_width, 0.0);
        let svg = plot_hist_ci(&[5.0; 10], &PlotSpec::new(PlotKind::HistCi)).unwrap();
        assert_eq!(svg.matches("data-count=").count(), 1);
    }

    #[test]
    fn hundred_normals_ci_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / 100.0;
        let s = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        let svg = plot_hist_ci(&xs, &PlotSpec::new(PlotKind::HistCi)).unwrap();
        let hw = attr(&svg, "data-half-width");
        assert!((hw - 1.959963984540054 * s / 10.0).abs() < 1e-12);
        assert!((attr(&svg, "data-mean") - mean).abs() < 1e-12);
        let counts: usize = svg
            .match_indices("data-count=\"")
            .map(|(i, k)| {
                let rest = &svg[i + k.len()..];
                rest[..rest.find('"').unwrap()].parse::<usize>().unwrap()
            })
            .sum();
        assert_eq!(counts, 100);
    }

    #[test]
    fn parameter_errors() {
        let mut spec = PlotSpec::new(PlotKind::HistCi);
        for level in [0.0, 1.0] {
            spec.ci_level = level;
            assert!(matches!(plot_hist_ci(&[1.0, 2.0], &spec), Err(SinkError::BadParameter(_))));
        }
        spec.ci_level = 0.95;
        assert!(matches!(
            plot_hist_ci(&[1.0], &spec),
            Err(SinkError::InsufficientSamples { needed: 2, got: 1 })
        ));
    }
}
