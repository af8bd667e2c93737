//! Plain SVG figures: failure trajectories shaded by likelihood, and a log-likelihood
//! histogram. Fixed 800×600 canvas, five labelled ticks per axis.

use std::fmt::Write as _;

use crate::samplers::SampleBatch;
use crate::scenario::{rollout, PlotAxes, Scenario};

/// Most trajectories drawn in one figure.
pub const MAX_TRAJECTORIES: usize = 500;
/// Lowest opacity given to a drawn trajectory.
pub const MIN_OPACITY: f64 = 0.05;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;

/// Maps data coordinates onto the plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Self {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn open(out: &mut String, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0} {y1}V{y0}H{x1}" fill="none" stroke="black"/>"#
    );
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 20.0,
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(20 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn annotate(out: &mut String, text: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" fill="gray" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT / 2.0,
        escape(text)
    );
}

/// `(log_prior, disturbance)` of every failure, in file order.
fn failures(batches: &[SampleBatch]) -> Vec<(f64, &[f64])> {
    batches
        .iter()
        .flat_map(|b| {
            b.samples
                .iter()
                .zip(&b.failed)
                .zip(&b.log_prior)
                .filter(|((_, f), _)| **f)
                .map(|((x, _), l)| (*l, x.as_slice()))
        })
        .collect()
}

/// Evenly spaced subset of at most `max` indices out of `n`.
pub fn subsample(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}

/// Opacity of a trajectory with log-likelihood `ll` when the best has `max_ll`.
pub fn opacity(ll: f64, max_ll: f64) -> f64 {
    (ll - max_ll).exp().clamp(MIN_OPACITY, 1.0)
}

/// Failure trajectories in the scenario's state coordinates.
pub fn trajectories_svg<S: Scenario + ?Sized>(
    scenario: &S,
    batches: &[SampleBatch],
    title: &str,
) -> String {
    let PlotAxes {
        x_label,
        y_label,
        x_range,
        y_range,
    } = scenario.plot_axes();
    let frame = Frame::new(x_range, y_range);
    let mut out = String::new();
    open(&mut out, &frame, title, x_label, y_label);
    let fails = failures(batches);
    if fails.is_empty() {
        annotate(&mut out, "no failures");
    } else {
        let max_ll = fails.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
        let start = scenario.snapshot(&scenario.initial_state::<f64>());
        for i in subsample(fails.len(), MAX_TRAJECTORIES) {
            let (ll, x) = fails[i];
            let r = rollout(scenario, x);
            let mut d = String::new();
            for (k, s) in std::iter::once(&start).chain(&r.states).enumerate() {
                let (px, py) = scenario.plot_point(s);
                let _ = write!(
                    d,
                    "{}{:.2} {:.2}",
                    if k == 0 { "M" } else { "L" },
                    frame.px(px),
                    frame.py(py)
                );
            }
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="firebrick" stroke-width="1.2" stroke-opacity="{:.4}"/>"#,
                d.trim_start_matches('M')
                    .replace('L', " ")
                    .replace("  ", " "),
                opacity(ll, max_ll)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram of the prior log-likelihood of failures (20 bins).
pub fn loglik_hist_svg(batches: &[SampleBatch], title: &str) -> String {
    const BINS: usize = 20;
    let ll: Vec<f64> = failures(batches).iter().map(|f| f.0).collect();
    let lo = ll.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if ll.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let width = (hi - lo) / BINS as f64;
    let mut counts = [0usize; BINS];
    for v in &ll {
        counts[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame::new((lo, hi), (0.0, top));
    let mut out = String::new();
    open(&mut out, &frame, title, "log p(x) of failures", "count");
    if ll.is_empty() {
        annotate(&mut out, "no failures");
    }
    for (i, &c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        let x0 = frame.px(lo + i as f64 * width);
        let x1 = frame.px(lo + (i + 1) as f64 * width);
        let y = frame.py(c as f64);
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"/>"#,
            x1 - x0,
            frame.py(0.0) - y
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::Toy;
    use crate::samplers::ChainStats;

    fn batch(samples: Vec<f64>, failed: Vec<bool>) -> SampleBatch {
        let n = samples.len();
        SampleBatch {
            chain_id: 0,
            samples: samples.into_iter().map(|s| vec![s]).collect(),
            log_posterior: vec![0.0; n],
            log_prior: vec![-1.0; n],
            failed,
            wall_time: 0.0,
            stats: ChainStats::default(),
        }
    }

    #[test]
    fn empty_and_single_failure() {
        let toy = Toy::default();
        let none = trajectories_svg(&toy, &[batch(vec![0.0], vec![false])], "t");
        assert!(none.contains("no failures"));
        assert_eq!(none.matches("<polyline").count(), 0);
        let one = trajectories_svg(&toy, &[batch(vec![6.0, 0.0], vec![true, false])], "t");
        assert_eq!(one.matches("<polyline").count(), 1);
        assert!(one.starts_with("<svg") && one.ends_with("</svg>\n"));
    }

    #[test]
    fn subsampling_and_opacity() {
        assert_eq!(subsample(3, 500), vec![0, 1, 2]);
        let s = subsample(1000, 500);
        assert_eq!(s.len(), 500);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(opacity(0.0, 0.0), 1.0);
        assert_eq!(opacity(-100.0, 0.0), MIN_OPACITY);
    }

    #[test]
    fn histogram_counts_every_failure() {
        let b = batch(vec![6.0, -7.0, 0.0], vec![true, true, false]);
        let svg = loglik_hist_svg(&[b], "h");
        assert_eq!(svg.matches("fill=\"steelblue\"").count(), 1);
        assert!(loglik_hist_svg(&[], "h").contains("no failures"));
    }
}
