//! Minimal SVG renderings with CSV twins.

use std::fmt::Write as _;

use crate::agents::TRAINING_LOG_HEADER;
use crate::error::{Error, Result};
use crate::evaluation::{CurvePoint, EpisodeLog};
use crate::simcore::Vec2;

/// Canvas edge length in pixels.
pub const CANVAS: f64 = 800.0;

/// Episode rewards from a training-log CSV.
pub fn training_rewards(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRAINING_LOG_HEADER) {
        return Err(Error::Format("input is not a training log (header mismatch)".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.split(',')
                .nth(3)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("training log row {}: no reward column", i + 1)))
        })
        .collect()
}

/// Maps world coordinates onto the canvas, y up.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub field_size: f64,
}

impl Frame {
    pub fn scale(&self) -> f64 {
        CANVAS / self.field_size
    }

    pub fn map(&self, p: Vec2) -> (f64, f64) {
        let s = self.scale();
        (p.x * s, (self.field_size - p.y) * s)
    }
}

fn points(coords: impl Iterator<Item = (f64, f64)>) -> String {
    coords.map(|(x, y)| format!("{x},{y}")).collect::<Vec<_>>().join(" ")
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect class="field" x="0" y="0" width="{CANVAS}" height="{CANVAS}" fill="white" stroke="black"/>"#
    );
}

/// Friendly path, enemy paths, detection circles at `samples` instants
/// and the target circle.
pub fn trajectory_svg(log: &EpisodeLog, samples: usize) -> String {
    let frame = Frame {
        field_size: log.scene.field_size,
    };
    let s = frame.scale();
    let mut out = String::new();
    header(&mut out);
    let (tx, ty) = frame.map(log.scene.target_center);
    let _ = writeln!(
        out,
        r#"<circle class="target" cx="{tx}" cy="{ty}" r="{}" fill="none" stroke="green"/>"#,
        log.scene.target_radius * s
    );
    let friendly = std::iter::once(log.initial_friendly.position).chain(log.steps.iter().map(|r| r.friendly.position));
    let _ = writeln!(
        out,
        r#"<polyline class="friendly" points="{}" fill="none" stroke="blue"/>"#,
        points(friendly.map(|p| frame.map(p)))
    );
    for k in 0..log.initial_enemies.len() {
        let path = std::iter::once(log.initial_enemies[k].state.position)
            .chain(log.steps.iter().map(|r| r.enemies[k].state.position));
        let _ = writeln!(
            out,
            r#"<polyline class="enemy" data-enemy="{k}" points="{}" fill="none" stroke="red"/>"#,
            points(path.map(|p| frame.map(p)))
        );
    }
    let n = log.steps.len();
    if n > 0 && samples > 0 {
        let mut picked: Vec<usize> = if samples == 1 {
            vec![0]
        } else {
            (0..samples).map(|i| i * (n - 1) / (samples - 1)).collect()
        };
        picked.dedup();
        for i in picked {
            for e in &log.steps[i].enemies {
                let (cx, cy) = frame.map(e.state.position);
                let _ = writeln!(
                    out,
                    r#"<circle class="detection" data-step="{}" cx="{cx}" cy="{cy}" r="{}" fill="none" stroke="orange" stroke-dasharray="4"/>"#,
                    log.steps[i].step,
                    log.scene.detect_range * s
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// World-coordinate twin of [`trajectory_svg`].
pub fn trajectory_csv(log: &EpisodeLog) -> String {
    let mut out = String::from("step,time,friendly_x,friendly_y,detected");
    for k in 0..log.initial_enemies.len() {
        let _ = write!(out, ",enemy{k}_x,enemy{k}_y,enemy{k}_mode");
    }
    out.push('\n');
    let mode = |m| match m {
        crate::environment::EnemyMode::Patrol => "patrol",
        crate::environment::EnemyMode::Intercept => "intercept",
    };
    let _ = write!(
        out,
        "0,0,{},{},false",
        log.initial_friendly.position.x, log.initial_friendly.position.y
    );
    for e in &log.initial_enemies {
        let _ = write!(out, ",{},{},{}", e.state.position.x, e.state.position.y, mode(e.mode));
    }
    out.push('\n');
    for r in &log.steps {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.step, r.time, r.friendly.position.x, r.friendly.position.y, r.detected
        );
        for e in &r.enemies {
            let _ = write!(out, ",{},{},{}", e.state.position.x, e.state.position.y, mode(e.mode));
        }
        out.push('\n');
    }
    out
}

/// Mean-reward polyline with a translucent one-sigma band.
pub fn curve_svg(points_in: &[CurvePoint]) -> String {
    let mut out = String::new();
    header(&mut out);
    if !points_in.is_empty() {
        let lo = points_in.iter().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min);
        let hi = points_in.iter().map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let last = (points_in.len() - 1).max(1) as f64;
        let x = |i: usize| i as f64 / last * CANVAS;
        let y = |v: f64| (hi - v) / span * CANVAS;
        let upper = points_in.iter().enumerate().map(|(i, p)| (x(i), y(p.mean + p.std)));
        let lower = points_in.iter().enumerate().rev().map(|(i, p)| (x(i), y(p.mean - p.std)));
        let _ = writeln!(
            out,
            r#"<polygon class="band" points="{}" fill="steelblue" fill-opacity="0.2" stroke="none"/>"#,
            points(upper.chain(lower))
        );
        let _ = writeln!(
            out,
            r#"<polyline class="mean" points="{}" fill="none" stroke="steelblue"/>"#,
            points(points_in.iter().enumerate().map(|(i, p)| (x(i), y(p.mean))))
        );
    }
    out.push_str("</svg>\n");
    out
}
