use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signals::{ClassMode, EPOCH_LEN_S, NUM_CLASSES};

const STEP_PX: usize = 4;
const MARGIN_LEFT: usize = 60;
const MARGIN_TOP: usize = 20;
const ROW_PX: usize = 30;
const TRACE_GAP_PX: usize = 150;
const STRIP_WIDTH: usize = 100;
/// Minutes between labelled x-axis ticks.
const TICK_MIN: usize = 30;

fn check(reference: &[usize], predicted: &[usize]) -> Result<()> {
    if reference.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: predicted.len(),
        });
    }
    if let Some(&bad) = reference.iter().chain(predicted).find(|&&c| c >= NUM_CLASSES) {
        return Err(Error::RangeViolation {
            what: "class index",
            value: bad as f64,
            lo: -1.0,
            hi: NUM_CLASSES as f64,
        });
    }
    Ok(())
}

fn trace_points(labels: &[usize], top: usize) -> String {
    let mut pts = String::new();
    for (k, &c) in labels.iter().enumerate() {
        let y = top + c * ROW_PX;
        let x0 = MARGIN_LEFT + k * STEP_PX;
        let _ = write!(pts, "{},{} {},{} ", x0, y, x0 + STEP_PX, y);
    }
    pts.pop();
    pts
}

/// Step plot of both sequences, reference on top. Class rows follow class
/// index order, which puts the lightest phase highest.
pub fn hypnogram_svg(reference: &[usize], predicted: &[usize], mode: ClassMode) -> Result<String> {
    check(reference, predicted)?;
    let n = reference.len();
    let width = MARGIN_LEFT + n * STEP_PX + 20;
    let ref_top = MARGIN_TOP + 20;
    let pred_top = ref_top + TRACE_GAP_PX;
    let axis_y = pred_top + (NUM_CLASSES - 1) * ROW_PX + 30;
    let height = axis_y + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    for (title, top) in [("reference", ref_top), ("predicted", pred_top)] {
        let _ = writeln!(s, r#"<text x="4" y="{}">{title}</text>"#, top - 10);
        for (c, phase) in mode.classes().iter().enumerate() {
            let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, top + c * ROW_PX + 4, phase.name());
        }
    }
    let _ = writeln!(
        s,
        r#"<polyline class="reference" fill="none" stroke="black" points="{}"/>"#,
        trace_points(reference, ref_top)
    );
    let _ = writeln!(
        s,
        r#"<polyline class="predicted" fill="none" stroke="steelblue" points="{}"/>"#,
        trace_points(predicted, pred_top)
    );
    let _ = writeln!(
        s,
        r#"<g class="x-axis" data-seconds-per-step="{EPOCH_LEN_S}" data-px-per-step="{STEP_PX}">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        MARGIN_LEFT + n * STEP_PX
    );
    let epochs_per_tick = TICK_MIN * 60 / EPOCH_LEN_S as usize;
    for k in (0..=n).step_by(epochs_per_tick) {
        let x = MARGIN_LEFT + k * STEP_PX;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{axis_y}" x2="{x}" y2="{}" stroke="black"/><text x="{x}" y="{}">{}</text>"#,
            axis_y + 5,
            axis_y + 17,
            k * EPOCH_LEN_S as usize / 60
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_LEFT}" y="{}">time (min), one step = {EPOCH_LEN_S} s</text>"#,
        axis_y + 32
    );
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

/// Two rows of one-letter phase codes, wrapped at 100 epochs.
pub fn hypnogram_text(reference: &[usize], predicted: &[usize], mode: ClassMode) -> Result<String> {
    check(reference, predicted)?;
    let code = |c: &usize| mode.phase(*c).code();
    let mut s = String::new();
    let codes: Vec<String> = mode
        .classes()
        .iter()
        .map(|p| format!("{}={}", p.code(), p.name()))
        .collect();
    let _ = writeln!(s, "# {} epochs of {} s; {}", reference.len(), EPOCH_LEN_S, codes.join(" "));
    for (i, (r, p)) in reference
        .chunks(STRIP_WIDTH)
        .zip(predicted.chunks(STRIP_WIDTH))
        .enumerate()
    {
        let _ = writeln!(s, "{:>6} ref  {}", i * STRIP_WIDTH, r.iter().map(code).collect::<String>());
        let _ = writeln!(s, "{:>6} pred {}", "", p.iter().map(code).collect::<String>());
    }
    Ok(s)
}

/// Writes the SVG to `path` and the text strip next to it with a `.txt` extension.
pub fn render_hypnogram(reference: &[usize], predicted: &[usize], mode: ClassMode, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = hypnogram_svg(reference, predicted, mode)?;
    let text = hypnogram_text(reference, predicted, mode)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    let txt = path.with_extension("txt");
    std::fs::write(&txt, text).map_err(|e| Error::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_night_format() {
        let svg = hypnogram_svg(&[0, 1, 1, 2], &[0, 1, 2, 2], ClassMode::Phase3).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"data-seconds-per-step="30""#));
    }

    #[test]
    fn identical_sequences_give_identical_traces() {
        let y = [2, 1, 0, 0, 1];
        let svg = hypnogram_svg(&y, &y, ClassMode::Wrn3).unwrap();
        let pts: Vec<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| l.split("points=").nth(1).unwrap())
            .collect();
        let shift = |p: &str| -> Vec<i64> {
            p.trim_matches(|c| c == '"' || c == '/' || c == '>')
                .split([' ', ','])
                .map(|v| v.parse().unwrap())
                .collect()
        };
        let (a, b) = (shift(pts[0]), shift(pts[1]));
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            let expected = if i % 2 == 1 { TRACE_GAP_PX as i64 } else { 0 };
            assert_eq!(y - x, expected);
        }
        let text = hypnogram_text(&y, &y, ClassMode::Wrn3).unwrap();
        assert!(text.contains("ref  NRWWR") && text.contains("pred NRWWR"));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            hypnogram_svg(&[0, 1], &[0], ClassMode::Phase3),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
