//! Self-contained SVG scatter emitter: reference data, generated samples,
//! and the target circle on a fixed 600x600 canvas spanning [-1.5, 1.5].

use fwdguide_core::Tensor;
use std::fmt::Write as _;

const SIZE: f64 = 600.0;
const RANGE: f64 = 1.5;

fn px(x: f64) -> f64 {
    (x + RANGE) / (2.0 * RANGE) * SIZE
}

fn py(y: f64) -> f64 {
    SIZE - (y + RANGE) / (2.0 * RANGE) * SIZE
}

pub fn scatter(data: &Tensor, samples: &Tensor, circle_target: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600" viewBox="0 0 600 600">"#
    );
    let _ = writeln!(s, r#"<rect width="600" height="600" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="0.5" y="0.5" width="599" height="599" fill="none" stroke="#999" stroke-width="1"/>"##
    );
    // Axes through the origin.
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="0" x2="{}" y2="600" stroke="#ddd" stroke-width="1"/>"##,
        px(0.0),
        px(0.0)
    );
    let _ = writeln!(
        s,
        r##"<line x1="0" y1="{}" x2="600" y2="{}" stroke="#ddd" stroke-width="1"/>"##,
        py(0.0),
        py(0.0)
    );
    for i in 0..data.shape()[0] {
        let _ = writeln!(
            s,
            r##"<circle class="data" cx="{:.2}" cy="{:.2}" r="1.5" fill="#6495ed" fill-opacity="0.5"/>"##,
            px(data.get2(i, 0)),
            py(data.get2(i, 1))
        );
    }
    let radius = circle_target.sqrt() / (2.0 * RANGE) * SIZE;
    let _ = writeln!(
        s,
        r#"<circle class="target" cx="{}" cy="{}" r="{radius:.3}" fill="none" stroke="red" stroke-width="1.5"/>"#,
        px(0.0),
        py(0.0)
    );
    for i in 0..samples.shape()[0] {
        let _ = writeln!(
            s,
            r#"<circle class="sample" cx="{:.2}" cy="{:.2}" r="2.5" fill="orange" fill-opacity="0.85"/>"#,
            px(samples.get2(i, 0)),
            py(samples.get2(i, 1))
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sample_marker_per_row() {
        let data = Tensor::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap();
        let samples = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.0, 0.0], vec![-0.9, 0.2]]).unwrap();
        let svg = scatter(&data, &samples, 0.3);
        assert_eq!(svg.matches(r#"class="sample""#).count(), 3);
        assert_eq!(svg.matches(r#"class="data""#).count(), 2);
        assert_eq!(svg.matches(r#"class="target""#).count(), 1);
        assert!(svg.contains("viewBox=\"0 0 600 600\""));
    }
}
