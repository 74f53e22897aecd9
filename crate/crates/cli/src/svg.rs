//! Static log-log plot of a stability sweep.

use ou_inverse::inverse::StabilityFit;

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 56.0;

/// Median error against `|log η|` on log-log axes, with the fitted law overlaid.
pub fn sweep_plot(fit: &StabilityFit) -> String {
    let pts: Vec<(f64, f64)> = fit
        .data_norms
        .iter()
        .zip(&fit.recon_errors)
        .filter(|(e, r)| **e > 0.0 && **e < 1.0 && **r > 0.0)
        .map(|(e, r)| (e.ln().abs().ln(), r.ln()))
        .collect();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if pts.is_empty() {
        out.push_str("<text x=\"20\" y=\"40\">no usable levels</text>\n</svg>\n");
        return out;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    out.push_str(&format!("<path d=\"M{PAD} {PAD} V{} H{}\" stroke=\"black\" fill=\"none\"/>\n", H - PAD, W - PAD));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">|log eta| (log scale)</text>\n",
        W / 2.0,
        H - 16.0
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">median error (log scale)</text>\n",
        H / 2.0,
        H / 2.0
    ));
    if fit.fitted_c > 0.0 && fit.fitted_alpha.is_finite() {
        let line = |x: f64| fit.fitted_c.ln() - fit.fitted_alpha * x;
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"steelblue\"/>\n",
            sx(x0),
            sy(line(x0)),
            sx(x1),
            sy(line(x1))
        ));
    }
    for (x, y) in pts {
        out.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"firebrick\"/>\n", sx(x), sy(y)));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\">alpha = {:.4}, R2 = {:.4}</text>\n</svg>\n",
        PAD, fit.fitted_alpha, fit.fit_r2
    ));
    out
}
