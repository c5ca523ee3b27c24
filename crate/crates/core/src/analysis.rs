//! Energy-rank analysis of the dataset and figure data (scatter plots,
//! spectrograms, accuracy-vs-rate curves) with CSV and SVG writers.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::{Complex32, Complex64};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::codec::RateReport;
use crate::error::{Error, Result};
use crate::sigsynth::{IqFrame, LabeledDataset};

pub const STFT_WINDOW: usize = 64;
pub const STFT_HOP: usize = 32;
/// Magnitude floor for the log spectrogram.
pub const SPECTRUM_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SvdReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Cumulative energy fraction after each singular value.
    pub energy: Vec<f64>,
    pub threshold: f64,
    /// Smallest rank whose cumulative energy reaches `threshold`.
    pub rank: usize,
    pub total_dims: usize,
    pub rows: usize,
}

impl SvdReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,singular_value,cumulative_energy\n");
        for (k, (s, e)) in self.singular_values.iter().zip(&self.energy).enumerate() {
            let _ = writeln!(out, "{},{:.9e},{:.9}", k + 1, s, e);
        }
        out
    }
}

/// Singular-value energy rank of the dataset's `N × p` complex matrix after
/// subtracting the mean frame.
pub fn svd_rank(dataset: &LabeledDataset, energy: f64) -> Result<SvdReport> {
    if dataset.is_empty() {
        return Err(Error::Analysis("dataset is empty".into()));
    }
    let rows: Vec<Vec<Complex64>> = dataset
        .frames
        .iter()
        .map(|(f, _)| {
            f.samples()
                .map(|(i, q)| Complex64::new(i as f64, q as f64))
                .collect()
        })
        .collect();
    svd_rank_rows(&rows, energy, true)
}

/// Energy rank of a complex matrix given as rows, optionally mean-centered
/// over rows.
pub fn svd_rank_rows(rows: &[Vec<Complex64>], energy: f64, center: bool) -> Result<SvdReport> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::Config(format!(
            "energy fraction {energy} must lie in (0, 1]"
        )));
    }
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n == 0 || p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Analysis(
            "matrix rows must be nonempty and of equal length".into(),
        ));
    }
    let mut m = DMatrix::<Complex64>::from_fn(n, p, |i, j| rows[i][j]);
    if center {
        for j in 0..p {
            let mean = m.column(j).sum() / n as f64;
            m.column_mut(j).add_scalar_mut(-mean);
        }
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Analysis("matrix has no energy".into()));
    }
    let mut acc = 0.0;
    let cumulative: Vec<f64> = sv
        .iter()
        .map(|s| {
            acc += s * s;
            acc / total
        })
        .collect();
    // guard the full-energy case against summation round-off
    let rank = cumulative
        .iter()
        .position(|&e| e >= energy - 1e-12)
        .map_or(sv.len(), |k| k + 1);
    Ok(SvdReport {
        singular_values: sv,
        energy: cumulative,
        threshold: energy,
        rank,
        total_dims: p,
        rows: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    Scatter,
    Spectrogram,
    AccuracyCurve,
}

/// A numeric table plus the axis metadata needed to draw it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FigureData {
    pub kind: FigureKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Free-form remarks printed under the plot.
    pub notes: Vec<String>,
}

impl FigureData {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> String {
        match self.kind {
            FigureKind::Scatter => scatter_svg(self),
            FigureKind::Spectrogram => spectrogram_svg(self),
            FigureKind::AccuracyCurve => curve_svg(self),
        }
    }
}

/// `(re, im)` points of every sample of every frame, in order.
pub fn scatter_data(frames: &[&IqFrame], title: &str) -> FigureData {
    let rows = frames
        .iter()
        .flat_map(|f| f.samples().map(|(i, q)| vec![i as f64, q as f64]))
        .collect();
    FigureData {
        kind: FigureKind::Scatter,
        title: title.to_string(),
        x_label: "in-phase".into(),
        y_label: "quadrature".into(),
        columns: vec!["re".into(), "im".into()],
        rows,
        notes: Vec::new(),
    }
}

/// Standard deviation of `|c|` over scatter points.
pub fn radius_spread(fig: &FigureData) -> f64 {
    let r: Vec<f64> = fig.rows.iter().map(|p| p[0].hypot(p[1])).collect();
    let n = r.len().max(1) as f64;
    let mean = r.iter().sum::<f64>() / n;
    (r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Log-magnitude STFT (Hann window 64, hop 32), one row per time step and
/// one column per frequency bin, zero frequency centred.
pub fn spectrogram(frame: &IqFrame, title: &str) -> FigureData {
    let x: Vec<Complex32> = frame.samples().map(|(i, q)| Complex32::new(i, q)).collect();
    let n = STFT_WINDOW;
    let window: Vec<f32> = (0..n)
        .map(|k| {
            let s = (std::f32::consts::PI * k as f32 / n as f32).sin();
            s * s
        })
        .collect();
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n);
    let mut rows = Vec::new();
    let mut start = 0;
    while start + n <= x.len() {
        let mut buf: Vec<Complex32> = x[start..start + n]
            .iter()
            .zip(&window)
            .map(|(c, w)| c * w)
            .collect();
        fft.process(&mut buf);
        let row: Vec<f64> = (0..n)
            .map(|b| {
                let mag = buf[(b + n / 2) % n].norm() as f64;
                20.0 * (mag + SPECTRUM_EPS).log10()
            })
            .collect();
        rows.push(row);
        start += STFT_HOP;
    }
    let half = n as i64 / 2;
    FigureData {
        kind: FigureKind::Spectrogram,
        title: title.to_string(),
        x_label: "frequency bin".into(),
        y_label: "time step".into(),
        columns: (0..n as i64).map(|b| format!("bin{}", b - half)).collect(),
        rows,
        notes: Vec::new(),
    }
}

/// Frequency bin (relative to DC, in `-n/2..n/2`) holding the peak of a
/// spectrogram row.
pub fn dominant_bin(row: &[f64]) -> i64 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best as i64 - row.len() as i64 / 2
}

/// Accuracy against compression ratio, one column per series.
pub fn accuracy_curve(series: &[(String, Vec<f64>)], rates: &[RateReport]) -> Result<FigureData> {
    for (name, values) in series {
        if values.len() != rates.len() {
            return Err(Error::Analysis(format!(
                "series {name} has {} points for {} rates",
                values.len(),
                rates.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Analysis(format!(
                "series {name} has accuracy {v} outside [0, 1]"
            )));
        }
    }
    let mut columns = vec!["level".to_string(), "cr".to_string()];
    columns.extend(series.iter().map(|(n, _)| n.clone()));
    let rows = rates
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![r.level as f64, r.cr];
            row.extend(series.iter().map(|(_, v)| v[i]));
            row
        })
        .collect();
    Ok(FigureData {
        kind: FigureKind::AccuracyCurve,
        title: "accuracy vs compression ratio".into(),
        x_label: "compression ratio".into(),
        y_label: "accuracy".into(),
        columns,
        rows,
        notes: vec!["HAE has no quantizer; its points sit at the level's nominal ratio".into()],
    })
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const M: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn svg_open(fig: &FigureData) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        W / 2.0,
        escape(&fig.title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&fig.y_label)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    s
}

fn svg_close(fig: &FigureData, mut s: String) -> String {
    for (i, n) in fig.notes.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{M}" y="{}" font-size="10" fill="gray">{}</text>"#,
            H - 30.0 + 10.0 * i as f64,
            escape(n)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi > lo {
        out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
    } else {
        (out_lo + out_hi) / 2.0
    }
}

fn scatter_svg(fig: &FigureData) -> String {
    let mut s = svg_open(fig);
    let lim = fig
        .rows
        .iter()
        .flat_map(|r| [r[0].abs(), r[1].abs()])
        .fold(0.0f64, f64::max)
        .max(1e-9);
    for r in &fig.rows {
        let x = scale(r[0], -lim, lim, M, W - M);
        let y = scale(r[1], -lim, lim, H - M, M);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="0.8" fill="{}"/>"#,
            PALETTE[0]
        );
    }
    svg_close(fig, s)
}

fn spectrogram_svg(fig: &FigureData) -> String {
    let mut s = svg_open(fig);
    let (lo, hi) = fig
        .rows
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (nt, nf) = (fig.rows.len().max(1), fig.columns.len().max(1));
    let (cw, ch) = ((W - 2.0 * M) / nf as f64, (H - 2.0 * M) / nt as f64);
    for (t, row) in fig.rows.iter().enumerate() {
        for (f, &v) in row.iter().enumerate() {
            let level = scale(v, lo, hi, 0.0, 255.0).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({level},{level},{})"/>"#,
                M + f as f64 * cw,
                M + t as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                255 - level
            );
        }
    }
    svg_close(fig, s)
}

fn curve_svg(fig: &FigureData) -> String {
    let mut s = svg_open(fig);
    let xs: Vec<f64> = fig.rows.iter().map(|r| r[1].max(1e-9).log10()).collect();
    let (xlo, xhi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    for (r, &x) in fig.rows.iter().zip(&xs) {
        let px = scale(x, xlo, xhi, M + 20.0, W - M - 20.0);
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{}" font-size="10" text-anchor="middle">{:.2}</text>"#,
            H - M + 14.0,
            r[1]
        );
    }
    for (k, name) in fig.columns.iter().enumerate().skip(2) {
        let color = PALETTE[(k - 2) % PALETTE.len()];
        let pts: Vec<String> = fig
            .rows
            .iter()
            .zip(&xs)
            .map(|(r, &x)| {
                format!(
                    "{:.2},{:.2}",
                    scale(x, xlo, xhi, M + 20.0, W - M - 20.0),
                    scale(r[k], 0.0, 1.0, H - M, M)
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - M - 100.0,
            M + 16.0 * (k - 1) as f64,
            escape(name)
        );
    }
    svg_close(fig, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_one_matrix() {
        let v: Vec<Complex64> = (0..16).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let rows: Vec<Vec<Complex64>> = (1..6)
            .map(|c| v.iter().map(|x| x * c as f64).collect())
            .collect();
        let r = svd_rank_rows(&rows, 0.99, false).unwrap();
        assert_eq!(r.rank, 1);
    }

    #[test]
    fn full_energy_on_random_square_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<Vec<Complex64>> = (0..8)
            .map(|_| {
                (0..8)
                    .map(|_| Complex64::new(rng.random(), rng.random()))
                    .collect()
            })
            .collect();
        let r = svd_rank_rows(&rows, 1.0, false).unwrap();
        assert_eq!(r.rank, 8);
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.energy.windows(2).all(|w| w[0] <= w[1]));
        assert!((r.energy[7] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_matrix_is_an_analysis_error() {
        let rows = vec![vec![Complex64::new(0.0, 0.0); 4]; 3];
        assert!(matches!(
            svd_rank_rows(&rows, 0.99, false),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn tone_has_one_dominant_bin_and_silence_is_flat() {
        let p = 1024;
        let f = 5.0 / 64.0;
        let mut data: Vec<f32> = (0..p)
            .map(|n| (2.0 * std::f64::consts::PI * f * n as f64).cos() as f32)
            .collect();
        data.extend((0..p).map(|n| (2.0 * std::f64::consts::PI * f * n as f64).sin() as f32));
        let fig = spectrogram(&IqFrame::from_channels(data).unwrap(), "tone");
        assert_eq!(fig.rows.len(), (p - STFT_WINDOW) / STFT_HOP + 1);
        for row in &fig.rows {
            assert_eq!(dominant_bin(row), 5);
        }
        let zero = spectrogram(&IqFrame::from_channels(vec![0.0; 2 * p]).unwrap(), "zero");
        let floor = 20.0 * SPECTRUM_EPS.log10();
        assert!(zero.rows.iter().flatten().all(|&v| v == floor));
    }

    #[test]
    fn accuracy_curve_checks_lengths_and_range() {
        let rates: Vec<RateReport> = (0..5)
            .map(|i| crate::codec::compression_ratio(i, 1024, 64).unwrap())
            .collect();
        let ok = accuracy_curve(&[("vq".into(), vec![0.9, 0.8, 0.7, 0.6, 0.5])], &rates).unwrap();
        assert_eq!(ok.rows.len(), 5);
        let xs: Vec<f64> = ok.rows.iter().map(|r| r[1]).collect();
        assert_eq!(xs, vec![1.37, 2.74, 5.48, 10.96, 21.92]);
        assert!(accuracy_curve(&[("vq".into(), vec![0.9; 4])], &rates).is_err());
        assert!(accuracy_curve(&[("vq".into(), vec![1.2; 5])], &rates).is_err());
        assert_eq!(ok.to_svg(), ok.to_svg());
        assert!(ok.to_svg().starts_with("<svg"));
    }
}
