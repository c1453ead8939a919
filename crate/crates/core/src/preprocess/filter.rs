//! Butterworth IIR design as cascaded second-order sections, applied
//! forward and backward for zero phase.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::PreprocessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    LowPass,
    HighPass,
}

/// One biquad in transposed direct form II, normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// State that leaves the section at rest for a constant unit input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

/// Design an `order`-th order Butterworth filter with cutoff `cutoff` Hz at
/// sampling rate `fs` Hz via the bilinear transform with prewarping.
pub fn butterworth(order: usize, cutoff: f64, fs: f64, kind: FilterKind) -> Result<Sos, PreprocessError> {
    if order == 0 {
        return Err(PreprocessError::InvalidOrder);
    }
    if !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(PreprocessError::CutoffAboveNyquist { cutoff, nyquist: fs / 2.0 });
    }
    let k = 2.0 * fs;
    let warped = k * (PI * cutoff / fs).tan();
    let bilinear = |s: Complex64| (k + s) / (k - s);

    // Prototype poles on the unit circle in the left half plane; keep the
    // upper-half-plane member of each conjugate pair plus the real pole.
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order.div_ceil(2) {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let proto = Complex64::new(theta.cos(), theta.sin());
        let analog = match kind {
            FilterKind::LowPass => proto * warped,
            FilterKind::HighPass => warped / proto,
        };
        let p = bilinear(analog);
        let zero = match kind {
            FilterKind::LowPass => -1.0,
            FilterKind::HighPass => 1.0,
        };
        let real_pole = 2 * i + 1 == order;
        let (b, a) = if real_pole {
            ([1.0, -zero, 0.0], [1.0, -p.re, 0.0])
        } else {
            ([1.0, -2.0 * zero, 1.0], [1.0, -2.0 * p.re, p.norm_sqr()])
        };
        sections.push(Biquad { b, a });
    }

    // Unity gain at DC (low-pass) or Nyquist (high-pass), split evenly.
    for s in &mut sections {
        let at = match kind {
            FilterKind::LowPass => Complex64::new(1.0, 0.0),
            FilterKind::HighPass => Complex64::new(-1.0, 0.0),
        };
        let num = s.b[0] + s.b[1] / at + s.b[2] / (at * at);
        let den = s.a[0] + s.a[1] / at + s.a[2] / (at * at);
        let g = (num / den).norm();
        for b in &mut s.b {
            *b /= g;
        }
    }
    Ok(Sos { sections })
}

impl Sos {
    pub fn cascade(mut self, other: Sos) -> Sos {
        self.sections.extend(other.sections);
        self
    }

    /// Single forward pass with the given initial states.
    fn run(&self, x: &mut [f64], init: Option<&[[f64; 2]]>) {
        for (i, s) in self.sections.iter().enumerate() {
            let [mut z1, mut z2] = init.map_or([0.0, 0.0], |z| z[i]);
            for v in x.iter_mut() {
                let xi = *v;
                let y = s.b[0] * xi + z1;
                z1 = s.b[1] * xi - s.a[1] * y + z2;
                z2 = s.b[2] * xi - s.a[2] * y;
                *v = y;
            }
        }
    }

    pub fn filter(&self, x: &mut [f64]) {
        self.run(x, None);
    }

    /// Per-section initial states for a constant input `x0`.
    fn steady_state(&self, x0: f64) -> Vec<[f64; 2]> {
        let mut level = x0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let st = [z1 * level, z2 * level];
                level *= s.dc_gain();
                st
            })
            .collect()
    }

    /// Zero-phase filtering with odd-extension padding and steady-state
    /// initial conditions at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.steady_state(ext[0]);
        self.run(&mut ext, Some(&zi));
        ext.reverse();
        let zi = self.steady_state(ext[0]);
        self.run(&mut ext, Some(&zi));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    /// Magnitude response at `freq` Hz for sampling rate `fs`.
    pub fn gain_at(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| {
                let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
                let den = s.a[0] + z1 * s.a[1] + z2 * s.a[2];
                (num / den).norm()
            })
            .product()
    }
}

/// Zero-phase low-pass of a raw sample vector.
pub fn lowpass(values: &[f64], fs: f64, cutoff: f64, order: usize) -> Result<Vec<f64>, PreprocessError> {
    Ok(butterworth(order, cutoff, fs, FilterKind::LowPass)?.filtfilt(values))
}

/// Zero-phase band-pass as a high-pass/low-pass cascade.
pub fn bandpass(values: &[f64], fs: f64, low: f64, high: f64, order: usize) -> Result<Vec<f64>, PreprocessError> {
    let sos = butterworth(order, low, fs, FilterKind::HighPass)?
        .cascade(butterworth(order, high, fs, FilterKind::LowPass)?);
    Ok(sos.filtfilt(values))
}
