//! Uniform periodic grids and Fourier differentiation.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain, Result};

/// Samples of a real function on `origin + j*dx`, `dx = domain_length / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    origin: f64,
    domain_length: f64,
    samples: Vec<f64>,
}

impl GridFunction {
    pub fn new(origin: f64, domain_length: f64, samples: Vec<f64>) -> Result<Self> {
        check_size(samples.len())?;
        if !(domain_length > 0.0 && domain_length.is_finite()) || !origin.is_finite() {
            return domain(format!("bad grid geometry: origin {origin}, length {domain_length}"));
        }
        if let Some(j) = samples.iter().position(|v| !v.is_finite()) {
            return domain(format!("non-finite sample at index {j}"));
        }
        Ok(GridFunction { origin, domain_length, samples })
    }

    pub fn from_fn(origin: f64, domain_length: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_size(n)?;
        let dx = domain_length / n as f64;
        let samples = (0..n).map(|j| f(origin + j as f64 * dx)).collect();
        Self::new(origin, domain_length, samples)
    }

    /// Grid centred on zero: nodes cover [-L/2, L/2).
    pub fn centered(domain_length: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(-0.5 * domain_length, domain_length, n, f)
    }

    pub fn zeros(origin: f64, domain_length: f64, n: usize) -> Result<Self> {
        Self::new(origin, domain_length, vec![0.0; n])
    }

    /// Same geometry, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(self.origin, self.domain_length, samples)
    }

    pub fn n_points(&self) -> usize {
        self.samples.len()
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.samples.len() as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.origin + j as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points()).map(|j| self.x(j)).collect()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn same_geometry(&self, other: &GridFunction) -> bool {
        self.n_points() == other.n_points()
            && self.origin == other.origin
            && self.domain_length == other.domain_length
    }

    /// Rectangle rule, spectrally accurate for smooth periodic data.
    pub fn integral(&self) -> f64 {
        self.dx() * self.samples.iter().sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < 16 || !n.is_power_of_two() {
        return domain(format!("grid size {n} must be a power of two >= 16"));
    }
    Ok(())
}

/// FFT plans and wavenumbers for one grid size and length.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Spectral {{ n: {}, length: {} }}", self.n, self.length)
    }
}

impl Spectral {
    pub fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let k = wavenumbers(n, length);
        Spectral { n, length, forward, inverse, k }
    }

    pub fn for_grid(g: &GridFunction) -> Self {
        Self::new(g.n_points(), g.domain_length())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Angular wavenumbers in FFT order; the Nyquist entry is kept positive.
    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Inverse transform including the 1/n normalisation; returns the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter().map(|z| z.re * s).collect()
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let s = 1.0 / self.n as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }

    /// `order`-th derivative of periodic samples. Odd derivatives drop the
    /// Nyquist mode so real data stays real.
    pub fn derivative(&self, u: &[f64], order: u32) -> Vec<f64> {
        assert_eq!(u.len(), self.n);
        let mut hat = self.forward(u);
        let nyq = self.n / 2;
        for (j, z) in hat.iter_mut().enumerate() {
            if order % 2 == 1 && j == nyq {
                *z = Complex64::new(0.0, 0.0);
                continue;
            }
            let ik = Complex64::new(0.0, self.k[j]);
            *z *= ik.powu(order);
        }
        self.inverse_real(hat)
    }
}

pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI / length;
    (0..n)
        .map(|j| {
            let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            base * m
        })
        .collect()
}

/// Spectral derivative of a grid function.
pub fn derivative(u: &GridFunction, order: u32) -> GridFunction {
    let s = Spectral::for_grid(u);
    let d = s.derivative(u.samples(), order);
    GridFunction { origin: u.origin, domain_length: u.domain_length, samples: d }
}
