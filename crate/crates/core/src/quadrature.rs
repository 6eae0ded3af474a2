//! Cutoff profile and the small quadrature rules shared across modules.

/// Quintic smoothstep: 0 for t ≤ −1/2, 1 for t ≥ 1/2, C² in between.
pub fn chi(t: f64) -> f64 {
    if t <= -0.5 {
        0.0
    } else if t >= 0.5 {
        1.0
    } else {
        let x = t + 0.5;
        x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
    }
}

/// k-th derivative of [`chi`], k ≤ 3 (k = 3 is the one-sided interior value).
pub fn chi_deriv(t: f64, k: usize) -> f64 {
    if k == 0 {
        return chi(t);
    }
    if t <= -0.5 || t >= 0.5 {
        return 0.0;
    }
    let x = t + 0.5;
    match k {
        1 => 30.0 * x * x * (1.0 - x) * (1.0 - x),
        2 => 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
        3 => 60.0 * (1.0 - 6.0 * x + 6.0 * x * x),
        _ => panic!("chi derivatives above order 3 are not continuous"),
    }
}

/// Cutoff centred at τ: χ_τ(t) = χ(t − τ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFunction {
    pub center: f64,
}

impl CutoffFunction {
    pub fn new(center: f64) -> Self {
        Self { center }
    }

    pub fn eval(&self, t: f64) -> f64 {
        chi(t - self.center)
    }

    pub fn deriv(&self, t: f64, k: usize) -> f64 {
        chi_deriv(t - self.center, k)
    }

    /// Interval outside which every derivative vanishes.
    pub fn transition(&self) -> (f64, f64) {
        (self.center - 0.5, self.center + 0.5)
    }
}

/// Composite Simpson over equally spaced samples; needs an even number of panels.
pub fn simpson(samples: &[f64], h: f64) -> f64 {
    let n = samples.len();
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd number of samples, got {n}");
    let mut acc = samples[0] + samples[n - 1];
    for (i, v) in samples.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Simpson applied to a function on [a, b] with step close to `step`.
pub fn simpson_fn(a: f64, b: f64, step: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut n = ((b - a) / step).ceil().max(2.0) as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let samples: Vec<f64> = (0..=n).map(|i| f(a + i as f64 * h)).collect();
    simpson(&samples, h)
}

/// Simpson on [a, b] plus one Richardson step against the doubled step
/// (Boole's rule): exact on quintics, O(step⁶) otherwise.
pub fn simpson_richardson_fn(a: f64, b: f64, step: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = (((b - a) / step).ceil().max(4.0) as usize).div_ceil(4) * 4;
    let h = (b - a) / n as f64;
    let samples: Vec<f64> = (0..=n).map(|i| f(a + i as f64 * h)).collect();
    let fine = simpson(&samples, h);
    let coarse: Vec<f64> = samples.iter().step_by(2).copied().collect();
    fine + (fine - simpson(&coarse, 2.0 * h)) / 15.0
}

/// Running integral I_i = ∫_{x_0}^{x_i} f using the three-point rule
/// h/12 (5 f_{i−1} + 8 f_i − f_{i+1}) on each step; the last step uses the
/// mirrored stencil so no sample past the end is read. Exact on quadratics.
pub fn cumulative(samples: &[f64], h: f64) -> Vec<f64> {
    let n = samples.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (samples[0] + samples[1]);
        return out;
    }
    let w = h / 12.0;
    for i in 1..n {
        let step = if i + 1 < n {
            w * (5.0 * samples[i - 1] + 8.0 * samples[i] - samples[i + 1])
        } else {
            w * (-samples[i - 2] + 8.0 * samples[i - 1] + 5.0 * samples[i])
        };
        out[i] = out[i - 1] + step;
    }
    out
}

/// Trapezoid-weighted inner product h Σ x_i y_i (the grid ℓ² product).
pub fn dot_h(x: &[f64], y: &[f64], h: f64) -> f64 {
    h * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
}

pub fn norm_h(x: &[f64], h: f64) -> f64 {
    dot_h(x, x, h).sqrt()
}

/// Least-squares slope of y against x.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Least-squares fit y ≈ a + b x, returning (a, b, max abs residual).
pub fn ls_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let b = ls_slope(x, y);
    let n = x.len() as f64;
    let a = (y.iter().sum::<f64>() - b * x.iter().sum::<f64>()) / n;
    let res = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - a - b * xi).abs())
        .fold(0.0, f64::max);
    (a, b, res)
}
