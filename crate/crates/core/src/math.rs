//! Small numeric helpers shared across modules.

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ceil(rate * n)` with slack for representation error, so that e.g.
/// `0.01 * 4000` yields 40 rather than 41.
pub fn ceil_count(rate: f64, n: usize) -> usize {
    let x = rate * n as f64;
    let c = libm::ceil(x - 1e-9);
    if c <= 0.0 {
        0
    } else {
        c as usize
    }
}

/// Round half up: `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> f64 {
    libm::floor(x + 0.5)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// `E[sigmoid(offset + sd * Z)]` for standard normal `Z`, by composite
/// Simpson quadrature on `[-9, 9]`.
pub fn logit_normal_mean(offset: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return sigmoid(offset);
    }
    const STEPS: usize = 1800;
    let (a, b) = (-9.0_f64, 9.0_f64);
    let h = (b - a) / STEPS as f64;
    let f = |z: f64| sigmoid(offset + sd * z) * normal_pdf(z);
    let mut acc = f(a) + f(b);
    for i in 1..STEPS {
        let z = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(z) } else { 2.0 * f(z) };
    }
    acc * h / 3.0
}

/// Offset `b` such that `E[sigmoid(b + sd * Z)] = mean`, for `mean` in (0, 1).
pub fn solve_logit_normal_offset(mean: f64, sd: f64) -> f64 {
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if logit_normal_mean(mid, sd) < mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
