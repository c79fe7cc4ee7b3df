//! Embedded Runge-Kutta 7(8) pair (Fehlberg's 13-stage coefficients), run in
//! local-extrapolation mode: the 8th-order solution is propagated, the
//! embedded 7th-order value supplies the error estimate
//! err = h · 41/840 · (k₁ + k₁₁ - k₁₂ - k₁₃).

/// Right-hand side of an autonomous-in-form ODE y' = f(t, y).
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N], dydt: &mut [f64; N]);
}

pub const STAGES: usize = 13;

const C: [f64; STAGES] = [
    0.0,
    2.0 / 27.0,
    1.0 / 9.0,
    1.0 / 6.0,
    5.0 / 12.0,
    1.0 / 2.0,
    5.0 / 6.0,
    1.0 / 6.0,
    2.0 / 3.0,
    1.0 / 3.0,
    1.0,
    0.0,
    1.0,
];

const A: [[f64; STAGES - 1]; STAGES - 1] = [
    [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        -25.0 / 108.0,
        0.0,
        0.0,
        125.0 / 108.0,
        -65.0 / 27.0,
        125.0 / 54.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        31.0 / 300.0,
        0.0,
        0.0,
        0.0,
        61.0 / 225.0,
        -2.0 / 9.0,
        13.0 / 900.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2.0,
        0.0,
        0.0,
        -53.0 / 6.0,
        704.0 / 45.0,
        -107.0 / 9.0,
        67.0 / 90.0,
        3.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        -91.0 / 108.0,
        0.0,
        0.0,
        23.0 / 108.0,
        -976.0 / 135.0,
        311.0 / 54.0,
        -19.0 / 60.0,
        17.0 / 6.0,
        -1.0 / 12.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2383.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -301.0 / 82.0,
        2133.0 / 4100.0,
        45.0 / 82.0,
        45.0 / 164.0,
        18.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        3.0 / 205.0,
        0.0,
        0.0,
        0.0,
        0.0,
        -6.0 / 41.0,
        -3.0 / 205.0,
        -3.0 / 41.0,
        3.0 / 41.0,
        6.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        -1777.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -289.0 / 82.0,
        2193.0 / 4100.0,
        51.0 / 82.0,
        33.0 / 164.0,
        12.0 / 41.0,
        0.0,
        1.0,
    ],
];

/// 8th-order weights (stages 1 and 11 drop out, 12 and 13 enter).
const B8: [f64; STAGES] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

const ERR_W: f64 = 41.0 / 840.0;

/// One trial step of size `h` from `(t, y)`.
///
/// Returns the 8th-order solution and the scaled error norm
/// sqrt(mean((e_i / (atol + rtol·max(|y0_i|, |y1_i|)))²)); a norm above 1
/// means the step should be rejected. The norm is NaN-safe: non-finite
/// stages report `f64::INFINITY`.
pub fn rk78_step<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> ([f64; N], f64) {
    let mut k = [[0.0; N]; STAGES];
    sys.rhs(t, y, &mut k[0]);
    let mut stage_y = [0.0; N];
    for s in 1..STAGES {
        let row = &A[s - 1];
        for i in 0..N {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = row[j];
                if a != 0.0 {
                    acc += a * kj[i];
                }
            }
            stage_y[i] = y[i] + h * acc;
        }
        let (k_before, k_after) = k.split_at_mut(s);
        let _ = k_before;
        sys.rhs(t + C[s] * h, &stage_y, &mut k_after[0]);
    }

    let mut y1 = [0.0; N];
    let mut err_sq = 0.0;
    for i in 0..N {
        let mut acc = 0.0;
        for (s, ks) in k.iter().enumerate() {
            if B8[s] != 0.0 {
                acc += B8[s] * ks[i];
            }
        }
        y1[i] = y[i] + h * acc;
        let e = h * ERR_W * (k[0][i] + k[10][i] - k[11][i] - k[12][i]);
        let scale = abs_tol + rel_tol * y[i].abs().max(y1[i].abs());
        err_sq += (e / scale) * (e / scale);
    }
    let err = (err_sq / N as f64).sqrt();
    if !err.is_finite() || y1.iter().any(|v| !v.is_finite()) {
        return (y1, f64::INFINITY);
    }
    (y1, err)
}

/// PI step-size controller state.
#[derive(Debug, Clone)]
pub struct StepController {
    pub h: f64,
    err_prev: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl StepController {
    pub fn new(h0: f64, rel_tol: f64, abs_tol: f64) -> Self {
        StepController { h: h0, err_prev: 1.0, rel_tol, abs_tol }
    }

    /// Step-size update after an accepted step.
    pub fn accept(&mut self, err: f64) {
        let err = err.max(1e-30);
        let fac = 0.9 * err.powf(-0.125) * (self.err_prev / err).powf(0.04);
        self.h *= fac.clamp(0.2, 6.0);
        self.err_prev = err;
    }

    /// Step-size update after a rejected step.
    pub fn reject(&mut self, err: f64) {
        let fac = if err.is_finite() {
            (0.9 * err.powf(-0.125)).clamp(0.1, 0.7)
        } else {
            0.1
        };
        self.h *= fac;
    }
}
