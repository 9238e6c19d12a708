//! Brute-force Bayesian posterior by direct integration on a uniform grid.
//!
//! Independent of the closed-form filter: it multiplies raw Gaussian
//! densities point by point and moment-matches the result.

/// One Gaussian factor of the unnormalized posterior, `exp(-(a x - b)^2 / (2 v))`.
#[derive(Clone, Copy, Debug)]
pub struct Factor {
    pub scale: f64,
    pub offset: f64,
    pub variance: f64,
}

impl Factor {
    /// Prior `N(mean, variance)` on `x`.
    pub fn prior(mean: f64, variance: f64) -> Self {
        Self {
            scale: 1.0,
            offset: mean,
            variance,
        }
    }

    /// Likelihood of observing `y = h x + noise`, `noise ~ N(0, r)`.
    pub fn likelihood(y: f64, h: f64, r: f64) -> Self {
        Self {
            scale: h,
            offset: y,
            variance: r,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Neumaier-compensated accumulator.
#[derive(Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }
    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Nodes whose density is below `e^-200` of the peak are skipped: even all
/// 10^6 of them together would shift the moments by less than 1e-80.
const UNDERFLOW: f64 = -200.0;

/// Posterior moments over `[lo, hi]` using `n` midpoint nodes.
pub fn posterior(factors: &[Factor], lo: f64, hi: f64, n: usize) -> Moments {
    let dx = (hi - lo) / n as f64;
    let terms: Vec<(f64, f64, f64)> = factors
        .iter()
        .map(|f| (f.scale, f.offset, -0.5 / f.variance))
        .collect();
    let log_p = |x: f64| {
        terms
            .iter()
            .map(|&(a, b, k)| {
                let d = a * x - b;
                k * d * d
            })
            .sum::<f64>()
    };
    // coarse scan for a normalizing constant and a centering shift
    let scan = 10_000;
    let (mut best_x, mut best_lp) = (lo, f64::NEG_INFINITY);
    for i in 0..scan {
        let x = lo + (i as f64 + 0.5) * (hi - lo) / scan as f64;
        let lp = log_p(x);
        if lp > best_lp {
            best_lp = lp;
            best_x = x;
        }
    }

    // plain sums within blocks, compensated across blocks
    const BLOCK: usize = 1024;
    let (mut w, mut w1, mut w2) = (Sum::default(), Sum::default(), Sum::default());
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
        for i in start..end {
            let x = lo + (i as f64 + 0.5) * dx;
            let z = log_p(x) - best_lp;
            if z < UNDERFLOW {
                continue;
            }
            let p = z.exp();
            let d = x - best_x;
            b0 += p;
            b1 += p * d;
            b2 += p * d * d;
        }
        w.add(b0);
        w1.add(b1);
        w2.add(b2);
        start = end;
    }
    let m1 = w1.value() / w.value();
    let m2 = w2.value() / w.value();
    Moments {
        mean: best_x + m1,
        variance: m2 - m1 * m1,
    }
}

/// The standard oracle grid: 10^6 nodes over [-1, 2].
pub fn posterior_default(factors: &[Factor]) -> Moments {
    posterior(factors, -1.0, 2.0, 1_000_000)
}
