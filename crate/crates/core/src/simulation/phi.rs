//! The constructed smooth functions of the cascade counterexample: an `L^1`
//! but not `L^2` function `phi` built from mollified plateaus, the output
//! map `h1` and the Lyapunov function `V` that certifies detectability.

use std::sync::Arc;

use serde::Serialize;

use crate::expr::{EvalError, SmoothFn};

/// Highest derivative order the constructed functions support.
pub const MAX_DERIVATIVE: usize = 8;

/// Truncated Taylor coefficients `c_k` of `f(s0 + h) = Σ c_k h^k`.
#[derive(Clone, Debug)]
struct Series(Vec<f64>);

impl Series {
    fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Series(c)
    }

    fn order(&self) -> usize {
        self.0.len() - 1
    }

    fn mul(&self, other: &Series) -> Series {
        let n = self.order();
        let mut out = vec![0.0; n + 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().take(n + 1 - i).enumerate() {
                out[i + j] += a * b;
            }
        }
        Series(out)
    }

    fn add(&self, other: &Series) -> Series {
        Series(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    fn scale(&self, k: f64) -> Series {
        Series(self.0.iter().map(|a| a * k).collect())
    }

    fn recip(&self) -> Series {
        let a = &self.0;
        let mut b = vec![0.0; a.len()];
        b[0] = 1.0 / a[0];
        for k in 1..a.len() {
            let s: f64 = (1..=k).map(|j| a[j] * b[k - j]).sum();
            b[k] = -s * b[0];
        }
        Series(b)
    }

    fn exp(&self) -> Series {
        let a = &self.0;
        let mut b = vec![0.0; a.len()];
        b[0] = a[0].exp();
        for k in 1..a.len() {
            let s: f64 = (1..=k).map(|j| j as f64 * a[j] * b[k - j]).sum();
            b[k] = s / k as f64;
        }
        Series(b)
    }

    /// Rescales for `f(s) = g((s - a) / w)`.
    fn chain_affine(mut self, w: f64) -> Series {
        let mut f = 1.0;
        for c in &mut self.0 {
            *c *= f;
            f /= w;
        }
        self
    }

    fn derivative(&self, k: usize) -> f64 {
        self.0[k] * (1..=k).map(|i| i as f64).product::<f64>()
    }
}

/// Taylor series at `u0` of the C^∞ step `S(u) = e^(-1/u) / (e^(-1/u) + e^(-1/(1-u)))`,
/// equal to 0 for `u <= 0` and 1 for `u >= 1`.
fn smooth_step(u0: f64, order: usize) -> Series {
    const FLAT: f64 = 1.5e-3;
    if u0 <= FLAT {
        return Series::constant(0.0, order);
    }
    if u0 >= 1.0 - FLAT {
        return Series::constant(1.0, order);
    }
    if u0 > 0.5 {
        // S(u) = 1 - S(1 - u).
        let mirrored = smooth_step(1.0 - u0, order);
        let mut c: Vec<f64> = mirrored
            .0
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { -v } else { *v })
            .collect();
        c[0] += 1.0;
        return Series(c);
    }
    // E(u) = exp(1/u - 1/(1-u)); S = 1 / (1 + E).
    let mut arg = vec![0.0; order + 1];
    for (k, a) in arg.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *a = sign / u0.powi(k as i32 + 1) - 1.0 / (1.0 - u0).powi(k as i32 + 1);
    }
    let e = Series(arg).exp();
    e.add(&Series::constant(1.0, order)).recip()
}

/// `S((s - a) / w)` expanded at `s`.
fn step_at(s: f64, a: f64, w: f64, order: usize) -> Series {
    smooth_step((s - a) / w, order).chain_affine(w)
}

/// Smooth `phi: [0, ∞) -> [0, ∞)` with `phi(s) = s` near 0, a shoulder of
/// height [`SHOULDER_HEIGHT`] in place of the first plateau, and a plateau of
/// height `k^5` and width `k^-7` centred at each integer `2 <= k <= k_max`.
#[derive(Clone, Debug, Serialize)]
pub struct Phi {
    pub k_max: usize,
    /// Fraction of each plateau width used by each mollified edge.
    pub edge_fraction: f64,
}

/// End of the linear ramp; `phi(s) = s` on `[0, RAMP_END]`.
pub const RAMP_END: f64 = 0.5;
const RAMP_FADE: f64 = 0.1;
/// The shoulder keeps `∫_0^a phi^2 >= a^3/4` across the gap before `k = 2`.
pub const SHOULDER_HEIGHT: f64 = 1.5;
pub const SHOULDER_END: f64 = 1.95;

impl Phi {
    pub fn new(k_max: usize, edge_fraction: f64) -> Self {
        assert!(k_max >= 2, "k_max must be at least 2");
        assert!(
            edge_fraction > 0.0 && edge_fraction < 0.5,
            "edge fraction must lie in (0, 0.5)"
        );
        Phi {
            k_max,
            edge_fraction,
        }
    }

    pub fn width(k: usize) -> f64 {
        (k as f64).powi(-7)
    }

    pub fn height(k: usize) -> f64 {
        (k as f64).powi(5)
    }

    /// Exact `L^1` mass of plateau `k`: `k^-2 (1 - edge_fraction)`.
    pub fn plateau_mass(&self, k: usize) -> f64 {
        Self::height(k) * Self::width(k) * (1.0 - self.edge_fraction)
    }

    /// Upper bound on `∫_0^∞ phi`: ramp and shoulder box plus `Σ_{k>=2} k^-2`.
    pub fn l1_bound(&self) -> f64 {
        0.5 * RAMP_END * RAMP_END
            + SHOULDER_HEIGHT * (SHOULDER_END - RAMP_END)
            + std::f64::consts::PI.powi(2) / 6.0
            - 1.0
    }

    fn series(&self, s: f64, order: usize) -> Series {
        let mut total = Series::constant(0.0, order);
        let one = Series::constant(1.0, order);
        if s < RAMP_END + RAMP_FADE {
            let mut lin = Series::constant(s, order);
            if order >= 1 {
                lin.0[1] = 1.0;
            }
            let fade = step_at(s, RAMP_END, RAMP_FADE, order);
            total = total.add(&lin.mul(&one.add(&fade.scale(-1.0))));
        }
        if s > RAMP_END && s < SHOULDER_END {
            let rise = step_at(s, RAMP_END, RAMP_FADE, order);
            let fall = step_at(s, SHOULDER_END - RAMP_FADE, RAMP_FADE, order);
            let bump = rise.mul(&one.add(&fall.scale(-1.0)));
            total = total.add(&bump.scale(SHOULDER_HEIGHT));
        }
        let lo = s.floor().max(2.0) as usize;
        for k in [lo, lo + 1] {
            if k > self.k_max {
                continue;
            }
            let (c, w) = (k as f64, Self::width(k));
            let edge = self.edge_fraction * w;
            if (s - c).abs() > w / 2.0 {
                continue;
            }
            let rise = step_at(s, c - w / 2.0, edge, order);
            let fall = step_at(s, c + w / 2.0 - edge, edge, order);
            let keep = Series::constant(1.0, order).add(&fall.scale(-1.0));
            total = total.add(&rise.mul(&keep).scale(Self::height(k)));
        }
        total
    }

    pub fn value(&self, s: f64) -> f64 {
        self.series(s, 0).0[0]
    }

    /// Edges of every analytic piece, in increasing order.
    pub fn edges(&self) -> Vec<f64> {
        let mut pts = vec![
            0.0,
            RAMP_END,
            RAMP_END + RAMP_FADE,
            SHOULDER_END - RAMP_FADE,
            SHOULDER_END,
        ];
        for k in 2..=self.k_max {
            let (c, w) = (k as f64, Self::width(k));
            let edge = self.edge_fraction * w;
            pts.extend([c - w / 2.0, c - w / 2.0 + edge, c + w / 2.0 - edge, c + w / 2.0]);
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

fn check_order(order: usize) -> Result<(), EvalError> {
    if order > MAX_DERIVATIVE {
        Err(EvalError::Domain(format!(
            "derivative order {order} exceeds {MAX_DERIVATIVE}"
        )))
    } else {
        Ok(())
    }
}

impl SmoothFn for Phi {
    fn name(&self) -> &str {
        "phi"
    }

    fn derivative(&self, order: usize, s: f64) -> Result<f64, EvalError> {
        check_order(order)?;
        Ok(self.series(s, order).derivative(order))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.edges()
    }
}

/// `h1(s) = -s` for `s < 0` and `phi(s)` for `s >= 0`.
#[derive(Clone, Debug)]
pub struct CascadeOutput {
    pub phi: Phi,
}

impl SmoothFn for CascadeOutput {
    fn name(&self) -> &str {
        "h1"
    }

    fn derivative(&self, order: usize, s: f64) -> Result<f64, EvalError> {
        check_order(order)?;
        if s < 0.0 {
            return Ok(match order {
                0 => -s,
                1 => -1.0,
                _ => 0.0,
            });
        }
        self.phi.derivative(order, s)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.phi.edges()
    }
}

/// `V(s) = s^2` for `s < 0` and `∫_0^s (2 phi^2 - τ^2) dτ` for `s >= 0`.
#[derive(Clone, Debug)]
pub struct CascadeLyapunov {
    pub phi: Phi,
}

/// 8-point Gauss-Legendre nodes and weights on `[-1, 1]`.
const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// `∫_a^b f` by composite Gauss-Legendre on `pieces` equal subintervals.
pub fn gauss_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let mid = a + (i as f64 + 0.5) * h;
            GAUSS8
                .iter()
                .map(|(x, w)| w * f(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

impl CascadeLyapunov {
    fn integrand(&self, s: f64) -> f64 {
        let p = self.phi.value(s);
        2.0 * p * p - s * s
    }

    pub fn value(&self, s: f64) -> f64 {
        if s < 0.0 {
            return s * s;
        }
        let mut cuts: Vec<f64> = self.phi.edges().into_iter().filter(|e| *e < s).collect();
        cuts.push(s);
        let mut total = 0.0;
        let mut prev = 0.0;
        for c in cuts {
            if c > prev {
                total += gauss_integral(|x| self.integrand(x), prev, c, 8);
                prev = c;
            }
        }
        total
    }
}

impl SmoothFn for CascadeLyapunov {
    fn name(&self) -> &str {
        "V"
    }

    fn derivative(&self, order: usize, s: f64) -> Result<f64, EvalError> {
        check_order(order)?;
        if s < 0.0 {
            return Ok(match order {
                0 => s * s,
                1 => 2.0 * s,
                2 => 2.0,
                _ => 0.0,
            });
        }
        if order == 0 {
            return Ok(self.value(s));
        }
        // V^(k) = (2 phi^2 - s^2)^(k-1).
        let k = order - 1;
        let p = self.phi.series(s, k);
        let mut sq = Series::constant(s * s, k);
        if k >= 1 {
            sq.0[1] = 2.0 * s;
        }
        if k >= 2 {
            sq.0[2] = 1.0;
        }
        Ok(p.mul(&p).scale(2.0).add(&sq.scale(-1.0)).derivative(k))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.phi.edges()
    }
}

/// Shared handle on a [`Phi`] construction.
pub fn shared_phi(k_max: usize, edge_fraction: f64) -> Arc<Phi> {
    Arc::new(Phi::new(k_max, edge_fraction))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_is_smooth_and_symmetric() {
        assert_eq!(smooth_step(-1.0, 2).0, vec![0.0, 0.0, 0.0]);
        assert!((smooth_step(0.5, 0).0[0] - 0.5).abs() < 1e-15);
        for u in [0.1, 0.3, 0.7] {
            let a = smooth_step(u, 0).0[0];
            let b = smooth_step(1.0 - u, 0).0[0];
            assert!((a + b - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn step_derivatives_match_finite_differences() {
        for u in [0.05, 0.2, 0.5, 0.8, 0.97] {
            let s = smooth_step(u, 4);
            for k in 0..4 {
                let h = 1e-5;
                let fd = (smooth_step(u + h, k).derivative(k) - smooth_step(u - h, k).derivative(k)) / (2.0 * h);
                let exact = s.derivative(k + 1);
                assert!((fd - exact).abs() < 1e-4 * (1.0 + exact.abs()), "u={u} k={k}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn phi_properties() {
        let phi = Phi::new(50, 0.1);
        assert_eq!(phi.value(0.0), 0.0);
        assert_eq!(phi.derivative(1, 0.0).unwrap(), 1.0);
        for k in 2..=MAX_DERIVATIVE {
            assert_eq!(phi.derivative(k, 0.0).unwrap(), 0.0);
        }
        assert_eq!(phi.value(3.0), 243.0);
        assert_eq!(phi.value(2.6), 0.0);
        assert_eq!(phi.value(1.0), SHOULDER_HEIGHT);
        assert!(phi.value(0.55) >= 0.5);
    }

    #[test]
    fn lyapunov_derivative_identity() {
        let v = CascadeLyapunov { phi: Phi::new(5, 0.1) };
        for s in [-1.0f64, 0.3, 0.55, 1.2] {
            let p = v.phi.value(s.max(0.0));
            let want = if s < 0.0 { 2.0 * s } else { 2.0 * p * p - s * s };
            assert!((v.derivative(1, s).unwrap() - want).abs() < 1e-12);
        }
        // V(s) >= s^3/6 on the positive axis.
        for s in [0.2, 1.0, 1.97, 2.5, 4.0] {
            assert!(v.value(s) >= s.powi(3) / 6.0);
        }
    }
}
