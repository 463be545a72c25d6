//! Input signals with exact derivatives.

use serde::{Deserialize, Serialize};

/// `amp * sin(freq * t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

/// A smooth piece of a [`InputSignal::PiecewiseSmooth`] signal, in global time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub signal: InputSignal,
}

/// Vector-valued input `u: [0, T] -> R^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    /// Per channel, ascending coefficients in `t`.
    Polynomial { coeffs: Vec<Vec<f64>> },
    /// Per channel, a sum of sine terms.
    Sinusoid { terms: Vec<Vec<SineTerm>> },
    /// `values[k]` holds on `[switches[k], switches[k + 1])`; the last value
    /// holds afterwards. `switches[0]` must be 0.
    PiecewiseConstant {
        switches: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    /// Smooth segments glued at their start times; `smoothness` is the
    /// declared continuity order across the joints.
    PiecewiseSmooth {
        segments: Vec<Segment>,
        smoothness: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalDescriptor {
    pub kind: String,
    pub params: serde_json::Value,
    /// `None` means C^∞.
    pub smoothness_order: Option<usize>,
}

fn poly_derivative(coeffs: &[f64], order: usize, t: f64) -> f64 {
    let mut acc = 0.0;
    for (k, c) in coeffs.iter().enumerate().skip(order).rev() {
        let falling: f64 = ((k - order + 1)..=k).map(|i| i as f64).product();
        acc = acc * t + c * falling;
    }
    acc
}

fn sine_derivative(terms: &[SineTerm], order: usize, t: f64) -> f64 {
    terms
        .iter()
        .map(|s| {
            let shift = order as f64 * std::f64::consts::FRAC_PI_2;
            s.amp * s.freq.powi(order as i32) * (s.freq * t + s.phase + shift).sin()
        })
        .sum()
}

impl InputSignal {
    pub fn zero(m: usize) -> Self {
        InputSignal::Polynomial {
            coeffs: vec![vec![0.0]; m],
        }
    }

    pub fn constant(values: &[f64]) -> Self {
        InputSignal::Polynomial {
            coeffs: values.iter().map(|v| vec![*v]).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            InputSignal::Polynomial { coeffs } => coeffs.len(),
            InputSignal::Sinusoid { terms } => terms.len(),
            InputSignal::PiecewiseConstant { values, .. } => values.first().map_or(0, Vec::len),
            InputSignal::PiecewiseSmooth { segments, .. } => {
                segments.first().map_or(0, |s| s.signal.channels())
            }
        }
    }

    /// Highest derivative order that is continuous in time; `None` for C^∞.
    pub fn smoothness(&self) -> Option<usize> {
        match self {
            InputSignal::Polynomial { .. } | InputSignal::Sinusoid { .. } => None,
            InputSignal::PiecewiseConstant { .. } => Some(0),
            InputSignal::PiecewiseSmooth { smoothness, .. } => Some(*smoothness),
        }
    }

    /// Whether derivatives up to `order` may be sampled.
    pub fn supports(&self, order: usize) -> bool {
        self.smoothness().is_none_or(|s| order <= s)
    }

    /// Times where the signal switches pieces.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            InputSignal::PiecewiseConstant { switches, .. } => switches.clone(),
            InputSignal::PiecewiseSmooth { segments, .. } => {
                segments.iter().map(|s| s.start).collect()
            }
            _ => Vec::new(),
        }
    }

    fn piece_index(starts: impl Iterator<Item = f64>, t: f64) -> usize {
        starts.take_while(|s| *s <= t).count().saturating_sub(1)
    }

    /// `d^order u_channel / dt^order` at `t`; piecewise signals use the piece
    /// containing `t` (right-continuous).
    pub fn derivative(&self, channel: usize, order: usize, t: f64) -> f64 {
        self.derivative_on_piece(channel, order, t, t)
    }

    /// Like [`derivative`](Self::derivative) but using the piece that
    /// contains `anchor`, so that an integration stage at the end of a piece
    /// sees the left limit.
    pub fn derivative_on_piece(&self, channel: usize, order: usize, t: f64, anchor: f64) -> f64 {
        match self {
            InputSignal::Polynomial { coeffs } => poly_derivative(&coeffs[channel], order, t),
            InputSignal::Sinusoid { terms } => sine_derivative(&terms[channel], order, t),
            InputSignal::PiecewiseConstant { switches, values } => {
                if order > 0 {
                    return 0.0;
                }
                values[Self::piece_index(switches.iter().copied(), anchor)][channel]
            }
            InputSignal::PiecewiseSmooth { segments, .. } => {
                let k = Self::piece_index(segments.iter().map(|s| s.start), anchor);
                segments[k].signal.derivative_on_piece(channel, order, t, anchor)
            }
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        (0..self.channels()).map(|j| self.derivative(j, 0, t)).collect()
    }

    /// Writes `u_j^(d)(t)` for every channel `j` and `d = 0..=max_order`,
    /// channel-major, into `out`.
    pub fn sample_into(&self, t: f64, max_order: usize, out: &mut Vec<f64>) {
        for j in 0..self.channels() {
            for d in 0..=max_order {
                out.push(self.derivative(j, d, t));
            }
        }
    }

    pub fn descriptor(&self) -> SignalDescriptor {
        let mut params = serde_json::to_value(self).unwrap_or(serde_json::Value::Null);
        let kind = params
            .as_object_mut()
            .and_then(|o| o.remove("kind"))
            .and_then(|k| k.as_str().map(str::to_string))
            .unwrap_or_default();
        SignalDescriptor {
            kind,
            params,
            smoothness_order: self.smoothness(),
        }
    }

    /// Largest absolute value over `samples` evenly spaced points of `[0, horizon]`.
    pub fn sampled_sup(&self, horizon: f64, samples: usize) -> f64 {
        (0..=samples)
            .flat_map(|k| self.value(horizon * k as f64 / samples.max(1) as f64))
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivatives() {
        let u = InputSignal::Polynomial {
            coeffs: vec![vec![1.0, 2.0, 3.0]],
        };
        assert_eq!(u.derivative(0, 0, 2.0), 17.0);
        assert_eq!(u.derivative(0, 1, 2.0), 14.0);
        assert_eq!(u.derivative(0, 2, 2.0), 6.0);
        assert_eq!(u.derivative(0, 3, 2.0), 0.0);
    }

    #[test]
    fn sine_derivatives() {
        let u = InputSignal::Sinusoid {
            terms: vec![vec![SineTerm {
                amp: 2.0,
                freq: 3.0,
                phase: 0.1,
            }]],
        };
        let t = 0.7;
        assert!((u.derivative(0, 1, t) - 6.0 * (3.0 * t + 0.1).cos()).abs() < 1e-12);
        assert!((u.derivative(0, 2, t) + 18.0 * (3.0 * t + 0.1).sin()).abs() < 1e-12);
    }

    #[test]
    fn piecewise_constant_refuses_derivatives() {
        let u = InputSignal::PiecewiseConstant {
            switches: vec![0.0, 1.0],
            values: vec![vec![1.0], vec![-1.0]],
        };
        assert_eq!(u.value(0.5), vec![1.0]);
        assert_eq!(u.value(1.0), vec![-1.0]);
        assert!(u.supports(0));
        assert!(!u.supports(1));
        assert_eq!(u.descriptor().kind, "piecewise_constant");
    }

    #[test]
    fn json_round_trip() {
        let u = InputSignal::PiecewiseSmooth {
            segments: vec![
                Segment {
                    start: 0.0,
                    signal: InputSignal::constant(&[1.0]),
                },
                Segment {
                    start: 1.0,
                    signal: InputSignal::Polynomial {
                        coeffs: vec![vec![0.0, 1.0]],
                    },
                },
            ],
            smoothness: 0,
        };
        let text = serde_json::to_string(&u).unwrap();
        let back: InputSignal = serde_json::from_str(&text).unwrap();
        assert_eq!(back, u);
        assert_eq!(back.value(2.0), vec![2.0]);
    }
}
