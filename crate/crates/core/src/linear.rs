//! Linear systems `x' = Ax + Bu, y = Cx`: relative degree, normal form,
//! transmission zeros, minimum-phase verdict and the explicit
//! output-input stability certificate for the SISO case.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::gains::{ClassKFn, ClassKLFn};

/// Threshold below which Markov parameters `c^T A^k b` count as zero.
pub const MARKOV_TOLERANCE: f64 = 1e-10;
/// Zeros with real part above this are treated as non-minimum-phase.
pub const STABILITY_MARGIN: f64 = -1e-9;
/// Distance from an eigenvalue of `A` at which a zero is flagged as a
/// possible pole-zero cancellation.
pub const CANCELLATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("system is not SISO (m = {m}, l = {l})")]
    NotSiso { m: usize, l: usize },
    #[error("system has no relative degree (c^T A^k b = 0 for k < n)")]
    NoRelativeDegree,
    #[error("transmission zeros unsupported for non-square systems (m = {m}, l = {l})")]
    NonSquare { m: usize, l: usize },
    #[error("Rosenbrock pencil determinant vanishes identically (system not invertible)")]
    DegeneratePencil,
    #[error("basis completion failed: rank {rank} < {needed}")]
    BasisCompletion { rank: usize, needed: usize },
    #[error("system is not minimum-phase (max zero real part {max_re})")]
    NotMinimumPhase { max_re: f64 },
    #[error("matrix file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, LinearError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinearError::Dimension(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(LinearError::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(LinearError::Dimension(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(LinearError::NonFinite);
        }
        Ok(LinearSystem { a, b, c })
    }

    /// SISO system from `A`, input vector `b` and output row `c`.
    pub fn siso(a: DMatrix<f64>, b: &[f64], c: &[f64]) -> Result<Self, LinearError> {
        let n = b.len();
        Self::new(
            a,
            DMatrix::from_column_slice(n, 1, b),
            DMatrix::from_row_slice(1, c.len(), c),
        )
    }

    /// Companion pair for the monic polynomial
    /// `s^n + coeffs[n-1] s^(n-1) + ... + coeffs[0]`, with `b = e_n`.
    pub fn companion(coeffs: &[f64], c: &[f64]) -> Result<Self, LinearError> {
        let n = coeffs.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        for (j, k) in coeffs.iter().enumerate() {
            a[(n - 1, j)] = -k;
        }
        let mut b = vec![0.0; n];
        if n > 0 {
            b[n - 1] = 1.0;
        }
        Self::siso(a, &b, c)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn l(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_siso(&self) -> bool {
        self.m() == 1 && self.l() == 1
    }

    fn require_siso(&self) -> Result<(), LinearError> {
        if self.is_siso() {
            Ok(())
        } else {
            Err(LinearError::NotSiso {
                m: self.m(),
                l: self.l(),
            })
        }
    }

    /// The system in coordinates `z = T x`.
    pub fn transformed(&self, t: &DMatrix<f64>) -> Option<Self> {
        let ti = t.clone().try_inverse()?;
        Some(LinearSystem {
            a: t * &self.a * &ti,
            b: t * &self.b,
            c: &self.c * ti,
        })
    }

    /// `c^T A^k` as a row vector.
    fn c_power(&self, k: usize) -> DMatrix<f64> {
        let mut row = self.c.clone();
        for _ in 0..k {
            row = &row * &self.a;
        }
        row
    }
}

/// Smallest `r` with `|c^T A^(r-1) b| > MARKOV_TOLERANCE`, if any.
pub fn linear_relative_degree(sys: &LinearSystem) -> Result<Option<usize>, LinearError> {
    sys.require_siso()?;
    let mut row = sys.c.clone();
    for r in 1..=sys.n() {
        if (&row * &sys.b)[(0, 0)].abs() > MARKOV_TOLERANCE {
            return Ok(Some(r));
        }
        row = &row * &sys.a;
    }
    Ok(None)
}

/// Normal form `xi' = chain, xi_r' = d^T xi + f^T eta + g u, eta' = P xi + Q eta`.
#[derive(Debug, Clone, Serialize)]
pub struct NormalFormData {
    pub r: usize,
    /// Rows `c^T, c^T A, ..., c^T A^(r-1)` followed by an orthonormal basis
    /// of vectors annihilating `b, c, ..., (A^(r-2))^T c`.
    #[serde(serialize_with = "ser_matrix")]
    pub t: DMatrix<f64>,
    pub t_condition: f64,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub g: f64,
    #[serde(serialize_with = "ser_matrix")]
    pub p: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub q: DMatrix<f64>,
    /// Largest entrywise deviation of the transformed matrices from the
    /// chain-of-integrators structure.
    pub structure_residual: f64,
    /// `Some` when `Q` is Hurwitz.
    pub eta_bound: Option<EtaBound>,
}

/// `|eta(t)| <= kappa e^(-lambda t) |eta(0)| + mu ||xi||_[0,t]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EtaBound {
    pub lambda: f64,
    pub kappa: f64,
    pub mu: f64,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

/// Orthonormal basis (as rows) of the null space of the rows of `m`.
fn null_space_rows(m: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, usize) {
    if m.nrows() == 0 {
        return (DMatrix::identity(n, n), 0);
    }
    // Pad to at least n rows so the SVD returns a full right basis.
    let mut padded = DMatrix::zeros(m.nrows().max(n), n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(1.0);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();
    let rows: Vec<_> = order[rank..].iter().map(|&i| v_t.row(i).into_owned()).collect();
    let basis = if rows.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        DMatrix::from_rows(&rows)
    };
    (basis, rank)
}

pub fn normal_form(sys: &LinearSystem) -> Result<NormalFormData, LinearError> {
    let r = linear_relative_degree(sys)?.ok_or(LinearError::NoRelativeDegree)?;
    let n = sys.n();
    let xi_rows: Vec<_> = (0..r).map(|k| sys.c_power(k).row(0).into_owned()).collect();

    let mut constraints = vec![sys.b.transpose().row(0).into_owned()];
    constraints.extend(xi_rows[..r - 1].iter().cloned());
    let (eta, rank) = null_space_rows(&DMatrix::from_rows(&constraints), n);
    if eta.nrows() != n - r {
        return Err(LinearError::BasisCompletion {
            rank,
            needed: r,
        });
    }
    let mut t = DMatrix::zeros(n, n);
    for (i, row) in xi_rows.iter().enumerate() {
        t.set_row(i, row);
    }
    for i in 0..eta.nrows() {
        t.set_row(r + i, &eta.row(i));
    }
    let sv = t.clone().svd(false, false).singular_values;
    let t_condition = sv.max() / sv.min();
    let z = sys.transformed(&t).ok_or(LinearError::BasisCompletion {
        rank: sv.iter().filter(|s| **s > 1e-12).count(),
        needed: n,
    })?;

    let mut residual: f64 = 0.0;
    for i in 0..r - 1 {
        for j in 0..n {
            let want = if j == i + 1 { 1.0 } else { 0.0 };
            residual = residual.max((z.a[(i, j)] - want).abs());
        }
        residual = residual.max(z.b[(i, 0)].abs());
    }
    for i in r..n {
        residual = residual.max(z.b[(i, 0)].abs());
    }
    for j in 0..n {
        let want = if j == 0 { 1.0 } else { 0.0 };
        residual = residual.max((z.c[(0, j)] - want).abs());
    }

    let d: Vec<f64> = (0..r).map(|j| z.a[(r - 1, j)]).collect();
    let f: Vec<f64> = (r..n).map(|j| z.a[(r - 1, j)]).collect();
    let g = z.b[(r - 1, 0)];
    let p = z.a.view((r, 0), (n - r, r)).into_owned();
    let q = z.a.view((r, r), (n - r, n - r)).into_owned();
    let eta_bound = eta_decay_bound(&p, &q);
    Ok(NormalFormData {
        r,
        t,
        t_condition,
        d,
        f,
        g,
        p,
        q,
        structure_residual: residual,
        eta_bound,
    })
}

/// `lambda` is half the decay rate of `Q`; `kappa` the sampled supremum of
/// `||e^(Qt)|| e^(lambda t)` inflated by 10%; `mu = kappa ||P|| / lambda`.
fn eta_decay_bound(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<EtaBound> {
    if q.nrows() == 0 {
        return Some(EtaBound {
            lambda: 1.0,
            kappa: 0.0,
            mu: 0.0,
        });
    }
    let abscissa = q
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if abscissa >= STABILITY_MARGIN {
        return None;
    }
    let lambda = -abscissa / 2.0;
    let horizon = 40.0 / lambda;
    let steps = 4000;
    let h = horizon / steps as f64;
    let step = (q * h).exp();
    let mut e = DMatrix::identity(q.nrows(), q.nrows());
    let mut sup: f64 = 1.0;
    for k in 1..=steps {
        e = &step * &e;
        sup = sup.max(e.norm_spectral() * (lambda * h * k as f64).exp());
    }
    let kappa = 1.1 * sup;
    Some(EtaBound {
        lambda,
        kappa,
        mu: kappa * p.norm_spectral() / lambda,
    })
}

trait SpectralNorm {
    fn norm_spectral(&self) -> f64;
}

impl SpectralNorm for DMatrix<f64> {
    fn norm_spectral(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.clone().svd(false, false).singular_values.max()
        }
    }
}

/// Transmission zeros with a minimality diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroSet {
    #[serde(serialize_with = "ser_complex")]
    pub zeros: Vec<Complex64>,
    /// Zeros within `CANCELLATION_TOLERANCE` of an eigenvalue of `A`.
    #[serde(serialize_with = "ser_complex")]
    pub cancellations: Vec<Complex64>,
}

fn ser_complex<S: serde::Serializer>(zs: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
    let v: Vec<serde_json::Value> = zs
        .iter()
        .map(|z| serde_json::json!({"re": z.re, "im": z.im}))
        .collect();
    serde::Serialize::serialize(&v, s)
}

impl ZeroSet {
    pub fn warning(&self) -> Option<String> {
        (!self.cancellations.is_empty()).then(|| {
            format!(
                "{} zero(s) within {CANCELLATION_TOLERANCE:e} of a pole; realization may be non-minimal",
                self.cancellations.len()
            )
        })
    }
}

fn pencil_determinant(sys: &LinearSystem, s: Complex64) -> Complex64 {
    let (n, m) = (sys.n(), sys.m());
    let mut p = DMatrix::<Complex64>::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] = Complex64::from(-sys.a[(i, j)]);
        }
        p[(i, i)] += s;
        for j in 0..m {
            p[(i, n + j)] = Complex64::from(-sys.b[(i, j)]);
        }
    }
    for i in 0..m {
        for j in 0..n {
            p[(n + i, j)] = Complex64::from(sys.c[(i, j)]);
        }
    }
    p.determinant()
}

/// Coefficients (ascending) of the pencil determinant, by sampling it on a
/// circle and applying an inverse DFT.
fn pencil_polynomial(sys: &LinearSystem) -> Vec<f64> {
    let n = sys.n();
    let k = n + 1;
    let radius = 1.0 + sys.a.norm() / (n.max(1) as f64).sqrt();
    let samples: Vec<Complex64> = (0..k)
        .map(|j| {
            let w = Complex64::from_polar(radius, std::f64::consts::TAU * j as f64 / k as f64);
            pencil_determinant(sys, w)
        })
        .collect();
    (0..k)
        .map(|p| {
            let sum: Complex64 = samples
                .iter()
                .enumerate()
                .map(|(j, d)| {
                    d * Complex64::from_polar(1.0, -std::f64::consts::TAU * (j * p) as f64 / k as f64)
                })
                .sum();
            (sum / (k as f64 * radius.powi(p as i32))).re
        })
        .collect()
}

fn eval_poly(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut v = Complex64::from(0.0);
    let mut dv = Complex64::from(0.0);
    for &c in coeffs.iter().rev() {
        dv = dv * z + v;
        v = v * z + c;
    }
    (v, dv)
}

/// Roots of the polynomial with ascending coefficients (leading
/// coefficient nonzero), via companion-matrix eigenvalues and Newton
/// polishing.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let mut roots: Vec<Complex64> = comp.complex_eigenvalues().iter().copied().collect();
    for z in &mut roots {
        for _ in 0..4 {
            let (v, dv) = eval_poly(coeffs, *z);
            if dv.norm() == 0.0 {
                break;
            }
            let next = *z - v / dv;
            if eval_poly(coeffs, next).0.norm() < v.norm() {
                *z = next;
            } else {
                break;
            }
        }
        if z.im.abs() < 1e-12 * (1.0 + z.re.abs()) {
            z.im = 0.0;
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

/// Transmission zeros of a SISO or square MIMO system, sorted by real part.
pub fn transmission_zeros(sys: &LinearSystem) -> Result<ZeroSet, LinearError> {
    if sys.m() != sys.l() {
        return Err(LinearError::NonSquare {
            m: sys.m(),
            l: sys.l(),
        });
    }
    let mut coeffs = pencil_polynomial(sys);
    let scale = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(LinearError::DegeneratePencil);
    }
    while coeffs.last().is_some_and(|c| c.abs() <= 1e-10 * scale) {
        coeffs.pop();
    }
    let zeros = polynomial_roots(&coeffs);
    let poles: Vec<Complex64> = sys.a.complex_eigenvalues().iter().copied().collect();
    let cancellations = zeros
        .iter()
        .copied()
        .filter(|z| poles.iter().any(|p| (z - p).norm() < CANCELLATION_TOLERANCE))
        .collect();
    Ok(ZeroSet {
        zeros,
        cancellations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimumPhaseVerdict {
    pub minimum_phase: bool,
    /// `-max Re(z)`; infinite when there are no zeros.
    pub margin: f64,
    pub zeros: ZeroSet,
}

pub fn minimum_phase_verdict(sys: &LinearSystem) -> Result<MinimumPhaseVerdict, LinearError> {
    let zeros = transmission_zeros(sys)?;
    let max_re = zeros.zeros.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(MinimumPhaseVerdict {
        minimum_phase: max_re < STABILITY_MARGIN,
        margin: -max_re,
        zeros,
    })
}

/// Explicit constants of the output-input stability bound with `N = r`.
///
/// Writing `u = (y^(r) - c^T A^r x)/g` and bounding `x` through the normal
/// form gives
///
/// ```text
/// |u(t)| <= a κ e^(-λt) |x(0)| / |g| + (a (μ + 1) + 1)/|g| ||y^r||
/// ```
///
/// with `a = |(A^r)^T c|` (the `u`-only coefficients), and for the stacked
/// `(u; x)` bound the same argument carried through `T^-1`.
#[derive(Debug, Clone, Serialize)]
pub struct LinearCertificate {
    pub r: usize,
    pub g: f64,
    pub ar_c_norm: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub mu: f64,
    /// Coefficient of `e^(-λt)|x(0)|` in the bound on `|u|` alone.
    pub u_beta_coeff: f64,
    /// Slope of the linear gain in the bound on `|u|` alone.
    pub gamma_slope: f64,
    /// Coefficient of `e^(-λt)|x(0)|` in the bound on `|(u; x)|`.
    pub beta_coeff: f64,
    /// Slope of the linear gain in the bound on `|(u; x)|`.
    pub full_gamma_slope: f64,
    pub t_inverse_norm: f64,
    pub t_eta_norm: f64,
}

impl LinearCertificate {
    /// `β(s,t) = beta_coeff · s · e^(-λt)` for the stacked bound.
    pub fn beta(&self) -> ClassKLFn {
        ClassKLFn::exponential(self.beta_coeff, self.lambda).expect("positive rate")
    }

    pub fn gamma(&self) -> ClassKFn {
        ClassKFn::linear(self.full_gamma_slope).expect("positive slope")
    }

    pub fn u_beta(&self) -> ClassKLFn {
        ClassKLFn::exponential(self.u_beta_coeff, self.lambda).expect("positive rate")
    }

    pub fn u_gamma(&self) -> ClassKFn {
        ClassKFn::linear(self.gamma_slope).expect("positive slope")
    }
}

pub fn linear_certificate(sys: &LinearSystem) -> Result<LinearCertificate, LinearError> {
    let verdict = minimum_phase_verdict(sys)?;
    let nf = normal_form(sys)?;
    let eb = match (verdict.minimum_phase, nf.eta_bound) {
        (true, Some(eb)) => eb,
        _ => {
            return Err(LinearError::NotMinimumPhase {
                max_re: -verdict.margin,
            })
        }
    };
    let r = nf.r;
    let ar_c_norm = sys.c_power(r).norm();
    let g = nf.g;
    let t_inverse_norm = nf
        .t
        .clone()
        .try_inverse()
        .map(|m| m.norm_spectral())
        .ok_or(LinearError::BasisCompletion {
            rank: 0,
            needed: sys.n(),
        })?;
    let n = sys.n();
    let t_eta_norm = nf.t.view((r, 0), (n - r, n)).into_owned().norm_spectral();

    let a_over_g = ar_c_norm / g.abs();
    let x_beta = t_inverse_norm * eb.kappa * t_eta_norm;
    let x_gamma = t_inverse_norm * (1.0 + eb.mu);
    Ok(LinearCertificate {
        r,
        g,
        ar_c_norm,
        lambda: eb.lambda,
        kappa: eb.kappa,
        mu: eb.mu,
        u_beta_coeff: a_over_g * eb.kappa,
        gamma_slope: (ar_c_norm * (eb.mu + 1.0) + 1.0) / g.abs(),
        beta_coeff: (a_over_g + 1.0) * x_beta,
        full_gamma_slope: (a_over_g + 1.0) * x_gamma + 1.0 / g.abs(),
        t_inverse_norm,
        t_eta_norm,
    })
}

/// Summary used by the `zeros` and `normalform` reports.
#[derive(Debug, Clone, Serialize)]
pub struct LinearReport {
    pub r: Option<usize>,
    #[serde(serialize_with = "ser_complex")]
    pub zeros: Vec<Complex64>,
    pub minimum_phase: bool,
    pub margin: f64,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub gamma_slope: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn linear_report(sys: &LinearSystem) -> Result<LinearReport, LinearError> {
    let verdict = minimum_phase_verdict(sys)?;
    let r = if sys.is_siso() {
        linear_relative_degree(sys)?
    } else {
        None
    };
    let cert = if sys.is_siso() && verdict.minimum_phase {
        linear_certificate(sys).ok()
    } else {
        None
    };
    let eta = if sys.is_siso() && r.is_some() {
        normal_form(sys).ok().and_then(|nf| nf.eta_bound)
    } else {
        None
    };
    Ok(LinearReport {
        r,
        warnings: verdict.zeros.warning().into_iter().collect(),
        zeros: verdict.zeros.zeros,
        minimum_phase: verdict.minimum_phase,
        margin: verdict.margin,
        lambda: eta.map(|e| e.lambda),
        mu: eta.map(|e| e.mu),
        gamma_slope: cert.map(|c| c.gamma_slope),
    })
}

/// Parses the plain-text matrix format: a line `A`, `B` or `C` starts a
/// block; following lines are whitespace-separated rows. `#` starts a
/// comment.
pub fn parse_matrix_file(text: &str) -> Result<LinearSystem, LinearError> {
    let mut blocks: [Vec<Vec<f64>>; 3] = Default::default();
    let mut current: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| LinearError::Parse {
            line: idx + 1,
            message,
        };
        match line {
            "A" => current = Some(0),
            "B" => current = Some(1),
            "C" => current = Some(2),
            _ => {
                let k = current.ok_or_else(|| err("row before any `A`/`B`/`C` header".into()))?;
                let row = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if let Some(first) = blocks[k].first() {
                    if first.len() != row.len() {
                        return Err(err(format!("row has {} entries, expected {}", row.len(), first.len())));
                    }
                }
                blocks[k].push(row);
            }
        }
    }
    let to_matrix = |rows: &[Vec<f64>], name: &str| {
        if rows.is_empty() {
            return Err(LinearError::Parse {
                line: 0,
                message: format!("missing block {name}"),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat))
    };
    LinearSystem::new(
        to_matrix(&blocks[0], "A")?,
        to_matrix(&blocks[1], "B")?,
        to_matrix(&blocks[2], "C")?,
    )
}

pub fn to_matrix_file(sys: &LinearSystem) -> String {
    let mut out = String::new();
    for (name, m) in [("A", &sys.a), ("B", &sys.b), ("C", &sys.c)] {
        out.push_str(name);
        out.push('\n');
        for row in m.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}

/// `c^T A^r x` and `g` for the output `r`-th derivative `y^(r) = c^T A^r x + g u`.
pub fn output_derivative_row(sys: &LinearSystem, r: usize) -> (DVector<f64>, f64) {
    let row = sys.c_power(r);
    let g = if r == 0 {
        0.0
    } else {
        (sys.c_power(r - 1) * &sys.b)[(0, 0)]
    };
    (row.row(0).transpose(), g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn companion(c: &[f64]) -> LinearSystem {
        LinearSystem::companion(&[6.0, 11.0, 6.0], c).unwrap()
    }

    #[test]
    fn relative_degree_of_companion_pairs() {
        assert_eq!(linear_relative_degree(&companion(&[4.0, 1.0, 0.0])).unwrap(), Some(2));
        assert_eq!(linear_relative_degree(&companion(&[0.0, 0.0, 1.0])).unwrap(), Some(1));
        assert_eq!(linear_relative_degree(&companion(&[0.0, 0.0, 0.0])).unwrap(), None);
    }

    #[test]
    fn integrator() {
        let sys = LinearSystem::siso(DMatrix::zeros(1, 1), &[1.0], &[1.0]).unwrap();
        assert_eq!(linear_relative_degree(&sys).unwrap(), Some(1));
        assert!(transmission_zeros(&sys).unwrap().zeros.is_empty());
        let v = minimum_phase_verdict(&sys).unwrap();
        assert!(v.minimum_phase);
        let cert = linear_certificate(&sys).unwrap();
        assert_eq!(cert.gamma_slope, 1.0);
        assert_eq!(cert.u_beta_coeff, 0.0);
        assert_eq!(cert.beta_coeff, 0.0);
    }

    #[test]
    fn zeros_of_companion_numerators() {
        let z = transmission_zeros(&companion(&[4.0, 1.0, 0.0])).unwrap().zeros;
        assert_eq!(z.len(), 1);
        assert!((z[0].re + 4.0).abs() < 1e-10 && z[0].im == 0.0);
        let z = transmission_zeros(&companion(&[-1.0, 1.0, 0.0])).unwrap().zeros;
        assert!((z[0].re - 1.0).abs() < 1e-10);
        assert!(!minimum_phase_verdict(&companion(&[-1.0, 1.0, 0.0])).unwrap().minimum_phase);
    }

    #[test]
    fn normal_form_blocks() {
        let nf = normal_form(&companion(&[4.0, 1.0, 0.0])).unwrap();
        assert_eq!(nf.r, 2);
        assert!(nf.structure_residual < 1e-8);
        assert!((nf.q[(0, 0)] + 4.0).abs() < 1e-10);
        assert!((nf.eta_bound.unwrap().lambda - 2.0).abs() < 1e-10);
        assert_eq!(nf.t.row(0).iter().copied().collect::<Vec<_>>(), vec![4.0, 1.0, 0.0]);

        let bad = normal_form(&companion(&[-1.0, 1.0, 0.0])).unwrap();
        assert!((bad.q[(0, 0)] - 1.0).abs() < 1e-10);
        assert!(bad.eta_bound.is_none());
        assert!(linear_certificate(&companion(&[-1.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn normal_form_round_trip() {
        let sys = companion(&[2.0, 3.0, 1.0]);
        let nf = normal_form(&sys).unwrap();
        let z = sys.transformed(&nf.t).unwrap();
        let ti = nf.t.clone().try_inverse().unwrap();
        let back = z.transformed(&ti).unwrap();
        assert!((back.a - &sys.a).amax() < 1e-8);
        assert!((back.b - &sys.b).amax() < 1e-8);
        assert!((back.c - &sys.c).amax() < 1e-8);
    }

    #[test]
    fn square_mimo_zeros() {
        // Two decoupled SISO channels with zeros -2 and -5.
        let a = DMatrix::from_row_slice(4, 4, &[
            0.0, 1.0, 0.0, 0.0, //
            -2.0, -3.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, -12.0, -7.0,
        ]);
        let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 4, &[2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 5.0, 1.0]);
        let sys = LinearSystem::new(a, b, c).unwrap();
        let z = transmission_zeros(&sys).unwrap().zeros;
        assert_eq!(z.len(), 2);
        assert!((z[0].re + 5.0).abs() < 1e-9 && (z[1].re + 2.0).abs() < 1e-9);
    }

    #[test]
    fn non_square_rejected() {
        let sys = LinearSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(transmission_zeros(&sys), Err(LinearError::NonSquare { .. })));
    }

    #[test]
    fn cancellation_flagged() {
        // Numerator s + 1 cancels the pole at -1.
        let z = transmission_zeros(&companion(&[1.0, 1.0, 0.0])).unwrap();
        assert_eq!(z.cancellations.len(), 1);
        assert!(z.warning().is_some());
    }

    #[test]
    fn matrix_file_round_trip() {
        let sys = companion(&[4.0, 1.0, 0.0]);
        let text = to_matrix_file(&sys);
        assert_eq!(parse_matrix_file(&text).unwrap(), sys);
        assert!(matches!(
            parse_matrix_file("A\n1 2\n3\n"),
            Err(LinearError::Parse { line: 3, .. })
        ));
    }
}
