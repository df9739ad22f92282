//! Basis systems for the effect-intensity expansion h'(x) = sum b_l phi_l(x):
//! monomials, step indicators, and positive-part (piecewise linear) terms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::summary::WeightFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// 1, x, ..., x^degree.
    Polynomial { degree: usize },
    /// I{x >= t} for each knot t.
    Indicator { knots: Vec<f64> },
    /// (x - t)+ for each knot t.
    PiecewiseLinearPlus { knots: Vec<f64> },
}

/// A basis over a fixed exposure domain. The domain bounds the penalty
/// integrals and the internal orthogonalized parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub kind: BasisKind,
    pub domain: (f64, f64),
}

impl BasisSet {
    pub fn polynomial(degree: usize, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        Ok(BasisSet {
            kind: BasisKind::Polynomial { degree },
            domain,
        })
    }

    pub fn indicator(knots: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        check_knots(&knots)?;
        Ok(BasisSet {
            kind: BasisKind::Indicator { knots },
            domain,
        })
    }

    pub fn piecewise_linear(knots: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        check_knots(&knots)?;
        Ok(BasisSet {
            kind: BasisKind::PiecewiseLinearPlus { knots },
            domain,
        })
    }

    /// Number of basis functions L.
    pub fn len(&self) -> usize {
        match &self.kind {
            BasisKind::Polynomial { degree } => degree + 1,
            BasisKind::Indicator { knots } => knots.len(),
            BasisKind::PiecewiseLinearPlus { knots } => knots.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// phi_l(x).
    pub fn evaluate(&self, l: usize, x: f64) -> f64 {
        match &self.kind {
            BasisKind::Polynomial { .. } => x.powi(l as i32),
            BasisKind::Indicator { knots } => {
                if x >= knots[l] {
                    1.0
                } else {
                    0.0
                }
            }
            BasisKind::PiecewiseLinearPlus { knots } => (x - knots[l]).max(0.0),
        }
    }

    /// Integral of phi_l from a to b (signed when b < a).
    pub fn antiderivative(&self, l: usize, a: f64, b: f64) -> f64 {
        let primitive = |v: f64| -> f64 {
            match &self.kind {
                BasisKind::Polynomial { .. } => v.powi(l as i32 + 1) / (l as f64 + 1.0),
                BasisKind::Indicator { knots } => (v - knots[l]).max(0.0),
                BasisKind::PiecewiseLinearPlus { knots } => {
                    let p = (v - knots[l]).max(0.0);
                    0.5 * p * p
                }
            }
        };
        primitive(b) - primitive(a)
    }

    /// <phi_l, W> computed against the stored upper integral of W by
    /// integration by parts on the weight grid:
    /// phi(a) G(a) - phi(b) G(b) + int_a^b phi'(x) G(x) dx.
    pub fn inner_product_weight(&self, l: usize, w: &WeightFunction) -> f64 {
        match &self.kind {
            BasisKind::Indicator { knots } => w.integral_above(knots[l]),
            BasisKind::PiecewiseLinearPlus { knots } => {
                let a = w.grid[0];
                let b = *w.grid.last().unwrap();
                let t = knots[l];
                let g_end = *w.cum_above.last().unwrap();
                (a - t).max(0.0) * w.cum_above[0] - (b - t).max(0.0) * g_end
                    + w.integral_of_cum_above(t.max(a), b)
            }
            BasisKind::Polynomial { .. } => {
                let a = w.grid[0];
                let b = *w.grid.last().unwrap();
                let g_end = *w.cum_above.last().unwrap();
                let boundary = self.evaluate(l, a) * w.cum_above[0] - self.evaluate(l, b) * g_end;
                if l == 0 {
                    return boundary;
                }
                // integrate l * x^{l-1} * G_lin(x) segment by segment
                let nodes = gauss_legendre(((l + 2) / 2).clamp(1, 6));
                let mut acc = 0.0;
                for i in 0..w.grid.len() - 1 {
                    let (s0, s1) = (w.grid[i], w.grid[i + 1]);
                    let (g0, g1) = (w.cum_above[i], w.cum_above[i + 1]);
                    let half = 0.5 * (s1 - s0);
                    let mid = 0.5 * (s0 + s1);
                    for &(u, wt) in nodes {
                        let x = mid + half * u;
                        let g = g0 + (x - s0) / (s1 - s0) * (g1 - g0);
                        acc += wt * half * (l as f64) * x.powi(l as i32 - 1) * g;
                    }
                }
                boundary + acc
            }
        }
    }

    /// Roughness penalty matrix R with entries <D^m phi_i, D^m phi_j> over
    /// the domain. Indicators and positive parts have zero higher
    /// derivatives almost everywhere, so vanish for orders beyond their
    /// break.
    pub fn penalty_matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "penalty derivative order must be >= 1".into(),
            ));
        }
        let (a, b) = self.domain;
        let l = self.len();
        let mut r = DMatrix::zeros(l, l);
        match &self.kind {
            BasisKind::Polynomial { .. } => {
                // D^m x^k = k!/(k-m)! x^{k-m}
                let falling = |k: usize| -> f64 { (k - m + 1..=k).map(|v| v as f64).product() };
                for i in m..l {
                    for j in m..l {
                        let p = (i - m) + (j - m);
                        let integral =
                            (b.powi(p as i32 + 1) - a.powi(p as i32 + 1)) / (p as f64 + 1.0);
                        r[(i, j)] = falling(i) * falling(j) * integral;
                    }
                }
            }
            BasisKind::Indicator { .. } => {}
            BasisKind::PiecewiseLinearPlus { knots } => {
                if m == 1 {
                    for i in 0..l {
                        for j in 0..l {
                            let lo = knots[i].max(knots[j]).max(a);
                            r[(i, j)] = (b - lo).max(0.0);
                        }
                    }
                }
            }
        }
        Ok(r)
    }

    /// Invertible map T from the internal well-conditioned parameterization
    /// to the reported coefficients (b = T c). Polynomials fit internally in
    /// shifted Legendre polynomials on the domain; other bases are already
    /// well scaled.
    pub fn reparameterization(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            BasisKind::Polynomial { degree } => Some(legendre_to_monomial(*degree, self.domain)),
            _ => None,
        }
    }
}

fn check_domain(domain: (f64, f64)) -> Result<()> {
    if !(domain.0.is_finite() && domain.1.is_finite()) || domain.0 >= domain.1 {
        return Err(Error::InvalidArgument(format!(
            "invalid basis domain ({}, {})",
            domain.0, domain.1
        )));
    }
    Ok(())
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.is_empty() {
        return Err(Error::InvalidArgument(
            "basis needs at least one knot".into(),
        ));
    }
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "basis knots must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Columns are the monomial coefficients of the Legendre polynomials
/// P_k((2x - a - b)/(b - a)), k = 0..=degree.
fn legendre_to_monomial(degree: usize, domain: (f64, f64)) -> DMatrix<f64> {
    let l = degree + 1;
    // Legendre coefficients in u via the three-term recurrence.
    let mut coeffs_u: Vec<Vec<f64>> = Vec::with_capacity(l);
    coeffs_u.push(vec![1.0]);
    if degree >= 1 {
        coeffs_u.push(vec![0.0, 1.0]);
    }
    for k in 1..degree {
        let prev = &coeffs_u[k - 1];
        let cur = &coeffs_u[k];
        let mut next = vec![0.0; k + 2];
        for (j, c) in cur.iter().enumerate() {
            next[j + 1] += (2.0 * k as f64 + 1.0) * c / (k as f64 + 1.0);
        }
        for (j, c) in prev.iter().enumerate() {
            next[j] -= k as f64 * c / (k as f64 + 1.0);
        }
        coeffs_u.push(next);
    }

    // substitute u = alpha x + beta
    let (a, b) = domain;
    let alpha = 2.0 / (b - a);
    let beta = -(a + b) / (b - a);
    let mut t = DMatrix::zeros(l, l);
    for (k, cu) in coeffs_u.iter().enumerate() {
        // powers of (alpha x + beta)
        let mut poly_x = vec![0.0; l]; // coefficients of the composed poly
        for (j, &c) in cu.iter().enumerate() {
            // (alpha x + beta)^j expanded binomially
            let mut binom = 1.0;
            for (i, slot) in poly_x.iter_mut().enumerate().take(j + 1) {
                // term C(j, i) alpha^i beta^{j-i} x^i
                *slot += c * binom * alpha.powi(i as i32) * beta.powi((j - i) as i32);
                binom = binom * (j - i) as f64 / (i + 1) as f64;
            }
        }
        for (row, &v) in poly_x.iter().enumerate() {
            t[(row, k)] = v;
        }
    }
    t
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> &'static [(f64, f64)] {
    const N1: [(f64, f64); 1] = [(0.0, 2.0)];
    const N2: [(f64, f64); 2] = [
        (-0.577_350_269_189_625_7, 1.0),
        (0.577_350_269_189_625_7, 1.0),
    ];
    const N3: [(f64, f64); 3] = [
        (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
        (0.0, 0.888_888_888_888_889),
        (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    ];
    const N4: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    ];
    const N5: [(f64, f64); 5] = [
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.0, 0.568_888_888_888_888_9),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    const N6: [(f64, f64); 6] = [
        (-0.932_469_514_203_152, 0.171_324_492_379_170_3),
        (-0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
        (-0.238_619_186_083_196_9, 0.467_913_934_572_691),
        (0.238_619_186_083_196_9, 0.467_913_934_572_691),
        (0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
        (0.932_469_514_203_152, 0.171_324_492_379_170_3),
    ];
    match n {
        1 => &N1,
        2 => &N2,
        3 => &N3,
        4 => &N4,
        5 => &N5,
        _ => &N6,
    }
}
