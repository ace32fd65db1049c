//! Quadrature on reference simplices.
//!
//! Points are stored as barycentric coordinates and weights are normalized to
//! sum to one, so an integral over an element is
//! `measure * sum_q w_q f(lambda_q)`.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Quadrature rule on the reference simplex of dimension `dim`.
#[derive(Clone, Debug)]
pub struct QuadratureRule<T: Real> {
    pub dim: usize,
    /// Barycentric coordinates; 1D rules use the first two entries.
    pub points: Vec<[T; 3]>,
    /// Normalized weights summing to one.
    pub weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrates `f(lambda)` over a simplex of the given measure.
    pub fn integrate(&self, measure: T, mut f: impl FnMut(&[T; 3]) -> T) -> T {
        let mut acc = T::zero();
        for (p, &w) in self.points.iter().zip(&self.weights) {
            acc = acc + w * f(p);
        }
        measure * acc
    }
}

/// Gauss-Legendre abscissae/weights on [-1, 1], up to eight points.
fn gauss_table(n: usize) -> Option<(&'static [f64], &'static [f64])> {
    const X2: [f64; 2] = [-0.5773502691896257, 0.5773502691896257];
    const W2: [f64; 2] = [1.0, 1.0];
    const X3: [f64; 3] = [-0.7745966692414834, 0.0, 0.7745966692414834];
    const W3: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    const X4: [f64; 4] = [
        -0.8611363115940526,
        -0.3399810435848563,
        0.3399810435848563,
        0.8611363115940526,
    ];
    const W4: [f64; 4] = [
        0.3478548451374538,
        0.6521451548625461,
        0.6521451548625461,
        0.3478548451374538,
    ];
    const X5: [f64; 5] = [
        -0.9061798459386640,
        -0.5384693101056831,
        0.0,
        0.5384693101056831,
        0.9061798459386640,
    ];
    const W5: [f64; 5] = [
        0.2369268850561891,
        0.4786286704993665,
        0.5688888888888889,
        0.4786286704993665,
        0.2369268850561891,
    ];
    const X6: [f64; 6] = [
        -0.9324695142031521,
        -0.6612093864662645,
        -0.2386191860831969,
        0.2386191860831969,
        0.6612093864662645,
        0.9324695142031521,
    ];
    const W6: [f64; 6] = [
        0.1713244923791704,
        0.3607615730481386,
        0.4679139345726910,
        0.4679139345726910,
        0.3607615730481386,
        0.1713244923791704,
    ];
    const X7: [f64; 7] = [
        -0.9491079123427585,
        -0.7415311855993945,
        -0.4058451513773972,
        0.0,
        0.4058451513773972,
        0.7415311855993945,
        0.9491079123427585,
    ];
    const W7: [f64; 7] = [
        0.1294849661688697,
        0.2797053914892766,
        0.3818300505051189,
        0.4179591836734694,
        0.3818300505051189,
        0.2797053914892766,
        0.1294849661688697,
    ];
    const X8: [f64; 8] = [
        -0.9602898564975363,
        -0.7966664774136267,
        -0.5255324099163290,
        -0.1834346424956498,
        0.1834346424956498,
        0.5255324099163290,
        0.7966664774136267,
        0.9602898564975363,
    ];
    const W8: [f64; 8] = [
        0.1012285362903763,
        0.2223810344533745,
        0.3137066458778873,
        0.3626837833783620,
        0.3626837833783620,
        0.3137066458778873,
        0.2223810344533745,
        0.1012285362903763,
    ];
    Some(match n {
        1 => (&[0.0][..], &[2.0][..]),
        2 => (&X2, &W2),
        3 => (&X3, &W3),
        4 => (&X4, &W4),
        5 => (&X5, &W5),
        6 => (&X6, &W6),
        7 => (&X7, &W7),
        8 => (&X8, &W8),
        _ => return None,
    })
}

/// `n`-point Gauss rule on the unit interval, as `(t, w)` pairs with the
/// weights summing to one. Exact up to degree `2n - 1`.
pub fn gauss_unit_interval<T: Real>(n: usize) -> Result<Vec<(T, T)>> {
    let (x, w) = gauss_table(n).ok_or(Error::UnsupportedRule {
        dim: 1,
        degree: 2 * n - 1,
    })?;
    Ok(x.iter()
        .zip(w)
        .map(|(&xi, &wi)| (real::<T>(0.5 * (xi + 1.0)), real::<T>(0.5 * wi)))
        .collect())
}

fn rule_1d<T: Real>(degree: usize) -> Result<QuadratureRule<T>> {
    let n = degree / 2 + 1; // exactness 2n-1 >= degree
    let pts = gauss_unit_interval::<T>(n)?;
    Ok(QuadratureRule {
        dim: 1,
        points: pts
            .iter()
            .map(|&(t, _)| [T::one() - t, t, T::zero()])
            .collect(),
        weights: pts.iter().map(|&(_, w)| w).collect(),
    })
}

/// Appends the orbit of barycentric point `(a, b, b)` under coordinate
/// permutation (1 point if a == b, otherwise 3).
fn push_orbit<T: Real>(rule: &mut QuadratureRule<T>, a: f64, w: f64) {
    let b = (1.0 - a) / 2.0;
    let aw = real::<T>(w);
    if (a - b).abs() < 1e-14 {
        rule.points.push([real(a), real(b), real(b)]);
        rule.weights.push(aw);
        return;
    }
    for p in [[a, b, b], [b, a, b], [b, b, a]] {
        rule.points.push([real(p[0]), real(p[1]), real(p[2])]);
        rule.weights.push(aw);
    }
}

fn rule_2d<T: Real>(degree: usize) -> Result<QuadratureRule<T>> {
    let mut rule = QuadratureRule {
        dim: 2,
        points: Vec::new(),
        weights: Vec::new(),
    };
    match degree {
        0 | 1 => push_orbit(&mut rule, 1.0 / 3.0, 1.0),
        2 => push_orbit(&mut rule, 2.0 / 3.0, 1.0 / 3.0),
        // The degree-3 rules with few points carry a negative centroid
        // weight; the positive six-point degree-4 rule is used instead.
        3 | 4 => {
            push_orbit(&mut rule, 0.816847572980459, 0.109951743655322);
            push_orbit(&mut rule, 0.108103018168070, 0.223381589678011);
        }
        5 => {
            push_orbit(&mut rule, 1.0 / 3.0, 9.0 / 40.0);
            push_orbit(&mut rule, 0.797426985353087, 0.125939180544827);
            push_orbit(&mut rule, 0.059715871789770, 0.132394152788506);
        }
        _ => return Err(Error::UnsupportedRule { dim: 2, degree }),
    }
    Ok(rule)
}

/// Positive-weight rule on the reference simplex, exact for polynomials of
/// total degree `degree`. Supports `degree <= 5`; higher degrees report
/// an unsupported-rule error.
pub fn quadrature_rule<T: Real>(dim: usize, degree: usize) -> Result<QuadratureRule<T>> {
    match dim {
        1 => {
            if degree > 5 {
                return Err(Error::UnsupportedRule { dim, degree });
            }
            rule_1d(degree)
        }
        2 => rule_2d(degree),
        _ => Err(Error::UnsupportedRule { dim, degree }),
    }
}

/// Collapsed (Duffy) tensor-product Gauss rule with `n` points per
/// direction: the unit square is mapped onto the triangle by
/// `(xi, eta) -> (xi, eta (1 - xi))`. Exact for total degree `2n - 2` in 2D
/// and `2n - 1` in 1D. Independent of the tabulated simplex rules, which
/// makes it a useful cross-check and a way to reach higher degrees.
pub fn duffy_rule<T: Real>(dim: usize, n: usize) -> Result<QuadratureRule<T>> {
    let base = gauss_unit_interval::<T>(n)?;
    match dim {
        1 => Ok(QuadratureRule {
            dim: 1,
            points: base
                .iter()
                .map(|&(t, _)| [T::one() - t, t, T::zero()])
                .collect(),
            weights: base.iter().map(|&(_, w)| w).collect(),
        }),
        2 => {
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for &(xi, wx) in &base {
                for &(eta, we) in &base {
                    let x = xi;
                    let y = eta * (T::one() - xi);
                    points.push([T::one() - x - y, x, y]);
                    // Jacobian (1 - xi); factor 2 renormalizes from the
                    // triangle area 1/2 to weight-sum one.
                    weights.push(real::<T>(2.0) * wx * we * (T::one() - xi));
                }
            }
            Ok(QuadratureRule {
                dim: 2,
                points,
                weights,
            })
        }
        _ => Err(Error::UnsupportedRule { dim, degree: 2 * n }),
    }
}

/// Exact integral of the barycentric monomial `prod lambda_i^{p_i}` over a
/// reference simplex of unit measure:
/// `dim! * prod(p_i!) / (sum(p_i) + dim)!`.
pub fn monomial_integral(dim: usize, powers: &[usize]) -> f64 {
    fn fact(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }
    let total: usize = powers.iter().take(dim + 1).sum();
    let num: f64 = fact(dim) * powers.iter().take(dim + 1).map(|&p| fact(p)).product::<f64>();
    num / fact(total + dim)
}
