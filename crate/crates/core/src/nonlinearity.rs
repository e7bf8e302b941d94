//! Convex potentials `gamma_hat` (with `gamma = gamma_hat'`) and the smooth
//! Lipschitz coupling `pi` (with primitive `pi_hat`, `pi_hat(0) = 0`).

use crate::error::{Error, Result};

/// Default guard kept between evaluation points and singular endpoints.
pub const DEFAULT_INTERIOR_MARGIN: f64 = 1e-9;

/// Which derivative to evaluate: the primitive (`Hat`), the function itself
/// (`D0`), or its first (`D1`) and second (`D2`) derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Hat,
    D0,
    D1,
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    /// `r^4 / 4`
    Regular,
    /// `(kappa/2) [(1+r) ln(1+r) + (1-r) ln(1-r)]` on `(-1, 1)`.
    Logarithmic { kappa: f64 },
    /// Moreau-Yosida envelope `dist(r, [-1, 1])^2 / (2 epsilon)` of the
    /// double obstacle. Experimental: the penalized model is not the
    /// obstacle model.
    ObstaclePenalized { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub r_minus: f64,
    pub r_plus: f64,
    pub interior_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingKind {
    /// `pi(r) = a r + b`
    Affine { a: f64, b: f64 },
    /// `pi(r) = c tanh(r)`
    BoundedSmooth { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSpec {
    pub kind: CouplingKind,
}

pub fn make_potential(kind: PotentialKind) -> Result<PotentialSpec> {
    let (r_minus, r_plus) = match kind {
        PotentialKind::Regular => (f64::NEG_INFINITY, f64::INFINITY),
        PotentialKind::Logarithmic { kappa } => {
            if !(kappa > 0.0) || !kappa.is_finite() {
                return Err(Error::BadParameter { name: "kappa", value: kappa });
            }
            (-1.0, 1.0)
        }
        PotentialKind::ObstaclePenalized { epsilon } => {
            if !(epsilon > 0.0) || !epsilon.is_finite() {
                return Err(Error::BadParameter { name: "epsilon", value: epsilon });
            }
            (f64::NEG_INFINITY, f64::INFINITY)
        }
    };
    Ok(PotentialSpec {
        kind,
        r_minus,
        r_plus,
        interior_margin: DEFAULT_INTERIOR_MARGIN,
    })
}

pub fn eval_gamma(spec: &PotentialSpec, order: Order, r: f64) -> Result<f64> {
    spec.eval(order, r)
}

pub fn eval_pi(spec: &CouplingSpec, order: Order, r: f64) -> f64 {
    spec.eval(order, r)
}

impl PotentialSpec {
    pub fn regular() -> Self {
        make_potential(PotentialKind::Regular).expect("regular potential has no parameters")
    }

    pub fn logarithmic(kappa: f64) -> Result<Self> {
        make_potential(PotentialKind::Logarithmic { kappa })
    }

    pub fn obstacle_penalized(epsilon: f64) -> Result<Self> {
        make_potential(PotentialKind::ObstaclePenalized { epsilon })
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self> {
        if !(margin > 0.0) || margin >= 0.5 {
            return Err(Error::BadParameter { name: "interior_margin", value: margin });
        }
        self.interior_margin = margin;
        Ok(self)
    }

    /// True if the effective domain has finite endpoints.
    pub fn is_singular(&self) -> bool {
        self.r_minus.is_finite() || self.r_plus.is_finite()
    }

    /// Lower and upper admissible evaluation bounds (endpoints minus margin).
    pub fn guarded_interval(&self) -> (f64, f64) {
        (self.r_minus + self.interior_margin, self.r_plus - self.interior_margin)
    }

    pub fn admits(&self, r: f64) -> bool {
        let (lo, hi) = self.guarded_interval();
        r.is_finite() && r > lo && r < hi
    }

    pub fn eval(&self, order: Order, r: f64) -> Result<f64> {
        if !self.admits(r) {
            let (lo, hi) = self.guarded_interval();
            return Err(Error::DomainViolation { value: r, lo, hi });
        }
        Ok(self.eval_unchecked(order, r))
    }

    /// Closed forms without the domain guard. Callers must have checked
    /// [`PotentialSpec::admits`].
    pub(crate) fn eval_unchecked(&self, order: Order, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Regular => match order {
                Order::Hat => 0.25 * r * r * r * r,
                Order::D0 => r * r * r,
                Order::D1 => 3.0 * r * r,
                Order::D2 => 6.0 * r,
            },
            PotentialKind::Logarithmic { kappa } => match order {
                Order::Hat => {
                    0.5 * kappa * ((1.0 + r) * libm::log1p(r) + (1.0 - r) * libm::log1p(-r))
                }
                Order::D0 => kappa * libm::atanh(r),
                Order::D1 => kappa / (1.0 - r * r),
                Order::D2 => {
                    let s = 1.0 - r * r;
                    2.0 * kappa * r / (s * s)
                }
            },
            PotentialKind::ObstaclePenalized { epsilon } => {
                let excess = if r > 1.0 {
                    r - 1.0
                } else if r < -1.0 {
                    r + 1.0
                } else {
                    0.0
                };
                match order {
                    Order::Hat => excess * excess / (2.0 * epsilon),
                    Order::D0 => excess / epsilon,
                    Order::D1 => {
                        if excess != 0.0 {
                            1.0 / epsilon
                        } else {
                            0.0
                        }
                    }
                    Order::D2 => 0.0,
                }
            }
        }
    }

    pub fn gamma(&self, r: f64) -> Result<f64> {
        self.eval(Order::D0, r)
    }

    pub fn gamma_prime(&self, r: f64) -> Result<f64> {
        self.eval(Order::D1, r)
    }
}

impl CouplingSpec {
    pub fn affine(a: f64, b: f64) -> Self {
        CouplingSpec { kind: CouplingKind::Affine { a, b } }
    }

    pub fn bounded_smooth(c: f64) -> Self {
        CouplingSpec { kind: CouplingKind::BoundedSmooth { c } }
    }

    /// `pi(r) = -r`, the default concave coupling.
    pub fn default_affine() -> Self {
        Self::affine(-1.0, 0.0)
    }

    pub fn lipschitz_constant(&self) -> f64 {
        match self.kind {
            CouplingKind::Affine { a, .. } => a.abs(),
            CouplingKind::BoundedSmooth { c } => c.abs(),
        }
    }

    pub fn eval(&self, order: Order, r: f64) -> f64 {
        match self.kind {
            CouplingKind::Affine { a, b } => match order {
                Order::Hat => 0.5 * a * r * r + b * r,
                Order::D0 => a * r + b,
                Order::D1 => a,
                Order::D2 => 0.0,
            },
            CouplingKind::BoundedSmooth { c } => match order {
                // ln cosh r, written to avoid overflow for large |r|
                Order::Hat => {
                    let x = r.abs();
                    c * (x + libm::log1p(libm::exp(-2.0 * x)) - core::f64::consts::LN_2)
                }
                Order::D0 => c * libm::tanh(r),
                Order::D1 => {
                    let t = libm::tanh(r);
                    c * (1.0 - t * t)
                }
                Order::D2 => {
                    let t = libm::tanh(r);
                    -2.0 * c * t * (1.0 - t * t)
                }
            },
        }
    }

    pub fn pi(&self, r: f64) -> f64 {
        self.eval(Order::D0, r)
    }

    pub fn pi_hat(&self, r: f64) -> f64 {
        self.eval(Order::Hat, r)
    }

    pub fn pi_prime(&self, r: f64) -> f64 {
        self.eval(Order::D1, r)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, CouplingKind::Affine { a, b } if a == 0.0 && b == 0.0)
            || matches!(self.kind, CouplingKind::BoundedSmooth { c } if c == 0.0)
    }
}

impl Default for CouplingSpec {
    fn default() -> Self {
        Self::default_affine()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn all_potentials() -> Vec<PotentialSpec> {
        vec![
            PotentialSpec::regular(),
            PotentialSpec::logarithmic(1.0).unwrap(),
            PotentialSpec::logarithmic(0.3).unwrap(),
            PotentialSpec::obstacle_penalized(0.1).unwrap(),
        ]
    }

    #[test]
    fn potential_examples() {
        let reg = PotentialSpec::regular();
        assert_eq!(eval_gamma(&reg, Order::Hat, 2.0).unwrap(), 4.0);
        assert_eq!(eval_gamma(&reg, Order::D0, 2.0).unwrap(), 8.0);

        let log = PotentialSpec::logarithmic(1.0).unwrap();
        assert_eq!(eval_gamma(&log, Order::Hat, 0.0).unwrap(), 0.0);
        let g = eval_gamma(&log, Order::D0, 0.5).unwrap();
        assert!((g - 0.5 * libm::log(3.0)).abs() < 1e-15);
        assert!((g - 0.549306).abs() < 1e-6);
        assert_eq!(eval_gamma(&log, Order::D1, 0.0).unwrap(), 1.0);

        let ob = PotentialSpec::obstacle_penalized(0.1).unwrap();
        let v = eval_gamma(&ob, Order::Hat, 1.1).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(PotentialSpec::logarithmic(0.0).is_err());
        assert!(PotentialSpec::logarithmic(-1.0).is_err());
        assert!(PotentialSpec::obstacle_penalized(0.0).is_err());
        assert!(PotentialSpec::regular().with_margin(0.0).is_err());
    }

    #[test]
    fn logarithmic_domain_guard() {
        let log = PotentialSpec::logarithmic(1.0).unwrap();
        for r in [1.0, -1.0, 1.0 - 1e-10, 1.5, f64::NAN] {
            assert!(matches!(log.gamma(r), Err(Error::DomainViolation { .. })), "{r}");
        }
        assert!(log.gamma(1.0 - 1e-8).is_ok());
    }

    #[test]
    fn coupling_examples() {
        let aff = CouplingSpec::affine(-1.0, 0.0);
        assert_eq!(eval_pi(&aff, Order::Hat, 2.0), -2.0);
        for r in [-3.0, 0.0, 7.5] {
            assert_eq!(eval_pi(&aff, Order::D1, r), -1.0);
        }
        let bs = CouplingSpec::bounded_smooth(1.0);
        assert_eq!(bs.pi(0.0), 0.0);
        assert_eq!(bs.pi_prime(0.0), 1.0);
        assert_eq!(bs.pi_hat(0.0), 0.0);
        assert!(bs.pi_hat(800.0).is_finite());
        assert_eq!(aff.lipschitz_constant(), 1.0);
        assert_eq!(CouplingSpec::bounded_smooth(-2.0).lipschitz_constant(), 2.0);
    }

    fn fd_orders(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, r: f64) -> f64 {
        let err = |h: f64| ((f(r + h) - f(r - h)) / (2.0 * h) - df(r)).abs();
        let (e1, e2) = (err(1e-2), err(5e-3));
        if e1 < 1e-11 && e2 < 1e-11 {
            return 2.0;
        }
        libm::log2(e1 / e2)
    }

    #[test]
    fn finite_difference_consistency() {
        let samples = [-0.83, -0.4, 0.05, 0.37, 0.71];
        for pot in all_potentials() {
            let orders = [(Order::Hat, Order::D0), (Order::D0, Order::D1), (Order::D1, Order::D2)];
            for &(lo, hi) in &orders {
                // the penalized obstacle is only C^1; skip the kink at |r| = 1
                let pts: Vec<f64> = match pot.kind {
                    PotentialKind::ObstaclePenalized { .. } => vec![-1.7, -0.3, 0.4, 1.3, 2.2],
                    _ => samples.to_vec(),
                };
                for &r in &pts {
                    let rate = fd_orders(
                        &|x| pot.eval(lo, x).unwrap(),
                        &|x| pot.eval(hi, x).unwrap(),
                        r,
                    );
                    assert!(rate >= 1.9, "{:?} {lo:?}->{hi:?} at {r}: {rate}", pot.kind);
                }
            }
        }
        for cp in [CouplingSpec::affine(-1.0, 0.3), CouplingSpec::bounded_smooth(1.7)] {
            for &(lo, hi) in &[(Order::Hat, Order::D0), (Order::D0, Order::D1), (Order::D1, Order::D2)] {
                for r in [-2.0, -0.5, 0.2, 1.1] {
                    let rate = fd_orders(&|x| cp.eval(lo, x), &|x| cp.eval(hi, x), r);
                    assert!(rate >= 1.9, "{:?} {lo:?} at {r}: {rate}", cp.kind);
                }
            }
        }
    }

    #[test]
    fn yosida_envelope_converges_to_indicator() {
        for eps in [1e-1, 1e-2, 1e-3] {
            let p = PotentialSpec::obstacle_penalized(eps).unwrap();
            for r in [-1.0, -0.5, 0.0, 0.9, 1.0] {
                assert_eq!(p.eval(Order::Hat, r).unwrap(), 0.0);
            }
            let ratio = p.eval(Order::Hat, 1.5).unwrap() / (0.25 / (2.0 * eps));
            assert!((ratio - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_monotone_on_many_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for pot in all_potentials() {
            let (lo, hi) = if pot.is_singular() { (-0.999, 0.999) } else { (-5.0, 5.0) };
            for _ in 0..10_000 {
                let a: f64 = rng.gen_range(lo..hi);
                let b: f64 = rng.gen_range(lo..hi);
                let (r, s) = if a < b { (a, b) } else { (b, a) };
                assert!(pot.gamma(r).unwrap() <= pot.gamma(s).unwrap());
            }
            assert_eq!(pot.eval(Order::Hat, 0.0).unwrap(), 0.0);
            assert_eq!(pot.gamma(0.0).unwrap(), 0.0);
        }
    }

    proptest! {
        #[test]
        fn potential_nonnegative_and_convex(r in -0.999f64..0.999, scale in 0.1f64..3.0) {
            for pot in all_potentials() {
                let x = if pot.is_singular() { r } else { r * scale };
                prop_assert!(pot.eval(Order::Hat, x).unwrap() >= 0.0);
                prop_assert!(pot.eval(Order::D1, x).unwrap() >= 0.0);
            }
        }

        #[test]
        fn coupling_lipschitz(a in -4.0f64..4.0, b in -4.0f64..4.0, c in -3.0f64..3.0) {
            let cp = CouplingSpec::bounded_smooth(c);
            let lip = cp.lipschitz_constant();
            prop_assert!((cp.pi(a) - cp.pi(b)).abs() <= lip * (a - b).abs() + 1e-12);
            prop_assert!(cp.pi_prime(a).abs() <= lip + 1e-15);
        }
    }
}
