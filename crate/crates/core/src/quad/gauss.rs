//! Gauss rules computed by Newton iteration on the three-term recurrences.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use statrs::function::gamma::ln_gamma;

/// Nodes and weights of an interpolatory rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

const NEWTON_TOL: f64 = 1e-15;
const MAX_NEWTON: usize = 100;
const CACHE_LIMIT: usize = 512;

/// Gauss-Legendre rule on [-1, 1], nodes ascending, exactly symmetric.
pub fn legendre_rule(n: usize) -> Rule {
    assert!(n > 0, "Gauss-Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..MAX_NEWTON {
            let (p1, p2) = legendre_pair(n, z);
            let pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= NEWTON_TOL {
                break;
            }
        }
        let (p1, p2) = legendre_pair(n, z);
        let pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
    }
    (p1, p2)
}

/// Gauss-Jacobi rule on [-1, 1] for the weight (1-x)^alpha (1+x)^beta.
///
/// Nodes are returned ascending.
pub fn jacobi_rule(n: usize, alpha: f64, beta: f64) -> Rule {
    assert!(n > 0, "Gauss-Jacobi needs at least one node");
    assert!(alpha > -1.0 && beta > -1.0, "Jacobi exponents must exceed -1");
    let ab = alpha + beta;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for (k, d) in diag.iter_mut().enumerate() {
        let kf = k as f64;
        *d = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
    }
    for (i, o) in off.iter_mut().enumerate() {
        let k = (i + 1) as f64;
        let s = 2.0 * k + ab;
        let b2 = if i == 0 {
            4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab))
        } else {
            4.0 * k * (k + alpha) * (k + beta) * (k + ab) / (s * s * (s + 1.0) * (s - 1.0))
        };
        *o = b2.sqrt();
    }
    let mut x = tridiagonal_eigenvalues(&diag, &off);
    let mut w = vec![0.0; n];
    for (xi, wi) in x.iter_mut().zip(w.iter_mut()) {
        let mut z = *xi;
        for _ in 0..MAX_NEWTON {
            let (p1, _, pp) = jacobi_eval(n, alpha, beta, z);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= NEWTON_TOL * (1.0 + z1).min(1.0 - z1) {
                break;
            }
        }
        let (_, p2, pp) = jacobi_eval(n, alpha, beta, z);
        *xi = z;
        *wi = 1.0 / (pp * p2);
    }
    // fix the common factor from the zeroth moment rather than log-gamma sums
    let mu0 = (ab + 1.0).exp2() * (ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0) - ln_gamma(ab + 2.0)).exp();
    let total: f64 = w.iter().sum();
    for wi in w.iter_mut() {
        *wi *= mu0 / total;
    }
    Rule { nodes: x, weights: w }
}

fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    });
    let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Returns (P_n(z), P_{n-1}(z), P_n'(z)).
fn jacobi_eval(n: usize, alpha: f64, beta: f64, z: f64) -> (f64, f64, f64) {
    let ab = alpha + beta;
    let mut temp = 2.0 + ab;
    let mut p1 = (alpha - beta + temp * z) / 2.0;
    let mut p2 = 1.0;
    for j in 2..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        temp = 2.0 * jf + ab;
        let a = 2.0 * jf * (jf + ab) * (temp - 2.0);
        let b = (temp - 1.0) * (alpha * alpha - beta * beta + temp * (temp - 2.0) * z);
        let c = 2.0 * (jf - 1.0 + alpha) * (jf - 1.0 + beta) * temp;
        p1 = (b * p2 - c * p3) / a;
    }
    let nf = n as f64;
    let pp = (nf * (alpha - beta - temp * z) * p1 + 2.0 * (nf + alpha) * (nf + beta) * p2)
        / (temp * (1.0 - z * z));
    (p1, p2, pp)
}

/// Gauss-Hermite rule for the weight exp(-x^2), nodes ascending, exactly symmetric.
pub fn hermite_rule(n: usize) -> Rule {
    assert!(n > 0, "Gauss-Hermite needs at least one node");
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let mut x = tridiagonal_eigenvalues(&vec![0.0; n], &off);
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // polish the non-negative half, then mirror
        let mut z = x[n - 1 - i].abs();
        let mut pp = 1.0;
        for _ in 0..MAX_NEWTON {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[n - 1 - i] = z;
        x[i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Rule { nodes: x, weights: w }
}

thread_local! {
    static LEGENDRE: RefCell<HashMap<usize, Rc<Rule>>> = RefCell::new(HashMap::new());
    static NORMAL: RefCell<HashMap<usize, Rc<Rule>>> = RefCell::new(HashMap::new());
    static JACOBI: RefCell<HashMap<(usize, u64, u64), Rc<Rule>>> = RefCell::new(HashMap::new());
}

pub(crate) fn legendre(n: usize) -> Rc<Rule> {
    LEGENDRE.with(|c| {
        c.borrow_mut()
            .entry(n)
            .or_insert_with(|| Rc::new(legendre_rule(n)))
            .clone()
    })
}

/// Gauss-Hermite rule for the standard normal density, cached per thread.
pub(crate) fn normal(n: usize) -> Rc<Rule> {
    NORMAL.with(|c| {
        c.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let r = hermite_rule(n);
                let scale = std::f64::consts::PI.sqrt();
                Rc::new(Rule {
                    nodes: r.nodes.iter().map(|x| std::f64::consts::SQRT_2 * x).collect(),
                    weights: r.weights.iter().map(|w| w / scale).collect(),
                })
            })
            .clone()
    })
}

/// Jacobi rule mapped to [0, 1] for the weight v^gamma, cached per thread.
///
/// Weights sum to 1/(gamma+1).
pub(crate) fn jacobi01(n: usize, gamma: f64) -> Rc<Rule> {
    let key = (n, gamma.to_bits(), 0);
    JACOBI.with(|c| {
        let mut cache = c.borrow_mut();
        if let Some(r) = cache.get(&key) {
            return r.clone();
        }
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        let raw = jacobi_rule(n, 0.0, gamma);
        let scale = 2f64.powf(-(gamma + 1.0));
        let rule = Rc::new(Rule {
            nodes: raw.nodes.iter().map(|x| 0.5 * (1.0 + x)).collect(),
            weights: raw.weights.iter().map(|w| w * scale).collect(),
        });
        cache.insert(key, rule.clone());
        rule
    })
}
