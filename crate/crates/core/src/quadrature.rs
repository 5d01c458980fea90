//! Gauss-Legendre rules on finite intervals.

use std::f64::consts::PI;

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1],
/// by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature rule with nodes sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Self {
        let (x, w) = gauss_legendre_unit(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Self {
            nodes: x.iter().map(|&t| mid + half * t).collect(),
            weights: w.iter().map(|&v| v * half).collect(),
        }
    }

    /// Composite rule: the interval is split at every breakpoint strictly
    /// inside (a, b) and `n` nodes are shared between pieces in proportion to
    /// their length. Used to keep spectral accuracy across a kink.
    pub fn composite(n: usize, a: f64, b: f64, breakpoints: &[f64]) -> Self {
        let mut cuts: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&c| c > a && c < b)
            .collect();
        cuts.sort_by(|x, y| x.total_cmp(y));
        if cuts.is_empty() {
            return Self::gauss_legendre(n, a, b);
        }
        let mut edges = vec![a];
        edges.extend(cuts);
        edges.push(b);
        let pieces = edges.len() - 1;
        let total = b - a;
        let mut counts: Vec<usize> = edges
            .windows(2)
            .map(|e| (((e[1] - e[0]) / total) * n as f64).round().max(2.0) as usize)
            .collect();
        // keep the total at n where possible
        let sum: usize = counts.iter().sum();
        if sum > n && pieces > 0 {
            let largest = (0..pieces).max_by_key(|&i| counts[i]).unwrap();
            counts[largest] = counts[largest].saturating_sub(sum - n).max(2);
        } else if sum < n {
            let largest = (0..pieces).max_by_key(|&i| counts[i]).unwrap();
            counts[largest] += n - sum;
        }
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (e, &c) in edges.windows(2).zip(&counts) {
            let r = Self::gauss_legendre(c, e[0], e[1]);
            nodes.extend(r.nodes);
            weights.extend(r.weights);
        }
        Self { nodes, weights }
    }

    /// Composite rule where every piece gets at least `min_per_piece` nodes
    /// and otherwise a share of `n` proportional to its length. The node
    /// count may exceed `n`.
    pub fn panels(n: usize, a: f64, b: f64, breakpoints: &[f64], min_per_piece: usize) -> Self {
        let mut edges: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&c| c > a && c < b)
            .collect();
        edges.push(a);
        edges.push(b);
        edges.sort_by(|x, y| x.total_cmp(y));
        edges.dedup();
        let total = b - a;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for e in edges.windows(2) {
            let c = (((e[1] - e[0]) / total) * n as f64).ceil() as usize;
            let r = Self::gauss_legendre(c.max(min_per_piece).max(2), e[0], e[1]);
            nodes.extend(r.nodes);
            weights.extend(r.weights);
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 5, 25, 200] {
            let r = QuadratureRule::gauss_legendre(n, -1.5, 1.5);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 3.0).abs() < 1e-12, "n={n} sum={s}");
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.nodes.iter().all(|&x| x > -1.5 && x < 1.5));
        }
    }

    #[test]
    fn exact_for_polynomials() {
        // n nodes integrate degree 2n-1 exactly
        let r = QuadratureRule::gauss_legendre(5, 0.0, 2.0);
        let v = r.integrate(|x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn panels_resolve_a_narrow_spike() {
        let w = 1e-4;
        let f = |z: f64| (-(z - 0.3) * (z - 0.3) / (2.0 * w * w)).exp();
        let exact = w * (2.0 * std::f64::consts::PI).sqrt();
        let r = QuadratureRule::panels(200, -1.0, 1.0, &[0.3 - 6.0 * w, 0.3 + 6.0 * w], 24);
        assert!((r.integrate(f) / exact - 1.0).abs() < 1e-8);
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn composite_handles_kink() {
        let r = QuadratureRule::composite(200, -1.5, 1.5, &[0.0]);
        assert_eq!(r.len(), 200);
        let v = r.integrate(|x| x.max(0.0).exp());
        let exact = 1.5 + (1.5f64.exp() - 1.0);
        assert!((v - exact).abs() < 1e-13, "{}", v - exact);
    }
}
