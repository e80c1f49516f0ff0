//! Lagrange shape functions on the reference triangle `{(s, t) : s, t >= 0, s + t <= 1}`.
//!
//! Nodes are identified by barycentric multi-indices `(a0, a1, a2)` with
//! `a0 + a1 + a2 = degree`, where `lambda0 = 1 - s - t`, `lambda1 = s`,
//! `lambda2 = t`. Local ordering: the three vertices, then the edge nodes of
//! [`LOCAL_EDGES`] walked from the lower to the higher local vertex, then the
//! interior nodes in lexicographic order of their multi-index.

/// Local edges as pairs of local vertex indices, lower index first.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [0, 2]];

pub const MAX_DEGREE: usize = 3;

const BARY_GRAD: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    degree: usize,
    nodes: Vec<[usize; 3]>,
}

/// Shape function values and reference gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisValues {
    pub values: Vec<f64>,
    pub ref_gradients: Vec<[f64; 2]>,
}

/// Values, gradients and Hessians (`[d_ss, d_st, d_tt]`) at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisJet {
    pub values: Vec<f64>,
    pub ref_gradients: Vec<[f64; 2]>,
    pub ref_hessians: Vec<[f64; 3]>,
}

pub fn node_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

impl LagrangeBasis {
    /// # Panics
    /// If `degree` is outside `1..=3`.
    pub fn new(degree: usize) -> Self {
        assert!(
            (1..=MAX_DEGREE).contains(&degree),
            "Lagrange degree {degree} not supported"
        );
        let d = degree;
        let mut nodes = vec![[d, 0, 0], [0, d, 0], [0, 0, d]];
        for [a, b] in LOCAL_EDGES {
            for j in 1..d {
                let mut idx = [0; 3];
                idx[a] = d - j;
                idx[b] = j;
                nodes.push(idx);
            }
        }
        let mut interior: Vec<[usize; 3]> = Vec::new();
        for a0 in 1..d {
            for a1 in 1..d {
                if a0 + a1 < d {
                    interior.push([a0, a1, d - a0 - a1]);
                }
            }
        }
        interior.sort();
        nodes.extend(interior);
        debug_assert_eq!(nodes.len(), node_count(d));
        Self { degree, nodes }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        self.nodes[i]
    }

    /// Number of nodes strictly inside each edge.
    pub fn nodes_per_edge(&self) -> usize {
        self.degree - 1
    }

    pub fn interior_nodes(&self) -> usize {
        (self.degree - 1) * self.degree.saturating_sub(2) / 2
    }

    /// Reference coordinates `(s, t)` of node `i`.
    pub fn node_point(&self, i: usize) -> [f64; 2] {
        let [_, a1, a2] = self.nodes[i];
        let d = self.degree as f64;
        [a1 as f64 / d, a2 as f64 / d]
    }

    /// Barycentric weights of node `i`.
    pub fn node_barycentric(&self, i: usize) -> [f64; 3] {
        let d = self.degree as f64;
        let [a0, a1, a2] = self.nodes[i];
        [a0 as f64 / d, a1 as f64 / d, a2 as f64 / d]
    }

    pub fn eval(&self, xi: [f64; 2]) -> BasisValues {
        let jet = self.eval_jet(xi);
        BasisValues {
            values: jet.values,
            ref_gradients: jet.ref_gradients,
        }
    }

    /// Silvester's product form: each shape function is a product of linear
    /// factors `(d lambda_c - m) / (m + 1)`, so derivatives follow from the
    /// product rule.
    pub fn eval_jet(&self, xi: [f64; 2]) -> BasisJet {
        let d = self.degree as f64;
        let lambda = [1.0 - xi[0] - xi[1], xi[0], xi[1]];
        let n = self.len();
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        let mut hessians = Vec::with_capacity(n);
        for idx in &self.nodes {
            let mut v = 1.0;
            let mut g = [0.0; 2];
            let mut h = [0.0; 3];
            for c in 0..3 {
                for m in 0..idx[c] {
                    let denom = (m + 1) as f64;
                    let f = (d * lambda[c] - m as f64) / denom;
                    let gf = [d * BARY_GRAD[c][0] / denom, d * BARY_GRAD[c][1] / denom];
                    h = [
                        h[0] * f + 2.0 * g[0] * gf[0],
                        h[1] * f + g[0] * gf[1] + g[1] * gf[0],
                        h[2] * f + 2.0 * g[1] * gf[1],
                    ];
                    g = [g[0] * f + v * gf[0], g[1] * f + v * gf[1]];
                    v *= f;
                }
            }
            values.push(v);
            grads.push(g);
            hessians.push(h);
        }
        BasisJet {
            values,
            ref_gradients: grads,
            ref_hessians: hessians,
        }
    }
}

/// Shape functions of the given degree at a reference point.
pub fn eval_basis(degree: usize, ref_pt: [f64; 2]) -> BasisValues {
    LagrangeBasis::new(degree).eval(ref_pt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_values_at_centroid() {
        let b = eval_basis(1, [1.0 / 3.0, 1.0 / 3.0]);
        for v in b.values {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn node_layout() {
        let b = LagrangeBasis::new(3);
        assert_eq!(b.len(), 10);
        assert_eq!(b.multi_index(3), [2, 1, 0]);
        assert_eq!(b.multi_index(4), [1, 2, 0]);
        assert_eq!(b.multi_index(5), [0, 2, 1]);
        assert_eq!(b.multi_index(7), [2, 0, 1]);
        assert_eq!(b.multi_index(9), [1, 1, 1]);
        assert_eq!(LagrangeBasis::new(2).node_point(5), [0.0, 0.5]);
    }

    #[test]
    fn lagrange_property() {
        for degree in 1..=3 {
            let b = LagrangeBasis::new(degree);
            for i in 0..b.len() {
                let vals = b.eval(b.node_point(i)).values;
                for (j, v) in vals.iter().enumerate() {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expected).abs() < 1e-14, "deg {degree} node {i} fn {j}: {v}");
                }
            }
        }
    }

    #[test]
    fn quadratic_reproduces_product_monomial() {
        let b = LagrangeBasis::new(2);
        let f = |p: [f64; 2]| p[0] * p[1];
        let nodal: Vec<f64> = (0..b.len()).map(|i| f(b.node_point(i))).collect();
        let mut state = 12345u64;
        for _ in 0..50 {
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let (mut s, mut t) = (next(), next());
            if s + t > 1.0 {
                s = 1.0 - s;
                t = 1.0 - t;
            }
            let vals = b.eval([s, t]).values;
            let interp: f64 = vals.iter().zip(&nodal).map(|(v, c)| v * c).sum();
            assert!((interp - f([s, t])).abs() <= 1e-14);
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        let b = LagrangeBasis::new(3);
        let p = [0.21, 0.37];
        let h = 1e-5;
        let jet = b.eval_jet(p);
        let gp = b.eval([p[0] + h, p[1]]).ref_gradients;
        let gm = b.eval([p[0] - h, p[1]]).ref_gradients;
        let tp = b.eval([p[0], p[1] + h]).ref_gradients;
        let tm = b.eval([p[0], p[1] - h]).ref_gradients;
        for i in 0..b.len() {
            let dss = (gp[i][0] - gm[i][0]) / (2.0 * h);
            let dst = (gp[i][1] - gm[i][1]) / (2.0 * h);
            let dtt = (tp[i][1] - tm[i][1]) / (2.0 * h);
            assert!((dss - jet.ref_hessians[i][0]).abs() < 1e-6);
            assert!((dst - jet.ref_hessians[i][1]).abs() < 1e-6);
            assert!((dtt - jet.ref_hessians[i][2]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(s in 0.0f64..1.0, t in 0.0f64..1.0, degree in 1usize..=3) {
            let (s, t) = if s + t > 1.0 { (1.0 - s, 1.0 - t) } else { (s, t) };
            let b = eval_basis(degree, [s, t]);
            let sum: f64 = b.values.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-13);
            let gs: f64 = b.ref_gradients.iter().map(|g| g[0]).sum();
            let gt: f64 = b.ref_gradients.iter().map(|g| g[1]).sum();
            prop_assert!(gs.abs() < 1e-12 && gt.abs() < 1e-12);
        }
    }
}
