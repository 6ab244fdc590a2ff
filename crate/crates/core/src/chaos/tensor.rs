use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{gauss_rule, hermite_values, ChaosBasis, RuleKind};
use crate::{Error, Result};

/// Magnitudes below this are structural zeros and are not stored.
const STORAGE_THRESHOLD: f64 = 1e-12;

/// Sparse symmetric tensor of multi-way Hermite moments `<H_i ⋯ H_p>`.
///
/// Only canonical (ascending) index tuples are stored; lookups sort first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTensor {
    arity: usize,
    basis_size: usize,
    /// Flattened canonical tuples, `arity` entries per stored value.
    indices: Vec<u32>,
    values: Vec<f64>,
}

/// Memoised one-dimensional moments `E[He_{d1}(ξ) ⋯ He_{dk}(ξ)]`.
struct OneDimMoments {
    memo: HashMap<Vec<usize>, f64>,
}

impl OneDimMoments {
    fn new() -> Self {
        Self {
            memo: HashMap::new(),
        }
    }

    /// `degrees` must be sorted with zeros removed.
    fn get(&mut self, degrees: &[usize]) -> f64 {
        let total: usize = degrees.iter().sum();
        if total % 2 == 1 {
            return 0.0;
        }
        if degrees.is_empty() {
            return 1.0;
        }
        if let Some(&v) = self.memo.get(degrees) {
            return v;
        }
        // Integrand has degree `total`: ceil((total + 1) / 2) nodes are exact,
        // one extra for margin.
        let n_nodes = (total + 2) / 2 + 1;
        let rule = gauss_rule(RuleKind::Hermite, n_nodes).expect("n_nodes >= 1");
        let max_deg = *degrees.iter().max().unwrap();
        let raw: f64 = rule
            .iter()
            .map(|(x, w)| {
                let h = hermite_values(x, max_deg);
                w * degrees.iter().map(|&d| h[d]).product::<f64>()
            })
            .sum();
        // One-dimensional Hermite moments are integers.
        let v = raw.round();
        self.memo.insert(degrees.to_vec(), v);
        v
    }
}

fn for_each_canonical(basis_size: usize, arity: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(
        start: usize,
        basis_size: usize,
        arity: usize,
        buf: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if buf.len() == arity {
            f(buf);
            return;
        }
        for i in start..basis_size {
            buf.push(i);
            rec(i, basis_size, arity, buf, f);
            buf.pop();
        }
    }
    rec(0, basis_size, arity, &mut Vec::with_capacity(arity), f);
}

/// Lexicographic next permutation; returns false once the last is reached.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Build the `arity`-way moment tensor of a basis by per-dimension quadrature.
pub fn moment_tensor(basis: &ChaosBasis, arity: usize) -> Result<MomentTensor> {
    if !(2..=6).contains(&arity) {
        return Err(Error::invalid(format!(
            "moment tensor arity must be in 2..=6, got {arity}"
        )));
    }
    let dim = basis.germ_dim();
    let mut one_dim = OneDimMoments::new();
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut degs: Vec<usize> = Vec::with_capacity(arity);
    for_each_canonical(basis.len(), arity, &mut |tuple| {
        // Parity prune before any quadrature lookups.
        for d in 0..dim {
            let s: usize = tuple.iter().map(|&t| basis.term(t).0[d]).sum();
            if s % 2 == 1 {
                return;
            }
        }
        let mut value = 1.0;
        for d in 0..dim {
            degs.clear();
            degs.extend(tuple.iter().map(|&t| basis.term(t).0[d]).filter(|&x| x > 0));
            degs.sort_unstable();
            value *= one_dim.get(&degs);
            if value == 0.0 {
                return;
            }
        }
        if value.abs() >= STORAGE_THRESHOLD {
            indices.extend(tuple.iter().map(|&t| t as u32));
            values.push(value);
        }
    });
    Ok(MomentTensor {
        arity,
        basis_size: basis.len(),
        indices,
        values,
    })
}

impl MomentTensor {
    pub(crate) fn from_parts(
        arity: usize,
        basis_size: usize,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Self {
        Self {
            arity,
            basis_size,
            indices,
            values,
        }
    }

    pub(crate) fn parts(&self) -> (&[u32], &[f64]) {
        (&self.indices, &self.values)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size
    }

    /// Number of stored (canonical, nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.indices
            .chunks_exact(self.arity)
            .zip(self.values.iter().copied())
    }

    /// Entry for an arbitrary (unsorted) index tuple.
    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.arity, "index arity mismatch");
        let mut key: Vec<u32> = index.iter().map(|&i| i as u32).collect();
        key.sort_unstable();
        let n = self.values.len();
        let (mut lo, mut hi) = (0usize, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            let probe = &self.indices[mid * self.arity..(mid + 1) * self.arity];
            match probe.cmp(key.as_slice()) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return self.values[mid],
            }
        }
        0.0
    }

    /// Exact Galerkin projection of a product of `arity - 1` expansions:
    /// `out_p = Σ Π_m f_m[i_m] <H_{i_1} ⋯ H_{i_k} H_p> / <H_p^2>`.
    pub fn contract(&self, factors: &[&[f64]], norms: &[f64]) -> Result<Vec<f64>> {
        if factors.len() + 1 != self.arity {
            return Err(Error::invalid(format!(
                "arity-{} tensor contracts {} factors, got {}",
                self.arity,
                self.arity - 1,
                factors.len()
            )));
        }
        for f in factors {
            if f.len() != self.basis_size {
                return Err(Error::DimensionMismatch {
                    expected: self.basis_size,
                    got: f.len(),
                });
            }
        }
        let k = factors.len();
        let mut out = vec![0.0; self.basis_size];
        let mut perm = vec![0usize; self.arity];
        for (tuple, value) in self.entries() {
            for (slot, &t) in perm.iter_mut().zip(tuple) {
                *slot = t as usize;
            }
            loop {
                let mut prod = value;
                for m in 0..k {
                    prod *= factors[m][perm[m]];
                }
                out[perm[k]] += prod;
                if !next_permutation(&mut perm) {
                    break;
                }
            }
        }
        for (o, n) in out.iter_mut().zip(norms) {
            *o /= n;
        }
        Ok(out)
    }
}

/// Pairwise Galerkin product `(a ∘ b)_k = Σ a_i b_j <H_i H_j H_k> / <H_k^2>`,
/// stored as a flat list over every ordered nonzero triple.
#[derive(Debug, Clone)]
pub struct GalerkinProduct {
    size: usize,
    triples: Vec<(u32, u32, u32, f64)>,
    /// Entries `(pair_i[e], pair_j[e], pair_c[e])` with `i ≤ j` for output `k`
    /// occupy `e ∈ row_start[k]..row_start[k + 1]`; diagonal weights are halved
    /// so that every entry contributes `c (a_i b_j + a_j b_i)`. Every index is
    /// below `size`.
    pair_i: Vec<u32>,
    pair_j: Vec<u32>,
    pair_c: Vec<f64>,
    row_start: Vec<usize>,
    norms: Vec<f64>,
}

impl GalerkinProduct {
    pub fn new(basis: &ChaosBasis) -> Result<Self> {
        let tensor = moment_tensor(basis, 3)?;
        Ok(Self::from_tensor(&tensor, basis.norms()))
    }

    pub fn from_tensor(tensor: &MomentTensor, norms: &[f64]) -> Self {
        assert_eq!(tensor.arity(), 3);
        let mut triples = Vec::new();
        let mut perm = [0usize; 3];
        for (tuple, value) in tensor.entries() {
            for (slot, &t) in perm.iter_mut().zip(tuple) {
                *slot = t as usize;
            }
            loop {
                triples.push((
                    perm[0] as u32,
                    perm[1] as u32,
                    perm[2] as u32,
                    value / norms[perm[2]],
                ));
                if !next_permutation(&mut perm) {
                    break;
                }
            }
        }
        // Group by output index for cache-friendly accumulation.
        triples.sort_by_key(|t| (t.2, t.0, t.1));
        let size = tensor.basis_size();
        let mut row_start = vec![0usize; size + 1];
        let (mut pair_i, mut pair_j, mut pair_c) = (Vec::new(), Vec::new(), Vec::new());
        for &(i, j, k, c) in &triples {
            assert!(
                (i.max(j).max(k) as usize) < size,
                "moment tensor index out of range"
            );
            if i <= j {
                row_start[k as usize + 1] += 1;
                pair_i.push(i);
                pair_j.push(j);
                pair_c.push(if i == j { 0.5 * c } else { c });
            }
        }
        for k in 0..size {
            row_start[k + 1] += row_start[k];
        }
        Self {
            size,
            triples,
            pair_i,
            pair_j,
            pair_c,
            row_start,
            norms: norms.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn triples(&self) -> &[(u32, u32, u32, f64)] {
        &self.triples
    }

    pub fn multiply_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let n = self.size;
        assert!(
            a.len() >= n && b.len() >= n && out.len() >= n,
            "operand shorter than the basis"
        );
        let (pi, pj, pc) = (&self.pair_i, &self.pair_j, &self.pair_c);
        for (k, o) in out[..n].iter_mut().enumerate() {
            let (lo, hi) = (self.row_start[k], self.row_start[k + 1]);
            // SAFETY: `lo..hi` lies inside the entry arrays and every stored index
            // is below `size` (checked in `from_tensor`), which bounds a, b above.
            let term = |e: usize| unsafe {
                let (i, j) = (*pi.get_unchecked(e) as usize, *pj.get_unchecked(e) as usize);
                pc.get_unchecked(e)
                    * (a.get_unchecked(i) * b.get_unchecked(j)
                        + a.get_unchecked(j) * b.get_unchecked(i))
            };
            // Two accumulators break the floating-point add chain.
            let (mut s0, mut s1) = (0.0, 0.0);
            let mut e = lo;
            while e + 1 < hi {
                s0 += term(e);
                s1 += term(e + 1);
                e += 2;
            }
            if e < hi {
                s0 += term(e);
            }
            *o = s0 + s1;
        }
    }

    pub fn multiply(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        self.multiply_into(a, b, &mut out);
        out
    }

    /// Symmetric matrix `M_kp = Σ_i q_i <H_i H_p H_k>`, row-major.
    pub fn multiplication_matrix_into(&self, q: &[f64], m: &mut [f64]) {
        let n = self.size;
        m.iter_mut().for_each(|v| *v = 0.0);
        for &(i, p, k, c) in &self.triples {
            let (p, k) = (p as usize, k as usize);
            m[k * n + p] += c * self.norms[k] * q[i as usize];
        }
    }
}
