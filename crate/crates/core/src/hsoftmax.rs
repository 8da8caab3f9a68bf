//! Hierarchical softmax output layer.
//!
//! Every parent node `p` of the taxonomy owns a weight matrix `W_p` with one
//! row per child. The last column of each row is the bias, so the logit of
//! child `j` is `W_p[j] · [h; 1]`. The conditional `P(j | p)` is a softmax
//! over those logits, and the probability of a leaf is the product of the
//! conditionals on its root-to-leaf path.
//!
//! For a target leaf with path set `Q` (the parents on its path) and correct
//! child `m_q` at each `q ∈ Q`, the cross-entropy loss is
//! `E = -Σ_{q∈Q} log P(m_q | q)` and its gradients are
//!
//! ```text
//! dE/dW_p[j] = 1{p ∈ Q} · (P(j|p) - δ(j, m_p)) · [h; 1]
//! dE/dh      = Σ_{q∈Q} Σ_j (P(j|q) - δ(j, m_q)) · W_q[j][..h_dim]
//! ```
//!
//! Parents off the path receive no gradient at all, while the hidden state
//! collects a contribution from every parent on the path.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{axpy, Matrix};
use crate::taxonomy::{NodeId, TaxonomyTree};

/// Conditional probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Below this magnitude the gradient check compares absolute errors.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum HsError {
    #[error("node {0} is not a parent node")]
    NotAParent(NodeId),
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("hidden state has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameters are not bound to this taxonomy")]
    UnboundTree,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// One weight matrix per parent node, `J_p × (input_dim + 1)`, bias last.
#[derive(Clone, Debug, PartialEq)]
pub struct HierSoftmaxParams {
    input_dim: usize,
    parents: Vec<NodeId>,
    slot: Vec<Option<usize>>,
    weights: Vec<Matrix>,
}

impl HierSoftmaxParams {
    pub fn zeros(tree: &TaxonomyTree, input_dim: usize) -> Self {
        let weights = tree
            .parents()
            .iter()
            .map(|&p| Matrix::zeros(tree.fan_out(p), input_dim + 1))
            .collect();
        Self::from_matrices(tree, input_dim, weights).expect("zero matrices match the tree")
    }

    /// Uniform `[-a, a]` weights with `a = sqrt(6 / (input_dim + J_p))`, zero biases.
    pub fn init_uniform<R: Rng + ?Sized>(tree: &TaxonomyTree, input_dim: usize, rng: &mut R) -> Self {
        let mut params = Self::zeros(tree, input_dim);
        for m in &mut params.weights {
            let bound = (6.0 / (input_dim + m.rows()) as f64).sqrt();
            for r in 0..m.rows() {
                for c in 0..input_dim {
                    m.set(r, c, rng.gen_range(-bound..=bound));
                }
            }
        }
        params
    }

    /// Wraps explicit matrices, one per parent of `tree` in parent order.
    pub fn from_matrices(tree: &TaxonomyTree, input_dim: usize, weights: Vec<Matrix>) -> Result<Self, HsError> {
        if weights.len() != tree.num_parents() {
            return Err(HsError::UnboundTree);
        }
        for (&p, m) in tree.parents().iter().zip(&weights) {
            if m.shape() != (tree.fan_out(p), input_dim + 1) {
                return Err(HsError::UnboundTree);
            }
        }
        let mut slot = vec![None; tree.num_nodes()];
        for (k, &p) in tree.parents().iter().enumerate() {
            slot[p.index()] = Some(k);
        }
        Ok(Self {
            input_dim,
            parents: tree.parents().to_vec(),
            slot,
            weights,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn parent_nodes(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn weights(&self, p: NodeId) -> Option<&Matrix> {
        self.slot_of(p).map(|k| &self.weights[k])
    }

    pub fn weights_mut(&mut self, p: NodeId) -> Option<&mut Matrix> {
        self.slot_of(p).map(move |k| &mut self.weights[k])
    }

    /// Matrices in parent order (ascending node id).
    pub fn matrices(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn matrices_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn is_bound_to(&self, tree: &TaxonomyTree) -> bool {
        self.parents == tree.parents()
            && self.slot.len() == tree.num_nodes()
            && self
                .parents
                .iter()
                .zip(&self.weights)
                .all(|(&p, m)| m.rows() == tree.fan_out(p))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }

    pub fn num_parameters(&self) -> usize {
        num_parameters(self)
    }

    fn slot_of(&self, p: NodeId) -> Option<usize> {
        self.slot.get(p.index()).copied().flatten()
    }

    fn check_dim(&self, h: &[f64]) -> Result<(), HsError> {
        if h.len() != self.input_dim {
            return Err(HsError::DimensionMismatch {
                expected: self.input_dim,
                found: h.len(),
            });
        }
        Ok(())
    }

    fn logits(&self, slot: usize, h: &[f64]) -> Vec<f64> {
        let w = &self.weights[slot];
        let d = self.input_dim;
        (0..w.rows())
            .map(|j| {
                let row = w.row(j);
                crate::matrix::dot(&row[..d], h) + row[d]
            })
            .collect()
    }
}

/// Gradients of one example's loss. Only parents on the target's path appear
/// in `d_weights`; every other parent's gradient is identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGradients {
    pub d_weights: BTreeMap<NodeId, Matrix>,
    pub d_hidden: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn log_softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    let floor = PROB_FLOOR.ln();
    for v in z.iter_mut() {
        *v = (*v - lse).max(floor);
    }
}

/// `P(· | p)` over the children of `p`, in child order.
pub fn conditional_probs(params: &HierSoftmaxParams, p: NodeId, h: &[f64]) -> Result<Vec<f64>, HsError> {
    let slot = params.slot_of(p).ok_or(HsError::NotAParent(p))?;
    params.check_dim(h)?;
    let mut z = params.logits(slot, h);
    softmax_in_place(&mut z);
    Ok(z)
}

fn check_bound(params: &HierSoftmaxParams, tree: &TaxonomyTree, h: &[f64]) -> Result<(), HsError> {
    if !params.is_bound_to(tree) {
        return Err(HsError::UnboundTree);
    }
    params.check_dim(h)
}

/// `log P(leaf)` for every leaf, in leaf order.
pub fn leaf_log_probs(params: &HierSoftmaxParams, tree: &TaxonomyTree, h: &[f64]) -> Result<Vec<f64>, HsError> {
    check_bound(params, tree, h)?;
    // Parents are visited top-down so each node's cumulative log-probability
    // is ready before its children need it.
    let mut cum = vec![0.0; tree.num_nodes()];
    let mut stack = vec![tree.root()];
    while let Some(p) = stack.pop() {
        let slot = params.slot_of(p).expect("bound parent");
        let mut lp = params.logits(slot, h);
        log_softmax_in_place(&mut lp);
        for (&c, l) in tree.children(p).iter().zip(lp) {
            cum[c.index()] = cum[p.index()] + l;
            if tree.fan_out(c) > 0 {
                stack.push(c);
            }
        }
    }
    Ok(tree.leaves().iter().map(|l| cum[l.index()]).collect())
}

fn target_path(tree: &TaxonomyTree, target: NodeId) -> Result<Vec<(NodeId, NodeId)>, HsError> {
    tree.path_from_root(target).map_err(|_| HsError::NotALeaf(target))
}

/// Cross-entropy loss `-Σ_{q∈Q} log P(m_q | q)` of the target leaf.
pub fn loss(params: &HierSoftmaxParams, tree: &TaxonomyTree, h: &[f64], target: NodeId) -> Result<f64, HsError> {
    check_bound(params, tree, h)?;
    let path = target_path(tree, target)?;
    let mut e = 0.0;
    for (q, m) in path {
        let mut lp = params.logits(params.slot_of(q).expect("bound parent"), h);
        log_softmax_in_place(&mut lp);
        e -= lp[tree.child_slot(m)];
    }
    Ok(e)
}

/// Loss and both gradients from a single pass over the path.
pub fn loss_and_gradients(
    params: &HierSoftmaxParams,
    tree: &TaxonomyTree,
    h: &[f64],
    target: NodeId,
) -> Result<(f64, PathGradients), HsError> {
    check_bound(params, tree, h)?;
    let path = target_path(tree, target)?;
    let d = params.input_dim;
    let mut h1 = Vec::with_capacity(d + 1);
    h1.extend_from_slice(h);
    h1.push(1.0);

    let mut e = 0.0;
    let mut d_weights = BTreeMap::new();
    let mut d_hidden = vec![0.0; d];
    for (q, m) in path {
        let slot = params.slot_of(q).expect("bound parent");
        let w = &params.weights[slot];
        let mut z = params.logits(slot, h);
        let mut lp = z.clone();
        log_softmax_in_place(&mut lp);
        softmax_in_place(&mut z);
        let correct = tree.child_slot(m);
        e -= lp[correct];

        // Softmax residual P(j|q) - δ(j, m_q).
        z[correct] -= 1.0;
        let mut g = Matrix::zeros(w.rows(), d + 1);
        g.add_outer(1.0, &z, &h1);
        for (j, &r) in z.iter().enumerate() {
            if r != 0.0 {
                axpy(r, &w.row(j)[..d], &mut d_hidden);
            }
        }
        d_weights.insert(q, g);
    }
    Ok((e, PathGradients { d_weights, d_hidden }))
}

pub fn gradients(
    params: &HierSoftmaxParams,
    tree: &TaxonomyTree,
    h: &[f64],
    target: NodeId,
) -> Result<PathGradients, HsError> {
    loss_and_gradients(params, tree, h, target).map(|(_, g)| g)
}

/// `dE/dW_p` for each parent `p` on the target's path.
pub fn grad_weights(
    params: &HierSoftmaxParams,
    tree: &TaxonomyTree,
    h: &[f64],
    target: NodeId,
) -> Result<BTreeMap<NodeId, Matrix>, HsError> {
    gradients(params, tree, h, target).map(|g| g.d_weights)
}

/// `dE/dh`, excluding the constant appended to `h`.
pub fn grad_hidden(params: &HierSoftmaxParams, tree: &TaxonomyTree, h: &[f64], target: NodeId) -> Result<Vec<f64>, HsError> {
    gradients(params, tree, h, target).map(|g| g.d_hidden)
}

/// Exact global argmax over leaf probabilities; ties go to the lowest leaf index.
pub fn predict(params: &HierSoftmaxParams, tree: &TaxonomyTree, h: &[f64]) -> Result<NodeId, HsError> {
    let lp = leaf_log_probs(params, tree, h)?;
    Ok(tree.leaves()[argmax(&lp)])
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `Σ_p J_p · (input_dim + 1)`.
pub fn num_parameters(params: &HierSoftmaxParams) -> usize {
    params.weights.iter().map(|m| m.rows() * m.cols()).sum()
}

/// Extra weights a hierarchical layer carries over a flat softmax on the same
/// leaves: `(P - 1) · (input_dim + 1)`.
pub fn hierarchy_overhead(tree: &TaxonomyTree, input_dim: usize) -> usize {
    (tree.num_parents() - 1) * (input_dim + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRef {
    Weight { parent: NodeId, row: usize, col: usize },
    Hidden(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: ParamRef,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub max_error: f64,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.failed)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// Relative error `|a - n| / max(|a|, |n|)`, or the absolute error when both
/// magnitudes are below [`GRADCHECK_ABS_FLOOR`].
pub fn gradcheck_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < GRADCHECK_ABS_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Finite-difference formula used as the numeric oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// `(f(x+s) - f(x-s)) / 2s`, error O(s²).
    #[default]
    Central2,
    /// `(-f(x+2s) + 8f(x+s) - 8f(x-s) + f(x-2s)) / 12s`, error O(s⁴).
    Central4,
}

/// Derivative of `f` at `x` by the given stencil.
pub fn central_difference<E>(stencil: Stencil, x: f64, step: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    match stencil {
        Stencil::Central2 => Ok((f(x + step)? - f(x - step)?) / (2.0 * step)),
        Stencil::Central4 => {
            let (p2, p1) = (f(x + 2.0 * step)?, f(x + step)?);
            let (m1, m2) = (f(x - step)?, f(x - 2.0 * step)?);
            Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * step))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub stencil: Stencil,
    /// Flip the sign of the analytic gradient, to confirm the checker
    /// detects wrong gradients.
    pub inject_fault: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
            stencil: Stencil::Central2,
            inject_fault: false,
        }
    }
}

/// Compares the analytic gradients against central differences of [`loss`]
/// for every weight entry (on and off the path) and every hidden component.
pub fn gradient_check(
    params: &HierSoftmaxParams,
    tree: &TaxonomyTree,
    h: &[f64],
    target: NodeId,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, HsError> {
    gradient_check_with(
        params,
        tree,
        h,
        target,
        &GradCheckOptions {
            step,
            tolerance,
            ..GradCheckOptions::default()
        },
    )
}

/// [`gradient_check`] with a choice of stencil and fault injection.
pub fn gradient_check_with(
    params: &HierSoftmaxParams,
    tree: &TaxonomyTree,
    h: &[f64],
    target: NodeId,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, HsError> {
    let step = opts.step;
    if !(step > 0.0) || !step.is_finite() {
        return Err(HsError::InvalidStep(step));
    }
    let mut grads = gradients(params, tree, h, target)?;
    if opts.inject_fault {
        grads.d_weights.values_mut().for_each(|m| m.as_mut_slice().iter_mut().for_each(|v| *v = -*v));
        grads.d_hidden.iter_mut().for_each(|v| *v = -*v);
    }

    let mut entries = Vec::new();
    let mut push = |param, analytic: f64, numeric: f64| {
        let error = gradcheck_error(analytic, numeric);
        entries.push(GradCheckEntry {
            param,
            analytic,
            numeric,
            error,
            failed: !(error <= opts.tolerance),
        });
    };

    let mut probe = params.clone();
    for (k, &p) in params.parents.iter().enumerate() {
        let (rows, cols) = params.weights[k].shape();
        for r in 0..rows {
            for c in 0..cols {
                let orig = params.weights[k].get(r, c);
                let numeric = central_difference(opts.stencil, orig, step, |x| {
                    probe.weights[k].set(r, c, x);
                    loss(&probe, tree, h, target)
                })?;
                probe.weights[k].set(r, c, orig);
                let analytic = grads.d_weights.get(&p).map_or(0.0, |g| g.get(r, c));
                push(ParamRef::Weight { parent: p, row: r, col: c }, analytic, numeric);
            }
        }
    }

    let mut hp = h.to_vec();
    for i in 0..h.len() {
        let numeric = central_difference(opts.stencil, h[i], step, |x| {
            hp[i] = x;
            loss(params, tree, &hp, target)
        })?;
        hp[i] = h[i];
        push(ParamRef::Hidden(i), grads.d_hidden[i], numeric);
    }

    let max_error = entries.iter().map(|e| e.error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        tolerance: opts.tolerance,
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> TaxonomyTree {
        TaxonomyTree::build_from_edges(&[("R", "A"), ("R", "B"), ("A", "A1"), ("A", "A2"), ("B", "B1"), ("B", "B2")])
            .unwrap()
    }

    #[test]
    fn uniform_under_zero_weights() {
        let t = TaxonomyTree::build_from_edges(&[("R", "a"), ("R", "b"), ("R", "c"), ("R", "d")]).unwrap();
        let p = HierSoftmaxParams::zeros(&t, 3);
        let probs = conditional_probs(&p, t.root(), &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(probs, vec![0.25; 4]);
    }

    #[test]
    fn single_child_is_certain() {
        let t = TaxonomyTree::build_from_edges(&[("R", "A"), ("R", "b"), ("A", "a1")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = HierSoftmaxParams::init_uniform(&t, 4, &mut rng);
        let probs = conditional_probs(&p, t.node("A").unwrap(), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(probs, vec![1.0]);
    }

    #[test]
    fn softmax_of_one_two_three() {
        // Logits [1, 2, 3] realised through the bias column.
        let t = TaxonomyTree::build_from_edges(&[("R", "a"), ("R", "b"), ("R", "c")]).unwrap();
        let w = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 2.0], vec![0.0, 3.0]]);
        let p = HierSoftmaxParams::from_matrices(&t, 1, vec![w]).unwrap();
        let probs = conditional_probs(&p, t.root(), &[5.0]).unwrap();
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (a, b) in probs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let t = two_by_two();
        let p = HierSoftmaxParams::zeros(&t, 2);
        let leaf = t.node("A1").unwrap();
        assert_eq!(conditional_probs(&p, leaf, &[0.0, 0.0]).unwrap_err(), HsError::NotAParent(leaf));
        assert_eq!(
            leaf_log_probs(&p, &t, &[0.0]).unwrap_err(),
            HsError::DimensionMismatch { expected: 2, found: 1 }
        );
        let a = t.node("A").unwrap();
        assert_eq!(loss(&p, &t, &[0.0, 0.0], a).unwrap_err(), HsError::NotALeaf(a));
        assert_eq!(
            gradient_check(&p, &t, &[0.0, 0.0], leaf, 0.0, 1e-6).unwrap_err(),
            HsError::InvalidStep(0.0)
        );
        let other = HierSoftmaxParams::zeros(&t.flat_view(), 2);
        assert_eq!(loss(&other, &t, &[0.0, 0.0], leaf).unwrap_err(), HsError::UnboundTree);
    }

    #[test]
    fn zero_weights_give_product_of_uniforms() {
        let t = two_by_two();
        let p = HierSoftmaxParams::zeros(&t, 3);
        let h = [0.5, -0.5, 2.0];
        let lp = leaf_log_probs(&p, &t, &h).unwrap();
        for v in &lp {
            assert!((v - 0.25f64.ln()).abs() < 1e-15);
        }
        let e = loss(&p, &t, &h, t.node("A1").unwrap()).unwrap();
        assert!((e - 4f64.ln()).abs() < 1e-15);
        assert!((e - 1.3862944).abs() < 1e-7);
        assert_eq!(predict(&p, &t, &h).unwrap(), t.leaves()[0]);
        assert_eq!(grad_hidden(&p, &t, &h, t.node("B2").unwrap()).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn fourth_order_stencil_is_more_accurate() {
        let exact = 1f64.cos();
        let d2 = central_difference::<()>(Stencil::Central2, 1.0, 1e-3, |x| Ok(x.sin())).unwrap();
        let d4 = central_difference::<()>(Stencil::Central4, 1.0, 1e-3, |x| Ok(x.sin())).unwrap();
        assert!((d2 - exact).abs() > 1e-8);
        assert!((d4 - exact).abs() < 1e-12);
    }

    #[test]
    fn off_path_parents_get_no_gradient() {
        let t = two_by_two();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HierSoftmaxParams::init_uniform(&t, 3, &mut rng);
        let target = t.node("A2").unwrap();
        let g = grad_weights(&p, &t, &[0.1, 0.2, 0.3], target).unwrap();
        let keys: Vec<&str> = g.keys().map(|&k| t.name(k)).collect();
        assert_eq!(keys, ["R", "A"]);
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let t = two_by_two();
        let target = t.node("B1").unwrap();
        let mut last = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 20.0, 50.0] {
            let mut p = HierSoftmaxParams::zeros(&t, 1);
            let b = t.node("B").unwrap();
            p.weights_mut(t.root()).unwrap().set(t.child_slot(b), 1, margin);
            p.weights_mut(b).unwrap().set(t.child_slot(target), 1, margin);
            let e = loss(&p, &t, &[0.0], target).unwrap();
            assert!(e >= 0.0 && e < last);
            last = e;
        }
        assert!(last < 1e-20);
        // At the optimum every residual is (numerically) zero.
        let mut p = HierSoftmaxParams::zeros(&t, 1);
        let b = t.node("B").unwrap();
        p.weights_mut(t.root()).unwrap().set(t.child_slot(b), 1, 800.0);
        p.weights_mut(b).unwrap().set(t.child_slot(target), 1, 800.0);
        let g = grad_weights(&p, &t, &[0.7], target).unwrap();
        assert!(g.values().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn log_is_clamped() {
        let t = TaxonomyTree::build_from_edges(&[("R", "a"), ("R", "b")]).unwrap();
        let w = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1e6]]);
        let p = HierSoftmaxParams::from_matrices(&t, 1, vec![w]).unwrap();
        let e = loss(&p, &t, &[0.0], t.node("a").unwrap()).unwrap();
        assert!(e.is_finite());
        assert!((e + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn parameter_counts() {
        let t = two_by_two();
        let p = HierSoftmaxParams::zeros(&t, 4);
        assert_eq!(num_parameters(&p), 6 * 5);
        let f = HierSoftmaxParams::zeros(&t.flat_view(), 4);
        assert_eq!(num_parameters(&p) - num_parameters(&f), hierarchy_overhead(&t, 4));
        assert_eq!(hierarchy_overhead(&t.flat_view(), 4), 0);
    }

    #[test]
    fn sign_flip_is_detected() {
        let t = two_by_two();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = HierSoftmaxParams::init_uniform(&t, 3, &mut rng);
        let target = t.node("B2").unwrap();
        let h = [0.4, -0.8, 0.9];
        assert!(gradient_check(&p, &t, &h, target, 1e-5, 1e-6).unwrap().passed());
        let faulty = GradCheckOptions {
            inject_fault: true,
            ..GradCheckOptions::default()
        };
        assert!(!gradient_check_with(&p, &t, &h, target, &faulty).unwrap().passed());
    }

    #[test]
    fn gradcheck_at_optimum_uses_absolute_error() {
        let t = TaxonomyTree::build_from_edges(&[("R", "a"), ("R", "b")]).unwrap();
        let w = Matrix::from_rows(&[vec![0.0, 800.0], vec![0.0, 0.0]]);
        let p = HierSoftmaxParams::from_matrices(&t, 1, vec![w]).unwrap();
        let r = gradient_check(&p, &t, &[0.3], t.node("a").unwrap(), 1e-5, 1e-6).unwrap();
        assert!(r.passed());
        assert!(r.entries.iter().all(|e| e.analytic.abs() < 1e-8 && e.numeric.abs() < 1e-8));
    }
}
