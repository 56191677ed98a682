//! Linear-chain CRF layers over per-utterance emission scores.
//!
//! A sequence `y_1..y_n` scores
//!
//! ```text
//! start[y_1] + Σ_i emit[i][y_i] + Σ_{i≥2} trans(y_{i-2}, y_{i-1}, y_i) + stop[y_n]
//! ```
//!
//! where first-order chains ignore `y_{i-2}` and second-order chains score
//! position 2 with the `pair_start[y_1][y_2]` table. Everything is computed in
//! log space; the second-order recursions run over label-pair states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Graph, ParamId, ParamSet, Tensor, Var};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("emission width {got} does not match label count {expected}")]
    LabelCount { expected: usize, got: usize },
    #[error("gold sequence has length {got}, emissions have {expected} rows")]
    GoldLength { expected: usize, got: usize },
    #[error("gold label {label} at position {position} out of range for {classes} labels")]
    GoldOutOfRange {
        position: usize,
        label: usize,
        classes: usize,
    },
    #[error("speaker at position {position} has no CRF role")]
    UnmappedSpeaker { position: usize },
    #[error("empty emission sequence")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrfOrder {
    First,
    Second,
}

/// Scores of one linear-chain CRF.
///
/// `trans` holds `K × K` entries indexed `[prev][cur]` for first order and
/// `K × K × K` entries indexed `[prev2][prev][cur]` for second order.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams<T> {
    pub order: CrfOrder,
    pub num_labels: usize,
    pub start: Vec<T>,
    pub stop: Vec<T>,
    pub trans: Vec<T>,
    /// `[y_1][y_2]` scores used at position 2 of a second-order chain; empty for first order.
    pub pair_start: Vec<T>,
}

impl<T: Scalar> CrfParams<T> {
    pub fn zeros(order: CrfOrder, k: usize) -> Self {
        let (trans, pair) = match order {
            CrfOrder::First => (k * k, 0),
            CrfOrder::Second => (k * k * k, k * k),
        };
        Self {
            order,
            num_labels: k,
            start: vec![T::zero(); k],
            stop: vec![T::zero(); k],
            trans: vec![T::zero(); trans],
            pair_start: vec![T::zero(); pair],
        }
    }

    /// Second-order parameters that score every sequence exactly like `first`.
    pub fn lift_to_second_order(first: &CrfParams<T>) -> Self {
        assert_eq!(first.order, CrfOrder::First);
        let k = first.num_labels;
        let mut out = Self::zeros(CrfOrder::Second, k);
        out.start.clone_from(&first.start);
        out.stop.clone_from(&first.stop);
        out.pair_start.clone_from(&first.trans);
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    out.trans[(a * k + b) * k + c] = first.trans[b * k + c];
                }
            }
        }
        out
    }

    #[inline]
    pub fn t1(&self, prev: usize, cur: usize) -> T {
        self.trans[prev * self.num_labels + cur]
    }

    #[inline]
    pub fn t2(&self, prev2: usize, prev: usize, cur: usize) -> T {
        let k = self.num_labels;
        self.trans[(prev2 * k + prev) * k + cur]
    }

    #[inline]
    pub fn pair(&self, first: usize, second: usize) -> T {
        self.pair_start[first * self.num_labels + second]
    }

    fn check(&self, e: &Tensor<T>) -> Result<(), CrfError> {
        if e.cols() != self.num_labels {
            return Err(CrfError::LabelCount {
                expected: self.num_labels,
                got: e.cols(),
            });
        }
        if e.rows() == 0 {
            return Err(CrfError::Empty);
        }
        Ok(())
    }

    /// Score of one complete label sequence.
    pub fn path_score(&self, e: &Tensor<T>, labels: &[usize]) -> T {
        let n = labels.len();
        let mut s = self.start[labels[0]] + self.stop[labels[n - 1]];
        for (i, &y) in labels.iter().enumerate() {
            s = s + e.get(i, y);
            if i >= 1 {
                s = s + match self.order {
                    CrfOrder::First => self.t1(labels[i - 1], y),
                    CrfOrder::Second if i == 1 => self.pair(labels[0], y),
                    CrfOrder::Second => self.t2(labels[i - 2], labels[i - 1], y),
                };
            }
        }
        s
    }
}

/// Expected sufficient statistics; doubles as the gradient of `log Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfMarginals<T> {
    pub emissions: Tensor<T>,
    pub start: Vec<T>,
    pub stop: Vec<T>,
    pub trans: Vec<T>,
    pub pair_start: Vec<T>,
}

/// Gradient of the negative log-likelihood.
pub type CrfGradients<T> = CrfMarginals<T>;

/// Emission matrix with disallowed labels set to `-inf`.
fn masked_emissions<T: Scalar>(e: &Tensor<T>, constraint: Option<&[Option<usize>]>) -> Tensor<T> {
    let mut out = e.clone();
    if let Some(c) = constraint {
        for (i, g) in c.iter().enumerate() {
            if let Some(g) = *g {
                for y in 0..e.cols() {
                    if y != g {
                        out.set(i, y, T::neg_infinity());
                    }
                }
            }
        }
    }
    out
}

/// Forward–backward in log space. Returns `log Z` and the marginals of every
/// potential, restricted to sequences satisfying `constraint` when given.
fn forward_backward<T: Scalar>(
    e: &Tensor<T>,
    p: &CrfParams<T>,
    constraint: Option<&[Option<usize>]>,
) -> (T, CrfMarginals<T>) {
    match p.order {
        CrfOrder::First => forward_backward_first(e, p, constraint),
        CrfOrder::Second => forward_backward_second(e, p, constraint),
    }
}

fn forward_backward_first<T: Scalar>(
    e: &Tensor<T>,
    p: &CrfParams<T>,
    constraint: Option<&[Option<usize>]>,
) -> (T, CrfMarginals<T>) {
    let k = p.num_labels;
    let n = e.rows();
    let em = masked_emissions(e, constraint);
    let ninf = T::neg_infinity();

    let mut alpha = Tensor::filled(n, k, ninf);
    for y in 0..k {
        alpha.set(0, y, p.start[y] + em.get(0, y));
    }
    for i in 1..n {
        for y in 0..k {
            let v = log_sum_exp((0..k).map(|a| alpha.get(i - 1, a) + p.t1(a, y)));
            alpha.set(i, y, v + em.get(i, y));
        }
    }
    let mut beta = Tensor::filled(n, k, ninf);
    for y in 0..k {
        beta.set(n - 1, y, p.stop[y]);
    }
    for i in (0..n - 1).rev() {
        for y in 0..k {
            let v = log_sum_exp((0..k).map(|b| p.t1(y, b) + em.get(i + 1, b) + beta.get(i + 1, b)));
            beta.set(i, y, v);
        }
    }
    let log_z = log_sum_exp((0..k).map(|y| alpha.get(n - 1, y) + p.stop[y]));

    let prob = |x: T| {
        if x == ninf {
            T::zero()
        } else {
            (x - log_z).exp()
        }
    };
    let mut m = CrfMarginals {
        emissions: Tensor::zeros(n, k),
        start: vec![T::zero(); k],
        stop: vec![T::zero(); k],
        trans: vec![T::zero(); k * k],
        pair_start: Vec::new(),
    };
    for i in 0..n {
        for y in 0..k {
            m.emissions
                .set(i, y, prob(alpha.get(i, y) + beta.get(i, y)));
        }
    }
    m.start = m.emissions.row(0).to_vec();
    m.stop = m.emissions.row(n - 1).to_vec();
    for i in 1..n {
        for a in 0..k {
            for b in 0..k {
                let lp = alpha.get(i - 1, a) + p.t1(a, b) + em.get(i, b) + beta.get(i, b);
                m.trans[a * k + b] = m.trans[a * k + b] + prob(lp);
            }
        }
    }
    (log_z, m)
}

fn forward_backward_second<T: Scalar>(
    e: &Tensor<T>,
    p: &CrfParams<T>,
    constraint: Option<&[Option<usize>]>,
) -> (T, CrfMarginals<T>) {
    let k = p.num_labels;
    let n = e.rows();
    let em = masked_emissions(e, constraint);
    let ninf = T::neg_infinity();
    let mut m = CrfMarginals {
        emissions: Tensor::zeros(n, k),
        start: vec![T::zero(); k],
        stop: vec![T::zero(); k],
        trans: vec![T::zero(); k * k * k],
        pair_start: vec![T::zero(); k * k],
    };

    if n == 1 {
        let scores: Vec<T> = (0..k)
            .map(|y| p.start[y] + em.get(0, y) + p.stop[y])
            .collect();
        let log_z = log_sum_exp(scores.iter().copied());
        for y in 0..k {
            let pr = if scores[y] == ninf {
                T::zero()
            } else {
                (scores[y] - log_z).exp()
            };
            m.emissions.set(0, y, pr);
            m.start[y] = pr;
            m.stop[y] = pr;
        }
        return (log_z, m);
    }

    // alpha[i][(a, b)]: labels (y_{i-1}, y_i) = (a, b), for i ≥ 1.
    let pair = |a: usize, b: usize| a * k + b;
    let mut alpha = vec![vec![ninf; k * k]; n];
    for a in 0..k {
        for b in 0..k {
            alpha[1][pair(a, b)] = p.start[a] + em.get(0, a) + p.pair(a, b) + em.get(1, b);
        }
    }
    for i in 2..n {
        for b in 0..k {
            for c in 0..k {
                let v = log_sum_exp((0..k).map(|a| alpha[i - 1][pair(a, b)] + p.t2(a, b, c)));
                alpha[i][pair(b, c)] = v + em.get(i, c);
            }
        }
    }
    let mut beta = vec![vec![ninf; k * k]; n];
    for a in 0..k {
        for b in 0..k {
            beta[n - 1][pair(a, b)] = p.stop[b];
        }
    }
    for i in (1..n - 1).rev() {
        for a in 0..k {
            for b in 0..k {
                let v = log_sum_exp(
                    (0..k).map(|c| p.t2(a, b, c) + em.get(i + 1, c) + beta[i + 1][pair(b, c)]),
                );
                beta[i][pair(a, b)] = v;
            }
        }
    }
    let log_z = log_sum_exp((0..k * k).map(|ab| alpha[n - 1][ab] + p.stop[ab % k]));
    let prob = |x: T| {
        if x == ninf {
            T::zero()
        } else {
            (x - log_z).exp()
        }
    };

    for i in 1..n {
        for a in 0..k {
            for b in 0..k {
                let pr = prob(alpha[i][pair(a, b)] + beta[i][pair(a, b)]);
                if i == 1 {
                    m.pair_start[pair(a, b)] = pr;
                    m.emissions.set(0, a, m.emissions.get(0, a) + pr);
                }
                m.emissions.set(i, b, m.emissions.get(i, b) + pr);
            }
        }
    }
    m.start = m.emissions.row(0).to_vec();
    m.stop = m.emissions.row(n - 1).to_vec();
    for i in 2..n {
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let lp = alpha[i - 1][pair(a, b)]
                        + p.t2(a, b, c)
                        + em.get(i, c)
                        + beta[i][pair(b, c)];
                    let idx = (a * k + b) * k + c;
                    m.trans[idx] = m.trans[idx] + prob(lp);
                }
            }
        }
    }
    (log_z, m)
}

/// `log Σ_y exp(score(y))` over all `K^n` label sequences.
pub fn log_partition<T: Scalar>(e: &Tensor<T>, p: &CrfParams<T>) -> Result<T, CrfError> {
    p.check(e)?;
    Ok(forward_backward(e, p, None).0)
}

fn check_gold<T: Scalar>(
    e: &Tensor<T>,
    p: &CrfParams<T>,
    gold: &[Option<usize>],
) -> Result<(), CrfError> {
    p.check(e)?;
    if gold.len() != e.rows() {
        return Err(CrfError::GoldLength {
            expected: e.rows(),
            got: gold.len(),
        });
    }
    for (i, g) in gold.iter().enumerate() {
        if let Some(g) = *g {
            if g >= p.num_labels {
                return Err(CrfError::GoldOutOfRange {
                    position: i,
                    label: g,
                    classes: p.num_labels,
                });
            }
        }
    }
    Ok(())
}

/// Negative log-likelihood of `gold`; `None` positions are marginalized out.
pub fn crf_nll<T: Scalar>(
    e: &Tensor<T>,
    p: &CrfParams<T>,
    gold: &[Option<usize>],
) -> Result<T, CrfError> {
    Ok(crf_nll_with_grad(e, p, gold)?.0)
}

/// NLL together with its gradient w.r.t. emissions and every CRF score.
pub fn crf_nll_with_grad<T: Scalar>(
    e: &Tensor<T>,
    p: &CrfParams<T>,
    gold: &[Option<usize>],
) -> Result<(T, CrfGradients<T>), CrfError> {
    check_gold(e, p, gold)?;
    let (log_z, free) = forward_backward(e, p, None);
    let (log_gold, clamped) = forward_backward(e, p, Some(gold));
    let sub = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x - y).collect::<Vec<T>>();
    let grad = CrfMarginals {
        emissions: Tensor::from_vec(
            e.rows(),
            e.cols(),
            sub(free.emissions.data(), clamped.emissions.data()),
        ),
        start: sub(&free.start, &clamped.start),
        stop: sub(&free.stop, &clamped.stop),
        trans: sub(&free.trans, &clamped.trans),
        pair_start: sub(&free.pair_start, &clamped.pair_start),
    };
    Ok((log_z - log_gold, grad))
}

/// Highest-scoring label sequence and its score. Ties go to the lowest label index.
pub fn viterbi<T: Scalar>(e: &Tensor<T>, p: &CrfParams<T>) -> Result<(Vec<usize>, T), CrfError> {
    p.check(e)?;
    Ok(match p.order {
        CrfOrder::First => viterbi_first(e, p),
        CrfOrder::Second => viterbi_second(e, p),
    })
}

fn argmax_lowest<T: Scalar>(it: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::neg_infinity());
    for (i, v) in it.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn viterbi_first<T: Scalar>(e: &Tensor<T>, p: &CrfParams<T>) -> (Vec<usize>, T) {
    let k = p.num_labels;
    let n = e.rows();
    let mut delta: Vec<T> = (0..k).map(|y| p.start[y] + e.get(0, y)).collect();
    let mut back = vec![vec![0usize; k]; n];
    for i in 1..n {
        let mut next = vec![T::zero(); k];
        for y in 0..k {
            let (arg, v) = argmax_lowest((0..k).map(|a| delta[a] + p.t1(a, y)));
            back[i][y] = arg;
            next[y] = v + e.get(i, y);
        }
        delta = next;
    }
    let (mut y, score) = argmax_lowest((0..k).map(|y| delta[y] + p.stop[y]));
    let mut path = vec![0; n];
    for i in (0..n).rev() {
        path[i] = y;
        y = back[i][y];
    }
    (path, score)
}

fn viterbi_second<T: Scalar>(e: &Tensor<T>, p: &CrfParams<T>) -> (Vec<usize>, T) {
    let k = p.num_labels;
    let n = e.rows();
    if n == 1 {
        let (y, s) = argmax_lowest((0..k).map(|y| p.start[y] + e.get(0, y) + p.stop[y]));
        return (vec![y], s);
    }
    let pair = |a: usize, b: usize| a * k + b;
    let mut delta = vec![T::zero(); k * k];
    for a in 0..k {
        for b in 0..k {
            delta[pair(a, b)] = p.start[a] + e.get(0, a) + p.pair(a, b) + e.get(1, b);
        }
    }
    // back[i][(b, c)] = best y_{i-2}.
    let mut back = vec![vec![0usize; k * k]; n];
    for i in 2..n {
        let mut next = vec![T::zero(); k * k];
        for b in 0..k {
            for c in 0..k {
                let (arg, v) = argmax_lowest((0..k).map(|a| delta[pair(a, b)] + p.t2(a, b, c)));
                back[i][pair(b, c)] = arg;
                next[pair(b, c)] = v + e.get(i, c);
            }
        }
        delta = next;
    }
    let (best, score) = argmax_lowest((0..k * k).map(|ab| delta[ab] + p.stop[ab % k]));
    let mut path = vec![0; n];
    path[n - 2] = best / k;
    path[n - 1] = best % k;
    for i in (2..n).rev() {
        path[i - 2] = back[i][pair(path[i - 1], path[i])];
    }
    (path, score)
}

/// Splits positions by role, preserving order within each role.
pub fn split_by_role(roles: &[usize], n_roles: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_roles];
    for (i, &r) in roles.iter().enumerate() {
        if r < n_roles {
            out[r].push(i);
        }
    }
    out
}

fn rows_of<T: Scalar>(e: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(idx.len() * e.cols());
    for &i in idx {
        data.extend_from_slice(e.row(i));
    }
    Tensor::from_vec(idx.len(), e.cols(), data)
}

fn check_roles<T>(roles: &[usize], params_by_role: &[CrfParams<T>]) -> Result<(), CrfError> {
    match roles.iter().position(|&r| r >= params_by_role.len()) {
        Some(position) => Err(CrfError::UnmappedSpeaker { position }),
        None => Ok(()),
    }
}

/// Sum of independent chain NLLs, one chain per speaker role.
///
/// Returns the loss and one gradient per role (zero-length chains give zero gradients).
pub fn speaker_crf_nll_with_grad<T: Scalar>(
    e: &Tensor<T>,
    roles: &[usize],
    params_by_role: &[CrfParams<T>],
    gold: &[Option<usize>],
) -> Result<(T, Tensor<T>, Vec<Option<CrfGradients<T>>>), CrfError> {
    check_roles(roles, params_by_role)?;
    if roles.len() != e.rows() || gold.len() != e.rows() {
        return Err(CrfError::GoldLength {
            expected: e.rows(),
            got: roles.len().min(gold.len()),
        });
    }
    let mut total = T::zero();
    let mut emission_grad = Tensor::zeros(e.rows(), e.cols());
    let mut per_role = Vec::with_capacity(params_by_role.len());
    for (role, idx) in split_by_role(roles, params_by_role.len())
        .into_iter()
        .enumerate()
    {
        if idx.is_empty() {
            per_role.push(None);
            continue;
        }
        let sub_e = rows_of(e, &idx);
        let sub_gold: Vec<Option<usize>> = idx.iter().map(|&i| gold[i]).collect();
        let (nll, grad) = crf_nll_with_grad(&sub_e, &params_by_role[role], &sub_gold)?;
        total = total + nll;
        for (r, &i) in idx.iter().enumerate() {
            emission_grad
                .row_mut(i)
                .copy_from_slice(grad.emissions.row(r));
        }
        per_role.push(Some(grad));
    }
    Ok((total, emission_grad, per_role))
}

pub fn speaker_crf_nll<T: Scalar>(
    e: &Tensor<T>,
    roles: &[usize],
    params_by_role: &[CrfParams<T>],
    gold: &[Option<usize>],
) -> Result<T, CrfError> {
    Ok(speaker_crf_nll_with_grad(e, roles, params_by_role, gold)?.0)
}

/// Per-role Viterbi decoding stitched back into dialogue order.
pub fn speaker_viterbi<T: Scalar>(
    e: &Tensor<T>,
    roles: &[usize],
    params_by_role: &[CrfParams<T>],
) -> Result<Vec<usize>, CrfError> {
    check_roles(roles, params_by_role)?;
    let mut out = vec![0; e.rows()];
    for (role, idx) in split_by_role(roles, params_by_role.len())
        .into_iter()
        .enumerate()
    {
        if idx.is_empty() {
            continue;
        }
        let (labels, _) = viterbi(&rows_of(e, &idx), &params_by_role[role])?;
        for (&i, y) in idx.iter().zip(labels) {
            out[i] = y;
        }
    }
    Ok(out)
}

/// CRF scores registered as trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfLayer {
    pub order: CrfOrder,
    pub num_labels: usize,
    start: ParamId,
    stop: ParamId,
    trans: ParamId,
    pair_start: Option<ParamId>,
}

impl CrfLayer {
    /// Registers zero-initialised scores under `prefix`.
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        order: CrfOrder,
        k: usize,
    ) -> Result<Self, DiffError> {
        let start = params.add_zeros(format!("{prefix}.start"), 1, k)?;
        let stop = params.add_zeros(format!("{prefix}.stop"), 1, k)?;
        let (trans, pair_start) = match order {
            CrfOrder::First => (params.add_zeros(format!("{prefix}.trans"), k, k)?, None),
            CrfOrder::Second => (
                params.add_zeros(format!("{prefix}.trans"), k * k, k)?,
                Some(params.add_zeros(format!("{prefix}.pair_start"), k, k)?),
            ),
        };
        Ok(Self {
            order,
            num_labels: k,
            start,
            stop,
            trans,
            pair_start,
        })
    }

    pub fn scores<T: Scalar>(&self, params: &ParamSet<T>) -> CrfParams<T> {
        CrfParams {
            order: self.order,
            num_labels: self.num_labels,
            start: params.value(self.start).data().to_vec(),
            stop: params.value(self.stop).data().to_vec(),
            trans: params.value(self.trans).data().to_vec(),
            pair_start: self
                .pair_start
                .map_or_else(Vec::new, |id| params.value(id).data().to_vec()),
        }
    }

    fn grad_terms<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        grad: CrfGradients<T>,
        out: &mut Vec<(Var, Tensor<T>)>,
    ) {
        let k = self.num_labels;
        out.push((g.param(self.start), Tensor::row_vector(grad.start)));
        out.push((g.param(self.stop), Tensor::row_vector(grad.stop)));
        let rows = grad.trans.len() / k;
        out.push((g.param(self.trans), Tensor::from_vec(rows, k, grad.trans)));
        if let Some(id) = self.pair_start {
            out.push((g.param(id), Tensor::from_vec(k, k, grad.pair_start)));
        }
    }

    /// NLL node over an `n × K` emission node.
    pub fn nll<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        emissions: Var,
        gold: &[Option<usize>],
    ) -> Result<Var, CrfLayerError> {
        let p = self.scores(g.params());
        let (nll, grad) = crf_nll_with_grad(g.value(emissions), &p, gold)?;
        let mut terms = vec![(emissions, grad.emissions.clone())];
        self.grad_terms(g, grad, &mut terms);
        Ok(g.custom_scalar(nll, terms)?)
    }

    pub fn decode<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        e: &Tensor<T>,
    ) -> Result<Vec<usize>, CrfError> {
        Ok(viterbi(e, &self.scores(params))?.0)
    }
}

/// One independent chain per speaker role.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerCrfLayer {
    pub roles: Vec<CrfLayer>,
}

impl SpeakerCrfLayer {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        order: CrfOrder,
        k: usize,
        n_roles: usize,
    ) -> Result<Self, DiffError> {
        let roles = (0..n_roles)
            .map(|r| CrfLayer::register(params, &format!("{prefix}.role{r}"), order, k))
            .collect::<Result<_, _>>()?;
        Ok(Self { roles })
    }

    pub fn nll<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        emissions: Var,
        roles: &[usize],
        gold: &[Option<usize>],
    ) -> Result<Var, CrfLayerError> {
        let scores: Vec<CrfParams<T>> = self.roles.iter().map(|l| l.scores(g.params())).collect();
        let (nll, eg, per_role) =
            speaker_crf_nll_with_grad(g.value(emissions), roles, &scores, gold)?;
        let mut terms = vec![(emissions, eg)];
        for (layer, grad) in self.roles.iter().zip(per_role) {
            if let Some(grad) = grad {
                layer.grad_terms(g, grad, &mut terms);
            }
        }
        Ok(g.custom_scalar(nll, terms)?)
    }

    pub fn decode<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        e: &Tensor<T>,
        roles: &[usize],
    ) -> Result<Vec<usize>, CrfError> {
        let scores: Vec<CrfParams<T>> = self.roles.iter().map(|l| l.scores(params)).collect();
        speaker_viterbi(e, roles, &scores)
    }
}

/// Maps speakers to CRF roles by order of first appearance; speakers beyond
/// `n_roles` share the last role.
pub fn assign_roles(speakers: &[String], n_roles: usize) -> Vec<usize> {
    let mut seen: Vec<&str> = Vec::new();
    speakers
        .iter()
        .map(|s| {
            let idx = match seen.iter().position(|x| *x == s.as_str()) {
                Some(i) => i,
                None => {
                    seen.push(s);
                    seen.len() - 1
                }
            };
            idx.min(n_roles.saturating_sub(1))
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfLayerError {
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
