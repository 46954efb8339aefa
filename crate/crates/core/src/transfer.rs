//! Affine knowledge transfer between two skill groups.
//!
//! Each task owns a small regressor that maps the statistics of its group to
//! a per-gene scale `gamma` and shift `beta`. A group is standardized, scaled
//! by `1 + gamma`, shifted by `beta`, and repaired back into legal genes.

use crate::engine::{compute_ranks, scalar_fitness, Individual};
use crate::genome::{Chromosome, EncodingSpec};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferError {
    #[error("group is empty")]
    EmptyGroup,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub eps_stab: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 0.01,
            epochs: 100,
            eps_stab: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub group_size: usize,
}

/// Elementwise mean and population variance of the group's genes.
pub fn group_stats<'a>(group: impl IntoIterator<Item = &'a Chromosome>) -> Result<GroupStats, TransferError> {
    let rows: Vec<&[u32]> = group.into_iter().map(|c| c.genes.as_slice()).collect();
    let first = rows.first().ok_or(TransferError::EmptyGroup)?;
    let d = first.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &rows {
        if r.len() != d {
            return Err(TransferError::Dimension {
                expected: d,
                found: r.len(),
            });
        }
        for (m, &g) in mean.iter_mut().zip(r.iter()) {
            *m += g as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = vec![0.0; d];
    for r in &rows {
        for ((v, &g), m) in variance.iter_mut().zip(r.iter()).zip(&mean) {
            *v += (g as f64 - m).powi(2);
        }
    }
    variance.iter_mut().for_each(|v| *v /= n);
    Ok(GroupStats {
        mean,
        variance,
        group_size: rows.len(),
    })
}

/// One-hidden-layer tanh regressor from `[mean ‖ variance]` to `[gamma ‖ beta]`.
///
/// Inputs are divided by the gene range (variance by its square) and the
/// `beta` half of the output is multiplied by it, so the weights work on
/// unit scale whatever the genome layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferNet {
    pub dim: usize,
    pub hidden: usize,
    pub scale: f64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub learning_rate: f64,
    adam: Adam,
}

#[derive(Clone, Debug, PartialEq)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Forward-pass intermediates kept for backpropagation.
struct Forward {
    input: Vec<f64>,
    hidden: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
}

impl TransferNet {
    /// Net with all weights zero: `gamma = beta = 0`.
    pub fn zeros(dim: usize, hidden: usize, scale: f64, learning_rate: f64) -> Self {
        let n = Self::param_count(dim, hidden);
        Self {
            dim,
            hidden,
            scale,
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * dim * hidden],
            b2: vec![0.0; 2 * dim],
            learning_rate,
            adam: Adam::new(n),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, scale: f64, learning_rate: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(dim, hidden, scale, learning_rate);
        let a1 = (6.0 / (2 * dim + hidden) as f64).sqrt();
        net.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        let a2 = (6.0 / (hidden + 2 * dim) as f64).sqrt();
        net.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        net
    }

    fn param_count(dim: usize, hidden: usize) -> usize {
        2 * (hidden * 2 * dim) + hidden + 2 * dim
    }

    fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    fn input(&self, stats: &GroupStats) -> Vec<f64> {
        let s = self.scale;
        stats
            .mean
            .iter()
            .map(|m| m / s)
            .chain(stats.variance.iter().map(|v| v / (s * s)))
            .collect()
    }

    fn forward(&self, stats: &GroupStats) -> Forward {
        let input = self.input(stats);
        let n_in = 2 * self.dim;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * n_in..(h + 1) * n_in];
                (self.b1[h] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();
        let out: Vec<f64> = (0..2 * self.dim)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        let gamma = out[..self.dim].to_vec();
        let beta = out[self.dim..].iter().map(|b| b * self.scale).collect();
        Forward {
            input,
            hidden,
            gamma,
            beta,
        }
    }

    /// Parameter gradient given the loss gradient with respect to gamma and beta.
    fn backward(&self, f: &Forward, d_gamma: &[f64], d_beta: &[f64]) -> Vec<f64> {
        let n_in = 2 * self.dim;
        let d_out: Vec<f64> = d_gamma
            .iter()
            .copied()
            .chain(d_beta.iter().map(|g| g * self.scale))
            .collect();
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &g) in d_out.iter().enumerate() {
            let row = o * self.hidden;
            for h in 0..self.hidden {
                gw2[row + h] = g * f.hidden[h];
                d_hidden[h] += g * self.w2[row + h];
            }
        }
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&f.hidden)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        let mut gw1 = vec![0.0; self.w1.len()];
        for (h, &g) in d_pre.iter().enumerate() {
            for i in 0..n_in {
                gw1[h * n_in + i] = g * f.input[i];
            }
        }
        [&gw1[..], &d_pre, &gw2, &d_out].concat()
    }
}

/// Scale and shift produced by `net` for a group.
pub fn affine_params(stats: &GroupStats, net: &TransferNet) -> Result<(Vec<f64>, Vec<f64>), TransferError> {
    if stats.mean.len() != net.dim {
        return Err(TransferError::Dimension {
            expected: net.dim,
            found: stats.mean.len(),
        });
    }
    let f = net.forward(stats);
    Ok((f.gamma, f.beta))
}

fn standardize(z: &[f64], stats: &GroupStats, eps: f64) -> Vec<f64> {
    z.iter()
        .zip(&stats.mean)
        .zip(&stats.variance)
        .map(|((x, m), v)| (x - m) / (v + eps).sqrt())
        .collect()
}

/// `(1 + gamma) * (z - mean) / sqrt(variance + eps) + beta`, elementwise.
pub fn apply_affine(z: &[f64], stats: &GroupStats, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    standardize(z, stats, eps)
        .iter()
        .zip(gamma)
        .zip(beta)
        .map(|((s, g), b)| (1.0 + g) * s + b)
        .collect()
}

/// Rounds each entry and maps it into its position's legal gene set.
pub fn repair_genes(raw: &[f64], spec: &EncodingSpec) -> Chromosome {
    let genes = raw
        .iter()
        .enumerate()
        .map(|(p, &x)| {
            let r = if x.is_finite() { x.round().clamp(-1e15, 1e15) } else { 0.0 };
            spec.repair_gene(p, r as i64)
        })
        .collect();
    Chromosome::new(genes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub loss_before: f64,
    pub loss_after: f64,
    /// Loss after every accepted step, starting with the initial loss.
    pub accepted_losses: Vec<f64>,
}

fn alignment_loss_and_grad(
    net: &TransferNet,
    stats: &GroupStats,
    standardized: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    let f = net.forward(stats);
    let m = standardized.len() as f64;
    let d = net.dim;
    let mut loss = 0.0;
    let mut d_gamma = vec![0.0; d];
    let mut d_beta = vec![0.0; d];
    for (s, t) in standardized.iter().zip(targets) {
        for j in 0..d {
            let diff = (1.0 + f.gamma[j]) * s[j] + f.beta[j] - t[j];
            loss += diff * diff;
            d_gamma[j] += 2.0 * diff * s[j] / m;
            d_beta[j] += 2.0 * diff / m;
        }
    }
    (loss / m, net.backward(&f, &d_gamma, &d_beta))
}

/// Mean squared distance between the transformed source rows and their
/// paired target rows.
pub fn alignment_loss(net: &TransferNet, stats: &GroupStats, source: &[Vec<f64>], targets: &[Vec<f64>], eps: f64) -> f64 {
    let standardized: Vec<Vec<f64>> = source.iter().map(|z| standardize(z, stats, eps)).collect();
    alignment_loss_and_grad(net, stats, &standardized, targets).0
}

/// Gradient of [`alignment_loss`] with respect to the flattened parameters
/// `[w1, b1, w2, b2]`.
pub fn alignment_gradient(net: &TransferNet, stats: &GroupStats, source: &[Vec<f64>], targets: &[Vec<f64>], eps: f64) -> Vec<f64> {
    let standardized: Vec<Vec<f64>> = source.iter().map(|z| standardize(z, stats, eps)).collect();
    alignment_loss_and_grad(net, stats, &standardized, targets).1
}

/// Adam on the alignment loss. A step that raises the loss is undone and the
/// learning rate halved. `source[i]` is paired with `targets[i]`.
pub fn train_alignment(
    net: &mut TransferNet,
    stats: &GroupStats,
    source: &[Vec<f64>],
    targets: &[Vec<f64>],
    epochs: usize,
    eps: f64,
) -> Result<TrainReport, TransferError> {
    if source.is_empty() || targets.is_empty() {
        return Err(TransferError::EmptyGroup);
    }
    if source.len() != targets.len() {
        return Err(TransferError::Dimension {
            expected: source.len(),
            found: targets.len(),
        });
    }
    let standardized: Vec<Vec<f64>> = source.iter().map(|z| standardize(z, stats, eps)).collect();
    let (mut loss, mut grad) = alignment_loss_and_grad(net, stats, &standardized, targets);
    let before = loss;
    let mut accepted = vec![loss];
    for _ in 0..epochs {
        let saved = (net.params(), net.adam.clone());
        let mut p = saved.0.clone();
        let lr = net.learning_rate;
        net.adam.step(&mut p, &grad, lr);
        net.set_params(&p);
        let (l, g) = alignment_loss_and_grad(net, stats, &standardized, targets);
        if l <= loss && l.is_finite() {
            loss = l;
            grad = g;
            accepted.push(l);
        } else {
            net.set_params(&saved.0);
            net.adam = saved.1;
            net.learning_rate *= 0.5;
        }
    }
    Ok(TrainReport {
        loss_before: before,
        loss_after: loss,
        accepted_losses: accepted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub generation: usize,
    /// Unordered task pair; `None` when the event was skipped.
    pub tasks: Option<(usize, usize)>,
    pub loss_before: [f64; 2],
    pub loss_after: [f64; 2],
    pub transformed: usize,
    pub admitted: usize,
    pub note: String,
}

impl TransferReport {
    fn skipped(generation: usize, note: &str) -> Self {
        Self {
            generation,
            tasks: None,
            loss_before: [0.0; 2],
            loss_after: [0.0; 2],
            transformed: 0,
            admitted: 0,
            note: note.to_string(),
        }
    }
}

/// Indices of the task's skill group ordered by scalar fitness (best first,
/// ties by index), truncated to `limit`.
fn top_of_group(population: &[Individual], task: usize, limit: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..population.len())
        .filter(|&i| population[i].skill_factor == task)
        .collect();
    idx.sort_by(|&a, &b| {
        population[b]
            .scalar_fitness
            .total_cmp(&population[a].scalar_fitness)
            .then(a.cmp(&b))
    });
    idx.truncate(limit);
    idx
}

fn as_real(c: &Chromosome) -> Vec<f64> {
    c.genes.iter().map(|&g| g as f64).collect()
}

/// Repeats the best rows cyclically until `rows` has `m` entries.
fn pad_cyclic(rows: &[Vec<f64>], m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| rows[i % rows.len()].clone()).collect()
}

/// One transfer event. `evaluate` scores chromosomes on the given task and
/// returns evaluated individuals in order. Returns the reselected population
/// of the same size, or the population unchanged when the event is skipped
/// (fewer than two non-empty groups, or more evaluations needed than
/// `max_evaluations`).
#[allow(clippy::too_many_arguments)]
pub fn transfer_event<R, E>(
    population: &[Individual],
    num_tasks: usize,
    nets: &mut [TransferNet],
    spec: &EncodingSpec,
    cfg: &TransferConfig,
    generation: usize,
    max_evaluations: usize,
    rng: &mut R,
    mut evaluate: E,
) -> (Vec<Individual>, TransferReport)
where
    R: Rng + ?Sized,
    E: FnMut(Vec<(Chromosome, usize)>) -> Vec<Individual>,
{
    let n = population.len();
    let groups: Vec<usize> = (0..num_tasks)
        .filter(|&k| population.iter().any(|ind| ind.skill_factor == k))
        .collect();
    if groups.len() < 2 {
        return (
            population.to_vec(),
            TransferReport::skipped(generation, "fewer than two non-empty skill groups"),
        );
    }
    let pairs: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| groups[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let &(ta, tb) = pairs.choose(rng).expect("at least one pair");
    let za = top_of_group(population, ta, n / 2);
    let zb = top_of_group(population, tb, n / 2);
    if za.len() + zb.len() > max_evaluations {
        return (
            population.to_vec(),
            TransferReport::skipped(generation, "evaluation budget exhausted"),
        );
    }
    let rows = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| as_real(&population[i].chromosome)).collect() };
    let (ra, rb) = (rows(&za), rows(&zb));
    let sa = group_stats(za.iter().map(|&i| &population[i].chromosome)).expect("non-empty");
    let sb = group_stats(zb.iter().map(|&i| &population[i].chromosome)).expect("non-empty");
    let m = ra.len().max(rb.len());
    let (pa, pb) = (pad_cyclic(&ra, m), pad_cyclic(&rb, m));

    let mut transform = |task: usize, stats: &GroupStats, src: &[Vec<f64>], padded_src: &[Vec<f64>], padded_tgt: &[Vec<f64>]| {
        let net = &mut nets[task];
        let report = train_alignment(net, stats, padded_src, padded_tgt, cfg.epochs, cfg.eps_stab).expect("non-empty groups");
        let (gamma, beta) = affine_params(stats, net).expect("matching dimension");
        let chroms: Vec<Chromosome> = src
            .iter()
            .map(|z| repair_genes(&apply_affine(z, stats, &gamma, &beta, cfg.eps_stab), spec))
            .collect();
        (report, chroms)
    };
    let (rep_a, za_new) = transform(ta, &sa, &ra, &pa, &pb);
    let (rep_b, zb_new) = transform(tb, &sb, &rb, &pb, &pa);

    let jobs: Vec<(Chromosome, usize)> = za_new
        .into_iter()
        .map(|c| (c, tb))
        .chain(zb_new.into_iter().map(|c| (c, ta)))
        .collect();
    let transformed = jobs.len();
    let mut pool: Vec<Individual> = population.to_vec();
    pool.extend(evaluate(jobs));

    let costs: Vec<Vec<Option<f64>>> = (0..num_tasks)
        .map(|k| pool.iter().map(|ind| ind.costs[k]).collect())
        .collect();
    let ranks = compute_ranks(&costs);
    let fitness: Vec<f64> = (0..pool.len()).map(|i| scalar_fitness(&ranks, i).1).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order[..n].to_vec();
    keep.sort_unstable();
    let admitted = keep.iter().filter(|&&i| i >= n).count();
    let next = keep.into_iter().map(|i| pool[i].clone()).collect();
    (
        next,
        TransferReport {
            generation,
            tasks: Some((ta, tb)),
            loss_before: [rep_a.loss_before, rep_b.loss_before],
            loss_after: [rep_a.loss_after, rep_b.loss_after],
            transformed,
            admitted,
            note: String::new(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats_of(rows: &[Vec<u32>]) -> GroupStats {
        let chroms: Vec<Chromosome> = rows.iter().cloned().map(Chromosome::new).collect();
        group_stats(&chroms).unwrap()
    }

    #[test]
    fn two_row_statistics() {
        let s = stats_of(&[vec![0, 2], vec![2, 0]]);
        assert_eq!(s.mean, vec![1.0, 1.0]);
        assert_eq!(s.variance, vec![1.0, 1.0]);
        let single = stats_of(&[vec![3, 7]]);
        assert_eq!(single.mean, vec![3.0, 7.0]);
        assert_eq!(single.variance, vec![0.0, 0.0]);
        assert_eq!(group_stats(&[]), Err(TransferError::EmptyGroup));
    }

    #[test]
    fn zero_net_is_pure_standardization() {
        let net = TransferNet::zeros(2, 32, 10.0, 0.01);
        let s = stats_of(&[vec![0, 2], vec![2, 0]]);
        let (g, b) = affine_params(&s, &net).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(b, vec![0.0, 0.0]);
        let z = apply_affine(&s.mean, &s, &g, &b, 1e-8);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_variance_stays_finite() {
        let s = stats_of(&[vec![4, 4]]);
        let z = apply_affine(&[5.0, 3.0], &s, &[0.0, 0.0], &[0.0, 0.0], 1e-8);
        assert!(z.iter().all(|v| v.is_finite()));
        assert!((z[0] - 1e4).abs() < 1e-6);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 5;
        let net = TransferNet::new(d, 8, 6.0, 0.01, &mut rng);
        let src: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| rng.random_range(0.0..6.0)).collect()).collect();
        let tgt: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| rng.random_range(0.0..6.0)).collect()).collect();
        let chroms: Vec<Chromosome> = src
            .iter()
            .map(|r| Chromosome::new(r.iter().map(|x| x.round() as u32).collect()))
            .collect();
        let stats = group_stats(&chroms).unwrap();
        let src: Vec<Vec<f64>> = chroms.iter().map(as_real).collect();
        let grad = alignment_gradient(&net, &stats, &src, &tgt, 1e-8);
        let params = net.params();
        for idx in [0, 7, params.len() / 2, params.len() - 3, params.len() - 1] {
            let h = 1e-6;
            let mut plus = net.clone();
            let mut p = params.clone();
            p[idx] += h;
            plus.set_params(&p);
            let mut minus = net.clone();
            p[idx] -= 2.0 * h;
            minus.set_params(&p);
            let fd = (alignment_loss(&plus, &stats, &src, &tgt, 1e-8) - alignment_loss(&minus, &stats, &src, &tgt, 1e-8)) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / fd.abs().max(1e-8);
            assert!(rel <= 1e-4, "param {idx}: fd {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn zero_epochs_leave_net_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = TransferNet::new(2, 4, 3.0, 0.01, &mut rng);
        let before = net.clone();
        let s = stats_of(&[vec![0, 2], vec![2, 0]]);
        let rows = vec![vec![0.0, 2.0], vec![2.0, 0.0]];
        let r = train_alignment(&mut net, &s, &rows, &rows, 0, 1e-8).unwrap();
        assert_eq!(net, before);
        assert_eq!(r.loss_before, r.loss_after);
    }
}
