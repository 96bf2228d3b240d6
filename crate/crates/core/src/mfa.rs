//! Adaptive multi-scale loss aggregation.
//!
//! Every non-empty subset of the prediction heads is summed into one map and
//! scored with the base loss. Subsets are grouped by size into sets
//! `S1..Sn`; each set contributes a loss `L_k`, and the training loss is
//! `Σ W_k L_k` with weights that move between epochs.

use mcfnet_tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::loss::{dice_ce_from_logits, LossConfig};
use crate::nn::scalar_like;
use crate::{Error, Result};

/// Head subsets grouped by size: `sets[k]` holds every subset of size `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSets {
    pub n_heads: usize,
    pub sets: Vec<Vec<Vec<usize>>>,
}

impl SubsetSets {
    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.sets.iter().flatten()
    }
}

/// All non-empty subsets of `0..n_heads`, lexicographic within each size.
pub fn enumerate_subsets(n_heads: usize) -> Result<SubsetSets> {
    if n_heads < 1 {
        return Err(Error::InvalidArgument("need at least one prediction head".into()));
    }
    let mut sets = Vec::with_capacity(n_heads);
    for k in 1..=n_heads {
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n_heads - k) else { break };
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
        sets.push(out);
    }
    Ok(SubsetSets { n_heads, sets })
}

/// Elementwise sum of the maps named by `subset`.
pub fn subset_prediction<'g>(subset: &[usize], maps: &[Var<'g>]) -> Result<Var<'g>> {
    let (&first, rest) = subset.split_first().ok_or_else(|| Error::InvalidArgument("empty subset".into()))?;
    let get = |i: usize| maps.get(i).ok_or_else(|| Error::InvalidArgument(format!("head {i} out of range")));
    let mut acc = get(first)?.clone();
    for &i in rest {
        let m = get(i)?;
        if m.shape() != acc.shape() {
            return Err(Error::Shape(format!("head maps differ: {:?} vs {:?}", acc.shape(), m.shape())));
        }
        acc = acc.add(m);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetReduction {
    #[default]
    Sum,
    Mean,
}

/// Loss of one set and the loss of each of its subsets.
pub struct SetLoss<'g> {
    pub total: Var<'g>,
    pub per_subset: Vec<f64>,
}

pub fn set_loss<'g>(
    set: &[Vec<usize>],
    maps: &[Var<'g>],
    target: &Tensor,
    loss: &LossConfig,
    reduction: SetReduction,
) -> Result<SetLoss<'g>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty subset set".into()));
    }
    let mut total: Option<Var<'g>> = None;
    let mut per_subset = Vec::with_capacity(set.len());
    for subset in set {
        let l = dice_ce_from_logits(&subset_prediction(subset, maps)?, target, loss)?;
        per_subset.push(l.item());
        total = Some(match total {
            None => l,
            Some(t) => t.add(&l),
        });
    }
    let mut total = total.expect("non-empty set");
    if reduction == SetReduction::Mean {
        total = total.scale(1.0 / set.len() as f64);
    }
    Ok(SetLoss { total, per_subset })
}

/// `Σ W_k L_k` with the weights held constant.
pub fn total_loss<'g>(set_losses: &[Var<'g>], weights: &[f64]) -> Result<Var<'g>> {
    if set_losses.len() != weights.len() || set_losses.is_empty() {
        return Err(Error::Shape(format!("{} set losses for {} weights", set_losses.len(), weights.len())));
    }
    if let Some(l) = set_losses.iter().find(|l| !l.item().is_finite()) {
        return Err(Error::NonFinite(format!("set loss {}", l.item())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite(format!("set weights {weights:?}")));
    }
    let g = set_losses[0].graph();
    let mut acc: Option<Var<'g>> = None;
    for (l, &w) in set_losses.iter().zip(weights) {
        let term = l.mul(&scalar_like(g, w, l.ndim()));
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term),
        });
    }
    Ok(acc.expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    /// Shift weight towards sets with lower loss.
    #[default]
    InverseLossEma,
    /// Shift weight towards sets with higher loss.
    FocusHard,
    /// Never change the weights.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfaConfig {
    pub enabled: bool,
    pub policy: WeightPolicy,
    pub rho: f64,
    pub tau: f64,
    pub initial_weight: f64,
    pub reduction: SetReduction,
}

impl Default for MfaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            policy: WeightPolicy::InverseLossEma,
            rho: 0.1,
            tau: 1.0,
            initial_weight: 0.25,
            reduction: SetReduction::Sum,
        }
    }
}

impl MfaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("mfa rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.tau > 0.0) || !(self.initial_weight > 0.0) {
            return Err(Error::Config("mfa tau and initial_weight must be positive".into()));
        }
        Ok(())
    }
}

/// Smallest temperature used by the weight update.
pub const TAU_FLOOR: f64 = 0.05;

/// Set weights and the rule that moves them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfaState {
    pub weights: Vec<f64>,
    pub policy: WeightPolicy,
    pub rho: f64,
    pub tau: f64,
}

impl MfaState {
    pub fn new(n_sets: usize, cfg: &MfaConfig) -> Self {
        Self { weights: vec![cfg.initial_weight; n_sets], policy: cfg.policy, rho: cfg.rho, tau: cfg.tau }
    }

    /// Epoch-end update from the mean set losses of that epoch.
    pub fn update(&mut self, epoch_losses: &[f64]) -> Result<()> {
        if epoch_losses.len() != self.weights.len() {
            return Err(Error::Shape(format!("{} epoch losses for {} weights", epoch_losses.len(), self.weights.len())));
        }
        if epoch_losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("epoch set losses {epoch_losses:?}")));
        }
        let sign = match self.policy {
            WeightPolicy::Fixed => return Ok(()),
            WeightPolicy::InverseLossEma => -1.0,
            WeightPolicy::FocusHard => 1.0,
        };
        let target = softmax_target(epoch_losses, self.weights.iter().sum(), sign, self.tau);
        for (w, t) in self.weights.iter_mut().zip(target) {
            *w = (1.0 - self.rho) * *w + self.rho * t;
        }
        Ok(())
    }
}

fn softmax_target(losses: &[f64], total: f64, sign: f64, tau: f64) -> Vec<f64> {
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let std = (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = losses.iter().map(|l| if std > 0.0 { (l - mean) / std } else { 0.0 }).collect();
    let t = tau.max(TAU_FLOOR);
    let logits: Vec<f64> = z.iter().map(|z| sign * z / t).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| total * v / s).collect()
}

/// Values reported for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MfaLossReport {
    pub set_losses: Vec<f64>,
    pub total: f64,
    pub subset_losses: Vec<(Vec<usize>, f64)>,
}

/// Full aggregated loss for `maps` against a one-hot `target`.
pub fn mfa_loss<'g>(
    maps: &[Var<'g>],
    target: &Tensor,
    state: &MfaState,
    subsets: &SubsetSets,
    loss: &LossConfig,
    reduction: SetReduction,
) -> Result<(Var<'g>, MfaLossReport)> {
    if subsets.n_heads != maps.len() || state.weights.len() != subsets.sets.len() {
        return Err(Error::Shape(format!(
            "{} maps, {} heads in subsets, {} weights",
            maps.len(),
            subsets.n_heads,
            state.weights.len()
        )));
    }
    let mut set_vars = Vec::with_capacity(subsets.sets.len());
    let mut subset_losses = Vec::with_capacity(subsets.total());
    for set in &subsets.sets {
        let sl = set_loss(set, maps, target, loss, reduction)?;
        subset_losses.extend(set.iter().cloned().zip(sl.per_subset));
        set_vars.push(sl.total);
    }
    let total = total_loss(&set_vars, &state.weights)?;
    let report = MfaLossReport {
        set_losses: set_vars.iter().map(Var::item).collect(),
        total: total.item(),
        subset_losses,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcfnet_tensor::{init, Graph};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(n: usize) -> Vec<Vec<Vec<usize>>> {
        let mut sets = vec![Vec::new(); n];
        for mask in 1u32..(1 << n) {
            let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            sets[s.len() - 1].push(s);
        }
        for s in &mut sets {
            s.sort();
        }
        sets
    }

    #[test]
    fn four_heads_give_the_fifteen_subsets() {
        let s = enumerate_subsets(4).unwrap();
        let sizes: Vec<usize> = s.sets.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 6, 4, 1]);
        assert_eq!(s.total(), 15);
        assert_eq!(s.sets[1], vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(s.sets[2], vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 3], vec![1, 2, 3]]);
        assert_eq!(enumerate_subsets(1).unwrap().sets, vec![vec![vec![0]]]);
        assert_eq!(enumerate_subsets(3).unwrap().sets.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 1]);
        assert!(enumerate_subsets(0).is_err());
    }

    #[test]
    fn matches_powerset_up_to_six() {
        for n in 1..=6 {
            assert_eq!(enumerate_subsets(n).unwrap().sets, brute_force(n));
        }
    }

    #[test]
    fn subset_prediction_basics() {
        let g = Graph::inference();
        let p = init::normal(&[1, 2, 3, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let maps = vec![g.constant(p.clone()), g.constant(-&p)];
        assert_eq!(subset_prediction(&[0], &maps).unwrap().to_tensor(), p);
        assert!(subset_prediction(&[0, 1], &maps).unwrap().value().iter().all(|&v| v == 0.0));
        assert!(subset_prediction(&[], &maps).is_err());
    }

    #[test]
    fn equal_losses_leave_weights_unchanged() {
        let mut st = MfaState::new(4, &MfaConfig::default());
        st.update(&[0.7; 4]).unwrap();
        assert!(st.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn reference_update_by_hand() {
        let mut st = MfaState::new(4, &MfaConfig::default());
        st.update(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        // mean 2.5, population std sqrt(1.25); z = (-1.5, -0.5, 0.5, 1.5) / sqrt(1.25).
        let sd = 1.25f64.sqrt();
        let e: Vec<f64> = [-1.5, -0.5, 0.5, 1.5].iter().map(|z: &f64| (-z / sd).exp()).collect();
        let s: f64 = e.iter().sum();
        for (w, ek) in st.weights.iter().zip(&e) {
            assert!((w - (0.9 * 0.25 + 0.1 * ek / s)).abs() < 1e-12);
        }
    }

    #[test]
    fn saturates_towards_the_minimum() {
        let cfg = MfaConfig { rho: 1.0, tau: 1e-9, ..MfaConfig::default() };
        let mut st = MfaState::new(4, &cfg);
        st.update(&[3.0, 1.0, 3.0, 3.0]).unwrap();
        assert!(st.weights[1] > 0.99);
        assert!(st.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn fixed_and_focus_hard_policies() {
        let mut fixed = MfaState::new(4, &MfaConfig { policy: WeightPolicy::Fixed, ..MfaConfig::default() });
        fixed.update(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(fixed.weights, vec![0.25; 4]);
        let mut hard = MfaState::new(4, &MfaConfig { policy: WeightPolicy::FocusHard, ..MfaConfig::default() });
        hard.update(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(hard.weights[3] > hard.weights[0]);
        assert!(hard.update(&[f64::NAN, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let g = Graph::inference();
        let ls: Vec<Var> = [4.0; 4].iter().map(|&v| g.constant(mcfnet_tensor::tensor(&[], vec![v]))).collect();
        assert!((total_loss(&ls, &[0.25; 4]).unwrap().item() - 4.0).abs() < 1e-15);
        let ls: Vec<Var> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| g.constant(mcfnet_tensor::tensor(&[], vec![v]))).collect();
        assert_eq!(total_loss(&ls, &[1.0; 4]).unwrap().item(), 10.0);
        let bad = vec![g.constant(mcfnet_tensor::tensor(&[], vec![f64::NAN]))];
        assert!(total_loss(&bad, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn updates_preserve_mass_and_positivity(
            losses in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 4), 1..30),
            rho in 0.0f64..=1.0,
            tau in 0.01f64..5.0,
        ) {
            let mut st = MfaState::new(4, &MfaConfig { rho, tau, ..MfaConfig::default() });
            for l in &losses {
                st.update(l).unwrap();
                prop_assert!((st.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(st.weights.iter().all(|&w| w > 0.0));
            }
        }

        #[test]
        fn subset_counts_are_binomial(n in 1usize..9) {
            let s = enumerate_subsets(n).unwrap();
            prop_assert_eq!(s.total(), (1usize << n) - 1);
            let mut binom = 1usize;
            for (k, set) in s.sets.iter().enumerate() {
                binom = binom * (n - k) / (k + 1);
                prop_assert_eq!(set.len(), binom);
            }
        }
    }
}
