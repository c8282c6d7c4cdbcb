//! Layer-balanced bit allocation under an average bits-per-weight budget.
//!
//! Every tensor gets one type from an ascending menu. The predicted error of a
//! tensor is `max(S, 0) · 2^(-2b)`, errors are summed per layer into `E_ℓ`, and
//! the objective is `Σ_ℓ E_ℓ²`. The greedy solver starts from the cheapest type
//! and repeatedly applies the single one-step upgrade with the best
//! `(E_ℓ² - Ẽ_ℓ²) / Δbits` until no upgrade fits the budget.

use serde::{Deserialize, Serialize};

use crate::naming::ModuleTag;
use crate::quantcore::QuantType;
use crate::sensitivity::SensitivityTable;

/// Slack on the budget comparison.
pub const BUDGET_EPS: f64 = 1e-9;

/// Largest search space [`brute_force_allocate`] accepts.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocError {
    #[error("type menu is empty")]
    EmptyMenu,
    #[error("type menu must be strictly ascending in bit width")]
    UnsortedMenu,
    #[error("budget {budget} bpw is below the cheapest assignment ({cheapest} bpw)")]
    Infeasible { budget: f64, cheapest: f64 },
    #[error("no tensors to allocate")]
    NoTensors,
    #[error("tensor {0} has zero elements")]
    EmptyTensor(String),
    #[error("instance too large for exhaustive search: {0} assignments")]
    TooLarge(u128),
    #[error("assignment covers {got} tensors, instance has {expected}")]
    Unassigned { expected: usize, got: usize },
}

/// How bits-per-weight are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverheadModel {
    /// Code bits only.
    #[default]
    ZeroOverhead,
    /// Code bits plus scale, zero-point and super-block parameter storage.
    Storage,
}

impl OverheadModel {
    pub fn effective_bpw(&self, t: &QuantType) -> f64 {
        let b = f64::from(t.bit_width());
        match self {
            OverheadModel::ZeroOverhead => b,
            OverheadModel::Storage => {
                let bs = t.block_size() as f64;
                let zero_bits = if t.is_symmetric() { 0.0 } else { 8.0 };
                if t.superblock_size() == 0 {
                    b + (32.0 + zero_bits) / bs
                } else {
                    b + (8.0 + zero_bits) / bs + 64.0 / (bs * t.superblock_size() as f64)
                }
            }
        }
    }
}

/// One tensor of an allocation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocItem {
    pub name: String,
    pub layer: usize,
    pub module: ModuleTag,
    pub score: f64,
    pub numel: usize,
}

impl AllocItem {
    /// Sensitivity used for error prediction; negative scores count as zero.
    pub fn effective_score(&self) -> f64 {
        self.score.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationInstance {
    pub items: Vec<AllocItem>,
    pub menu: Vec<QuantType>,
    pub budget: f64,
    pub overhead: OverheadModel,
}

impl AllocationInstance {
    pub fn from_table(table: &SensitivityTable, menu: Vec<QuantType>, budget: f64, overhead: OverheadModel) -> Self {
        let items = table
            .entries
            .iter()
            .map(|e| AllocItem {
                name: e.name.clone(),
                layer: e.layer,
                module: e.module,
                score: e.score,
                numel: e.numel,
            })
            .collect();
        Self { items, menu, budget, overhead }
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if self.menu.is_empty() {
            return Err(AllocError::EmptyMenu);
        }
        if self.menu.windows(2).any(|w| w[0].bit_width() >= w[1].bit_width()) {
            return Err(AllocError::UnsortedMenu);
        }
        if self.items.is_empty() {
            return Err(AllocError::NoTensors);
        }
        if let Some(e) = self.items.iter().find(|i| i.numel == 0) {
            return Err(AllocError::EmptyTensor(e.name.clone()));
        }
        let cheapest = self.bpw(&vec![0; self.items.len()]);
        if cheapest > self.budget + BUDGET_EPS {
            return Err(AllocError::Infeasible { budget: self.budget, cheapest });
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.items.iter().map(|i| i.layer).max().unwrap_or(0)
    }

    fn eff(&self, choice: usize) -> f64 {
        self.overhead.effective_bpw(&self.menu[choice])
    }

    /// Size-weighted mean effective bpw of menu-index choices.
    pub fn bpw(&self, choices: &[usize]) -> f64 {
        let total: f64 = self.items.iter().map(|i| i.numel as f64).sum();
        let bits: f64 = self.items.iter().zip(choices).map(|(i, &c)| self.eff(c) * i.numel as f64).sum();
        bits / total
    }

    /// `E_ℓ` for menu-index choices, layers `1..=L` at positions `0..L`.
    pub fn layer_errors(&self, choices: &[usize]) -> Vec<f64> {
        let mut e = vec![0.0; self.layer_count()];
        for (item, &c) in self.items.iter().zip(choices) {
            e[item.layer - 1] += item.effective_score() * self.menu[c].error_factor();
        }
        e
    }

    pub fn objective(&self, choices: &[usize]) -> f64 {
        self.layer_errors(choices).iter().map(|e| e * e).sum()
    }

    fn layer_error(&self, layer: usize, choices: &[usize], patch: Option<(usize, usize)>) -> f64 {
        let mut e = 0.0;
        for (idx, (item, &c)) in self.items.iter().zip(choices).enumerate() {
            if item.layer == layer {
                let c = match patch {
                    Some((p, nc)) if p == idx => nc,
                    _ => c,
                };
                e += item.effective_score() * self.menu[c].error_factor();
            }
        }
        e
    }

    pub fn assignment(&self, choices: Vec<usize>) -> Assignment {
        let layer_errors = self.layer_errors(&choices);
        Assignment {
            tensors: self
                .items
                .iter()
                .zip(&choices)
                .map(|(i, &c)| AssignedTensor { name: i.name.clone(), qtype: self.menu[c], numel: i.numel })
                .collect(),
            achieved_bpw: self.bpw(&choices),
            objective: layer_errors.iter().map(|e| e * e).sum(),
            layer_errors,
            clamped: self.items.iter().filter(|i| i.score < 0.0).map(|i| i.name.clone()).collect(),
            choices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedTensor {
    pub name: String,
    pub qtype: QuantType,
    pub numel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub tensors: Vec<AssignedTensor>,
    /// Menu index chosen for each tensor.
    pub choices: Vec<usize>,
    pub achieved_bpw: f64,
    pub objective: f64,
    pub layer_errors: Vec<f64>,
    /// Tensors whose negative sensitivity was clamped to zero.
    pub clamped: Vec<String>,
}

impl Assignment {
    pub fn qtype_of(&self, name: &str) -> Option<QuantType> {
        self.tensors.iter().find(|t| t.name == name).map(|t| t.qtype)
    }

    pub fn distinct_bit_widths(&self) -> Vec<u8> {
        let mut b: Vec<u8> = self.tensors.iter().map(|t| t.qtype.bit_width()).collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

/// `E_ℓ` for an explicit per-tensor type list.
pub fn layer_errors(instance: &AllocationInstance, types: &[QuantType]) -> Result<Vec<f64>, AllocError> {
    if types.len() != instance.items.len() {
        return Err(AllocError::Unassigned { expected: instance.items.len(), got: types.len() });
    }
    let layers = instance.layer_count();
    let mut e = vec![0.0; layers];
    for (item, t) in instance.items.iter().zip(types) {
        e[item.layer - 1] += item.effective_score() * t.error_factor();
    }
    Ok(e)
}

/// Size-weighted mean effective bpw.
pub fn achieved_bpw(types: &[QuantType], sizes: &[usize], overhead: OverheadModel) -> f64 {
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let bits: f64 = types.iter().zip(sizes).map(|(t, &n)| overhead.effective_bpw(t) * n as f64).sum();
    bits / total
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    item: usize,
    ratio: f64,
    layer: usize,
    module: ModuleTag,
    bits: u8,
}

impl Candidate {
    /// True when `self` should be preferred over `other`.
    fn beats(&self, other: &Candidate) -> bool {
        if self.ratio != other.ratio {
            return self.ratio > other.ratio;
        }
        (self.layer, self.module, self.bits, self.item) < (other.layer, other.module, other.bits, other.item)
    }
}

/// Greedy gain-per-bit allocation.
pub fn greedy_allocate(instance: &AllocationInstance) -> Result<Assignment, AllocError> {
    instance.validate()?;
    let n = instance.items.len();
    let last = instance.menu.len() - 1;
    let total: f64 = instance.items.iter().map(|i| i.numel as f64).sum();
    let mut choices = vec![0usize; n];
    let mut bits: f64 = instance.items.iter().map(|i| instance.eff(0) * i.numel as f64).sum();
    loop {
        let mut best: Option<Candidate> = None;
        for (idx, item) in instance.items.iter().enumerate() {
            let cur = choices[idx];
            if cur == last {
                continue;
            }
            let delta = (instance.eff(cur + 1) - instance.eff(cur)) * item.numel as f64;
            if (bits + delta) / total > instance.budget + BUDGET_EPS {
                continue;
            }
            let old = instance.layer_error(item.layer, &choices, None);
            let new = instance.layer_error(item.layer, &choices, Some((idx, cur + 1)));
            let cand = Candidate {
                item: idx,
                ratio: (old * old - new * new) / delta,
                layer: item.layer,
                module: item.module,
                bits: instance.menu[cur].bit_width(),
            };
            if best.map_or(true, |b| cand.beats(&b)) {
                best = Some(cand);
            }
        }
        let Some(c) = best else { break };
        let cur = choices[c.item];
        bits += (instance.eff(cur + 1) - instance.eff(cur)) * instance.items[c.item].numel as f64;
        choices[c.item] = cur + 1;
    }
    Ok(instance.assignment(choices))
}

/// Runs [`greedy_allocate`] separately on each group of tensors, each group
/// held to the full budget on its own.
pub fn greedy_allocate_grouped(
    instance: &AllocationInstance,
    group_of: impl Fn(&AllocItem) -> String,
) -> Result<Assignment, AllocError> {
    instance.validate()?;
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, item) in instance.items.iter().enumerate() {
        let g = group_of(item);
        match groups.iter_mut().find(|(k, _)| *k == g) {
            Some((_, v)) => v.push(i),
            None => groups.push((g, vec![i])),
        }
    }
    let mut choices = vec![0usize; instance.items.len()];
    for (_, idx) in groups {
        let sub = AllocationInstance {
            items: idx.iter().map(|&i| instance.items[i].clone()).collect(),
            menu: instance.menu.clone(),
            budget: instance.budget,
            overhead: instance.overhead,
        };
        // Layer indices stay global so the sub-instance needs no renumbering.
        let a = greedy_allocate(&sub)?;
        for (k, &i) in idx.iter().enumerate() {
            choices[i] = a.choices[k];
        }
    }
    Ok(instance.assignment(choices))
}

/// Exact minimizer by enumeration. Among equal objectives the lexicographically
/// greatest menu-index vector wins (tensor 0 most significant), which prefers
/// upgrades on earlier tensors like the greedy tie-break does.
pub fn brute_force_allocate(instance: &AllocationInstance) -> Result<Assignment, AllocError> {
    brute_force_with_limit(instance, BRUTE_FORCE_LIMIT, |e| e.iter().map(|x| x * x).sum())
}

/// Enumeration with a caller-supplied objective over the layer errors.
pub fn brute_force_by(
    instance: &AllocationInstance,
    objective: impl Fn(&[f64]) -> f64,
) -> Result<Assignment, AllocError> {
    brute_force_with_limit(instance, BRUTE_FORCE_LIMIT, objective)
}

/// Enumeration with a caller-chosen cap on the search space.
pub fn brute_force_with_limit(
    instance: &AllocationInstance,
    limit: u64,
    objective: impl Fn(&[f64]) -> f64,
) -> Result<Assignment, AllocError> {
    instance.validate()?;
    let n = instance.items.len();
    let m = instance.menu.len();
    let space = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if space > u128::from(limit) {
        return Err(AllocError::TooLarge(space));
    }
    let total: f64 = instance.items.iter().map(|i| i.numel as f64).sum();
    let bits: Vec<Vec<f64>> =
        instance.items.iter().map(|it| (0..m).map(|c| instance.eff(c) * it.numel as f64).collect()).collect();
    let err: Vec<Vec<f64>> = instance
        .items
        .iter()
        .map(|it| instance.menu.iter().map(|t| it.effective_score() * t.error_factor()).collect())
        .collect();
    let layer_of: Vec<usize> = instance.items.iter().map(|it| it.layer - 1).collect();
    let mut e = vec![0.0; instance.layer_count()];
    let mut choices = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        // Same summation order as `bpw`, so feasibility agrees bit for bit.
        let used: f64 = (0..n).map(|i| bits[i][choices[i]]).sum::<f64>() / total;
        if used <= instance.budget + BUDGET_EPS {
            e.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                e[layer_of[i]] += err[i][choices[i]];
            }
            let obj = objective(&e);
            if best.as_ref().map_or(true, |(b, _)| obj <= *b) {
                best = Some((obj, choices.clone()));
            }
        }
        // Odometer increment, last tensor fastest.
        let mut k = n;
        loop {
            if k == 0 {
                let (_, c) = best.expect("cheapest assignment is feasible");
                return Ok(instance.assignment(c));
            }
            k -= 1;
            choices[k] += 1;
            if choices[k] < m {
                break;
            }
            choices[k] = 0;
        }
    }
}
