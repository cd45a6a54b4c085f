//! Moving a trained model to another watershed: input-adapter retargeting
//! and layer-group freeze policies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datapipe::Prepared;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::models::{build_model, evaluate, train, History, LayerGroup, ModelConfig, ModelGraph, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FreezePolicy {
    /// Keep spatial and temporal layers; train the adapter and head.
    T1,
    /// Train everything.
    T2,
    /// Freeze the spatial layers.
    T3,
    /// Freeze the temporal layers.
    T4,
}

impl FreezePolicy {
    pub const ALL: [FreezePolicy; 4] = [FreezePolicy::T1, FreezePolicy::T2, FreezePolicy::T3, FreezePolicy::T4];

    pub fn trainable_groups(self) -> &'static [LayerGroup] {
        use LayerGroup::*;
        match self {
            FreezePolicy::T1 => &[InputAdapter, Head],
            FreezePolicy::T2 => &[InputAdapter, Spatial, Temporal, Head],
            FreezePolicy::T3 => &[InputAdapter, Temporal, Head],
            FreezePolicy::T4 => &[InputAdapter, Spatial, Head],
        }
    }

    pub fn frozen_groups(self) -> Vec<LayerGroup> {
        LayerGroup::ALL.into_iter().filter(|g| !self.trainable_groups().contains(g)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            FreezePolicy::T1 => "T1",
            FreezePolicy::T2 => "T2",
            FreezePolicy::T3 => "T3",
            FreezePolicy::T4 => "T4",
        }
    }
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FreezePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FreezePolicy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown freeze policy {s:?}")))
    }
}

/// Copy of `source` whose input adapter accepts `target_l` grids. Every
/// other parameter is copied bit for bit; the adapter is freshly drawn from
/// `seed`. Optimizer state is cleared and every group made trainable.
pub fn retarget(source: &ModelGraph, target_l: usize, seed: u64) -> Result<ModelGraph> {
    if target_l == 0 {
        return Err(Error::param("target grid count must be at least 1"));
    }
    let cfg = ModelConfig { grid_count: target_l, ..source.config().clone() };
    let mut model = build_model(&cfg, seed)?;
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        if model.group_of(id) == LayerGroup::InputAdapter {
            continue;
        }
        let name = model.params().name(id).to_string();
        let src = source
            .params()
            .id(&name)
            .ok_or_else(|| Error::State(format!("source model has no parameter {name}")))?;
        *model.params_mut().value_mut(id) = source.params().value(src).clone();
    }
    model.params_mut().reset_optimizer();
    model.preprocessing = source.preprocessing.clone();
    Ok(model)
}

/// Sets trainable flags group by group. Idempotent.
pub fn apply_policy(model: &mut ModelGraph, policy: FreezePolicy) {
    for group in LayerGroup::ALL {
        model.set_group_trainable(group, policy.trainable_groups().contains(&group));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferPlan {
    pub policy: FreezePolicy,
    /// Epochs over the target training split.
    pub budget_epochs: usize,
    /// Seeds the fresh adapter, batch order and dropout.
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Keep the parameters of the epoch with the lowest target validation
    /// loss instead of the last epoch. The full budget is always trained.
    pub restore_best: bool,
}

impl Default for TransferPlan {
    fn default() -> Self {
        let tc = TrainConfig::default();
        Self {
            policy: FreezePolicy::T2,
            budget_epochs: 20,
            seed: 42,
            batch_size: tc.batch_size,
            learning_rate: tc.adam.learning_rate,
            restore_best: true,
        }
    }
}

impl TransferPlan {
    fn train_config(&self, epochs: usize) -> TrainConfig {
        // patience equal to the budget never stops early, it only restores
        let patience = self.restore_best.then_some(epochs.max(1));
        let mut tc =
            TrainConfig { epochs, batch_size: self.batch_size, seed: self.seed, patience, ..TrainConfig::default() };
        tc.adam.learning_rate = self.learning_rate;
        tc
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: ModelGraph,
    pub history: History,
    pub report: MetricReport,
}

fn check_lag(source: &ModelGraph, target: &Prepared) -> Result<()> {
    if target.train.lag != source.config().lag {
        return Err(Error::dim(format!(
            "source model uses lag {}, target windows use lag {}",
            source.config().lag,
            target.train.lag
        )));
    }
    Ok(())
}

fn with_target_scaler(model: &mut ModelGraph, target: &Prepared) {
    if let Some(pre) = model.preprocessing.as_mut() {
        pre.scaler = target.scaler.clone();
    }
}

/// Retarget, freeze, train for the budget on the target training split and
/// score on the target test split.
pub fn finetune(source: &ModelGraph, target: &Prepared, plan: &TransferPlan) -> Result<FinetuneOutcome> {
    check_lag(source, target)?;
    let mut model = retarget(source, target.train.grid_count, plan.seed)?;
    with_target_scaler(&mut model, target);
    apply_policy(&mut model, plan.policy);
    let history = if plan.budget_epochs == 0 {
        History::default()
    } else {
        train(&mut model, &target.train, Some(&target.val), &plan.train_config(plan.budget_epochs))?
    };
    let report = evaluate(&model, &target.test, &target.scaler)?;
    Ok(FinetuneOutcome { model, history, report })
}

/// The source model applied unchanged; only possible when grid counts match.
pub fn strict_t1(source: &ModelGraph, target: &Prepared) -> Result<MetricReport> {
    check_lag(source, target)?;
    if target.train.grid_count != source.config().grid_count {
        return Err(Error::param(format!(
            "untrained transfer needs {} grids, target has {}",
            source.config().grid_count,
            target.train.grid_count
        )));
    }
    evaluate(source, &target.test, &target.scaler)
}

/// A fresh model of the source's architecture trained only on the target.
pub fn scratch(source_cfg: &ModelConfig, target: &Prepared, plan: &TransferPlan, epochs: usize) -> Result<MetricReport> {
    let cfg = ModelConfig { grid_count: target.train.grid_count, ..source_cfg.clone() };
    let mut model = build_model(&cfg, plan.seed)?;
    if epochs > 0 {
        train(&mut model, &target.train, Some(&target.val), &plan.train_config(epochs))?;
    }
    evaluate(&model, &target.test, &target.scaler)
}

pub struct TransferTarget<'a> {
    pub name: String,
    pub data: &'a Prepared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub target: String,
    pub policy: String,
    pub nse: f64,
    pub pbias_pct: f64,
    pub rsr: f64,
    pub grids: usize,
    pub budget_epochs: usize,
    pub seed: u64,
}

pub const COMPARISON_HEADER: &str = "target,policy,nse,pbias_pct,rsr,grids,budget_epochs,seed";

impl ComparisonRow {
    fn new(target: &str, policy: &str, r: &MetricReport, grids: usize, budget: usize, seed: u64) -> Self {
        Self {
            target: target.into(),
            policy: policy.into(),
            nse: r.nse,
            pbias_pct: r.pbias,
            rsr: r.rsr,
            grids,
            budget_epochs: budget,
            seed,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.target, self.policy, self.nse, self.pbias_pct, self.rsr, self.grids, self.budget_epochs, self.seed
        )
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct CompareOptions {
    pub policies: Vec<FreezePolicy>,
    pub plan: TransferPlan,
    /// Also train a fresh model for this many epochs (`scratch_full`).
    pub full_epochs: Option<usize>,
}

/// Per target: a fresh model trained for the budget (`scratch`), optionally
/// one trained for longer (`scratch_full`), each requested policy, and the
/// untrained source model (`T1_strict`) when grid counts match.
pub fn compare_approaches(
    source: &ModelGraph,
    targets: &[TransferTarget<'_>],
    opts: &CompareOptions,
) -> Result<Vec<ComparisonRow>> {
    let plan = &opts.plan;
    let budget = plan.budget_epochs;
    let mut rows = Vec::new();
    for t in targets {
        let grids = t.data.train.grid_count;
        let r = scratch(source.config(), t.data, plan, budget)?;
        rows.push(ComparisonRow::new(&t.name, "scratch", &r, grids, budget, plan.seed));
        if let Some(full) = opts.full_epochs {
            let r = scratch(source.config(), t.data, plan, full)?;
            rows.push(ComparisonRow::new(&t.name, "scratch_full", &r, grids, full, plan.seed));
        }
        for &policy in &opts.policies {
            let out = finetune(source, t.data, &TransferPlan { policy, ..plan.clone() })?;
            rows.push(ComparisonRow::new(&t.name, policy.name(), &out.report, grids, budget, plan.seed));
        }
        if grids == source.config().grid_count {
            let r = strict_t1(source, t.data)?;
            rows.push(ComparisonRow::new(&t.name, "T1_strict", &r, grids, 0, plan.seed));
        }
    }
    Ok(rows)
}
