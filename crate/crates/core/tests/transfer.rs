mod common;

use hydrodeep::datapipe::PipelineConfig;
use hydrodeep::models::{build_model, evaluate, Arch, LayerGroup, ModelConfig, ModelGraph};
use hydrodeep::transfer::{
    apply_policy, compare_approaches, comparison_csv, finetune, retarget, CompareOptions, FreezePolicy,
    TransferPlan, TransferTarget, COMPARISON_HEADER,
};

fn source(l: usize) -> ModelGraph {
    let cfg = ModelConfig { lstm_layers: 2, ..ModelConfig::small(Arch::Hydrodeep, l, 5) };
    build_model(&cfg, 17).unwrap()
}

fn non_adapter(m: &ModelGraph) -> Vec<(String, Vec<u64>)> {
    m.params()
        .ids()
        .filter(|&id| m.group_of(id) != LayerGroup::InputAdapter)
        .map(|id| (m.params().name(id).to_string(), m.params().value(id).data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn group_bits(m: &ModelGraph, group: LayerGroup) -> Vec<u64> {
    m.params()
        .ids()
        .filter(|&id| m.group_of(id) == group)
        .flat_map(|id| m.params().value(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn retarget_copies_everything_but_the_adapter() {
    let src = source(4);
    let same = retarget(&src, 4, 99).unwrap();
    assert_eq!(non_adapter(&same), non_adapter(&src));
    let wider = retarget(&src, 9, 99).unwrap();
    assert_eq!(non_adapter(&wider), non_adapter(&src));
    let adapter = |m: &ModelGraph| m.group_param_count(LayerGroup::InputAdapter);
    assert_eq!(wider.param_count() - src.param_count(), adapter(&wider) - adapter(&src));
    assert!(retarget(&src, 0, 1).is_err());
}

#[test]
fn retarget_resets_optimizer_state() {
    let mut src = source(3);
    let w = common::watershed(3, 120, 4, 0.0);
    let prep = common::prepared(&w, 5);
    let tc = hydrodeep::models::TrainConfig { epochs: 1, batch_size: 16, ..Default::default() };
    hydrodeep::models::train(&mut src, &prep.train, None, &tc).unwrap();
    let t = retarget(&src, 3, 0).unwrap();
    for id in t.params().ids() {
        assert_eq!(t.params().step_count(id), 0);
        let (m, v) = t.params().moments(id);
        assert!(m.data().iter().chain(v.data()).all(|&x| x == 0.0));
        assert!(t.params().trainable(id));
    }
}

#[test]
fn retargeted_model_runs_on_published_grid_counts() {
    let src = source(29);
    for l in [32, 34, 39, 61, 65] {
        let w = common::watershed(l, 60, l as u64, 0.1);
        let prep = common::prepared(&w, 5);
        let model = retarget(&src, l, 5).unwrap();
        let report = evaluate(&model, &prep.test, &prep.scaler).unwrap();
        assert!(report.nse.is_finite(), "L={l}");
    }
}

#[test]
fn policies_set_flags_idempotently() {
    let mut m = source(3);
    apply_policy(&mut m, FreezePolicy::T2);
    assert!(m.params().ids().all(|id| m.params().trainable(id)));
    apply_policy(&mut m, FreezePolicy::T3);
    let flags: Vec<bool> = m.params().ids().map(|id| m.params().trainable(id)).collect();
    for id in m.params().ids() {
        assert_eq!(m.params().trainable(id), m.group_of(id) != LayerGroup::Spatial);
    }
    apply_policy(&mut m, FreezePolicy::T3);
    assert_eq!(flags, m.params().ids().map(|id| m.params().trainable(id)).collect::<Vec<_>>());
}

#[test]
fn frozen_groups_survive_finetuning_bit_for_bit() {
    let src = source(4);
    let w = common::watershed(6, 150, 8, 0.1);
    let target = common::prepared(&w, 5);
    for policy in [FreezePolicy::T1, FreezePolicy::T3, FreezePolicy::T4, FreezePolicy::T2] {
        let plan = TransferPlan { policy, budget_epochs: 3, batch_size: 16, ..TransferPlan::default() };
        let out = finetune(&src, &target, &plan).unwrap();
        assert_eq!(out.history.epochs.len(), 3);
        for g in policy.frozen_groups() {
            assert_eq!(group_bits(&out.model, g), group_bits(&src, g), "{policy} {g:?}");
        }
        for &g in policy.trainable_groups() {
            if g != LayerGroup::InputAdapter && out.model.group_param_count(g) > 0 {
                assert_ne!(group_bits(&out.model, g), group_bits(&src, g), "{policy} {g:?} should move");
            }
        }
    }
}

#[test]
fn zero_budget_scores_the_retargeted_model() {
    let src = source(4);
    let w = common::watershed(5, 120, 2, 0.1);
    let target = common::prepared(&w, 5);
    let plan = TransferPlan { budget_epochs: 0, seed: 3, ..TransferPlan::default() };
    let out = finetune(&src, &target, &plan).unwrap();
    assert!(out.history.epochs.is_empty());
    let direct = evaluate(&retarget(&src, 5, 3).unwrap(), &target.test, &target.scaler).unwrap();
    assert_eq!(out.report, direct);
}

#[test]
fn lag_mismatch_is_rejected() {
    let src = source(4);
    let w = common::watershed(4, 120, 2, 0.1);
    let target = hydrodeep::datapipe::prepare(&w.grid, &w.series, &PipelineConfig { lag: 6, ..Default::default() }).unwrap();
    assert!(finetune(&src, &target, &TransferPlan::default()).is_err());
}

#[test]
fn comparison_table_shape() {
    let src = source(4);
    let same = common::watershed(4, 100, 3, 0.1);
    let other = common::watershed(7, 100, 4, 0.1);
    let (a, b) = (common::prepared(&same, 5), common::prepared(&other, 5));
    let targets = [TransferTarget { name: "same".into(), data: &a }, TransferTarget { name: "wide".into(), data: &b }];
    let opts = CompareOptions {
        policies: FreezePolicy::ALL.to_vec(),
        plan: TransferPlan { budget_epochs: 1, ..TransferPlan::default() },
        full_epochs: Some(2),
    };
    let rows = compare_approaches(&src, &targets, &opts).unwrap();
    let labels: Vec<(&str, &str)> = rows.iter().map(|r| (r.target.as_str(), r.policy.as_str())).collect();
    assert_eq!(
        labels,
        [
            ("same", "scratch"),
            ("same", "scratch_full"),
            ("same", "T1"),
            ("same", "T2"),
            ("same", "T3"),
            ("same", "T4"),
            ("same", "T1_strict"),
            ("wide", "scratch"),
            ("wide", "scratch_full"),
            ("wide", "T1"),
            ("wide", "T2"),
            ("wide", "T3"),
            ("wide", "T4"),
        ]
    );
    let csv = comparison_csv(&rows);
    assert!(csv.starts_with(&format!("{COMPARISON_HEADER}\n")));
    assert_eq!(csv.lines().count(), rows.len() + 1);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8));
}

#[test]
#[ignore = "does not hold on the synthetic generator: T2 >= T1 in 2 of 5 seeds; run with --ignored"]
fn full_finetune_beats_adapter_only_on_temporal_shift() {
    use hydrodeep::models::{train, TrainConfig};
    use hydrodeep::synth::{make_transfer_pair, ShiftMode, SynthSpec};

    let mut wins = 0;
    let mut seen = Vec::new();
    for seed in 1..=5u64 {
        let spec = SynthSpec { grid_count: 8, days: 1000, seed, ..SynthSpec::default() };
        let (src_w, tgt_w) = make_transfer_pair(&spec, ShiftMode::TemporalShift, seed + 1000).unwrap();
        let src = common::prepared(&src_w, 7);
        let target = common::prepared(&tgt_w, 7);
        let mut model = build_model(&ModelConfig { grid_count: 8, ..ModelConfig::default() }, seed).unwrap();
        train(&mut model, &src.train, Some(&src.val), &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
        let nse = |policy| {
            let plan = TransferPlan { policy, budget_epochs: 20, seed, ..TransferPlan::default() };
            finetune(&model, &target, &plan).unwrap().report.nse
        };
        let (t2, t1) = (nse(FreezePolicy::T2), nse(FreezePolicy::T1));
        wins += usize::from(t2 >= t1);
        seen.push((t2, t1));
    }
    assert!(wins >= 4, "T2 >= T1 in {wins} of 5 seeds: {seen:?}");
}
