mod common;

use common::*;
use ndarray::{s, Array2};
use proptest::prelude::*;

use opid_core::harness::run_cstage_pass;
use opid_core::{
    compress, AccumulationMode, Batch, CStageModel, CStageStats, Error, FeatureSchema, Hyperparams,
    UpdateBlock,
};

fn params(lambda: f64, rho: f64) -> Hyperparams {
    Hyperparams {
        lambda,
        rho,
        ..Hyperparams::default()
    }
}

fn stream(seed: u64, schema: &FeatureSchema, sizes: &[usize]) -> Vec<Batch> {
    let mut r = rng(seed);
    sizes
        .iter()
        .map(|&n| random_cbatch(&mut r, schema, n))
        .collect()
}

fn absorb_all(
    schema: FeatureSchema,
    h: &Hyperparams,
    mode: AccumulationMode,
    batches: &[Batch],
) -> CStageStats {
    let mut stats = CStageStats::new(schema, h, mode).unwrap();
    for b in batches {
        stats.absorb(b).unwrap();
    }
    stats
}

/// `ρI + Σ U Uᵀ` with the three column blocks written out entry by entry.
fn explicit_increment(batch: &Batch, schema: &FeatureSchema, lambda: f64) -> Array2<f64> {
    let xt = hstack(&[batch.x_v.as_ref().unwrap(), &batch.x_s]);
    let n = batch.rows();
    let dt = schema.cstage_width();
    let m = schema.stats_dim();
    let mut u = Array2::zeros((m, 3 * n));
    let sl = lambda.sqrt();
    for k in 0..n {
        for i in 0..dt {
            u[[i, k]] = xt[[k, i]];
            u[[i, 2 * n + k]] = sl * xt[[k, i]];
        }
        for i in 0..schema.d_s {
            u[[dt + i, n + k]] = batch.x_s[[k, i]];
            u[[dt + i, 2 * n + k]] = -sl * batch.x_s[[k, i]];
        }
    }
    matmul(&u, &transpose(&u))
}

#[test]
fn init_direct_is_scaled_identity() {
    let schema = FeatureSchema::new(2, 1, 0, 2).unwrap();
    assert_eq!(schema.stats_dim(), 4);
    let stats = CStageStats::new(schema, &params(1.0, 2.0), AccumulationMode::Direct).unwrap();
    assert_eq!(stats.a(), &(identity(4) * 2.0));
    assert!(stats.b().iter().all(|&v| v == 0.0));
    assert_eq!(stats.batches(), 0);
}

#[test]
fn init_inverse_is_reciprocal_identity() {
    let schema = FeatureSchema::new(2, 1, 0, 2).unwrap();
    let stats = CStageStats::new(schema, &params(1.0, 2.0), AccumulationMode::Inverse).unwrap();
    assert_eq!(stats.a(), &(identity(4) * 0.5));
}

#[test]
fn zero_rho_is_rejected() {
    let schema = FeatureSchema::new(2, 1, 0, 2).unwrap();
    for mode in [AccumulationMode::Direct, AccumulationMode::Inverse] {
        let err = CStageStats::new(schema, &params(1.0, 0.0), mode).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }
}

#[test]
fn direct_absorb_matches_explicit_update_block_expansion() {
    let schema = FeatureSchema::new(2, 3, 0, 2).unwrap();
    let batches = stream(11, &schema, &[5]);
    let stats = absorb_all(
        schema,
        &params(0.5, 1.0),
        AccumulationMode::Direct,
        &batches,
    );
    let expected = identity(schema.stats_dim()) + explicit_increment(&batches[0], &schema, 0.5);
    assert!(max_diff(stats.a(), &expected) <= 1e-12);

    let block = UpdateBlock::new(batches[0].x_tilde().view(), batches[0].x_s.view(), 0.5);
    assert_eq!(block.matrix().dim(), (schema.stats_dim(), 15));
    assert!(
        max_diff(
            &block.outer(),
            &explicit_increment(&batches[0], &schema, 0.5)
        ) <= 1e-12
    );
}

#[test]
fn inverse_absorb_matches_dense_inverse_of_direct() {
    let schema = FeatureSchema::new(2, 3, 0, 2).unwrap();
    let batches = stream(11, &schema, &[5]);
    let h = params(0.5, 1.0);
    let direct = absorb_all(schema, &h, AccumulationMode::Direct, &batches);
    let inverse = absorb_all(schema, &h, AccumulationMode::Inverse, &batches);
    assert!(max_diff(inverse.a(), &gj_inverse(direct.a())) <= 1e-8);
    assert!(max_diff(inverse.b(), direct.b()) == 0.0);
}

#[test]
fn zero_lambda_increment_has_no_cross_terms() {
    let schema = FeatureSchema::new(2, 3, 0, 2).unwrap();
    let batches = stream(5, &schema, &[7]);
    let stats = absorb_all(
        schema,
        &params(0.0, 1.0),
        AccumulationMode::Direct,
        &batches,
    );
    let dt = schema.cstage_width();
    assert!(stats.a().slice(s![..dt, dt..]).iter().all(|&v| v == 0.0));
    assert!(stats.a().slice(s![dt.., ..dt]).iter().all(|&v| v == 0.0));
}

#[test]
fn empty_stats_solve_to_zero_model() {
    let schema = FeatureSchema::new(3, 4, 2, 3).unwrap();
    for mode in [AccumulationMode::Direct, AccumulationMode::Inverse] {
        let model = CStageStats::new(schema, &params(1.0, 0.1), mode)
            .unwrap()
            .solve()
            .unwrap();
        assert_eq!(model, CStageModel::zeros(schema));
    }
}

#[test]
fn four_batch_stream_matches_stacked_normal_equations() {
    let schema = FeatureSchema::new(3, 4, 0, 3).unwrap();
    let batches = stream(21, &schema, &[8, 8, 8, 8]);
    let (wt, ws) = cstage_oracle(&batches, &schema, 1.0, 0.1);
    for mode in [AccumulationMode::Direct, AccumulationMode::Inverse] {
        let model = absorb_all(schema, &params(1.0, 0.1), mode, &batches)
            .solve()
            .unwrap();
        assert!(max_diff(&model.w_tilde, &wt) <= 1e-8, "{mode:?}");
        assert!(max_diff(&model.w_s, &ws) <= 1e-8, "{mode:?}");
    }
}

#[test]
fn zero_lambda_gives_standalone_ridge() {
    let schema = FeatureSchema::new(3, 4, 0, 3).unwrap();
    let batches = stream(22, &schema, &[10, 6, 9]);
    let (xt, xs, y) = stack_cstage(&batches);
    let model = absorb_all(
        schema,
        &params(0.0, 0.3),
        AccumulationMode::Direct,
        &batches,
    )
    .solve()
    .unwrap();
    assert!(max_diff(&model.w_s, &ridge(&xs, &y, 0.3)) <= 1e-8);
    assert!(max_diff(&model.w_tilde, &ridge(&xt, &y, 0.3)) <= 1e-8);
}

#[test]
fn single_instance_batches_in_inverse_mode() {
    let schema = FeatureSchema::new(2, 2, 0, 2).unwrap();
    let batches = stream(23, &schema, &[1, 1, 1, 1, 1, 1]);
    let (wt, ws) = cstage_oracle(&batches, &schema, 2.0, 0.5);
    let model = absorb_all(
        schema,
        &params(2.0, 0.5),
        AccumulationMode::Inverse,
        &batches,
    )
    .solve()
    .unwrap();
    assert!(max_diff(&model.w_tilde, &wt) <= 1e-8);
    assert!(max_diff(&model.w_s, &ws) <= 1e-8);
}

#[test]
fn single_batch_pass_equals_batch_solve() {
    let schema = FeatureSchema::new(2, 3, 0, 2).unwrap();
    let batches = stream(24, &schema, &[12]);
    let h = params(1.0, 0.1);
    let model = run_cstage_pass(
        batches.iter().cloned().map(Ok),
        schema,
        &h,
        AccumulationMode::Direct,
    )
    .unwrap();
    let (wt, ws) = cstage_oracle(&batches, &schema, 1.0, 0.1);
    assert!(max_diff(&model.w_tilde, &wt) <= 1e-8);
    assert!(max_diff(&model.w_s, &ws) <= 1e-8);
}

#[test]
fn empty_pass_gives_zero_model() {
    let schema = FeatureSchema::new(2, 3, 1, 2).unwrap();
    let model = run_cstage_pass(
        std::iter::empty(),
        schema,
        &params(1.0, 0.1),
        AccumulationMode::Inverse,
    )
    .unwrap();
    assert_eq!(model, CStageModel::zeros(schema));
}

#[test]
fn stage_and_shape_errors() {
    let schema = FeatureSchema::new(2, 3, 1, 2).unwrap();
    let mut r = rng(1);
    let mut stats = CStageStats::new(schema, &params(1.0, 0.1), AccumulationMode::Direct).unwrap();
    let e = random_ebatch(&mut r, &schema, 4);
    assert!(stats.absorb(&e).is_err());
    let other = FeatureSchema::new(3, 3, 1, 2).unwrap();
    assert!(stats.absorb(&random_cbatch(&mut r, &other, 4)).is_err());
    assert_eq!(stats.batches(), 0);
}

#[test]
fn compress_zero_model_gives_zero() {
    let schema = FeatureSchema::new(2, 3, 1, 2).unwrap();
    let x = gaussian(&mut rng(2), 6, 3);
    let z = compress(x.view(), &CStageModel::zeros(schema)).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
}

#[test]
fn compress_identity_returns_weights() {
    let schema = FeatureSchema::new(2, 4, 1, 3).unwrap();
    let mut model = CStageModel::zeros(schema);
    model.w_s = gaussian(&mut rng(3), 4, 3);
    let z = compress(identity(4).view(), &model).unwrap();
    assert_eq!(z, model.w_s);
}

#[test]
fn compress_matches_naive_product() {
    let schema = FeatureSchema::new(2, 5, 1, 4).unwrap();
    let mut r = rng(4);
    let mut model = CStageModel::zeros(schema);
    model.w_s = gaussian(&mut r, 5, 4);
    let x = gaussian(&mut r, 9, 5);
    let z = compress(x.view(), &model).unwrap();
    assert!(max_diff(&z, &matmul(&x, &model.w_s)) <= 1e-12);
    assert!(compress(gaussian(&mut r, 3, 4).view(), &model).is_err());
}

#[test]
fn snapshot_file_resume_equals_uninterrupted_pass() {
    let schema = FeatureSchema::new(2, 3, 0, 3).unwrap();
    let batches = stream(30, &schema, &[6, 7, 5, 8]);
    let h = params(1.0, 0.2);
    let dir = tempfile::tempdir().unwrap();
    for mode in [AccumulationMode::Direct, AccumulationMode::Inverse] {
        let path = dir.path().join(format!("{mode:?}.json"));
        let first = absorb_all(schema, &h, mode, &batches[..2]);
        first.save(&path).unwrap();
        let mut resumed = CStageStats::load(&path).unwrap();
        assert_eq!(resumed, first);
        for b in &batches[2..] {
            resumed.absorb(b).unwrap();
        }
        assert_eq!(resumed, absorb_all(schema, &h, mode, &batches));
    }
}

#[test]
fn corrupt_snapshot_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"format\": \"something-else\"}").unwrap();
    assert!(CStageStats::load(&path).is_err());
    let schema = FeatureSchema::new(1, 1, 0, 2).unwrap();
    let stats = CStageStats::new(schema, &params(1.0, 1.0), AccumulationMode::Direct).unwrap();
    let mut snap = stats.to_snapshot();
    snap.a.pop();
    assert!(CStageStats::from_snapshot(snap).is_err());
}

fn schema_strategy() -> impl Strategy<Value = FeatureSchema> {
    (0usize..4, 1usize..5, 2usize..4)
        .prop_map(|(dv, ds, c)| FeatureSchema::new(dv, ds, 0, c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn direct_stats_are_order_insensitive(
        schema in schema_strategy(),
        sizes in prop::collection::vec(1usize..8, 2..6),
        seed in any::<u64>(),
        rot in 1usize..5,
    ) {
        let batches = stream(seed, &schema, &sizes);
        let h = params(1.0, 0.5);
        let mut permuted = batches.clone();
        permuted.rotate_left(rot % batches.len());
        permuted.reverse();
        let a = absorb_all(schema, &h, AccumulationMode::Direct, &batches);
        let b = absorb_all(schema, &h, AccumulationMode::Direct, &permuted);
        prop_assert!(max_diff(a.a(), b.a()) <= 1e-12);
        prop_assert!(max_diff(a.b(), b.b()) <= 1e-12);
        let (ma, mb) = (a.solve().unwrap(), b.solve().unwrap());
        prop_assert!(max_diff(&ma.w_s, &mb.w_s) <= 1e-10);
        prop_assert!(max_diff(&ma.w_tilde, &mb.w_tilde) <= 1e-10);
    }

    #[test]
    fn accumulators_stay_symmetric_and_fixed_size(
        schema in schema_strategy(),
        sizes in prop::collection::vec(1usize..10, 1..6),
        seed in any::<u64>(),
        inverse in any::<bool>(),
    ) {
        let mode = if inverse { AccumulationMode::Inverse } else { AccumulationMode::Direct };
        let mut stats = CStageStats::new(schema, &params(0.7, 0.3), mode).unwrap();
        let m = schema.stats_dim();
        for b in stream(seed, &schema, &sizes) {
            stats.absorb(&b).unwrap();
            prop_assert_eq!(stats.a().dim(), (m, m));
            prop_assert_eq!(stats.b().dim(), (m, schema.classes));
            prop_assert!(max_diff(stats.a(), &transpose(stats.a())) <= 1e-12);
        }
        prop_assert_eq!(stats.batches(), sizes.len());
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact(
        schema in schema_strategy(),
        sizes in prop::collection::vec(1usize..6, 0..4),
        seed in any::<u64>(),
        inverse in any::<bool>(),
        lambda in 0.01f64..10.0,
        rho in 0.001f64..5.0,
    ) {
        let mode = if inverse { AccumulationMode::Inverse } else { AccumulationMode::Direct };
        let stats = absorb_all(schema, &params(lambda, rho), mode, &stream(seed, &schema, &sizes));
        let text = serde_json::to_string(&stats.to_snapshot()).unwrap();
        let back = CStageStats::from_snapshot(serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(back.a().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        stats.a().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.b().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        stats.b().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.lambda().to_bits(), lambda.to_bits());
        prop_assert_eq!(back.rho().to_bits(), rho.to_bits());
        prop_assert_eq!(back, stats);
    }

    #[test]
    fn every_prefix_matches_oracle(
        schema in schema_strategy(),
        sizes in prop::collection::vec(1usize..10, 1..6),
        seed in any::<u64>(),
    ) {
        let h = params(1.0, 0.1);
        let batches = stream(seed, &schema, &sizes);
        let mut stats = CStageStats::new(schema, &h, AccumulationMode::Direct).unwrap();
        for t in 0..batches.len() {
            stats.absorb(&batches[t]).unwrap();
            let model = stats.solve().unwrap();
            let (wt, ws) = cstage_oracle(&batches[..=t], &schema, 1.0, 0.1);
            prop_assert!(max_diff(&model.w_tilde, &wt) <= 1e-8);
            prop_assert!(max_diff(&model.w_s, &ws) <= 1e-8);
        }
    }
}
