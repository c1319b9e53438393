use gate_adapt::evaluation::{evaluate, evaluate_constant, CalibrationPolicy};
use gate_adapt::pose_algebra::Pose;
use gate_adapt::regressor::{checkpoint, init_model, ModelConfig};
use gate_adapt::scene_sim::{
    generate_dataset, read_dataset, write_dataset, CameraIntrinsics, DatasetConfig, Split, SplitSpec, SplitsConfig,
};
use gate_adapt::training::{finetune_sc, mean_predictor, pretrain, FinetuneConfig, InputFilter, PretrainConfig};

fn small_dataset_config() -> DatasetConfig {
    DatasetConfig {
        camera: CameraIntrinsics::default().scaled_to(24),
        splits: SplitsConfig {
            sim_train: SplitSpec { sequences: 24, duration_s: 0.8 },
            sim_val: SplitSpec { sequences: 4, duration_s: 0.8 },
            real_train: SplitSpec { sequences: 6, duration_s: 4.0 },
            real_val: SplitSpec { sequences: 2, duration_s: 4.0 },
            real_test: SplitSpec { sequences: 2, duration_s: 4.0 },
        },
        ..DatasetConfig::default()
    }
}

#[test]
fn dataset_survives_disk_roundtrip() {
    let ds = generate_dataset(&small_dataset_config(), 4).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(tmp.path(), &ds).unwrap();
    let back = read_dataset(tmp.path()).unwrap();
    assert_eq!(back.sequences.len(), ds.sequences.len());
    for (a, b) in ds.sequences.iter().zip(&back.sequences) {
        assert_eq!(a.split, b.split);
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image.to_u8(), y.image.to_u8());
            assert_eq!(x.gt_gate.is_some(), y.gt_gate.is_some());
        }
    }
    assert!(back.split(Split::RealTrain).iter().all(|s| s.samples.iter().all(|x| x.gt_gate.is_none())));
}

#[test]
fn pretrain_then_finetune_on_small_data() {
    let ds = generate_dataset(&small_dataset_config(), 9).unwrap();
    let model = ModelConfig { channels: vec![6, 8], kernel_size: 3, stride: 1, hidden: 24, input_size: 24 };
    let init = init_model(&model, 1).unwrap();
    let pcfg = PretrainConfig { epochs: 6, batch_size: 16, ..PretrainConfig::desk() };
    let sim_aug = &ds.config.sim.train_augmentation;
    let pre = pretrain(&pcfg, &init, &ds.split(Split::SimTrain), &ds.split(Split::SimVal), sim_aug, 2, None).unwrap();
    let first = pre.curves[0].val_loss;
    let best = pre.curves[pre.best_epoch].val_loss;
    assert!(best < 0.7 * first, "pretraining val loss {first} -> {best}");

    // In its own domain the pretrained model must beat the constant label mean.
    let sim_val = ds.split(Split::SimVal);
    let labels: Vec<Pose> =
        ds.split(Split::SimTrain).iter().flat_map(|s| s.samples.iter().filter_map(|x| x.gt_gate)).collect();
    let mean = evaluate_constant(&mean_predictor(&labels).unwrap(), &sim_val, CalibrationPolicy::FullTestSet).unwrap();
    let fit = evaluate(&pre.params, &sim_val, InputFilter::None, CalibrationPolicy::FullTestSet).unwrap();
    assert!(fit.mse_xyz_cm2 < mean.mse_xyz_cm2, "pretrained {} vs mean {}", fit.mse_xyz_cm2, mean.mse_xyz_cm2);

    let test = ds.split(Split::RealTest);
    let zero = evaluate(&pre.params, &test, InputFilter::None, CalibrationPolicy::FullTestSet).unwrap();

    let mut fcfg = FinetuneConfig { epochs: 4, pairs_per_batch: 16, val_pairs: 64, ..FinetuneConfig::desk() };
    fcfg.sampler.pairs_per_epoch = 128;
    let tmp = tempfile::tempdir().unwrap();
    let ft = finetune_sc(&fcfg, &pre.params, &ds.split(Split::RealTrain), &ds.split(Split::RealVal), 3, Some(tmp.path()))
        .unwrap();
    assert_eq!(ft.curves.len(), 5);
    assert!(ft.curves[ft.best_epoch].val_loss <= ft.curves[0].val_loss);
    let ours = evaluate(&ft.params, &test, InputFilter::None, CalibrationPolicy::FullTestSet).unwrap();
    assert!(ours.mse_xyz_cm2.is_finite() && ours.n_test == zero.n_test);

    let path = tmp.path().join("final.gapw");
    checkpoint::save(&path, &ft.params, Some(&ft.optimizer)).unwrap();
    let (loaded, opt) = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.values(), ft.params.values());
    assert!(opt.is_some());
}
