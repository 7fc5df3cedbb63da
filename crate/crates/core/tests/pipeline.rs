//! End-to-end runs through the core library at small sizes.

use latticeworld_core::flowmodel::{
    encode_crop, train_flow_matching, validation_loss, ModelConfig, ToyDecoders, ToyFlowModel,
    TrainConfig, TrainLatent, TrainSample,
};
use latticeworld_core::fusion::{sample_world, SamplerConfig, WorldModels};
use latticeworld_core::io::{Checkpoint, VoxelArchive};
use latticeworld_core::lattice::{GridDims, SegmentMap};
use latticeworld_core::rng;
use latticeworld_core::scenes::{generate_scene, Family};

fn dataset(size: usize) -> (Vec<TrainSample>, Vec<TrainSample>) {
    let mut structure = Vec::new();
    let mut appearance = Vec::new();
    for seed in 0..3u64 {
        for f in Family::ALL {
            let scene = generate_scene(f, [size; 3], seed).unwrap();
            let enc = encode_crop(&scene, [0; 3], [size; 3], 1).unwrap();
            structure.push(TrainSample {
                latent: TrainLatent::Dense(enc.structure),
                label: f.label(),
            });
            appearance.push(TrainSample {
                latent: TrainLatent::Sparse(enc.appearance),
                label: f.label(),
            });
        }
    }
    (structure, appearance)
}

fn train(data: &[TrainSample], channels: usize, seed: u64) -> ToyFlowModel {
    let cfg = ModelConfig {
        channels,
        hidden: 8,
        patch_radius: 1,
        embed_dim: 3,
        num_labels: 3,
        time_floor: 0.1,
    };
    let init = ToyFlowModel::random(cfg, &mut rng::seeded(seed)).unwrap();
    let tc = TrainConfig {
        steps: 60,
        lr: 0.01,
        batch: 128,
        draws: 2,
    };
    train_flow_matching(&init, data, &tc, &mut rng::seeded(seed + 1))
        .unwrap()
        .0
}

#[test]
fn scenes_to_world_and_back() {
    let (s_data, a_data) = dataset(16);
    let structure = train(&s_data, 1, 3);
    let appearance = train(&a_data, 4, 5);
    assert!(validation_loss(&structure, &s_data, 2, 9)
        .unwrap()
        .is_finite());

    let bytes = Checkpoint::Flow(structure.clone()).to_bytes();
    assert_eq!(
        Checkpoint::from_bytes(&bytes).unwrap().into_flow().unwrap(),
        structure
    );

    let models = WorldModels {
        structure,
        appearance,
    };
    let map = SegmentMap::uniform(24, 24, 0, "rolling hills");
    let cfg = SamplerConfig {
        steps: 4,
        window_size: 16,
        stride: 8,
        seed: 11,
        ..SamplerConfig::default()
    };
    let dims = GridDims::new(16, 24, 24, 1).unwrap();
    let (occ, features) = sample_world(&models, &ToyDecoders::default(), &map, dims, &cfg).unwrap();
    assert_eq!(occ.dims().spatial(), [16, 24, 24]);
    assert_eq!(features.positions().len(), occ.active_positions().len());
    assert!(features.features().iter().all(|v| v.is_finite()));

    let again = sample_world(&models, &ToyDecoders::default(), &map, dims, &cfg).unwrap();
    assert_eq!(again.1, features);

    let a = VoxelArchive::Sparse(features);
    let back = VoxelArchive::from_bytes(&a.to_bytes().unwrap())
        .unwrap()
        .into_sparse()
        .unwrap();
    let VoxelArchive::Sparse(orig) = a else {
        unreachable!()
    };
    assert_eq!(back.positions(), orig.positions());
    for (x, y) in back.features().iter().zip(orig.features()) {
        assert_eq!(*x, *y as f32 as f64);
    }
}

#[test]
fn families_separate_by_mean_height() {
    let stats: Vec<(f64, f64)> = Family::ALL
        .iter()
        .map(|&f| {
            let h: Vec<f64> = (0..50)
                .map(|s| {
                    generate_scene(f, [32; 3], 1000 + s)
                        .unwrap()
                        .mean_height_fraction()
                })
                .collect();
            let mean = h.iter().sum::<f64>() / h.len() as f64;
            let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (h.len() - 1) as f64;
            (mean, var.sqrt())
        })
        .collect();
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            let (ma, sa) = stats[i];
            let (mb, sb) = stats[j];
            assert!(
                (ma - mb).abs() >= 3.0 * sa.max(sb),
                "{:?} vs {:?}",
                stats[i],
                stats[j]
            );
        }
    }
}
