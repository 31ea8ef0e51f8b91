use rbi::config::TrainConfig;
use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::data::Dataset;
use rbi::evalx::{
    batch_size_sweep, compare_baseline, desk_config, export_heatmap, read_heatmap_csv, rpe_ablation,
};
use rbi::model::{HeadKind, Model};
use rbi::numcore::Tensor;

fn small_config() -> TrainConfig {
    let mut cfg = desk_config();
    cfg.classes = 4;
    cfg.per_class_train = 6;
    cfg.per_class_test = 4;
    cfg.image_size = 16;
    cfg.embed_dim = 16;
    cfg.batch_size = 8;
    cfg.epochs = 1;
    cfg
}

fn small_data(cfg: &TrainConfig) -> (Dataset, Dataset) {
    synth_generate(&SynthConfig::new(42, cfg.classes, cfg.per_class_train, cfg.per_class_test, cfg.image_size)).unwrap()
}

const SIZES: [usize; 6] = [1, 2, 4, 8, 16, 32];

#[test]
fn sweep_has_one_row_per_size_and_is_repeatable() {
    let cfg = small_config();
    let (_, test) = small_data(&cfg);
    let mut model = Model::<f32>::init(HeadKind::Rbi, cfg.embed_dim, cfg.classes, 0);
    let first = batch_size_sweep(&mut model, &test, &SIZES, 3, &cfg.rpe).unwrap();
    let again = batch_size_sweep(&mut model, &test, &SIZES, 3, &cfg.rpe).unwrap();
    assert_eq!(first, again);
    assert_eq!(first.rows.iter().map(|r| r.batch_size).collect::<Vec<_>>(), SIZES);

    let csv = first.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "batch_size,accuracy,loss,spread");
    assert_eq!(lines.len(), 1 + SIZES.len());

    let accs: Vec<f64> = first.rows.iter().map(|r| r.accuracy).collect();
    let spread = accs.iter().copied().fold(f64::MIN, f64::max) - accs.iter().copied().fold(f64::MAX, f64::min);
    assert_eq!(first.spread, spread);
}

#[test]
fn untrained_baseline_sweep_is_flat_and_near_chance() {
    let cfg = small_config();
    let (_, test) = small_data(&cfg);
    let mut model = Model::<f32>::init(HeadKind::Baseline, cfg.embed_dim, cfg.classes, 0);
    let report = batch_size_sweep(&mut model, &test, &SIZES, 3, &cfg.rpe).unwrap();
    // the affine head sees each sample alone, so batch size cannot matter
    assert_eq!(report.spread, 0.0);
    assert!(report.rows.iter().all(|r| r.accuracy <= 0.6), "{report:?}");
}

#[test]
fn sweep_rejects_bad_sizes() {
    let cfg = small_config();
    let (_, test) = small_data(&cfg);
    let mut model = Model::<f32>::init(HeadKind::Rbi, cfg.embed_dim, cfg.classes, 0);
    assert!(batch_size_sweep(&mut model, &test, &[], 3, &cfg.rpe).is_err());
    assert!(batch_size_sweep(&mut model, &test, &[4, 0], 3, &cfg.rpe).is_err());
}

#[test]
fn compare_runs_both_heads_for_every_seed() {
    let mut cfg = small_config();
    cfg.lr = 0.0;
    let (train, test) = small_data(&cfg);
    let mut seen = Vec::new();
    let report = compare_baseline(&cfg, &train, &test, &[0, 1, 2], |run, state| {
        assert_eq!(state.model.kind(), run.head);
        seen.push((run.seed, run.head));
    })
    .unwrap();
    assert_eq!(report.runs.len(), 6);
    assert_eq!(seen.len(), 6);
    for seed in 0..3 {
        for head in [HeadKind::Baseline, HeadKind::Rbi] {
            assert!(seen.contains(&(seed, head)));
        }
    }
    assert!((report.delta - (report.rbi.mean - report.baseline.mean)).abs() < 1e-12);
    assert!(report.to_csv().starts_with("seed,head,accuracy\n"));
    assert!(compare_baseline(&cfg, &train, &test, &[0, 1], |_, _| {}).is_err());
}

#[test]
fn ablation_off_arm_never_encodes_and_shares_the_first_batch() {
    let cfg = small_config();
    let (train, test) = small_data(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let report = rpe_ablation(&cfg, &train, &test, 0, Some(dir.path())).unwrap();
    assert_eq!(report.encoder_calls_off, 0);
    assert!(report.encoder_calls_on > 0);
    assert!(report.first_batch_equal);
    assert_eq!(report.probe_size, cfg.batch_size);
    for s in &report.stats {
        let files = s.files.as_ref().expect("exported");
        assert!(files.csv.exists() && files.pgm.exists());
        assert!(s.symmetry_error >= 0.0);
    }
    let similarity = report.stats.iter().find(|s| s.arm == "on" && s.matrix == "similarity").unwrap();
    assert_eq!(similarity.symmetry_error, 0.0);
    assert!(similarity.diag_dominance > 1.0);
    assert!(dir.path().join("ablation.csv").exists());
}

#[test]
fn heatmap_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Tensor::<f32>::new(&[3, 3], vec![0.1, -2.5, 3.0e-7, 1.0, 2.0, 3.0, 4.5, 1e20, -0.0]).unwrap();
    let files = export_heatmap(&m, &dir.path().join("m")).unwrap();
    let back: Tensor<f32> = read_heatmap_csv(&files.csv).unwrap();
    assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let pgm = std::fs::read_to_string(&files.pgm).unwrap();
    assert!(pgm.starts_with("P2\n3 3\n255\n"));
}
