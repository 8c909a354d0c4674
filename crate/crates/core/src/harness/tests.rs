use super::*;
use crate::cdt::{DriftMode, Variant};
use crate::geometry::GeometryError;
use crate::nn::DiscriminatorKind;

fn tiny_config(class_index: u32, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        stream: StreamConfig::Synthetic(SyntheticStream {
            class_index,
            n_train: 300,
            n_operational: 400,
            change_point: 200,
            nodes: 7,
            noise_std: 1.0,
        }),
        model: ModelSettings {
            max_epochs: 3,
            patience: 2,
            batch_size: 64,
            ..ModelSettings::default()
        },
        detector: DetectorSettings {
            mc_runs: 10_000,
            ..DetectorSettings::default()
        },
        output_dir: None,
    }
}

#[test]
fn defaults_are_desk_scale() {
    let c = ExperimentConfig::default();
    let StreamConfig::Synthetic(s) = &c.stream else {
        panic!()
    };
    assert_eq!(
        (s.n_train, s.n_operational, s.change_point, s.nodes),
        (1000, 4000, 2000, 7)
    );
    assert_eq!(c.detector.window_n, WindowSize::Fixed(5));
    assert_eq!(c.detector.alpha, 0.01);
    assert_eq!(c.detector.q_quantile, 0.75);
    assert_eq!(c.detector.variant, Variant::Riemannian);
    assert_eq!(
        c.model.ensemble,
        vec![LatentSpace::Hyperbolic, LatentSpace::Flat, LatentSpace::Sphere]
    );
    assert_eq!(c.model.discriminator, DiscriminatorKind::Geometric);
    assert!(c.validate().is_ok());
}

#[test]
fn config_parsing_helpers() {
    assert_eq!(
        LatentSpace::parse_list("sphere,flat,hyperbolic").unwrap(),
        vec![LatentSpace::Sphere, LatentSpace::Flat, LatentSpace::Hyperbolic]
    );
    assert!(LatentSpace::parse("torus").is_err());
    assert_eq!(WindowSize::parse("auto").unwrap().resolve(5000), 5);
    assert_eq!(WindowSize::parse("7").unwrap().resolve(5000), 7);
    assert!(WindowSize::parse("x").is_err());

    let json = r#"{"seed": 4, "stream": {"source": "synthetic", "class_index": 8}, "detector": {"window_n": "auto", "drift_mode": "empirical"}}"#;
    let c: ExperimentConfig = serde_json::from_str(json).unwrap();
    assert_eq!(c.seed, 4);
    let StreamConfig::Synthetic(s) = &c.stream else {
        panic!()
    };
    assert_eq!((s.class_index, s.n_train), (8, 1000));
    assert_eq!(c.detector.window_n.resolve(1000), 1);
    assert_eq!(c.detector.drift_mode, DriftMode::Empirical);
    let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 1}"#).is_err());
}

#[test]
fn invalid_settings_map_to_the_config_exit_code() {
    let mut c = tiny_config(2, 0);
    c.detector.alpha = 1.5;
    assert_eq!(c.validate().unwrap_err().exit_code(), exit_code::CONFIG);
    let mut c = tiny_config(2, 0);
    c.model.ensemble.clear();
    assert_eq!(run_pipeline(&c).unwrap_err().exit_code(), exit_code::CONFIG);
    let mut c = tiny_config(2, 0);
    c.model.conv = crate::nn::ConvKind::EdgeConditioned;
    let err = run_pipeline(&c).unwrap_err();
    assert!(
        matches!(
            &err,
            Error::Stage {
                stage: Stage::Train,
                ..
            }
        ),
        "{err}"
    );
    assert_eq!(err.exit_code(), exit_code::CONFIG);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let divergence = Error::Nn(NnError::Divergence { step: 3, what: "loss" });
    assert_eq!(divergence.exit_code(), exit_code::DIVERGENCE);
    let calibration = Error::Cdt(CdtError::Calibration {
        alpha: 0.5,
        at_zero: 0.1,
    });
    assert_eq!(calibration.exit_code(), exit_code::CALIBRATION);
    let geometry = Error::Stage {
        stage: Stage::Embed,
        source: Box::new(Error::Nn(NnError::Projection {
            index: 4,
            source: GeometryError::Antipodal,
        })),
    };
    assert_eq!(geometry.exit_code(), exit_code::GEOMETRY);
    assert!(geometry.to_string().starts_with("embed stage"));
}

#[test]
fn strict_hyperbolic_projection_fails_with_the_geometry_code() {
    // With the rescaling rule, out-of-cone codes abort the pipeline; the
    // default lift keeps it running.
    let c = tiny_config(2, 0);
    let (train, _) = load_streams(&c).unwrap();
    let moments = AttributeMoments::fit(&train).unwrap();
    let train = moments.apply_stream(&train).unwrap();
    let (mut model, _) = train_autoencoder(&c.model, &train, c.seed).unwrap();
    assert_eq!(model.config().projection, crate::geometry::ProjectionRule::Lift);
    let id = model
        .params()
        .params
        .iter()
        .position(|p| p.name == "head0.out.b")
        .expect("hyperbolic head bias");
    // Force every hyperbolic code below the cone.
    let last = model.params().params[id].value.ncols() - 1;
    model.params_mut().params[id].value[[0, last]] = -1e6;
    let lifted = embed_stream(&model, &train).unwrap();
    assert!(lifted.iter().all(|e| *e.projected[0].coords().last().unwrap() > 0.0));
    let mut strict = model.clone();
    strict.set_projection(crate::geometry::ProjectionRule::Rescale);
    let err = embed_stream(&strict, &train).unwrap_err();
    assert_eq!(err.exit_code(), exit_code::GEOMETRY);
}

#[test]
fn identical_config_gives_identical_report_bytes() {
    let c = tiny_config(2, 11);
    let a = serde_json::to_string_pretty(&run_pipeline(&c).unwrap().report).unwrap();
    let b = serde_json::to_string_pretty(&run_pipeline(&c).unwrap().report).unwrap();
    assert_eq!(a, b);
}

#[test]
fn null_stream_is_flagged() {
    let report = run_pipeline(&tiny_config(0, 1)).unwrap().report;
    assert!(!report.ground_truth_change);
    assert_eq!(report.change_point, Some(200));
    // AUC may or may not be defined on a null stream, but an undefined one
    // always comes with a reason.
    assert_eq!(report.auc_rl.is_none(), report.auc_undefined.is_some());
    let report = run_pipeline(&tiny_config(4, 1)).unwrap().report;
    assert!(report.ground_truth_change);
}

#[test]
fn report_and_lineage_are_consistent() {
    let outcome = run_pipeline(&tiny_config(2, 2)).unwrap();
    let r = &outcome.report;
    assert_eq!(r.window_n, 5);
    assert_eq!(r.windows, 80);
    assert_eq!(r.n_alarms, r.alarm_windows.len());
    assert_eq!(r.tau_hat, r.alarm_windows.first().map(|w| w * 5));
    assert_eq!(r.thresholds.len(), 3);
    let lineage = r.lineage.as_ref().unwrap();
    assert_eq!(
        (
            lineage.model_training_graphs,
            lineage.detector_fitting_graphs,
            lineage.monitored_graphs
        ),
        (300, 300, 400)
    );
    assert_eq!(outcome.trace.len(), 80 * 3);
}

#[test]
fn plot_data_layout() {
    let outcome = run_pipeline(&tiny_config(2, 3)).unwrap();
    let rows = plot_rows(&outcome.trace, &outcome.detector);
    assert_eq!(rows.len(), outcome.report.windows * outcome.detector.tests.len());
    for m in 0..outcome.detector.tests.len() {
        let hs: Vec<f64> = rows.iter().filter(|r| r.member == m).map(|r| r.h).collect();
        assert!(hs.iter().all(|&h| h == hs[0]));
    }
    let mut buf = Vec::new();
    export_plot_data(&outcome.trace, &outcome.detector, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("window,member,s_w,S_w,h,alarm"));
    assert_eq!(text.lines().count(), rows.len() + 1);
}

#[test]
fn run_experiment_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config(2, 4);
    c.output_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&c).unwrap();
    for name in [
        artifact::MODEL,
        artifact::DETECTOR,
        artifact::TRACE,
        artifact::REPORT,
        artifact::PLOT,
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    assert!(!dir.path().join(artifact::INCOMPLETE).exists());
    let stored: StreamReport = read_json(&dir.path().join(artifact::REPORT)).unwrap();
    assert_eq!(stored, report);

    // Reloaded checkpoints reproduce the trace.
    let (model, moments) = load_model_file(&dir.path().join(artifact::MODEL)).unwrap();
    let detector = load_detector_file(&dir.path().join(artifact::DETECTOR)).unwrap();
    let (_, operational) = load_streams(&c).unwrap();
    let operational = moments.unwrap().apply_stream(&operational).unwrap();
    let (state, trace) = detector
        .process_stream(&embed_stream(&model, &operational).unwrap())
        .unwrap();
    assert_eq!(state.alarms, report.alarm_windows);
    let mut buf = Vec::new();
    cdt::write_trace_csv(&trace, &mut buf).unwrap();
    assert_eq!(buf, std::fs::read(dir.path().join(artifact::TRACE)).unwrap());
}

#[test]
fn failed_run_leaves_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config(2, 5);
    c.stream = StreamConfig::Files {
        train: dir.path().join("missing.jsonl"),
        operational: dir.path().join("missing.jsonl"),
    };
    c.output_dir = Some(dir.path().join("out"));
    let err = run_experiment(&c).unwrap_err();
    assert!(matches!(
        err,
        Error::Stage {
            stage: Stage::Stream,
            ..
        }
    ));
    let marker = std::fs::read_to_string(dir.path().join("out").join(artifact::INCOMPLETE)).unwrap();
    assert!(marker.contains("stream stage"));
}

#[test]
fn stream_files_feed_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = tiny_config(4, 6);
    let (train, operational) = load_streams(&synthetic).unwrap();
    let (tp, op) = (dir.path().join("train.jsonl"), dir.path().join("op.jsonl"));
    write_stream_file(&tp, &train).unwrap();
    write_stream_file(&op, &operational).unwrap();
    let mut from_files = synthetic.clone();
    from_files.stream = StreamConfig::Files {
        train: tp,
        operational: op,
    };
    let a = run_pipeline(&synthetic).unwrap().report;
    let b = run_pipeline(&from_files).unwrap().report;
    assert_eq!(a.alarm_windows, b.alarm_windows);
    assert_eq!(a.auc_rl, b.auc_rl);
    assert!(b.ground_truth_change);
}

fn tiny_table(classes: Vec<u32>, seeds: usize) -> Table1Config {
    let mut base = tiny_config(2, 9);
    base.model.max_epochs = 2;
    Table1Config::new(classes, seeds, base)
}

#[test]
fn table_has_sixteen_rows_per_class_column() {
    let table = replicate_table1(&tiny_table(vec![2, 4], 1)).unwrap();
    assert_eq!(table.rows.len(), 16);
    assert!(table.rows.iter().all(|r| r.cells.len() == 2));
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 17);
    assert_eq!(lines[0], "ccm,cdt,discriminator,C=2,C=4");
    assert!(lines[1].starts_with("M*,D-CDT,geom,"));
    assert!(lines[16].starts_with("M1,R-CDT,prior,"));
    let mut details = Vec::new();
    table.write_details_csv(&mut details).unwrap();
    assert_eq!(String::from_utf8(details).unwrap().lines().count(), 1 + 16 * 2);
}

#[test]
fn table_cell_equals_a_single_run() {
    let mut config = tiny_table(vec![4], 1);
    config.rows = vec![RowSpec {
        ccm: LatentChoice::Flat,
        cdt: Variant::Distance,
        discriminator: DiscriminatorKind::Geometric,
    }];
    let table = replicate_table1(&config).unwrap();
    let cell = &table.rows[0].cells[0].outcomes[0];
    let single = run_pipeline(&config.cell_config(&config.rows[0], 4, 0).unwrap())
        .unwrap()
        .report;
    assert_eq!(cell.auc_rl, single.auc_rl);
    assert_eq!(cell.n_alarms, single.n_alarms);
    assert_eq!(cell.seed, single.seed);
}

#[test]
fn table_rejects_degenerate_requests() {
    assert!(replicate_table1(&tiny_table(vec![], 1)).is_err());
    assert!(replicate_table1(&tiny_table(vec![0, 2], 1)).is_err());
    assert!(replicate_table1(&tiny_table(vec![2], 0)).is_err());
}

#[test]
fn cell_failures_are_recorded_and_the_grid_continues() {
    let mut config = tiny_table(vec![2], 1);
    // Too few windows for fitting: every cell fails, the table still exists.
    config.base.detector.window_n = WindowSize::Fixed(20);
    config.rows.truncate(2);
    let table = replicate_table1(&config).unwrap();
    for row in &table.rows {
        let cell = &row.cells[0];
        assert_eq!(cell.median, None);
        assert!(
            cell.outcomes[0].status.starts_with("failed"),
            "{}",
            cell.outcomes[0].status
        );
        assert_eq!(cell.display(), "failed");
    }
}
