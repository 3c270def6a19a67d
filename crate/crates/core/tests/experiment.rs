mod common;

use std::path::Path;

use domir::dataset::format_tc;
use domir::experiment::{
    round4, run_experiment, ExperimentConfig, ExperimentReport, SourceSpec, TrialResult, TIMINGS, TRIALS_JSON,
};
use domir::heads::{ModelConfig, TaskModel};
use domir::metrics::TaskKind;
use domir::sgns::EmbeddingTable;
use domir::synthetic::separable_tc;
use domir::tokenize::Vocabulary;
use domir::Error;

fn tc_setup(dir: &Path) -> ExperimentConfig {
    let data = separable_tc(30, 4);
    std::fs::write(dir.join("tc.tsv"), format_tc(&data)).unwrap();
    let chars: std::collections::BTreeSet<String> = data.iter().flat_map(|e| e.text.chars().map(String::from)).collect();
    let vocab = Vocabulary::from_tokens(chars).unwrap();
    vocab.save(dir.join("vocab.txt")).unwrap();
    EmbeddingTable::init(vocab, 6, 1).save(dir.join("table.vec")).unwrap();
    ExperimentConfig {
        name: "tiny".into(),
        task: TaskKind::Tc,
        models: vec!["text_cnn".into()],
        sources: vec![SourceSpec {
            name: "random".into(),
            ..Default::default()
        }],
        lr_grid: vec![1e-2],
        epochs: 3,
        batch_size: 8,
        padding: 8,
        dataset: dir.join("tc.tsv"),
        vocab: Some(dir.join("vocab.txt")),
        output: dir.join("out"),
        model: ModelConfig {
            embed_dim: 6,
            filters: 4,
            widths: vec![2, 3],
            hidden: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn single_cell_report_equals_its_trial() {
    let dir = tempfile::tempdir().unwrap();
    let c = tc_setup(dir.path());
    let o = run_experiment(&c).unwrap();
    assert_eq!(o.trials.len(), 1);
    assert_eq!((o.report.rows.len(), o.report.columns.len()), (1, 1));
    let cell = &o.report.rows[0].cells[0];
    assert_eq!(cell.weighted_f1, round4(o.trials[0].best_weighted_f1));
    assert_eq!(cell.trial, o.trials[0].id);
    let text = std::fs::read_to_string(c.output.join("report.tsv")).unwrap();
    assert_eq!(ExperimentReport::parse_tsv(&text).unwrap(), o.report);

    let (model, extra) = TaskModel::load(c.output.join(&o.trials[0].checkpoint)).unwrap();
    assert_eq!(model.config.kind.to_string(), "tc/text_cnn");
    assert_eq!(extra["best_epoch"], o.trials[0].best_epoch);
}

#[test]
fn grid_is_complete_and_cells_are_series_maxima() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tc_setup(dir.path());
    c.models = vec!["text_cnn".into(), "tc/text_rnn".into()];
    c.sources.push(SourceSpec {
        name: "table".into(),
        embeddings: Some(dir.path().join("table.vec")),
        checkpoint: None,
    });
    c.lr_grid = vec![1e-2, 1e-3, 0.0];
    let o = run_experiment(&c).unwrap();
    assert_eq!(o.trials.len(), 2 * 2 * 3);
    for (r, row) in o.report.rows.iter().enumerate() {
        for (k, cell) in row.cells.iter().enumerate() {
            let t = o.trials.iter().find(|t| t.id == cell.trial).unwrap();
            assert_eq!(t.model, c.model_kinds().unwrap()[r]);
            assert_eq!(t.source, c.sources[k].name);
            let max = t.val_series.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(t.best_weighted_f1, max);
            assert_eq!(t.val_series[t.best_epoch - 1], max);
            let pool: Vec<&TrialResult> = o.trials.iter().filter(|x| x.model == t.model && x.source == t.source).collect();
            assert!(pool.iter().all(|x| x.best_weighted_f1 <= t.best_weighted_f1));
        }
    }
    let saved: Vec<TrialResult> = serde_json::from_str(&std::fs::read_to_string(c.output.join(TRIALS_JSON)).unwrap()).unwrap();
    let mut expected = o.trials.clone();
    expected.iter_mut().for_each(|t| t.wall_time_secs = 0.0);
    assert_eq!(saved, expected);
}

#[test]
fn repeated_and_parallel_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tc_setup(dir.path());
    c.models = vec!["text_cnn".into(), "text_rnn_att".into()];
    c.lr_grid = vec![1e-2, 1e-3];
    let mut runs = Vec::new();
    for (i, threads) in [1, 1, 2].into_iter().enumerate() {
        let mut ci = c.clone();
        ci.threads = threads;
        ci.output = dir.path().join(format!("run{i}"));
        run_experiment(&ci).unwrap();
        let mut files = common::tree(&ci.output);
        assert!(files.remove(TIMINGS).is_some());
        runs.push(files);
    }
    assert!(runs[0].len() > 4);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn bad_inputs_fail_with_the_documented_codes() {
    let dir = tempfile::tempdir().unwrap();
    let c = tc_setup(dir.path());

    let mut missing = c.clone();
    missing.models = vec!["encoder_ft".into()];
    missing.sources[0].checkpoint = Some(dir.path().join("nowhere"));
    let e = run_experiment(&missing).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");

    std::fs::write(dir.path().join("bad.tsv"), "not-a-label\tsome text\n").unwrap();
    let mut unparsable = c.clone();
    unparsable.dataset = dir.path().join("bad.tsv");
    let e = run_experiment(&unparsable).unwrap_err();
    assert!(matches!(e, Error::Parse { .. }), "{e}");
    assert_eq!(e.exit_code(), 2);

    let mut invalid = c;
    invalid.batch_size = 0;
    let e = run_experiment(&invalid).unwrap_err();
    assert!(e.to_string().contains("batch_size"));
    assert_eq!(e.exit_code(), 1);
}
