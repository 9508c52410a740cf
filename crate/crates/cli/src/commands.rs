use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bystander_core::data::{
    default_profiles, generate_synthetic_screen, load_checkpoint, load_library, read_truth,
    save_checkpoint, write_library, write_truth, LibraryDataset, LibrarySchema,
    OracleEditorProfile, RngState, TrainedModel, MIN_READS_PER_REFERENCE,
};
use bystander_core::eval::{
    evaluate as evaluate_rows, evaluate_predictor, export_scatter, report_to_string,
    rows_from_truth, write_report, Pooling, View,
};
use bystander_core::models::{
    EditorSpec, ModelVariant, MultiTaskModel, OneStageModel, OutcomePredictor, TwoStageModel,
};
use bystander_core::numcore::derived;
use bystander_core::seqcore::{enumerate_outcomes, parse_sequence, DEFAULT_ENUMERATION_CAP};
use bystander_core::training::{
    split_dataset, train_multitask, train_one_stage, train_two_stage, DatasetSplit, EditorSplit,
    SplitSpec, TrainError, TrainReport,
};
use bystander_core::{EditorClass, OutcomeSequence, ReferenceSequence};

use crate::config::{EditorRegistry, RunConfig};
use crate::{io_err, replicate_seed, CliError};

pub const PREDICTION_COLUMNS: [&str; 5] = [
    "editor_id",
    "reference_id",
    "outcome_sequence",
    "is_wildtype",
    "probability",
];
pub const SYNTH_EDITORS: usize = 3;

fn config_error(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        origin: "configuration".into(),
        key: key.into(),
        message: message.into(),
    }
}

fn schema(cfg: &RunConfig) -> LibrarySchema {
    let mut schema = LibrarySchema::new(cfg.mode);
    if let Some(EditorRegistry::Named(list)) = &cfg.editors {
        for (id, class) in list {
            schema = schema.with_editor(id, *class);
        }
    }
    schema
}

/// Read every file; an editor may appear in only one of them.
pub fn load_libraries(
    paths: &[PathBuf],
    schema: &LibrarySchema,
) -> Result<Vec<LibraryDataset>, CliError> {
    let mut out: Vec<LibraryDataset> = Vec::new();
    for path in paths {
        for ds in load_library(path, schema)? {
            if out.iter().any(|d| d.editor_id == ds.editor_id) {
                return Err(CliError::Usage(format!(
                    "editor {} appears in more than one library file",
                    ds.editor_id
                )));
            }
            out.push(ds);
        }
    }
    Ok(out)
}

pub fn synth(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.reads < MIN_READS_PER_REFERENCE {
        return Err(config_error(
            "reads",
            format!(
                "{} reads per reference is below the floor of {MIN_READS_PER_REFERENCE}",
                cfg.reads
            ),
        ));
    }
    if cfg.refs == 0 {
        return Err(config_error("refs", "need at least one reference"));
    }
    let profiles = match &cfg.editors {
        None => default_profiles(SYNTH_EDITORS, cfg.seed),
        Some(EditorRegistry::Count(n)) => default_profiles(*n, cfg.seed),
        Some(EditorRegistry::Named(list)) => {
            let mut rng = derived(cfg.seed, "profiles");
            list.iter()
                .enumerate()
                .map(|(i, (id, class))| OracleEditorProfile::random(id, *class, i, &mut rng))
                .collect()
        }
    };
    let screen = generate_synthetic_screen(&profiles, cfg.refs, cfg.reads, cfg.mode, cfg.seed)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut table = String::from("editor\t#ins\t#refseq\t#outcome\tmean\tstd\twild_type\n");
    for ds in &screen.datasets {
        write_library(
            dir.join(format!("library_{}.tsv", ds.editor_id)),
            std::slice::from_ref(ds),
        )?;
        let s = ds.stats();
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{:.2}\t{:.4}\t{:.4}\t{:.4}",
            ds.editor_id,
            s.instances,
            s.references,
            s.mean_outcomes,
            s.mean_probability,
            s.std_probability,
            s.mean_wild_type
        );
    }
    write_truth(dir.join("truth.tsv"), &screen.truth)?;
    out.write_all(table.as_bytes())
        .map_err(io_err(Path::new("stdout")))?;
    Ok(())
}

/// A trained model with everything `train` writes out.
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub report: TrainReport,
    /// One split per trained editor, in training order.
    pub splits: Vec<DatasetSplit>,
    /// Initialisation stream position after building the model.
    pub rng: RngState,
}

fn spec_of(ds: &LibraryDataset) -> EditorSpec {
    EditorSpec::new(ds.editor_id.clone(), ds.editor)
}

/// Split, build and train the configured variant on `datasets`.
pub fn train_model(cfg: &RunConfig, datasets: &[LibraryDataset]) -> Result<TrainOutcome, CliError> {
    let chosen: Vec<&LibraryDataset> = match cfg.variant {
        ModelVariant::MultiTask => {
            if datasets.len() < 2 {
                return Err(config_error(
                    "variant",
                    format!(
                        "multi-task needs at least 2 editors, the libraries hold {}",
                        datasets.len()
                    ),
                ));
            }
            datasets.iter().collect()
        }
        _ => match (&cfg.editor, datasets) {
            (Some(id), _) => vec![datasets
                .iter()
                .find(|d| &d.editor_id == id)
                .ok_or_else(|| TrainError::UnknownEditor(id.clone()))?],
            (None, [only]) => vec![only],
            (None, many) => {
                return Err(config_error(
                    "editor",
                    format!(
                        "the libraries hold {} editors; choose one with --editor",
                        many.len()
                    ),
                ))
            }
        },
    };
    let split_seed = replicate_seed(cfg.seed, cfg.replicate);
    let splits = chosen
        .iter()
        .map(|ds| split_dataset(ds, &SplitSpec::default(), split_seed))
        .collect::<Result<Vec<_>, _>>()?;
    let parts: Vec<EditorSplit> = splits
        .iter()
        .map(|s| EditorSplit {
            train: &s.train,
            val: &s.val,
        })
        .collect();

    let mut rng = derived(cfg.seed, "init");
    let (enc, bias) = (cfg.encoder(), cfg.position_bias);
    let (model, report) = match cfg.variant {
        ModelVariant::OneStage => {
            let mut m = OneStageModel::new(
                cfg.mode,
                cfg.window,
                enc,
                bias,
                spec_of(chosen[0]),
                &mut rng,
            )?;
            let report = train_one_stage(&mut m, parts[0], &cfg.proportion)?;
            (TrainedModel::OneStage(m), report)
        }
        ModelVariant::TwoStage => {
            let mut m = TwoStageModel::new(
                cfg.mode,
                cfg.window,
                enc,
                bias,
                spec_of(chosen[0]),
                &mut rng,
            )?;
            let report = train_two_stage(&mut m, parts[0], &cfg.efficiency, &cfg.proportion)?;
            (TrainedModel::TwoStage(m), report)
        }
        ModelVariant::MultiTask => {
            let specs = chosen.iter().map(|d| spec_of(d)).collect();
            let mut m = MultiTaskModel::new(cfg.mode, cfg.window, enc, bias, specs, &mut rng)?;
            let report = train_multitask(&mut m, &parts, &cfg.efficiency, &cfg.proportion)?;
            (TrainedModel::MultiTask(m), report)
        }
    };
    Ok(TrainOutcome {
        model,
        report,
        rng: RngState::capture(&rng),
        splits,
    })
}

pub fn train(
    cfg: &RunConfig,
    libraries: &[PathBuf],
    dir: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let datasets = load_libraries(libraries, &schema(cfg))?;
    let trained = train_model(cfg, &datasets)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_checkpoint(
        &trained.model,
        cfg.to_pairs(),
        trained.rng.clone(),
        dir.join("model.bedk"),
    )?;
    trained.report.log.write(dir.join("train_log.tsv"))?;
    let tests: Vec<LibraryDataset> = trained.splits.iter().map(|s| s.test.clone()).collect();
    write_library(dir.join("test_library.tsv"), &tests)?;

    let mut text = String::from("stage\tbest_epoch\tepochs\tbest_validation_spearman\n");
    for s in &trained.report.stages {
        let best = s
            .best_epoch
            .map_or_else(|| "-".to_string(), |e| e.to_string());
        let _ = writeln!(
            text,
            "{}\t{best}\t{}\t{:.6}",
            s.stage, s.epochs, s.best_score
        );
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("stdout")))?;
    Ok(())
}

fn read_sequences(
    inline: &[String],
    file: Option<&Path>,
) -> Result<Vec<(String, String)>, CliError> {
    let mut seqs: Vec<(String, String)> = inline
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("seq{}", i + 1), s.trim().to_string()))
        .collect();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let n = seqs.len() + 1;
            match line.split_once('\t') {
                Some((id, seq)) => seqs.push((id.trim().to_string(), seq.trim().to_string())),
                None => seqs.push((format!("seq{n}"), line.to_string())),
            }
        }
    }
    if seqs.is_empty() {
        return Err(CliError::Usage(
            "no references given; use --sequence or --sequences".into(),
        ));
    }
    Ok(seqs)
}

fn pick_editor(cfg: &RunConfig, predictor: &dyn OutcomePredictor) -> Result<EditorSpec, CliError> {
    let editors = predictor.editors();
    match (&cfg.editor, editors) {
        (Some(id), _) => editors
            .iter()
            .find(|e| &e.id == id)
            .cloned()
            .ok_or_else(|| bystander_core::models::ModelError::UnknownEditor(id.clone()).into()),
        (None, [only]) => Ok(only.clone()),
        (None, many) => Err(config_error(
            "editor",
            format!(
                "the checkpoint serves {} editors; choose one with --editor",
                many.len()
            ),
        )),
    }
}

/// Prediction rows for one reference, most probable first.
pub fn prediction_rows(
    predictor: &dyn OutcomePredictor,
    editor: &EditorSpec,
    id: &str,
    reference: &ReferenceSequence,
) -> Result<String, CliError> {
    let dist = predictor.predict_distribution(&editor.id, reference)?;
    let mut order: Vec<usize> = (0..dist.outcomes.len()).collect();
    order.sort_by(|&a, &b| dist.probabilities[b].total_cmp(&dist.probabilities[a]));
    let mut text = String::new();
    for i in order {
        let edits = dist.outcomes[i];
        let outcome = OutcomeSequence::from_edits(reference, editor.class, edits)?;
        let _ = writeln!(
            text,
            "{}\t{id}\t{}\t{}\t{}",
            editor.id,
            outcome.to_text(),
            u8::from(edits.is_empty()),
            dist.probabilities[i]
        );
    }
    Ok(text)
}

pub fn predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    inline: &[String],
    file: Option<&Path>,
    dest: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let predictor = model.predictor();
    let editor = pick_editor(cfg, predictor)?;
    let mode = predictor.mode();
    let refs = read_sequences(inline, file)?
        .into_iter()
        .map(|(id, s)| Ok((id, parse_sequence(&s, mode)?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    let run = |chunk: &[(String, ReferenceSequence)]| -> Result<String, CliError> {
        let mut text = String::new();
        for (id, r) in chunk {
            text.push_str(&prediction_rows(predictor, &editor, id, r)?);
        }
        Ok(text)
    };
    let workers = cfg.workers.max(1);
    let parts: Vec<Result<String, CliError>> = if workers == 1 || refs.len() < 2 {
        vec![run(&refs)]
    } else {
        let size = refs.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = refs.chunks(size).map(|c| s.spawn(move || run(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("prediction worker panicked"))
                .collect()
        })
    };
    let mut text = PREDICTION_COLUMNS.join("\t");
    text.push('\n');
    for p in parts {
        text.push_str(&p?);
    }
    match dest {
        Some(path) => fs::write(path, text).map_err(io_err(path)),
        None => out
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("stdout"))),
    }
}

/// Where evaluation predictions come from.
pub enum Source<'a> {
    Checkpoint(&'a Path),
    Oracle(&'a Path),
}

impl<'a> Source<'a> {
    pub fn pick(checkpoint: Option<&'a Path>, oracle: Option<&'a Path>) -> Self {
        match (checkpoint, oracle) {
            (Some(c), _) => Source::Checkpoint(c),
            (None, Some(o)) => Source::Oracle(o),
            (None, None) => unreachable!("clap requires one of --checkpoint and --oracle"),
        }
    }
}

pub fn parse_views(text: &str) -> Result<Vec<View>, CliError> {
    let mut views = Vec::new();
    let mut seen = HashSet::new();
    for name in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: View = name.parse().map_err(|_| {
            config_error(
                "views",
                format!("unknown view {name:?} (all, wildtype, nonwild)"),
            )
        })?;
        if seen.insert(v) {
            views.push(v);
        }
    }
    if views.is_empty() {
        return Err(config_error("views", "no views requested"));
    }
    Ok(views)
}

fn filter_editor(datasets: Vec<LibraryDataset>, cfg: &RunConfig) -> Vec<LibraryDataset> {
    match &cfg.editor {
        Some(id) => datasets
            .into_iter()
            .filter(|d| &d.editor_id == id)
            .collect(),
        None => datasets,
    }
}

pub fn evaluate(
    cfg: &RunConfig,
    source: Source,
    libraries: &[PathBuf],
    views: &str,
    per_reference: bool,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let views = parse_views(views)?;
    let pooling = if per_reference {
        Pooling::PerReference
    } else {
        Pooling::Pooled
    };
    let (rows, report) = match source {
        Source::Checkpoint(path) => {
            let (model, _) = load_checkpoint(path)?;
            let predictor = model.predictor();
            let mut schema = LibrarySchema::new(predictor.mode());
            for e in predictor.editors() {
                schema = schema.with_editor(&e.id, e.class);
            }
            let datasets = filter_editor(load_libraries(libraries, &schema)?, cfg);
            evaluate_predictor(predictor, &datasets, &views, pooling, cfg.workers)?
        }
        Source::Oracle(path) => {
            let datasets = filter_editor(load_libraries(libraries, &schema(cfg))?, cfg);
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let rows = rows_from_truth(&read_truth(&text)?, &datasets);
            let report = evaluate_rows(&rows, &views, pooling)?;
            (rows, report)
        }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_report(&report, dir.join("report.tsv"))?;
    export_scatter(&rows, dir.join("scatter.tsv"))?;
    out.write_all(report_to_string(&report).as_bytes())
        .map_err(io_err(Path::new("stdout")))
}

pub fn enumerate(
    cfg: &RunConfig,
    sequence: &str,
    class: &str,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let class = EditorClass::parse(class)
        .ok_or_else(|| config_error("class", format!("unknown editor class {class:?}")))?;
    let reference = parse_sequence(sequence, cfg.mode)?;
    let outcomes =
        enumerate_outcomes(&reference, class, cfg.window, true, DEFAULT_ENUMERATION_CAP)?;
    let mut text = String::from("outcome_sequence\tedited_positions\tis_wildtype\n");
    for o in &outcomes {
        let _ = writeln!(
            text,
            "{}\t{}\t{}",
            o.to_text(),
            o.edits().to_display_list(),
            u8::from(o.is_wild_type())
        );
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("stdout")))
}
