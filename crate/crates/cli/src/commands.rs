use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use regioncal_core::calibration::{evaluate_loss, label_all, CalibrationFile, LossKind, Method};
use regioncal_core::dataset::class_pixel_counts;
use regioncal_core::pipeline::{calibrate, train};
use regioncal_core::svm::{load_models, save_models, score_all};
use regioncal_core::weak::save_assignment;
use regioncal_core::{
    evaluate, evaluate_weak, generate_synthetic, label_image_naive, load_dataset, save_dataset,
    CalibrationParams, Dataset, Labeling, Supervision,
};
use serde::Serialize;

use crate::args::{CalibrateArgs, CompareArgs, EvalArgs, GenerateArgs, TrainArgs};
use crate::error::{CliError, CliResult};

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    out.write_all(b"\n")
        .and_then(|()| out.flush())
        .map_err(|e| CliError::io(path, e))
}

fn json_string(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

pub fn generate(args: &GenerateArgs) -> CliResult<String> {
    let config = args.config();
    let d = generate_synthetic(&config)?;
    save_dataset(&d, &args.output)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "images: {}  classes: {}  supervision: {}",
        d.images.len(),
        d.class_count,
        d.supervision.as_str()
    );
    let full = match config.supervision {
        Supervision::Full => d,
        Supervision::Weak => generate_synthetic(&regioncal_core::SyntheticConfig {
            supervision: Supervision::Full,
            ..config.clone()
        })?,
    };
    let pixels = class_pixel_counts(&full)?;
    let total: u64 = pixels.iter().sum();
    let target = config.class_frequencies();
    let _ = writeln!(
        out,
        "{:>6}  {:>10}  {:>8}  {:>8}",
        "class", "pixels", "share", "target"
    );
    for (c, &n) in pixels.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>6}  {:>10}  {:>8.4}  {:>8.4}",
            c,
            n,
            n as f64 / total as f64,
            target[c]
        );
    }
    Ok(out)
}

pub fn train_models(args: &TrainArgs) -> CliResult<String> {
    let d = load_dataset(&args.data)?;
    if d.supervision == Supervision::Full && (args.snapshots.is_some() || args.track_loss) {
        return Err(CliError::Usage(
            "--snapshots and --track-loss apply to image-labeled data only".into(),
        ));
    }
    let trained = train(&d, &args.svm.config(), args.rounds, args.track_loss)?;
    for w in &trained.warnings {
        warn(w);
    }
    save_models(&trained.models, &args.output)?;
    let mut out = String::new();
    let trainable = trained.models.iter().filter(|m| m.is_trainable()).count();
    let _ = writeln!(out, "trained {trainable} of {} classes", d.class_count);
    if let Some(alternation) = &trained.alternation {
        let _ = writeln!(
            out,
            "{:>5}  {:>9}  {:>8}  {:>9}",
            "round", "positives", "changed", "weak_loss"
        );
        for record in &alternation.history {
            let loss = record
                .ws_loss
                .map_or_else(|| "-".to_string(), |l| format!("{l:.4}"));
            let _ = writeln!(
                out,
                "{:>5}  {:>9}  {:>8}  {:>9}",
                record.round,
                record.positive_counts.iter().sum::<usize>(),
                record.changed,
                loss
            );
        }
        let _ = writeln!(
            out,
            "{}",
            if alternation.converged {
                "relabeling reached a fixed point"
            } else {
                "stopped at the round limit"
            }
        );
        if let Some(dir) = &args.snapshots {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            for (round, assignment) in alternation.snapshots.iter().enumerate() {
                save_assignment(&d, assignment, &dir.join(format!("round-{round}.jsonl")))?;
            }
        }
    }
    Ok(out)
}

fn scored(
    data: &Path,
    models: &Path,
) -> CliResult<(
    Dataset,
    Vec<regioncal_core::LinearModel>,
    Vec<regioncal_core::ScoreMatrix>,
)> {
    let d = load_dataset(data)?;
    let models = load_models(models)?;
    let scores = score_all(&models, &d)?;
    Ok((d, models, scores))
}

pub fn calibrate_models(args: &CalibrateArgs) -> CliResult<String> {
    let (d, models, scores) = scored(&args.data, &args.models)?;
    let file = calibrate(&d, &models, &scores, args.method.into(), &args.grid.spec())?;
    write_json(&args.output, &file)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "method: {}  loss: {}",
        file.method.as_str(),
        file.loss_kind.as_str()
    );
    if let (Some(initial), Some(last)) = (file.initial_loss, file.final_loss) {
        let _ = writeln!(
            out,
            "loss: {initial:.6} -> {last:.6} in {} steps",
            file.trace.len()
        );
        let _ = writeln!(
            out,
            "{:>6}  {:>5}  {:>10}  {:>10}  {:>9}",
            "class", "param", "old", "new", "loss"
        );
        for step in &file.trace {
            let _ = writeln!(
                out,
                "{:>6}  {:>5}  {:>10.4}  {:>10.4}  {:>9.6}",
                step.class_id,
                step.param.as_str(),
                step.old,
                step.new,
                step.loss
            );
        }
    }
    let _ = writeln!(out, "{:>6}  {:>10}  {:>10}", "class", "a", "b");
    for p in &file.params {
        let _ = writeln!(out, "{:>6}  {:>10.4}  {:>10.4}", p.class_id, p.a, p.b);
    }
    Ok(out)
}

fn load_calibration(path: Option<&Path>, d: &Dataset) -> CliResult<CalibrationParams> {
    let Some(path) = path else {
        return Ok(regioncal_core::GridSpec::default().initial_params(d.class_count));
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| {
        CliError::Core(regioncal_core::Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            record: "calibration".into(),
            message: e.to_string(),
        })
    })?;
    Ok(file.params(d.class_count)?)
}

fn oracle_check(
    d: &Dataset,
    scores: &[regioncal_core::ScoreMatrix],
    params: &CalibrationParams,
    labelings: &[Labeling],
) -> CliResult<()> {
    let naive: Vec<Labeling> = d
        .images
        .par_iter()
        .zip(scores.par_iter())
        .map(|(image, s)| label_image_naive(&image.forest, s, params))
        .collect();
    for (image, (fast, slow)) in labelings.iter().zip(&naive).enumerate() {
        if let Some(sp) = (0..fast.len()).find(|&sp| fast[sp] != slow[sp]) {
            return Err(CliError::OracleMismatch {
                image,
                superpixel: sp,
                fast: fast[sp],
                naive: slow[sp],
            });
        }
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult<String> {
    let (d, _, scores) = scored(&args.data, &args.models)?;
    let params = load_calibration(args.calibration.as_deref(), &d)?;
    let labelings = label_all(&d, &scores, &params);
    if args.oracle_check {
        oracle_check(&d, &scores, &params, &labelings)?;
    }
    let (json, table) = match d.supervision {
        Supervision::Full => {
            let report = evaluate(&labelings, &d)?;
            (json_string(&report), report.to_table())
        }
        Supervision::Weak => {
            let report = evaluate_weak(&labelings, &d)?;
            (json_string(&report), report.to_table())
        }
    };
    if let Some(path) = &args.report {
        fs::write(path, &json).map_err(|e| CliError::io(path, e))?;
    }
    let mut out = if args.json { json } else { table };
    if args.oracle_check && !args.json {
        out.push_str("reference labeler agrees on every superpixel\n");
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct CompareRow {
    method: Method,
    /// Calibration loss on the fitting data.
    fit_loss: f64,
    class_average_accuracy: Option<f64>,
    global_pixel_accuracy: Option<f64>,
    hamming_loss: Option<f64>,
}

pub fn compare(args: &CompareArgs) -> CliResult<String> {
    let (d, models, scores) = scored(&args.data, &args.models)?;
    let eval_data = match &args.eval_data {
        Some(path) => {
            let e = load_dataset(path)?;
            let s = score_all(&models, &e)?;
            Some((e, s))
        }
        None => None,
    };
    let (target, target_scores) = match &eval_data {
        Some((e, s)) => (e, s.as_slice()),
        None => (&d, scores.as_slice()),
    };
    let grid = args.grid.spec();
    let kind = LossKind::for_supervision(d.supervision);
    let mut rows = Vec::new();
    for method in [Method::None, Method::Platt, Method::Jc] {
        let file = calibrate(&d, &models, &scores, method, &grid)?;
        let params = file.params(d.class_count)?;
        let fit_loss = match file.final_loss {
            Some(l) => l,
            None => evaluate_loss(&d, &scores, &params, kind)?,
        };
        let labelings = label_all(target, target_scores, &params);
        let row = match target.supervision {
            Supervision::Full => {
                let report = evaluate(&labelings, target)?;
                CompareRow {
                    method,
                    fit_loss,
                    class_average_accuracy: Some(report.class_average_accuracy),
                    global_pixel_accuracy: Some(report.global_pixel_accuracy),
                    hamming_loss: None,
                }
            }
            Supervision::Weak => CompareRow {
                method,
                fit_loss,
                class_average_accuracy: None,
                global_pixel_accuracy: None,
                hamming_loss: Some(evaluate_weak(&labelings, target)?.hamming_loss),
            },
        };
        rows.push(row);
    }
    let json = json_string(&rows);
    if let Some(path) = &args.report {
        fs::write(path, &json).map_err(|e| CliError::io(path, e))?;
    }
    if args.json {
        return Ok(json);
    }
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}  {:>9}  {:>9}  {:>9}  {:>9}",
        "method", "fit_loss", "class_avg", "global", "hamming"
    );
    for row in &rows {
        let _ = writeln!(
            out,
            "{:<8}  {:>9.4}  {:>9}  {:>9}  {:>9}",
            row.method.as_str(),
            row.fit_loss,
            cell(row.class_average_accuracy),
            cell(row.global_pixel_accuracy),
            cell(row.hamming_loss)
        );
    }
    Ok(out)
}
