//! The `segloss` command line: `evaluate`, `bounds`, `train`, `sweep` and `report`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bounds::{
    brute_force_sup, hamming_blowup_witness, tversky_curve, Similarity, Witness,
};
use crate::config::{load_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::io::{read_mask, Payload};
use crate::losses::LossSpec;
use crate::mask::{confusion_counts, threshold, BinaryMask};
use crate::metrics::{auxiliary_metric, AuxMetric};
use crate::report::{parse_float, read_csv, Cell, Table};
use crate::stats::{rank_methods, ScoreVector, SignificanceMatrix, DEFAULT_RESAMPLES};
use crate::toytrain::{
    best_alpha_for_fbeta, generate_dataset, run_fgbg_masking, run_loss_comparison,
    stratify_by_size, ExperimentResult, Score, SWEEP_FBETAS,
};

#[derive(Debug, Parser)]
#[command(name = "segloss", version, about = "Segmentation metrics, surrogate losses and their bounds")]
pub struct Cli {
    /// Seed overriding the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving the report files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare a prediction against a ground-truth mask.
    Evaluate {
        gt: PathBuf,
        pred: PathBuf,
        /// Threshold applied when the prediction is a probability map.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// dice, jaccard, hamming, whamming:<γ>, tversky:<α>:<β>, fbeta:<b>,
        /// accuracy, hausdorff, avd
        #[arg(long, default_value = "dice,jaccard")]
        metrics: String,
    },
    /// Exhaustive and closed-form approximation errors between similarities.
    Bounds {
        /// dice-jaccard, dice-tversky:<α>:<β>, dice-hamming or dice-whamming[:<γ>]
        #[arg(long)]
        pair: Option<String>,
        #[arg(long, default_value_t = 10)]
        dmax: usize,
        /// Closed-form Tversky–Dice errors for α = β over [0.1, 3].
        #[arg(long)]
        fig1_grid: bool,
        /// Hamming blow-up witnesses for these values of a.
        #[arg(long, value_delimiter = ',')]
        hamming_witness: Vec<f64>,
    },
    /// Cross-validated comparison of the config's losses.
    Train { config: PathBuf },
    /// Cross-validated sweep over soft Tversky weights.
    Sweep { config: PathBuf },
    /// Recompute rankings from the score files of an earlier run.
    Report {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        n_resamples: usize,
    },
}

/// Runs a parsed command line and returns the CSV files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))?;
    fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Evaluate {
            gt,
            pred,
            threshold,
            metrics,
        } => cmd_evaluate(gt, pred, *threshold, metrics, out),
        Command::Bounds {
            pair,
            dmax,
            fig1_grid,
            hamming_witness,
        } => cmd_bounds(pair.as_deref(), *dmax, *fig1_grid, hamming_witness, out),
        Command::Train { config } => {
            let cfg = experiment_config(config, cli.seed)?;
            cmd_train(&cfg, out)
        }
        Command::Sweep { config } => {
            let cfg = experiment_config(config, cli.seed)?;
            cmd_sweep(&cfg, out)
        }
        Command::Report { input, n_resamples } => {
            cmd_report(input, *n_resamples, cli.seed.unwrap_or(0), out)
        }
    }
}

fn experiment_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = load_config(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

enum EvalMetric {
    Similarity(Similarity),
    Aux(AuxMetric),
}

fn usage(msg: String) -> Error {
    Error::Usage(msg)
}

fn params(name: &str, rest: &[&str], n: usize) -> Result<Vec<f64>> {
    if rest.len() != n {
        return Err(usage(format!("{name} takes {n} parameter(s)")));
    }
    rest.iter()
        .map(|s| {
            s.parse()
                .map_err(|_| usage(format!("invalid parameter {s:?} for {name}")))
        })
        .collect()
}

fn parse_metric(token: &str) -> Result<EvalMetric> {
    let parts: Vec<&str> = token.split(':').collect();
    let (name, rest) = (parts[0], &parts[1..]);
    let m = match name {
        "dice" | "jaccard" | "hamming" | "accuracy" | "hausdorff" | "avd" => {
            params(name, rest, 0)?;
            match name {
                "dice" => EvalMetric::Similarity(Similarity::Dice),
                "jaccard" => EvalMetric::Similarity(Similarity::Jaccard),
                "hamming" => EvalMetric::Similarity(Similarity::Hamming),
                "accuracy" => EvalMetric::Aux(AuxMetric::Accuracy),
                "hausdorff" => EvalMetric::Aux(AuxMetric::Hausdorff),
                _ => EvalMetric::Aux(AuxMetric::Avd),
            }
        }
        "whamming" => {
            let p = params(name, rest, 1)?;
            EvalMetric::Similarity(Similarity::WeightedHamming { gamma: p[0] })
        }
        "tversky" => {
            let p = params(name, rest, 2)?;
            EvalMetric::Similarity(Similarity::Tversky {
                alpha: p[0],
                beta: p[1],
            })
        }
        "fbeta" => EvalMetric::Aux(AuxMetric::FBeta(params(name, rest, 1)?[0])),
        _ => return Err(usage(format!("unknown metric {token:?}"))),
    };
    if let EvalMetric::Similarity(s) = &m {
        s.validate()?;
    }
    Ok(m)
}

fn binary_or_threshold(payload: Payload, t: f64) -> Result<BinaryMask> {
    match payload {
        Payload::Binary(m) => Ok(m),
        Payload::Prob(p) => threshold(&p, t),
    }
}

pub fn cmd_evaluate(
    gt: &Path,
    pred: &Path,
    t: f64,
    metrics: &str,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let metrics: Vec<(String, EvalMetric)> = metrics
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Ok((s.to_string(), parse_metric(s)?)))
        .collect::<Result<_>>()?;
    if metrics.is_empty() {
        return Err(usage("--metrics is empty".into()));
    }
    let y = match read_mask(gt)?.payload {
        Payload::Binary(m) => m,
        Payload::Prob(_) => {
            return Err(Error::MalformedHeader {
                path: gt.to_path_buf(),
                reason: "ground truth must be a binary mask".into(),
            })
        }
    };
    let yhat = binary_or_threshold(read_mask(pred)?.payload, t)?;
    let counts = confusion_counts(&y, &yhat)?;

    let mut table = Table::new(["metric", "value", "defined"]);
    for (name, m) in metrics {
        let (value, defined) = match m {
            EvalMetric::Similarity(s) => (s.eval(&counts), true),
            EvalMetric::Aux(a) => {
                let v = auxiliary_metric(a, &y, &yhat)?;
                (v.value, v.defined)
            }
        };
        table.push(vec![name.into(), value.into(), defined.into()]);
    }
    Ok(vec![table.write(out, "evaluate")?])
}

fn parse_pair(spec: &str) -> Result<Similarity> {
    let rest = spec
        .strip_prefix("dice-")
        .ok_or_else(|| usage(format!("unknown pair {spec:?}")))?;
    let parts: Vec<&str> = rest.split(':').collect();
    let s = match parts[0] {
        "jaccard" => {
            params("dice-jaccard", &parts[1..], 0)?;
            Similarity::Jaccard
        }
        "hamming" => {
            params("dice-hamming", &parts[1..], 0)?;
            Similarity::Hamming
        }
        "whamming" => {
            let gamma = if parts.len() == 1 {
                0.5
            } else {
                params("dice-whamming", &parts[1..], 1)?[0]
            };
            Similarity::WeightedHamming { gamma }
        }
        "tversky" => {
            let p = params("dice-tversky", &parts[1..], 2)?;
            Similarity::Tversky {
                alpha: p[0],
                beta: p[1],
            }
        }
        _ => return Err(usage(format!("unknown pair {spec:?}"))),
    };
    s.validate()?;
    Ok(s)
}

fn pattern_string(m: &BinaryMask) -> String {
    m.data().iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn witness_cells(w: &Option<Witness>) -> Vec<Cell> {
    match w {
        Some(w) => vec![
            w.counts.tp.into(),
            w.counts.fp.into(),
            w.counts.fn_.into(),
            pattern_string(&w.y).into(),
            pattern_string(&w.yhat).into(),
        ],
        None => vec![
            Cell::Str(String::new()),
            Cell::Str(String::new()),
            Cell::Str(String::new()),
            Cell::Str(String::new()),
            Cell::Str(String::new()),
        ],
    }
}

pub fn cmd_bounds(
    pair: Option<&str>,
    dmax: usize,
    fig1_grid: bool,
    hamming: &[f64],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if pair.is_none() && !fig1_grid && hamming.is_empty() {
        return Err(usage(
            "bounds needs --pair, --fig1-grid or --hamming-witness".into(),
        ));
    }
    let mut written = Vec::new();
    if let Some(spec) = pair {
        let other = parse_pair(spec)?;
        let mut columns: Vec<String> = [
            "pair",
            "d",
            "empirical_abs",
            "empirical_rel",
            "closed_abs",
            "closed_rel",
            "within_closed_form",
        ]
        .map(String::from)
        .to_vec();
        for prefix in ["abs", "rel"] {
            for c in ["tp", "fp", "fn", "y", "yhat"] {
                columns.push(format!("{prefix}_witness_{c}"));
            }
        }
        let mut table = Table::new(columns);
        for d in 1..=dmax {
            let r = brute_force_sup(Similarity::Dice, other, d)?;
            let (ca, cr) = r.closed_form.map_or((f64::NAN, f64::NAN), |c| (c.abs, c.rel));
            let mut row: Vec<Cell> = vec![
                spec.into(),
                d.into(),
                r.empirical_abs.into(),
                r.empirical_rel.into(),
                ca.into(),
                cr.into(),
                r.respects_closed_form().into(),
            ];
            row.extend(witness_cells(&r.abs_witness));
            row.extend(witness_cells(&r.rel_witness));
            table.push(row);
        }
        written.push(table.write(out, "bounds")?);
    }
    if fig1_grid {
        let mut table = Table::new(["alpha", "beta", "abs", "rel"]);
        for (a, abs, rel) in tversky_curve() {
            table.push(vec![a.into(), a.into(), abs.into(), rel.into()]);
        }
        written.push(table.write(out, "fig1")?);
    }
    if !hamming.is_empty() {
        let mut table = Table::new([
            "a", "a_num", "a_den", "d", "tp", "fp", "fn", "dice", "gamma", "weighted_hamming",
            "ratio",
        ]);
        for &a in hamming {
            let w = hamming_blowup_witness(a)?;
            table.push(vec![
                a.into(),
                w.a_num.into(),
                w.a_den.into(),
                w.d.into(),
                w.counts.tp.into(),
                w.counts.fp.into(),
                w.counts.fn_.into(),
                w.dice.into(),
                w.gamma.into(),
                w.weighted_hamming.into(),
                w.ratio.into(),
            ]);
        }
        written.push(table.write(out, "hamming_witness")?);
    }
    Ok(written)
}

/// File-name-safe arm label.
pub fn arm_file_stem(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("scores_{safe}")
}

fn score_tables(r: &ExperimentResult, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for arm in &r.arms {
        let mut t = Table::new([
            "arm", "image", "fold", "size", "tp", "fp", "fn", "tn", "dice", "jaccard",
        ]);
        for (i, c) in arm.counts.iter().enumerate() {
            t.push(vec![
                arm.name().into(),
                i.into(),
                r.folds[i].into(),
                r.sizes[i].into(),
                c.tp.into(),
                c.fp.into(),
                c.fn_.into(),
                c.tn.into(),
                Score::Dice.of(c).into(),
                Score::Jaccard.of(c).into(),
            ]);
        }
        written.push(t.write(out, &arm_file_stem(&arm.name()))?);
    }
    Ok(written)
}

fn significance_table(rows: &[(&str, SignificanceMatrix)]) -> Table {
    let methods = &rows[0].1.methods;
    let mut columns: Vec<String> = [
        "metric",
        "method",
        "mean",
        "best",
        "top_ranked",
        "inferior_to_all",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    columns.extend(methods.iter().map(|m| format!("p_vs_{m}")));
    let mut t = Table::new(columns);
    for (metric, s) in rows {
        for i in 0..s.methods.len() {
            let mut row: Vec<Cell> = vec![
                (*metric).into(),
                s.methods[i].clone().into(),
                s.means[i].into(),
                (s.best == i).into(),
                s.is_top_ranked(i).into(),
                s.is_inferior_to_all(i).into(),
            ];
            row.extend(s.p[i].iter().map(|&p| Cell::from(p)));
            t.push(row);
        }
    }
    t
}

fn significance(r: &ExperimentResult, n: usize, seed: u64) -> Result<Option<Table>> {
    if r.arms.len() < 2 {
        return Ok(None);
    }
    let dice = r.significance(Score::Dice, n, seed)?;
    let jac = r.significance(Score::Jaccard, n, seed)?;
    Ok(Some(significance_table(&[("dice", dice), ("jaccard", jac)])))
}

fn summary_table(r: &ExperimentResult) -> Table {
    let mut columns = vec![
        "arm".to_string(),
        "mean_dice".into(),
        "mean_jaccard".into(),
    ];
    columns.extend(SWEEP_FBETAS.iter().map(|b| format!("mean_f{b}")));
    columns.extend(["dice_rank".to_string(), "jaccard_rank".into()]);
    let rank_of = |score| {
        let order = r.ranking(score);
        let mut rank = vec![0usize; order.len()];
        for (pos, &a) in order.iter().enumerate() {
            rank[a] = pos + 1;
        }
        rank
    };
    let (dr, jr) = (rank_of(Score::Dice), rank_of(Score::Jaccard));
    let mut t = Table::new(columns);
    for (i, arm) in r.arms.iter().enumerate() {
        let mut row: Vec<Cell> = vec![
            arm.name().into(),
            arm.mean(Score::Dice).into(),
            arm.mean(Score::Jaccard).into(),
        ];
        row.extend(SWEEP_FBETAS.iter().map(|&b| Cell::from(arm.mean(Score::FBeta(b)))));
        row.extend([dr[i].into(), jr[i].into()]);
        t.push(row);
    }
    t
}

fn stratification_table(r: &ExperimentResult, bins: usize) -> Result<Table> {
    let mut columns = vec!["bin".to_string(), "size_lo".into(), "size_hi".into(), "n".into()];
    columns.extend(r.arms.iter().map(|a| a.name()));
    let mut t = Table::new(columns);
    for (k, b) in stratify_by_size(r, bins)?.into_iter().enumerate() {
        let mut row: Vec<Cell> = vec![k.into(), b.lo.into(), b.hi.into(), b.n.into()];
        row.extend(b.mean_dice.into_iter().map(Cell::from));
        t.push(row);
    }
    Ok(t)
}

fn experiment_reports(
    r: &ExperimentResult,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = score_tables(r, out)?;
    if let Some(t) = significance(r, cfg.n_resamples, cfg.seed)? {
        written.push(t.write(out, "significance")?);
    }
    written.push(summary_table(r).write(out, "summary")?);
    written.push(stratification_table(r, cfg.size_bins)?.write(out, "stratification")?);
    Ok(written)
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = generate_dataset(&cfg.data)?;
    log::info!(
        "{} images, mean foreground fraction {:.4}",
        data.len(),
        data.mean_fg_fraction()
    );
    let r = run_loss_comparison(&data, &cfg.losses, cfg.folds, &cfg.train, cfg.seed)?;
    let mut written = experiment_reports(&r, cfg, out)?;
    if !cfg.fgbg_ratios.is_empty() {
        let runs = run_fgbg_masking(
            &data,
            &cfg.fgbg_ratios,
            &cfg.losses,
            cfg.folds,
            &cfg.train,
            cfg.seed,
        )?;
        let mut t = Table::new([
            "ratio",
            "width",
            "height",
            "achieved_fg_fraction",
            "arm",
            "mean_dice",
            "mean_jaccard",
            "top_ranked_dice",
            "inferior_to_all_dice",
        ]);
        for run in &runs {
            let sig = if run.result.arms.len() >= 2 {
                Some(run.result.significance(Score::Dice, cfg.n_resamples, cfg.seed)?)
            } else {
                None
            };
            for (i, arm) in run.result.arms.iter().enumerate() {
                t.push(vec![
                    run.ratio.into(),
                    run.rect.width.into(),
                    run.rect.height.into(),
                    run.rect.mean_fg_fraction.into(),
                    arm.name().into(),
                    arm.mean(Score::Dice).into(),
                    arm.mean(Score::Jaccard).into(),
                    sig.as_ref().map_or(true, |s| s.is_top_ranked(i)).into(),
                    sig.as_ref().map_or(false, |s| s.is_inferior_to_all(i)).into(),
                ]);
            }
        }
        written.push(t.write(out, "fgbg")?);
    }
    Ok(written)
}

/// Rounds away the representation error of `1 − α` so arm names stay short.
fn complement(alpha: f64) -> f64 {
    ((1.0 - alpha) * 1e9).round() / 1e9
}

pub fn sweep_arms(alphas: &[f64]) -> Vec<LossSpec> {
    let mut arms: Vec<LossSpec> = alphas
        .iter()
        .map(|&a| LossSpec::tversky(a, complement(a)))
        .collect();
    arms.push(LossSpec::tversky(0.75, 0.75));
    arms.push(LossSpec::tversky(1.0, 1.0));
    arms
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = generate_dataset(&cfg.data)?;
    let arms = sweep_arms(&cfg.alphas);
    let r = run_loss_comparison(&data, &arms, cfg.folds, &cfg.train, cfg.seed)?;
    let mut written = experiment_reports(&r, cfg, out)?;

    let mut columns = vec!["arm".to_string(), "alpha".into(), "beta".into()];
    columns.extend(SWEEP_FBETAS.iter().map(|b| format!("mean_f{b}")));
    let mut t = Table::new(columns);
    for arm in &r.arms {
        if let LossSpec::SoftTversky { alpha, beta } = arm.loss {
            let mut row: Vec<Cell> = vec![arm.name().into(), alpha.into(), beta.into()];
            row.extend(SWEEP_FBETAS.iter().map(|&b| Cell::from(arm.mean(Score::FBeta(b)))));
            t.push(row);
        }
    }
    written.push(t.write(out, "fmeasures")?);

    let mut t = Table::new(["f_beta", "best_alpha"]);
    for b in SWEEP_FBETAS {
        let best = best_alpha_for_fbeta(&r, b).unwrap_or(f64::NAN);
        t.push(vec![b.into(), best.into()]);
    }
    written.push(t.write(out, "best_alpha")?);
    Ok(written)
}

/// Re-ranks the arms of an earlier `train` or `sweep` run from its score files.
pub fn cmd_report(input: &Path, n_resamples: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("scores_") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    if files.len() < 2 {
        return Err(Error::TooFewSamples {
            got: files.len(),
            need: 2,
        });
    }
    let mut dice = Vec::new();
    let mut jaccard = Vec::new();
    for path in &files {
        let (header, rows) = read_csv(path)?;
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MalformedHeader {
                    path: path.clone(),
                    reason: format!("missing column {name}"),
                })
        };
        let (ca, cd, cj) = (col("arm")?, col("dice")?, col("jaccard")?);
        let value = |s: &str| {
            parse_float(s).ok_or_else(|| Error::MalformedHeader {
                path: path.clone(),
                reason: format!("invalid number {s:?}"),
            })
        };
        let name = rows.first().map(|r| r[ca].clone()).unwrap_or_default();
        dice.push(ScoreVector::new(
            name.clone(),
            rows.iter().map(|r| value(&r[cd])).collect::<Result<_>>()?,
        ));
        jaccard.push(ScoreVector::new(
            name,
            rows.iter().map(|r| value(&r[cj])).collect::<Result<_>>()?,
        ));
    }
    let table = significance_table(&[
        ("dice", rank_methods(&dice, n_resamples, seed)?),
        ("jaccard", rank_methods(&jaccard, n_resamples, seed)?),
    ]);
    Ok(vec![table.write(out, "report")?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_tokens() {
        assert!(matches!(parse_metric("dice").unwrap(), EvalMetric::Similarity(Similarity::Dice)));
        assert!(matches!(
            parse_metric("tversky:0.3:0.7").unwrap(),
            EvalMetric::Similarity(Similarity::Tversky { .. })
        ));
        assert!(matches!(parse_metric("fbeta:2").unwrap(), EvalMetric::Aux(AuxMetric::FBeta(_))));
        for bad in ["dice:1", "tversky:1", "whamming:x", "nope", "tversky:0:1"] {
            assert!(parse_metric(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("dice-jaccard").unwrap(), Similarity::Jaccard);
        assert_eq!(
            parse_pair("dice-whamming").unwrap(),
            Similarity::WeightedHamming { gamma: 0.5 }
        );
        assert_eq!(
            parse_pair("dice-tversky:2:0.5").unwrap(),
            Similarity::Tversky { alpha: 2.0, beta: 0.5 }
        );
        assert!(parse_pair("jaccard-dice").is_err());
        assert!(parse_pair("dice-whamming:2").is_err());
    }

    #[test]
    fn sweep_arm_names() {
        let arms = sweep_arms(&(1..=9).map(|k| k as f64 / 10.0).collect::<Vec<_>>());
        assert_eq!(arms.len(), 11);
        assert_eq!(arms[6].to_string(), "SOFT_TVERSKY:0.7:0.3");
        assert_eq!(arm_file_stem(&arms[6].to_string()), "scores_SOFT_TVERSKY_0.7_0.3");
    }
}
