use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::families::{ExperimentResults, RunSummary, SaliencyArm, Waveform};
use super::plots::{box_chart, heatmap_png, line_chart, Series};
use super::spec::ExperimentSpec;
use crate::error::{Error, Result};

const HEATMAP_SCALE: u32 = 4;

/// Everything needed to rebuild the emitted tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub results: ExperimentResults,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const RUN_COLUMNS: [&str; 9] = [
    "seed",
    "selected_epoch",
    "mae",
    "rmse",
    "r",
    "snr_db",
    "ipr",
    "initial_ipr",
    "failed_windows",
];

fn run_fields(r: &RunSummary) -> Vec<String> {
    vec![
        r.seed.to_string(),
        r.selected_epoch.to_string(),
        opt(r.report.mae),
        opt(r.report.rmse),
        opt(r.report.r),
        opt(r.report.mean_snr_db),
        opt(r.report.mean_ipr),
        r.initial_ipr.to_string(),
        r.report.n_failed.to_string(),
    ]
}

fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn header<'a>(lead: &[&'a str]) -> Vec<&'a str> {
    lead.iter().copied().chain(RUN_COLUMNS).collect()
}

fn ipr_series(label: String, r: &RunSummary) -> Series {
    let mut points = vec![(0.0, r.initial_ipr)];
    points.extend(r.epochs.iter().map(|e| (e.epoch as f64, e.mean_ipr)));
    Series { label, points }
}

fn ipr_chart(dir: &Path, series: Vec<Series>) -> Result<()> {
    line_chart(
        &dir.join("ipr_curves.svg"),
        "Training-set IPR",
        "epoch",
        "mean IPR",
        &series,
    )
}

fn waveform_chart(dir: &Path, name: &str, w: &Waveform) -> Result<()> {
    let t = |i: usize| i as f64 / w.fps;
    let mut series = vec![Series {
        label: "rPPG".into(),
        points: w.rppg.iter().enumerate().map(|(i, v)| (t(i), *v)).collect(),
    }];
    if let Some(gt) = &w.gt {
        series.push(Series {
            label: "GT".into(),
            points: gt.iter().enumerate().map(|(i, v)| (t(i), *v)).collect(),
        });
    }
    line_chart(
        &dir.join(format!("waveform_{name}.svg")),
        "Waveform overlay",
        "time (s)",
        "standardized",
        &series,
    )
}

fn saliency_files(dir: &Path, tag: &str, arm: &SaliencyArm) -> Result<()> {
    for h in &arm.heatmaps {
        heatmap_png(
            &dir.join(format!("saliency_{tag}_video{}.png", h.record)),
            h,
            HEATMAP_SCALE,
        )?;
    }
    Ok(())
}

const SALIENCY_COLUMNS: [&str; 4] = ["mean_skin", "mean_patch", "skin_to_patch", "skin_mass_fraction"];

fn saliency_fields(a: &SaliencyArm) -> Vec<String> {
    vec![
        a.stats.mean_skin.to_string(),
        opt(a.stats.mean_patch),
        opt(a.stats.skin_to_patch),
        a.stats.skin_mass_fraction.to_string(),
    ]
}

fn emit_into(dir: &Path, report: &ExperimentReport) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join("results.json"))?);
    serde_json::to_writer_pretty(&mut f, report)?;
    f.flush()?;
    let table = dir.join("table.csv");
    match &report.results {
        ExperimentResults::LabelRatio(rows) => {
            write_table(
                &table,
                &header(&["ratio"]),
                rows.iter()
                    .map(|r| [vec![r.ratio.to_string()], run_fields(&r.run)].concat())
                    .collect(),
            )?;
            let by_seed = |f: fn(&RunSummary) -> Option<f64>, what: &str| -> Vec<Series> {
                let mut seeds: Vec<u64> = rows.iter().map(|r| r.run.seed).collect();
                seeds.dedup();
                seeds
                    .into_iter()
                    .map(|s| Series {
                        label: format!("{what} (seed {s})"),
                        points: rows
                            .iter()
                            .filter(|r| r.run.seed == s)
                            .filter_map(|r| Some((r.ratio, f(&r.run)?)))
                            .collect(),
                    })
                    .collect()
            };
            line_chart(
                &dir.join("rmse_vs_ratio.svg"),
                "HR RMSE vs label ratio",
                "label ratio",
                "RMSE (bpm)",
                &by_seed(|r| r.report.rmse, "RMSE"),
            )?;
            line_chart(
                &dir.join("snr_vs_ratio.svg"),
                "SNR vs label ratio",
                "label ratio",
                "SNR (dB)",
                &by_seed(|r| r.report.mean_snr_db, "SNR"),
            )?;
            ipr_chart(
                dir,
                rows.iter()
                    .map(|r| ipr_series(format!("ratio {} seed {}", r.ratio, r.run.seed), &r.run))
                    .collect(),
            )?;
            for r in rows {
                if let Some(w) = &r.run.waveform {
                    waveform_chart(dir, &format!("ratio{}_seed{}", r.ratio, r.run.seed), w)?;
                }
            }
        }
        ExperimentResults::Desync(rows) => {
            let mut table_rows = Vec::new();
            for r in rows {
                for (method, run) in [("cp_plus", &r.cp_plus), ("baseline", &r.baseline)] {
                    table_rows.push([vec![r.d_max_s.to_string(), method.to_string()], run_fields(run)].concat());
                }
            }
            write_table(&table, &header(&["d_max_s", "method"]), table_rows)?;
            let curve = |label: &str, f: fn(&super::families::DesyncRow) -> &RunSummary| Series {
                label: label.into(),
                points: rows
                    .iter()
                    .filter_map(|r| Some((r.d_max_s, f(r).report.rmse?)))
                    .collect(),
            };
            line_chart(
                &dir.join("rmse_vs_dmax.svg"),
                "HR RMSE under label desynchronization",
                "d_max (s)",
                "RMSE (bpm)",
                &[
                    curve("contrastive, all labels", |r| &r.cp_plus),
                    curve("supervised baseline", |r| &r.baseline),
                ],
            )?;
            let snr = |label: &str, f: fn(&super::families::DesyncRow) -> &RunSummary| Series {
                label: label.into(),
                points: rows
                    .iter()
                    .filter_map(|r| Some((r.d_max_s, f(r).report.mean_snr_db?)))
                    .collect(),
            };
            line_chart(
                &dir.join("snr_vs_dmax.svg"),
                "SNR under label desynchronization",
                "d_max (s)",
                "SNR (dB)",
                &[
                    snr("contrastive, all labels", |r| &r.cp_plus),
                    snr("supervised baseline", |r| &r.baseline),
                ],
            )?;
            ipr_chart(
                dir,
                rows.iter()
                    .flat_map(|r| {
                        [
                            ipr_series(format!("contrastive d={}", r.d_max_s), &r.cp_plus),
                            ipr_series(format!("baseline d={}", r.d_max_s), &r.baseline),
                        ]
                    })
                    .collect(),
            )?;
        }
        ExperimentResults::Noise(rows) => {
            let mut table_rows = Vec::new();
            for r in rows {
                for (arm, a) in [("with_noise", &r.with_noise), ("without", &r.without)] {
                    table_rows.push([vec![arm.to_string()], run_fields(&a.run), saliency_fields(a)].concat());
                }
            }
            let head: Vec<&str> = header(&["arm"]).into_iter().chain(SALIENCY_COLUMNS).collect();
            write_table(&table, &head, table_rows)?;
            for r in rows {
                let seed = r.with_noise.run.seed;
                saliency_files(dir, &format!("noise_seed{seed}"), &r.with_noise)?;
                saliency_files(dir, &format!("clean_seed{seed}"), &r.without)?;
                for (tag, a) in [("noise", &r.with_noise), ("clean", &r.without)] {
                    if let Some(w) = &a.run.waveform {
                        waveform_chart(dir, &format!("{tag}_seed{seed}"), w)?;
                    }
                }
            }
            ipr_chart(
                dir,
                rows.iter()
                    .flat_map(|r| {
                        [
                            ipr_series("with patch".into(), &r.with_noise.run),
                            ipr_series("clean".into(), &r.without.run),
                        ]
                    })
                    .collect(),
            )?;
        }
        ExperimentResults::Stats(rows) => {
            let quart = |v: &[f64]| {
                let mut s = v.to_vec();
                s.sort_by(f64::total_cmp);
                let q = |p: f64| s[((s.len() - 1) as f64 * p).round() as usize];
                [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
            };
            let mut table_rows = Vec::new();
            for r in rows {
                for (group, v) in [("intra", &r.intra_mse), ("cross", &r.cross_mse)] {
                    let q = quart(v);
                    table_rows.push(vec![
                        group.to_string(),
                        v.len().to_string(),
                        q[0].to_string(),
                        q[1].to_string(),
                        q[2].to_string(),
                        q[3].to_string(),
                        q[4].to_string(),
                        r.ks_statistic.to_string(),
                        r.p_value.to_string(),
                    ]);
                }
            }
            write_table(
                &table,
                &[
                    "group",
                    "n",
                    "min",
                    "q1",
                    "median",
                    "q3",
                    "max",
                    "ks_statistic",
                    "p_value",
                ],
                table_rows,
            )?;
            let mut w = csv::Writer::from_path(dir.join("samples.csv"))?;
            w.write_record(["group", "psd_mse"])?;
            for r in rows {
                for (group, v) in [("intra", &r.intra_mse), ("cross", &r.cross_mse)] {
                    for x in v.iter() {
                        w.write_record([group, &x.to_string()])?;
                    }
                }
            }
            w.flush()?;
            if let Some(r) = rows.first() {
                box_chart(
                    &dir.join("boxplot.svg"),
                    "PSD MSE of sample pairs",
                    "MSE",
                    &[("intra-video", &r.intra_mse), ("cross-video", &r.cross_mse)],
                )?;
            }
        }
        ExperimentResults::Ablation(rows) => {
            let head = header(&[
                "cell",
                "s",
                "clip_len_s",
                "delta_t_s",
                "full_length",
                "full_band",
                "rr_neg",
                "gr_pos",
                "gr_neg",
                "label_ratio",
                "block_shape",
                "zero_l_n_rr",
                "zero_l_p_gr",
                "zero_l_n_gr",
            ]);
            write_table(
                &table,
                &head,
                rows.iter()
                    .map(|r| {
                        let (t, s1, s2) = r.run.block_shape;
                        [
                            vec![
                                r.cell.clone(),
                                r.s.to_string(),
                                r.clip_len_s.to_string(),
                                r.delta_t_s.to_string(),
                                r.full_length.to_string(),
                                r.full_band.to_string(),
                                r.rr_neg.to_string(),
                                r.gr_pos.to_string(),
                                r.gr_neg.to_string(),
                                r.label_ratio.to_string(),
                                format!("{t}x{s1}x{s2}"),
                                r.run.zero_columns.l_n_rr.to_string(),
                                r.run.zero_columns.l_p_gr.to_string(),
                                r.run.zero_columns.l_n_gr.to_string(),
                            ],
                            run_fields(&r.run),
                        ]
                        .concat()
                    })
                    .collect(),
            )?;
            ipr_chart(
                dir,
                rows.iter()
                    .map(|r| ipr_series(format!("{} seed {}", r.cell, r.run.seed), &r.run))
                    .collect(),
            )?;
        }
        ExperimentResults::Saliency(arms) => {
            let head: Vec<&str> = RUN_COLUMNS.into_iter().chain(SALIENCY_COLUMNS).collect();
            write_table(
                &table,
                &head,
                arms.iter()
                    .map(|a| [run_fields(&a.run), saliency_fields(a)].concat())
                    .collect(),
            )?;
            for a in arms {
                saliency_files(dir, &format!("seed{}", a.run.seed), a)?;
                if let Some(w) = &a.run.waveform {
                    waveform_chart(dir, &format!("seed{}", a.run.seed), w)?;
                }
            }
        }
    }
    Ok(())
}

/// Writes `results.json`, `table.csv` and the family's plots into `dir`.
///
/// Files are staged in a sibling temporary directory that replaces `dir`
/// only once everything is written, so a failure leaves no partial output.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    if report.results.is_empty() {
        return Err(Error::InvalidInput("no results to report".into()));
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => Path::new(".").to_path_buf(),
    };
    fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new().prefix(".cplab-report-").tempdir_in(&parent)?;
    emit_into(staging.path(), report)?;
    let staged = staging.keep();
    if dir.exists() {
        let old = tempfile::Builder::new()
            .prefix(".cplab-old-")
            .tempdir_in(&parent)?
            .keep();
        fs::remove_dir(&old)?;
        fs::rename(dir, &old)?;
        if let Err(e) = fs::rename(&staged, dir) {
            fs::rename(&old, dir)?;
            let _ = fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        fs::remove_dir_all(&old)?;
    } else if let Err(e) = fs::rename(&staged, dir) {
        let _ = fs::remove_dir_all(&staged);
        return Err(e.into());
    }
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let f = BufReader::new(File::open(dir.join("results.json"))?);
    Ok(serde_json::from_reader(f)?)
}
