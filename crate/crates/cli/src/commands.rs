use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mfattn_core::experiments::{
    gronwall_experiment, mc_sweep, record_trajectory, stability_experiment, uniform_clustering_baseline,
    SeriesStat, SweepReport,
};
use mfattn_core::io::{self, fmt_f64, CsvTable, Provenance, ScenarioConfig};
use mfattn_core::error::ResultExt;
use mfattn_core::jko::jko_convergence;
use mfattn_core::{fit_power_law, Error};

use crate::{CliError, Common};

/// Resolved config plus the directory outputs go to.
struct Setup {
    cfg: ScenarioConfig,
    out: PathBuf,
    prov: Provenance,
}

impl Setup {
    fn load(c: &Common) -> Result<Self, CliError> {
        let path = c
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("this subcommand needs --config PATH".into()))?;
        let mut cfg = ScenarioConfig::load(path, &c.overrides).context("cli_io", "parse_config")?;
        if let Some(seed) = c.seed {
            cfg.scenario.seed = seed;
        }
        if let Some(out) = &c.out {
            cfg.output.dir = out.display().to_string();
        }
        let out = PathBuf::from(&cfg.output.dir);
        fs::create_dir_all(&out)?;
        let prov = Provenance::new(&cfg);
        fs::write(out.join(format!("{}.cfg", cfg.scenario.name)), &prov.config)?;
        Ok(Self { cfg, out, prov })
    }

    fn file(&self, suffix: &str) -> PathBuf {
        self.out.join(format!("{}{suffix}", self.cfg.scenario.name))
    }

    fn first_heads(&self) -> usize {
        self.cfg.heads()[0]
    }
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn row(cells: impl IntoIterator<Item = String>) -> Vec<String> {
    cells.into_iter().collect()
}

pub fn simulate(c: &Common, trajectory: u64, heads: Option<usize>) -> Result<(), CliError> {
    let s = Setup::load(c)?;
    let scenario = s.cfg.to_scenario()?;
    let h = heads.unwrap_or_else(|| s.first_heads());
    let (path, outcome) = record_trajectory(&scenario, h, trajectory).context("token_dynamics", "simulate")?;
    let archive = s.file(".traj");
    io::write_archive(&archive, &s.prov, &path).context("cli_io", "write_archive")?;
    announce(&archive);

    let l = &outcome.ledger;
    let [drift, ito, diss, mart] = l.cumulative();
    let rows: Vec<Vec<String>> = (0..l.times.len())
        .map(|k| {
            row([
                l.times[k],
                l.energy[k],
                drift[k],
                ito[k],
                diss[k],
                mart[k],
                l.residual[k],
                l.g2_unweighted[k],
                l.g2_weighted[k],
                l.power[k],
            ]
            .map(fmt_f64))
        })
        .collect();
    let csv = s.file("_ledger.csv");
    io::write_csv(
        &csv,
        &s.prov,
        &[
            "time", "energy", "drift", "ito", "dissipation", "martingale", "residual", "g2", "g2_weighted", "power",
        ],
        &rows,
    )?;
    announce(&csv);
    Ok(())
}

#[derive(Serialize)]
struct ScenarioReport<'a> {
    sweep: &'a SweepReport<f64>,
    /// MC mean and SE of the clustering metric for uniform clouds of the
    /// scenario's size.
    clustering_baseline: (f64, f64),
    baseline_samples: usize,
}

pub fn mc(c: &Common, baseline_samples: usize) -> Result<(), CliError> {
    let s = Setup::load(c)?;
    let scenario = s.cfg.to_scenario()?;
    let sweep = mc_sweep(&scenario, &s.cfg.heads()).context("experiments", "mc_sweep")?;
    let baseline = uniform_clustering_baseline(scenario.n, scenario.dim, baseline_samples, scenario.seed);

    let report = s.file("_report.json");
    io::write_report(
        &report,
        &s.prov,
        "mc",
        &ScenarioReport {
            sweep: &sweep,
            clustering_baseline: baseline,
            baseline_samples,
        },
    )?;
    announce(&report);

    let mut series = Vec::new();
    for p in &sweep.per_heads {
        let metrics: [(&str, &SeriesStat<f64>); 8] = [
            ("g2", &p.g2),
            ("g2_weighted", &p.g2_weighted),
            ("energy", &p.energy),
            ("cum_drift", &p.cum_drift),
            ("cum_ito", &p.cum_ito),
            ("cum_dissipation", &p.cum_dissipation),
            ("cum_martingale", &p.cum_martingale),
            ("residual", &p.residual),
        ];
        for (name, stat) in metrics {
            for (k, t) in p.times.iter().enumerate() {
                series.push(row([
                    p.heads.to_string(),
                    fmt_f64(*t),
                    name.to_string(),
                    fmt_f64(stat.mean[k]),
                    fmt_f64(stat.se[k]),
                ]));
            }
        }
        for (t, (m, se)) in p.snapshot_times.iter().zip(&p.clustering) {
            series.push(row([p.heads.to_string(), fmt_f64(*t), "clustering".into(), fmt_f64(*m), fmt_f64(*se)]));
        }
    }
    let series_path = s.file("_series.csv");
    io::write_csv(&series_path, &s.prov, &["heads", "time", "metric", "mean", "se"], &series)?;
    announce(&series_path);

    let summary: Vec<Vec<String>> = sweep
        .per_heads
        .iter()
        .map(|p| {
            row([
                p.heads.to_string(),
                p.n_mc.to_string(),
                fmt_f64(p.g2_time_mean.0),
                fmt_f64(p.g2_time_mean.1),
                fmt_f64(p.g2_first_quarter),
                fmt_f64(p.g2_final_quarter),
            ])
        })
        .collect();
    let summary_path = s.file("_summary.csv");
    io::write_csv(
        &summary_path,
        &s.prov,
        &["heads", "n_mc", "g2_time_mean", "g2_time_se", "g2_first_quarter", "g2_final_quarter"],
        &summary,
    )?;
    announce(&summary_path);
    if let Some(f) = &sweep.fit {
        println!(
            "fit: a = {:.4} [{:.4}, {:.4}], b = {:.4} [{:.4}, {:.4}], r = {:.4}",
            f.a, f.ci_a.0, f.ci_a.1, f.b, f.ci_b.0, f.ci_b.1, f.pearson_r
        );
    }
    Ok(())
}

pub fn fit(c: &Common, input: &Path, x: &str, y: &str) -> Result<(), CliError> {
    let table = CsvTable::read(input).context("cli_io", "read_series")?;
    let xs = table.column(x).context("cli_io", "read_series")?;
    let ys = table.column(y).context("cli_io", "read_series")?;
    let result = fit_power_law(&xs, &ys).context("experiments", "fit_power_law")?;
    let dir = c
        .out
        .clone()
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    fs::create_dir_all(&dir)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    let path = dir.join(format!("{stem}_fit.json"));
    let text = io::report_json(&table.provenance, "fit", &result)?;
    fs::write(&path, &text)?;
    print!("{}", serde_json::to_string_pretty(&result).map_err(Error::from)?);
    println!();
    announce(&path);
    Ok(())
}

pub fn jko(c: &Common) -> Result<(), CliError> {
    let s = Setup::load(c)?;
    let scenario = s.cfg.to_scenario()?;
    let (cloud, ens, _) = scenario.initial_state(s.first_heads(), 0);
    let j = &s.cfg.jko;
    let cmp = jko_convergence(
        &cloud,
        &ens,
        &scenario.process,
        &s.cfg.jko_config(j.tau_list[0]),
        &j.tau_list,
        scenario.t_final,
        j.ref_dt,
    )
    .context("jko_solver", "jko_convergence")?;
    let mut rows = Vec::new();
    for r in &cmp {
        for (t, w) in r.times.iter().zip(&r.w2) {
            rows.push(row([fmt_f64(r.tau), fmt_f64(*t), fmt_f64(*w)]));
        }
        println!("tau = {}: sup W2 = {:.6e}, min slack = {:.3e}", r.tau, r.sup_w2, r.min_slack);
    }
    let csv = s.file("_jko.csv");
    io::write_csv(&csv, &s.prov, &["tau", "time", "w2"], &rows)?;
    announce(&csv);
    let report = s.file("_jko.json");
    io::write_report(&report, &s.prov, "jko", &cmp)?;
    announce(&report);
    Ok(())
}

pub fn gronwall(c: &Common, trajectory: u64) -> Result<(), CliError> {
    let s = Setup::load(c)?;
    let scenario = s.cfg.to_scenario()?;
    let g = &s.cfg.gronwall;
    let rep = gronwall_experiment(&scenario, s.first_heads(), &g.eta_list, g.early_time, trajectory)
        .context("experiments", "gronwall")?;
    let mut rows = Vec::new();
    for r in &rep.runs {
        for (k, t) in rep.times.iter().enumerate() {
            let envelope = rep.c1 * r.w2[0] * (rep.c2 * rep.m_theta[k]).exp();
            rows.push(row(
                [r.eta, *t, rep.m_theta[k], r.w2[k], r.w2_half[k], envelope].map(fmt_f64),
            ));
        }
    }
    let csv = s.file("_gronwall.csv");
    io::write_csv(&csv, &s.prov, &["eta", "time", "m_theta", "w2", "w2_half", "envelope"], &rows)?;
    announce(&csv);
    let report = s.file("_gronwall.json");
    io::write_report(&report, &s.prov, "gronwall", &rep)?;
    announce(&report);
    println!(
        "C1 = {}, C2 = {:.4}, envelope holds: {}, halving deviation: {:.3}",
        rep.c1, rep.c2, rep.envelope_holds, rep.halving_max_deviation
    );
    Ok(())
}

pub fn stability(c: &Common) -> Result<(), CliError> {
    let s = Setup::load(c)?;
    let scenario = s.cfg.to_scenario()?;
    let st = &s.cfg.stability;
    let rep = stability_experiment(&scenario, &st.head_list, st.reference_heads).context("experiments", "stability")?;
    let rows: Vec<Vec<String>> = rep
        .heads
        .iter()
        .zip(&rep.w2)
        .map(|(h, (m, se))| row([h.to_string(), fmt_f64(*m), fmt_f64(*se)]))
        .collect();
    let csv = s.file("_stability.csv");
    io::write_csv(&csv, &s.prov, &["heads", "w2_mean", "w2_se"], &rows)?;
    announce(&csv);
    let report = s.file("_stability.json");
    io::write_report(&report, &s.prov, "stability", &rep)?;
    announce(&report);
    println!("strictly decreasing: {}", rep.strictly_decreasing);
    Ok(())
}
